#include "melpatch/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "fft.hpp"

namespace melpatch {

namespace {

// STOI constants (Taal et al. reference configuration).
constexpr int kStoiRate = 10000;
constexpr int kStoiFrame = 256;
constexpr int kStoiHop = 128;
constexpr int kStoiFft = 512;
constexpr int kStoiBands = 15;
constexpr double kStoiMinFreq = 150.0;
constexpr int kStoiSegment = 30;
constexpr double kStoiBeta = -15.0;
constexpr double kStoiDynRange = 40.0;
constexpr double kEps = std::numeric_limits<double>::epsilon();

/// np.hanning(n + 2)[1:-1]
std::vector<double> inner_hanning(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 1) / (n + 1));
  }
  return w;
}

/// Frame starts 0, hop, ... strictly below len - frame.
std::size_t stoi_frame_count(std::size_t len) {
  if (len <= static_cast<std::size_t>(kStoiFrame)) return 0;
  return (len - kStoiFrame - 1) / kStoiHop + 1;
}

/// Drops frames more than kStoiDynRange dB below the loudest reference
/// frame, then overlap-adds the survivors.
void remove_silent_frames(std::vector<double>& x, std::vector<double>& y) {
  const auto w = inner_hanning(kStoiFrame);
  const std::size_t frames = stoi_frame_count(x.size());
  std::vector<double> energy(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (int n = 0; n < kStoiFrame; ++n) {
      const double v = w[n] * x[f * kStoiHop + n];
      acc += v * v;
    }
    energy[f] = 20.0 * std::log10(std::sqrt(acc) + kEps);
  }
  const double loudest = frames > 0 ? *std::max_element(energy.begin(), energy.end()) : 0.0;

  std::vector<std::size_t> keep;
  for (std::size_t f = 0; f < frames; ++f) {
    if (loudest - kStoiDynRange - energy[f] < 0.0) keep.push_back(f);
  }
  const std::size_t out_len = keep.empty() ? 0 : (keep.size() - 1) * kStoiHop + kStoiFrame;
  std::vector<double> xs(out_len, 0.0);
  std::vector<double> ys(out_len, 0.0);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const std::size_t src = keep[i] * kStoiHop;
    const std::size_t dst = i * kStoiHop;
    for (int n = 0; n < kStoiFrame; ++n) {
      xs[dst + n] += w[n] * x[src + n];
      ys[dst + n] += w[n] * y[src + n];
    }
  }
  x = std::move(xs);
  y = std::move(ys);
}

/// One-third octave band matrix: band b covers FFT bins [lo_b, hi_b).
std::vector<std::pair<int, int>> third_octave_bands() {
  const int bins = kStoiFft / 2 + 1;
  auto closest_bin = [&](double hz) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * kStoiRate / kStoiFft;
      const double d = (f - hz) * (f - hz);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    return best;
  };
  std::vector<std::pair<int, int>> bands;
  for (int b = 0; b < kStoiBands; ++b) {
    const double lo = kStoiMinFreq * std::pow(2.0, (2.0 * b - 1.0) / 6.0);
    const double hi = kStoiMinFreq * std::pow(2.0, (2.0 * b + 1.0) / 6.0);
    bands.emplace_back(closest_bin(lo), closest_bin(hi));
  }
  return bands;
}

/// Band envelopes, bands x frames (row-major).
Matrix band_envelopes(const std::vector<double>& x) {
  const auto w = inner_hanning(kStoiFrame);
  const auto bands = third_octave_bands();
  const std::size_t frames = stoi_frame_count(x.size());
  const detail::RealFft fft(kStoiFft);
  std::vector<double> frame(kStoiFft, 0.0);
  std::vector<std::complex<double>> spec(kStoiFft / 2 + 1);
  Matrix env(kStoiBands, frames);
  for (std::size_t f = 0; f < frames; ++f) {
    std::fill(frame.begin(), frame.end(), 0.0);
    for (int n = 0; n < kStoiFrame; ++n) frame[n] = w[n] * x[f * kStoiHop + n];
    fft.forward(frame, spec);
    for (int b = 0; b < kStoiBands; ++b) {
      double power = 0.0;
      for (int k = bands[b].first; k < bands[b].second; ++k) power += std::norm(spec[k]);
      env(b, f) = std::sqrt(power);
    }
  }
  return env;
}

double norm2(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace

Matrix mel_cepstrum(const Matrix& log_mel, int n_coeffs) {
  const std::size_t bands = log_mel.cols();
  if (n_coeffs < 1 || static_cast<std::size_t>(n_coeffs) >= bands) {
    throw std::invalid_argument("mel_cepstrum: need 1 <= n_coeffs < bands");
  }
  const double n = static_cast<double>(bands);
  Matrix basis(n_coeffs, bands);
  for (int k = 1; k <= n_coeffs; ++k) {
    const double scale = std::sqrt(2.0 / n);
    for (std::size_t i = 0; i < bands; ++i) {
      basis(k - 1, i) = scale * std::cos(std::numbers::pi * k * (2.0 * i + 1.0) / (2.0 * n));
    }
  }
  Matrix out(log_mel.rows(), n_coeffs);
  for (std::size_t t = 0; t < log_mel.rows(); ++t) {
    const auto frame = log_mel.row(t);
    for (int k = 0; k < n_coeffs; ++k) {
      const auto b = basis.row(k);
      double acc = 0.0;
      for (std::size_t i = 0; i < bands; ++i) acc += b[i] * frame[i];
      out(t, k) = acc;
    }
  }
  return out;
}

double mcd_from_cepstra(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("mcd: coefficient count mismatch");
  const std::size_t frames = std::min(a.rows(), b.rows());
  if (frames == 0) throw std::invalid_argument("mcd: no frames");
  const double scale = 10.0 / std::numbers::ln10;
  double acc = 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    double d = 0.0;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double diff = a(t, k) - b(t, k);
      d += diff * diff;
    }
    acc += scale * std::sqrt(2.0 * d);
  }
  return acc / static_cast<double>(frames);
}

double mcd(const Waveform& ref, const Waveform& deg) {
  if (ref.sample_rate != deg.sample_rate) {
    throw std::invalid_argument("mcd: sample rates differ");
  }
  const std::size_t len = std::min(ref.samples.size(), deg.samples.size());
  if (len == 0) throw std::invalid_argument("mcd: empty input");
  FrontendConfig cfg;
  cfg.sample_rate = ref.sample_rate;
  auto trimmed = [len](const Waveform& w) {
    return Waveform{{w.samples.begin(), w.samples.begin() + static_cast<std::ptrdiff_t>(len)},
                    w.sample_rate};
  };
  const Matrix a = mel_cepstrum(mel_spectrogram(trimmed(ref), cfg).values);
  const Matrix b = mel_cepstrum(mel_spectrogram(trimmed(deg), cfg).values);
  return mcd_from_cepstra(a, b);
}

double stoi(const Waveform& ref, const Waveform& deg) {
  if (ref.sample_rate != deg.sample_rate) {
    throw std::invalid_argument("stoi: sample rates differ");
  }
  if (ref.sample_rate < kStoiRate) {
    throw std::invalid_argument("stoi: sample rate below 10 kHz");
  }
  const std::size_t len = std::min(ref.samples.size(), deg.samples.size());
  const double min_duration = static_cast<double>(kStoiSegment * kStoiHop) / kStoiRate;
  if (static_cast<double>(len) / ref.sample_rate < min_duration) {
    throw std::invalid_argument("stoi: input shorter than 384 ms");
  }

  auto prepare = [&](const Waveform& w) {
    Waveform t{{w.samples.begin(), w.samples.begin() + static_cast<std::ptrdiff_t>(len)},
               w.sample_rate};
    return resample(t, kStoiRate).samples;
  };
  std::vector<double> x = prepare(ref);
  std::vector<double> y = prepare(deg);
  remove_silent_frames(x, y);

  const Matrix xe = band_envelopes(x);
  const Matrix ye = band_envelopes(y);
  const std::size_t frames = xe.cols();
  if (frames < static_cast<std::size_t>(kStoiSegment)) {
    throw std::invalid_argument("stoi: fewer than 30 active frames after silence removal");
  }

  const double clip = std::pow(10.0, -kStoiBeta / 20.0);
  const std::size_t segments = frames - kStoiSegment + 1;
  std::vector<double> xs(kStoiSegment);
  std::vector<double> ys(kStoiSegment);
  double total = 0.0;
  for (std::size_t m = 0; m < segments; ++m) {
    for (int b = 0; b < kStoiBands; ++b) {
      for (int n = 0; n < kStoiSegment; ++n) {
        xs[n] = xe(b, m + n);
        ys[n] = ye(b, m + n);
      }
      const double gain = norm2(xs) / (norm2(ys) + kEps);
      for (int n = 0; n < kStoiSegment; ++n) {
        ys[n] = std::min(ys[n] * gain, xs[n] * (1.0 + clip));
      }
      double mx = 0.0;
      double my = 0.0;
      for (int n = 0; n < kStoiSegment; ++n) {
        mx += xs[n];
        my += ys[n];
      }
      mx /= kStoiSegment;
      my /= kStoiSegment;
      for (int n = 0; n < kStoiSegment; ++n) {
        xs[n] -= mx;
        ys[n] -= my;
      }
      const double nx = norm2(xs) + kEps;
      const double ny = norm2(ys) + kEps;
      double corr = 0.0;
      for (int n = 0; n < kStoiSegment; ++n) corr += (xs[n] / nx) * (ys[n] / ny);
      total += corr;
    }
  }
  return total / static_cast<double>(segments * kStoiBands);
}

double rtf(double elapsed_s, double duration_s) {
  if (!(duration_s > 0.0)) throw std::invalid_argument("rtf: duration must be positive");
  if (elapsed_s < 0.0) throw std::invalid_argument("rtf: elapsed time must be >= 0");
  return elapsed_s / duration_s;
}

void write_report_csv(std::ostream& out, const std::vector<MetricReport>& rows) {
  out << "utterance_id,duration_s,mcd,stoi,rtf_encode,rtf_decode,bitrate_bps\n";
  char buf[256];
  auto line = [&](const std::string& id, const MetricReport& r) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.6f,%.3f", r.duration_s, r.mcd, r.stoi,
                  r.rtf_encode, r.rtf_decode, r.bitrate_bps);
    out << id << ',' << buf << '\n';
  };
  MetricReport mean;
  for (const MetricReport& r : rows) {
    line(r.utterance_id, r);
    mean.duration_s += r.duration_s;
    mean.mcd += r.mcd;
    mean.stoi += r.stoi;
    mean.rtf_encode += r.rtf_encode;
    mean.rtf_decode += r.rtf_decode;
    mean.bitrate_bps += r.bitrate_bps;
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    mean.duration_s /= n;
    mean.mcd /= n;
    mean.stoi /= n;
    mean.rtf_encode /= n;
    mean.rtf_decode /= n;
    mean.bitrate_bps /= n;
  }
  line("mean", mean);
}

}  // namespace melpatch
