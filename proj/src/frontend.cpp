#include "melpatch/frontend.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>

#include "fft.hpp"
#include "melpatch/errors.hpp"

namespace melpatch {

namespace {

using Complex = std::complex<double>;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Periodic Hann of win_length, zero-padded symmetrically to n_fft.
std::vector<double> analysis_window(const FrontendConfig& cfg) {
  std::vector<double> w(cfg.n_fft, 0.0);
  const int offset = (cfg.n_fft - cfg.win_length) / 2;
  for (int n = 0; n < cfg.win_length; ++n) {
    w[offset + n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / cfg.win_length);
  }
  return w;
}

/// Index into a signal of length `len` with repeated mirror reflection
/// (edge sample not repeated).
std::size_t reflect_index(std::ptrdiff_t i, std::size_t len) {
  if (len == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (len - 1));
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<std::ptrdiff_t>(len)) m = period - m;
  return static_cast<std::size_t>(m);
}

std::size_t frame_count(std::size_t len, int hop) { return len / hop + 1; }

/// Complex centered STFT, frames x bins, row-major.
std::vector<Complex> stft_complex(std::span<const double> x, const FrontendConfig& cfg) {
  if (x.empty()) throw std::invalid_argument("stft: empty signal");
  const std::size_t frames = frame_count(x.size(), cfg.hop);
  const std::size_t bins = cfg.n_bins();
  const auto window = analysis_window(cfg);
  const detail::RealFft fft(cfg.n_fft);
  const std::ptrdiff_t pad = cfg.n_fft / 2;

  std::vector<Complex> out(frames * bins);
  std::vector<double> frame(cfg.n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t) * cfg.hop - pad;
    for (int n = 0; n < cfg.n_fft; ++n) {
      frame[n] = window[n] * x[reflect_index(start + n, x.size())];
    }
    fft.forward(frame, std::span(out).subspan(t * bins, bins));
  }
  return out;
}

/// Least-squares overlap-add inverse of stft_complex; returns `length`
/// samples starting at the first unpadded position.
std::vector<double> istft(std::span<const Complex> spec, std::size_t frames,
                          const FrontendConfig& cfg, std::size_t length) {
  const std::size_t bins = cfg.n_bins();
  const auto window = analysis_window(cfg);
  const detail::RealFft fft(cfg.n_fft);
  const std::size_t pad = cfg.n_fft / 2;
  const std::size_t total = (frames - 1) * cfg.hop + cfg.n_fft;

  std::vector<double> acc(total, 0.0);
  std::vector<double> norm(total, 0.0);
  std::vector<double> frame(cfg.n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    fft.inverse(spec.subspan(t * bins, bins), frame);
    const std::size_t start = t * cfg.hop;
    for (int n = 0; n < cfg.n_fft; ++n) {
      acc[start + n] += frame[n] * window[n];
      norm[start + n] += window[n] * window[n];
    }
  }
  std::vector<double> y(length, 0.0);
  for (std::size_t i = 0; i < length && pad + i < total; ++i) {
    const double d = norm[pad + i];
    y[i] = d > 1e-10 ? acc[pad + i] / d : 0.0;
  }
  return y;
}

/// Kaiser-windowed sinc tap at offset x (input samples) for a lowpass with
/// normalized cutoff `cutoff` (1 = input Nyquist).
double sinc_tap(double x, double cutoff, double half_width, double i0_beta) {
  constexpr double kBeta = 8.6;
  const double u = x / half_width;
  if (std::abs(u) >= 1.0) return 0.0;
  const double arg = std::numbers::pi * cutoff * x;
  const double sinc = std::abs(arg) < 1e-12 ? 1.0 : std::sin(arg) / arg;
  const double kaiser = std::cyl_bessel_i(0.0, kBeta * std::sqrt(1.0 - u * u)) / i0_beta;
  return cutoff * sinc * kaiser;
}

}  // namespace

void FrontendConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("frontend: " + what); };
  if (sample_rate <= 0) fail("sample_rate must be positive");
  if (hop < 1) fail("hop must be positive");
  if (!(hop <= win_length && win_length <= n_fft)) fail("require hop <= win_length <= n_fft");
  if (n_mels < 1) fail("n_mels must be >= 1");
  if (!(fmin >= 0.0 && fmin < upper_hz())) fail("require 0 <= fmin < fmax");
  if (upper_hz() > sample_rate / 2.0) fail("fmax exceeds Nyquist");
  if (!(log_floor > 0.0)) fail("log_floor must be positive");
}

Waveform resample(const Waveform& w, int target_rate) {
  if (target_rate <= 0) throw std::invalid_argument("resample: target rate must be positive");
  if (w.sample_rate <= 0) throw std::invalid_argument("resample: source rate must be positive");
  if (target_rate == w.sample_rate) return w;

  constexpr double kZeroCrossings = 64.0;
  constexpr double kBeta = 8.6;
  const auto src = static_cast<std::int64_t>(w.sample_rate);
  const auto dst = static_cast<std::int64_t>(target_rate);
  const std::int64_t g = std::gcd(src, dst);
  const std::int64_t step_num = src / g;  // input advance per output sample = step_num / phases
  const std::int64_t phases = dst / g;

  const auto len = static_cast<std::int64_t>(w.samples.size());
  const std::int64_t out_len = (2 * len * dst + src) / (2 * src);

  const double cutoff = std::min(1.0, static_cast<double>(dst) / src);
  const double half_width = kZeroCrossings / cutoff;
  const auto taps_each_side = static_cast<std::int64_t>(std::ceil(half_width));
  const std::int64_t taps = 2 * taps_each_side + 1;
  const double i0_beta = std::cyl_bessel_i(0.0, kBeta);

  // Positions repeat every `phases` outputs, so the kernel is tabulated per phase.
  const bool tabulate = phases * taps <= (1 << 22);
  std::vector<double> table;
  if (tabulate) {
    table.resize(static_cast<std::size_t>(phases * taps));
    for (std::int64_t p = 0; p < phases; ++p) {
      const double frac = static_cast<double>(p) / phases;
      for (std::int64_t k = 0; k < taps; ++k) {
        const double x = frac - static_cast<double>(k - taps_each_side);
        table[p * taps + k] = sinc_tap(x, cutoff, half_width, i0_beta);
      }
    }
  }

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.assign(static_cast<std::size_t>(out_len), 0.0);
  for (std::int64_t n = 0; n < out_len; ++n) {
    const std::int64_t num = n * step_num;
    const std::int64_t base = num / phases;
    const std::int64_t phase = num % phases;
    double acc = 0.0;
    for (std::int64_t k = 0; k < taps; ++k) {
      const std::int64_t i = base + k - taps_each_side;
      if (i < 0 || i >= len) continue;
      const double weight =
          tabulate ? table[phase * taps + k]
                   : sinc_tap(static_cast<double>(phase) / phases -
                                  static_cast<double>(k - taps_each_side),
                              cutoff, half_width, i0_beta);
      acc += weight * w.samples[static_cast<std::size_t>(i)];
    }
    out.samples[static_cast<std::size_t>(n)] = acc;
  }
  return out;
}

Matrix stft_magnitude(std::span<const double> samples, const FrontendConfig& cfg) {
  cfg.validate();
  const auto spec = stft_complex(samples, cfg);
  const std::size_t bins = cfg.n_bins();
  const std::size_t frames = spec.size() / bins;
  Matrix mag(frames, bins);
  for (std::size_t i = 0; i < spec.size(); ++i) mag.data()[i] = std::abs(spec[i]);
  return mag;
}

Matrix stft_magnitude(const Waveform& w, const FrontendConfig& cfg) {
  return stft_magnitude(std::span<const double>(w.samples), cfg);
}

std::vector<double> mel_center_frequencies(const FrontendConfig& cfg) {
  cfg.validate();
  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.upper_hz());
  std::vector<double> centers(cfg.n_mels);
  for (int m = 0; m < cfg.n_mels; ++m) {
    centers[m] = mel_to_hz(lo + (hi - lo) * (m + 1) / (cfg.n_mels + 1));
  }
  return centers;
}

Matrix mel_filterbank(const FrontendConfig& cfg) {
  cfg.validate();
  const int bins = cfg.n_bins();
  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.upper_hz());
  std::vector<double> edges(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * i / (cfg.n_mels + 1));
  }

  Matrix fb(cfg.n_mels, bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m];
    const double center = edges[m + 1];
    const double right = edges[m + 2];
    double row_sum = 0.0;
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      const double rise = (f - left) / (center - left);
      const double fall = (right - f) / (right - center);
      const double v = std::max(0.0, std::min(rise, fall));
      fb(m, k) = v;
      row_sum += v;
    }
    if (!(row_sum > 0.0)) {
      throw ConfigError("mel_filterbank: filter " + std::to_string(m) +
                        " covers no FFT bin; n_mels is too large for n_fft");
    }
  }
  return fb;
}

MelSpectrogram mel_spectrogram(const Waveform& w, const FrontendConfig& cfg) {
  if (w.sample_rate != cfg.sample_rate) {
    throw std::invalid_argument("mel_spectrogram: waveform rate " +
                                std::to_string(w.sample_rate) + " != config rate " +
                                std::to_string(cfg.sample_rate));
  }
  const Matrix mag = stft_magnitude(w, cfg);
  const Matrix fb = mel_filterbank(cfg);
  const std::size_t frames = mag.rows();
  const std::size_t bins = mag.cols();

  MelSpectrogram out{Matrix(frames, cfg.n_mels), cfg};
  std::vector<double> power(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto mrow = mag.row(t);
    for (std::size_t k = 0; k < bins; ++k) power[k] = mrow[k] * mrow[k];
    for (int m = 0; m < cfg.n_mels; ++m) {
      const auto frow = fb.row(m);
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += frow[k] * power[k];
      out.values(t, m) = std::log(std::max(e, cfg.log_floor));
    }
  }
  return out;
}

MelSpectrogram silent_mel(std::size_t frames, const FrontendConfig& cfg) {
  return {Matrix(frames, cfg.n_mels, std::log(cfg.log_floor)), cfg};
}

Waveform griffin_lim(const MelSpectrogram& m, int iters, std::optional<std::size_t> length) {
  if (iters < 0) throw std::invalid_argument("griffin_lim: iters must be >= 0");
  const FrontendConfig& cfg = m.config;
  cfg.validate();
  if (m.bands() != static_cast<std::size_t>(cfg.n_mels)) {
    throw std::invalid_argument("griffin_lim: band count does not match config");
  }
  const std::size_t frames = m.frames();
  if (frames == 0) return Waveform{{}, cfg.sample_rate};
  const std::size_t bins = cfg.n_bins();
  const std::size_t natural = (frames - 1) * cfg.hop;
  const std::size_t out_len = length.value_or(natural);
  if (out_len > natural + cfg.n_fft / 2) {
    throw std::invalid_argument("griffin_lim: requested length exceeds frame support");
  }

  const Matrix fb = mel_filterbank(cfg);
  Eigen::MatrixXd fb_e(fb.rows(), fb.cols());
  for (std::size_t r = 0; r < fb.rows(); ++r)
    for (std::size_t c = 0; c < fb.cols(); ++c) fb_e(r, c) = fb(r, c);
  const Eigen::MatrixXd pinv = fb_e.completeOrthogonalDecomposition().pseudoInverse();

  // The floor stands for "no energy", so it maps to zero linear power.
  std::vector<double> mag(frames * bins);
  Eigen::VectorXd mel_power(cfg.n_mels);
  for (std::size_t t = 0; t < frames; ++t) {
    for (int b = 0; b < cfg.n_mels; ++b) {
      mel_power(b) = std::max(std::exp(m.values(t, b)) - cfg.log_floor, 0.0);
    }
    const Eigen::VectorXd lin = pinv * mel_power;
    for (std::size_t k = 0; k < bins; ++k) {
      mag[t * bins + k] = std::sqrt(std::max(lin(static_cast<Eigen::Index>(k)), 0.0));
    }
  }

  std::vector<Complex> spec(frames * bins);
  for (std::size_t i = 0; i < spec.size(); ++i) spec[i] = Complex(mag[i], 0.0);

  const std::size_t work_len = std::max<std::size_t>(natural, 1);
  for (int it = 0; it < iters; ++it) {
    const auto y = istft(spec, frames, cfg, work_len);
    const auto rebuilt = stft_complex(y, cfg);
    for (std::size_t i = 0; i < spec.size(); ++i) {
      const double a = std::abs(rebuilt[i]);
      spec[i] = a > 0.0 ? mag[i] * (rebuilt[i] / a) : Complex(mag[i], 0.0);
    }
  }

  Waveform out{istft(spec, frames, cfg, out_len), cfg.sample_rate};
  for (double& s : out.samples) s = std::clamp(s, -1.0, 1.0);
  return out;
}

}  // namespace melpatch
