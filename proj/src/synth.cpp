#include "melpatch/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "melpatch/errors.hpp"
#include "melpatch/rng.hpp"

namespace melpatch {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Resonance gain of a formant at `f` Hz.
double formant_gain(double f, double center, double bandwidth) {
  const double d = (f - center) / bandwidth;
  return 1.0 / (1.0 + d * d);
}

void add_syllable(std::vector<double>& out, std::size_t start, std::size_t len, int sr, Rng& rng) {
  const double f0_start = rng.uniform(95.0, 230.0);
  const double f0_end = f0_start * rng.uniform(0.75, 1.3);
  const double f1a = rng.uniform(300.0, 850.0), f1b = rng.uniform(300.0, 850.0);
  const double f2a = rng.uniform(900.0, 2300.0), f2b = rng.uniform(900.0, 2300.0);
  const double f3 = rng.uniform(2400.0, 3200.0);
  const double amp = rng.uniform(0.15, 0.35);
  const double nyquist = sr / 2.0;

  double phase = rng.uniform(0.0, kTwoPi);
  for (std::size_t n = 0; n < len && start + n < out.size(); ++n) {
    const double u = static_cast<double>(n) / static_cast<double>(len);
    const double f0 = f0_start + (f0_end - f0_start) * u;
    const double f1 = f1a + (f1b - f1a) * u;
    const double f2 = f2a + (f2b - f2a) * u;
    phase += kTwoPi * f0 / sr;
    if (phase > kTwoPi) phase -= kTwoPi;
    // Raised-sine envelope with a quick attack.
    const double env = std::pow(std::sin(std::numbers::pi * u), 0.6);
    double s = 0.0;
    for (int h = 1; h * f0 < nyquist * 0.95; ++h) {
      const double f = h * f0;
      const double g = formant_gain(f, f1, 90.0) + 0.6 * formant_gain(f, f2, 120.0) +
                       0.3 * formant_gain(f, f3, 200.0) + 0.02;
      s += g * std::sin(h * phase) / std::sqrt(static_cast<double>(h));
    }
    out[start + n] += amp * env * s * 0.25;
  }
}

void add_fricative(std::vector<double>& out, std::size_t start, std::size_t len, Rng& rng) {
  const double amp = rng.uniform(0.03, 0.1);
  double prev = 0.0;
  for (std::size_t n = 0; n < len && start + n < out.size(); ++n) {
    const double u = static_cast<double>(n) / static_cast<double>(len);
    const double env = std::sin(std::numbers::pi * u);
    const double w = rng.normal();
    // First difference tilts the noise toward high frequencies.
    out[start + n] += amp * env * (w - 0.85 * prev);
    prev = w;
  }
}

Waveform speech_like(std::size_t total, int sr, Rng& rng) {
  std::vector<double> x(total, 0.0);
  std::size_t pos = static_cast<std::size_t>(rng.uniform(0.02, 0.08) * sr);
  while (pos < total) {
    const double r = rng.uniform();
    if (r < 0.6) {
      const auto len = static_cast<std::size_t>(rng.uniform(0.12, 0.3) * sr);
      add_syllable(x, pos, len, sr, rng);
      pos += len;
    } else if (r < 0.85) {
      const auto len = static_cast<std::size_t>(rng.uniform(0.05, 0.15) * sr);
      add_fricative(x, pos, len, rng);
      pos += len;
    } else {
      pos += static_cast<std::size_t>(rng.uniform(0.05, 0.2) * sr);
    }
  }
  // Low-level background so no frame is exactly silent.
  for (double& v : x) v += 1e-3 * rng.normal();
  for (double& v : x) v = std::clamp(v, -0.99, 0.99);
  return Waveform{std::move(x), sr};
}

Waveform on_off(std::size_t total, int sr, Rng& rng) {
  std::vector<double> x(total, 0.0);
  const double f0 = rng.uniform(140.0, 180.0);
  const auto block = static_cast<std::size_t>(0.128 * sr);
  const double nyquist = sr / 2.0;
  for (std::size_t n = 0; n < total; ++n) {
    if ((n / block) % 2 == 1) continue;
    const double t = static_cast<double>(n) / sr;
    double s = 0.0;
    for (int h = 1; h * f0 < nyquist * 0.97; ++h) s += std::sin(kTwoPi * h * f0 * t) / h;
    x[n] = 0.3 * s;
  }
  for (double& v : x) v = std::clamp(v, -0.99, 0.99);
  return Waveform{std::move(x), sr};
}

}  // namespace

SynthKind parse_synth_kind(const std::string& name) {
  if (name == "speech") return SynthKind::Speech;
  if (name == "on-off") return SynthKind::OnOff;
  throw ConfigError("synth: unknown kind '" + name + "' (expected speech or on-off)");
}

Waveform synth_utterance(double duration_s, int sample_rate, std::uint64_t seed, SynthKind kind) {
  if (!(duration_s > 0.0) || sample_rate <= 0) {
    throw ConfigError("synth: duration and sample rate must be positive");
  }
  Rng rng(seed);
  const auto total = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  return kind == SynthKind::Speech ? speech_like(total, sample_rate, rng)
                                   : on_off(total, sample_rate, rng);
}

std::vector<std::filesystem::path> write_synth_corpus(const std::filesystem::path& dir,
                                                      std::size_t count, double duration_s,
                                                      int sample_rate, std::uint64_t seed,
                                                      SynthKind kind) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> out;
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "utt_%03zu.wav", i);
    out.push_back(dir / name);
    save_wav(out.back(), synth_utterance(duration_s, sample_rate, seed + i, kind));
  }
  return out;
}

}  // namespace melpatch
