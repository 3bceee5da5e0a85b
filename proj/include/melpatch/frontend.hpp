#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "melpatch/matrix.hpp"

namespace melpatch {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

struct FrontendConfig {
  int sample_rate = 16000;
  int n_fft = 512;
  int hop = 128;
  int win_length = 512;
  int n_mels = 80;
  double fmin = 0.0;
  /// Upper filterbank edge in Hz; unset means sample_rate / 2.
  std::optional<double> fmax;
  double log_floor = 1e-5;

  double upper_hz() const { return fmax.value_or(sample_rate / 2.0); }
  int n_bins() const { return n_fft / 2 + 1; }

  /// Throws ConfigError when an invariant does not hold.
  void validate() const;
};

/// T x F grid of natural-log mel energies.
struct MelSpectrogram {
  Matrix values;
  FrontendConfig config;

  std::size_t frames() const { return values.rows(); }
  std::size_t bands() const { return values.cols(); }
};

// WAV I/O. Reads RIFF PCM16 / float32 (plain or extensible), any channel
// count; writes mono PCM16.
Waveform load_wav(const std::filesystem::path& path);
Waveform parse_wav(std::span<const unsigned char> bytes);
void save_wav(const std::filesystem::path& path, const Waveform& w);
std::vector<unsigned char> encode_wav_pcm16(const Waveform& w);

/// Band-limited resampling with a Kaiser-windowed sinc kernel
/// (beta 8.6, 64 zero crossings per side).
Waveform resample(const Waveform& w, int target_rate);

/// Centered STFT magnitudes, T x (n_fft/2 + 1), T = len/hop + 1.
Matrix stft_magnitude(std::span<const double> samples, const FrontendConfig& cfg);
Matrix stft_magnitude(const Waveform& w, const FrontendConfig& cfg);

/// HTK-scale triangular filterbank, n_mels x (n_fft/2 + 1).
Matrix mel_filterbank(const FrontendConfig& cfg);

/// Center frequency (Hz) of every mel filter, ascending.
std::vector<double> mel_center_frequencies(const FrontendConfig& cfg);

MelSpectrogram mel_spectrogram(const Waveform& w, const FrontendConfig& cfg);

/// Silence-valued spectrogram (every cell at ln(log_floor)).
MelSpectrogram silent_mel(std::size_t frames, const FrontendConfig& cfg);

/// Inverts a mel spectrogram to audio: clamped pseudo-inverse of the
/// filterbank, then `iters` rounds of Griffin-Lim starting from zero phase.
/// Output has (T-1)*hop samples unless `length` asks for more (at most
/// (T-1)*hop + n_fft/2).
Waveform griffin_lim(const MelSpectrogram& m, int iters,
                     std::optional<std::size_t> length = std::nullopt);

}  // namespace melpatch
