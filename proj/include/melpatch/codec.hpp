#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "melpatch/autoencoder.hpp"
#include "melpatch/bitstream.hpp"
#include "melpatch/codebook_io.hpp"
#include "melpatch/config.hpp"
#include "melpatch/quantizer.hpp"
#include "melpatch/train.hpp"

namespace melpatch {

/// A trained model bound to a configuration: waveform <-> bitstream.
class Codec {
 public:
  /// Throws ConfigError when the codebook file and config disagree
  /// (K, latent dimension, identity mode, patch size).
  Codec(CodecConfig cfg, CodebookFile file);

  static Codec load(const CodecConfig& cfg, const std::filesystem::path& codebook_path);

  const CodecConfig& config() const { return cfg_; }
  const AutoencoderParams& params() const { return params_; }
  const Codebook& codebook() const { return file_.codebook; }
  const Digest& digest() const { return digest_; }

  /// Resamples to the configured rate if needed.
  MelSpectrogram analyze(const Waveform& w) const;
  TokenGrid tokens(const MelSpectrogram& m) const;
  CodecHeader header_for(std::size_t original_t) const;

  std::vector<unsigned char> encode(const Waveform& w) const;

  /// Reconstructed spectrogram, clamped to the log floor.
  MelSpectrogram decode_mel(const TokenGrid& g) const;
  /// Validates header against config and codebook digest, then vocodes.
  /// Output has original_t * hop samples.
  Waveform decode(std::span<const unsigned char> stream) const;

 private:
  CodecConfig cfg_;
  CodebookFile file_;
  AutoencoderParams params_;
  Digest digest_{};
};

struct TrainOutcome {
  CodebookFile file;
  std::vector<LossReport> history;
  Utilization usage;
  std::size_t training_patches = 0;
  std::size_t reseeded_codes = 0;
};

/// k-means initialization of the codebook on encoded training patches, then
/// cfg.train.total_steps gradient steps over batches of utterances.
/// Codes left unused for a whole pass over the corpus are moved to the
/// worst-fit latent of that pass. Deterministic for a fixed seed. The
/// returned parameters are already rounded to their stored precision.
TrainOutcome train_codec(const CodecConfig& cfg, std::span<const MelSpectrogram> corpus,
                         const StepCallback& on_step = {});

/// Sorted *.wav paths in a directory.
std::vector<std::filesystem::path> list_wavs(const std::filesystem::path& dir);

}  // namespace melpatch
