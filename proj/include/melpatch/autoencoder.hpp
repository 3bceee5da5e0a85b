#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "melpatch/frontend.hpp"
#include "melpatch/matrix.hpp"
#include "melpatch/patch_grid.hpp"
#include "melpatch/quantizer.hpp"

namespace melpatch {

/// Per-patch encoder (P -> H -> D) and decoder (D -> H -> P), tanh hidden
/// layers. In identity mode both maps are the identity and D = P.
class AutoencoderParams {
 public:
  static AutoencoderParams identity(std::size_t patch_size);
  /// Xavier-uniform weights, zero biases.
  static AutoencoderParams random(std::size_t patch_size, std::size_t hidden,
                                  std::size_t latent, std::uint64_t seed);
  /// Rebuilds parameters from the tensors stored in a codebook file.
  static AutoencoderParams from_tensors(std::vector<Matrix> tensors);

  bool identity_mode() const { return identity_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_dim() const { return hidden_; }
  std::size_t latent_dim() const { return latent_; }

  void encode(std::span<const double> patch, std::span<double> latent) const;
  void decode(std::span<const double> latent, std::span<double> patch) const;

  /// Encodes every row of a patch matrix.
  Matrix encode_all(const Matrix& patches) const;
  Matrix decode_all(const Matrix& latents) const;

  /// Trainable tensors in serialization order: enc_w1, enc_b1, enc_w2,
  /// enc_b2, dec_w1, dec_b1, dec_w2, dec_b2. Empty in identity mode.
  std::vector<Matrix>& tensors() { return tensors_; }
  const std::vector<Matrix>& tensors() const { return tensors_; }

  bool operator==(const AutoencoderParams&) const = default;

  enum Tensor : std::size_t { kEncW1, kEncB1, kEncW2, kEncB2, kDecW1, kDecB1, kDecW2, kDecB2 };

 private:
  bool identity_ = true;
  std::size_t input_dim_ = 16;
  std::size_t hidden_ = 0;
  std::size_t latent_ = 16;
  std::vector<Matrix> tensors_;
};

/// Data-dependent initialization: random weights whose first and last
/// layers are rescaled so the network starts near the patch statistics.
AutoencoderParams init_params_from_data(std::size_t hidden, std::size_t latent,
                                        const Matrix& patches, std::uint64_t seed);

struct LossReport {
  double recon_l1 = 0.0;
  double codebook_loss = 0.0;
  double commitment_loss = 0.0;
  double total = 0.0;
  long step = 0;
};

/// Mean absolute difference over all cells.
double recon_loss(const MelSpectrogram& x, const MelSpectrogram& xhat);

struct ForwardResult {
  MelSpectrogram reconstruction;
  TokenGrid tokens;
  LossReport report;
};

/// patchify -> encode -> quantize -> dequantize -> decode -> unpatchify.
/// VQ terms are means over patches, the l1 term a mean over cells.
ForwardResult forward(const AutoencoderParams& params, const Codebook& cb,
                      const MelSpectrogram& m, const PatchGridSpec& spec = {},
                      double beta = 0.25);

enum class GradientMode {
  /// Training gradients: decoder-input gradient copied onto the encoder
  /// output; codebook trained only by ||sg(z) - e||^2, encoder also by
  /// beta * ||z - sg(e)||^2.
  StraightThrough,
  /// True derivative of the loss with assignments held fixed, no stop
  /// gradients. This is what finite differences measure.
  Exact,
  /// Plain autoencoder, quantizer bypassed; VQ terms are zero.
  Unquantized,
};

struct Gradients {
  std::vector<Matrix> params;  // aligned with AutoencoderParams::tensors()
  Matrix codebook;             // K x D
};

struct LossAndGradients {
  LossReport report;
  Gradients grads;
  std::vector<TokenGrid> tokens;
};

/// Loss over a batch of spectrograms (cell-mean l1 + patch-mean VQ terms)
/// and its gradients. Accumulation runs in fixed order, so results are
/// bit-reproducible.
LossAndGradients loss_and_gradients(const AutoencoderParams& params, const Codebook& cb,
                                    std::span<const MelSpectrogram> batch,
                                    const PatchGridSpec& spec, double beta,
                                    GradientMode mode = GradientMode::StraightThrough);

/// Loss only. `signature`, if given, receives the assignment of every patch
/// followed by the sign of every residual cell, for detecting kinks.
LossReport evaluate_loss(const AutoencoderParams& params, const Codebook& cb,
                         std::span<const MelSpectrogram> batch, const PatchGridSpec& spec,
                         double beta, std::vector<int>* signature = nullptr);

}  // namespace melpatch
