#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "melpatch/autoencoder.hpp"

namespace melpatch {

struct TrainConfig {
  double lr_peak = 3e-4;
  long warmup_steps = 1000;
  long total_steps = 150000;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.01;
  double adam_eps = 1e-8;
  std::size_t batch_size = 8;
  double commitment_beta = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Linear warm-up to lr_peak, then half-cosine decay to zero at total_steps.
double lr_schedule(long step, const TrainConfig& cfg);

/// First/second moment estimates for every trainable tensor.
struct AdamWState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  Matrix codebook_m;
  Matrix codebook_v;
  long updates = 0;

  static AdamWState init(const AutoencoderParams& params, const Codebook& cb);
};

/// One optimization step on `batch`. Encoder/decoder tensors take AdamW with
/// decoupled weight decay; codebook entries take the same moment update
/// without decay. Returns the loss measured before the update. Throws
/// NumericalError (leaving every argument untouched) on a non-finite loss
/// or gradient. `tokens_out` receives the batch assignments.
LossReport train_step(AutoencoderParams& params, Codebook& cb,
                      std::span<const MelSpectrogram> batch, AdamWState& opt, long step,
                      const TrainConfig& cfg, const PatchGridSpec& spec = {},
                      std::vector<TokenGrid>* tokens_out = nullptr);

/// Called after every train_step with the step index and its report.
using StepCallback = std::function<void(long, const LossReport&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probed = 0;
  /// Probes whose +/-h evaluation changed an assignment or a residual sign.
  std::size_t skipped = 0;
  bool all_finite = true;
};

struct GradCheckOptions {
  std::size_t max_probes = 200;
  double h = 1e-4;
  std::uint64_t seed = 0;
  double beta = 0.25;
  /// Denominator floor for the relative error, so coordinates whose true
  /// gradient is zero compare on absolute error.
  double denom_floor = 1e-7;
};

/// Compares the exact analytic gradient against central differences on
/// randomly probed coordinates (codebook entries, plus encoder/decoder
/// weights outside identity mode).
GradCheckResult grad_check(const AutoencoderParams& params, const Codebook& cb,
                           std::span<const MelSpectrogram> batch, const PatchGridSpec& spec = {},
                           const GradCheckOptions& opts = {});

}  // namespace melpatch
