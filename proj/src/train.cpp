#include "melpatch/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "melpatch/errors.hpp"
#include "melpatch/rng.hpp"

namespace melpatch {

namespace {

bool all_finite(const Matrix& m) {
  return std::all_of(m.data().begin(), m.data().end(), [](double v) { return std::isfinite(v); });
}

void adam_update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, double lr,
                 double decay, const TrainConfig& cfg, double bias1, double bias2) {
  auto& p = param.data();
  const auto& g = grad.data();
  auto& md = m.data();
  auto& vd = v.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * g[i];
    vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mhat = md[i] / bias1;
    const double vhat = vd[i] / bias2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + decay * p[i]);
  }
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("train: " + what); };
  if (!(beta1 > 0.0 && beta1 < 1.0)) fail("beta1 must be in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) fail("beta2 must be in (0, 1)");
  if (warmup_steps < 0 || total_steps < 0) fail("step counts must be >= 0");
  if (warmup_steps > total_steps) fail("warmup_steps must not exceed total_steps");
  if (!(lr_peak >= 0.0)) fail("lr_peak must be >= 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(commitment_beta >= 0.0)) fail("commitment_beta must be >= 0");
  if (batch_size == 0) fail("batch_size must be >= 1");
}

double lr_schedule(long step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) {
    throw std::invalid_argument("lr_schedule: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(cfg.total_steps) + "]");
  }
  if (step < cfg.warmup_steps) {
    return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const long decay_steps = cfg.total_steps - cfg.warmup_steps;
  if (decay_steps == 0) return cfg.lr_peak;
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(decay_steps);
  return cfg.lr_peak * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

AdamWState AdamWState::init(const AutoencoderParams& params, const Codebook& cb) {
  AdamWState s;
  for (const Matrix& t : params.tensors()) {
    s.m.emplace_back(t.rows(), t.cols());
    s.v.emplace_back(t.rows(), t.cols());
  }
  s.codebook_m = Matrix(cb.k(), cb.dim());
  s.codebook_v = Matrix(cb.k(), cb.dim());
  return s;
}

LossReport train_step(AutoencoderParams& params, Codebook& cb,
                      std::span<const MelSpectrogram> batch, AdamWState& opt, long step,
                      const TrainConfig& cfg, const PatchGridSpec& spec,
                      std::vector<TokenGrid>* tokens_out) {
  if (step < 0) throw std::invalid_argument("train_step: step must be >= 0");
  if (opt.m.size() != params.tensors().size() || opt.codebook_m.rows() != cb.k() ||
      opt.codebook_m.cols() != cb.dim()) {
    throw std::invalid_argument("train_step: optimizer state does not match parameters");
  }

  LossAndGradients lg = loss_and_gradients(params, cb, batch, spec, cfg.commitment_beta,
                                           GradientMode::StraightThrough);
  lg.report.step = step;

  const LossReport& r = lg.report;
  bool finite = std::isfinite(r.total) && all_finite(lg.grads.codebook);
  for (std::size_t i = 0; finite && i < lg.grads.params.size(); ++i) {
    finite = all_finite(lg.grads.params[i]);
  }
  if (!finite) {
    throw NumericalError("train_step " + std::to_string(step) +
                         ": non-finite loss or gradient (recon_l1=" + std::to_string(r.recon_l1) +
                         ", codebook=" + std::to_string(r.codebook_loss) + ")");
  }

  const double lr = lr_schedule(std::min(step, cfg.total_steps), cfg);
  ++opt.updates;
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.updates));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.updates));
  auto& tensors = params.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    adam_update(tensors[i], lg.grads.params[i], opt.m[i], opt.v[i], lr, cfg.weight_decay, cfg,
                bias1, bias2);
  }
  adam_update(cb.entries(), lg.grads.codebook, opt.codebook_m, opt.codebook_v, lr, 0.0, cfg,
              bias1, bias2);
  if (tokens_out != nullptr) *tokens_out = std::move(lg.tokens);
  return lg.report;
}

GradCheckResult grad_check(const AutoencoderParams& params, const Codebook& cb,
                           std::span<const MelSpectrogram> batch, const PatchGridSpec& spec,
                           const GradCheckOptions& opts) {
  const LossAndGradients analytic =
      loss_and_gradients(params, cb, batch, spec, opts.beta, GradientMode::Exact);

  // Coordinate = (tensor, flat index); tensor == npos addresses the codebook.
  constexpr std::size_t kCodebook = static_cast<std::size_t>(-1);
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < cb.entries().size(); ++i) coords.emplace_back(kCodebook, i);
  for (std::size_t t = 0; t < params.tensors().size(); ++t) {
    for (std::size_t i = 0; i < params.tensors()[t].size(); ++i) coords.emplace_back(t, i);
  }
  Rng rng(opts.seed);
  const std::size_t probes = std::min(opts.max_probes, coords.size());
  for (std::size_t i = 0; i < probes; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next() % (coords.size() - i));
    std::swap(coords[i], coords[j]);
  }

  std::vector<int> base_sig;
  evaluate_loss(params, cb, batch, spec, opts.beta, &base_sig);

  GradCheckResult result;
  AutoencoderParams p = params;
  Codebook c = cb;
  std::vector<int> sig_plus;
  std::vector<int> sig_minus;
  for (std::size_t i = 0; i < probes; ++i) {
    const auto [tensor, idx] = coords[i];
    double& slot = tensor == kCodebook ? c.entries().data()[idx] : p.tensors()[tensor].data()[idx];
    const double a = tensor == kCodebook ? analytic.grads.codebook.data()[idx]
                                         : analytic.grads.params[tensor].data()[idx];
    const double saved = slot;
    slot = saved + opts.h;
    const double plus = evaluate_loss(p, c, batch, spec, opts.beta, &sig_plus).total;
    slot = saved - opts.h;
    const double minus = evaluate_loss(p, c, batch, spec, opts.beta, &sig_minus).total;
    slot = saved;

    const double numeric = (plus - minus) / (2.0 * opts.h);
    if (!std::isfinite(a) || !std::isfinite(numeric)) {
      result.all_finite = false;
      continue;
    }
    if (sig_plus != base_sig || sig_minus != base_sig) {
      ++result.skipped;
      continue;
    }
    ++result.probed;
    const double denom = std::max({std::abs(a), std::abs(numeric), opts.denom_floor});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
  }
  return result;
}

}  // namespace melpatch
