#include "melpatch/autoencoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "melpatch/rng.hpp"

namespace melpatch {

namespace {

using T = AutoencoderParams::Tensor;

Matrix xavier(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(-bound, bound);
  return m;
}

/// out = w * in + b
void affine(const Matrix& w, const Matrix& b, std::span<const double> in, std::span<double> out) {
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto wr = w.row(r);
    double acc = b(r, 0);
    for (std::size_t c = 0; c < wr.size(); ++c) acc += wr[c] * in[c];
    out[r] = acc;
  }
}

/// Adds grad_out * in^T to gw and grad_out to gb; writes w^T * grad_out to grad_in.
void affine_backward(const Matrix& w, std::span<const double> in, std::span<const double> grad_out,
                     Matrix& gw, Matrix& gb, std::span<double> grad_in) {
  for (std::size_t c = 0; c < grad_in.size(); ++c) grad_in[c] = 0.0;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double g = grad_out[r];
    gb(r, 0) += g;
    auto gwr = gw.row(r);
    const auto wr = w.row(r);
    for (std::size_t c = 0; c < wr.size(); ++c) {
      gwr[c] += g * in[c];
      grad_in[c] += wr[c] * g;
    }
  }
}

int sign_of(double v) { return (v > 0.0) - (v < 0.0); }

struct BatchResult {
  LossReport report;
  std::vector<TokenGrid> tokens;
};

/// Shared forward (and optional backward) pass over a batch.
BatchResult run_batch(const AutoencoderParams& params, const Codebook& cb,
                      std::span<const MelSpectrogram> batch, const PatchGridSpec& spec,
                      double beta, GradientMode mode, Gradients* grads,
                      std::vector<int>* signature) {
  const std::size_t P = spec.patch_size();
  if (params.input_dim() != P) {
    throw std::invalid_argument("autoencoder input dimension " +
                                std::to_string(params.input_dim()) + " != patch size " +
                                std::to_string(P));
  }
  const std::size_t D = params.latent_dim();
  const bool quantized = mode != GradientMode::Unquantized;
  if (quantized && cb.dim() != D) {
    throw std::invalid_argument("codebook dimension " + std::to_string(cb.dim()) +
                                " != latent dimension " + std::to_string(D));
  }
  const bool ident = params.identity_mode();
  const std::size_t H = params.hidden_dim();
  const auto& W = params.tensors();

  std::vector<PatchSet> sets;
  sets.reserve(batch.size());
  std::size_t total_cells = 0;
  std::size_t total_patches = 0;
  for (const MelSpectrogram& m : batch) {
    sets.push_back(patchify(m, spec));
    total_cells += m.values.size();
    total_patches += sets.back().count();
  }
  if (total_patches == 0) throw std::invalid_argument("loss: batch contains no patches");
  const double inv_cells = total_cells > 0 ? 1.0 / static_cast<double>(total_cells) : 0.0;
  const double inv_patches = 1.0 / static_cast<double>(total_patches);

  if (grads != nullptr) {
    grads->params.clear();
    for (const Matrix& t : W) grads->params.emplace_back(t.rows(), t.cols());
    grads->codebook = quantized ? Matrix(cb.k(), cb.dim()) : Matrix();
  }

  std::vector<double> h1(H), z(D), q(D), h2(H), xhat(P);
  std::vector<double> g_xhat(P), g_h2(H), g_q(D), g_z(D), g_h1(H), g_p(P);

  BatchResult out;
  double l1_sum = 0.0;
  double vq_sum = 0.0;
  if (signature != nullptr) signature->clear();

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const PatchSet& ps = sets[b];
    const std::size_t pt = static_cast<std::size_t>(spec.patch_t);
    TokenGrid tokens{ps.rows, ps.cols, ps.original_t, std::vector<std::uint32_t>(ps.count(), 0)};

    for (std::size_t n = 0; n < ps.count(); ++n) {
      const auto p = ps.patches.row(n);
      const std::size_t patch_row = n / ps.cols;

      // Encoder.
      if (ident) {
        std::copy(p.begin(), p.end(), z.begin());
      } else {
        affine(W[T::kEncW1], W[T::kEncB1], p, h1);
        for (double& v : h1) v = std::tanh(v);
        affine(W[T::kEncW2], W[T::kEncB2], h1, z);
      }

      // Quantizer.
      std::uint32_t code = 0;
      if (quantized) {
        code = nearest(cb, z).index;
        const auto e = cb.entry(code);
        std::copy(e.begin(), e.end(), q.begin());
        double d = 0.0;
        for (std::size_t i = 0; i < D; ++i) d += (z[i] - q[i]) * (z[i] - q[i]);
        vq_sum += d;
      } else {
        std::copy(z.begin(), z.end(), q.begin());
      }
      tokens.indices[n] = code;
      if (signature != nullptr) signature->push_back(static_cast<int>(code));

      // Decoder.
      if (ident) {
        std::copy(q.begin(), q.end(), xhat.begin());
      } else {
        affine(W[T::kDecW1], W[T::kDecB1], q, h2);
        for (double& v : h2) v = std::tanh(v);
        affine(W[T::kDecW2], W[T::kDecB2], h2, xhat);
      }

      // l1 over cells that exist in the unpadded spectrogram.
      for (std::size_t c = 0; c < P; ++c) {
        const std::size_t frame = patch_row * pt + c / static_cast<std::size_t>(spec.patch_f);
        if (frame >= ps.original_t) {
          g_xhat[c] = 0.0;
          continue;
        }
        const double r = p[c] - xhat[c];
        l1_sum += std::abs(r);
        g_xhat[c] = -sign_of(r) * inv_cells;
        if (signature != nullptr) signature->push_back(sign_of(r));
      }

      if (grads == nullptr) continue;
      auto& G = grads->params;

      // Decoder backward.
      if (ident) {
        std::copy(g_xhat.begin(), g_xhat.end(), g_q.begin());
      } else {
        affine_backward(W[T::kDecW2], h2, g_xhat, G[T::kDecW2], G[T::kDecB2], g_h2);
        for (std::size_t i = 0; i < H; ++i) g_h2[i] *= 1.0 - h2[i] * h2[i];
        affine_backward(W[T::kDecW1], q, g_h2, G[T::kDecW1], G[T::kDecB1], g_q);
      }

      // Route through the quantizer.
      switch (mode) {
        case GradientMode::StraightThrough: {
          auto ge = grads->codebook.row(code);
          for (std::size_t i = 0; i < D; ++i) {
            const double diff = z[i] - q[i];
            g_z[i] = g_q[i] + beta * 2.0 * inv_patches * diff;
            ge[i] += -2.0 * inv_patches * diff;
          }
          break;
        }
        case GradientMode::Exact: {
          auto ge = grads->codebook.row(code);
          for (std::size_t i = 0; i < D; ++i) {
            const double diff = z[i] - q[i];
            g_z[i] = (1.0 + beta) * 2.0 * inv_patches * diff;
            ge[i] += g_q[i] - (1.0 + beta) * 2.0 * inv_patches * diff;
          }
          break;
        }
        case GradientMode::Unquantized:
          std::copy(g_q.begin(), g_q.end(), g_z.begin());
          break;
      }

      // Encoder backward.
      if (!ident) {
        affine_backward(W[T::kEncW2], h1, g_z, G[T::kEncW2], G[T::kEncB2], g_h1);
        for (std::size_t i = 0; i < H; ++i) g_h1[i] *= 1.0 - h1[i] * h1[i];
        affine_backward(W[T::kEncW1], p, g_h1, G[T::kEncW1], G[T::kEncB1], g_p);
      }
    }
    out.tokens.push_back(std::move(tokens));
  }

  LossReport& r = out.report;
  r.recon_l1 = l1_sum * inv_cells;
  r.codebook_loss = vq_sum * inv_patches;
  r.commitment_loss = beta * r.codebook_loss;
  r.total = r.recon_l1 + r.codebook_loss + r.commitment_loss;
  return out;
}

}  // namespace

AutoencoderParams AutoencoderParams::identity(std::size_t patch_size) {
  AutoencoderParams p;
  p.identity_ = true;
  p.input_dim_ = patch_size;
  p.hidden_ = 0;
  p.latent_ = patch_size;
  return p;
}

AutoencoderParams AutoencoderParams::random(std::size_t patch_size, std::size_t hidden,
                                            std::size_t latent, std::uint64_t seed) {
  if (patch_size == 0 || hidden == 0 || latent == 0) {
    throw std::invalid_argument("AutoencoderParams: dimensions must be positive");
  }
  Rng rng(seed);
  AutoencoderParams p;
  p.identity_ = false;
  p.input_dim_ = patch_size;
  p.hidden_ = hidden;
  p.latent_ = latent;
  p.tensors_.push_back(xavier(hidden, patch_size, rng));
  p.tensors_.emplace_back(hidden, 1);
  p.tensors_.push_back(xavier(latent, hidden, rng));
  p.tensors_.emplace_back(latent, 1);
  p.tensors_.push_back(xavier(hidden, latent, rng));
  p.tensors_.emplace_back(hidden, 1);
  p.tensors_.push_back(xavier(patch_size, hidden, rng));
  p.tensors_.emplace_back(patch_size, 1);
  return p;
}

AutoencoderParams AutoencoderParams::from_tensors(std::vector<Matrix> tensors) {
  if (tensors.size() != 8) {
    throw std::invalid_argument("AutoencoderParams: expected 8 tensors, got " +
                                std::to_string(tensors.size()));
  }
  const std::size_t H = tensors[T::kEncW1].rows();
  const std::size_t P = tensors[T::kEncW1].cols();
  const std::size_t D = tensors[T::kEncW2].rows();
  auto expect = [&](std::size_t i, std::size_t r, std::size_t c) {
    if (tensors[i].rows() != r || tensors[i].cols() != c) {
      throw std::invalid_argument("AutoencoderParams: tensor " + std::to_string(i) +
                                  " has inconsistent shape");
    }
  };
  expect(T::kEncB1, H, 1);
  expect(T::kEncW2, D, H);
  expect(T::kEncB2, D, 1);
  expect(T::kDecW1, H, D);
  expect(T::kDecB1, H, 1);
  expect(T::kDecW2, P, H);
  expect(T::kDecB2, P, 1);
  AutoencoderParams p;
  p.identity_ = false;
  p.input_dim_ = P;
  p.hidden_ = H;
  p.latent_ = D;
  p.tensors_ = std::move(tensors);
  return p;
}

void AutoencoderParams::encode(std::span<const double> patch, std::span<double> latent) const {
  if (identity_) {
    std::copy(patch.begin(), patch.end(), latent.begin());
    return;
  }
  std::vector<double> h(hidden_);
  affine(tensors_[T::kEncW1], tensors_[T::kEncB1], patch, h);
  for (double& v : h) v = std::tanh(v);
  affine(tensors_[T::kEncW2], tensors_[T::kEncB2], h, latent);
}

void AutoencoderParams::decode(std::span<const double> latent, std::span<double> patch) const {
  if (identity_) {
    std::copy(latent.begin(), latent.end(), patch.begin());
    return;
  }
  std::vector<double> h(hidden_);
  affine(tensors_[T::kDecW1], tensors_[T::kDecB1], latent, h);
  for (double& v : h) v = std::tanh(v);
  affine(tensors_[T::kDecW2], tensors_[T::kDecB2], h, patch);
}

Matrix AutoencoderParams::encode_all(const Matrix& patches) const {
  if (patches.cols() != input_dim_) {
    throw std::invalid_argument("encode: patch size does not match encoder input");
  }
  Matrix out(patches.rows(), latent_);
  for (std::size_t n = 0; n < patches.rows(); ++n) encode(patches.row(n), out.row(n));
  return out;
}

Matrix AutoencoderParams::decode_all(const Matrix& latents) const {
  if (latents.cols() != latent_) {
    throw std::invalid_argument("decode: latent size does not match decoder input");
  }
  Matrix out(latents.rows(), input_dim_);
  for (std::size_t n = 0; n < latents.rows(); ++n) decode(latents.row(n), out.row(n));
  return out;
}

AutoencoderParams init_params_from_data(std::size_t hidden, std::size_t latent,
                                        const Matrix& patches, std::uint64_t seed) {
  const std::size_t P = patches.cols();
  AutoencoderParams p = AutoencoderParams::random(P, hidden, latent, seed);
  if (patches.rows() == 0) return p;

  std::vector<double> mean(P, 0.0);
  for (std::size_t n = 0; n < patches.rows(); ++n) {
    const auto r = patches.row(n);
    for (std::size_t c = 0; c < P; ++c) mean[c] += r[c];
  }
  for (double& m : mean) m /= static_cast<double>(patches.rows());
  double var = 0.0;
  for (std::size_t n = 0; n < patches.rows(); ++n) {
    const auto r = patches.row(n);
    for (std::size_t c = 0; c < P; ++c) var += (r[c] - mean[c]) * (r[c] - mean[c]);
  }
  var /= static_cast<double>(patches.size());
  const double scale = std::sqrt(var) > 1e-8 ? std::sqrt(var) : 1.0;

  auto& W = p.tensors();
  // Encoder sees (x - mean) / scale; decoder emits scale * y + mean.
  for (double& v : W[T::kEncW1].data()) v /= scale;
  for (std::size_t r = 0; r < hidden; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < P; ++c) acc += W[T::kEncW1](r, c) * mean[c];
    W[T::kEncB1](r, 0) = -acc;
  }
  for (double& v : W[T::kDecW2].data()) v *= scale;
  for (std::size_t c = 0; c < P; ++c) W[T::kDecB2](c, 0) = mean[c];
  return p;
}

double recon_loss(const MelSpectrogram& x, const MelSpectrogram& xhat) {
  if (x.frames() != xhat.frames() || x.bands() != xhat.bands()) {
    throw std::invalid_argument("recon_loss: shape mismatch");
  }
  if (x.values.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    acc += std::abs(x.values.data()[i] - xhat.values.data()[i]);
  }
  return acc / static_cast<double>(x.values.size());
}

ForwardResult forward(const AutoencoderParams& params, const Codebook& cb,
                      const MelSpectrogram& m, const PatchGridSpec& spec, double beta) {
  const PatchSet ps = patchify(m, spec);
  const Matrix latents = params.encode_all(ps.patches);
  TokenGrid tokens = quantize(cb, latents, ps.rows, ps.cols, ps.original_t);
  const Matrix decoded = params.decode_all(dequantize(cb, tokens));
  PatchSet rebuilt{decoded, ps.rows, ps.cols, ps.original_t};
  MelSpectrogram recon = unpatchify(rebuilt, spec, m.config);

  LossReport report;
  report.recon_l1 = recon_loss(m, recon);
  double vq = 0.0;
  for (std::size_t n = 0; n < latents.rows(); ++n) {
    vq += vq_loss(latents.row(n), cb.entry(tokens.indices[n]), beta).codebook_term;
  }
  report.codebook_loss = ps.count() > 0 ? vq / static_cast<double>(ps.count()) : 0.0;
  report.commitment_loss = beta * report.codebook_loss;
  report.total = report.recon_l1 + report.codebook_loss + report.commitment_loss;
  return {std::move(recon), std::move(tokens), report};
}

LossAndGradients loss_and_gradients(const AutoencoderParams& params, const Codebook& cb,
                                    std::span<const MelSpectrogram> batch,
                                    const PatchGridSpec& spec, double beta, GradientMode mode) {
  LossAndGradients out;
  BatchResult r = run_batch(params, cb, batch, spec, beta, mode, &out.grads, nullptr);
  out.report = r.report;
  out.tokens = std::move(r.tokens);
  return out;
}

LossReport evaluate_loss(const AutoencoderParams& params, const Codebook& cb,
                         std::span<const MelSpectrogram> batch, const PatchGridSpec& spec,
                         double beta, std::vector<int>* signature) {
  return run_batch(params, cb, batch, spec, beta, GradientMode::StraightThrough, nullptr,
                   signature)
      .report;
}

}  // namespace melpatch
