#include "melpatch/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "melpatch/rng.hpp"

namespace melpatch {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    d += diff * diff;
  }
  return d;
}

/// Nearest centroid among the rows of `centroids`, lowest index on ties.
NearestCode nearest_row(const Matrix& centroids, std::span<const double> v) {
  NearestCode best{0, std::numeric_limits<double>::infinity()};
  const std::size_t dim = v.size();
  for (std::size_t k = 0; k < centroids.rows(); ++k) {
    const auto e = centroids.row(k);
    double d = 0.0;
    std::size_t i = 0;
    // Partial sums only grow, so a strictly larger prefix can never win or tie.
    for (; i < dim; ++i) {
      const double diff = v[i] - e[i];
      d += diff * diff;
      if (d > best.squared_distance) break;
    }
    if (i == dim && d < best.squared_distance) {
      best = {static_cast<std::uint32_t>(k), d};
    }
  }
  return best;
}

}  // namespace

int bits_per_index(std::uint32_t k) {
  if (k == 0) throw std::invalid_argument("bits_per_index: k must be >= 1");
  int bits = 0;
  while ((std::uint64_t{1} << bits) < k) ++bits;
  return bits;
}

Codebook::Codebook(Matrix entries) : entries_(std::move(entries)) {
  if (entries_.rows() == 0 || entries_.cols() == 0) {
    throw std::invalid_argument("Codebook: need at least one entry of positive dimension");
  }
  for (double v : entries_.data()) {
    if (!std::isfinite(v)) throw std::invalid_argument("Codebook: non-finite entry");
  }
}

NearestCode nearest(const Codebook& cb, std::span<const double> v) {
  if (v.size() != cb.dim()) {
    throw std::invalid_argument("nearest: vector dimension " + std::to_string(v.size()) +
                                " != codebook dimension " + std::to_string(cb.dim()));
  }
  return nearest_row(cb.entries(), v);
}

TokenGrid quantize(const Codebook& cb, const Matrix& latents, std::size_t rows,
                   std::size_t cols, std::size_t original_t) {
  if (latents.rows() != rows * cols) {
    throw std::invalid_argument("quantize: latent count does not match grid shape");
  }
  if (latents.cols() != cb.dim()) {
    throw std::invalid_argument("quantize: latent dimension " + std::to_string(latents.cols()) +
                                " != codebook dimension " + std::to_string(cb.dim()));
  }
  TokenGrid g{rows, cols, original_t, std::vector<std::uint32_t>(rows * cols)};
  for (std::size_t n = 0; n < latents.rows(); ++n) {
    g.indices[n] = nearest_row(cb.entries(), latents.row(n)).index;
  }
  return g;
}

Matrix dequantize(const Codebook& cb, const TokenGrid& g) {
  if (g.indices.size() != g.rows * g.cols) {
    throw std::invalid_argument("dequantize: index count does not match grid shape");
  }
  Matrix out(g.indices.size(), cb.dim());
  for (std::size_t n = 0; n < g.indices.size(); ++n) {
    const std::uint32_t idx = g.indices[n];
    if (idx >= cb.k()) {
      throw std::out_of_range("dequantize: index " + std::to_string(idx) +
                              " out of range for K=" + std::to_string(cb.k()));
    }
    const auto e = cb.entry(idx);
    std::copy(e.begin(), e.end(), out.row(n).begin());
  }
  return out;
}

VqLossTerms vq_loss(std::span<const double> z, std::span<const double> e, double beta) {
  if (z.size() != e.size()) throw std::invalid_argument("vq_loss: dimension mismatch");
  const double d = squared_distance(z, e);
  return {d, beta * d, beta};
}

KMeansResult kmeans_fit(const Matrix& samples, std::size_t k, const KMeansConfig& cfg) {
  const std::size_t n = samples.rows();
  const std::size_t dim = samples.cols();
  if (k == 0) throw std::invalid_argument("kmeans_fit: k must be >= 1");
  if (n < k) {
    throw std::invalid_argument("kmeans_fit: " + std::to_string(n) + " samples but k=" +
                                std::to_string(k));
  }

  Rng rng(cfg.seed);
  Matrix centroids(k, dim);
  std::vector<double> closest(n, std::numeric_limits<double>::infinity());

  // k-means++ seeding.
  auto place = [&](std::size_t c, std::size_t sample) {
    const auto src = samples.row(sample);
    std::copy(src.begin(), src.end(), centroids.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) {
      closest[i] = std::min(closest[i], squared_distance(samples.row(i), src));
    }
  };
  place(0, static_cast<std::size_t>(rng.next() % n));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double d : closest) total += d;
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += closest[i];
        if (acc > target && closest[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<std::size_t>(rng.next() % n);
    }
    place(c, pick);
  }

  KMeansResult result;
  result.assignments.assign(n, 0);
  std::vector<double> dist(n, 0.0);

  auto assign = [&]() {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const NearestCode nc = nearest_row(centroids, samples.row(i));
      result.assignments[i] = nc.index;
      dist[i] = nc.squared_distance;
      inertia += nc.squared_distance;
    }
    result.inertia_history.push_back(inertia);
  };

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    assign();
    ++result.iterations;

    Matrix sums(k, dim);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t c = result.assignments[i];
      ++counts[c];
      auto s = sums.row(c);
      const auto x = samples.row(i);
      for (std::size_t d = 0; d < dim; ++d) s[d] += x[d];
    }

    Matrix next(k, dim);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      auto dst = next.row(c);
      const auto s = sums.row(c);
      for (std::size_t d = 0; d < dim; ++d) dst[d] = s[d] / static_cast<double>(counts[c]);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      const auto far = static_cast<std::size_t>(
          std::distance(dist.begin(), std::max_element(dist.begin(), dist.end())));
      const auto src = samples.row(far);
      std::copy(src.begin(), src.end(), next.row(c).begin());
      dist[far] = -1.0;
    }

    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      shift = std::max(shift, std::sqrt(squared_distance(next.row(c), centroids.row(c))));
    }
    centroids = std::move(next);
    if (shift < cfg.tol) break;
  }
  assign();

  result.codebook = Codebook(std::move(centroids));
  return result;
}

Codebook ema_update(const Codebook& cb, EmaState& state, const Matrix& batch,
                    std::span<const std::uint32_t> assignments, double gamma, double epsilon) {
  const std::size_t k = cb.k();
  const std::size_t dim = cb.dim();
  if (batch.rows() != assignments.size()) {
    throw std::invalid_argument("ema_update: one assignment per batch vector required");
  }
  if (batch.rows() > 0 && batch.cols() != dim) {
    throw std::invalid_argument("ema_update: batch dimension mismatch");
  }
  if (state.counts.size() != k || state.sums.rows() != k || state.sums.cols() != dim) {
    throw std::invalid_argument("ema_update: state shape does not match codebook");
  }

  std::vector<double> batch_counts(k, 0.0);
  Matrix batch_sums(k, dim);
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    const std::uint32_t c = assignments[i];
    if (c >= k) throw std::out_of_range("ema_update: assignment out of range");
    batch_counts[c] += 1.0;
    auto s = batch_sums.row(c);
    const auto x = batch.row(i);
    for (std::size_t d = 0; d < dim; ++d) s[d] += x[d];
  }

  Codebook out = cb;
  for (std::size_t c = 0; c < k; ++c) {
    if (batch_counts[c] == 0.0) continue;
    state.counts[c] = gamma * state.counts[c] + (1.0 - gamma) * batch_counts[c];
    auto m = state.sums.row(c);
    const auto s = batch_sums.row(c);
    auto e = out.entries().row(c);
    for (std::size_t d = 0; d < dim; ++d) {
      m[d] = gamma * m[d] + (1.0 - gamma) * s[d];
      e[d] = m[d] / (state.counts[c] + epsilon);
    }
  }
  return out;
}

Utilization utilization(std::span<const TokenGrid> history, std::size_t k) {
  if (k == 0) throw std::invalid_argument("utilization: k must be >= 1");
  Utilization u;
  u.histogram.assign(k, 0);
  std::uint64_t total = 0;
  for (const TokenGrid& g : history) {
    for (std::uint32_t idx : g.indices) {
      if (idx >= k) throw std::out_of_range("utilization: index out of range");
      ++u.histogram[idx];
      ++total;
    }
  }
  if (total == 0) throw std::invalid_argument("utilization: empty token history");

  double entropy = 0.0;
  for (std::uint64_t c : u.histogram) {
    if (c == 0) {
      ++u.dead_count;
      continue;
    }
    const double p = static_cast<double>(c) / static_cast<double>(total);
    entropy -= p * std::log(p);
  }
  u.perplexity = std::exp(entropy);
  return u;
}

}  // namespace melpatch
