#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "melpatch/matrix.hpp"

namespace melpatch {

/// Bits needed to address `k` entries: ceil(log2 k), 0 for k = 1.
int bits_per_index(std::uint32_t k);

/// K x D table of code vectors.
class Codebook {
 public:
  Codebook() = default;
  explicit Codebook(Matrix entries);

  std::size_t k() const { return entries_.rows(); }
  std::size_t dim() const { return entries_.cols(); }
  int bits_per_index() const { return melpatch::bits_per_index(static_cast<std::uint32_t>(k())); }

  const Matrix& entries() const { return entries_; }
  Matrix& entries() { return entries_; }
  std::span<const double> entry(std::size_t i) const { return entries_.row(i); }

  bool operator==(const Codebook&) const = default;

 private:
  Matrix entries_;
};

/// rows x cols codebook indices, time-major.
struct TokenGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t original_t = 0;
  std::vector<std::uint32_t> indices;

  std::uint32_t at(std::size_t r, std::size_t c) const { return indices[r * cols + c]; }
  bool operator==(const TokenGrid&) const = default;
};

struct NearestCode {
  std::uint32_t index = 0;
  double squared_distance = 0.0;
};

/// Exhaustive nearest entry under squared Euclidean distance; ties go to the
/// lowest index.
NearestCode nearest(const Codebook& cb, std::span<const double> v);

/// Row-wise nearest over a (rows*cols) x D latent matrix.
TokenGrid quantize(const Codebook& cb, const Matrix& latents, std::size_t rows,
                   std::size_t cols, std::size_t original_t);

/// Table lookup; throws std::out_of_range on an index >= K.
Matrix dequantize(const Codebook& cb, const TokenGrid& g);

struct VqLossTerms {
  double codebook_term = 0.0;
  double commitment_term = 0.0;
  double beta = 0.25;
};

/// ||z - e||^2 and beta * ||z - e||^2. The stop-gradient placement only
/// decides which side each term trains; the values coincide up to beta.
VqLossTerms vq_loss(std::span<const double> z, std::span<const double> e, double beta = 0.25);

struct KMeansConfig {
  int max_iters = 50;
  std::uint64_t seed = 0;
  double tol = 1e-6;
};

struct KMeansResult {
  Codebook codebook;
  std::vector<std::uint32_t> assignments;
  /// Inertia after every assignment pass, in order.
  std::vector<double> inertia_history;
  int iterations = 0;
};

/// k-means++ seeding followed by Lloyd iterations. Empty clusters are
/// reseeded from the samples farthest from their current centroid.
KMeansResult kmeans_fit(const Matrix& samples, std::size_t k, const KMeansConfig& cfg = {});

/// Running statistics for exponential-moving-average codebook updates.
struct EmaState {
  std::vector<double> counts;
  Matrix sums;

  static EmaState zeros(std::size_t k, std::size_t dim) {
    return {std::vector<double>(k, 0.0), Matrix(k, dim)};
  }
};

/// One EMA step: N_k <- g N_k + (1-g) n_k, m_k <- g m_k + (1-g) sum z,
/// e_k = m_k / (N_k + eps). Entries with no assigned vector in this batch
/// keep both their statistics and their value.
Codebook ema_update(const Codebook& cb, EmaState& state, const Matrix& batch,
                    std::span<const std::uint32_t> assignments, double gamma, double epsilon);

struct Utilization {
  std::vector<std::uint64_t> histogram;
  double perplexity = 0.0;
  std::size_t dead_count = 0;
};

Utilization utilization(std::span<const TokenGrid> history, std::size_t k);

}  // namespace melpatch
