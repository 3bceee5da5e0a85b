#include "fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <stdexcept>
#include <vector>

namespace melpatch::detail {

struct RealFft::Plans {
  fftw_plan r2c = nullptr;
  fftw_plan c2r = nullptr;
  ~Plans() {
    fftw_destroy_plan(r2c);
    fftw_destroy_plan(c2r);
  }
};

namespace {

// The FFTW planner is not thread-safe; plan creation is serialized here and
// plans are cached for the life of the process. FFTW_ESTIMATE keeps the
// chosen algorithm (and therefore the rounding) identical across runs.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

RealFft::RealFft(int n) : n_(n) {
  if (n < 1) throw std::invalid_argument("RealFft: size must be positive");
  std::lock_guard lock(planner_mutex());
  static std::map<int, std::shared_ptr<const Plans>> cache;
  if (auto it = cache.find(n); it != cache.end()) {
    plans_ = it->second;
    return;
  }
  std::vector<double> real(n);
  std::vector<std::complex<double>> spec(n / 2 + 1);
  auto plans = std::make_shared<Plans>();
  auto* cspec = reinterpret_cast<fftw_complex*>(spec.data());
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  plans->r2c = fftw_plan_dft_r2c_1d(n, real.data(), cspec, flags);
  plans->c2r = fftw_plan_dft_c2r_1d(n, cspec, real.data(), flags | FFTW_DESTROY_INPUT);
  if (plans->r2c == nullptr || plans->c2r == nullptr) {
    throw std::runtime_error("RealFft: FFTW planning failed");
  }
  cache.emplace(n, plans);
  plans_ = std::move(plans);
}

void RealFft::forward(std::span<const double> in,
                      std::span<std::complex<double>> out) const {
  if (in.size() != static_cast<std::size_t>(n_) ||
      out.size() != static_cast<std::size_t>(n_ / 2 + 1)) {
    throw std::invalid_argument("RealFft::forward: buffer size mismatch");
  }
  // r2c does not modify its input, FFTW just lacks const in the signature.
  fftw_execute_dft_r2c(plans_->r2c, const_cast<double*>(in.data()),
                       reinterpret_cast<fftw_complex*>(out.data()));
}

void RealFft::inverse(std::span<const std::complex<double>> in,
                      std::span<double> out) const {
  if (in.size() != static_cast<std::size_t>(n_ / 2 + 1) ||
      out.size() != static_cast<std::size_t>(n_)) {
    throw std::invalid_argument("RealFft::inverse: buffer size mismatch");
  }
  std::vector<std::complex<double>> scratch(in.begin(), in.end());
  fftw_execute_dft_c2r(plans_->c2r, reinterpret_cast<fftw_complex*>(scratch.data()),
                       out.data());
  const double scale = 1.0 / n_;
  for (double& v : out) v *= scale;
}

}  // namespace melpatch::detail
