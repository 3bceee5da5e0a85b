#pragma once

#include <complex>
#include <memory>
#include <span>

namespace melpatch::detail {

/// Real-input FFT of fixed size backed by FFTW. Plans are shared between
/// instances of the same size; execution is reentrant.
class RealFft {
 public:
  explicit RealFft(int n);

  int size() const { return n_; }

  /// in: n reals, out: n/2 + 1 bins.
  void forward(std::span<const double> in, std::span<std::complex<double>> out) const;
  /// in: n/2 + 1 bins, out: n reals. Scaled by 1/n so inverse(forward(x)) == x.
  void inverse(std::span<const std::complex<double>> in, std::span<double> out) const;

 private:
  struct Plans;
  int n_;
  std::shared_ptr<const Plans> plans_;
};

}  // namespace melpatch::detail
