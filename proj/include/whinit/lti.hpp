#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dft.hpp"
#include "error.hpp"
#include "polynomial.hpp"

namespace whinit {

/// exp(-j 2 pi k / N): the backward-shift variable on DFT line k.
inline cplx zinv_at_line(double line, std::size_t n) {
  const double w = -2.0 * std::numbers::pi * line / static_cast<double>(n);
  return {std::cos(w), std::sin(w)};
}

/// Rational transfer function in q^{-1} with coefficient type T (double or
/// complex). The denominator is normalized so that a_0 = 1.
template <typename T>
class BasicRationalTF {
 public:
  BasicRationalTF() : num_{T(1)}, den_{T(1)} {}

  BasicRationalTF(std::vector<T> num, std::vector<T> den) : num_(std::move(num)), den_(std::move(den)) {
    detail::require(!num_.empty() && !den_.empty(), "transfer function: empty coefficient array");
    const T a0 = den_[0];
    detail::require(std::abs(a0) != 0.0, "transfer function: a_0 must be nonzero");
    for (auto& b : num_) b /= a0;
    for (auto& a : den_) a /= a0;
  }

  static BasicRationalTF identity() { return BasicRationalTF(); }

  const std::vector<T>& num() const { return num_; }
  const std::vector<T>& den() const { return den_; }
  std::size_t num_order() const { return num_.size() - 1; }
  std::size_t den_order() const { return den_.size() - 1; }

  cplx operator()(cplx zinv) const {
    return horner<T>(num_, zinv) / horner<T>(den_, zinv);
  }
  /// Frequency response at (possibly negative or fractional) DFT line k of an
  /// N-point grid.
  cplx at_line(double line, std::size_t n) const { return (*this)(zinv_at_line(line, n)); }

  std::vector<cplx> poles() const { return roots_and_gain(as_complex(den_)).roots; }
  std::vector<cplx> zeros() const { return roots_and_gain(as_complex(num_)).roots; }

  bool is_stable() const {
    for (const auto& p : poles())
      if (!(std::abs(p) < 1.0)) return false;
    return true;
  }

 private:
  static std::vector<cplx> as_complex(const std::vector<T>& v) {
    return std::vector<cplx>(v.begin(), v.end());
  }

  std::vector<T> num_;
  std::vector<T> den_;
};

using ComplexRationalTF = BasicRationalTF<cplx>;

/// Real-coefficient transfer function. Construction through `make` rejects
/// unstable denominators.
class RationalTF : public BasicRationalTF<double> {
 public:
  using BasicRationalTF<double>::BasicRationalTF;
  RationalTF() = default;
  explicit RationalTF(BasicRationalTF<double> base) : BasicRationalTF<double>(std::move(base)) {}

  static RationalTF make(std::vector<double> num, std::vector<double> den) {
    RationalTF tf(std::move(num), std::move(den));
    if (!tf.is_stable()) throw ConfigError("transfer function is unstable (pole on or outside the unit circle)");
    return tf;
  }

  static RationalTF delay(std::size_t samples) {
    std::vector<double> num(samples + 1, 0.0);
    num.back() = 1.0;
    return RationalTF(std::move(num), {1.0});
  }
};

/// y(t) = sum_l b_l x(t-l) - sum_{l>=1} a_l y(t-l), zero initial conditions.
inline std::vector<double> filter_lti(const RationalTF& tf, std::span<const double> x) {
  const auto& b = tf.num();
  const auto& a = tf.den();
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    double acc = 0.0;
    for (std::size_t l = 0; l < b.size() && l <= t; ++l) acc += b[l] * x[t - l];
    for (std::size_t l = 1; l < a.size() && l <= t; ++l) acc -= a[l] * y[t - l];
    y[t] = acc;
  }
  return y;
}

/// Periodic steady-state response to one period of x, computed on the DFT grid.
inline std::vector<double> filter_periodic(const RationalTF& tf, std::span<const double> one_period) {
  Spectrum spec = dft(one_period);
  const std::size_t n = spec.size();
  for (long k = spec.min_line(); k <= spec.max_line(); ++k) {
    cplx h = tf.at_line(static_cast<double>(k), n);
    if (k == spec.max_line() && n % 2 == 0) h = h.real();  // keep the Nyquist bin real
    spec.at(k) *= h;
  }
  return idft(spec);
}

}  // namespace whinit
