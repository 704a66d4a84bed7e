#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace whinit {

using cplx = std::complex<double>;

/// Evaluate sum_l c_l w^l by Horner's rule (w is z^{-1} for transfer functions).
template <typename Coeff>
cplx horner(std::span<const Coeff> c, cplx w) {
  cplx acc{0.0, 0.0};
  for (std::size_t l = c.size(); l-- > 0;) acc = acc * w + cplx(c[l]);
  return acc;
}

/// Factored form of a polynomial in z^{-1}:
///   sum_l c_l z^{-l} = gain * z^{-delay} * prod_i (1 - roots[i] z^{-1}).
struct RootsAndGain {
  std::vector<cplx> roots;
  cplx gain{1.0, 0.0};
  int delay = 0;
};

/// Roots in z of sum_l c_l z^{-l}, via companion-matrix eigenvalues followed by
/// a few Newton polishing steps.
///
/// Trailing coefficients below 1e-14 * max|c| are trimmed; leading exact zeros
/// become a pure delay. Throws ConfigError on the all-zero polynomial.
inline RootsAndGain roots_and_gain(std::span<const cplx> poly) {
  double cmax = 0.0;
  for (const auto& c : poly) cmax = std::max(cmax, std::abs(c));
  if (cmax == 0.0) throw ConfigError("roots_and_gain: all-zero polynomial");

  std::size_t last = poly.size();
  while (last > 0 && std::abs(poly[last - 1]) < 1e-14 * cmax) --last;
  std::size_t first = 0;
  while (first < last && poly[first] == cplx{0.0, 0.0}) ++first;

  RootsAndGain out;
  out.delay = static_cast<int>(first);
  out.gain = poly[first];
  const std::size_t deg = last - first - 1;
  if (deg == 0) return out;

  // Monic polynomial in z: z^deg + (c1/c0) z^{deg-1} + ... + cdeg/c0.
  std::vector<cplx> monic(deg + 1);
  for (std::size_t l = 0; l <= deg; ++l) monic[l] = poly[first + l] / out.gain;

  Eigen::MatrixXcd companion = Eigen::MatrixXcd::Zero(deg, deg);
  for (std::size_t j = 0; j < deg; ++j) companion(0, j) = -monic[j + 1];
  for (std::size_t i = 1; i < deg; ++i) companion(i, i - 1) = 1.0;
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(companion, false);
  if (es.info() != Eigen::Success) throw NumericalError("roots_and_gain: eigen solver failed");

  auto p_and_dp = [&](cplx z, cplx& dp) {
    cplx p = monic[0];
    dp = 0.0;
    for (std::size_t l = 1; l <= deg; ++l) {
      dp = dp * z + p;
      p = p * z + monic[l];
    }
    return p;
  };

  out.roots.resize(deg);
  for (std::size_t i = 0; i < deg; ++i) {
    cplx z = es.eigenvalues()[static_cast<Eigen::Index>(i)];
    for (int it = 0; it < 3; ++it) {
      cplx dp;
      const cplx p = p_and_dp(z, dp);
      if (std::abs(dp) == 0.0) break;
      const cplx step = p / dp;
      // A Newton step only helps once we are already near a simple root.
      if (!(std::abs(step) < 1e-6 * std::max(1.0, std::abs(z)))) break;
      z -= step;
    }
    out.roots[i] = z;
  }
  std::sort(out.roots.begin(), out.roots.end(), [](cplx a, cplx b) {
    if (a.real() != b.real()) return a.real() < b.real();
    return a.imag() < b.imag();
  });
  return out;
}

/// Coefficients of gain * prod_i (1 - roots[i] z^{-1}).
inline std::vector<cplx> poly_from_roots(std::span<const cplx> roots, cplx gain = 1.0) {
  std::vector<cplx> c{gain};
  for (const auto& r : roots) {
    std::vector<cplx> next(c.size() + 1, cplx{0.0, 0.0});
    for (std::size_t l = 0; l < c.size(); ++l) {
      next[l] += c[l];
      next[l + 1] -= r * c[l];
    }
    c = std::move(next);
  }
  return c;
}

/// Real coefficients from a conjugate-symmetric root set; imaginary round-off is
/// discarded.
inline std::vector<double> real_poly_from_roots(std::span<const cplx> roots, double gain = 1.0) {
  const auto c = poly_from_roots(roots, gain);
  std::vector<double> out(c.size());
  for (std::size_t l = 0; l < c.size(); ++l) out[l] = c[l].real();
  return out;
}

}  // namespace whinit
