#pragma once

#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "error.hpp"

namespace whinit {

using cplx = std::complex<double>;

/// Spectrum of one period on the symmetric line set -N/2+1 ... N/2.
///
/// Values are stored in FFT order (line k at position k mod N); use `at()`
/// with signed line indices.
class Spectrum {
 public:
  Spectrum() = default;
  explicit Spectrum(std::size_t n) : values_(n, cplx{0.0, 0.0}) {}
  explicit Spectrum(std::vector<cplx> fft_order) : values_(std::move(fft_order)) {}

  std::size_t size() const { return values_.size(); }

  static std::size_t wrap(long line, std::size_t n) {
    const long nn = static_cast<long>(n);
    long r = line % nn;
    return static_cast<std::size_t>(r < 0 ? r + nn : r);
  }

  cplx& at(long line) { return values_[wrap(line, values_.size())]; }
  const cplx& at(long line) const { return values_[wrap(line, values_.size())]; }

  std::vector<cplx>& raw() { return values_; }
  const std::vector<cplx>& raw() const { return values_; }

  long min_line() const { return -static_cast<long>(values_.size()) / 2 + 1; }
  long max_line() const { return static_cast<long>(values_.size()) / 2; }

 private:
  std::vector<cplx> values_;
};

/// Unitary DFT: X(k) = N^{-1/2} sum_t x(t) e^{-j 2 pi k t / N}.
inline Spectrum dft(std::span<const double> x) {
  detail::require(!x.empty(), "dft: empty signal");
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::Unscaled);
  std::vector<double> in(x.begin(), x.end());
  std::vector<cplx> out;
  fft.fwd(out, in);
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.size()));
  for (auto& v : out) v *= scale;
  return Spectrum(std::move(out));
}

inline Spectrum dft(std::span<const double> x, std::size_t n) {
  if (x.size() != n) throw ConfigError("dft: length mismatch");
  return dft(x);
}

/// Complex unitary DFT (used for complex-valued sequences).
inline Spectrum dft_complex(std::span<const cplx> x) {
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::Unscaled);
  std::vector<cplx> in(x.begin(), x.end());
  std::vector<cplx> out;
  fft.fwd(out, in);
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.size()));
  for (auto& v : out) v *= scale;
  return Spectrum(std::move(out));
}

/// Inverse unitary DFT; returns the real part (spectra of real signals).
inline std::vector<double> idft(const Spectrum& spec) {
  const std::size_t n = spec.size();
  detail::require(n > 0, "idft: empty spectrum");
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::Unscaled);
  std::vector<cplx> in = spec.raw();
  std::vector<cplx> out;
  fft.inv(out, in);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t) x[t] = out[t].real() * scale;
  return x;
}

/// Extract period `p` (length n) from a multi-period record.
inline std::span<const double> period(std::span<const double> record, std::size_t n,
                                      std::size_t p) {
  if ((p + 1) * n > record.size()) throw ConfigError("period index out of range");
  return record.subspan(p * n, n);
}

}  // namespace whinit
