#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dft.hpp"
#include "error.hpp"
#include "lti.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "signals.hpp"

namespace whinit {

/// f(x) = sum_D gamma_D x^D.
struct PolynomialNonlinearity {
  std::vector<double> coeffs{0.0, 1.0};

  double operator()(double x) const {
    double acc = 0.0;
    for (std::size_t d = coeffs.size(); d-- > 0;) acc = acc * x + coeffs[d];
    return acc;
  }
  std::size_t max_degree() const { return coeffs.empty() ? 0 : coeffs.size() - 1; }
  double gamma(std::size_t d) const { return d < coeffs.size() ? coeffs[d] : 0.0; }
  /// At least one odd degree D >= 3 with a nonzero coefficient.
  bool has_odd_nonlinear_term() const {
    for (std::size_t d = 3; d < coeffs.size(); d += 2)
      if (coeffs[d] != 0.0) return true;
    return false;
  }
};

struct WhModel {
  RationalTF r;
  PolynomialNonlinearity f;
  RationalTF s;
};

struct NoiseSpec {
  double variance = 0.0;
  std::optional<RationalTF> shaping;
};

/// Simulated measurement. x and w are internal signals kept for oracle checks;
/// estimators only see u and y.
struct Record {
  std::size_t period_length = 0;
  std::size_t n_periods = 0;
  std::vector<double> u;
  std::vector<double> y;
  std::vector<double> x;
  std::vector<double> w;
  std::vector<double> v;  // additive output noise actually applied

  std::span<const double> u_period(std::size_t p) const { return period(u, period_length, p); }
  std::span<const double> y_period(std::size_t p) const { return period(y, period_length, p); }
};

/// Steady-state simulation of u -> R -> f -> S -> (+ v).
///
/// `discard_periods` leading periods are simulated and dropped. The first
/// retained noise-free output period must match the period after it within
/// 1e-9 * rms(y) (one extra period is simulated for the check when only one is
/// retained), otherwise NumericalError advises more discard periods.
inline Record simulate(const WhModel& model, const SignalRealization& u, std::size_t n_periods,
                       std::size_t discard_periods, const NoiseSpec& noise = {}, std::uint64_t seed = 0) {
  detail::require(n_periods >= 1, "simulate: n_periods must be >= 1");
  detail::require(discard_periods >= 1, "simulate: discard_periods must be >= 1");
  detail::require(noise.variance >= 0.0, "simulate: noise variance must be nonnegative");
  const std::size_t n = u.period_length();
  const std::size_t check_extra = n_periods == 1 ? 1 : 0;
  const std::size_t simulated = n_periods + discard_periods + check_extra;
  const std::size_t total = n * (n_periods + discard_periods);
  const auto one = u.one_period();

  std::vector<double> u_full;
  u_full.reserve(n * simulated);
  for (std::size_t p = 0; p < simulated; ++p) u_full.insert(u_full.end(), one.begin(), one.end());

  const auto x_full = filter_lti(model.r, u_full);
  std::vector<double> w_full(x_full.size());
  std::transform(x_full.begin(), x_full.end(), w_full.begin(), [&](double v) { return model.f(v); });
  auto y_full = filter_lti(model.s, w_full);

  const std::size_t start = n * discard_periods;
  double ss = 0.0;
  for (std::size_t t = start; t < total; ++t) ss += y_full[t] * y_full[t];
  const double rms = std::sqrt(ss / static_cast<double>(total - start));
  double dev = 0.0;
  for (std::size_t t = 0; t < n; ++t) dev = std::max(dev, std::abs(y_full[start + n + t] - y_full[start + t]));
  if (dev > 1e-9 * rms && dev > 0.0) {
    throw NumericalError("simulate: transient not decayed (max inter-period deviation " + std::to_string(dev) +
                         " vs rms " + std::to_string(rms) + "); increase discard_periods");
  }
  auto trim = [&](std::vector<double>& v) { v.resize(total); };
  trim(u_full);
  std::vector<double> x_kept = x_full;
  trim(x_kept);
  trim(w_full);
  trim(y_full);

  Record rec;
  rec.period_length = n;
  rec.n_periods = n_periods;
  auto tail = [&](const std::vector<double>& v) { return std::vector<double>(v.begin() + static_cast<long>(start), v.end()); };
  rec.u = tail(u_full);
  rec.x = tail(x_kept);
  rec.w = tail(w_full);
  rec.y = tail(y_full);
  rec.v.assign(rec.y.size(), 0.0);
  if (noise.variance > 0.0) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> gauss(0.0, std::sqrt(noise.variance));
    std::vector<double> e(total);
    for (auto& v : e) v = gauss(gen);
    if (noise.shaping) e = filter_lti(*noise.shaping, e);
    for (std::size_t t = 0; t < rec.y.size(); ++t) {
      rec.v[t] = e[start + t];
      rec.y[t] += rec.v[t];
    }
  }
  return rec;
}

struct EnsembleOptions {
  std::size_t n_realizations = 1;
  std::size_t n_periods = 2;
  std::size_t discard_periods = 1;
  Scaling scaling;
  NoiseSpec noise;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  double delay = 0.0;  // common record delay in samples (synchronization tests)
};

/// Realization i uses phase seed derive_seed(seed, 2i) and noise seed
/// derive_seed(seed, 2i+1), so the ensemble is thread-count independent.
inline std::vector<Record> simulate_ensemble(const WhModel& model, const MultisineSpec& spec,
                                             const EnsembleOptions& opt) {
  std::vector<Record> out(opt.n_realizations);
  parallel_for(opt.n_realizations, opt.threads, [&](std::size_t i) {
    const auto sig = realize(spec, derive_seed(opt.seed, 2 * i), 1, opt.scaling);
    Record rec = simulate(model, sig, opt.n_periods, opt.discard_periods, opt.noise, derive_seed(opt.seed, 2 * i + 1));
    if (opt.delay != 0.0) {
      const std::size_t n = rec.period_length;
      rec.u = shift_record(rec.u, n, opt.delay);
      rec.y = shift_record(rec.y, n, opt.delay);
      rec.x = shift_record(rec.x, n, opt.delay);
      rec.w = shift_record(rec.w, n, opt.delay);
      rec.v = shift_record(rec.v, n, opt.delay);
    }
    out[i] = std::move(rec);
  });
  return out;
}

/// Brute-force output spectrum of a pure degree-D Wiener-Hammerstein system:
/// Y_D(k) = N^{-(D-1)/2} S(k) sum_{l_1+...+l_D = k (mod N)} prod_i R(l_i) U(l_i).
///
/// The D-fold sum is evaluated directly (nonzero X lines for the first D-1
/// indices, all lines for the last). Guarded to N^D <= 1e9.
inline Spectrum output_spectrum_oracle(const WhModel& model, const Spectrum& u_spectrum, int degree) {
  detail::require(degree >= 0, "output_spectrum_oracle: degree must be >= 0");
  const std::size_t n = u_spectrum.size();
  detail::require(std::pow(static_cast<double>(n), degree) <= 1e9,
                  "output_spectrum_oracle: N^D exceeds the 1e9 direct-sum guard");
  Spectrum x(n);
  std::vector<long> support;
  for (long l = u_spectrum.min_line(); l <= u_spectrum.max_line(); ++l) {
    x.at(l) = model.r.at_line(static_cast<double>(l), n) * u_spectrum.at(l);
    if (x.at(l) != cplx{0.0, 0.0}) support.push_back(l);
  }
  Spectrum y(n);
  if (degree == 0) {
    y.at(0) = std::sqrt(static_cast<double>(n)) * model.s.at_line(0.0, n);
    return y;
  }

  std::vector<cplx> acc(n, cplx{0.0, 0.0});
  // Enumerate ordered (l_1..l_{D-1}); l_D closes the sum for every k.
  auto recurse = [&](auto&& self, int depth, long sum, cplx prod) -> void {
    if (depth == degree - 1) {
      for (long k = x.min_line(); k <= x.max_line(); ++k)
        acc[Spectrum::wrap(k, n)] += prod * x.at(k - sum);
      return;
    }
    for (long l : support) self(self, depth + 1, sum + l, prod * x.at(l));
  };
  recurse(recurse, 0, 0, cplx{1.0, 0.0});

  const double scale = std::pow(1.0 / std::sqrt(static_cast<double>(n)), degree - 1);
  for (long k = y.min_line(); k <= y.max_line(); ++k)
    y.at(k) = scale * model.s.at_line(static_cast<double>(k), n) * acc[Spectrum::wrap(k, n)];
  return y;
}

/// Discrete-time stand-in for the electronic benchmark (fs = 78125 Hz):
/// R is a 3rd-order Chebyshev-I low-pass (0.5 dB ripple, 4.4 kHz), S a
/// 3rd-order Chebyshev-II low-pass (40 dB from 5 kHz, transmission zero near
/// 5.75 kHz), f(x) = x + 0.25 x^2 + 0.125 x^3.
inline WhModel benchmark_standin() {
  WhModel m;
  m.r = RationalTF::make({0.0032033587339343845, 0.009610076201803153, 0.009610076201803153, 0.0032033587339343845},
                         {1.0, -2.476280924001225, 2.1446898916674524, -0.6427820977947527});
  m.s = RationalTF::make({0.0056250827027612554, -0.004444241738175311, -0.00444424173817531, 0.005625082702761256},
                         {1.0, -2.725648900902445, 2.4877308971838743, -0.7597203143522573});
  m.f.coeffs = {0.0, 1.0, 0.25, 0.125};
  return m;
}

constexpr double kStandinSampleRate = 78125.0;

}  // namespace whinit
