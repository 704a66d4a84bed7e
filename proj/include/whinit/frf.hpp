#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dft.hpp"
#include "error.hpp"
#include "signals.hpp"
#include "wh_sim.hpp"

namespace whinit {

/// Nonparametric FRF on a set of (possibly negative) lines. Variances are
/// variances of the mean: var_noise from period-to-period scatter, var_total
/// from realization-to-realization scatter.
struct FrfEstimate {
  FrequencyGrid grid;
  std::vector<long> lines;
  std::vector<cplx> mean;
  std::vector<double> var_noise;
  std::vector<double> var_total;
  std::size_t n_realizations = 0;
  std::size_t n_periods = 0;

  std::size_t size() const { return lines.size(); }
};

struct TimeOriginEstimate {
  std::map<long, double> delta_per_couple;  // radians, principal branch (-pi/s, pi/s]
  double pooled_delta = 0.0;                // radians
  double delay_samples() const {
    return -pooled_delta * static_cast<double>(n_samples) / (2.0 * std::numbers::pi);
  }
  std::size_t n_samples = 0;
};

struct ShiftedBlaEstimate {
  FrfEstimate minus;  // G-: collected at m+2s and -(m-s)
  FrfEstimate plus;   // G+: collected at m-s and -(m+2s)
  TimeOriginEstimate time_origin;
};

namespace detail {

/// Streaming mean / sample variance of complex values (|.|^2 scatter).
struct ComplexWelford {
  std::size_t n = 0;
  cplx mean{0.0, 0.0};
  double m2 = 0.0;

  void push(cplx v) {
    ++n;
    const cplx d = v - mean;
    mean += d / static_cast<double>(n);
    m2 += std::real(std::conj(d) * (v - mean));
  }
  double sample_variance() const { return n > 1 ? std::max(0.0, m2 / static_cast<double>(n - 1)) : 0.0; }
};

inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a <= -std::numbers::pi ? a + 2.0 * std::numbers::pi : a;
}

inline void check_records(std::span<const Record> records, const MultisineSpec& spec) {
  require(!records.empty(), "estimator: no records");
  for (const auto& r : records) {
    require(r.period_length == spec.grid.n_samples, "estimator: record period length does not match the spec N");
    require(r.n_periods >= 1 && r.u.size() == r.n_periods * r.period_length && r.y.size() == r.u.size(),
            "estimator: malformed record");
  }
}

/// Spectrum of a real period with X(-k) forced to conj(X(k)) and the mean removed.
inline Spectrum real_spectrum(std::span<const double> x) {
  Spectrum s = dft(x);
  s.at(0) = 0.0;
  for (long k = 1; k < s.max_line(); ++k) s.at(-k) = std::conj(s.at(k));
  return s;
}

struct FrfAccumulator {
  std::vector<ComplexWelford> across;   // per line, over realizations
  std::vector<double> noise_var_sum;    // per line, sum of within-realization variances of the mean

  explicit FrfAccumulator(std::size_t lines) : across(lines), noise_var_sum(lines, 0.0) {}

  void add_realization(const std::vector<ComplexWelford>& periods) {
    for (std::size_t j = 0; j < periods.size(); ++j) {
      across[j].push(periods[j].mean);
      noise_var_sum[j] += periods[j].sample_variance() / static_cast<double>(periods[j].n);
    }
  }

  FrfEstimate finish(const FrequencyGrid& grid, std::vector<long> lines, std::size_t n_periods) const {
    FrfEstimate e;
    e.grid = grid;
    e.lines = std::move(lines);
    const std::size_t m = across.empty() ? 0 : across[0].n;
    e.n_realizations = m;
    e.n_periods = n_periods;
    for (std::size_t j = 0; j < across.size(); ++j) {
      const double md = static_cast<double>(m);
      const double vn = noise_var_sum[j] / (md * md);
      e.mean.push_back(across[j].mean);
      e.var_noise.push_back(vn);
      e.var_total.push_back(m > 1 ? across[j].sample_variance() / md : vn);
    }
    return e;
  }
};

}  // namespace detail

/// Robust-method BLA: per realization the ratio Y(k)/U(k) is averaged over
/// periods, then averaged over realizations.
inline FrfEstimate estimate_bla(std::span<const Record> records, const MultisineSpec& spec) {
  detail::check_records(records, spec);
  const auto& lines = spec.excited_lines;
  detail::FrfAccumulator acc(lines.size());
  std::size_t n_periods = records.front().n_periods;
  for (const auto& rec : records) {
    n_periods = std::min(n_periods, rec.n_periods);
    std::vector<detail::ComplexWelford> per(lines.size());
    for (std::size_t p = 0; p < rec.n_periods; ++p) {
      const Spectrum u = dft(rec.u_period(p));
      const Spectrum y = dft(rec.y_period(p));
      for (std::size_t j = 0; j < lines.size(); ++j) {
        const cplx uk = u.at(lines[j]);
        if (std::abs(uk) == 0.0)
          throw NumericalError("estimate_bla: |U(k)| = 0 at excited line " + std::to_string(lines[j]));
        per[j].push(y.at(lines[j]) / uk);
      }
    }
    acc.add_realization(per);
  }
  return acc.finish(spec.grid, lines, n_periods);
}

/// Shifted BLAs with optional time-origin compensation.
///
/// For every couple (m, m+s) the ratios Y(m+2s)/U(m) and Y(-(m-s))/U(-m) feed
/// G-, and Y(m-s)/U(m), Y(-(m+2s))/U(-m) feed G+. Compensation multiplies
/// Y(k)/U(m) by e^{j(m-k)D(m)} and Y(k)/U(-m) by e^{j(-m-k)D(m)}, with
/// D(m) = (angle U(m+s) - angle U(m)) / s. Per realization G+(k) is the
/// conjugate of G-(-k), so the symmetry holds exactly.
inline ShiftedBlaEstimate estimate_shifted_bla(std::span<const Record> records, const MultisineSpec& spec,
                                               bool compensate_time_origin = true) {
  detail::require(is_phase_coupled(spec.kind) && spec.coupling.has_value(),
                  "estimate_shifted_bla: spec is not phase-coupled");
  detail::check_records(records, spec);
  const long s = spec.s();
  const auto ms = spec.couples();
  const long nyq = spec.grid.nyquist_line();
  for (long m : ms)
    detail::require(m + 2 * s <= nyq, "estimate_shifted_bla: collection line m+2s is off the grid");

  // Line layout: for couple j, index 2j -> m+2s, 2j+1 -> -(m-s).
  std::vector<long> minus_lines;
  for (long m : ms) {
    minus_lines.push_back(m + 2 * s);
    minus_lines.push_back(-(m - s));
  }

  detail::FrfAccumulator acc(minus_lines.size());
  std::vector<detail::ComplexWelford> delta_acc(ms.size());  // e^{j s D(m)}
  std::size_t n_periods = records.front().n_periods;
  for (const auto& rec : records) {
    n_periods = std::min(n_periods, rec.n_periods);
    std::vector<detail::ComplexWelford> per(minus_lines.size());
    for (std::size_t p = 0; p < rec.n_periods; ++p) {
      const Spectrum u = detail::real_spectrum(rec.u_period(p));
      const Spectrum y = detail::real_spectrum(rec.y_period(p));
      for (std::size_t j = 0; j < ms.size(); ++j) {
        const long m = ms[j];
        const cplx um = u.at(m);
        if (std::abs(um) == 0.0)
          throw NumericalError("estimate_shifted_bla: |U(m)| = 0 at couple line " + std::to_string(m));
        const double sd = detail::wrap_angle(std::arg(u.at(m + s)) - std::arg(um));  // s * D(m)
        const double delta = sd / static_cast<double>(s);
        delta_acc[j].push(std::polar(1.0, sd));
        cplx g_hi = y.at(m + 2 * s) / um;             // Y(m+2s)/U(m)
        cplx g_lo = y.at(-(m - s)) / std::conj(um);   // Y(-(m-s))/U(-m)
        if (compensate_time_origin) {
          g_hi *= std::polar(1.0, -2.0 * static_cast<double>(s) * delta);  // (m - k) = -2s
          g_lo *= std::polar(1.0, -static_cast<double>(s) * delta);        // (-m - k) = -s
        }
        per[2 * j].push(g_hi);
        per[2 * j + 1].push(g_lo);
      }
    }
    acc.add_realization(per);
  }

  ShiftedBlaEstimate out;
  out.minus = acc.finish(spec.grid, minus_lines, n_periods);
  out.plus = out.minus;
  for (std::size_t j = 0; j < out.plus.size(); ++j) {
    out.plus.lines[j] = -out.minus.lines[j];
    out.plus.mean[j] = std::conj(out.minus.mean[j]);
  }

  auto& to = out.time_origin;
  to.n_samples = spec.grid.n_samples;
  const double sd = static_cast<double>(s);
  cplx pooled_vec{0.0, 0.0};
  for (std::size_t j = 0; j < ms.size(); ++j) {
    const double d = std::arg(delta_acc[j].mean) / sd;
    to.delta_per_couple[ms[j]] = d;
    pooled_vec += std::polar(1.0, d * sd);
  }
  // Circular mean on the s*D scale, then median of per-couple values moved to
  // the branch (period 2 pi / s) nearest that estimate.
  const double first = std::arg(pooled_vec) / sd;
  std::vector<double> unwrapped;
  for (const auto& [m, d] : to.delta_per_couple) {
    const double period_len = 2.0 * std::numbers::pi / sd;
    unwrapped.push_back(d + period_len * std::round((first - d) / period_len));
  }
  std::sort(unwrapped.begin(), unwrapped.end());
  const std::size_t h = unwrapped.size() / 2;
  to.pooled_delta = unwrapped.size() % 2 ? unwrapped[h] : 0.5 * (unwrapped[h - 1] + unwrapped[h]);
  return out;
}

// ---------------------------------------------------------------------------
// Analytic shifted-BLA prediction and dominance constants.

/// Pairwise spectral sums of the intermediate spectrum X = R U:
///   c0 = 1/N sum X(l) X(-l), c_{-s} = 1/N sum X(l) X(-(l+s)), c_s = 1/N sum X(-l) X(l+s).
struct PairConstants {
  double c0 = 0.0;
  cplx c_minus_s{0.0, 0.0};
  cplx c_plus_s{0.0, 0.0};

  cplx of(int shift_sign) const {
    return shift_sign < 0 ? c_minus_s : (shift_sign > 0 ? c_plus_s : cplx(c0, 0.0));
  }
};

inline PairConstants pair_constants(const Spectrum& x, long s) {
  const std::size_t n = x.size();
  cplx c0{0.0, 0.0};
  PairConstants pc;
  for (long l = x.min_line(); l <= x.max_line(); ++l) {
    c0 += x.at(l) * x.at(-l);
    pc.c_minus_s += x.at(l) * x.at(-(l + s));
    pc.c_plus_s += x.at(-l) * x.at(l + s);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  pc.c0 = c0.real() * inv_n;
  pc.c_minus_s *= inv_n;
  pc.c_plus_s *= inv_n;
  return pc;
}

/// Unitary-DFT spectrum X(l) = R(l) U(l) of the intermediate signal for the
/// spec amplitudes with all couple phases set to zero (the pair sums do not
/// depend on the coupled phases).
inline Spectrum intermediate_spectrum(const RationalTF& r, const MultisineSpec& spec) {
  const std::size_t n = spec.grid.n_samples;
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  Spectrum x(n);
  for (long k : spec.excited_lines) {
    const cplx v = r.at_line(static_cast<double>(k), n) * sqrt_n * spec.amplitude(k);
    x.at(k) = v;
    if (k != spec.grid.nyquist_line()) x.at(-k) = std::conj(v);
  }
  return x;
}

/// Number of ways one carrier factor and (D-1)/2 phase-cancelling pairs can be
/// placed among D ordered factors: D * (D-2) * ... * 1.
inline double pairing_multiplicity(int degree) {
  double v = 1.0;
  for (int d = degree; d > 1; d -= 2) v *= d;
  return v;
}

/// sum over ordered (s_1..s_K) in {-1,0,1}^K with sum == target of prod c_{s_k}.
inline cplx shift_sequence_sum(const PairConstants& pc, int n_factors, int target) {
  if (n_factors == 0) return target == 0 ? cplx{1.0, 0.0} : cplx{0.0, 0.0};
  cplx total{0.0, 0.0};
  for (int sign = -1; sign <= 1; ++sign) {
    const int rest = target - sign;
    if (std::abs(rest) > n_factors - 1) continue;
    total += pc.of(sign) * shift_sequence_sum(pc, n_factors - 1, rest);
  }
  return total;
}

/// E{Y_D(m + i s) / U(m)} for f(x) = x^D (no gamma_D factor), one value per
/// couple m, O(1/N) terms dropped. `spec` must carry the amplitudes actually
/// applied (see SignalRealization::effective_spec).
inline std::vector<cplx> predict_shifted_bla(const WhModel& model, const MultisineSpec& spec, int degree,
                                             int line_offset) {
  detail::require(is_phase_coupled(spec.kind), "predict_shifted_bla: spec is not phase-coupled");
  detail::require(degree >= 3 && degree % 2 == 1, "predict_shifted_bla: degree must be odd and >= 3");
  detail::require(std::abs(line_offset) <= (degree + 1) / 2, "predict_shifted_bla: |i| > (D+1)/2");
  const std::size_t n = spec.grid.n_samples;
  const long s = spec.s();
  const PairConstants pc = pair_constants(intermediate_spectrum(model.r, spec), s);
  const int k_pairs = (degree - 1) / 2;
  const double mult = pairing_multiplicity(degree);
  const cplx direct = shift_sequence_sum(pc, k_pairs, line_offset);
  const cplx carried = shift_sequence_sum(pc, k_pairs, line_offset - 1);

  std::vector<cplx> out;
  for (long m : spec.couples()) {
    const cplx sk = model.s.at_line(static_cast<double>(m + line_offset * s), n);
    const cplx rm = model.r.at_line(static_cast<double>(m), n);
    const cplx rms = model.r.at_line(static_cast<double>(m + s), n);
    out.push_back(mult * sk * (rm * direct + rms * spec.couple_ratio(m) * carried));
  }
  return out;
}

/// Expected G- on its collection lines (same layout as estimate_shifted_bla)
/// summed over the odd degrees D >= 3 of the model nonlinearity.
inline FrfEstimate predict_shifted_bla_minus(const WhModel& model, const MultisineSpec& spec) {
  FrfEstimate e;
  e.grid = spec.grid;
  const auto ms = spec.couples();
  const long s = spec.s();
  e.mean.assign(2 * ms.size(), cplx{0.0, 0.0});
  for (long m : ms) {
    e.lines.push_back(m + 2 * s);
    e.lines.push_back(-(m - s));
  }
  for (std::size_t d = 3; d <= model.f.max_degree(); d += 2) {
    const double g = model.f.gamma(d);
    if (g == 0.0) continue;
    const auto hi = predict_shifted_bla(model, spec, static_cast<int>(d), 2);
    const auto lo = predict_shifted_bla(model, spec, static_cast<int>(d), -1);
    for (std::size_t j = 0; j < ms.size(); ++j) {
      e.mean[2 * j] += g * hi[j];
      e.mean[2 * j + 1] += g * std::conj(lo[j]);
    }
  }
  e.var_noise.assign(e.lines.size(), 0.0);
  e.var_total.assign(e.lines.size(), 0.0);
  return e;
}

/// Random-phase BLA constant for f(x) = x^D: D!! * c0^{(D-1)/2}.
inline double bla_constant(double c0, int degree) {
  return pairing_multiplicity(degree) * std::pow(c0, (degree - 1) / 2);
}

struct DominanceReport {
  double c0 = 0.0;
  cplx c_minus_s{0.0, 0.0};
  cplx c_plus_s{0.0, 0.0};
  bool ratio_bound_ok = false;      // c0 >= 2 |c_s|
  double alpha_lower_bound = 0.0;   // c0 / |c_s|
  std::map<int, double> alpha;      // |alpha_D| per odd degree, +inf for D = 3
};

/// |alpha_D|: single-shift over double-shift contributions with unit couple
/// amplitude ratio; +inf when no double-shift term exists (D = 3).
inline double dominance_ratio(const PairConstants& pc, int degree) {
  const int k = (degree - 1) / 2;
  const cplx num = shift_sequence_sum(pc, k, 1);
  const cplx den = shift_sequence_sum(pc, k, 2);
  if (std::abs(den) == 0.0) return std::numeric_limits<double>::infinity();
  return std::abs(num) / std::abs(den);
}

inline DominanceReport dominance_report(const Spectrum& x, const MultisineSpec& spec) {
  detail::require(is_phase_coupled(spec.kind), "dominance_report: spec is not phase-coupled");
  detail::require(x.size() == spec.grid.n_samples, "dominance_report: spectrum length mismatch");
  const PairConstants pc = pair_constants(x, spec.s());
  DominanceReport rep;
  rep.c0 = pc.c0;
  rep.c_minus_s = pc.c_minus_s;
  rep.c_plus_s = pc.c_plus_s;
  const double cs = std::abs(pc.c_plus_s);
  rep.ratio_bound_ok = rep.c0 >= 2.0 * cs - 1e-12 * std::max(1.0, rep.c0);
  rep.alpha_lower_bound = cs == 0.0 ? std::numeric_limits<double>::infinity() : rep.c0 / cs;
  for (int d : {3, 5, 7, 9}) rep.alpha[d] = dominance_ratio(pc, d);
  return rep;
}

inline DominanceReport dominance_report(const WhModel& model, const MultisineSpec& spec) {
  return dominance_report(intermediate_spectrum(model.r, spec), spec);
}

}  // namespace whinit
