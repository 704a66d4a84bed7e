#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "lti.hpp"
#include "polynomial.hpp"
#include "rational_fit.hpp"
#include "signals.hpp"
#include "wh_sim.hpp"

namespace whinit {

enum class RootKind { Pole, Zero };
enum class BlockLabel { InputR, OutputS, Unclassified };

inline const char* to_string(RootKind k) { return k == RootKind::Pole ? "pole" : "zero"; }
inline const char* to_string(BlockLabel l) {
  switch (l) {
    case BlockLabel::InputR: return "InputR";
    case BlockLabel::OutputS: return "OutputS";
    default: return "Unclassified";
  }
}

struct AssignmentEntry {
  RootKind kind = RootKind::Pole;
  cplx value;
  cplx conjugate_partner;
  double angular_shift = 0.0;  // degrees, (-180, 180]
  double expected_shift = 0.0;
  double modulus_ratio = 1.0;
  BlockLabel label = BlockLabel::Unclassified;
  double confidence = 0.0;
  bool cancelled = false;
};

struct AssignmentReport {
  std::vector<AssignmentEntry> entries;
  double expected_shift = 0.0;
  double threshold_fraction = 0.5;

  std::size_t count(RootKind kind, BlockLabel label) const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [&](const auto& e) {
      return e.kind == kind && e.label == label;
    }));
  }
  /// Smallest confidence over the poles (1 when there are none).
  double min_pole_confidence() const {
    double c = 1.0;
    for (const auto& e : entries)
      if (e.kind == RootKind::Pole) c = std::min(c, e.confidence);
    return c;
  }
};

struct AssignOptions {
  double threshold_fraction = 0.5;
  double log_modulus_weight = 3.0;
  double angle_weight = 1.0;
};

namespace detail {

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method).
/// Returns match[row] = column.
inline std::vector<std::size_t> min_cost_matching(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> match(n);
  for (std::size_t j = 1; j <= n; ++j) match[p[j] - 1] = j - 1;
  return match;
}

inline double wrap_degrees(double deg) {
  double w = std::fmod(deg, 360.0);
  if (w <= -180.0) w += 360.0;
  if (w > 180.0) w -= 360.0;
  return w;
}

inline double root_distance(cplx a, cplx b, const AssignOptions& opt) {
  const double dl = std::log(std::abs(a)) - std::log(std::abs(b));
  const double da = std::arg(a / b);
  return std::hypot(opt.log_modulus_weight * dl, opt.angle_weight * da);
}

inline void assign_kind(std::vector<cplx> roots, RootKind kind, const std::vector<bool>& cancelled,
                        double expected, const AssignOptions& opt, AssignmentReport& out) {
  const std::size_t n = roots.size();
  // Roots at the origin have no angle; they are their own conjugate.
  for (auto& r : roots)
    if (std::abs(r) < 1e-300) r = cplx{1e-300, 0.0};
  std::vector<std::vector<double>> cost(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cost[i][j] = root_distance(roots[i], std::conj(roots[j]), opt);
  const auto match = min_cost_matching(cost);
  const double bound = opt.threshold_fraction * std::abs(expected);
  for (std::size_t i = 0; i < n; ++i) {
    AssignmentEntry e;
    e.kind = kind;
    e.value = roots[i];
    e.conjugate_partner = std::conj(roots[match[i]]);
    e.angular_shift = wrap_degrees(std::arg(e.value / e.conjugate_partner) * 180.0 / std::numbers::pi);
    e.expected_shift = expected;
    e.modulus_ratio = std::abs(e.value) / std::abs(e.conjugate_partner);
    e.cancelled = i < cancelled.size() && cancelled[i];
    const double to_r = std::abs(e.angular_shift - expected);
    const double to_s = std::abs(e.angular_shift);
    double margin = 0.0;
    if (bound > 0.0 && to_r < bound) {
      e.label = BlockLabel::InputR;
      margin = 1.0 - to_r / bound;
    } else if (bound > 0.0 && to_s < bound) {
      e.label = BlockLabel::OutputS;
      margin = 1.0 - to_s / bound;
    }
    // A partner at a different radius means the pairing itself is doubtful.
    const double radial = bound > 0.0 ? opt.log_modulus_weight * std::abs(std::log(e.modulus_ratio)) /
                                            (bound * std::numbers::pi / 180.0)
                                      : 0.0;
    e.confidence = std::clamp(margin * std::max(0.0, 1.0 - radial), 0.0, 1.0);
    if (e.cancelled) e.confidence *= 0.25;
    out.entries.push_back(e);
  }
}

}  // namespace detail

inline double expected_shift_degrees(const MultisineSpec& spec) {
  return 2.0 * static_cast<double>(spec.s()) / static_cast<double>(spec.grid.n_samples) * 360.0;
}

/// Pairs every root of the G- fit with a root of the conjugated set and labels
/// it by its angular shift: near the expected shift -> input block, near zero
/// -> output block.
inline AssignmentReport assign_roots(const FitResult& fit_minus, const MultisineSpec& spec,
                                     const AssignOptions& opt = {}) {
  detail::require(spec.coupling.has_value(), "assign_roots: spec is not phase-coupled");
  detail::require(opt.threshold_fraction > 0.0 && opt.threshold_fraction <= 1.0,
                  "assign_roots: threshold_fraction must be in (0, 1]");
  AssignmentReport rep;
  rep.expected_shift = expected_shift_degrees(spec);
  rep.threshold_fraction = opt.threshold_fraction;
  std::vector<bool> pc(fit_minus.poles.size()), zc(fit_minus.zeros.size());
  for (std::size_t i = 0; i < pc.size(); ++i) pc[i] = fit_minus.pole_cancelled(i);
  for (std::size_t i = 0; i < zc.size(); ++i) zc[i] = fit_minus.zero_cancelled(i);
  detail::assign_kind(fit_minus.poles, RootKind::Pole, pc, rep.expected_shift, opt, rep);
  detail::assign_kind(fit_minus.zeros, RootKind::Zero, zc, rep.expected_shift, opt, rep);
  return rep;
}

struct BlockOptions {
  double real_axis_tol = 0.02;
  double conjugate_tol = 0.05;
  bool snap_to_bla = true;
};

struct InitialBlocks {
  RationalTF r_hat;
  RationalTF s_hat;
  std::vector<cplx> dropped;  // unclassified roots that had no conjugate partner
};

namespace detail {

/// Conjugate-symmetric version of a root set. Offending roots are collected in
/// `unpaired`.
inline std::vector<cplx> symmetrize(std::vector<cplx> roots, const BlockOptions& opt, std::vector<cplx>& unpaired) {
  std::vector<cplx> out;
  std::vector<bool> used(roots.size(), false);
  for (std::size_t i = 0; i < roots.size(); ++i) {
    if (used[i]) continue;
    used[i] = true;
    const cplx r = roots[i];
    if (std::abs(r.imag()) < opt.real_axis_tol) {
      out.emplace_back(r.real(), 0.0);
      continue;
    }
    std::size_t best = roots.size();
    double best_d = opt.conjugate_tol;
    for (std::size_t j = 0; j < roots.size(); ++j) {
      if (used[j]) continue;
      const double d = std::abs(roots[j] - std::conj(r));
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    if (best == roots.size()) {
      unpaired.push_back(r);
      continue;
    }
    used[best] = true;
    const cplx m = 0.5 * (r + std::conj(roots[best]));
    out.push_back(m);
    out.push_back(std::conj(m));
  }
  return out;
}

inline std::string list_roots(const std::vector<cplx>& roots) {
  std::ostringstream os;
  for (std::size_t i = 0; i < roots.size(); ++i) os << (i ? ", " : "") << roots[i].real() << (roots[i].imag() < 0 ? "" : "+") << roots[i].imag() << "j";
  return os.str();
}

inline cplx reflect_inside(cplx p) { return std::abs(p) < 1.0 ? p : 1.0 / std::conj(p); }

inline RationalTF monic_tf(const std::vector<cplx>& zeros, const std::vector<cplx>& poles) {
  std::vector<cplx> stable;
  for (const auto& p : poles) stable.push_back(reflect_inside(p));
  return RationalTF(real_poly_from_roots(zeros), real_poly_from_roots(stable));
}

}  // namespace detail

namespace detail {

struct LabeledRoot {
  cplx value;  // back-rotated for the input block
  bool input = false;
  double confidence = 0.0;
};

/// Gives every root of the real reference fit the label of its partner in a
/// bijective nearest-neighbour matching; both members of a conjugate pair get
/// the label of the more confident partner. Returns false when the root counts
/// differ.
inline bool snap_to_reference(const std::vector<LabeledRoot>& labeled, const std::vector<cplx>& ref,
                              std::vector<cplx>& input, std::vector<cplx>& output) {
  if (labeled.size() != ref.size()) return false;
  const std::size_t n = ref.size();
  std::vector<std::vector<double>> cost(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cost[i][j] = std::abs(ref[i] - labeled[j].value);
  const auto match = min_cost_matching(cost);
  std::vector<bool> is_input(n);
  std::vector<double> conf(n);
  for (std::size_t i = 0; i < n; ++i) {
    is_input[i] = labeled[match[i]].input;
    conf[i] = labeled[match[i]].confidence;
  }
  std::vector<bool> done(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (done[i]) continue;
    done[i] = true;
    std::size_t partner = n;
    if (ref[i].imag() != 0.0)
      for (std::size_t j = 0; j < n; ++j)
        if (!done[j] && std::abs(ref[j] - std::conj(ref[i])) <= 1e-6 * std::max(1.0, std::abs(ref[i]))) {
          partner = j;
          break;
        }
    bool in = is_input[i];
    if (partner < n) {
      done[partner] = true;
      if (conf[partner] > conf[i]) in = is_input[partner];
      (in ? input : output).push_back(ref[partner]);
    }
    (in ? input : output).push_back(ref[i]);
  }
  return true;
}

}  // namespace detail

/// Splits the labeled roots into R and S. Input-block roots are rotated back by
/// e^{-j 2 pi s/N}; unclassified roots go to S. With `snap_to_bla` the roots of
/// the real BLA fit replace the shifted-fit roots, each taking the block of its
/// nearest labeled counterpart, so only the assignment decision comes from the
/// shifted fit.
inline InitialBlocks build_initial_blocks(const AssignmentReport& report, const FitResult& fit_minus,
                                          const FitResult* bla_fit, const MultisineSpec& spec,
                                          const BlockOptions& opt = {}) {
  (void)fit_minus;
  const double omega = 2.0 * std::numbers::pi * static_cast<double>(spec.s()) / static_cast<double>(spec.grid.n_samples);
  const cplx back = std::polar(1.0, -omega);
  std::vector<detail::LabeledRoot> lp, lz;
  std::vector<cplx> rp, rz, sp, sz, sp_unc, sz_unc;
  for (const auto& e : report.entries) {
    const bool pole = e.kind == RootKind::Pole;
    const bool in = e.label == BlockLabel::InputR;
    (pole ? lp : lz).push_back({in ? e.value * back : e.value, in, e.confidence});
    switch (e.label) {
      case BlockLabel::InputR: (pole ? rp : rz).push_back(e.value * back); break;
      case BlockLabel::OutputS: (pole ? sp : sz).push_back(e.value); break;
      default: (pole ? sp_unc : sz_unc).push_back(e.value); break;
    }
  }

  InitialBlocks out;
  std::vector<cplx> srp, ssp, srz, ssz;
  const bool snapped_p = opt.snap_to_bla && bla_fit && detail::snap_to_reference(lp, bla_fit->poles, srp, ssp);
  const bool snapped_z = opt.snap_to_bla && bla_fit && detail::snap_to_reference(lz, bla_fit->zeros, srz, ssz);

  std::vector<cplx> bad;
  auto resolve = [&](bool snapped, std::vector<cplx>& r, std::vector<cplx>& s, const std::vector<cplx>& unc,
                     std::vector<cplx>& sr, std::vector<cplx>& ss) {
    if (snapped) {
      r = std::move(sr);
      s = std::move(ss);
      return;
    }
    r = detail::symmetrize(r, opt, bad);
    s = detail::symmetrize(s, opt, bad);
    auto extra = detail::symmetrize(unc, opt, out.dropped);
    s.insert(s.end(), extra.begin(), extra.end());
  };
  resolve(snapped_p, rp, sp, sp_unc, srp, ssp);
  resolve(snapped_z, rz, sz, sz_unc, srz, ssz);
  if (!bad.empty())
    throw NumericalError("build_initial_blocks: roots without a conjugate partner: " + detail::list_roots(bad));
  out.r_hat = detail::monic_tf(rz, rp);
  out.s_hat = detail::monic_tf(sz, sp);
  return out;
}

struct InitialWhEstimate {
  RationalTF r_hat;
  RationalTF s_hat;
  PolynomialNonlinearity f_hat;
  std::string gain_convention = "R and S are monic in q^-1; the cascade gain is carried by f";
  double fit_residual = 0.0;

  WhModel model() const { return {r_hat, f_hat, s_hat}; }
};

namespace detail {

inline double rms(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
}

/// Periodic steady-state response of every period of x.
inline std::vector<double> filter_each_period(const RationalTF& tf, std::span<const double> x, std::size_t n) {
  std::vector<double> out;
  out.reserve(x.size());
  for (std::size_t p = 0; p * n < x.size(); ++p) {
    const auto y = filter_periodic(tf, x.subspan(p * n, n));
    out.insert(out.end(), y.begin(), y.end());
  }
  return out;
}

}  // namespace detail

/// Output of the WH model in periodic steady state for a periodic input record.
inline std::vector<double> simulate_periodic(const WhModel& m, std::span<const double> u, std::size_t period) {
  auto x = detail::filter_each_period(m.r, u, period);
  for (auto& v : x) v = m.f(v);
  return detail::filter_each_period(m.s, x, period);
}

inline std::vector<double> simulate_periodic(const RationalTF& g, std::span<const double> u, std::size_t period) {
  return detail::filter_each_period(g, u, period);
}

/// rms(y - yhat) / rms(y).
inline double relative_rms_error(std::span<const double> y, std::span<const double> yhat) {
  detail::require(y.size() == yhat.size(), "relative_rms_error: length mismatch");
  std::vector<double> e(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) e[i] = y[i] - yhat[i];
  const double ry = detail::rms(y);
  return ry > 0.0 ? detail::rms(e) / ry : detail::rms(e);
}

/// Linear regression of y on s_hat[(r_hat u)^d], d = 0..max_degree.
inline InitialWhEstimate estimate_nonlinearity(const RationalTF& r_hat, const RationalTF& s_hat, const Record& rec,
                                               std::size_t max_degree) {
  detail::require(r_hat.is_stable() && s_hat.is_stable(), "estimate_nonlinearity: blocks must be stable");
  detail::require(rec.period_length > 0 && rec.u.size() == rec.y.size() && !rec.u.empty(),
                  "estimate_nonlinearity: empty or inconsistent record");
  const std::size_t n = rec.period_length;
  const auto xh = detail::filter_each_period(r_hat, rec.u, n);
  const auto rows = static_cast<Eigen::Index>(rec.y.size());
  Eigen::MatrixXd a(rows, static_cast<Eigen::Index>(max_degree + 1));
  std::vector<double> pw(xh.size(), 1.0);
  for (std::size_t d = 0; d <= max_degree; ++d) {
    const auto z = detail::filter_each_period(s_hat, pw, n);
    for (Eigen::Index i = 0; i < rows; ++i) a(i, static_cast<Eigen::Index>(d)) = z[static_cast<std::size_t>(i)];
    for (std::size_t i = 0; i < pw.size(); ++i) pw[i] *= xh[i];
  }
  const Eigen::Map<const Eigen::VectorXd> y(rec.y.data(), rows);
  Eigen::VectorXd scale = a.colwise().norm().transpose();
  for (Eigen::Index c = 0; c < scale.size(); ++c)
    if (scale(c) == 0.0) throw NumericalError("estimate_nonlinearity: regressor of degree " + std::to_string(c) + " vanishes");
  const Eigen::MatrixXd as = a * scale.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(as);
  qr.setThreshold(1e-12);
  if (qr.rank() < as.cols()) throw NumericalError("estimate_nonlinearity: rank-deficient regressor matrix");
  const Eigen::VectorXd g = qr.solve(y).cwiseQuotient(scale);

  InitialWhEstimate est;
  est.r_hat = r_hat;
  est.s_hat = s_hat;
  est.f_hat.coeffs.assign(g.data(), g.data() + g.size());
  const Eigen::VectorXd yhat = a * g;
  est.fit_residual = relative_rms_error(rec.y, std::span<const double>(yhat.data(), static_cast<std::size_t>(yhat.size())));
  return est;
}

}  // namespace whinit
