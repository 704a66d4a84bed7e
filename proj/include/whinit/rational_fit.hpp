#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "frf.hpp"
#include "lti.hpp"
#include "polynomial.hpp"

namespace whinit {

enum class FitWeighting { Total, Noise, Unit };

struct FitOptions {
  int sk_iterations = 5;        // Sanathanan-Koerner reweighting passes before Gauss-Newton
  int max_iterations = 200;
  double rel_cost_tol = 1e-10;
  double step_tol = 1e-12;
  double cancellation_tol = 1e-3;
  FitWeighting weighting = FitWeighting::Total;
  /// Extra starting points for the Gauss-Newton refinement; the lowest-cost
  /// converged result over all starts (linearized init included) wins.
  std::vector<ComplexRationalTF> extra_starts;
};

struct CancellationPair {
  std::size_t pole_index = 0;
  std::size_t zero_index = 0;
  double distance = 0.0;
};

struct FitResult {
  bool real_valued = false;
  ComplexRationalTF model;
  std::size_t n_samples = 0;
  double cost = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<cplx> poles;
  std::vector<cplx> zeros;
  cplx gain{1.0, 0.0};
  std::vector<CancellationPair> cancellations;

  /// Real-coefficient view of a real fit (imaginary parts are exactly zero).
  RationalTF real_model() const {
    detail::require(real_valued, "FitResult::real_model: fit has complex coefficients");
    std::vector<double> b, a;
    for (const auto& v : model.num()) b.push_back(v.real());
    for (const auto& v : model.den()) a.push_back(v.real());
    return RationalTF(std::move(b), std::move(a));
  }
  bool pole_cancelled(std::size_t i) const {
    return std::any_of(cancellations.begin(), cancellations.end(), [&](const auto& c) { return c.pole_index == i; });
  }
  bool zero_cancelled(std::size_t i) const {
    return std::any_of(cancellations.begin(), cancellations.end(), [&](const auto& c) { return c.zero_index == i; });
  }
};

namespace detail {

struct FitProblem {
  std::size_t n_samples = 0;
  std::vector<cplx> zinv;
  std::vector<cplx> g;
  std::vector<double> inv_sigma;
};

/// sigma^2 per line with the 1e-12 * median floor; unit weights when the
/// variances carry no information (all zero).
inline std::vector<double> fit_variances(const FrfEstimate& data, FitWeighting weighting) {
  std::vector<double> var(data.size(), 1.0);
  if (weighting == FitWeighting::Unit) return var;
  const auto& src = weighting == FitWeighting::Total ? data.var_total : data.var_noise;
  require(src.size() == data.size(), "fit: variance array length mismatch");
  std::vector<double> sorted(src.begin(), src.end());
  for (double v : sorted) require(std::isfinite(v) && v >= 0.0, "fit: variances must be finite and nonnegative");
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted.empty() ? 0.0 : sorted[sorted.size() / 2];
  if (!(median > 0.0)) return var;
  const double floor = 1e-12 * median;
  for (std::size_t j = 0; j < var.size(); ++j) var[j] = std::max(src[j], floor);
  return var;
}

inline FitProblem make_problem(const FrfEstimate& data, FitWeighting weighting) {
  FitProblem p;
  p.n_samples = data.grid.n_samples;
  require(p.n_samples > 0, "fit: data grid is empty");
  require(data.mean.size() == data.size(), "fit: mean array length mismatch");
  const auto var = fit_variances(data, weighting);
  for (std::size_t j = 0; j < data.size(); ++j) {
    require(std::isfinite(data.mean[j].real()) && std::isfinite(data.mean[j].imag()), "fit: non-finite FRF value");
    p.zinv.push_back(zinv_at_line(static_cast<double>(data.lines[j]), p.n_samples));
    p.g.push_back(data.mean[j]);
    p.inv_sigma.push_back(1.0 / std::sqrt(var[j]));
  }
  return p;
}

/// theta = [b_0..b_n, a_1..a_m].
struct Params {
  std::size_t n_num = 0;
  std::size_t n_den = 0;
  Eigen::VectorXcd theta;

  cplx num(cplx w) const {
    cplx acc{0.0, 0.0};
    for (std::size_t l = n_num + 1; l-- > 0;) acc = acc * w + theta(static_cast<Eigen::Index>(l));
    return acc;
  }
  cplx den(cplx w) const {
    cplx acc{0.0, 0.0};
    for (std::size_t l = n_den; l >= 1; --l) acc = (acc + theta(static_cast<Eigen::Index>(n_num + l))) * w;
    return acc + 1.0;
  }
  std::size_t size() const { return n_num + 1 + n_den; }
};

inline Eigen::VectorXcd residuals(const FitProblem& p, const Params& th) {
  Eigen::VectorXcd r(static_cast<Eigen::Index>(p.g.size()));
  for (std::size_t k = 0; k < p.g.size(); ++k)
    r(static_cast<Eigen::Index>(k)) = p.inv_sigma[k] * (p.g[k] - th.num(p.zinv[k]) / th.den(p.zinv[k]));
  return r;
}

inline double cost_of(const FitProblem& p, const Params& th) {
  double sum = 0.0;
  const auto r = residuals(p, th);
  for (Eigen::Index k = 0; k < r.size(); ++k) sum += std::norm(r(k));
  return sum / static_cast<double>(p.n_samples);
}

inline Eigen::MatrixXcd jacobian(const FitProblem& p, const Params& th) {
  const auto rows = static_cast<Eigen::Index>(p.g.size());
  Eigen::MatrixXcd j(rows, static_cast<Eigen::Index>(th.size()));
  for (Eigen::Index k = 0; k < rows; ++k) {
    const cplx w = p.zinv[static_cast<std::size_t>(k)];
    const cplx a = th.den(w);
    const cplx b = th.num(w);
    const double is = p.inv_sigma[static_cast<std::size_t>(k)];
    cplx wl{1.0, 0.0};
    for (std::size_t l = 0; l <= th.n_num; ++l, wl *= w) j(k, static_cast<Eigen::Index>(l)) = -is * wl / a;
    wl = w;
    for (std::size_t l = 1; l <= th.n_den; ++l, wl *= w)
      j(k, static_cast<Eigen::Index>(th.n_num + l)) = is * b * wl / (a * a);
  }
  return j;
}

/// Stack [Re; Im] for real-parameter least squares.
inline Eigen::MatrixXd stack_real(const Eigen::MatrixXcd& m) {
  Eigen::MatrixXd out(2 * m.rows(), m.cols());
  out.topRows(m.rows()) = m.real();
  out.bottomRows(m.rows()) = m.imag();
  return out;
}

/// Least squares via column-pivoted QR on column-normalized A; throws on rank loss.
template <typename Mat, typename Vec>
Vec solve_ls(const Mat& a, const Vec& rhs, const char* what) {
  using Scalar = typename Mat::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> scale(a.cols());
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const double nrm = a.col(c).norm();
    scale(c) = Scalar(nrm > 0.0 ? 1.0 / nrm : 1.0);
  }
  const Mat as = a * scale.asDiagonal();
  Eigen::ColPivHouseholderQR<Mat> qr(as);
  qr.setThreshold(1e-13);
  if (qr.rank() < as.cols())
    throw NumericalError(std::string(what) + ": rank-deficient normal equations (insufficient or degenerate lines)");
  Vec x = qr.solve(rhs);
  return (scale.asDiagonal() * x).eval();
}

inline Params linearized_init(const FitProblem& p, std::size_t n_num, std::size_t n_den, bool real, int sk_iters) {
  Params th;
  th.n_num = n_num;
  th.n_den = n_den;
  th.theta = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(th.size()));
  const auto rows = static_cast<Eigen::Index>(p.g.size());
  std::vector<double> extra(p.g.size(), 1.0);  // 1 / |A_prev|
  for (int pass = 0; pass <= sk_iters; ++pass) {
    Eigen::MatrixXcd a(rows, static_cast<Eigen::Index>(th.size()));
    Eigen::VectorXcd rhs(rows);
    for (Eigen::Index k = 0; k < rows; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      const double wgt = p.inv_sigma[ku] * extra[ku];
      const cplx w = p.zinv[ku];
      cplx wl{1.0, 0.0};
      for (std::size_t l = 0; l <= n_num; ++l, wl *= w) a(k, static_cast<Eigen::Index>(l)) = wgt * wl;
      wl = w;
      for (std::size_t l = 1; l <= n_den; ++l, wl *= w)
        a(k, static_cast<Eigen::Index>(n_num + l)) = -wgt * p.g[ku] * wl;
      rhs(k) = wgt * p.g[ku];
    }
    if (real) {
      Eigen::VectorXd rr(2 * rows);
      rr.head(rows) = rhs.real();
      rr.tail(rows) = rhs.imag();
      const Eigen::VectorXd x = solve_ls(stack_real(a), rr, "fit_real_tf");
      th.theta = x.cast<cplx>();
    } else {
      th.theta = solve_ls(a, rhs, "fit_complex_tf");
    }
    if (n_den == 0) break;
    for (std::size_t k = 0; k < p.g.size(); ++k) {
      const double mag = std::abs(th.den(p.zinv[k]));
      extra[k] = mag > 0.0 ? 1.0 / mag : 1.0;
    }
  }
  return th;
}

inline FitResult refine(const FitProblem& prob, Params th, const FitOptions& opt, bool real, const char* name);

inline FitResult run_fit(const FrfEstimate& data, std::size_t n_num, std::size_t n_den, const FitOptions& opt,
                         bool real) {
  const char* name = real ? "fit_real_tf" : "fit_complex_tf";
  require(data.size() >= n_num + n_den + 2,
          std::string(name) + ": need at least n_num + n_den + 2 frequency lines");
  const FitProblem prob = make_problem(data, opt.weighting);
  FitResult best = refine(prob, linearized_init(prob, n_num, n_den, real, opt.sk_iterations), opt, real, name);
  for (const auto& start : opt.extra_starts) {
    require(start.num_order() == n_num && start.den_order() == n_den, "fit: extra start has the wrong orders");
    Params th;
    th.n_num = n_num;
    th.n_den = n_den;
    th.theta.resize(static_cast<Eigen::Index>(th.size()));
    for (std::size_t l = 0; l <= n_num; ++l)
      th.theta(static_cast<Eigen::Index>(l)) = real ? cplx(start.num()[l].real()) : start.num()[l];
    for (std::size_t l = 1; l <= n_den; ++l)
      th.theta(static_cast<Eigen::Index>(n_num + l)) = real ? cplx(start.den()[l].real()) : start.den()[l];
    FitResult cand = refine(prob, th, opt, real, name);
    if (cand.cost < best.cost) best = std::move(cand);
  }
  return best;
}

inline FitResult refine(const FitProblem& prob, Params th, const FitOptions& opt, bool real, const char* name) {
  const std::size_t n_num = th.n_num;
  const std::size_t n_den = th.n_den;

  double cost = cost_of(prob, th);
  double ref = 0.0;
  for (std::size_t k = 0; k < prob.g.size(); ++k) ref += std::norm(prob.inv_sigma[k] * prob.g[k]);
  ref /= static_cast<double>(prob.n_samples);

  FitResult res;
  res.real_valued = real;
  res.n_samples = prob.n_samples;
  double lambda = 1e-4;
  int it = 0;
  bool converged = cost <= 1e-30 * ref;
  while (!converged && it < opt.max_iterations) {
    ++it;
    const Eigen::MatrixXcd jc = jacobian(prob, th);
    const Eigen::VectorXcd rc = residuals(prob, th);
    bool accepted = false;
    while (!accepted) {
      Eigen::VectorXcd step;
      if (real) {
        const Eigen::MatrixXd jr = stack_real(jc);
        Eigen::VectorXd rr(2 * rc.size());
        rr.head(rc.size()) = rc.real();
        rr.tail(rc.size()) = rc.imag();
        const Eigen::VectorXd d = jr.colwise().norm();
        Eigen::MatrixXd aug(jr.rows() + jr.cols(), jr.cols());
        aug << jr, (std::sqrt(lambda) * d).asDiagonal().toDenseMatrix();
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(aug.rows());
        rhs.head(rr.size()) = -rr;
        step = solve_ls(aug, rhs, name).cast<cplx>();
      } else {
        const Eigen::VectorXd d = jc.colwise().norm();
        Eigen::MatrixXcd aug(jc.rows() + jc.cols(), jc.cols());
        aug << jc, (std::sqrt(lambda) * d).cast<cplx>().asDiagonal().toDenseMatrix();
        Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(aug.rows());
        rhs.head(rc.size()) = -rc;
        step = solve_ls(aug, rhs, name);
      }
      Params trial = th;
      trial.theta += step;
      const double trial_cost = cost_of(prob, trial);
      if (std::isfinite(trial_cost) && trial_cost <= cost) {
        const double decrease = cost - trial_cost;
        const double step_norm = step.norm();
        const double theta_norm = th.theta.norm();
        th = std::move(trial);
        accepted = true;
        lambda = std::max(lambda / 3.0, 1e-12);
        if (trial_cost <= 1e-30 * ref || decrease <= opt.rel_cost_tol * cost ||
            step_norm <= opt.step_tol * (1.0 + theta_norm))
          converged = true;
        cost = trial_cost;
      } else {
        lambda *= 4.0;
        if (lambda > 1e16) {
          converged = true;  // no descent direction left: stationary point
          break;
        }
      }
    }
  }

  std::vector<cplx> b(th.theta.data(), th.theta.data() + n_num + 1);
  std::vector<cplx> a{cplx{1.0, 0.0}};
  for (std::size_t l = 1; l <= n_den; ++l) a.push_back(th.theta(static_cast<Eigen::Index>(n_num + l)));
  if (real) {
    for (auto& v : b) v = v.real();
    for (auto& v : a) v = v.real();
  }
  res.model = ComplexRationalTF(b, a);
  res.cost = cost;
  res.iterations = it;
  res.converged = converged;
  const auto num_roots = roots_and_gain(res.model.num());
  res.zeros = num_roots.roots;
  res.gain = num_roots.gain;
  res.poles = n_den > 0 ? roots_and_gain(res.model.den()).roots : std::vector<cplx>{};
  for (std::size_t i = 0; i < res.poles.size(); ++i)
    for (std::size_t j = 0; j < res.zeros.size(); ++j) {
      const double dist = std::abs(res.poles[i] - res.zeros[j]);
      if (dist < opt.cancellation_tol) res.cancellations.push_back({i, j, dist});
    }
  return res;
}

}  // namespace detail

/// Weighted least-squares fit of B/A with complex coefficients (a_0 = 1):
/// minimizes 1/N sum_k |G(k) - B(k)/A(k)|^2 / sigma^2(k). Initialized by a
/// linearized solve with Sanathanan-Koerner reweighting, refined by damped
/// Gauss-Newton (Levenberg-Marquardt) on the nonlinear cost.
inline FitResult fit_complex_tf(const FrfEstimate& data, std::size_t n_num, std::size_t n_den,
                                const FitOptions& options = {}) {
  return detail::run_fit(data, n_num, n_den, options, false);
}

/// As fit_complex_tf with real coefficients.
inline FitResult fit_real_tf(const FrfEstimate& data, std::size_t n_num, std::size_t n_den,
                             const FitOptions& options = {}) {
  return detail::run_fit(data, n_num, n_den, options, true);
}

/// Cost K of `model` on `data` with the same weights the fitter uses.
inline double fit_cost(const FrfEstimate& data, const ComplexRationalTF& model, const FitOptions& options = {}) {
  const auto prob = detail::make_problem(data, options.weighting);
  double sum = 0.0;
  for (std::size_t k = 0; k < prob.g.size(); ++k)
    sum += std::norm(prob.inv_sigma[k] * (prob.g[k] - model(prob.zinv[k])));
  return sum / static_cast<double>(prob.n_samples);
}

/// Model response on the lines of `data`.
inline std::vector<cplx> evaluate_on(const ComplexRationalTF& model, const FrfEstimate& data) {
  std::vector<cplx> out;
  for (long k : data.lines) out.push_back(model.at_line(static_cast<double>(k), data.grid.n_samples));
  return out;
}

}  // namespace whinit
