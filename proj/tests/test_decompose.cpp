#include <doctest.h>

#include <cmath>

#include "support.hpp"

using namespace whinit;
using namespace whinit::testing;

namespace {

MultisineSpec benchmark_spec() {
  return design_multisine(MultisineKind::OddPhaseCoupled, FrequencyGrid::make(8192, kStandinSampleRate), std::nullopt,
                          {}, CouplingParams{10, 24, 111});
}

FitResult fit_of(const ComplexRationalTF& tf) {
  FitResult f;
  f.model = tf;
  f.poles = tf.poles();
  f.zeros = tf.zeros();
  f.converged = true;
  return f;
}

/// Exact expected shifted BLA of `m`, fitted without noise.
FitResult exact_minus_fit(const WhModel& m, const MultisineSpec& spec, cplx gain = 1.0) {
  auto pred = predict_shifted_bla_minus(m, realize(spec, 1, 1, Scaling::peak_abs(2.0)).effective_spec());
  for (auto& v : pred.mean) v *= gain;
  pred.var_total.assign(pred.size(), 1.0);
  return fit_complex_tf(pred, m.r.num_order() + m.s.num_order(), m.r.den_order() + m.s.den_order());
}

bool near_set(const std::vector<cplx>& a, const std::vector<cplx>& b, double tol) {
  if (a.size() != b.size()) return false;
  for (const auto& x : a) {
    double best = 1e9;
    for (const auto& y : b) best = std::min(best, std::abs(x - y));
    if (best > tol) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("decompose") {
  TEST_CASE("matching finds the cheapest assignment") {
    const std::vector<std::vector<double>> cost = {{4, 1, 3}, {2, 0, 5}, {3, 2, 2}};
    const auto m = detail::min_cost_matching(cost);
    CHECK(m == std::vector<std::size_t>{1, 0, 2});
  }

  TEST_CASE("expected shift of the benchmark design") {
    CHECK(expected_shift_degrees(benchmark_spec()) == doctest::Approx(21.26953125).epsilon(1e-12));
  }

  TEST_CASE("exact stand-in data is labeled correctly") {
    const auto m = benchmark_standin();
    const auto spec = benchmark_spec();
    const auto fit = exact_minus_fit(m, spec);
    const auto rep = assign_roots(fit, spec);
    CHECK(pole_labels_correct(rep, true_shifted_poles(m, spec)));
    CHECK(rep.count(RootKind::Pole, BlockLabel::InputR) == 3);
    CHECK(rep.count(RootKind::Pole, BlockLabel::OutputS) == 3);
    std::size_t complex_s_zeros = 0;
    for (const auto& e : rep.entries) {
      if (e.kind == RootKind::Pole) CHECK(e.confidence > 0.9);
      if (e.kind == RootKind::Zero && e.label == BlockLabel::OutputS && std::abs(e.value.imag()) > 0.1) ++complex_s_zeros;
    }
    CHECK(complex_s_zeros == 2);
  }

  TEST_CASE("labels do not depend on a complex gain") {
    const auto m = benchmark_standin();
    const auto spec = benchmark_spec();
    const auto a = assign_roots(exact_minus_fit(m, spec), spec);
    const auto b = assign_roots(exact_minus_fit(m, spec, std::polar(3.7, 1.1)), spec);
    for (auto kind : {RootKind::Pole, RootKind::Zero})
      for (auto label : {BlockLabel::InputR, BlockLabel::OutputS, BlockLabel::Unclassified})
        CHECK(a.count(kind, label) == b.count(kind, label));
  }

  TEST_CASE("back-rotation recovers the input block") {
    const auto m = benchmark_standin();
    const auto spec = benchmark_spec();
    const auto fit = exact_minus_fit(m, spec);
    const auto rep = assign_roots(fit, spec);
    BlockOptions opt;
    opt.snap_to_bla = false;
    const auto blocks = build_initial_blocks(rep, fit, nullptr, spec, opt);
    CHECK(near_set(blocks.r_hat.poles(), m.r.poles(), 1e-6));
    CHECK(near_set(blocks.s_hat.poles(), m.s.poles(), 1e-6));
    CHECK(near_set(blocks.s_hat.zeros(), m.s.zeros(), 1e-3));
    for (double c : blocks.r_hat.den()) CHECK(std::isfinite(c));
  }

  TEST_CASE("snapping takes the roots of the real fit") {
    const auto m = benchmark_standin();
    const auto spec = benchmark_spec();
    const auto fit = exact_minus_fit(m, spec);
    const auto rep = assign_roots(fit, spec);
    FitResult bla;
    bla.real_valued = true;
    const auto rs_poles = [&] {
      auto p = m.r.poles();
      for (auto q : m.s.poles()) p.push_back(q);
      return p;
    }();
    auto rs_zeros = m.r.zeros();
    for (auto q : m.s.zeros()) rs_zeros.push_back(q);
    bla.poles = rs_poles;
    bla.zeros = rs_zeros;
    const auto blocks = build_initial_blocks(rep, fit, &bla, spec);
    CHECK(near_set(blocks.r_hat.poles(), m.r.poles(), 1e-9));
    CHECK(near_set(blocks.s_hat.poles(), m.s.poles(), 1e-9));
  }

  TEST_CASE("Hammerstein-like data leaves R trivial") {
    const auto spec = benchmark_spec();
    const auto s = benchmark_standin().s;
    const auto fit = fit_of(ComplexRationalTF(std::vector<cplx>(s.num().begin(), s.num().end()),
                                              std::vector<cplx>(s.den().begin(), s.den().end())));
    const auto rep = assign_roots(fit, spec);
    CHECK(rep.count(RootKind::Pole, BlockLabel::OutputS) == 3);
    BlockOptions opt;
    opt.snap_to_bla = false;
    const auto blocks = build_initial_blocks(rep, fit, nullptr, spec, opt);
    CHECK(blocks.r_hat.num() == std::vector<double>{1.0});
    CHECK(blocks.r_hat.den() == std::vector<double>{1.0});
  }

  TEST_CASE("Wiener-like data leaves S trivial") {
    const auto spec = benchmark_spec();
    const auto r = benchmark_standin().r;
    const double w = 2 * std::numbers::pi * spec.s() / 8192.0;
    std::vector<cplx> poles;
    for (auto p : r.poles()) poles.push_back(p * std::polar(1.0, w));
    const auto fit = fit_of(ComplexRationalTF({1.0}, poly_from_roots(poles)));
    const auto rep = assign_roots(fit, spec);
    CHECK(rep.count(RootKind::Pole, BlockLabel::InputR) == 3);
    BlockOptions opt;
    opt.snap_to_bla = false;
    const auto blocks = build_initial_blocks(rep, fit, nullptr, spec, opt);
    CHECK(blocks.s_hat.den() == std::vector<double>{1.0});
    CHECK(near_set(blocks.r_hat.poles(), r.poles(), 1e-9));
  }

  TEST_CASE("an isolated complex root cannot be symmetrized") {
    const auto spec = benchmark_spec();
    AssignmentReport rep;
    rep.expected_shift = expected_shift_degrees(spec);
    AssignmentEntry e;
    e.kind = RootKind::Pole;
    e.label = BlockLabel::OutputS;
    e.value = {0.5, 0.3};
    rep.entries.push_back(e);
    e.value = {0.6, 0.0};
    rep.entries.push_back(e);
    BlockOptions opt;
    opt.snap_to_bla = false;
    CHECK_THROWS_WITH_AS(build_initial_blocks(rep, FitResult{}, nullptr, spec, opt), doctest::Contains("0.5"),
                         NumericalError);
    e.label = BlockLabel::Unclassified;
    e.value = {0.5, 0.3};
    rep.entries[0] = e;
    const auto blocks = build_initial_blocks(rep, FitResult{}, nullptr, spec, opt);
    CHECK(blocks.dropped.size() == 1);
  }

  TEST_CASE("threshold must be a fraction") {
    const auto spec = benchmark_spec();
    AssignOptions opt;
    opt.threshold_fraction = 1.5;
    CHECK_THROWS_AS(assign_roots(FitResult{}, spec, opt), ConfigError);
  }

  TEST_CASE("nonlinearity from the true blocks is exact") {
    const auto m = benchmark_standin();
    const auto spec = design_multisine(MultisineKind::RandomPhase, FrequencyGrid::make(2048, kStandinSampleRate),
                                       FrequencyBand{19, 13800});
    const auto rec = simulate(m, realize(spec, 2, 1, Scaling::rms(0.5)), 2, 1);
    const auto est = estimate_nonlinearity(m.r, m.s, rec, 3);
    REQUIRE(est.f_hat.coeffs.size() == 4);
    for (std::size_t d = 0; d < 4; ++d) CHECK(std::abs(est.f_hat.coeffs[d] - m.f.gamma(d)) < 1e-8);
    CHECK(est.fit_residual < 1e-8);
  }

  TEST_CASE("first-degree nonlinearity recovers the cascade gain") {
    WhModel m = benchmark_standin();
    m.f.coeffs = {0.0, 2.5};
    const auto spec = design_multisine(MultisineKind::RandomPhase, FrequencyGrid::make(2048, kStandinSampleRate),
                                       FrequencyBand{19, 13800});
    NoiseSpec noise;
    noise.variance = 1e-8;
    const auto rec = simulate(m, realize(spec, 2, 1, Scaling::rms(0.5)), 2, 1, noise, 3);
    const auto est = estimate_nonlinearity(m.r, m.s, rec, 1);
    CHECK(est.f_hat.coeffs[1] == doctest::Approx(2.5).epsilon(1e-3));
    CHECK(est.fit_residual < 1e-2);
  }
}
