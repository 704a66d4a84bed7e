#include <doctest.h>

#include <cmath>

#include "support.hpp"

using namespace whinit;
using whinit::testing::rel_diff;

namespace {

MultisineSpec coupled_spec(std::size_t n = 4096) {
  return design_multisine(MultisineKind::OddPhaseCoupled, FrequencyGrid::make(n, kStandinSampleRate), std::nullopt, {},
                          CouplingParams{10, 12, std::nullopt});
}

}  // namespace

TEST_SUITE("frf") {
  TEST_CASE("linear noiseless BLA is exact") {
    WhModel m = benchmark_standin();
    m.f.coeffs = {0.0, 2.0};
    const auto spec = design_multisine(MultisineKind::RandomPhase, FrequencyGrid::make(1024, kStandinSampleRate),
                                       FrequencyBand{50, 20000});
    EnsembleOptions o;
    o.n_realizations = 3;
    const auto bla = estimate_bla(simulate_ensemble(m, spec, o), spec);
    for (std::size_t j = 0; j < bla.size(); ++j) {
      const double k = static_cast<double>(bla.lines[j]);
      CHECK(rel_diff(bla.mean[j], 2.0 * m.r.at_line(k, 1024) * m.s.at_line(k, 1024)) < 1e-9);
      CHECK(bla.var_total[j] < 1e-20);
    }
  }

  TEST_CASE("cubic BLA is flat relative to R S") {
    WhModel m = benchmark_standin();
    m.f.coeffs = {0, 0, 0, 1};
    const std::size_t n = 1024;
    const auto spec = design_multisine(MultisineKind::RandomPhase, FrequencyGrid::make(n, kStandinSampleRate),
                                       FrequencyBand{50, 13000});
    EnsembleOptions o;
    o.n_realizations = 100;
    o.scaling = Scaling::rms(1.0);
    o.seed = 4;
    const auto bla = estimate_bla(simulate_ensemble(m, spec, o), spec);
    const auto x = intermediate_spectrum(m.r, realize(spec, 0, 1, o.scaling).effective_spec());
    const double expect = bla_constant(pair_constants(x, 0).c0, 3);
    cplx mean = 0.0;
    for (std::size_t j = 0; j < bla.size(); ++j) {
      const double k = static_cast<double>(bla.lines[j]);
      mean += bla.mean[j] / (m.r.at_line(k, n) * m.s.at_line(k, n));
    }
    mean /= static_cast<double>(bla.size());
    CHECK(std::abs(mean - expect) / expect < 0.05);
  }

  TEST_CASE("variance estimates with seven realizations and two periods") {
    const auto m = benchmark_standin();
    const auto spec = design_multisine(MultisineKind::RandomPhase, FrequencyGrid::make(2048, kStandinSampleRate),
                                       FrequencyBand{19, 13800});
    EnsembleOptions o;
    o.n_realizations = 7;
    o.scaling = Scaling::rms(0.38);
    o.noise.variance = 1e-8;
    const auto bla = estimate_bla(simulate_ensemble(m, spec, o), spec);
    double vn = 0.0, vt = 0.0;
    for (std::size_t j = 0; j < bla.size(); ++j) {
      CHECK(bla.var_noise[j] > 0.0);
      vn += bla.var_noise[j];
      vt += bla.var_total[j];
    }
    CHECK(vt > vn);
  }

  TEST_CASE("linear system has no shifted BLA") {
    WhModel m = benchmark_standin();
    m.f.coeffs = {0, 1};
    const auto spec = coupled_spec();
    EnsembleOptions o;
    o.n_realizations = 3;
    const auto sb = estimate_shifted_bla(simulate_ensemble(m, spec, o), spec, true);
    for (const auto& g : sb.minus.mean) CHECK(std::abs(g) < 1e-12);
  }

  TEST_CASE("compensation removes a common delay") {
    const auto m = benchmark_standin();
    const auto spec = coupled_spec();
    EnsembleOptions o;
    o.n_realizations = 4;
    o.scaling = Scaling::peak_abs(2.0);
    const auto ref = estimate_shifted_bla(simulate_ensemble(m, spec, o), spec, true);
    o.delay = 3.5;
    const auto del = estimate_shifted_bla(simulate_ensemble(m, spec, o), spec, true);
    double scale = 0.0, worst = 0.0;
    for (std::size_t j = 0; j < ref.minus.size(); ++j) {
      scale = std::max(scale, std::abs(ref.minus.mean[j]));
      worst = std::max(worst, std::abs(del.minus.mean[j] - ref.minus.mean[j]));
    }
    CHECK(worst < 1e-10 * scale);
    CHECK(std::abs(del.time_origin.delay_samples() - ref.time_origin.delay_samples() - 3.5) < 1e-6);
  }

  TEST_CASE("plus and minus estimates are conjugate mirrors") {
    const auto m = benchmark_standin();
    const auto spec = coupled_spec();
    EnsembleOptions o;
    o.n_realizations = 2;
    const auto sb = estimate_shifted_bla(simulate_ensemble(m, spec, o), spec, true);
    REQUIRE(sb.plus.size() == sb.minus.size());
    for (std::size_t j = 0; j < sb.plus.size(); ++j) {
      CHECK(sb.plus.lines[j] == -sb.minus.lines[j]);
      CHECK(std::abs(sb.plus.mean[j] - std::conj(sb.minus.mean[j])) < 1e-15);
    }
  }

  TEST_CASE("cubic predictions on the two collection lines") {
    const auto m = benchmark_standin();
    const auto spec = coupled_spec();
    const std::size_t n = spec.grid.n_samples;
    const long s = spec.s();
    const auto pc = pair_constants(intermediate_spectrum(m.r, spec), s);
    const auto hi = predict_shifted_bla(m, spec, 3, 2);
    const auto lo = predict_shifted_bla(m, spec, 3, -1);
    const auto ms = spec.couples();
    for (std::size_t j = 0; j < ms.size(); ++j) {
      const double k = static_cast<double>(ms[j]);
      const cplx want_hi = 3.0 * m.s.at_line(k + 2 * s, n) * m.r.at_line(k + s, n) * spec.couple_ratio(ms[j]) * pc.c_plus_s;
      const cplx want_lo = 3.0 * m.s.at_line(k - s, n) * m.r.at_line(k, n) * pc.c_minus_s;
      CHECK(rel_diff(hi[j], want_hi) < 1e-12);
      CHECK(rel_diff(lo[j], want_lo) < 1e-12);
    }
  }

  TEST_CASE("quintic prediction agrees with Monte Carlo") {
    WhModel m = benchmark_standin();
    m.f.coeffs = {0, 0, 0, 0, 0, 1};
    const auto spec = coupled_spec();
    EnsembleOptions o;
    o.n_realizations = 300;
    o.scaling = Scaling::rms(0.5);
    o.seed = 21;
    const auto meas = estimate_shifted_bla(simulate_ensemble(m, spec, o), spec, true).minus;
    const auto pred = predict_shifted_bla_minus(m, realize(spec, 0, 1, o.scaling).effective_spec());
    std::size_t ok = 0;
    for (std::size_t j = 0; j < meas.size(); ++j)
      ok += std::abs(meas.mean[j] - pred.mean[j]) <= 3.0 * std::sqrt(meas.var_total[j]);
    CHECK(static_cast<double>(ok) >= 0.95 * static_cast<double>(meas.size()));
  }

  TEST_CASE("dominance on a flat spectrum") {
    const auto spec = design_multisine(MultisineKind::FullPhaseCoupled, FrequencyGrid::make(256), std::nullopt, {},
                                       CouplingParams{4, 1, 2});
    const auto rep = dominance_report(intermediate_spectrum(RationalTF{}, spec), spec);
    CHECK(rep.c0 == doctest::Approx(12.0 / 256).epsilon(1e-12));
    CHECK(std::abs(rep.c_plus_s) == doctest::Approx(6.0 / 256).epsilon(1e-12));
    CHECK(std::abs(rep.c_plus_s - std::conj(rep.c_minus_s)) < 1e-15);
    CHECK(rep.ratio_bound_ok);
    CHECK(std::isinf(rep.alpha.at(3)));
    CHECK(std::isfinite(rep.alpha.at(5)));
  }

  TEST_CASE("pairing multiplicity is the double factorial") {
    CHECK(pairing_multiplicity(1) == 1);
    CHECK(pairing_multiplicity(3) == 3);
    CHECK(pairing_multiplicity(5) == 15);
    CHECK(pairing_multiplicity(7) == 105);
  }
}
