#include <doctest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace whinit;
using namespace whinit::testing;

namespace {

template <typename TF>
FrfEstimate sample(const TF& tf, const FrequencyGrid& grid, long lo, long hi, long step = 1) {
  FrfEstimate e;
  e.grid = grid;
  for (long k = lo; k <= hi; k += step) {
    if (k == 0) continue;
    e.lines.push_back(k);
    e.mean.push_back(tf.at_line(static_cast<double>(k), grid.n_samples));
    e.var_noise.push_back(1.0);
    e.var_total.push_back(1.0);
  }
  return e;
}

ComplexRationalTF known_complex() {
  const std::vector<cplx> poles = {std::polar(0.7, 0.4), std::polar(0.5, -1.2), {-0.3, 0.2}};
  return ComplexRationalTF({{1.0, 0.5}, {-0.4, 0.1}, {0.2, -0.3}}, poly_from_roots(poles));
}

}  // namespace

TEST_SUITE("rational_fit") {
  TEST_CASE("exact complex recovery") {
    const auto truth = known_complex();
    const auto grid = FrequencyGrid::make(512);
    const auto fit = fit_complex_tf(sample(truth, grid, -200, 200, 2), 2, 3);
    CHECK(fit.cost < 1e-16);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(fit.model.num()[i] - truth.num()[i]) < 1e-8);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(fit.model.den()[i] - truth.den()[i]) < 1e-8);
    CHECK_FALSE(fit.real_valued);
  }

  TEST_CASE("weighted cost follows chi-square statistics") {
    const auto truth = known_complex();
    const auto grid = FrequencyGrid::make(512);
    auto data = sample(truth, grid, -250, 250);
    std::mt19937_64 rng(31);
    std::normal_distribution<double> g;
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double var = 1e-4 * (1.0 + 0.5 * std::sin(0.01 * j));
      data.var_total[j] = data.var_noise[j] = var;
      data.mean[j] += std::sqrt(var / 2.0) * cplx(g(rng), g(rng));
    }
    const auto fit = fit_complex_tf(data, 2, 3);
    const double expect = static_cast<double>(data.size()) / static_cast<double>(grid.n_samples);
    CHECK(fit.cost > 0.5 * expect);
    CHECK(fit.cost < 1.5 * expect);
  }

  TEST_CASE("exact real recovery of a fourth-order system") {
    std::mt19937_64 rng(32);
    const auto truth = random_stable_tf(rng, 4, 4, 0.9);
    const auto grid = FrequencyGrid::make(1024);
    const auto fit = fit_real_tf(sample(truth, grid, 1, 400), 4, 4);
    CHECK(fit.real_valued);
    const auto rm = fit.real_model();
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(std::abs(rm.num()[i] - truth.num()[i]) < 1e-8);
      CHECK(std::abs(rm.den()[i] - truth.den()[i]) < 1e-8);
    }
  }

  TEST_CASE("conjugated data gives conjugated roots") {
    const auto truth = known_complex();
    const auto grid = FrequencyGrid::make(512);
    auto data = sample(truth, grid, -200, 200, 2);
    const auto a = fit_complex_tf(data, 2, 3);
    for (std::size_t j = 0; j < data.size(); ++j) {
      data.lines[j] = -data.lines[j];
      data.mean[j] = std::conj(data.mean[j]);
    }
    const auto b = fit_complex_tf(data, 2, 3);
    for (const auto& p : a.poles) {
      double best = 1e9;
      for (const auto& q : b.poles) best = std::min(best, std::abs(q - std::conj(p)));
      CHECK(best < 1e-8);
    }
  }

  TEST_CASE("overmodelling is flagged as pole-zero cancellation") {
    std::mt19937_64 rng(33);
    const auto truth = random_stable_tf(rng, 2, 2, 0.8);
    const auto grid = FrequencyGrid::make(1024);
    auto data = sample(truth, grid, 1, 500);
    std::normal_distribution<double> g;
    for (std::size_t j = 0; j < data.size(); ++j) {
      data.var_total[j] = data.var_noise[j] = 1e-12;
      data.mean[j] += 1e-6 * cplx(g(rng), g(rng)) * std::sqrt(0.5);
    }
    const auto fit = fit_real_tf(data, 4, 4);
    CHECK_FALSE(fit.cancellations.empty());
  }

  TEST_CASE("too few lines or degenerate data are rejected") {
    const auto grid = FrequencyGrid::make(64);
    CHECK_THROWS_AS(fit_complex_tf(sample(known_complex(), grid, 1, 5), 2, 3), ConfigError);
    FrfEstimate flat = sample(known_complex(), grid, 1, 20);
    for (auto& v : flat.mean) v = 0.0;
    CHECK_THROWS(fit_complex_tf(flat, 2, 3));
  }

  TEST_CASE("shifted-BLA fit of the stand-in tracks the data") {
    const auto m = benchmark_standin();
    const auto spec = design_multisine(MultisineKind::OddPhaseCoupled, FrequencyGrid::make(4096, kStandinSampleRate),
                                       std::nullopt, {}, CouplingParams{10, 12, std::nullopt});
    EnsembleOptions o;
    o.n_realizations = 100;
    o.scaling = Scaling::peak_abs(2.0);
    o.seed = 5;
    const auto data = estimate_shifted_bla(simulate_ensemble(m, spec, o), spec, true).minus;
    const auto fit = fit_complex_tf(data, 6, 6);
    const auto model = evaluate_on(fit.model, data);
    std::size_t ok = 0;
    for (std::size_t j = 0; j < data.size(); ++j) ok += std::abs(model[j] - data.mean[j]) < 3 * std::sqrt(data.var_total[j]);
    CHECK(static_cast<double>(ok) >= 0.95 * static_cast<double>(data.size()));
  }
}
