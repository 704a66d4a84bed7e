#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "support.hpp"

using namespace whinit;

namespace {

MultisineSpec odd_benchmark() {
  return design_multisine(MultisineKind::OddPhaseCoupled, FrequencyGrid::make(8192, kStandinSampleRate), std::nullopt,
                          {}, CouplingParams{10, 24, 111});
}

}  // namespace

TEST_SUITE("signals") {
  TEST_CASE("odd-coupled benchmark design has 224 lines") {
    const auto spec = odd_benchmark();
    CHECK(spec.s() == 242);
    CHECK(spec.excited_lines.size() == 224);
    CHECK(spec.excited_lines.front() == 5);
    CHECK(spec.excited_lines.back() == 1357);
    CHECK(spec.grid.line_frequency(5) == doctest::Approx(47.68).epsilon(1e-3));
    CHECK(spec.grid.line_frequency(1357) == doctest::Approx(12941).epsilon(1e-4));
  }

  TEST_CASE("small full-coupled design avoids the collection lines") {
    const auto spec = design_multisine(MultisineKind::FullPhaseCoupled, FrequencyGrid::make(64), std::nullopt, {},
                                       CouplingParams{4, 1, 2});
    CHECK(spec.s() == 5);
    CHECK(spec.excited_lines == std::vector<long>{2, 6, 7, 10, 11, 15});
    for (long m : spec.couples()) {
      CHECK_FALSE(spec.is_excited(m - spec.s()));
      CHECK_FALSE(spec.is_excited(m + 2 * spec.s()));
    }
  }

  TEST_CASE("random-phase design over an explicit line set") {
    std::vector<long> lines;
    for (long k = 2; k <= 1447; k += 2) lines.push_back(k);
    lines.resize(682);
    const auto spec = design_multisine(MultisineKind::RandomPhase, FrequencyGrid::make(8192), BandSpec{lines});
    CHECK(spec.excited_lines.size() == 682);
    CHECK_FALSE(spec.coupling.has_value());
  }

  TEST_CASE("invalid designs are rejected") {
    const auto grid = FrequencyGrid::make(64);
    CHECK_THROWS_AS(design_multisine(MultisineKind::OddPhaseCoupled, grid, std::nullopt, {}, CouplingParams{3, 1, 1}),
                    ConfigError);
    CHECK_THROWS_AS(design_multisine(MultisineKind::RandomPhase, grid, std::nullopt, {}, CouplingParams{4, 1, 1}),
                    ConfigError);
    CHECK_THROWS_AS(design_multisine(MultisineKind::RandomPhase, grid, BandSpec{std::vector<long>{40}}), ConfigError);
  }

  TEST_CASE("coupled lines share their phase") {
    const auto spec = odd_benchmark();
    const auto sig = realize(spec, 5, 1);
    for (long m : spec.couples()) CHECK(sig.phases.at(m) == sig.phases.at(m + spec.s()));
  }

  TEST_CASE("single line synthesizes a cosine") {
    const auto grid = FrequencyGrid::make(64);
    AmplitudeProfile prof;
    prof.per_line[3] = 0.7;
    const auto spec = design_multisine(MultisineKind::RandomPhase, grid, BandSpec{std::vector<long>{3}}, prof);
    const auto sig = realize(spec, 1, 1);
    const double ph = sig.phases.at(3);
    for (std::size_t t = 0; t < 64; ++t)
      CHECK(sig.time_series[t] ==
            doctest::Approx(2 * 0.7 * std::cos(2 * std::numbers::pi * 3.0 * t / 64.0 + ph)).epsilon(1e-12));
  }

  TEST_CASE("peak scaling hits the target") {
    const auto sig = realize(odd_benchmark(), 9, 2, Scaling::peak_abs(2.0));
    double peak = 0.0;
    for (double v : sig.time_series) peak = std::max(peak, std::abs(v));
    CHECK(std::abs(peak - 2.0) < 1e-12);
    CHECK(sig.time_series.size() == 2 * 8192u);
  }

  TEST_CASE("realizations are deterministic in the seed") {
    const auto spec = odd_benchmark();
    CHECK(realize(spec, 3, 1).time_series == realize(spec, 3, 1).time_series);
    CHECK(realize(spec, 3, 1).time_series != realize(spec, 4, 1).time_series);
  }

  TEST_CASE("time-origin shifts") {
    const std::size_t n = 64;
    std::vector<double> x(n);
    for (std::size_t t = 0; t < n; ++t) x[t] = std::cos(2 * std::numbers::pi * t / n);
    CHECK(shift_time_origin(x, 0.0) == x);
    const auto full = shift_time_origin(x, 64.0);
    const auto half = shift_time_origin(x, 3.5);
    for (std::size_t t = 0; t < n; ++t) {
      CHECK(std::abs(full[t] - x[t]) < 1e-10);
      CHECK(std::abs(half[t] - std::cos(2 * std::numbers::pi * (t - 3.5) / n)) < 1e-10);
    }
  }
}
