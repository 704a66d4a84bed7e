#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "support.hpp"

using namespace whinit;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("whinit_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("number formatting round trips") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02e23}) CHECK(io::parse_double(io::fmt(v), "v") == v);
    CHECK(io::fmt(std::numeric_limits<double>::infinity()) == "inf");
    CHECK(std::isinf(io::get_number(io::number(std::numeric_limits<double>::infinity()), "v")));
    CHECK_THROWS_AS(io::parse_double("abc", "v"), ConfigError);
  }

  TEST_CASE("spec documents round trip") {
    const auto spec = design_multisine(MultisineKind::OddPhaseCoupled, FrequencyGrid::make(8192, kStandinSampleRate),
                                       std::nullopt, {}, CouplingParams{10, 24, 111});
    const auto back = io::spec_from_json(io::json::parse(io::to_json(spec).dump()));
    CHECK(back.kind == spec.kind);
    CHECK(back.grid == spec.grid);
    CHECK(back.excited_lines == spec.excited_lines);
    CHECK(back.amplitudes == spec.amplitudes);
    CHECK(back.coupling == spec.coupling);
  }

  TEST_CASE("malformed spec documents are rejected") {
    auto j = io::to_json(design_multisine(MultisineKind::FullPhaseCoupled, FrequencyGrid::make(64), std::nullopt, {},
                                          CouplingParams{4, 1, 2}));
    auto bad_kind = j;
    bad_kind["kind"] = "square";
    CHECK_THROWS_AS(io::spec_from_json(bad_kind), ConfigError);
    auto missing = j;
    missing.erase("excited_lines");
    CHECK_THROWS_AS(io::spec_from_json(missing), ConfigError);
    auto short_amp = j;
    short_amp["amplitudes"].erase(0);
    CHECK_THROWS_AS(io::spec_from_json(short_amp), ConfigError);
  }

  TEST_CASE("fit results and assignments round trip") {
    const std::vector<cplx> poles = {std::polar(0.9, 0.3), std::polar(0.8, -0.2)};
    const auto spec = design_multisine(MultisineKind::OddPhaseCoupled, FrequencyGrid::make(8192, kStandinSampleRate),
                                       std::nullopt, {}, CouplingParams{10, 24, 111});
    auto data = predict_shifted_bla_minus(benchmark_standin(), spec);
    data.var_total.assign(data.size(), 1.0);
    const auto fit = fit_complex_tf(data, 6, 6);
    const auto fback = io::fit_from_json(io::json::parse(io::to_json(fit).dump()));
    CHECK(fback.model.num() == fit.model.num());
    CHECK(fback.model.den() == fit.model.den());
    CHECK(fback.poles == fit.poles);
    CHECK(fback.cost == fit.cost);

    const auto rep = assign_roots(fit, spec);
    const auto rback = io::assignment_from_json(io::json::parse(io::to_json(rep).dump()));
    REQUIRE(rback.entries.size() == rep.entries.size());
    for (std::size_t i = 0; i < rep.entries.size(); ++i) {
      CHECK(rback.entries[i].value == rep.entries[i].value);
      CHECK(rback.entries[i].label == rep.entries[i].label);
      CHECK(rback.entries[i].confidence == rep.entries[i].confidence);
    }
  }

  TEST_CASE("record CSV round trip") {
    const auto dir = tmpdir("record");
    const auto spec = design_multisine(MultisineKind::RandomPhase, FrequencyGrid::make(256), FrequencyBand{0.01, 0.2});
    WhModel m;
    m.f.coeffs = {0, 1, 0.3};
    const auto rec = simulate(m, realize(spec, 1, 1), 2, 1);
    io::write_file(dir / "r.csv", io::record_csv(rec, 1.0, true));
    const auto back = io::record_from_csv(dir / "r.csv", 256);
    CHECK(back.n_periods == 2);
    CHECK(back.u == rec.u);
    CHECK(back.y == rec.y);
    CHECK_THROWS_AS(io::record_from_csv(dir / "r.csv", 300), ConfigError);
    CHECK_THROWS_AS(io::record_from_csv(dir / "missing.csv", 256), ConfigError);
  }

  TEST_CASE("FRF CSV round trip") {
    const auto dir = tmpdir("frf");
    FrfEstimate e;
    e.grid = FrequencyGrid::make(128, 10.0);
    e.lines = {3, -7, 12};
    e.mean = {{1.0, -0.25}, {1e-17, 3.0}, {-2.0, 0.0}};
    e.var_noise = {0.1, 0.2, 0.3};
    e.var_total = {0.4, 0.5, 0.6};
    io::write_file(dir / "g.csv", io::frf_csv(e));
    const auto back = io::frf_from_csv(dir / "g.csv", e.grid);
    CHECK(back.lines == e.lines);
    CHECK(back.mean == e.mean);
    CHECK(back.var_noise == e.var_noise);
    CHECK(back.var_total == e.var_total);
  }
}
