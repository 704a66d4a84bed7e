// whinit: phase-coupled multisine experiments and Wiener-Hammerstein
// initialization from the shifted BLA.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "whinit/pipeline.hpp"

namespace fs = std::filesystem;
using namespace whinit;

namespace {

struct Common {
  std::string config;
  std::string dir;
  unsigned threads = 0;
};

ExperimentConfig load(const Common& c, fs::path& dir) {
  ExperimentConfig cfg;
  std::optional<fs::path> resolved_dir;
  if (!c.dir.empty()) resolved_dir = c.dir;
  else if (const char* env = std::getenv("WHINIT_OUTPUT_DIR"); env && *env) resolved_dir = env;
  if (!c.config.empty()) {
    cfg = load_config(c.config);
  } else {
    const fs::path guess = resolved_dir.value_or(cfg.output.directory) / artifact::kConfig;
    if (fs::exists(guess)) cfg = load_config(guess);
  }
  if (c.threads) cfg.threads = c.threads;
  dir = resolved_dir.value_or(cfg.output.directory);
  cfg.output.directory = dir.string();
  return cfg;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "experiment configuration (JSON)");
  app->add_option("-o,--dir", c.dir, "output directory (overrides WHINIT_OUTPUT_DIR and the config)");
  app->add_option("--threads", c.threads, "worker threads for simulation");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shifted-BLA initialization of Wiener-Hammerstein models"};
  app.require_subcommand(1);
  Common common;

  auto* design = app.add_subcommand("design", "design the multisines and write the spec documents");
  add_common(design, common);
  std::optional<std::string> kind;
  std::optional<std::size_t> n;
  std::optional<int> d, cshift, imax;
  std::optional<double> fsr, fmin, fmax;
  design->add_option("--kind", kind, "random | full-coupled | odd-coupled");
  design->add_option("--n", n, "samples per period");
  design->add_option("--d", d, "couple spacing d");
  design->add_option("--cshift", cshift, "c_shift");
  design->add_option("--imax", imax, "last couple index");
  design->add_option("--fs", fsr, "sample rate [Hz]");
  design->add_option("--fmin", fmin, "lower band edge [Hz]");
  design->add_option("--fmax", fmax, "upper band edge [Hz]");

  auto* simulate_cmd = app.add_subcommand("simulate", "simulate the configured system for both experiments");
  add_common(simulate_cmd, common);

  auto* ingest = app.add_subcommand("ingest", "import measured (t, u, y) records");
  add_common(ingest, common);
  std::string ingest_spec, ingest_kind = "sbla";
  std::vector<std::string> ingest_files;
  ingest->add_option("--spec", ingest_spec, "spec document the records were measured with")->required();
  ingest->add_option("--kind", ingest_kind, "sbla | bla")->check(CLI::IsMember({"sbla", "bla"}));
  ingest->add_option("records", ingest_files, "CSV files with columns t,u,y")->required();

  auto* bla = app.add_subcommand("bla", "nonparametric BLA from the random-phase records");
  add_common(bla, common);

  auto* sbla = app.add_subcommand("sbla", "nonparametric shifted BLA from the phase-coupled records");
  add_common(sbla, common);
  bool no_comp = false;
  sbla->add_flag("--no-time-compensation", no_comp, "skip the time-origin compensation");

  auto* fit = app.add_subcommand("fit", "parametric fits of the BLA (real) and the shifted BLA (complex)");
  add_common(fit, common);

  auto* assign = app.add_subcommand("assign", "split the shifted-BLA roots into input and output dynamics");
  add_common(assign, common);
  std::optional<double> threshold;
  assign->add_option("--threshold", threshold, "decision threshold as a fraction of the expected shift");

  auto* init = app.add_subcommand("init-wh", "build the initial Wiener-Hammerstein model");
  add_common(init, common);

  auto* run = app.add_subcommand("run", "all stages");
  add_common(run, common);
  run->add_flag("--no-time-compensation", no_comp, "skip the time-origin compensation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::Config);
  }

  std::string message;
  const int rc = guarded(
      [&] {
        fs::path dir;
        ExperimentConfig cfg = load(common, dir);
        if (no_comp) cfg.estimation.compensate_time_origin = false;
        if (threshold) cfg.estimation.threshold_fraction = *threshold;
        if (*design) {
          auto& sc = kind && *kind == "random" ? cfg.bla : cfg.sbla;
          if (kind) sc.kind = *kind;
          if (n) sc.n_samples = *n;
          if (d) sc.d = *d;
          if (cshift) sc.c_shift = *cshift;
          if (fsr) sc.sample_rate = *fsr;
          if (imax || fmin || fmax) {
            sc.i_max = imax;
            sc.f_min = fmin;
            sc.f_max = fmax;
          }
          cfg = parse_config(config_json(cfg));
        }
        Workspace ws(cfg, dir);
        if (*design) {
          stage_design(ws);
          std::cout << artifact::kSblaSpec << ": " << ws.sbla_spec->excited_lines.size() << " excited lines, s = "
                    << ws.sbla_spec->s() << ", expected shift " << expected_shift_degrees(*ws.sbla_spec) << " deg\n";
        } else if (*simulate_cmd) {
          stage_simulate(ws);
        } else if (*ingest) {
          const bool coupled = ingest_kind == "sbla";
          auto spec = io::spec_from_json(io::read_json(ingest_spec));
          detail::require(coupled == is_phase_coupled(spec.kind), "ingest: --kind does not match the spec kind");
          io::write_json(ws.path(coupled ? artifact::kSblaSpec : artifact::kBlaSpec), io::to_json(spec));
          (coupled ? ws.sbla_spec : ws.bla_spec) = spec;
          ingest_records(ws, ingest_files, coupled);
          ws.write_config();
        } else if (*bla) {
          stage_bla(ws);
        } else if (*sbla) {
          stage_sbla(ws);
        } else if (*fit) {
          stage_fit(ws);
        } else if (*assign) {
          stage_assign(ws);
          for (const auto& e : ws.assignment->entries)
            std::cout << to_string(e.kind) << " " << e.value.real() << (e.value.imag() < 0 ? "" : "+") << e.value.imag()
                      << "j  shift " << e.angular_shift << " deg  " << to_string(e.label) << "  confidence "
                      << e.confidence << "\n";
        } else if (*init) {
          stage_init_wh(ws);
          std::cout << "fit residual " << ws.initial->fit_residual << "\n";
        } else if (*run) {
          run_pipeline(ws);
          std::cout << io::read_file(ws.path(artifact::kSummary));
        }
      },
      message);
  if (rc != 0) std::cerr << "whinit: " << message << "\n";
  return rc;
}
