#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "decompose.hpp"
#include "error.hpp"
#include "frf.hpp"
#include "io.hpp"
#include "rational_fit.hpp"
#include "signals.hpp"
#include "wh_sim.hpp"

namespace whinit {

struct SignalConfig {
  std::string kind = "odd-coupled";
  std::size_t n_samples = 8192;
  double sample_rate = kStandinSampleRate;
  int d = 10;
  int c_shift = 24;
  std::optional<int> i_max;
  std::optional<double> f_min;
  std::optional<double> f_max;
  long line_step = 1;  // random-phase designs: excite every line_step-th line of the band
  double amplitude = 1.0;
  std::size_t n_realizations = 100;
  std::size_t n_periods = 2;
  std::size_t discard_periods = 1;
  Scaling scaling = Scaling::peak_abs(2.0);
  std::uint64_t seed = 1;
};

struct SystemConfig {
  enum class Type { Standin, Wh, Ingest } type = Type::Standin;
  WhModel model = benchmark_standin();
  std::vector<std::string> sbla_records;
  std::vector<std::string> bla_records;
};

struct NoiseConfig {
  double variance = 0.0;
  std::optional<double> snr_db;
  std::optional<RationalTF> shaping;
};

struct EstimationConfig {
  std::size_t bla_num = 6, bla_den = 6;
  std::size_t sbla_num = 6, sbla_den = 6;
  double threshold_fraction = 0.5;
  bool compensate_time_origin = true;
  std::size_t d_max = 3;
  bool snap_to_bla = true;
  bool multistart = true;
  FitWeighting weighting = FitWeighting::Total;
};

struct ValidationConfig {
  bool enabled = true;
  std::uint64_t seed = 777;
  std::size_t n_periods = 1;
};

struct OutputConfig {
  std::string directory = "out";
  std::string records = "all";  // all | first | none
  std::string signals = "first";
  bool internals = false;
};

struct ExperimentConfig {
  SignalConfig sbla;
  SignalConfig bla;
  SystemConfig system;
  NoiseConfig noise;
  EstimationConfig estimation;
  ValidationConfig validation;
  OutputConfig output;
  unsigned threads = 1;

  ExperimentConfig() {
    sbla.i_max = 111;
    bla.kind = "random";
    bla.f_min = 19.0;
    bla.f_max = 13800.0;
    bla.line_step = 2;
    bla.n_realizations = 7;
    bla.scaling = Scaling::rms(0.38);
    bla.seed = 2;
  }
};

namespace detail {

/// Field access with dotted-path error messages and unknown-key detection.
class Fields {
 public:
  Fields(const io::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }
  ~Fields() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(path_ + "." + it.key() + ": unknown field");
  }
  Fields(const Fields&) = delete;
  Fields& operator=(const Fields&) = delete;

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_[key].is_null();
  }
  const io::json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string where(const std::string& key) const { return path_ + "." + key; }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_[key].get<T>();
    } catch (const io::json::exception&) {
      throw ConfigError(where(key) + ": wrong type");
    }
  }
  template <typename T>
  void get(const std::string& key, std::optional<T>& out) {
    if (!has(key)) return;
    T v{};
    get(key, v);
    out = v;
  }
  void positive(const std::string& key, double& out) {
    get(key, out);
    if (!(out > 0.0)) throw ConfigError(where(key) + ": must be positive");
  }

 private:
  const io::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Scaling parse_scaling(const io::json& j, const std::string& path) {
  Fields f(j, path);
  std::string type = "none";
  double value = 1.0;
  f.get("type", type);
  f.get("value", value);
  if (type == "none") return Scaling::none();
  if (!(value > 0.0)) throw ConfigError(path + ".value: must be positive");
  if (type == "rms") return Scaling::rms(value);
  if (type == "peak") return Scaling::peak_abs(value);
  throw ConfigError(path + ".type: expected none | rms | peak");
}

inline io::json scaling_json(const Scaling& s) {
  switch (s.kind) {
    case Scaling::Kind::Rms: return {{"type", "rms"}, {"value", s.target}};
    case Scaling::Kind::PeakAbs: return {{"type", "peak"}, {"value", s.target}};
    default: return {{"type", "none"}, {"value", 1.0}};
  }
}

inline void parse_signal(const io::json& j, const std::string& path, SignalConfig& c) {
  Fields f(j, path);
  f.get("kind", c.kind);
  (void)io::kind_from(c.kind);
  f.get("n_samples", c.n_samples);
  f.positive("sample_rate", c.sample_rate);
  f.get("d", c.d);
  f.get("c_shift", c.c_shift);
  if (f.has("i_max")) f.get("i_max", c.i_max);
  else if (j.contains("i_max")) c.i_max.reset();
  if (f.has("f_min")) f.get("f_min", c.f_min);
  if (f.has("f_max")) f.get("f_max", c.f_max);
  if (j.contains("f_min") && j["f_min"].is_null()) c.f_min.reset();
  if (j.contains("f_max") && j["f_max"].is_null()) c.f_max.reset();
  f.get("line_step", c.line_step);
  f.positive("amplitude", c.amplitude);
  f.get("n_realizations", c.n_realizations);
  f.get("n_periods", c.n_periods);
  f.get("discard_periods", c.discard_periods);
  if (f.has("scaling")) c.scaling = parse_scaling(f.raw("scaling"), f.where("scaling"));
  f.get("seed", c.seed);
  if (c.n_samples == 0 || c.n_samples % 2) throw ConfigError(f.where("n_samples") + ": must be positive and even");
  if (c.n_realizations == 0) throw ConfigError(f.where("n_realizations") + ": must be >= 1");
  if (c.n_periods == 0) throw ConfigError(f.where("n_periods") + ": must be >= 1");
  if (c.line_step < 1) throw ConfigError(f.where("line_step") + ": must be >= 1");
  if (c.f_min && c.f_max && !(*c.f_min < *c.f_max)) throw ConfigError(path + ": f_min must be below f_max");
}

inline io::json signal_json(const SignalConfig& c) {
  io::json j;
  j["kind"] = c.kind;
  j["n_samples"] = c.n_samples;
  j["sample_rate"] = c.sample_rate;
  if (c.kind != "random") {
    j["d"] = c.d;
    j["c_shift"] = c.c_shift;
    j["i_max"] = c.i_max ? io::json(*c.i_max) : io::json(nullptr);
  } else {
    j["line_step"] = c.line_step;
  }
  j["f_min"] = c.f_min ? io::json(*c.f_min) : io::json(nullptr);
  j["f_max"] = c.f_max ? io::json(*c.f_max) : io::json(nullptr);
  j["amplitude"] = c.amplitude;
  j["n_realizations"] = c.n_realizations;
  j["n_periods"] = c.n_periods;
  j["discard_periods"] = c.discard_periods;
  j["scaling"] = scaling_json(c.scaling);
  j["seed"] = c.seed;
  return j;
}

inline void parse_orders(Fields& f, const std::string& key, std::size_t& num, std::size_t& den) {
  if (!f.has(key)) return;
  const auto& a = f.raw(key);
  if (!a.is_array() || a.size() != 2 || !a[0].is_number_unsigned() || !a[1].is_number_unsigned())
    throw ConfigError(f.where(key) + ": expected [numerator order, denominator order]");
  num = a[0].get<std::size_t>();
  den = a[1].get<std::size_t>();
}

}  // namespace detail

inline ExperimentConfig parse_config(const io::json& j) {
  using detail::Fields;
  ExperimentConfig c;
  Fields top(j, "config");
  if (top.has("signal")) {
    Fields s(top.raw("signal"), "config.signal");
    if (s.has("sbla")) detail::parse_signal(s.raw("sbla"), "config.signal.sbla", c.sbla);
    if (s.has("bla")) detail::parse_signal(s.raw("bla"), "config.signal.bla", c.bla);
  }
  if (!is_phase_coupled(io::kind_from(c.sbla.kind)))
    throw ConfigError("config.signal.sbla.kind: must be a phase-coupled kind");
  if (top.has("system")) {
    Fields s(top.raw("system"), "config.system");
    std::string type = "standin";
    s.get("type", type);
    if (type == "standin") {
      c.system.type = SystemConfig::Type::Standin;
    } else if (type == "wh") {
      c.system.type = SystemConfig::Type::Wh;
      if (!s.has("r") || !s.has("s") || !s.has("f"))
        throw ConfigError("config.system: type 'wh' needs r, f and s");
      c.system.model.r = io::tf_from_json(s.raw("r"), "config.system.r");
      c.system.model.s = io::tf_from_json(s.raw("s"), "config.system.s");
      c.system.model.f.coeffs = io::number_list(s.raw("f"), "config.system.f");
      if (c.system.model.f.coeffs.empty()) throw ConfigError("config.system.f: empty coefficient list");
    } else if (type == "ingest") {
      c.system.type = SystemConfig::Type::Ingest;
      s.get("sbla_records", c.system.sbla_records);
      s.get("bla_records", c.system.bla_records);
      if (c.system.sbla_records.empty()) throw ConfigError("config.system.sbla_records: at least one file needed");
    } else {
      throw ConfigError("config.system.type: expected standin | wh | ingest");
    }
  }
  if (top.has("noise")) {
    Fields n(top.raw("noise"), "config.noise");
    n.get("variance", c.noise.variance);
    n.get("snr_db", c.noise.snr_db);
    if (n.has("shaping")) c.noise.shaping = io::tf_from_json(n.raw("shaping"), "config.noise.shaping");
    if (c.noise.variance < 0.0) throw ConfigError("config.noise.variance: must be >= 0");
    if (c.noise.snr_db && c.noise.variance > 0.0)
      throw ConfigError("config.noise: give either variance or snr_db, not both");
  }
  if (top.has("estimation")) {
    Fields e(top.raw("estimation"), "config.estimation");
    detail::parse_orders(e, "bla_orders", c.estimation.bla_num, c.estimation.bla_den);
    detail::parse_orders(e, "sbla_orders", c.estimation.sbla_num, c.estimation.sbla_den);
    e.get("threshold_fraction", c.estimation.threshold_fraction);
    e.get("compensate_time_origin", c.estimation.compensate_time_origin);
    e.get("d_max", c.estimation.d_max);
    e.get("snap_to_bla", c.estimation.snap_to_bla);
    e.get("multistart", c.estimation.multistart);
    std::string w = "total";
    e.get("weighting", w);
    if (w == "total") c.estimation.weighting = FitWeighting::Total;
    else if (w == "noise") c.estimation.weighting = FitWeighting::Noise;
    else if (w == "unit") c.estimation.weighting = FitWeighting::Unit;
    else throw ConfigError("config.estimation.weighting: expected total | noise | unit");
    if (!(c.estimation.threshold_fraction > 0.0 && c.estimation.threshold_fraction <= 1.0))
      throw ConfigError("config.estimation.threshold_fraction: must be in (0, 1]");
  }
  if (top.has("validation")) {
    Fields v(top.raw("validation"), "config.validation");
    v.get("enabled", c.validation.enabled);
    v.get("seed", c.validation.seed);
    v.get("n_periods", c.validation.n_periods);
    if (c.validation.n_periods == 0) throw ConfigError("config.validation.n_periods: must be >= 1");
  }
  if (top.has("output")) {
    Fields o(top.raw("output"), "config.output");
    o.get("directory", c.output.directory);
    o.get("records", c.output.records);
    o.get("signals", c.output.signals);
    o.get("internals", c.output.internals);
    for (const auto& [key, val] : {std::pair{"records", c.output.records}, std::pair{"signals", c.output.signals}})
      if (val != "all" && val != "first" && val != "none")
        throw ConfigError(std::string("config.output.") + key + ": expected all | first | none");
  }
  if (top.has("threads")) top.get("threads", c.threads);
  return c;
}

inline io::json config_json(const ExperimentConfig& c) {
  io::json j;
  j["signal"] = {{"sbla", detail::signal_json(c.sbla)}, {"bla", detail::signal_json(c.bla)}};
  io::json sys;
  switch (c.system.type) {
    case SystemConfig::Type::Standin: sys["type"] = "standin"; break;
    case SystemConfig::Type::Wh: sys["type"] = "wh"; break;
    case SystemConfig::Type::Ingest: sys["type"] = "ingest"; break;
  }
  if (c.system.type == SystemConfig::Type::Ingest) {
    sys["sbla_records"] = c.system.sbla_records;
    sys["bla_records"] = c.system.bla_records;
  } else if (c.system.type == SystemConfig::Type::Wh) {
    sys["r"] = io::to_json(c.system.model.r);
    sys["f"] = c.system.model.f.coeffs;
    sys["s"] = io::to_json(c.system.model.s);
  }
  j["system"] = sys;
  io::json n;
  n["variance"] = c.noise.variance;
  n["snr_db"] = c.noise.snr_db ? io::json(*c.noise.snr_db) : io::json(nullptr);
  n["shaping"] = c.noise.shaping ? io::to_json(*c.noise.shaping) : io::json(nullptr);
  j["noise"] = n;
  const char* w = c.estimation.weighting == FitWeighting::Total   ? "total"
                  : c.estimation.weighting == FitWeighting::Noise ? "noise"
                                                                  : "unit";
  j["estimation"] = {{"bla_orders", {c.estimation.bla_num, c.estimation.bla_den}},
                     {"sbla_orders", {c.estimation.sbla_num, c.estimation.sbla_den}},
                     {"threshold_fraction", c.estimation.threshold_fraction},
                     {"compensate_time_origin", c.estimation.compensate_time_origin},
                     {"d_max", c.estimation.d_max},
                     {"snap_to_bla", c.estimation.snap_to_bla},
                     {"multistart", c.estimation.multistart},
                     {"weighting", w}};
  j["validation"] = {{"enabled", c.validation.enabled}, {"seed", c.validation.seed}, {"n_periods", c.validation.n_periods}};
  j["output"] = {{"directory", c.output.directory},
                 {"records", c.output.records},
                 {"signals", c.output.signals},
                 {"internals", c.output.internals}};
  j["threads"] = c.threads;
  return j;
}

inline ExperimentConfig load_config(const std::filesystem::path& p) { return parse_config(io::read_json(p)); }

/// Multisine spec described by a signal section.
inline MultisineSpec design_from(const SignalConfig& c) {
  const auto kind = io::kind_from(c.kind);
  const auto grid = FrequencyGrid::make(c.n_samples, c.sample_rate);
  AmplitudeProfile prof;
  prof.flat_level = c.amplitude;
  std::optional<BandSpec> band;
  if (c.f_min || c.f_max) band = FrequencyBand{c.f_min.value_or(0.0), c.f_max.value_or(c.sample_rate / 2.0)};
  if (!is_phase_coupled(kind)) {
    if (c.line_step > 1) {
      const double lo = c.f_min.value_or(0.0), hi = c.f_max.value_or(c.sample_rate / 2.0);
      std::vector<long> lines;
      const long first = std::max<long>(1, static_cast<long>(std::ceil(lo * static_cast<double>(c.n_samples) / c.sample_rate)));
      for (long k = first; k <= grid.nyquist_line() && grid.line_frequency(static_cast<double>(k)) <= hi; k += c.line_step)
        lines.push_back(k);
      band = lines;
    }
    return design_multisine(kind, grid, band, prof);
  }
  return design_multisine(kind, grid, band, prof, CouplingParams{c.d, c.c_shift, c.i_max});
}

enum class ExitCode { Ok = 0, Config = 2, Numerical = 3, Indistinct = 4 };

/// Names of the files a pipeline run writes into the output directory.
namespace artifact {
inline const char* kConfig = "config.resolved.json";
inline const char* kSblaSpec = "spec_sbla.json";
inline const char* kBlaSpec = "spec_bla.json";
inline const char* kRecords = "records";
inline const char* kSignals = "signals";
inline const char* kBla = "bla.csv";
inline const char* kSblaMinus = "sbla_minus.csv";
inline const char* kSblaPlus = "sbla_plus.csv";
inline const char* kTimeOrigin = "time_origin.json";
inline const char* kDominance = "dominance.json";
inline const char* kFitBla = "fit_bla.json";
inline const char* kFitSbla = "fit_sbla_minus.json";
inline const char* kFitRoots = "fit_roots.csv";
inline const char* kAssignment = "assignment.json";
inline const char* kAssignmentCsv = "assignment.csv";
inline const char* kInitialWh = "initial_wh.json";
inline const char* kSummary = "summary.json";
}  // namespace artifact

/// State shared by the pipeline stages. Anything missing is loaded from the
/// output directory, so each stage can also run on its own.
class Workspace {
 public:
  Workspace(ExperimentConfig cfg, std::filesystem::path dir) : cfg_(std::move(cfg)), dir_(std::move(dir)) {}

  const ExperimentConfig& config() const { return cfg_; }
  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path(const std::string& name) const { return dir_ / name; }

  std::optional<MultisineSpec> sbla_spec, bla_spec;
  std::optional<std::vector<Record>> sbla_records, bla_records;
  std::optional<FrfEstimate> bla;
  std::optional<ShiftedBlaEstimate> sbla;
  std::optional<FitResult> fit_bla, fit_sbla;
  std::optional<AssignmentReport> assignment;
  std::optional<InitialWhEstimate> initial;
  std::optional<InitialBlocks> blocks;
  double sbla_noise_variance = 0.0, bla_noise_variance = 0.0;
  io::json validation;

  void write_config() const { io::write_json(path(artifact::kConfig), config_json(cfg_)); }

  const MultisineSpec& need_sbla_spec() {
    if (!sbla_spec) sbla_spec = io::spec_from_json(io::read_json(require_file(artifact::kSblaSpec, "design")));
    return *sbla_spec;
  }
  const MultisineSpec& need_bla_spec() {
    if (!bla_spec) bla_spec = io::spec_from_json(io::read_json(require_file(artifact::kBlaSpec, "design")));
    return *bla_spec;
  }
  const std::vector<Record>& need_records(bool coupled) {
    auto& slot = coupled ? sbla_records : bla_records;
    if (!slot) {
      const auto& spec = coupled ? need_sbla_spec() : need_bla_spec();
      slot = load_records(coupled ? "sbla" : "bla", spec.grid.n_samples);
    }
    return *slot;
  }
  const FrfEstimate& need_bla() {
    if (!bla) bla = io::frf_from_csv(require_file(artifact::kBla, "bla"), need_bla_spec().grid);
    return *bla;
  }
  const ShiftedBlaEstimate& need_sbla() {
    if (!sbla) {
      ShiftedBlaEstimate e;
      e.minus = io::frf_from_csv(require_file(artifact::kSblaMinus, "sbla"), need_sbla_spec().grid);
      e.plus = io::frf_from_csv(require_file(artifact::kSblaPlus, "sbla"), need_sbla_spec().grid);
      sbla = e;
    }
    return *sbla;
  }
  const FitResult& need_fit(bool coupled) {
    auto& slot = coupled ? fit_sbla : fit_bla;
    if (!slot) slot = io::fit_from_json(io::read_json(require_file(coupled ? artifact::kFitSbla : artifact::kFitBla, "fit")));
    return *slot;
  }
  const AssignmentReport& need_assignment() {
    if (!assignment) assignment = io::assignment_from_json(io::read_json(require_file(artifact::kAssignment, "assign")));
    return *assignment;
  }

  static std::string record_name(const std::string& tag, std::size_t i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%04zu.csv", tag.c_str(), i);
    return buf;
  }

 private:
  std::filesystem::path require_file(const char* name, const char* stage) const {
    const auto p = path(name);
    if (!std::filesystem::exists(p))
      throw ConfigError("missing upstream artifact '" + p.string() + "' (run the '" + stage + "' stage first)");
    return p;
  }
  std::vector<Record> load_records(const std::string& tag, std::size_t n) const {
    std::vector<Record> out;
    for (std::size_t i = 0;; ++i) {
      const auto p = path(std::string(artifact::kRecords) + "/" + record_name(tag, i));
      if (!std::filesystem::exists(p)) break;
      out.push_back(io::record_from_csv(p, n));
    }
    if (out.empty())
      throw ConfigError("missing upstream artifact '" + path(artifact::kRecords).string() + "/" + record_name(tag, 0) +
                        "' (run 'simulate' or 'ingest' first)");
    return out;
  }

  ExperimentConfig cfg_;
  std::filesystem::path dir_;
};

namespace detail {

inline NoiseSpec resolve_noise(const NoiseConfig& nc, const WhModel& model, const MultisineSpec& spec,
                               const SignalConfig& sc) {
  NoiseSpec ns;
  ns.variance = nc.variance;
  ns.shaping = nc.shaping;
  if (nc.snr_db) {
    // Noise power relative to the noiseless output of the first realization.
    const auto sig = realize(spec, derive_seed(sc.seed, 0), 1, sc.scaling);
    const auto rec = simulate(model, sig, 1, sc.discard_periods, {}, 0);
    double p = 0.0;
    for (double v : rec.y) p += v * v;
    p /= static_cast<double>(rec.y.size());
    double shaping_gain = 1.0;
    if (nc.shaping) {
      // Scale so the shaped noise itself has the requested power.
      double hp = 0.0;
      const std::size_t n = spec.grid.n_samples;
      for (long k = -static_cast<long>(n / 2) + 1; k <= static_cast<long>(n / 2); ++k)
        hp += std::norm(nc.shaping->at_line(static_cast<double>(k), n));
      shaping_gain = hp / static_cast<double>(n);
    }
    ns.variance = p / std::pow(10.0, *nc.snr_db / 10.0) / shaping_gain;
  }
  return ns;
}

inline void write_records(const Workspace& ws, const std::vector<Record>& recs, const std::string& tag,
                          double fs, bool internals) {
  const auto& mode = ws.config().output.records;
  if (mode == "none") return;
  const std::size_t n = mode == "first" ? std::min<std::size_t>(1, recs.size()) : recs.size();
  for (std::size_t i = 0; i < n; ++i)
    io::write_file(ws.path(std::string(artifact::kRecords) + "/" + Workspace::record_name(tag, i)),
                   io::record_csv(recs[i], fs, internals && !recs[i].x.empty()));
}

inline void write_signals(const Workspace& ws, const MultisineSpec& spec, const SignalConfig& sc, const std::string& tag) {
  const auto& mode = ws.config().output.signals;
  if (mode == "none") return;
  const std::size_t n = mode == "first" ? 1 : sc.n_realizations;
  for (std::size_t i = 0; i < n; ++i) {
    const auto sig = realize(spec, derive_seed(sc.seed, 2 * i), 1, sc.scaling);
    io::write_file(ws.path(std::string(artifact::kSignals) + "/" + Workspace::record_name(tag, i)),
                   io::series_csv(sig.time_series));
  }
}

/// Starting points for the shifted-BLA fit: every way of rotating the BLA pole
/// groups (real poles and conjugate pairs) by e^{j 2 pi s/N}, with the
/// numerator solved for that fixed denominator.
inline std::vector<ComplexRationalTF> rotation_starts(const FitResult& bla_fit, const FrfEstimate& data,
                                                      const MultisineSpec& spec, std::size_t n_num, std::size_t n_den,
                                                      FitWeighting weighting) {
  std::vector<ComplexRationalTF> starts;
  if (bla_fit.poles.size() != n_den || n_den == 0) return starts;
  std::vector<std::vector<cplx>> groups;
  std::vector<bool> used(bla_fit.poles.size(), false);
  for (std::size_t i = 0; i < bla_fit.poles.size(); ++i) {
    if (used[i]) continue;
    used[i] = true;
    const cplx p = bla_fit.poles[i];
    std::vector<cplx> g{p};
    if (std::abs(p.imag()) > 1e-10) {
      for (std::size_t j = i + 1; j < bla_fit.poles.size(); ++j)
        if (!used[j] && std::abs(bla_fit.poles[j] - std::conj(p)) < 1e-6 * std::max(1.0, std::abs(p))) {
          used[j] = true;
          g.push_back(bla_fit.poles[j]);
          break;
        }
    }
    groups.push_back(g);
  }
  if (groups.size() > 10) return starts;
  const double omega = 2.0 * std::numbers::pi * static_cast<double>(spec.s()) / static_cast<double>(spec.grid.n_samples);
  const cplx rot = std::polar(1.0, omega);
  FitOptions lin;
  lin.weighting = weighting;
  for (std::size_t mask = 0; mask < (std::size_t{1} << groups.size()); ++mask) {
    std::vector<cplx> poles;
    for (std::size_t g = 0; g < groups.size(); ++g)
      for (const auto& p : groups[g]) poles.push_back((mask >> g) & 1 ? p * rot : p);
    const auto a = poly_from_roots(poles);
    FrfEstimate scaled = data;
    for (std::size_t j = 0; j < scaled.size(); ++j) {
      const cplx av = horner<cplx>(a, zinv_at_line(static_cast<double>(scaled.lines[j]), spec.grid.n_samples));
      scaled.mean[j] *= av;
      scaled.var_noise[j] *= std::norm(av);
      scaled.var_total[j] *= std::norm(av);
    }
    try {
      const auto nf = fit_complex_tf(scaled, n_num, 0, lin);
      starts.emplace_back(nf.model.num(), a);
    } catch (const NumericalError&) {
    }
  }
  return starts;
}

/// Joint test of the collection-line means against zero: the average of
/// |mean|^2 / var over the lines (about 1 for pure noise) must exceed its
/// 3-sigma null bound.
inline void check_distinct(const FrfEstimate& e) {
  double stat = 0.0;
  std::size_t n = 0;
  double mean_scale = 0.0;
  for (std::size_t j = 0; j < e.size(); ++j) mean_scale = std::max(mean_scale, std::abs(e.mean[j]));
  for (std::size_t j = 0; j < e.size(); ++j) {
    const double v = e.var_total[j];
    const double m2 = std::norm(e.mean[j]);
    if (v > 0.0) stat += m2 / v;
    else if (m2 > 0.0) stat += std::numeric_limits<double>::infinity();
    ++n;
  }
  const double avg = n ? stat / static_cast<double>(n) : 0.0;
  const double bound = 1.0 + 3.0 * std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(n, 1)));
  if (!(avg > bound) || mean_scale == 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "shifted BLA is indistinct from zero: mean |G|^2/var over %zu collection lines is %.3g "
                  "(needs > %.3g); the system shows no odd nonlinearity with input dynamics to shift",
                  n, avg, bound);
    throw IndistinctDataError(buf);
  }
}

}  // namespace detail

// ---- stages ----------------------------------------------------------------

inline void stage_design(Workspace& ws) {
  const auto& c = ws.config();
  ws.sbla_spec = design_from(c.sbla);
  io::write_json(ws.path(artifact::kSblaSpec), io::to_json(*ws.sbla_spec));
  if (c.system.type != SystemConfig::Type::Ingest || !c.system.bla_records.empty()) {
    ws.bla_spec = design_from(c.bla);
    io::write_json(ws.path(artifact::kBlaSpec), io::to_json(*ws.bla_spec));
  }
  ws.write_config();
}

inline void stage_simulate(Workspace& ws) {
  const auto& c = ws.config();
  detail::require(c.system.type != SystemConfig::Type::Ingest, "simulate: system type is 'ingest'");
  const auto& model = c.system.model;
  auto run = [&](const SignalConfig& sc, const MultisineSpec& spec, const std::string& tag, double& var_out) {
    EnsembleOptions o;
    o.n_realizations = sc.n_realizations;
    o.n_periods = sc.n_periods;
    o.discard_periods = sc.discard_periods;
    o.scaling = sc.scaling;
    o.noise = detail::resolve_noise(c.noise, model, spec, sc);
    o.seed = sc.seed;
    o.threads = c.threads;
    var_out = o.noise.variance;
    auto recs = simulate_ensemble(model, spec, o);
    detail::write_records(ws, recs, tag, spec.grid.sample_rate, c.output.internals);
    detail::write_signals(ws, spec, sc, tag);
    return recs;
  };
  ws.sbla_records = run(c.sbla, ws.need_sbla_spec(), "sbla", ws.sbla_noise_variance);
  ws.bla_records = run(c.bla, ws.need_bla_spec(), "bla", ws.bla_noise_variance);
}

/// Copies external (t, u, y) records into the workspace after checking them
/// against the spec document.
inline void ingest_records(Workspace& ws, const std::vector<std::string>& files, bool coupled) {
  const auto& spec = coupled ? ws.need_sbla_spec() : ws.need_bla_spec();
  std::vector<Record> recs;
  for (const auto& f : files) {
    auto r = io::record_from_csv(f, spec.grid.n_samples);
    const Spectrum u = dft(r.u_period(0));
    for (long k = 1; k <= spec.grid.nyquist_line(); ++k) {
      const double mag = std::abs(u.at(k));
      const bool excited = spec.is_excited(k);
      double ref = 0.0;
      for (long e : spec.excited_lines) ref = std::max(ref, std::abs(u.at(e)));
      if (excited && mag < 1e-6 * ref)
        throw ConfigError(f + ": spec/record mismatch: excited line " + std::to_string(k) + " carries no energy");
      if (!excited && mag > 1e-3 * ref)
        throw ConfigError(f + ": spec/record mismatch: energy at non-excited line " + std::to_string(k));
    }
    recs.push_back(std::move(r));
  }
  const std::string tag = coupled ? "sbla" : "bla";
  for (std::size_t i = 0; i < recs.size(); ++i)
    io::write_file(ws.path(std::string(artifact::kRecords) + "/" + Workspace::record_name(tag, i)),
                   io::record_csv(recs[i], spec.grid.sample_rate, false));
  (coupled ? ws.sbla_records : ws.bla_records) = std::move(recs);
}

inline void stage_ingest(Workspace& ws) {
  const auto& c = ws.config();
  detail::require(c.system.type == SystemConfig::Type::Ingest, "ingest: system type is not 'ingest'");
  ingest_records(ws, c.system.sbla_records, true);
  if (!c.system.bla_records.empty()) ingest_records(ws, c.system.bla_records, false);
}

inline void stage_bla(Workspace& ws) {
  ws.bla = estimate_bla(ws.need_records(false), ws.need_bla_spec());
  io::write_file(ws.path(artifact::kBla), io::frf_csv(*ws.bla));
}

inline void stage_sbla(Workspace& ws) {
  const auto& c = ws.config();
  const auto& spec = ws.need_sbla_spec();
  const auto& recs = ws.need_records(true);
  ws.sbla = estimate_shifted_bla(recs, spec, c.estimation.compensate_time_origin);
  io::write_file(ws.path(artifact::kSblaMinus), io::frf_csv(ws.sbla->minus));
  io::write_file(ws.path(artifact::kSblaPlus), io::frf_csv(ws.sbla->plus));
  io::write_json(ws.path(artifact::kTimeOrigin), io::to_json(ws.sbla->time_origin));
  // Pair constants need the intermediate signal: exact for a simulated system,
  // the input spectrum otherwise.
  const bool known = c.system.type != SystemConfig::Type::Ingest;
  const auto rep = known ? dominance_report(c.system.model, spec) : dominance_report(intermediate_spectrum(RationalTF{}, spec), spec);
  auto dj = io::to_json(rep);
  dj["basis"] = known ? "intermediate signal of the simulated system" : "input spectrum (R unknown)";
  io::write_json(ws.path(artifact::kDominance), dj);
  detail::check_distinct(ws.sbla->minus);
}

inline void stage_fit(Workspace& ws) {
  const auto& e = ws.config().estimation;
  FitOptions opt;
  opt.weighting = e.weighting;
  const auto& bla = ws.need_bla();
  ws.fit_bla = fit_real_tf(bla, e.bla_num, e.bla_den, opt);
  io::write_json(ws.path(artifact::kFitBla), io::to_json(*ws.fit_bla));
  const auto& spec = ws.need_sbla_spec();
  const auto& data = ws.need_sbla().minus;
  FitOptions copt = opt;
  if (e.multistart)
    copt.extra_starts = detail::rotation_starts(*ws.fit_bla, data, spec, e.sbla_num, e.sbla_den, e.weighting);
  ws.fit_sbla = fit_complex_tf(data, e.sbla_num, e.sbla_den, copt);
  io::write_json(ws.path(artifact::kFitSbla), io::to_json(*ws.fit_sbla));
  std::string roots = "fit,kind,re,im\n";
  for (const auto& [name, f] : {std::pair{"bla", &*ws.fit_bla}, std::pair{"sbla_minus", &*ws.fit_sbla}}) {
    for (const auto& p : f->poles) roots += std::string(name) + ",pole," + io::fmt(p.real()) + "," + io::fmt(p.imag()) + "\n";
    for (const auto& z : f->zeros) roots += std::string(name) + ",zero," + io::fmt(z.real()) + "," + io::fmt(z.imag()) + "\n";
  }
  io::write_file(ws.path(artifact::kFitRoots), roots);
}

inline void stage_assign(Workspace& ws) {
  AssignOptions opt;
  opt.threshold_fraction = ws.config().estimation.threshold_fraction;
  ws.assignment = assign_roots(ws.need_fit(true), ws.need_sbla_spec(), opt);
  io::write_json(ws.path(artifact::kAssignment), io::to_json(*ws.assignment));
  io::write_file(ws.path(artifact::kAssignmentCsv), io::roots_csv(*ws.assignment));
}

/// Concatenation of records with a common period length.
inline Record concat_records(std::span<const Record> recs) {
  Record out;
  out.period_length = recs.front().period_length;
  for (const auto& r : recs) {
    detail::require(r.period_length == out.period_length, "records differ in period length");
    out.u.insert(out.u.end(), r.u.begin(), r.u.end());
    out.y.insert(out.y.end(), r.y.begin(), r.y.end());
    out.n_periods += r.n_periods;
  }
  return out;
}

inline void stage_init_wh(Workspace& ws) {
  const auto& c = ws.config();
  BlockOptions bo;
  bo.snap_to_bla = c.estimation.snap_to_bla;
  const FitResult* bla_fit = nullptr;
  if (std::filesystem::exists(ws.path(artifact::kFitBla)) || ws.fit_bla) bla_fit = &ws.need_fit(false);
  ws.blocks = build_initial_blocks(ws.need_assignment(), ws.need_fit(true), bla_fit, ws.need_sbla_spec(), bo);
  // The random-phase records excite the nonlinearity broadly; fall back to the
  // coupled ones when no BLA experiment exists.
  const bool have_bla = ws.bla_records || std::filesystem::exists(ws.path(std::string(artifact::kRecords) + "/" + Workspace::record_name("bla", 0)));
  const auto& recs = ws.need_records(!have_bla);
  ws.initial = estimate_nonlinearity(ws.blocks->r_hat, ws.blocks->s_hat, concat_records(recs), c.estimation.d_max);
  auto j = io::to_json(*ws.initial);
  j["dropped_unclassified_roots"] = io::complex_list(ws.blocks->dropped);
  io::write_json(ws.path(artifact::kInitialWh), j);
}

/// Relative rms output errors of the BLA model and the initialized WH model on
/// a fresh noisy random-phase record.
inline io::json validate_models(Workspace& ws) {
  const auto& c = ws.config();
  io::json out;
  if (!c.validation.enabled || c.system.type == SystemConfig::Type::Ingest || !ws.initial) return out;
  const auto& spec = ws.need_bla_spec();
  const auto noise = detail::resolve_noise(c.noise, c.system.model, spec, c.bla);
  const auto sig = realize(spec, c.validation.seed, 1, c.bla.scaling);
  const auto rec = simulate(c.system.model, sig, c.validation.n_periods, c.bla.discard_periods, noise,
                            derive_seed(c.validation.seed, 1));
  const std::size_t n = rec.period_length;
  const auto y_lin = simulate_periodic(ws.need_fit(false).real_model(), rec.u, n);
  const auto y_wh = simulate_periodic(ws.initial->model(), rec.u, n);
  out["linear_rel_rms_error"] = relative_rms_error(rec.y, y_lin);
  out["wh_rel_rms_error"] = relative_rms_error(rec.y, y_wh);
  out["noise_variance"] = noise.variance;
  return out;
}

inline io::json summarize(Workspace& ws) {
  io::json s;
  const auto& spec = ws.need_sbla_spec();
  s["expected_shift_deg"] = expected_shift_degrees(spec);
  s["s"] = spec.s();
  s["n_samples"] = spec.grid.n_samples;
  if (ws.sbla) s["time_origin_delay_samples"] = ws.sbla->time_origin.delay_samples();
  if (ws.assignment) {
    io::json poles = io::json::array(), zeros = io::json::array();
    double min_conf = 1.0;
    bool unclassified_pole = false;
    for (const auto& e : ws.assignment->entries) {
      io::json x = {{"value", io::complex_json(e.value)},
                    {"shift_deg", e.angular_shift},
                    {"label", to_string(e.label)},
                    {"confidence", e.confidence}};
      if (e.kind == RootKind::Pole) {
        poles.push_back(x);
        min_conf = std::min(min_conf, e.confidence);
        unclassified_pole = unclassified_pole || e.label == BlockLabel::Unclassified;
      } else {
        zeros.push_back(x);
      }
    }
    s["poles"] = poles;
    s["zeros"] = zeros;
    s["n_poles_input"] = ws.assignment->count(RootKind::Pole, BlockLabel::InputR);
    s["n_poles_output"] = ws.assignment->count(RootKind::Pole, BlockLabel::OutputS);
    s["min_pole_confidence"] = min_conf;
    s["low_confidence"] = unclassified_pole || min_conf < 0.5;
  }
  if (ws.fit_sbla) s["sbla_fit_cost"] = ws.fit_sbla->cost;
  if (ws.fit_bla) s["bla_fit_cost"] = ws.fit_bla->cost;
  if (ws.initial) s["init_fit_residual"] = ws.initial->fit_residual;
  s["noise_variance"] = {{"sbla", ws.sbla_noise_variance}, {"bla", ws.bla_noise_variance}};
  if (!ws.validation.is_null()) s["validation"] = ws.validation;
  return s;
}

/// design -> simulate/ingest -> bla -> sbla -> fit -> assign -> init-wh.
inline void run_pipeline(Workspace& ws) {
  stage_design(ws);
  if (ws.config().system.type == SystemConfig::Type::Ingest) stage_ingest(ws);
  else stage_simulate(ws);
  const bool have_bla = ws.bla_records.has_value();
  if (have_bla) stage_bla(ws);
  try {
    stage_sbla(ws);
  } catch (const IndistinctDataError& e) {
    auto s = summarize(ws);
    s["status"] = "indistinct";
    s["diagnostic"] = e.what();
    io::write_json(ws.path(artifact::kSummary), s);
    throw;
  }
  detail::require(have_bla, "run: a BLA experiment (random-phase records) is required for the fits");
  stage_fit(ws);
  stage_assign(ws);
  stage_init_wh(ws);
  ws.validation = validate_models(ws);
  auto s = summarize(ws);
  s["status"] = "ok";
  io::write_json(ws.path(artifact::kSummary), s);
}

/// Maps library exceptions onto the documented exit codes.
template <typename F>
int guarded(F&& body, std::string& message) {
  try {
    body();
    return static_cast<int>(ExitCode::Ok);
  } catch (const ConfigError& e) {
    message = std::string("configuration error: ") + e.what();
    return static_cast<int>(ExitCode::Config);
  } catch (const IndistinctDataError& e) {
    message = std::string("indistinct data: ") + e.what();
    return static_cast<int>(ExitCode::Indistinct);
  } catch (const NumericalError& e) {
    message = std::string("numerical failure: ") + e.what();
    return static_cast<int>(ExitCode::Numerical);
  } catch (const std::exception& e) {
    message = std::string("numerical failure: ") + e.what();
    return static_cast<int>(ExitCode::Numerical);
  }
}

}  // namespace whinit
