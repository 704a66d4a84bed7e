#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "decompose.hpp"
#include "error.hpp"
#include "frf.hpp"
#include "rational_fit.hpp"
#include "signals.hpp"
#include "wh_sim.hpp"

namespace whinit::io {

using json = nlohmann::ordered_json;

/// Shortest representation that parses back to the same double.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline double parse_double(const std::string& s, const std::string& where) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ConfigError(where + ": not a number: '" + s + "'");
  }
  while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  if (pos != s.size()) throw ConfigError(where + ": not a number: '" + s + "'");
  return v;
}

inline json number(double v) {
  if (std::isfinite(v)) return v;
  return fmt(v);
}

inline double get_number(const json& j, const std::string& where) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return parse_double(j.get<std::string>(), where);
  throw ConfigError(where + ": expected a number");
}

inline json complex_json(cplx z) { return json::array({number(z.real()), number(z.imag())}); }
inline cplx complex_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(where + ": expected [re, im]");
  return {get_number(j[0], where), get_number(j[1], where)};
}

inline json complex_list(const std::vector<cplx>& v) {
  json a = json::array();
  for (const auto& z : v) a.push_back(complex_json(z));
  return a;
}

inline std::vector<double> number_list(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(get_number(j[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

// ---- files ---------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + p.string() + "'");
  out << text;
}

inline json read_json(const std::filesystem::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

// ---- types -----------------------------------------------------------------

inline const char* kind_name(MultisineKind k) {
  switch (k) {
    case MultisineKind::RandomPhase: return "random";
    case MultisineKind::FullPhaseCoupled: return "full-coupled";
    default: return "odd-coupled";
  }
}

inline MultisineKind kind_from(const std::string& s) {
  if (s == "random") return MultisineKind::RandomPhase;
  if (s == "full-coupled") return MultisineKind::FullPhaseCoupled;
  if (s == "odd-coupled") return MultisineKind::OddPhaseCoupled;
  throw ConfigError("unknown multisine kind '" + s + "' (random | full-coupled | odd-coupled)");
}

inline json to_json(const MultisineSpec& spec) {
  json j;
  j["kind"] = kind_name(spec.kind);
  j["n_samples"] = spec.grid.n_samples;
  j["sample_rate"] = spec.grid.sample_rate;
  if (spec.coupling) {
    const auto& c = *spec.coupling;
    j["coupling"] = {{"d", c.d}, {"c_shift", c.c_shift}, {"s", c.s}, {"i_min", c.i_min}, {"i_max", c.i_max}};
  }
  j["excited_lines"] = spec.excited_lines;
  json amp = json::array();
  for (long k : spec.excited_lines) amp.push_back(spec.amplitude(k));
  j["amplitudes"] = amp;
  return j;
}

inline MultisineSpec spec_from_json(const json& j) {
  try {
    MultisineSpec spec;
    spec.kind = kind_from(j.at("kind").get<std::string>());
    spec.grid = FrequencyGrid::make(j.at("n_samples").get<std::size_t>(), j.at("sample_rate").get<double>());
    spec.excited_lines = j.at("excited_lines").get<std::vector<long>>();
    const auto amp = number_list(j.at("amplitudes"), "spec.amplitudes");
    detail::require(amp.size() == spec.excited_lines.size(), "spec: amplitudes and excited_lines differ in length");
    for (std::size_t i = 0; i < amp.size(); ++i) spec.amplitudes[spec.excited_lines[i]] = amp[i];
    if (j.contains("coupling")) {
      const auto& c = j["coupling"];
      Coupling cp;
      cp.d = c.at("d").get<int>();
      cp.c_shift = c.at("c_shift").get<int>();
      cp.s = c.at("s").get<int>();
      cp.i_min = c.at("i_min").get<int>();
      cp.i_max = c.at("i_max").get<int>();
      spec.coupling = cp;
    }
    validate(spec);
    return spec;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("spec document: ") + e.what());
  }
}

inline json to_json(const RationalTF& tf) { return {{"num", tf.num()}, {"den", tf.den()}}; }

inline RationalTF tf_from_json(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("num") || !j.contains("den"))
    throw ConfigError(where + ": expected {\"num\": [...], \"den\": [...]}");
  auto num = number_list(j["num"], where + ".num");
  auto den = number_list(j["den"], where + ".den");
  if (num.empty() || den.empty()) throw ConfigError(where + ": empty coefficient array");
  if (den[0] == 0.0) throw ConfigError(where + ".den[0] must be nonzero");
  try {
    return RationalTF::make(std::move(num), std::move(den));
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline json to_json(const WhModel& m) { return {{"r", to_json(m.r)}, {"f", m.f.coeffs}, {"s", to_json(m.s)}}; }

inline json to_json(const FitResult& f) {
  json j;
  j["real_valued"] = f.real_valued;
  j["order_num"] = f.model.num_order();
  j["order_den"] = f.model.den_order();
  j["num"] = complex_list(f.model.num());
  j["den"] = complex_list(f.model.den());
  j["cost"] = number(f.cost);
  j["n_samples"] = f.n_samples;
  j["iterations"] = f.iterations;
  j["converged"] = f.converged;
  j["gain"] = complex_json(f.gain);
  j["poles"] = complex_list(f.poles);
  j["zeros"] = complex_list(f.zeros);
  json c = json::array();
  for (const auto& p : f.cancellations)
    c.push_back({{"pole", p.pole_index}, {"zero", p.zero_index}, {"distance", p.distance}});
  j["cancellations"] = c;
  return j;
}

inline FitResult fit_from_json(const json& j) {
  try {
    FitResult f;
    f.real_valued = j.at("real_valued").get<bool>();
    std::vector<cplx> b, a;
    for (const auto& z : j.at("num")) b.push_back(complex_from(z, "fit.num"));
    for (const auto& z : j.at("den")) a.push_back(complex_from(z, "fit.den"));
    f.model = ComplexRationalTF(b, a);
    f.cost = get_number(j.at("cost"), "fit.cost");
    f.n_samples = j.at("n_samples").get<std::size_t>();
    f.iterations = j.at("iterations").get<int>();
    f.converged = j.at("converged").get<bool>();
    f.gain = complex_from(j.at("gain"), "fit.gain");
    for (const auto& z : j.at("poles")) f.poles.push_back(complex_from(z, "fit.poles"));
    for (const auto& z : j.at("zeros")) f.zeros.push_back(complex_from(z, "fit.zeros"));
    for (const auto& c : j.at("cancellations"))
      f.cancellations.push_back({c.at("pole").get<std::size_t>(), c.at("zero").get<std::size_t>(), c.at("distance").get<double>()});
    return f;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("fit document: ") + e.what());
  }
}

inline json to_json(const DominanceReport& d) {
  json alpha;
  for (const auto& [deg, v] : d.alpha) alpha[std::to_string(deg)] = number(v);
  return {{"c0", d.c0},
          {"c_minus_s", complex_json(d.c_minus_s)},
          {"c_plus_s", complex_json(d.c_plus_s)},
          {"ratio_bound_ok", d.ratio_bound_ok},
          {"alpha_lower_bound", number(d.alpha_lower_bound)},
          {"alpha", alpha}};
}

inline json to_json(const TimeOriginEstimate& t) {
  json per = json::array();
  for (const auto& [m, d] : t.delta_per_couple) per.push_back({{"m", m}, {"delta", d}});
  return {{"pooled_delta", t.pooled_delta}, {"delay_samples", t.delay_samples()}, {"per_couple", per}};
}

inline json to_json(const AssignmentReport& r) {
  json e = json::array();
  for (const auto& x : r.entries)
    e.push_back({{"kind", to_string(x.kind)},
                 {"value", complex_json(x.value)},
                 {"conjugate_partner", complex_json(x.conjugate_partner)},
                 {"angular_shift", x.angular_shift},
                 {"expected_shift", x.expected_shift},
                 {"modulus_ratio", x.modulus_ratio},
                 {"label", to_string(x.label)},
                 {"confidence", x.confidence},
                 {"cancelled", x.cancelled}});
  return {{"expected_shift", r.expected_shift}, {"threshold_fraction", r.threshold_fraction}, {"entries", e}};
}

inline AssignmentReport assignment_from_json(const json& j) {
  try {
    AssignmentReport r;
    r.expected_shift = j.at("expected_shift").get<double>();
    r.threshold_fraction = j.at("threshold_fraction").get<double>();
    for (const auto& x : j.at("entries")) {
      AssignmentEntry e;
      e.kind = x.at("kind").get<std::string>() == "pole" ? RootKind::Pole : RootKind::Zero;
      e.value = complex_from(x.at("value"), "assignment.value");
      e.conjugate_partner = complex_from(x.at("conjugate_partner"), "assignment.conjugate_partner");
      e.angular_shift = x.at("angular_shift").get<double>();
      e.expected_shift = x.at("expected_shift").get<double>();
      e.modulus_ratio = x.at("modulus_ratio").get<double>();
      const auto l = x.at("label").get<std::string>();
      e.label = l == "InputR" ? BlockLabel::InputR : l == "OutputS" ? BlockLabel::OutputS : BlockLabel::Unclassified;
      e.confidence = x.at("confidence").get<double>();
      e.cancelled = x.at("cancelled").get<bool>();
      r.entries.push_back(e);
    }
    return r;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("assignment document: ") + e.what());
  }
}

inline json to_json(const InitialWhEstimate& w) {
  return {{"r_hat", to_json(w.r_hat)},
          {"s_hat", to_json(w.s_hat)},
          {"f_hat", w.f_hat.coeffs},
          {"gain_convention", w.gain_convention},
          {"fit_residual", w.fit_residual}};
}

// ---- CSV -------------------------------------------------------------------

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
  std::istringstream in(read_file(p));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline std::string series_csv(std::span<const double> x) {
  std::string out = "sample_index,value\n";
  for (std::size_t i = 0; i < x.size(); ++i) out += std::to_string(i) + "," + fmt(x[i]) + "\n";
  return out;
}

inline std::string record_csv(const Record& r, double sample_rate, bool internals) {
  std::string out = internals ? "t,u,y,x,w\n" : "t,u,y\n";
  for (std::size_t i = 0; i < r.u.size(); ++i) {
    out += fmt(static_cast<double>(i) / sample_rate) + "," + fmt(r.u[i]) + "," + fmt(r.y[i]);
    if (internals) out += "," + fmt(r.x[i]) + "," + fmt(r.w[i]);
    out += "\n";
  }
  return out;
}

/// Reads a (t, u, y, ...) record; the length must be a whole number of periods.
inline Record record_from_csv(const std::filesystem::path& p, std::size_t period_length) {
  const auto rows = read_csv(p);
  Record r;
  r.period_length = period_length;
  std::size_t start = 0;
  if (!rows.empty() && !rows[0].empty() && rows[0][0] == "t") start = 1;
  for (std::size_t i = start; i < rows.size(); ++i) {
    const auto where = p.string() + ":" + std::to_string(i + 1);
    if (rows[i].size() < 3) throw ConfigError(where + ": expected at least 3 columns (t, u, y)");
    r.u.push_back(parse_double(rows[i][1], where));
    r.y.push_back(parse_double(rows[i][2], where));
  }
  if (r.u.empty() || r.u.size() % period_length != 0)
    throw ConfigError(p.string() + ": " + std::to_string(r.u.size()) + " samples is not a whole number of periods of " +
                      std::to_string(period_length));
  r.n_periods = r.u.size() / period_length;
  return r;
}

inline std::string frf_csv(const FrfEstimate& e) {
  std::string out = "line,freq_hz,re_mean,im_mean,var_noise,var_total\n";
  for (std::size_t j = 0; j < e.size(); ++j)
    out += std::to_string(e.lines[j]) + "," + fmt(e.grid.line_frequency(static_cast<double>(e.lines[j]))) + "," +
           fmt(e.mean[j].real()) + "," + fmt(e.mean[j].imag()) + "," + fmt(e.var_noise[j]) + "," +
           fmt(e.var_total[j]) + "\n";
  return out;
}

inline FrfEstimate frf_from_csv(const std::filesystem::path& p, const FrequencyGrid& grid) {
  const auto rows = read_csv(p);
  FrfEstimate e;
  e.grid = grid;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() >= 1 && rows[i][0] == "line") continue;
    const auto where = p.string() + ":" + std::to_string(i + 1);
    if (rows[i].size() != 6) throw ConfigError(where + ": expected 6 columns");
    e.lines.push_back(static_cast<long>(parse_double(rows[i][0], where)));
    e.mean.emplace_back(parse_double(rows[i][2], where), parse_double(rows[i][3], where));
    e.var_noise.push_back(parse_double(rows[i][4], where));
    e.var_total.push_back(parse_double(rows[i][5], where));
  }
  if (e.lines.empty()) throw ConfigError(p.string() + ": no FRF lines");
  return e;
}

inline std::string roots_csv(const AssignmentReport& r) {
  std::string out = "kind,re,im,label,shift_deg,confidence\n";
  for (const auto& e : r.entries)
    out += std::string(to_string(e.kind)) + "," + fmt(e.value.real()) + "," + fmt(e.value.imag()) + "," +
           to_string(e.label) + "," + fmt(e.angular_shift) + "," + fmt(e.confidence) + "\n";
  return out;
}

inline std::string fit_roots_csv(const FitResult& f) {
  std::string out = "kind,re,im\n";
  for (const auto& p : f.poles) out += "pole," + fmt(p.real()) + "," + fmt(p.imag()) + "\n";
  for (const auto& z : f.zeros) out += "zero," + fmt(z.real()) + "," + fmt(z.imag()) + "\n";
  return out;
}

}  // namespace whinit::io
