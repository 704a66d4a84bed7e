#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dft.hpp"
#include "error.hpp"

namespace whinit {

struct FrequencyGrid {
  std::size_t n_samples = 0;
  double sample_rate = 1.0;

  static FrequencyGrid make(std::size_t n, double fs = 1.0) {
    detail::require(n > 0 && n % 2 == 0, "FrequencyGrid: n_samples must be positive and even");
    detail::require(fs > 0.0, "FrequencyGrid: sample_rate must be positive");
    return {n, fs};
  }

  double line_frequency(double k) const { return k * sample_rate / static_cast<double>(n_samples); }
  long nyquist_line() const { return static_cast<long>(n_samples / 2); }
  bool operator==(const FrequencyGrid&) const = default;
};

enum class MultisineKind { RandomPhase, FullPhaseCoupled, OddPhaseCoupled };

inline bool is_phase_coupled(MultisineKind k) { return k != MultisineKind::RandomPhase; }

struct CouplingParams {
  int d = 0;
  int c_shift = 0;
  std::optional<int> i_max;  // derived from the band when absent
};

/// Resolved coupling structure: couples (m, m + s) with m = d/2 + d i.
struct Coupling {
  int d = 0;
  int c_shift = 0;
  int s = 0;
  int i_min = 0;
  int i_max = 0;

  long m_of(int i) const { return d / 2 + static_cast<long>(d) * i; }
  std::vector<long> couples() const {
    std::vector<long> ms;
    for (int i = i_min; i <= i_max; ++i) ms.push_back(m_of(i));
    return ms;
  }
  bool operator==(const Coupling&) const = default;
};

struct FrequencyBand {
  double f_min = 0.0;
  double f_max = 0.0;
};

using BandSpec = std::variant<FrequencyBand, std::vector<long>>;

/// Per-line |U_k|, the Fourier coefficient magnitude. When `per_line` is empty
/// every excited line gets flat_level / sqrt(N).
struct AmplitudeProfile {
  double flat_level = 1.0;
  std::map<long, double> per_line;
};

struct MultisineSpec {
  FrequencyGrid grid;
  MultisineKind kind = MultisineKind::RandomPhase;
  std::vector<long> excited_lines;  // ascending, all in (0, N/2]
  std::map<long, double> amplitudes;
  std::optional<Coupling> coupling;

  double amplitude(long k) const {
    auto it = amplitudes.find(k < 0 ? -k : k);
    return it == amplitudes.end() ? 0.0 : it->second;
  }
  bool is_excited(long k) const {
    return std::binary_search(excited_lines.begin(), excited_lines.end(), k < 0 ? -k : k);
  }
  int s() const { return coupling ? coupling->s : 0; }
  std::vector<long> couples() const { return coupling ? coupling->couples() : std::vector<long>{}; }
  /// |U(m+s)| / |U(m)| for a couple starting at m.
  double couple_ratio(long m) const { return amplitude(m + s()) / amplitude(m); }
};

namespace detail {

inline int shift_for(MultisineKind kind, int d, int c_shift) {
  return kind == MultisineKind::FullPhaseCoupled ? c_shift * d + 1 : c_shift * d + 2;
}

inline void validate_coupling_params(MultisineKind kind, int d, int c_shift) {
  require(c_shift > 0, "coupling: c_shift must be a positive integer");
  if (kind == MultisineKind::FullPhaseCoupled) {
    require(d >= 4 && d % 2 == 0, "full phase-coupled multisine requires an even d >= 4");
  } else {
    require(d % 2 == 0 && d / 2 >= 5 && (d / 2) % 2 == 1,
            "odd phase-coupled multisine requires d/2 odd and d/2 >= 5");
  }
}

}  // namespace detail

/// Check every MultisineSpec invariant; throws ConfigError with the first violation.
inline void validate(const MultisineSpec& spec) {
  using detail::require;
  const auto& g = spec.grid;
  require(g.n_samples > 0 && g.n_samples % 2 == 0, "spec: n_samples must be positive and even");
  require(!spec.excited_lines.empty(), "spec: empty excited line set");
  require(std::is_sorted(spec.excited_lines.begin(), spec.excited_lines.end()) &&
              std::adjacent_find(spec.excited_lines.begin(), spec.excited_lines.end()) ==
                  spec.excited_lines.end(),
          "spec: excited lines must be strictly ascending");
  for (long k : spec.excited_lines) {
    require(k > 0 && k <= g.nyquist_line(), "spec: excited line " + std::to_string(k) + " outside (0, N/2]");
    auto it = spec.amplitudes.find(k);
    require(it != spec.amplitudes.end() && it->second >= 0.0 && std::isfinite(it->second),
            "spec: missing or negative amplitude at line " + std::to_string(k));
  }
  if (!is_phase_coupled(spec.kind)) {
    require(!spec.coupling, "spec: random-phase multisine must not carry coupling parameters");
    return;
  }
  require(spec.coupling.has_value(), "spec: phase-coupled multisine needs coupling parameters");
  const auto& c = *spec.coupling;
  detail::validate_coupling_params(spec.kind, c.d, c.c_shift);
  require(c.s == detail::shift_for(spec.kind, c.d, c.c_shift), "spec: s inconsistent with d and c_shift");
  require(c.i_min >= 0 && c.i_max >= c.i_min, "spec: invalid couple index range");
  std::vector<long> expected;
  for (long m : c.couples()) {
    expected.push_back(m);
    expected.push_back(m + c.s);
  }
  std::sort(expected.begin(), expected.end());
  require(expected == spec.excited_lines, "spec: excited lines do not follow the coupled pattern");
  for (long m : c.couples()) {
    require(!spec.is_excited(m - c.s) && !spec.is_excited(m + 2 * c.s),
            "spec: excitation present on a collection line of couple m=" + std::to_string(m));
    require(spec.amplitude(m) > 0.0, "spec: zero amplitude at couple line " + std::to_string(m));
  }
  require(spec.excited_lines.back() + 2 * c.s <= g.nyquist_line(),
          "spec: max excited line + 2s exceeds N/2; collection lines do not fit on the grid");
}

/// Build a multisine design on `grid`.
///
/// Random-phase designs take the band as a frequency interval (all lines in it)
/// or an explicit line list. Phase-coupled designs generate the couple pattern
/// (m, m+s), m = d/2 + d i, and keep the couples that lie inside the band and
/// whose collection lines fit on the grid; an explicit i_max overrides the band.
inline MultisineSpec design_multisine(MultisineKind kind, FrequencyGrid grid, std::optional<BandSpec> band,
                                      const AmplitudeProfile& profile = {},
                                      std::optional<CouplingParams> coupling = std::nullopt) {
  using detail::require;
  grid = FrequencyGrid::make(grid.n_samples, grid.sample_rate);
  require(coupling.has_value() == is_phase_coupled(kind),
          "design_multisine: coupling parameters are required exactly for phase-coupled kinds");

  MultisineSpec spec;
  spec.grid = grid;
  spec.kind = kind;
  const long nyq = grid.nyquist_line();
  auto in_band = [&](long k) {
    if (!band) return k > 0 && k <= nyq;
    if (const auto* fb = std::get_if<FrequencyBand>(&*band)) {
      const double f = grid.line_frequency(static_cast<double>(k));
      return k > 0 && f >= fb->f_min && f <= fb->f_max;
    }
    const auto& lines = std::get<std::vector<long>>(*band);
    return std::find(lines.begin(), lines.end(), k) != lines.end();
  };

  if (!is_phase_coupled(kind)) {
    if (band && std::holds_alternative<std::vector<long>>(*band)) {
      spec.excited_lines = std::get<std::vector<long>>(*band);
      std::sort(spec.excited_lines.begin(), spec.excited_lines.end());
      spec.excited_lines.erase(std::unique(spec.excited_lines.begin(), spec.excited_lines.end()),
                               spec.excited_lines.end());
    } else {
      for (long k = 1; k <= nyq; ++k)
        if (in_band(k)) spec.excited_lines.push_back(k);
    }
  } else {
    detail::validate_coupling_params(kind, coupling->d, coupling->c_shift);
    Coupling c;
    c.d = coupling->d;
    c.c_shift = coupling->c_shift;
    c.s = detail::shift_for(kind, c.d, c.c_shift);
    if (coupling->i_max) {
      require(*coupling->i_max >= 0, "design_multisine: i_max must be nonnegative");
      c.i_min = 0;
      c.i_max = *coupling->i_max;
      for (int i = 0; i <= c.i_max; ++i)
        require(!band || (in_band(c.m_of(i)) && in_band(c.m_of(i) + c.s)),
                "design_multisine: couple i=" + std::to_string(i) + " lies outside the band");
    } else {
      int first = -1;
      int last = -1;
      for (int i = 0; c.m_of(i) + 3L * c.s <= nyq; ++i) {
        if (in_band(c.m_of(i)) && in_band(c.m_of(i) + c.s)) {
          if (first < 0) first = i;
          last = i;
        } else if (first >= 0) {
          break;
        }
      }
      require(first >= 0, "design_multisine: no couple fits inside the band and on the grid");
      c.i_min = first;
      c.i_max = last;
    }
    for (long m : c.couples()) {
      spec.excited_lines.push_back(m);
      spec.excited_lines.push_back(m + c.s);
    }
    std::sort(spec.excited_lines.begin(), spec.excited_lines.end());
    spec.coupling = c;
  }
  require(!spec.excited_lines.empty(), "design_multisine: empty excited line set");

  const double flat = profile.flat_level / std::sqrt(static_cast<double>(grid.n_samples));
  for (long k : spec.excited_lines) {
    if (profile.per_line.empty()) {
      spec.amplitudes[k] = flat;
    } else {
      auto it = profile.per_line.find(k);
      require(it != profile.per_line.end(), "design_multisine: amplitude profile misses line " + std::to_string(k));
      spec.amplitudes[k] = it->second;
    }
  }
  validate(spec);
  return spec;
}

struct Scaling {
  enum class Kind { None, Rms, PeakAbs };
  Kind kind = Kind::None;
  double target = 1.0;

  static Scaling none() { return {}; }
  static Scaling rms(double v) { return {Kind::Rms, v}; }
  static Scaling peak_abs(double v) { return {Kind::PeakAbs, v}; }
};

/// rms of the multisine built from spec amplitudes (phase independent).
inline double multisine_rms(const MultisineSpec& spec) {
  double p = 0.0;
  for (long k : spec.excited_lines) {
    const double a = spec.amplitude(k);
    p += (k == spec.grid.nyquist_line() ? 1.0 : 2.0) * a * a;
  }
  return std::sqrt(p);
}

struct SignalRealization {
  MultisineSpec spec;            // as designed (unscaled amplitudes)
  std::uint64_t seed = 0;
  std::size_t n_periods = 1;
  Scaling scaling;
  double gain = 1.0;             // common factor applied to all amplitudes
  std::map<long, double> phases;  // per excited line; coupled lines share a value
  Spectrum fourier_coeffs;       // U_k of the multisine sum (not the unitary DFT)
  std::vector<double> time_series;

  std::size_t period_length() const { return spec.grid.n_samples; }
  std::span<const double> one_period() const {
    return std::span<const double>(time_series).first(period_length());
  }
  /// Spec with amplitudes multiplied by the realized gain.
  MultisineSpec effective_spec() const {
    MultisineSpec out = spec;
    for (auto& [k, a] : out.amplitudes) a *= gain;
    return out;
  }
};

/// Draw phases and synthesize the periodic time signal.
///
/// Phases are i.i.d. uniform on [0, 2 pi), one per line (random phase) or one
/// per couple (phase-coupled). Deterministic in (spec, seed).
inline SignalRealization realize(const MultisineSpec& spec, std::uint64_t seed, std::size_t n_periods,
                                 Scaling scaling = Scaling::none()) {
  validate(spec);
  detail::require(n_periods >= 1, "realize: n_periods must be >= 1");
  const std::size_t n = spec.grid.n_samples;

  SignalRealization r;
  r.spec = spec;
  r.seed = seed;
  r.n_periods = n_periods;
  r.scaling = scaling;

  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> uni(0.0, 2.0 * std::numbers::pi);
  if (spec.coupling) {
    for (long m : spec.couples()) {
      const double phi = uni(gen);
      r.phases[m] = phi;
      r.phases[m + spec.s()] = phi;
    }
  } else {
    for (long k : spec.excited_lines) r.phases[k] = uni(gen);
  }

  Spectrum coeffs(n);
  for (long k : spec.excited_lines) {
    const cplx uk = std::polar(spec.amplitude(k), r.phases[k]);
    if (k == spec.grid.nyquist_line()) {
      coeffs.at(k) = uk.real();
    } else {
      coeffs.at(k) = uk;
      coeffs.at(-k) = std::conj(uk);
    }
  }

  // u(t) = sum_k U_k e^{j 2 pi k t / N} = sqrt(N) * idft(U).
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  std::vector<double> u = idft(coeffs);
  for (auto& v : u) v *= sqrt_n;

  double gain = 1.0;
  if (scaling.kind == Scaling::Kind::Rms) {
    detail::require(scaling.target > 0.0, "realize: rms target must be positive");
    gain = scaling.target / multisine_rms(spec);
  } else if (scaling.kind == Scaling::Kind::PeakAbs) {
    detail::require(scaling.target > 0.0, "realize: peak target must be positive");
    double peak = 0.0;
    for (double v : u) peak = std::max(peak, std::abs(v));
    gain = scaling.target / peak;
  }
  if (gain != 1.0) {
    for (auto& v : u) v *= gain;
    for (auto& c : coeffs.raw()) c *= gain;
  }
  r.gain = gain;
  r.fourier_coeffs = std::move(coeffs);

  r.time_series.reserve(n * n_periods);
  for (std::size_t p = 0; p < n_periods; ++p) r.time_series.insert(r.time_series.end(), u.begin(), u.end());
  return r;
}

/// Delay one period of a periodic signal by `delta` samples (fractional allowed):
/// X(k) -> X(k) e^{j k D}, D = -2 pi delta / N.
inline std::vector<double> shift_time_origin(std::span<const double> x, double delta) {
  if (delta == 0.0) return std::vector<double>(x.begin(), x.end());
  Spectrum spec = dft(x);
  const std::size_t n = spec.size();
  const double big_delta = -2.0 * std::numbers::pi * delta / static_cast<double>(n);
  for (long k = spec.min_line(); k <= spec.max_line(); ++k) {
    const double ang = static_cast<double>(k) * big_delta;
    if (n % 2 == 0 && k == spec.max_line()) {
      spec.at(k) *= std::cos(ang);
    } else {
      spec.at(k) *= cplx(std::cos(ang), std::sin(ang));
    }
  }
  return idft(spec);
}

/// Apply shift_time_origin to every period of a multi-period record.
inline std::vector<double> shift_record(std::span<const double> record, std::size_t n, double delta) {
  detail::require(n > 0 && record.size() % n == 0, "shift_record: record is not a whole number of periods");
  std::vector<double> out;
  out.reserve(record.size());
  for (std::size_t p = 0; p < record.size() / n; ++p) {
    const auto shifted = shift_time_origin(record.subspan(p * n, n), delta);
    out.insert(out.end(), shifted.begin(), shifted.end());
  }
  return out;
}

}  // namespace whinit
