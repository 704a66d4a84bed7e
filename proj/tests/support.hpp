#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include "whinit/pipeline.hpp"

namespace whinit::testing {

/// Poles of S(z) R(z e^{-j w_s}), each tagged with its true block.
struct TrueRoot {
  cplx value;
  BlockLabel label;
  bool real_pole_of_r = false;
};

inline std::vector<TrueRoot> true_shifted_poles(const WhModel& m, const MultisineSpec& spec) {
  const double w = 2.0 * std::numbers::pi * spec.s() / static_cast<double>(spec.grid.n_samples);
  std::vector<TrueRoot> out;
  for (auto p : m.r.poles()) out.push_back({p * std::polar(1.0, w), BlockLabel::InputR, std::abs(p.imag()) < 1e-9});
  for (auto p : m.s.poles()) out.push_back({p, BlockLabel::OutputS, false});
  return out;
}

/// For every pole entry of the report, the true root it is matched to
/// (bijective nearest-neighbour matching); -1 when counts differ.
inline std::vector<int> match_to_truth(const AssignmentReport& rep, const std::vector<TrueRoot>& truth) {
  std::vector<const AssignmentEntry*> poles;
  for (const auto& e : rep.entries)
    if (e.kind == RootKind::Pole) poles.push_back(&e);
  std::vector<int> out(poles.size(), -1);
  if (poles.size() != truth.size()) return out;
  std::vector<std::vector<double>> cost(poles.size(), std::vector<double>(truth.size()));
  for (std::size_t i = 0; i < poles.size(); ++i)
    for (std::size_t j = 0; j < truth.size(); ++j) cost[i][j] = std::abs(poles[i]->value - truth[j].value);
  const auto m = detail::min_cost_matching(cost);
  for (std::size_t i = 0; i < poles.size(); ++i) out[i] = static_cast<int>(m[i]);
  return out;
}

inline bool pole_labels_correct(const AssignmentReport& rep, const std::vector<TrueRoot>& truth) {
  const auto match = match_to_truth(rep, truth);
  std::size_t i = 0;
  for (const auto& e : rep.entries) {
    if (e.kind != RootKind::Pole) continue;
    if (match[i] < 0 || truth[static_cast<std::size_t>(match[i])].label != e.label) return false;
    ++i;
  }
  return true;
}

inline double rel_diff(cplx a, cplx b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

/// Random stable real TF with the given orders; poles inside radius `rmax`.
inline RationalTF random_stable_tf(std::mt19937_64& rng, int n_num, int n_den, double rmax = 0.9) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), rad(0.1, rmax), ang(0.1, 3.0);
  std::vector<cplx> poles;
  while (static_cast<int>(poles.size()) < n_den) {
    if (n_den - static_cast<int>(poles.size()) >= 2 && u(rng) > 0.0) {
      const cplx p = std::polar(rad(rng), ang(rng));
      poles.push_back(p);
      poles.push_back(std::conj(p));
    } else {
      poles.emplace_back(rmax * u(rng), 0.0);
    }
  }
  std::vector<double> b(static_cast<std::size_t>(n_num) + 1);
  for (auto& v : b) v = u(rng);
  if (b[0] == 0.0) b[0] = 1.0;
  return RationalTF::make(b, real_poly_from_roots(poles));
}

}  // namespace whinit::testing
