#pragma once

// Action selection over per-primitive Q-map sets: loss-adjusted exploration,
// the decaying epsilon-greedy baseline, and greedy evaluation.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>

#include "gridmanip/core.hpp"
#include "gridmanip/gridsim.hpp"

namespace gridmanip {

/// Raised when every mask is empty; the caller ends the episode.
class NoValidAction : public std::runtime_error {
 public:
  NoValidAction() : std::runtime_error("no valid action in any mask") {}
};

struct ExplorationState {
  double epsilon = 0.5;
  double beta = 0.1;
  double sigma = 1.0;        // inverse sensitivity
  double alpha_scale = 1.0;  // loss scale inside the Boltzmann term
  double epsilon_init = 0.5;

  static ExplorationState initial(double epsilon_init, double beta, double sigma, double alpha_scale) {
    return {epsilon_init, beta, sigma, alpha_scale, epsilon_init};
  }

  void validate() const {
    if (!(epsilon_init >= 0.0 && epsilon_init < 1.0)) throw ConfigError("policy: epsilon_init must lie in [0, 1)");
    if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("policy: beta must lie in [0, 1)");
    if (!(sigma > 0.0)) throw ConfigError("policy: sigma must be positive");
    if (!(alpha_scale > 0.0)) throw ConfigError("policy: alpha_scale must be positive");
  }
};

/// Per-primitive R x h x w score grids; primitives the task disallows are absent.
struct QMapSet {
  std::array<std::optional<Planes>, kNumPrimitives> maps;

  const std::optional<Planes>& operator[](Primitive p) const { return maps[index_of(p)]; }
  std::optional<Planes>& operator[](Primitive p) { return maps[index_of(p)]; }
};

using MaskSet = std::array<Grid<bool>, kNumPrimitives>;

/// Bounded Boltzmann transform of the training loss, in [0, 1).
inline double boltzmann_loss_term(double loss, const ExplorationState& state) {
  const double e = std::exp(-std::abs(state.alpha_scale * loss) / state.sigma);
  return (1.0 - e) / (1.0 + e);
}

/// One step of the exploration-rate moving average.
inline ExplorationState update_exploration(ExplorationState state, double loss) {
  state.epsilon = state.beta * boltzmann_loss_term(loss, state) + (1.0 - state.beta) * state.epsilon;
  return state;
}

/// Baseline schedule: 0.5 at step 0 decaying to a 0.1 floor.
inline double epsilon_greedy_decay(std::int64_t step) {
  if (step < 0) throw ContractError("epsilon_greedy_decay: negative step");
  return 0.1 + 0.4 * std::pow(0.9998, static_cast<double>(step));
}

namespace detail {

inline bool usable(const QMapSet& q, const MaskSet& masks, Primitive p) {
  const auto& m = q[p];
  const auto& mask = masks[index_of(p)];
  if (!m || mask.size() == 0) return false;
  if (mask.height() != m->height() || mask.width() != m->width())
    throw ContractError("policy: mask shape does not match Q-map shape");
  return true;
}

}  // namespace detail

/// Deterministic argmax over valid entries; ties go to the lowest
/// (primitive, rotation, y, x).
inline Action greedy_action(const QMapSet& q, const MaskSet& masks) {
  std::optional<Action> best;
  for (Primitive p : kPrimitives) {
    if (!detail::usable(q, masks, p)) continue;
    const Planes& m = *q[p];
    const Grid<bool>& mask = masks[index_of(p)];
    for (int r = 0; r < m.channels(); ++r)
      for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
          if (!mask(y, x)) continue;
          const double v = m.at(r, y, x);
          if (!best || v > best->q_value) best = Action{p, x, y, r, v};
        }
  }
  if (!best) throw NoValidAction();
  return *best;
}

/// Uniform draw over valid (primitive, rotation, y, x) entries.
inline Action uniform_action(const QMapSet& q, const MaskSet& masks, Rng& rng) {
  std::array<std::uint64_t, kNumPrimitives> counts{};
  std::uint64_t total = 0;
  for (Primitive p : kPrimitives) {
    if (!detail::usable(q, masks, p)) continue;
    std::uint64_t cells = 0;
    for (bool b : masks[index_of(p)].data()) cells += b ? 1 : 0;
    counts[index_of(p)] = cells * static_cast<std::uint64_t>(q[p]->channels());
    total += counts[index_of(p)];
  }
  if (total == 0) throw NoValidAction();
  std::uint64_t k = rng.uniform_index(total);
  for (Primitive p : kPrimitives) {
    if (k >= counts[index_of(p)]) {
      k -= counts[index_of(p)];
      continue;
    }
    const Planes& m = *q[p];
    const Grid<bool>& mask = masks[index_of(p)];
    const std::uint64_t cells = counts[index_of(p)] / m.channels();
    const int r = static_cast<int>(k / cells);
    std::uint64_t nth = k % cells;
    for (int y = 0; y < m.height(); ++y)
      for (int x = 0; x < m.width(); ++x) {
        if (!mask(y, x)) continue;
        if (nth-- == 0) return Action{p, x, y, r, m.at(r, y, x)};
      }
  }
  throw NoValidAction();  // unreachable with consistent counts
}

/// Epsilon-greedy step: explore uniformly when a fresh uniform draw falls
/// below epsilon, otherwise act greedily.
inline Action select_action(const QMapSet& q, const MaskSet& masks, double epsilon, Rng& rng) {
  const double xi = rng.uniform01();
  if (xi < epsilon) return uniform_action(q, masks, rng);
  return greedy_action(q, masks);
}

inline Action select_action(const QMapSet& q, const MaskSet& masks, const ExplorationState& state, Rng& rng) {
  return select_action(q, masks, state.epsilon, rng);
}

}  // namespace gridmanip
