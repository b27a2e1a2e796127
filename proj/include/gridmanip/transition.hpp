#pragma once

#include <cstdint>
#include <optional>

#include "gridmanip/core.hpp"
#include "gridmanip/gridsim.hpp"
#include "gridmanip/reward.hpp"

namespace gridmanip {

inline constexpr int kContextChannels = kNumPrimitives;

/// Previous-action conditioning: one channel per primitive, holding the
/// previous action's Q at its pose and zero elsewhere.
struct PrevActionContext {
  std::optional<Action> previous;

  Planes render(int height, int width) const {
    Planes ctx(kContextChannels, height, width);
    if (previous) {
      if (previous->x < 0 || previous->x >= width || previous->y < 0 || previous->y >= height)
        throw ContractError("PrevActionContext: previous pose outside the grid");
      ctx.at(index_of(previous->primitive), previous->y, previous->x) = previous->q_value;
    }
    return ctx;
  }

  bool operator==(const PrevActionContext&) const = default;
};

/// One replay item.
struct Transition {
  Observation observation;
  PrevActionContext context;
  Action action;
  double reward = 0.0;
  std::optional<double> next_reward;  // unknown until the following step
  RewardMap reward_map;
  double priority = 1.0;
  std::uint64_t insert_index = 0;

  bool pending() const { return !next_reward.has_value(); }
};

}  // namespace gridmanip
