#pragma once

// Prioritized replay with stochastic rank-based sampling:
//   P(i) = (1 / rank_i)^omega / sum_j (1 / rank_j)^omega
// where rank 1 is the highest priority (ties: earlier insert first).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "gridmanip/core.hpp"
#include "gridmanip/transition.hpp"

#include <json.hpp>

namespace gridmanip {

/// Fewer sampleable items than requested.
class ReplayUnderfull : public std::runtime_error {
 public:
  ReplayUnderfull() : std::runtime_error("replay buffer has too few sampleable transitions") {}
};

struct ReplayParams {
  std::size_t capacity = 2000;
  double rank_exponent = 0.7;

  void validate() const {
    if (capacity < 1) throw ConfigError("replay: capacity must be >= 1");
    if (!(rank_exponent >= 0.0)) throw ConfigError("replay: rank_exponent must be >= 0");
  }
};

inline constexpr double kPriorityFloor = 1e-6;

class ReplayBuffer {
 public:
  explicit ReplayBuffer(ReplayParams params = {}) : params_(params) { params_.validate(); }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return params_.capacity; }
  const ReplayParams& params() const { return params_; }

  std::size_t sampleable() const {
    return items_.empty() ? 0 : items_.size() - (items_.back().pending() ? 1 : 0);
  }

  bool has_pending() const { return !items_.empty() && items_.back().pending(); }

  /// Stores `t` at the current maximum priority (1.0 when empty) and
  /// returns its insert index. The new item stays pending until
  /// finalize_pending unless it already carries a next reward.
  std::uint64_t push(Transition t) {
    if (has_pending()) throw ContractError("replay: push while a transition is still pending");
    double max_p = 0.0;
    for (const auto& it : items_) max_p = std::max(max_p, it.priority);
    t.priority = items_.empty() ? 1.0 : max_p;
    t.insert_index = next_index_++;
    if (items_.size() == params_.capacity) items_.pop_front();
    items_.push_back(std::move(t));
    return items_.back().insert_index;
  }

  void finalize_pending(double next_reward) {
    if (!has_pending()) throw ContractError("replay: no pending transition to finalize");
    items_.back().next_reward = next_reward;
  }

  /// Sampleable insert indices ordered by rank (best first).
  std::vector<std::uint64_t> ranked() const {
    std::vector<const Transition*> order;
    order.reserve(items_.size());
    for (const auto& it : items_)
      if (!it.pending()) order.push_back(&it);
    std::stable_sort(order.begin(), order.end(),
                     [](const Transition* a, const Transition* b) { return a->priority > b->priority; });
    std::vector<std::uint64_t> out;
    out.reserve(order.size());
    for (const auto* t : order) out.push_back(t->insert_index);
    return out;
  }

  /// Rank-law probabilities aligned with ranked().
  std::vector<double> rank_probabilities() const {
    const std::size_t n = sampleable();
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = std::pow(1.0 / static_cast<double>(i + 1), params_.rank_exponent);
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& v : w) v /= total;
    return w;
  }

  /// Draws k distinct insert indices; each draw follows the rank law
  /// renormalized over the items not yet drawn.
  std::vector<std::uint64_t> sample(std::size_t k, Rng& rng) const {
    const std::vector<std::uint64_t> order = ranked();
    if (order.size() < k || k == 0) throw ReplayUnderfull();
    std::vector<double> w(order.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::pow(1.0 / static_cast<double>(i + 1), params_.rank_exponent);
    std::vector<std::uint64_t> picked;
    picked.reserve(k);
    for (std::size_t draw = 0; draw < k; ++draw) {
      double total = 0.0;
      for (double v : w) total += v;
      double u = rng.uniform01() * total;
      std::size_t chosen = w.size();
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] == 0.0) continue;
        chosen = i;
        if (u < w[i]) break;
        u -= w[i];
      }
      picked.push_back(order[chosen]);
      w[chosen] = 0.0;
    }
    return picked;
  }

  /// nullptr when the index has been evicted.
  const Transition* find(std::uint64_t insert_index) const {
    if (items_.empty()) return nullptr;
    const std::uint64_t first = items_.front().insert_index;
    if (insert_index < first || insert_index - first >= items_.size()) return nullptr;
    return &items_[static_cast<std::size_t>(insert_index - first)];
  }

  Transition* find(std::uint64_t insert_index) {
    return const_cast<Transition*>(std::as_const(*this).find(insert_index));
  }

  /// priority <- |loss| + floor; stale indices are skipped.
  void update_priorities(std::span<const std::uint64_t> indices, std::span<const double> losses) {
    if (indices.size() != losses.size()) throw ContractError("replay: indices/losses size mismatch");
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (Transition* t = find(indices[i])) t->priority = std::abs(losses[i]) + kPriorityFloor;
    }
  }

  const std::deque<Transition>& items() const { return items_; }

  /// Debug dump: one JSON object per item (no grids).
  void dump(std::ostream& out) const {
    for (const auto& t : items_) {
      nlohmann::json j;
      j["insert_index"] = t.insert_index;
      j["priority"] = t.priority;
      j["primitive"] = std::string(to_string(t.action.primitive));
      j["x"] = t.action.x;
      j["y"] = t.action.y;
      j["theta"] = t.action.theta_index;
      j["q"] = t.action.q_value;
      j["reward"] = t.reward;
      j["next_reward"] = t.next_reward ? nlohmann::json(*t.next_reward) : nlohmann::json(nullptr);
      out << j.dump() << '\n';
    }
  }

 private:
  ReplayParams params_;
  std::deque<Transition> items_;
  std::uint64_t next_index_ = 0;
};

}  // namespace gridmanip
