#pragma once

// Deterministic grid manipulation environment.
//
// Blocks are unit cubes living in per-cell stacks. The agent acts through
// three primitives (push, pick, place), each parameterized by a cell and a
// rotation index. Everything a learner sees is rendered from the Workspace.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gridmanip/core.hpp"

namespace gridmanip {

enum class Primitive : std::uint8_t { Push = 0, Pick = 1, Place = 2 };

inline constexpr std::array<Primitive, 3> kPrimitives{Primitive::Push, Primitive::Pick, Primitive::Place};
inline constexpr int kNumPrimitives = 3;

inline constexpr int index_of(Primitive p) { return static_cast<int>(p); }

inline std::string_view to_string(Primitive p) {
  switch (p) {
    case Primitive::Push: return "push";
    case Primitive::Pick: return "pick";
    case Primitive::Place: return "place";
  }
  return "?";
}

inline Primitive primitive_from_string(std::string_view s) {
  for (Primitive p : kPrimitives)
    if (to_string(p) == s) return p;
  throw ConfigError("unknown primitive '" + std::string(s) + "'");
}

/// Primitive type plus pixel pose; q_value is the score recorded when the
/// action was chosen.
struct Action {
  Primitive primitive = Primitive::Pick;
  int x = 0;
  int y = 0;
  int theta_index = 0;
  double q_value = 0.0;

  bool operator==(const Action&) const = default;
};

enum class TaskKind : std::uint8_t { ClutterRemoval, BlockStacking, ScriptedArrangement };

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::ClutterRemoval: return "clutter";
    case TaskKind::BlockStacking: return "stacking";
    case TaskKind::ScriptedArrangement: return "scripted";
  }
  return "?";
}

inline TaskKind task_kind_from_string(std::string_view s) {
  if (s == "clutter") return TaskKind::ClutterRemoval;
  if (s == "stacking") return TaskKind::BlockStacking;
  if (s == "scripted") return TaskKind::ScriptedArrangement;
  throw ConfigError("unknown task kind '" + std::string(s) + "'");
}

/// Rotation r of R, in radians.
inline double rotation_angle(int theta_index, int rotations) {
  return 2.0 * std::numbers::pi * theta_index / rotations;
}

/// cos/sin of rotation r of R, exact at multiples of 90 degrees.
inline std::pair<double, double> rotation_cos_sin(int theta_index, int rotations) {
  if ((4 * theta_index) % rotations == 0) {
    switch (((4 * theta_index) / rotations) % 4) {
      case 0: return {1.0, 0.0};
      case 1: return {0.0, 1.0};
      case 2: return {-1.0, 0.0};
      default: return {0.0, -1.0};
    }
  }
  const double a = rotation_angle(theta_index, rotations);
  return {std::cos(a), std::sin(a)};
}

/// Unit grid step along rotation r (image frame: x right, y down).
inline std::pair<int, int> rotation_step(int theta_index, int rotations) {
  const auto [c, s] = rotation_cos_sin(theta_index, rotations);
  return {static_cast<int>(std::lround(c)), static_cast<int>(std::lround(s))};
}

struct TaskConfig {
  TaskKind kind = TaskKind::BlockStacking;
  int width = 14;
  int height = 14;
  int n_blocks = 10;
  int goal_stack_height = 4;
  std::array<bool, kNumPrimitives> allowed{false, true, true};
  int max_steps = 0;  // 0 selects 8 * n_blocks
  int push_distance = 2;
  int fail_limit = 10;
  int rotations = 4;
  std::vector<std::string> layout;  // ScriptedArrangement only

  static TaskConfig clutter(int n_blocks, int size = 14) {
    TaskConfig t;
    t.kind = TaskKind::ClutterRemoval;
    t.width = t.height = size;
    t.n_blocks = n_blocks;
    t.allowed = {true, true, false};
    return t;
  }

  static TaskConfig stacking(int n_blocks, int goal, int size = 14) {
    TaskConfig t;
    t.kind = TaskKind::BlockStacking;
    t.width = t.height = size;
    t.n_blocks = n_blocks;
    t.goal_stack_height = goal;
    t.allowed = {false, true, true};
    return t;
  }

  /// Scripted arrangement from a text grid; digits are stack heights, '.'
  /// or '0' an empty cell.
  static TaskConfig scripted(const std::vector<std::string>& rows) {
    TaskConfig t;
    t.kind = TaskKind::ScriptedArrangement;
    t.allowed = {true, true, false};
    t.layout = rows;
    t.height = static_cast<int>(rows.size());
    t.width = rows.empty() ? 0 : static_cast<int>(rows.front().size());
    t.n_blocks = 0;
    for (const auto& row : rows)
      for (char ch : row)
        if (ch >= '1' && ch <= '9') t.n_blocks += ch - '0';
    return t;
  }

  bool allows(Primitive p) const { return allowed[index_of(p)]; }

  int horizon() const { return max_steps > 0 ? max_steps : 8 * n_blocks; }

  void validate() const {
    if (width <= 0 || height <= 0) throw ConfigError("task: grid dimensions must be positive");
    if (n_blocks <= 0) throw ConfigError("task: n_blocks must be positive");
    if (std::none_of(allowed.begin(), allowed.end(), [](bool b) { return b; }))
      throw ConfigError("task: allowed_primitives must be nonempty");
    if (rotations < 1 || rotations > 18) throw ConfigError("task: rotations must be in [1, 18]");
    if (push_distance < 1) throw ConfigError("task: push_distance must be >= 1");
    if (fail_limit < 1) throw ConfigError("task: fail_limit must be >= 1");
    if (max_steps < 0) throw ConfigError("task: max_steps must be >= 0");
    if (kind == TaskKind::BlockStacking) {
      if (goal_stack_height < 2 || goal_stack_height > n_blocks)
        throw ConfigError("task: goal_stack_height must lie in [2, n_blocks]");
      if (!allows(Primitive::Pick) || !allows(Primitive::Place))
        throw ConfigError("task: stacking needs pick and place");
    } else if (!allows(Primitive::Pick)) {
      throw ConfigError("task: removal tasks need pick");
    }
    if (kind == TaskKind::ScriptedArrangement) {
      if (static_cast<int>(layout.size()) != height) throw ConfigError("task: layout row count != height");
      int total = 0;
      for (const auto& row : layout) {
        if (static_cast<int>(row.size()) != width) throw ConfigError("task: ragged layout row");
        for (char ch : row) {
          if (ch >= '1' && ch <= '9') total += ch - '0';
          else if (ch != '.' && ch != '0') throw ConfigError(std::string("task: bad layout character '") + ch + "'");
        }
      }
      if (total != n_blocks) throw ConfigError("task: n_blocks disagrees with layout");
    } else if (n_blocks > width * height) {
      throw ConfigError("task: grid too small for n_blocks");
    }
  }
};

/// Parses a text grid (one row per line; blank lines and '#' lines ignored).
inline std::vector<std::string> parse_layout(std::string_view text) {
  std::vector<std::string> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    rows.push_back(line);
  }
  return rows;
}

/// Authoritative simulator state.
struct Workspace {
  TaskConfig task;
  Grid<std::vector<int>> cells;  // bottom -> top block ids
  std::optional<int> gripper;
  int step_count = 0;
  int failure_streak = 0;
  int removed = 0;
  std::uint64_t rng_seed = 0;

  int width() const { return cells.width(); }
  int height() const { return cells.height(); }

  int stack_height(int y, int x) const { return static_cast<int>(cells(y, x).size()); }

  int max_stack_height() const {
    std::size_t best = 0;
    for (const auto& s : cells.data()) best = std::max(best, s.size());
    return static_cast<int>(best);
  }

  int blocks_on_grid() const {
    int n = 0;
    for (const auto& s : cells.data()) n += static_cast<int>(s.size());
    return n;
  }

  bool operator==(const Workspace& o) const {
    return cells == o.cells && gripper == o.gripper && step_count == o.step_count &&
           failure_streak == o.failure_streak && removed == o.removed && rng_seed == o.rng_seed;
  }
};

/// Observation channel order.
inline constexpr int kOccupancyChannel = 0;
inline constexpr int kHeightChannel = 1;
inline constexpr int kGripperChannel = 2;
inline constexpr int kObservationChannels = 3;

/// Multi-channel snapshot handed to the learner.
struct Observation {
  Planes channels;

  int height() const { return channels.height(); }
  int width() const { return channels.width(); }
  bool operator==(const Observation&) const = default;
};

enum class DoneReason : std::uint8_t { None, Goal, FailStreak, MaxSteps };

inline std::string_view to_string(DoneReason r) {
  switch (r) {
    case DoneReason::None: return "none";
    case DoneReason::Goal: return "goal";
    case DoneReason::FailStreak: return "fail_streak";
    case DoneReason::MaxSteps: return "max_steps";
  }
  return "?";
}

struct StepResult {
  Observation next_observation;
  int primitive_success = 0;  // subtask indicator, 0 or 1
  double progress = 0.0;
  bool done = false;
  DoneReason done_reason = DoneReason::None;
};

inline double height_normalizer(const TaskConfig& task) {
  return task.kind == TaskKind::BlockStacking ? task.goal_stack_height : std::max(1, task.n_blocks);
}

inline Observation render_observation(const Workspace& ws) {
  const int h = ws.height();
  const int w = ws.width();
  Observation obs{Planes(kObservationChannels, h, w)};
  const double norm = height_normalizer(ws.task);
  const double holding = ws.gripper ? 1.0 : 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int sh = ws.stack_height(y, x);
      obs.channels.at(kOccupancyChannel, y, x) = sh > 0 ? 1.0 : 0.0;
      obs.channels.at(kHeightChannel, y, x) = std::min(1.0, sh / norm);
      obs.channels.at(kGripperChannel, y, x) = holding;
    }
  }
  return obs;
}

/// Fraction of the task goal achieved in `ws`.
inline double task_progress(const Workspace& ws, const TaskConfig& task) {
  if (task.kind == TaskKind::BlockStacking)
    return std::clamp(static_cast<double>(ws.max_stack_height()) / task.goal_stack_height, 0.0, 1.0);
  return std::clamp(static_cast<double>(ws.removed) / task.n_blocks, 0.0, 1.0);
}

inline double task_progress(const Workspace& ws) { return task_progress(ws, ws.task); }

/// Seeds a fresh workspace; blocks land on distinct random cells unless
/// the task is a scripted arrangement.
inline std::pair<Workspace, Observation> reset(const TaskConfig& task, std::uint64_t seed) {
  task.validate();
  Workspace ws;
  ws.task = task;
  ws.rng_seed = seed;
  ws.cells = Grid<std::vector<int>>(task.height, task.width);
  if (task.kind == TaskKind::ScriptedArrangement) {
    int next_id = 0;
    for (int y = 0; y < task.height; ++y)
      for (int x = 0; x < task.width; ++x) {
        const char ch = task.layout[y][x];
        if (ch >= '1' && ch <= '9')
          for (int k = 0; k < ch - '0'; ++k) ws.cells(y, x).push_back(next_id++);
      }
  } else {
    Rng rng(seed);
    std::vector<int> order(static_cast<std::size_t>(task.width) * task.height);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    // Partial Fisher-Yates: the first n_blocks entries are the chosen cells.
    for (int i = 0; i < task.n_blocks; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.uniform_index(order.size() - i));
      std::swap(order[i], order[j]);
      ws.cells(order[i] / task.width, order[i] % task.width).push_back(i);
    }
  }
  Observation obs = render_observation(ws);
  return {std::move(ws), std::move(obs)};
}

/// Valid poses for a primitive in the current state.
inline Grid<bool> valid_action_mask(const Workspace& ws, Primitive primitive) {
  const int h = ws.height();
  const int w = ws.width();
  Grid<bool> mask(h, w, false);
  auto occupied = [&](int y, int x) { return ws.cells.contains(y, x) && !ws.cells(y, x).empty(); };
  switch (primitive) {
    case Primitive::Pick:
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) mask(y, x) = occupied(y, x);
      break;
    case Primitive::Push:
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          if (!occupied(y, x)) continue;
          for (int r = 0; r < ws.task.rotations && !mask(y, x); ++r) {
            const auto [dx, dy] = rotation_step(r, ws.task.rotations);
            mask(y, x) = ws.cells.contains(y + dy, x + dx) && !occupied(y + dy, x + dx);
          }
        }
      break;
    case Primitive::Place:
      if (!ws.gripper) break;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          mask(y, x) = occupied(y, x) || occupied(y - 1, x) || occupied(y + 1, x) || occupied(y, x - 1) ||
                       occupied(y, x + 1);
      break;
  }
  return mask;
}

namespace detail {

inline int apply_push(Workspace& ws, const Action& a) {
  if (ws.cells(a.y, a.x).empty()) return 0;
  const auto [dx, dy] = rotation_step(a.theta_index, ws.task.rotations);
  int x = a.x;
  int y = a.y;
  for (int k = 0; k < ws.task.push_distance; ++k) {
    const int nx = x + dx;
    const int ny = y + dy;
    if (!ws.cells.contains(ny, nx) || !ws.cells(ny, nx).empty()) break;
    x = nx;
    y = ny;
  }
  if (x == a.x && y == a.y) return 0;
  // The whole stack slides; no chain pushing.
  ws.cells(y, x) = std::move(ws.cells(a.y, a.x));
  ws.cells(a.y, a.x).clear();
  return 1;
}

inline int apply_pick(Workspace& ws, const Action& a) {
  auto& stack = ws.cells(a.y, a.x);
  if (stack.empty() || ws.gripper) return 0;
  const int id = stack.back();
  stack.pop_back();
  if (ws.task.kind == TaskKind::BlockStacking) ws.gripper = id;
  else ++ws.removed;
  return 1;
}

inline int apply_place(Workspace& ws, const Action& a) {
  if (!ws.gripper) return 0;
  const int before_max = ws.max_stack_height();
  auto& stack = ws.cells(a.y, a.x);
  stack.push_back(*ws.gripper);
  ws.gripper.reset();
  // The block is released either way; only raising the tallest stack counts.
  return static_cast<int>(stack.size()) > before_max ? 1 : 0;
}

}  // namespace detail

/// Executes one primitive and advances the episode bookkeeping.
inline StepResult step(Workspace& ws, const Action& a) {
  if (!ws.cells.contains(a.y, a.x)) throw ContractError("step: pose outside the grid");
  if (a.theta_index < 0 || a.theta_index >= ws.task.rotations) throw ContractError("step: theta_index out of range");
  if (!ws.task.allows(a.primitive))
    throw ContractError("step: primitive '" + std::string(to_string(a.primitive)) + "' not allowed by task");

  int success = 0;
  switch (a.primitive) {
    case Primitive::Push: success = detail::apply_push(ws, a); break;
    case Primitive::Pick: success = detail::apply_pick(ws, a); break;
    case Primitive::Place: success = detail::apply_place(ws, a); break;
  }
  ++ws.step_count;
  ws.failure_streak = success ? 0 : ws.failure_streak + 1;

  StepResult result;
  result.primitive_success = success;
  result.progress = task_progress(ws);
  if (result.progress >= 1.0) result.done_reason = DoneReason::Goal;
  else if (ws.failure_streak >= ws.task.fail_limit) result.done_reason = DoneReason::FailStreak;
  else if (ws.step_count >= ws.task.horizon()) result.done_reason = DoneReason::MaxSteps;
  result.done = result.done_reason != DoneReason::None;
  result.next_observation = render_observation(ws);
  return result;
}

/// Fewest actions that can finish the task.
inline int ideal_action_count(const TaskConfig& task) {
  if (task.kind == TaskKind::BlockStacking) return 2 * (task.goal_stack_height - 1);
  return task.n_blocks;
}

}  // namespace gridmanip
