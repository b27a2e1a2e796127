#pragma once

// Run configuration: sectioned key = value text, dotted-key overrides and a
// canonical echo that round-trips.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "gridmanip/core.hpp"
#include "gridmanip/gridsim.hpp"
#include "gridmanip/policy.hpp"
#include "gridmanip/qfunc.hpp"
#include "gridmanip/replay.hpp"
#include "gridmanip/reward.hpp"

namespace gridmanip {

enum class RewardMode : std::uint8_t { TaskProgressGaussian, Baseline };
enum class PolicyMode : std::uint8_t { LossAdjusted, DecayingEpsilon };

struct RunConfig {
  TaskConfig task = TaskConfig::stacking(5, 2, 10);
  RewardMode reward_mode = RewardMode::TaskProgressGaussian;
  RewardParams reward;
  PolicyMode policy_mode = PolicyMode::LossAdjusted;
  ExplorationState exploration;
  int hidden = 16;
  TrainParams train;
  ReplayParams replay;
  std::int64_t train_steps = 2000;
  int eval_runs = 30;
  int window = 100;
  std::int64_t checkpoint_every = 500;
  std::uint64_t seed = 1;
  int ablation_seeds = 5;

  void validate() const {
    task.validate();
    reward.validate();
    exploration.validate();
    train.validate();
    replay.validate();
    if (hidden < 1) throw ConfigError("network: hidden must be >= 1");
    if (train_steps < 0) throw ConfigError("run: train_steps must be >= 0");
    if (eval_runs < 1) throw ConfigError("run: eval_runs must be >= 1");
    if (window < 1) throw ConfigError("run: window must be >= 1");
    if (checkpoint_every < 0) throw ConfigError("run: checkpoint_every must be >= 0");
    if (ablation_seeds < 1) throw ConfigError("ablation: seeds must be >= 1");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const std::string t = trim(text);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty())
    throw ConfigError("config: bad value '" + text + "' for key '" + key + "'");
  return value;
}

struct KeySpec {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T, typename Field>
KeySpec number_key(const std::string& name, Field field) {
  return {[field](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(field(c));
            else return std::to_string(field(c));
          },
          [field, name](RunConfig& c, const std::string& v) { field(c) = parse_number<T>(name, v); }};
}

inline std::string allowed_to_string(const TaskConfig& t) {
  std::string out;
  for (Primitive p : kPrimitives)
    if (t.allows(p)) out += (out.empty() ? "" : ",") + std::string(to_string(p));
  return out;
}

inline std::array<bool, kNumPrimitives> allowed_from_string(const std::string& text) {
  std::array<bool, kNumPrimitives> allowed{};
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const std::string name = trim(item);
    if (!name.empty()) allowed[index_of(primitive_from_string(name))] = true;
  }
  return allowed;
}

// Keys in canonical (echo) order.
inline const std::vector<std::pair<std::string, KeySpec>>& key_table() {
  static const std::vector<std::pair<std::string, KeySpec>> table = [] {
    std::vector<std::pair<std::string, KeySpec>> t;
    auto add = [&](std::string name, KeySpec spec) { t.emplace_back(std::move(name), std::move(spec)); };
    // [run]
    add("run.seed", number_key<std::uint64_t>("run.seed", [](auto& c) -> auto& { return c.seed; }));
    add("run.train_steps", number_key<std::int64_t>("run.train_steps", [](auto& c) -> auto& { return c.train_steps; }));
    add("run.eval_runs", number_key<int>("run.eval_runs", [](auto& c) -> auto& { return c.eval_runs; }));
    add("run.window", number_key<int>("run.window", [](auto& c) -> auto& { return c.window; }));
    add("run.checkpoint_every", number_key<std::int64_t>("run.checkpoint_every", [](auto& c) -> auto& { return c.checkpoint_every; }));
    // [task]
    add("task.kind", {[](const RunConfig& c) { return std::string(to_string(c.task.kind)); },
                      [](RunConfig& c, const std::string& v) { c.task.kind = task_kind_from_string(trim(v)); }});
    add("task.width", number_key<int>("task.width", [](auto& c) -> auto& { return c.task.width; }));
    add("task.height", number_key<int>("task.height", [](auto& c) -> auto& { return c.task.height; }));
    add("task.n_blocks", number_key<int>("task.n_blocks", [](auto& c) -> auto& { return c.task.n_blocks; }));
    add("task.goal_stack_height", number_key<int>("task.goal_stack_height", [](auto& c) -> auto& { return c.task.goal_stack_height; }));
    add("task.allowed_primitives", {[](const RunConfig& c) { return allowed_to_string(c.task); },
                                    [](RunConfig& c, const std::string& v) { c.task.allowed = allowed_from_string(v); }});
    add("task.max_steps", number_key<int>("task.max_steps", [](auto& c) -> auto& { return c.task.max_steps; }));
    add("task.push_distance", number_key<int>("task.push_distance", [](auto& c) -> auto& { return c.task.push_distance; }));
    add("task.fail_limit", number_key<int>("task.fail_limit", [](auto& c) -> auto& { return c.task.fail_limit; }));
    add("task.rotations", number_key<int>("task.rotations", [](auto& c) -> auto& { return c.task.rotations; }));
    add("task.layout", {[](const RunConfig& c) {
                          std::string out;
                          for (const auto& row : c.task.layout) out += (out.empty() ? "" : "/") + row;
                          return out;
                        },
                        [](RunConfig& c, const std::string& v) {
                          c.task.layout.clear();
                          std::istringstream in(trim(v));
                          std::string row;
                          while (std::getline(in, row, '/'))
                            if (!trim(row).empty()) c.task.layout.push_back(trim(row));
                        }});
    // [reward]
    add("reward.mode", {[](const RunConfig& c) { return std::string(c.reward_mode == RewardMode::Baseline ? "baseline" : "tpg"); },
                        [](RunConfig& c, const std::string& v) {
                          const std::string m = trim(v);
                          if (m == "tpg") c.reward_mode = RewardMode::TaskProgressGaussian;
                          else if (m == "baseline") c.reward_mode = RewardMode::Baseline;
                          else throw ConfigError("config: bad value '" + v + "' for key 'reward.mode'");
                        }});
    add("reward.weight_push", number_key<double>("reward.weight_push", [](auto& c) -> auto& { return c.reward.weights[0]; }));
    add("reward.weight_pick", number_key<double>("reward.weight_pick", [](auto& c) -> auto& { return c.reward.weights[1]; }));
    add("reward.weight_place", number_key<double>("reward.weight_place", [](auto& c) -> auto& { return c.reward.weights[2]; }));
    add("reward.sigma_y", number_key<double>("reward.sigma_y", [](auto& c) -> auto& { return c.reward.sigma_y; }));
    add("reward.anisotropy", number_key<double>("reward.anisotropy", [](auto& c) -> auto& { return c.reward.anisotropy; }));
    // [policy]
    add("policy.mode", {[](const RunConfig& c) { return std::string(c.policy_mode == PolicyMode::LossAdjusted ? "lae" : "egreedy"); },
                        [](RunConfig& c, const std::string& v) {
                          const std::string m = trim(v);
                          if (m == "lae") c.policy_mode = PolicyMode::LossAdjusted;
                          else if (m == "egreedy") c.policy_mode = PolicyMode::DecayingEpsilon;
                          else throw ConfigError("config: bad value '" + v + "' for key 'policy.mode'");
                        }});
    add("policy.epsilon_init", number_key<double>("policy.epsilon_init", [](auto& c) -> auto& { return c.exploration.epsilon_init; }));
    add("policy.beta", number_key<double>("policy.beta", [](auto& c) -> auto& { return c.exploration.beta; }));
    add("policy.sigma", number_key<double>("policy.sigma", [](auto& c) -> auto& { return c.exploration.sigma; }));
    add("policy.alpha_scale", number_key<double>("policy.alpha_scale", [](auto& c) -> auto& { return c.exploration.alpha_scale; }));
    // [network]
    add("network.hidden", number_key<int>("network.hidden", [](auto& c) -> auto& { return c.hidden; }));
    add("network.gamma", number_key<double>("network.gamma", [](auto& c) -> auto& { return c.train.gamma; }));
    add("network.learning_rate", number_key<double>("network.learning_rate", [](auto& c) -> auto& { return c.train.learning_rate; }));
    add("network.momentum", number_key<double>("network.momentum", [](auto& c) -> auto& { return c.train.momentum; }));
    add("network.loss_alpha", number_key<double>("network.loss_alpha", [](auto& c) -> auto& { return c.train.loss_alpha; }));
    add("network.loss_scale", number_key<double>("network.loss_scale", [](auto& c) -> auto& { return c.train.loss_scale; }));
    add("network.batch_size", number_key<int>("network.batch_size", [](auto& c) -> auto& { return c.train.batch_size; }));
    // [replay]
    add("replay.capacity", number_key<std::size_t>("replay.capacity", [](auto& c) -> auto& { return c.replay.capacity; }));
    add("replay.rank_exponent", number_key<double>("replay.rank_exponent", [](auto& c) -> auto& { return c.replay.rank_exponent; }));
    // [ablation]
    add("ablation.seeds", number_key<int>("ablation.seeds", [](auto& c) -> auto& { return c.ablation_seeds; }));
    return t;
  }();
  return table;
}

inline const KeySpec& lookup_key(const std::string& key) {
  for (const auto& [name, spec] : key_table())
    if (name == key) return spec;
  throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace detail

/// Sets one dotted key from text. Unknown keys are rejected by name.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  detail::lookup_key(detail::trim(key)).set(cfg, value);
}

inline std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  return detail::lookup_key(detail::trim(key)).get(cfg);
}

/// Applies a "section.key=value" override.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("config: override '" + assignment + "' is not key=value");
  set_config_value(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

/// Reads sectioned key = value text on top of the defaults. Choosing a
/// task kind resets allowed primitives to that kind's default unless the
/// file names them.
inline RunConfig parse_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig cfg;
  bool allowed_given = false;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: key '" + section + "' outside any section");
    for (const auto& [key, value] : body) {
      const std::string dotted = section + "." + key;
      set_config_value(cfg, dotted, value.data());
      if (dotted == "task.allowed_primitives") allowed_given = true;
    }
  }
  if (!allowed_given) {
    if (cfg.task.kind == TaskKind::BlockStacking) cfg.task.allowed = {false, true, true};
    else cfg.task.allowed = {true, true, false};
  }
  if (cfg.task.kind == TaskKind::ScriptedArrangement && !cfg.task.layout.empty()) {
    const TaskConfig scripted = TaskConfig::scripted(cfg.task.layout);
    cfg.task.width = scripted.width;
    cfg.task.height = scripted.height;
    cfg.task.n_blocks = scripted.n_blocks;
  }
  return cfg;
}

inline RunConfig parse_config_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  return parse_config(in);
}

/// Canonical text form; parse_config_text(echo_config(c)) reproduces c.
inline std::string echo_config(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& [name, spec] : detail::key_table()) {
    const auto dot = name.find('.');
    const std::string sec = name.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out << '\n';
      out << '[' << sec << "]\n";
      section = sec;
    }
    out << name.substr(dot + 1) << " = " << spec.get(cfg) << '\n';
  }
  return out.str();
}

inline std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(echo_config(cfg)); }

}  // namespace gridmanip
