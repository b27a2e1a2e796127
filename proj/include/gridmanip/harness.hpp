#pragma once

// Training loop, greedy evaluation protocol and the three-rung ablation.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "gridmanip/config.hpp"
#include "gridmanip/core.hpp"
#include "gridmanip/gridsim.hpp"
#include "gridmanip/policy.hpp"
#include "gridmanip/qfunc.hpp"
#include "gridmanip/replay.hpp"
#include "gridmanip/reward.hpp"

namespace gridmanip {

/// One per-step log line.
struct StepRecord {
  std::int64_t step = 0;
  int episode = 0;
  Action action;
  int success = 0;
  double progress = 0.0;
  double reward = 0.0;
  double target = 0.0;
  std::optional<double> loss;
  double epsilon = 0.0;
  DoneReason done_reason = DoneReason::None;
};

inline std::string to_json_line(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["episode"] = r.episode;
  j["primitive"] = std::string(to_string(r.action.primitive));
  j["x"] = r.action.x;
  j["y"] = r.action.y;
  j["theta"] = r.action.theta_index;
  j["q"] = r.action.q_value;
  j["success"] = r.success;
  j["progress"] = r.progress;
  j["reward"] = r.reward;
  j["y_target"] = r.target;
  j["loss"] = r.loss ? nlohmann::ordered_json(*r.loss) : nlohmann::ordered_json(nullptr);
  j["epsilon"] = r.epsilon;
  j["done"] = std::string(to_string(r.done_reason));
  return j.dump();
}

struct TrainReport {
  QNetwork network;
  ExplorationState exploration;
  std::int64_t steps = 0;
  int episodes_completed = 0;  // reached the goal
  int episodes_finished = 0;   // any terminal reason
  std::vector<double> success_curve;     // fraction of successful primitives per window
  std::vector<double> efficiency_curve;  // ideal / actual actions over goal episodes per window
};

struct TrainOptions {
  std::ostream* log = nullptr;
  std::string checkpoint_path;  // empty: no periodic checkpoints
};

inline MaskSet action_masks(const Workspace& ws) {
  MaskSet masks;
  for (Primitive p : kPrimitives)
    if (ws.task.allows(p)) masks[index_of(p)] = valid_action_mask(ws, p);
  return masks;
}

inline std::uint64_t training_episode_seed(std::uint64_t seed, int episode) {
  return derive_seed(seed, 0x1000000ULL + static_cast<std::uint64_t>(episode));
}

inline std::uint64_t evaluation_run_seed(std::uint64_t seed, int run) {
  return derive_seed(seed, 0xE000000ULL + static_cast<std::uint64_t>(run));
}

inline QNetwork initial_network(const RunConfig& cfg) {
  QNetwork q(cfg.task.height, cfg.task.width, cfg.task.rotations, cfg.hidden);
  q.initialize(derive_seed(cfg.seed, 0x11));
  return q;
}

/// Reward scalar and supervision map for an executed step.
inline std::pair<double, RewardMap> step_reward(const RunConfig& cfg, const Action& a, int success,
                                                double progress_before, double progress_after) {
  const int h = cfg.task.height;
  const int w = cfg.task.width;
  if (cfg.reward_mode == RewardMode::Baseline) {
    const double r = baseline_reward(success);
    return {r, baseline_reward_map(r, a.x, a.y, h, w)};
  }
  const double r = task_progress_step_reward(a.primitive, success, progress_before, progress_after, cfg.reward);
  return {r, tpg_reward_map(r, a.x, a.y, rotation_angle(a.theta_index, cfg.task.rotations), h, w, cfg.reward)};
}

/// Runs `cfg.train_steps` environment actions with online learning.
inline TrainReport train(const RunConfig& cfg, const TrainOptions& options = {}) {
  cfg.validate();
  const TaskConfig& task = cfg.task;
  const std::uint64_t hash = config_hash(cfg);

  TrainReport report;
  report.network = initial_network(cfg);
  report.exploration = ExplorationState::initial(cfg.exploration.epsilon_init, cfg.exploration.beta,
                                                 cfg.exploration.sigma, cfg.exploration.alpha_scale);
  QNetwork& q = report.network;
  ExplorationState& explore = report.exploration;
  if (!options.checkpoint_path.empty()) save_checkpoint(options.checkpoint_path, q, hash);

  Rng policy_rng(derive_seed(cfg.seed, 0x22));
  Rng replay_rng(derive_seed(cfg.seed, 0x33));
  ReplayBuffer buffer(cfg.replay);

  int episode = 0;
  auto [ws, obs] = reset(task, training_episode_seed(cfg.seed, episode));
  PrevActionContext ctx;
  int episode_actions = 0;
  std::optional<StepRecord> pending_record;

  int window_success = 0;
  int window_steps = 0;
  double window_ideal = 0.0;
  double window_actual = 0.0;
  const double ideal = ideal_action_count(task);

  auto emit = [&](StepRecord& rec, double next_reward) {
    rec.target = compute_target(rec.reward, next_reward, cfg.train.gamma);
    if (options.log) *options.log << to_json_line(rec) << '\n';
  };

  std::int64_t stalls = 0;
  for (std::int64_t t = 0; t < cfg.train_steps;) {
    const QMapSet qmaps = forward_all(q, obs, ctx, task);
    const MaskSet masks = action_masks(ws);
    const double epsilon =
        cfg.policy_mode == PolicyMode::LossAdjusted ? explore.epsilon : epsilon_greedy_decay(t);
    Action a;
    try {
      a = select_action(qmaps, masks, epsilon, policy_rng);
    } catch (const NoValidAction&) {
      // Nothing left to act on: close the episode and start a new one.
      if (buffer.has_pending()) buffer.finalize_pending(0.0);
      if (pending_record) emit(*pending_record, 0.0), pending_record.reset();
      if (++stalls > 1000) throw std::runtime_error("train: environment offers no valid actions");
      ++report.episodes_finished;
      std::tie(ws, obs) = reset(task, training_episode_seed(cfg.seed, ++episode));
      ctx = {};
      episode_actions = 0;
      continue;
    }

    const double progress_before = task_progress(ws);
    StepResult res = step(ws, a);
    auto [reward, map] = step_reward(cfg, a, res.primitive_success, progress_before, res.progress);

    if (buffer.has_pending()) buffer.finalize_pending(reward);
    if (pending_record) emit(*pending_record, reward), pending_record.reset();
    buffer.push(Transition{obs, ctx, a, reward, std::nullopt, std::move(map), 1.0, 0});
    if (res.done) buffer.finalize_pending(0.0);

    StepRecord rec;
    rec.step = t;
    rec.episode = episode;
    rec.action = a;
    rec.success = res.primitive_success;
    rec.progress = res.progress;
    rec.reward = reward;
    rec.epsilon = epsilon;
    rec.done_reason = res.done_reason;

    const std::size_t batch_size = static_cast<std::size_t>(cfg.train.batch_size);
    if (buffer.sampleable() >= batch_size) {
      const auto indices = buffer.sample(batch_size, replay_rng);
      std::vector<const Transition*> batch;
      batch.reserve(indices.size());
      for (auto idx : indices) batch.push_back(buffer.find(idx));
      const TrainStepResult tr = train_step(q, batch, cfg.train);
      buffer.update_priorities(indices, tr.item_losses);
      rec.loss = tr.loss;
      if (cfg.policy_mode == PolicyMode::LossAdjusted) explore = update_exploration(explore, tr.loss);
    }

    ++episode_actions;
    window_success += res.primitive_success;
    ++window_steps;
    if (res.done_reason == DoneReason::Goal) {
      window_ideal += ideal;
      window_actual += episode_actions;
      ++report.episodes_completed;
    }

    if (res.done) emit(rec, 0.0);
    else pending_record = rec;

    ++t;
    report.steps = t;
    if (window_steps == cfg.window) {
      report.success_curve.push_back(static_cast<double>(window_success) / window_steps);
      report.efficiency_curve.push_back(window_actual > 0.0 ? window_ideal / window_actual : 0.0);
      window_success = window_steps = 0;
      window_ideal = window_actual = 0.0;
    }
    if (!options.checkpoint_path.empty() && cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0)
      save_checkpoint(options.checkpoint_path, q, hash);

    if (res.done) {
      ++report.episodes_finished;
      std::tie(ws, obs) = reset(task, training_episode_seed(cfg.seed, ++episode));
      ctx = {};
      episode_actions = 0;
    } else {
      ctx = PrevActionContext{a};
      obs = std::move(res.next_observation);
    }
  }
  if (pending_record) emit(*pending_record, 0.0);
  if (!options.checkpoint_path.empty()) save_checkpoint(options.checkpoint_path, q, hash);
  return report;
}

/// Outcome of one greedy evaluation episode.
struct EvalRun {
  std::uint64_t seed = 0;
  int actions = 0;
  bool completed = false;
  DoneReason done_reason = DoneReason::None;
  int picks_attempted = 0;
  int picks_succeeded = 0;
  int picks_from_tallest = 0;  // picks aimed at a stack of height >= 2 that is currently the tallest
  double efficiency = 0.0;
};

struct Metrics {
  double completion_rate = 0.0;
  std::optional<double> pick_success;       // over completed runs
  std::optional<double> action_efficiency;  // over completed runs
  int completed_runs = 0;
  int eval_runs = 0;
  double tallest_pick_fraction = 0.0;  // over all evaluation picks
  std::vector<EvalRun> runs;
};

/// One deterministic greedy episode; never touches learning state.
inline EvalRun evaluate_run(const QNetwork& q, const TaskConfig& task, std::uint64_t seed,
                            const std::function<Action(const QMapSet&, const MaskSet&, const Workspace&)>& chooser = {}) {
  EvalRun run;
  run.seed = seed;
  auto [ws, obs] = reset(task, seed);
  PrevActionContext ctx;
  for (;;) {
    const MaskSet masks = action_masks(ws);
    QMapSet qmaps;
    Action a;
    try {
      if (chooser) {
        a = chooser(qmaps, masks, ws);
      } else {
        qmaps = forward_all(q, obs, ctx, task);
        a = greedy_action(qmaps, masks);
      }
    } catch (const NoValidAction&) {
      run.done_reason = DoneReason::FailStreak;
      break;
    }
    if (a.primitive == Primitive::Pick) {
      ++run.picks_attempted;
      const int max_h = ws.max_stack_height();
      if (max_h >= 2 && ws.stack_height(a.y, a.x) == max_h) ++run.picks_from_tallest;
    }
    StepResult res = step(ws, a);
    ++run.actions;
    if (a.primitive == Primitive::Pick) run.picks_succeeded += res.primitive_success;
    if (res.done) {
      run.done_reason = res.done_reason;
      run.completed = res.done_reason == DoneReason::Goal;
      break;
    }
    ctx = PrevActionContext{a};
    obs = std::move(res.next_observation);
  }
  if (run.completed) run.efficiency = static_cast<double>(ideal_action_count(task)) / run.actions;
  return run;
}

inline Metrics summarize(std::vector<EvalRun> runs) {
  Metrics m;
  m.eval_runs = static_cast<int>(runs.size());
  double pick_sum = 0.0;
  int pick_runs = 0;
  double eff_sum = 0.0;
  int picks = 0;
  int tallest = 0;
  for (const auto& r : runs) {
    picks += r.picks_attempted;
    tallest += r.picks_from_tallest;
    if (!r.completed) continue;
    ++m.completed_runs;
    eff_sum += r.efficiency;
    if (r.picks_attempted > 0) {
      pick_sum += static_cast<double>(r.picks_succeeded) / r.picks_attempted;
      ++pick_runs;
    }
  }
  m.completion_rate = m.eval_runs > 0 ? static_cast<double>(m.completed_runs) / m.eval_runs : 0.0;
  if (m.completed_runs > 0) m.action_efficiency = eff_sum / m.completed_runs;
  if (pick_runs > 0) m.pick_success = pick_sum / pick_runs;
  m.tallest_pick_fraction = picks > 0 ? static_cast<double>(tallest) / picks : 0.0;
  m.runs = std::move(runs);
  return m;
}

/// Greedy evaluation over cfg.eval_runs fresh seeds. Runs are independent
/// and may be spread over `threads` workers without changing the result.
inline Metrics evaluate(const QNetwork& q, const RunConfig& cfg, unsigned threads = 1) {
  cfg.validate();
  if (q.height() != cfg.task.height || q.width() != cfg.task.width || q.rotations() != cfg.task.rotations)
    throw ContractError("evaluate: checkpoint shape does not match the task");
  std::vector<EvalRun> runs(static_cast<std::size_t>(cfg.eval_runs));
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < runs.size(); i += stride)
      runs[i] = evaluate_run(q, cfg.task, evaluation_run_seed(cfg.seed, static_cast<int>(i)));
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(runs.size())));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned k = 0; k < threads; ++k) pool.emplace_back(work, k, threads);
  }
  return summarize(std::move(runs));
}

inline void write_metrics_csv_header(std::ostream& out) {
  out << "variant,seed,completion_rate,pick_success,action_efficiency,completed_runs,eval_runs,tallest_pick_fraction\n";
}

inline void write_metrics_csv_row(std::ostream& out, const std::string& variant, std::uint64_t seed, const Metrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? detail::format_double(*v) : std::string("NA"); };
  out << variant << ',' << seed << ',' << detail::format_double(m.completion_rate) << ',' << opt(m.pick_success) << ','
      << opt(m.action_efficiency) << ',' << m.completed_runs << ',' << m.eval_runs << ','
      << detail::format_double(m.tallest_pick_fraction) << '\n';
}

// ---------------------------------------------------------------------------
// Ablation ladder.

struct AblationVariant {
  std::string name;
  RewardMode reward;
  PolicyMode policy;
};

inline const std::array<AblationVariant, 3>& ablation_variants() {
  static const std::array<AblationVariant, 3> v{{
      {"baseline", RewardMode::Baseline, PolicyMode::DecayingEpsilon},
      {"tpgr", RewardMode::TaskProgressGaussian, PolicyMode::DecayingEpsilon},
      {"tpgr_lae", RewardMode::TaskProgressGaussian, PolicyMode::LossAdjusted},
  }};
  return v;
}

inline RunConfig variant_config(const RunConfig& base, const AblationVariant& v, std::uint64_t seed) {
  RunConfig c = base;
  c.reward_mode = v.reward;
  c.policy_mode = v.policy;
  c.seed = seed;
  return c;
}

struct AblationCell {
  std::uint64_t seed = 0;
  std::vector<double> success_curve;
  std::vector<double> efficiency_curve;
  Metrics metrics;
};

struct AblationRow {
  std::string variant;
  std::vector<AblationCell> cells;  // one per seed
  double median_completion = 0.0;
  double median_efficiency = 0.0;  // absent efficiency counts as 0
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Trains and evaluates every variant on seeds cfg.seed .. cfg.seed + n - 1.
inline std::vector<AblationRow> run_ablation(const RunConfig& cfg, unsigned threads = 1) {
  cfg.validate();
  const auto& variants = ablation_variants();
  const std::size_t n_seeds = static_cast<std::size_t>(cfg.ablation_seeds);
  std::vector<AblationRow> rows(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v) {
    rows[v].variant = variants[v].name;
    rows[v].cells.resize(n_seeds);
  }
  auto job = [&](std::size_t k) {
    const std::size_t v = k / n_seeds;
    const std::size_t s = k % n_seeds;
    const RunConfig c = variant_config(cfg, variants[v], cfg.seed + s);
    TrainReport rep = train(c);
    AblationCell& cell = rows[v].cells[s];
    cell.seed = c.seed;
    cell.success_curve = std::move(rep.success_curve);
    cell.efficiency_curve = std::move(rep.efficiency_curve);
    cell.metrics = evaluate(rep.network, c);
  };
  const std::size_t jobs = variants.size() * n_seeds;
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(jobs)));
  if (threads == 1) {
    for (std::size_t k = 0; k < jobs; ++k) job(k);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t k = w; k < jobs; k += threads) job(k);
      });
  }
  for (auto& row : rows) {
    std::vector<double> comp, eff;
    for (const auto& cell : row.cells) {
      comp.push_back(cell.metrics.completion_rate);
      eff.push_back(cell.metrics.action_efficiency.value_or(0.0));
    }
    row.median_completion = median(comp);
    row.median_efficiency = median(eff);
  }
  return rows;
}

inline void write_ablation_curves_csv(std::ostream& out, const std::vector<AblationRow>& rows, int window) {
  out << "variant,seed,step,success_rate,action_efficiency\n";
  for (const auto& row : rows)
    for (const auto& cell : row.cells)
      for (std::size_t i = 0; i < cell.success_curve.size(); ++i)
        out << row.variant << ',' << cell.seed << ',' << (i + 1) * static_cast<std::size_t>(window) << ','
            << detail::format_double(cell.success_curve[i]) << ',' << detail::format_double(cell.efficiency_curve[i])
            << '\n';
}

inline void write_ablation_table_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "variant,median_completion_rate,median_action_efficiency,seeds\n";
  for (const auto& row : rows)
    out << row.variant << ',' << detail::format_double(row.median_completion) << ','
        << detail::format_double(row.median_efficiency) << ',' << row.cells.size() << '\n';
}

}  // namespace gridmanip
