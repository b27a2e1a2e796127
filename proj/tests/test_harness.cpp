#include <gtest/gtest.h>

#include <sstream>

#include "gridmanip/harness.hpp"

using namespace gridmanip;

namespace {

RunConfig small_config() {
  RunConfig cfg;
  cfg.task = TaskConfig::stacking(3, 2, 5);
  cfg.train_steps = 120;
  cfg.window = 40;
  cfg.eval_runs = 4;
  cfg.hidden = 4;
  cfg.seed = 9;
  return cfg;
}

EvalRun run_with(int actions, bool completed, int picks = 0, int picks_ok = 0, double efficiency = 0.0) {
  EvalRun r;
  r.actions = actions;
  r.completed = completed;
  r.picks_attempted = picks;
  r.picks_succeeded = picks_ok;
  r.efficiency = efficiency;
  return r;
}

// Hand-written stacking policy: pick the first lone block that is not the
// tallest stack, then place it on the tallest stack.
Action scripted_stacker(const QMapSet&, const MaskSet&, const Workspace& ws) {
  int ty = 0, tx = 0;
  for (int y = 0; y < ws.height(); ++y)
    for (int x = 0; x < ws.width(); ++x)
      if (ws.stack_height(y, x) > ws.stack_height(ty, tx)) ty = y, tx = x;
  if (ws.gripper) return Action{Primitive::Place, tx, ty, 0, 0.0};
  for (int y = 0; y < ws.height(); ++y)
    for (int x = 0; x < ws.width(); ++x)
      if (ws.stack_height(y, x) > 0 && !(y == ty && x == tx)) return Action{Primitive::Pick, x, y, 0, 0.0};
  throw NoValidAction();
}

}  // namespace

TEST(Harness, ZeroStepsLeavesInitialNetwork) {
  RunConfig cfg = small_config();
  cfg.train_steps = 0;
  std::ostringstream log;
  const TrainReport rep = train(cfg, TrainOptions{&log, ""});
  EXPECT_EQ(rep.steps, 0);
  EXPECT_EQ(rep.network.checksum(), initial_network(cfg).checksum());
  EXPECT_TRUE(log.str().empty());
  EXPECT_TRUE(rep.success_curve.empty());
  EXPECT_EQ(rep.exploration.epsilon, cfg.exploration.epsilon_init);
}

TEST(Harness, TrainingIsDeterministic) {
  const RunConfig cfg = small_config();
  std::ostringstream a, b;
  const TrainReport ra = train(cfg, TrainOptions{&a, ""});
  const TrainReport rb = train(cfg, TrainOptions{&b, ""});
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(ra.network.checksum(), rb.network.checksum());
  EXPECT_EQ(ra.success_curve, rb.success_curve);
  RunConfig other = cfg;
  other.seed = 10;
  std::ostringstream c;
  train(other, TrainOptions{&c, ""});
  EXPECT_NE(a.str(), c.str());
}

TEST(Harness, LogHasOneLinePerStepInOrder) {
  const RunConfig cfg = small_config();
  std::ostringstream log;
  const TrainReport rep = train(cfg, TrainOptions{&log, ""});
  std::istringstream in(log.str());
  std::string line;
  std::int64_t expect = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["step"].get<std::int64_t>(), expect++);
    const double r = j["reward"].get<double>();
    EXPECT_GE(j["y_target"].get<double>(), r);
    if (r == 0.0) EXPECT_EQ(j["y_target"].get<double>(), 0.0);
  }
  EXPECT_EQ(expect, cfg.train_steps);
  EXPECT_EQ(rep.success_curve.size(), 3u);
  EXPECT_EQ(rep.efficiency_curve.size(), 3u);
  EXPECT_EQ(log.str().substr(0, 24), "{\"step\":0,\"episode\":0,\"p");
}

TEST(Harness, BaselineAndDecayVariantsTrain) {
  RunConfig cfg = small_config();
  cfg.reward_mode = RewardMode::Baseline;
  cfg.policy_mode = PolicyMode::DecayingEpsilon;
  std::ostringstream log;
  const TrainReport rep = train(cfg, TrainOptions{&log, ""});
  EXPECT_EQ(rep.steps, cfg.train_steps);
  EXPECT_EQ(rep.exploration.epsilon, cfg.exploration.epsilon_init);
  std::istringstream in(log.str());
  std::string line;
  std::getline(in, line);
  EXPECT_DOUBLE_EQ(nlohmann::json::parse(line)["epsilon"].get<double>(), 0.5);
}

TEST(Harness, SummaryArithmetic) {
  std::vector<EvalRun> runs;
  for (int i = 0; i < 24; ++i) runs.push_back(run_with(8, true, 4, 3, 6.0 / 8.0));
  for (int i = 0; i < 6; ++i) runs.push_back(run_with(40, false, 20, 0));
  const Metrics m = summarize(runs);
  EXPECT_EQ(m.eval_runs, 30);
  EXPECT_EQ(m.completed_runs, 24);
  EXPECT_DOUBLE_EQ(m.completion_rate, 0.8);
  EXPECT_DOUBLE_EQ(*m.action_efficiency, 0.75);
  EXPECT_DOUBLE_EQ(*m.pick_success, 0.75);

  const Metrics none = summarize({run_with(40, false), run_with(40, false)});
  EXPECT_DOUBLE_EQ(none.completion_rate, 0.0);
  EXPECT_FALSE(none.action_efficiency.has_value());
  EXPECT_FALSE(none.pick_success.has_value());
  std::ostringstream csv;
  write_metrics_csv_row(csv, "v", 3, none);
  EXPECT_EQ(csv.str(), "v,3,0,NA,NA,0,2,0\n");
}

TEST(Harness, ScriptedStackerIsPerfect) {
  const TaskConfig task = TaskConfig::stacking(6, 4, 7);
  const QNetwork unused(7, 7, 4, 2);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const EvalRun r = evaluate_run(unused, task, seed, scripted_stacker);
    EXPECT_TRUE(r.completed);
    EXPECT_EQ(r.actions, 6);
    EXPECT_DOUBLE_EQ(r.efficiency, 1.0);
    EXPECT_EQ(r.picks_from_tallest, 0);
    EXPECT_EQ(r.picks_succeeded, 3);
  }
}

TEST(Harness, TallestPickCounted) {
  // Always pick from the tallest stack once it reaches two.
  auto greedy_unstacker = [](const QMapSet& q, const MaskSet& m, const Workspace& ws) {
    if (ws.max_stack_height() >= 2 && !ws.gripper)
      for (int y = 0; y < ws.height(); ++y)
        for (int x = 0; x < ws.width(); ++x)
          if (ws.stack_height(y, x) == ws.max_stack_height()) return Action{Primitive::Pick, x, y, 0, 0.0};
    return scripted_stacker(q, m, ws);
  };
  TaskConfig task = TaskConfig::stacking(4, 3, 5);
  task.max_steps = 6;
  const EvalRun r = evaluate_run(QNetwork(5, 5, 4, 2), task, 1, greedy_unstacker);
  EXPECT_FALSE(r.completed);
  EXPECT_EQ(r.picks_attempted, 3);
  EXPECT_EQ(r.picks_from_tallest, 2);
}

TEST(Harness, EvaluationIsPureAndThreadInvariant) {
  const RunConfig cfg = small_config();
  const QNetwork q = train(cfg).network;
  const std::uint64_t before = q.checksum();
  const Metrics a = evaluate(q, cfg, 1);
  const Metrics b = evaluate(q, cfg, 3);
  EXPECT_EQ(q.checksum(), before);
  EXPECT_EQ(a.completion_rate, b.completion_rate);
  ASSERT_EQ(a.runs.size(), b.runs.size());
  for (std::size_t i = 0; i < a.runs.size(); ++i) {
    EXPECT_EQ(a.runs[i].actions, b.runs[i].actions);
    EXPECT_EQ(a.runs[i].seed, evaluation_run_seed(cfg.seed, static_cast<int>(i)));
  }
  RunConfig wrong = cfg;
  wrong.task = TaskConfig::stacking(3, 2, 6);
  EXPECT_THROW(evaluate(q, wrong), ContractError);
}

TEST(Harness, AblationShapes) {
  RunConfig cfg = small_config();
  cfg.ablation_seeds = 2;
  cfg.eval_runs = 2;
  const auto rows = run_ablation(cfg);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].variant, "baseline");
  EXPECT_EQ(rows[1].variant, "tpgr");
  EXPECT_EQ(rows[2].variant, "tpgr_lae");
  for (const auto& row : rows) {
    ASSERT_EQ(row.cells.size(), 2u);
    EXPECT_EQ(row.cells[0].seed, 9u);
    EXPECT_EQ(row.cells[1].seed, 10u);
    for (const auto& cell : row.cells) {
      EXPECT_EQ(cell.success_curve.size(), 3u);
      EXPECT_EQ(cell.efficiency_curve.size(), 3u);
      EXPECT_EQ(cell.metrics.eval_runs, 2);
    }
  }
  std::ostringstream curves;
  write_ablation_curves_csv(curves, rows, cfg.window);
  const std::string s = curves.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 1 + 3 * 2 * 3);
}

TEST(Harness, VariantsDifferOnlyInRewardAndPolicy) {
  const RunConfig base = small_config();
  const auto& v = ablation_variants();
  const RunConfig a = variant_config(base, v[0], 9);
  const RunConfig b = variant_config(base, v[2], 9);
  std::istringstream ea(echo_config(a)), eb(echo_config(b));
  std::string la, lb;
  std::vector<std::string> diffs;
  while (std::getline(ea, la) && std::getline(eb, lb))
    if (la != lb) diffs.push_back(la.substr(0, la.find(' ')));
  EXPECT_EQ(diffs, (std::vector<std::string>{"mode", "mode"}));
}

TEST(Harness, CheckpointWrittenAndReloadable) {
  const RunConfig cfg = small_config();
  const std::string path = testing::TempDir() + "harness_ck.bin";
  const TrainReport rep = train(cfg, TrainOptions{nullptr, path});
  const LoadedCheckpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.network.checksum(), rep.network.checksum());
  EXPECT_EQ(ck.header.config_hash, config_hash(cfg));
}

TEST(Harness, StackingGoalFourEightActions) {
  const TaskConfig task = TaskConfig::stacking(6, 4, 7);
  EXPECT_EQ(ideal_action_count(task), 6);
  const Metrics m = summarize({run_with(8, true, 4, 4, static_cast<double>(ideal_action_count(task)) / 8)});
  EXPECT_DOUBLE_EQ(*m.action_efficiency, 0.75);
}

TEST(Harness, ScriptedClutterOracleIsPerfect) {
  auto picker = [](const QMapSet&, const MaskSet&, const Workspace& ws) {
    for (int y = 0; y < ws.height(); ++y)
      for (int x = 0; x < ws.width(); ++x)
        if (ws.stack_height(y, x) > 0) return Action{Primitive::Pick, x, y, 0, 0.0};
    throw NoValidAction();
  };
  const TaskConfig task = TaskConfig::clutter(3, 6);
  std::vector<EvalRun> runs;
  for (std::uint64_t seed = 0; seed < 5; ++seed) runs.push_back(evaluate_run(QNetwork(6, 6, 4, 2), task, seed, picker));
  const Metrics m = summarize(runs);
  EXPECT_DOUBLE_EQ(m.completion_rate, 1.0);
  EXPECT_DOUBLE_EQ(*m.pick_success, 1.0);
  EXPECT_DOUBLE_EQ(*m.action_efficiency, 1.0);
}

TEST(Harness, LaeVariantDiffersOnlyInPolicySection) {
  const RunConfig base = small_config();
  const auto& v = ablation_variants();
  std::istringstream eb(echo_config(variant_config(base, v[1], 9)));
  std::istringstream ec(echo_config(variant_config(base, v[2], 9)));
  std::string lb, lc, section;
  std::vector<std::string> sections;
  while (std::getline(eb, lb) && std::getline(ec, lc)) {
    if (!lb.empty() && lb.front() == '[') section = lb;
    if (lb != lc) sections.push_back(section);
  }
  EXPECT_EQ(sections, (std::vector<std::string>{"[policy]"}));
}

TEST(Harness, GoalTwoSuccessRateImproves) {
  RunConfig cfg;
  cfg.task = TaskConfig::stacking(5, 2, 10);
  cfg.train_steps = 2000;
  cfg.window = 100;
  cfg.seed = 1;
  const TrainReport rep = train(cfg);
  ASSERT_EQ(rep.success_curve.size(), 20u);
  EXPECT_GT(rep.success_curve.back(), rep.success_curve.front());
}
