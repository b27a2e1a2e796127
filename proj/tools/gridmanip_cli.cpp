// gridmanip: train, evaluate, ablate and inspect grid manipulation agents.
//
// Exit codes: 0 success, 1 configuration/usage error, 2 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "gridmanip/gridmanip.hpp"

namespace fs = std::filesystem;
using namespace gridmanip;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct CommonArgs {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required) {
  auto* opt = cmd->add_option("--config", args.config_path, "run configuration file");
  if (config_required) opt->required();
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "seed override");
  cmd->add_option("--set", args.overrides, "override a dotted key: section.key=value (repeatable)");
}

RunConfig effective_config(const CommonArgs& args) {
  RunConfig cfg = args.config_path.empty() ? RunConfig{} : load_config(args.config_path);
  const TaskKind before = cfg.task.kind;
  bool allowed_overridden = false;
  for (const auto& o : args.overrides) {
    apply_override(cfg, o);
    if (o.rfind("task.allowed_primitives", 0) == 0) allowed_overridden = true;
  }
  if (cfg.task.kind != before && !allowed_overridden) {
    if (cfg.task.kind == TaskKind::BlockStacking) cfg.task.allowed = {false, true, true};
    else cfg.task.allowed = {true, true, false};
  }
  if (cfg.task.kind == TaskKind::ScriptedArrangement && !cfg.task.layout.empty()) {
    const TaskConfig s = TaskConfig::scripted(cfg.task.layout);
    cfg.task.width = s.width;
    cfg.task.height = s.height;
    cfg.task.n_blocks = s.n_blocks;
  }
  if (args.seed) cfg.seed = *args.seed;
  cfg.validate();
  return cfg;
}

fs::path prepare_out(const CommonArgs& args, const RunConfig& cfg) {
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  std::ofstream(out / "config.echo") << echo_config(cfg);
  return out;
}

int cmd_train(const CommonArgs& args) {
  const RunConfig cfg = effective_config(args);
  const fs::path out = prepare_out(args, cfg);
  std::ofstream log(out / "run.log");
  TrainOptions options{&log, (out / "checkpoint.bin").string()};
  const TrainReport rep = train(cfg, options);
  std::ofstream curves(out / "curves.csv");
  curves << "step,success_rate,action_efficiency\n";
  for (std::size_t i = 0; i < rep.success_curve.size(); ++i)
    curves << (i + 1) * static_cast<std::size_t>(cfg.window) << ',' << detail::format_double(rep.success_curve[i]) << ','
           << detail::format_double(rep.efficiency_curve[i]) << '\n';
  std::cout << "trained " << rep.steps << " steps, " << rep.episodes_completed << " goal episodes; checkpoint "
            << (out / "checkpoint.bin").string() << '\n';
  return kExitOk;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint, bool zero_init) {
  const RunConfig cfg = effective_config(args);
  const fs::path out = prepare_out(args, cfg);
  QNetwork q;
  if (zero_init) {
    q = QNetwork(cfg.task.height, cfg.task.width, cfg.task.rotations, cfg.hidden);
  } else {
    const std::string path = checkpoint.empty() ? (out / "checkpoint.bin").string() : checkpoint;
    q = load_checkpoint(path).network;
  }
  const Metrics m = evaluate(q, cfg, std::max(1u, std::thread::hardware_concurrency()));
  std::ofstream csv(out / "metrics.csv");
  write_metrics_csv_header(csv);
  write_metrics_csv_row(csv, "eval", cfg.seed, m);
  write_metrics_csv_row(std::cout, "eval", cfg.seed, m);
  return kExitOk;
}

int cmd_ablate(const CommonArgs& args) {
  const RunConfig cfg = effective_config(args);
  const fs::path out = prepare_out(args, cfg);
  const auto rows = run_ablation(cfg, std::max(1u, std::thread::hardware_concurrency()));
  std::ofstream metrics(out / "metrics.csv");
  write_metrics_csv_header(metrics);
  for (const auto& row : rows)
    for (const auto& cell : row.cells) write_metrics_csv_row(metrics, row.variant, cell.seed, cell.metrics);
  std::ofstream curves(out / "curves.csv");
  write_ablation_curves_csv(curves, rows, cfg.window);
  std::ofstream table(out / "ablation.csv");
  write_ablation_table_csv(table, rows);
  write_ablation_table_csv(std::cout, rows);
  return kExitOk;
}

struct InspectArgs {
  std::string checkpoint;
  std::string dump;  // header | reward | qmap
  int x = 0;
  int y = 0;
  int theta = 0;
  double reward = 1.0;
  std::string primitive = "pick";
};

int cmd_inspect(const CommonArgs& common, const InspectArgs& args) {
  if (args.dump == "header") {
    if (args.checkpoint.empty()) throw ConfigError("inspect: --checkpoint is required for the header dump");
    std::ifstream in(args.checkpoint, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + args.checkpoint);
    const LoadedCheckpoint ck = read_checkpoint(in);
    write_checkpoint_meta(std::cout, ck.network, ck.header.config_hash);
    std::cout << "parameters_per_net = " << ck.network.net(Primitive::Push).parameter_count() << '\n';
    return kExitOk;
  }
  const RunConfig cfg = effective_config(common);
  if (args.dump == "reward") {
    const RewardMap map = tpg_reward_map(args.reward, args.x, args.y, rotation_angle(args.theta, cfg.task.rotations),
                                         cfg.task.height, cfg.task.width, cfg.reward);
    write_csv(std::cout, map.grid);
    return kExitOk;
  }
  if (args.dump == "qmap") {
    QNetwork q = args.checkpoint.empty() ? initial_network(cfg) : load_checkpoint(args.checkpoint).network;
    const auto [ws, obs] = reset(cfg.task, cfg.seed);
    const Planes maps = forward(q, obs, PrevActionContext{}, primitive_from_string(args.primitive));
    if (args.theta < 0 || args.theta >= maps.channels()) throw ConfigError("inspect: --theta out of range");
    Grid<double> g(maps.height(), maps.width());
    for (int yy = 0; yy < maps.height(); ++yy)
      for (int xx = 0; xx < maps.width(); ++xx) g(yy, xx) = maps.at(args.theta, yy, xx);
    write_csv(std::cout, g);
    return kExitOk;
  }
  throw ConfigError("inspect: --dump must be header, reward or qmap");
}

int cmd_selftest(int draws, int grids) {
  const auto grad = selfcheck::gradient_check(draws, 2024);
  const bool grad_ok = grad.max_relative_error < 1e-4 && grad.parameters_checked > 0;
  std::cout << (grad_ok ? "PASS" : "FAIL") << " gradient check: " << grad.draws << " draws, "
            << grad.parameters_checked << " parameters, " << grad.parameters_skipped
            << " skipped at ReLU kinks, max relative error " << grad.max_relative_error << '\n';
  const auto conv = selfcheck::convolution_check(grids, 2025);
  const bool conv_ok = conv.max_abs_error <= 1e-12;
  std::cout << (conv_ok ? "PASS" : "FAIL") << " convolution check: " << conv.grids << " grids, max abs error "
            << conv.max_abs_error << '\n';
  return grad_ok && conv_ok ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grid-world manipulation learning lab"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, ablate_args, inspect_common;
  auto* train_cmd = app.add_subcommand("train", "train an agent and write run.log + checkpoint");
  add_common(train_cmd, train_args, true);

  std::string eval_checkpoint;
  bool zero_init = false;
  auto* eval_cmd = app.add_subcommand("eval", "greedy evaluation of a checkpoint; writes metrics.csv");
  add_common(eval_cmd, eval_args, true);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file (default OUT/checkpoint.bin)");
  eval_cmd->add_flag("--zero-init", zero_init, "evaluate an all-zero network instead of a checkpoint");

  auto* ablate_cmd = app.add_subcommand("ablate", "run the three-variant ablation ladder");
  add_common(ablate_cmd, ablate_args, true);

  InspectArgs inspect_args;
  auto* inspect_cmd = app.add_subcommand("inspect", "print a checkpoint header or dump a reward/Q map as CSV");
  add_common(inspect_cmd, inspect_common, false);
  inspect_cmd->add_option("--checkpoint", inspect_args.checkpoint, "checkpoint file");
  inspect_cmd->add_option("--dump", inspect_args.dump, "header | reward | qmap")->default_val("header");
  inspect_cmd->add_option("--x", inspect_args.x);
  inspect_cmd->add_option("--y", inspect_args.y);
  inspect_cmd->add_option("--theta", inspect_args.theta, "rotation index");
  inspect_cmd->add_option("--reward", inspect_args.reward, "spike value for the reward dump");
  inspect_cmd->add_option("--primitive", inspect_args.primitive, "push | pick | place");

  int draws = 100;
  int grids = 200;
  auto* selftest_cmd = app.add_subcommand("selftest", "gradient and convolution oracle checks");
  selftest_cmd->add_option("--draws", draws, "gradient-check draws");
  selftest_cmd->add_option("--grids", grids, "convolution-check grids");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args, eval_checkpoint, zero_init);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_args);
    if (inspect_cmd->parsed()) return cmd_inspect(inspect_common, inspect_args);
    if (selftest_cmd->parsed()) return cmd_selftest(draws, grids);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
