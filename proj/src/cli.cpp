#include "erpbpnn/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "erpbpnn/harness.hpp"

namespace erpbpnn::cli {

namespace {

namespace fs = std::filesystem;

struct EvalOptions {
  std::string checkpoint;
  std::uint64_t seed = 0;
  int envs = 8;
  int episodes_per_env = 2;
  bool mean_actions = false;
};

// Rollouts from a checkpoint on fresh env instances seeded from `seed`.
nlohmann::json evaluate(const LoadedCheckpoint& ck, const EvalOptions& opt,
                        std::optional<std::size_t> only_task,
                        std::vector<env::TraceRecord>* trace) {
  StreamRegistry streams(opt.seed);
  nlohmann::json per_task = nlohmann::json::array();
  double sr = 0.0, sd = 0.0, sv = 0.0;
  std::size_t counted = 0;
  for (std::size_t task = 0; task < ck.tasks.size(); ++task) {
    if (only_task && *only_task != task) continue;
    std::vector<env::ReacherEnv> envs;
    std::vector<std::mt19937_64> rngs;
    const auto ti = static_cast<std::uint32_t>(task);
    for (int e = 0; e < opt.envs; ++e) {
      envs.emplace_back(ck.tasks[task], streams.issue(StreamKind::EnvTrain, ti, e));
      rngs.emplace_back(streams.issue(StreamKind::ActionTrain, ti, e));
    }
    ppo::RolloutOptions ro;
    ro.episodes_per_env = opt.episodes_per_env;
    ro.mode = opt.mean_actions ? ppo::ActionMode::Mean : ppo::ActionMode::Sample;
    ro.trace = trace;
    const auto buf = ppo::collect_rollout(task, ck.agent, envs, rngs, nullptr, ro);
    double dist = 0.0, dev = 0.0;
    for (const auto& e : buf.episodes) {
      dist += e.final_distance;
      dev += e.deviation;
    }
    const double n = static_cast<double>(buf.episodes.size());
    per_task.push_back({{"task", task},
                        {"n_links", ck.tasks[task].n_links},
                        {"episodes", buf.episodes.size()},
                        {"mean_return", buf.mean_raw_return()},
                        {"mean_distance", dist / n},
                        {"mean_deviation", dev / n}});
    sr += buf.mean_raw_return();
    sd += dist / n;
    sv += dev / n;
    ++counted;
  }
  const double c = static_cast<double>(std::max<std::size_t>(counted, 1));
  return {{"checkpoint", opt.checkpoint},
          {"method", to_string(ck.method)},
          {"iteration", ck.iteration},
          {"mean_actions", opt.mean_actions},
          {"per_task", per_task},
          {"mean_over_tasks",
           {{"mean_return", sr / c}, {"mean_distance", sd / c}, {"mean_deviation", sv / c}}}};
}

std::size_t count_tasks(const std::vector<report::MetricsRow>& rows) {
  std::size_t n = 0;
  for (const auto& r : rows) n = std::max(n, r.task + 1);
  return n;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ERP-BPNN multi-task reacher training"};
  app.require_subcommand(1);

  // train
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::string out_dir, method_override;
  long budget_override = 0;
  auto* train = app.add_subcommand("train", "Train from a TOML config");
  train->add_option("--config,-c", config_path, "Config file")->required();
  train->add_option("--seed,-s", seeds, "Seed override (repeatable)");
  train->add_option("--out,-o", out_dir, "Output directory override");
  train->add_option("--method", method_override, "erp-bpnn, random-bpnn or random-mlp");
  train->add_option("--budget", budget_override, "Episode budget override");

  // init
  std::string init_out;
  std::uint64_t init_seed = 1;
  auto* init = app.add_subcommand("init", "Write an untrained checkpoint");
  init->add_option("--config,-c", config_path, "Config file")->required();
  init->add_option("--seed,-s", init_seed, "Seed");
  init->add_option("--out,-o", init_out, "Checkpoint path")->required();

  // eval
  EvalOptions eval_opt;
  std::string eval_out;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_opt.checkpoint, "Checkpoint JSON")->required();
  eval->add_option("--seed,-s", eval_opt.seed, "Evaluation seed");
  eval->add_option("--envs", eval_opt.envs, "Parallel envs per task")->check(CLI::PositiveNumber);
  eval->add_option("--episodes-per-env", eval_opt.episodes_per_env, "Episodes per env")
      ->check(CLI::PositiveNumber);
  eval->add_flag("--mean-actions", eval_opt.mean_actions, "Use the policy mean instead of sampling");
  eval->add_option("--out,-o", eval_out, "Also write the metrics JSON here");

  // replay
  EvalOptions replay_opt;
  replay_opt.envs = 1;
  replay_opt.episodes_per_env = 1;
  std::string replay_out;
  long replay_task = -1;
  auto* replay = app.add_subcommand("replay", "Export episode traces as JSON lines");
  replay->add_option("--checkpoint", replay_opt.checkpoint, "Checkpoint JSON")->required();
  replay->add_option("--out,-o", replay_out, "Trace output (.jsonl)")->required();
  replay->add_option("--task", replay_task, "Task index (default: all)");
  replay->add_option("--seed,-s", replay_opt.seed, "Seed");
  replay->add_option("--envs", replay_opt.envs, "Envs per task")->check(CLI::PositiveNumber);
  replay->add_option("--episodes-per-env", replay_opt.episodes_per_env, "Episodes per env")
      ->check(CLI::PositiveNumber);
  replay->add_flag("--mean-actions", replay_opt.mean_actions, "Use the policy mean");

  // report
  std::string run_dir;
  std::size_t nu = 35;
  std::vector<long> milestones{60000, 75000, 80000, 100000};
  auto* rep = app.add_subcommand("report", "Milestone summary and selection frequencies");
  rep->add_option("--run-dir", run_dir, "Run directory")->required();
  rep->add_option("--nu", nu, "Selection-frequency window")->check(CLI::PositiveNumber);
  rep->add_option("--milestones", milestones, "Episode milestones");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*train) {
      RunConfig config = load_config(config_path);
      if (!seeds.empty()) config.seeds = seeds;
      if (!method_override.empty()) config.method = method_from_string(method_override);
      if (budget_override > 0) config.budget_episodes = budget_override;
      config.validate();
      const fs::path root = resolve_output_dir(out_dir.empty() ? config.output_dir : out_dir);
      for (std::uint64_t seed : config.seeds) {
        const fs::path dir = root / ("seed_" + std::to_string(seed));
        const RunArtifacts a = run_method(config, seed, dir);
        out << to_string(config.method) << " seed " << seed << ": " << a.iterations
            << " iterations, " << a.total_episodes << " episodes -> " << dir.string() << '\n';
        std::ifstream summary(dir / "summary.json");
        nlohmann::json s;
        summary >> s;
        report::print_summary(out, s);
      }
      return 0;
    }
    if (*init) {
      RunConfig config = load_config(config_path);
      StreamRegistry streams(init_seed);
      const auto tasks = config.resolved_tasks();
      auto agent = make_agent(config, tasks, streams.issue(StreamKind::InitActor),
                              streams.issue(StreamKind::InitCritic));
      std::ofstream f(init_out);
      if (!f) throw ConfigError("init: cannot write '" + init_out + "'");
      f << make_checkpoint(agent, tasks, config.method, init_seed, 0).dump(2) << '\n';
      out << "wrote " << init_out << '\n';
      return 0;
    }
    if (*eval) {
      const auto ck = load_checkpoint_file(eval_opt.checkpoint);
      const auto result = evaluate(ck, eval_opt, std::nullopt, nullptr);
      out << result.dump(2) << '\n';
      if (!eval_out.empty()) {
        std::ofstream f(eval_out);
        f << result.dump(2) << '\n';
      }
      return 0;
    }
    if (*replay) {
      const auto ck = load_checkpoint_file(replay_opt.checkpoint);
      std::optional<std::size_t> only;
      if (replay_task >= 0) {
        if (static_cast<std::size_t>(replay_task) >= ck.tasks.size())
          throw ConfigError("--task: checkpoint has only " + std::to_string(ck.tasks.size()) + " tasks");
        only = static_cast<std::size_t>(replay_task);
      }
      std::vector<env::TraceRecord> trace;
      evaluate(ck, replay_opt, only, &trace);
      std::ofstream f(replay_out);
      if (!f) throw ConfigError("replay: cannot write '" + replay_out + "'");
      env::write_trace_jsonl(f, trace);
      out << "wrote " << trace.size() << " steps to " << replay_out << '\n';
      return 0;
    }
    if (*rep) {
      const fs::path dir(run_dir);
      std::ifstream mf(dir / "metrics.csv");
      if (!mf) throw ConfigError("report: no metrics.csv in '" + run_dir + "'");
      const auto rows = report::parse_metrics_csv(mf);
      const std::size_t tasks = count_tasks(rows);
      const auto summary = report::summarize(rows, tasks, milestones);
      {
        std::ofstream f(dir / "report_summary.json");
        f << summary.dump(2) << '\n';
      }
      std::ifstream sf(dir / "scheduler.csv");
      if (sf) {
        std::vector<sched::Selection> log;
        for (const auto& r : report::parse_scheduler_csv(sf)) log.push_back({r.iteration, r.selected});
        std::ofstream f(dir / "selection_frequency.csv");
        sched::write_frequency_csv(f, sched::selection_frequency(log, tasks, nu), tasks);
      }
      report::print_summary(out, summary);
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const TrainingError& e) {
    err << "training aborted: " << e.what() << '\n';
    return 3;
  }
  return 1;
}

}  // namespace erpbpnn::cli
