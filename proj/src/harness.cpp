#include "erpbpnn/harness.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#ifndef ERPBPNN_VERSION
#define ERPBPNN_VERSION "0.0.0"
#endif
#ifndef ERPBPNN_GIT_REV
#define ERPBPNN_GIT_REV "unknown"
#endif

namespace erpbpnn {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t StreamRegistry::issue(StreamKind kind, std::uint32_t task, std::uint32_t index) {
  const auto id = std::make_tuple(static_cast<std::uint32_t>(kind), task, index);
  if (!ids_.insert(id).second) {
    throw std::logic_error("rng stream (" + std::to_string(std::get<0>(id)) + ", " +
                           std::to_string(task) + ", " + std::to_string(index) + ") issued twice");
  }
  std::uint64_t h = splitmix64(run_seed_);
  h = splitmix64(h ^ static_cast<std::uint64_t>(kind));
  h = splitmix64(h ^ (static_cast<std::uint64_t>(task) << 32 | index));
  seeds_.push_back(h);
  return h;
}

bool StreamRegistry::seeds_distinct() const {
  std::vector<std::uint64_t> s = seeds_;
  std::sort(s.begin(), s.end());
  return std::adjacent_find(s.begin(), s.end()) == s.end();
}

ppo::ActorCritic make_agent(const RunConfig& config, const std::vector<env::ArmSpec>& tasks,
                            std::uint64_t actor_seed, std::uint64_t critic_seed) {
  const bool lateral = config.method != Method::RandomMlp;
  std::vector<Index> action_dims, ones;
  for (const auto& t : tasks) {
    action_dims.push_back(t.n_links);
    ones.push_back(1);
  }
  ppo::ActorCritic ac;
  ac.actor = BpnnNet::make(env::kObsDim, action_dims, config.hidden_layers, config.hidden_size, lateral);
  ac.critic = BpnnNet::make(env::kObsDim, ones, config.hidden_layers, config.hidden_size, lateral);
  InitScales actor_scales;
  actor_scales.output_gain = config.actor_output_gain;
  actor_scales.lateral_scale = config.lateral_init_scale;
  InitScales critic_scales = actor_scales;
  critic_scales.output_gain = config.critic_output_gain;
  init_params(ac.actor, actor_seed, actor_scales);
  init_params(ac.critic, critic_seed, critic_scales);
  freeze_all(ac.actor);
  freeze_all(ac.critic);
  for (const auto& t : tasks) ac.log_std.push_back(Vec::Constant(t.n_links, config.ppo.init_log_std));
  ac.clamp_log_std_min = config.ppo.log_std_min;
  ac.clamp_log_std_max = config.ppo.log_std_max;
  return ac;
}

nlohmann::json make_checkpoint(const ppo::ActorCritic& agent, const std::vector<env::ArmSpec>& tasks,
                               Method method, std::uint64_t seed, long iteration,
                               const std::vector<ppo::RewardNormalizer>* normalizers) {
  nlohmann::json specs = nlohmann::json::array();
  for (const auto& t : tasks) specs.push_back(env::to_json(t));
  nlohmann::json log_std = nlohmann::json::array();
  for (const auto& v : agent.log_std) log_std.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  nlohmann::json j = {{"format", "erpbpnn-checkpoint"},
                      {"version", 1},
                      {"method", to_string(method)},
                      {"seed", seed},
                      {"iteration", iteration},
                      {"tasks", std::move(specs)},
                      {"actor", to_json(agent.actor)},
                      {"critic", to_json(agent.critic)},
                      {"log_std", std::move(log_std)},
                      {"log_std_bounds", {agent.clamp_log_std_min, agent.clamp_log_std_max}}};
  if (normalizers) {
    nlohmann::json ns = nlohmann::json::array();
    for (const auto& n : *normalizers) ns.push_back(n.to_json());
    j["normalizers"] = std::move(ns);
  }
  return j;
}

LoadedCheckpoint load_checkpoint(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "erpbpnn-checkpoint")
      throw ConfigError("checkpoint: unrecognized format tag");
    LoadedCheckpoint c;
    c.method = method_from_string(j.at("method").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.iteration = j.at("iteration").get<long>();
    for (const auto& t : j.at("tasks")) c.tasks.push_back(env::arm_from_json(t));
    c.agent.actor = bpnn_from_json(j.at("actor"));
    c.agent.critic = bpnn_from_json(j.at("critic"));
    for (const auto& v : j.at("log_std")) {
      const auto data = v.get<std::vector<double>>();
      c.agent.log_std.push_back(Eigen::Map<const Vec>(data.data(), static_cast<Index>(data.size())));
    }
    c.agent.clamp_log_std_min = j.at("log_std_bounds").at(0).get<double>();
    c.agent.clamp_log_std_max = j.at("log_std_bounds").at(1).get<double>();
    if (c.agent.actor.num_modules() != c.tasks.size() || c.agent.log_std.size() != c.tasks.size())
      throw ConfigError("checkpoint: task count does not match network columns");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

LoadedCheckpoint load_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("checkpoint: cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint: malformed JSON in '" + path.string() + "': " + e.what());
  }
  return load_checkpoint(j);
}

long expected_episode_total(const RunConfig& config, long phase2) {
  const long tasks = static_cast<long>(config.resolved_tasks().size());
  const long per_iter = static_cast<long>(config.parallel_envs) * config.episodes_per_env;
  return tasks * config.k_init * per_iter + phase2 * tasks * per_iter;
}

Trainer::Trainer(RunConfig config, std::uint64_t seed, std::optional<std::filesystem::path> out_dir)
    : config_(std::move(config)),
      seed_(seed),
      dir_(std::move(out_dir)),
      specs_((config_.validate(), config_.resolved_tasks())),
      streams_(seed),
      scheduler_(specs_.size(), config_.window, config_.k_init),
      best_(specs_.size()) {
  agent_ = make_agent(config_, specs_, streams_.issue(StreamKind::InitActor),
                      streams_.issue(StreamKind::InitCritic));
  method_rng_.seed(streams_.issue(StreamKind::Method));
  const auto p = static_cast<std::size_t>(config_.parallel_envs);
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    normalizers_.emplace_back(p, config_.ppo.gamma);
    TaskRuntime rt;
    rt.spec = specs_[i];
    const auto ti = static_cast<std::uint32_t>(i);
    for (std::uint32_t e = 0; e < p; ++e) {
      rt.envs.emplace_back(specs_[i], streams_.issue(StreamKind::EnvTrain, ti, e));
      rt.action_rngs.emplace_back(streams_.issue(StreamKind::ActionTrain, ti, e));
      if (config_.mean_action_eval) {
        rt.mean_envs.emplace_back(specs_[i], streams_.issue(StreamKind::EnvMeanEval, ti, e));
        rt.mean_rngs.emplace_back(streams_.issue(StreamKind::ActionMeanEval, ti, e));
      }
    }
    tasks_.push_back(std::move(rt));
  }
  artifacts_.dir = dir_;
}

long Trainer::counted_episodes() const {
  return config_.budget_counting == BudgetCounting::All ? total_episodes_ : train_episodes_;
}

double Trainer::current_lr() const {
  const double lr = config_.ppo.learning_rate;
  if (!config_.ppo.linear_lr_decay) return lr;
  const double progress =
      static_cast<double>(counted_episodes()) / static_cast<double>(config_.budget_episodes);
  return lr * std::max(0.0, 1.0 - progress);
}

double Trainer::erp_signal(const ppo::RolloutBuffer& buf) const {
  return config_.erp_reward == ErpReward::Normalized ? buf.mean_train_return() : buf.mean_raw_return();
}

metrics::EvalRecord Trainer::make_record(std::size_t task, const ppo::RolloutBuffer& buf) const {
  metrics::EvalRecord rec;
  rec.iteration = k_;
  rec.task = task;
  const double n = static_cast<double>(buf.episodes.size());
  for (const auto& e : buf.episodes) {
    rec.mean_return += e.raw_return / n;
    rec.mean_discounted_return += e.discounted_raw_return / n;
    rec.mean_distance += e.final_distance / n;
    rec.mean_deviation += e.deviation / n;
  }
  return rec;
}

std::optional<metrics::EvalRecord> Trainer::mean_action_eval(std::size_t task) {
  if (!config_.mean_action_eval) return std::nullopt;
  TaskRuntime& rt = tasks_[task];
  ppo::RolloutOptions opts;
  opts.episodes_per_env = config_.episodes_per_env;
  opts.gamma = config_.ppo.gamma;
  opts.mode = ppo::ActionMode::Mean;
  const auto buf = ppo::collect_rollout(task, agent_, rt.mean_envs, rt.mean_rngs, nullptr, opts);
  return make_record(task, buf);
}

Trainer::IterResult Trainer::train_iteration(std::size_t task, bool jumpstart) {
  const bool lock_laterals = jumpstart && config_.freeze_laterals_in_jumpstart;
  for (BpnnNet* net : {&agent_.actor, &agent_.critic}) {
    set_frozen(*net, task, false);
    net->module(task).laterals_frozen = lock_laterals;
  }
  if (on_iteration_begin) on_iteration_begin(*this, task);

  TaskRuntime& rt = tasks_[task];
  ppo::RolloutOptions opts;
  opts.episodes_per_env = config_.episodes_per_env;
  opts.gamma = config_.ppo.gamma;
  auto buf = ppo::collect_rollout(task, agent_, rt.envs, rt.action_rngs, &normalizers_[task], opts);
  ppo::compute_gae(buf, config_.ppo.gamma, config_.ppo.gae_lambda);

  const long eps = static_cast<long>(buf.episodes.size());
  rt.episodes += eps;
  rt.train_episodes += eps;
  total_episodes_ += eps;
  train_episodes_ += eps;

  IterResult res;
  res.train_return = buf.mean_train_return();
  scheduler_.record_return(task, k_, erp_signal(buf));
  res.record = make_record(task, buf);
  // The rollout ran under the pre-update policy, so that is what gets stored.
  best_.update(res.record, [&] { return make_checkpoint(agent_, specs_, config_.method, seed_, k_); });

  const double lr = current_lr();
  ppo::StepHook hook;
  if (on_optimizer_step) hook = [&](int step) { on_optimizer_step(*this, task, step); };
  ppo::UpdateStats stats;
  try {
    stats = ppo::ppo_update(buf, agent_, actor_opt_, critic_opt_, task, config_.ppo, lr, method_rng_, hook);
  } catch (const TrainingError& e) {
    throw TrainingError("iteration " + std::to_string(k_) + ": " + e.what());
  }

  for (BpnnNet* net : {&agent_.actor, &agent_.critic}) {
    set_frozen(*net, task, true);
    net->module(task).laterals_frozen = false;
  }

  if (train_log_.is_open()) {
    nlohmann::json line = {{"iteration", k_},
                           {"task", task},
                           {"phase", jumpstart ? "jumpstart" : "erp"},
                           {"policy_loss", stats.policy_loss},
                           {"value_loss", stats.value_loss},
                           {"entropy", stats.entropy},
                           {"grad_norm", stats.grad_norm},
                           {"lr", lr},
                           {"approx_kl", stats.approx_kl},
                           {"clip_fraction", stats.clip_fraction},
                           {"optimizer_steps", stats.optimizer_steps}};
    train_log_ << line.dump() << '\n';
  }
  res.mean_record = mean_action_eval(task);
  return res;
}

Trainer::IterResult Trainer::eval_iteration(std::size_t task) {
  TaskRuntime& rt = tasks_[task];
  ppo::RolloutOptions opts;
  opts.episodes_per_env = config_.episodes_per_env;
  opts.gamma = config_.ppo.gamma;
  const auto buf = ppo::collect_rollout(task, agent_, rt.envs, rt.action_rngs, &normalizers_[task], opts);
  const long eps = static_cast<long>(buf.episodes.size());
  rt.episodes += eps;
  total_episodes_ += eps;

  IterResult res;
  res.train_return = buf.mean_train_return();
  scheduler_.record_return(task, k_, erp_signal(buf));
  res.record = make_record(task, buf);
  best_.update(res.record, [&] { return make_checkpoint(agent_, specs_, config_.method, seed_, k_); });
  res.mean_record = mean_action_eval(task);
  return res;
}

void Trainer::emit_rows(const std::map<std::size_t, IterResult>& results) {
  const double nan = std::nan("");
  for (std::size_t m = 0; m < specs_.size(); ++m) {
    const auto& e = best_.entry(m);
    if (!e.seen) continue;
    report::MetricsRow row;
    row.iteration = k_;
    row.episodes_so_far = total_episodes_;
    row.train_episodes_so_far = train_episodes_;
    row.task = m;
    row.best_return = e.best_return;
    row.best_distance = e.best_distance;
    row.best_deviation = e.best_deviation;
    row.best_discounted_return = e.best_discounted_return;
    auto it = results.find(m);
    const bool have = it != results.end();
    row.iter_return = have ? it->second.record.mean_return : nan;
    row.iter_train_return = have ? it->second.train_return : nan;
    row.iter_distance = have ? it->second.record.mean_distance : nan;
    row.iter_deviation = have ? it->second.record.mean_deviation : nan;
    const bool det = have && it->second.mean_record.has_value();
    row.det_return = det ? it->second.mean_record->mean_return : nan;
    row.det_distance = det ? it->second.mean_record->mean_distance : nan;
    row.det_deviation = det ? it->second.mean_record->mean_deviation : nan;
    if (metrics_csv_.is_open()) report::write_metrics_row(metrics_csv_, row);
    artifacts_.metrics_rows.push_back(row);
  }
}

void Trainer::open_outputs() {
  if (!dir_) return;
  std::filesystem::create_directories(*dir_ / "checkpoints");
  metrics_csv_.open(*dir_ / "metrics.csv");
  scheduler_csv_.open(*dir_ / "scheduler.csv");
  train_log_.open(*dir_ / "train_log.jsonl");
  if (!metrics_csv_ || !scheduler_csv_ || !train_log_)
    throw ConfigError("output: cannot write into '" + dir_->string() + "'");
  report::write_metrics_header(metrics_csv_);
  report::write_scheduler_header(scheduler_csv_, specs_.size());
}

namespace {
void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("output: cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}
}  // namespace

void Trainer::write_final() {
  if (!dir_) return;
  metrics_csv_.close();
  scheduler_csv_.close();
  train_log_.close();
  const auto ck = *dir_ / "checkpoints";
  write_json(ck / "final.json",
             make_checkpoint(agent_, specs_, config_.method, seed_, k_, &normalizers_));
  for (std::size_t m = 0; m < specs_.size(); ++m) {
    const auto& e = best_.entry(m);
    if (!e.checkpoint.is_null())
      write_json(ck / ("best_task" + std::to_string(m) + ".json"), e.checkpoint);
  }
  write_json(*dir_ / "summary.json",
             report::summarize(artifacts_.metrics_rows, specs_.size(), config_.milestones));
  {
    std::ofstream freq(*dir_ / "selection_frequency.csv");
    sched::write_frequency_csv(
        freq, sched::selection_frequency(scheduler_.selections(), specs_.size(), config_.frequency_window),
        specs_.size());
  }
  nlohmann::json manifest = {{"program", "erpbpnn"},
                             {"version", ERPBPNN_VERSION},
                             {"git_revision", ERPBPNN_GIT_REV},
                             {"method", to_string(config_.method)},
                             {"seed", seed_},
                             {"config", to_json(config_)},
                             {"iterations", artifacts_.iterations},
                             {"phase2_iterations", artifacts_.phase2_iterations},
                             {"total_episodes", total_episodes_},
                             {"train_episodes", train_episodes_},
                             {"task_episodes", artifacts_.task_episodes}};
  write_json(*dir_ / "run_manifest.json", manifest);
}

RunArtifacts Trainer::run() {
  open_outputs();
  const std::size_t num_tasks = specs_.size();

  // Jumpstart: each task in index order trains K_init consecutive iterations.
  for (std::size_t task = 0; task < num_tasks; ++task) {
    for (long r = 0; r < config_.k_init; ++r) {
      ++k_;
      std::map<std::size_t, IterResult> results;
      results.emplace(task, train_iteration(task, true));
      emit_rows(results);
    }
  }
  artifacts_.post_jumpstart_mean_best_return = best_.mean_best_return();

  std::uniform_int_distribution<std::size_t> uniform(0, num_tasks - 1);
  while (counted_episodes() < config_.budget_episodes) {
    ++k_;
    std::size_t chosen = 0;
    if (config_.method == Method::ErpBpnn) {
      chosen = config_.selection == SelectionRule::Argmax
                   ? scheduler_.select_task(k_)
                   : scheduler_.select_task_softmax(k_, config_.softmax_temperature, method_rng_);
    } else {
      chosen = uniform(method_rng_);
      scheduler_.log_selection(k_, chosen);
    }
    const std::vector<double> erps =
        config_.method == Method::ErpBpnn ? scheduler_.latest_erp() : scheduler_.erp_all(k_);

    std::map<std::size_t, IterResult> results;
    results.emplace(chosen, train_iteration(chosen, false));
    for (std::size_t j = 0; j < num_tasks; ++j)
      if (j != chosen) results.emplace(j, eval_iteration(j));

    if (scheduler_csv_.is_open()) report::write_scheduler_row(scheduler_csv_, {k_, erps, chosen});
    artifacts_.erp_rows.push_back(erps);
    ++artifacts_.phase2_iterations;
    emit_rows(results);
  }

  artifacts_.iterations = k_;
  artifacts_.total_episodes = total_episodes_;
  artifacts_.train_episodes = train_episodes_;
  for (const auto& rt : tasks_) artifacts_.task_episodes.push_back(rt.episodes);
  artifacts_.selections = scheduler_.selections();
  artifacts_.final_mean_best_return = best_.mean_best_return();
  artifacts_.final_mean_best_distance = best_.mean_best_distance();
  artifacts_.final_mean_best_deviation = best_.mean_best_deviation();
  write_final();
  return artifacts_;
}

RunArtifacts run_method(const RunConfig& config, std::uint64_t seed,
                        std::optional<std::filesystem::path> out_dir) {
  Trainer trainer(config, seed, std::move(out_dir));
  return trainer.run();
}

RunArtifacts run_erp_bpnn(RunConfig config, std::uint64_t seed,
                          std::optional<std::filesystem::path> out_dir) {
  config.method = Method::ErpBpnn;
  return run_method(config, seed, std::move(out_dir));
}

RunArtifacts run_random_bpnn(RunConfig config, std::uint64_t seed,
                             std::optional<std::filesystem::path> out_dir) {
  config.method = Method::RandomBpnn;
  return run_method(config, seed, std::move(out_dir));
}

RunArtifacts run_random_mlp(RunConfig config, std::uint64_t seed,
                            std::optional<std::filesystem::path> out_dir) {
  config.method = Method::RandomMlp;
  return run_method(config, seed, std::move(out_dir));
}

}  // namespace erpbpnn
