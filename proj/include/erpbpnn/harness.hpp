#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "erpbpnn/config.hpp"
#include "erpbpnn/metrics.hpp"
#include "erpbpnn/ppo.hpp"
#include "erpbpnn/report.hpp"
#include "erpbpnn/scheduler.hpp"

namespace erpbpnn {

enum class StreamKind : std::uint32_t {
  InitActor = 1,
  InitCritic = 2,
  Method = 3,
  EnvTrain = 4,
  ActionTrain = 5,
  EnvMeanEval = 6,
  ActionMeanEval = 7,
};

/// Hands out seeds for independent RNG streams and remembers every id it has
/// issued, so reuse of a stream is detectable.
class StreamRegistry {
 public:
  explicit StreamRegistry(std::uint64_t run_seed) : run_seed_(run_seed) {}

  /// Throws std::logic_error if (kind, task, index) was already issued.
  std::uint64_t issue(StreamKind kind, std::uint32_t task = 0, std::uint32_t index = 0);

  std::size_t size() const { return ids_.size(); }
  /// True when every issued seed value is distinct.
  bool seeds_distinct() const;

 private:
  std::uint64_t run_seed_;
  std::set<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>> ids_;
  std::vector<std::uint64_t> seeds_;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Everything needed to run a policy later.
nlohmann::json make_checkpoint(const ppo::ActorCritic& agent, const std::vector<env::ArmSpec>& tasks,
                               Method method, std::uint64_t seed, long iteration,
                               const std::vector<ppo::RewardNormalizer>* normalizers = nullptr);

struct LoadedCheckpoint {
  ppo::ActorCritic agent;
  std::vector<env::ArmSpec> tasks;
  Method method = Method::ErpBpnn;
  std::uint64_t seed = 0;
  long iteration = 0;
};

LoadedCheckpoint load_checkpoint(const nlohmann::json& j);
LoadedCheckpoint load_checkpoint_file(const std::filesystem::path& path);

/// Fresh actor-critic for the given tasks and network settings.
ppo::ActorCritic make_agent(const RunConfig& config, const std::vector<env::ArmSpec>& tasks,
                            std::uint64_t actor_seed, std::uint64_t critic_seed);

struct RunArtifacts {
  std::optional<std::filesystem::path> dir;
  long iterations = 0;
  long phase2_iterations = 0;
  long total_episodes = 0;
  long train_episodes = 0;
  std::vector<long> task_episodes;
  std::vector<report::MetricsRow> metrics_rows;
  std::vector<sched::Selection> selections;
  std::vector<std::vector<double>> erp_rows;  // phase-2 ERP per task
  /// mean-over-tasks best return right after the jumpstart phase
  double post_jumpstart_mean_best_return = 0.0;
  double final_mean_best_return = 0.0;
  double final_mean_best_distance = 0.0;
  double final_mean_best_deviation = 0.0;
};

/// Drives one seeded run of any method.
class Trainer {
 public:
  Trainer(RunConfig config, std::uint64_t seed, std::optional<std::filesystem::path> out_dir);

  RunArtifacts run();

  /// Called before each training iteration with the active task.
  std::function<void(const Trainer&, std::size_t task)> on_iteration_begin;
  /// Called after every optimizer step.
  std::function<void(const Trainer&, std::size_t task, int step)> on_optimizer_step;

  const ppo::ActorCritic& agent() const { return agent_; }
  const sched::Scheduler& scheduler() const { return scheduler_; }
  const StreamRegistry& streams() const { return streams_; }
  const RunConfig& config() const { return config_; }
  long iteration() const { return k_; }

 private:
  struct TaskRuntime {
    env::ArmSpec spec;
    std::vector<env::ReacherEnv> envs;
    std::vector<std::mt19937_64> action_rngs;
    std::vector<env::ReacherEnv> mean_envs;
    std::vector<std::mt19937_64> mean_rngs;
    long episodes = 0;
    long train_episodes = 0;
  };

  struct IterResult {
    metrics::EvalRecord record;
    double train_return = 0.0;
    std::optional<metrics::EvalRecord> mean_record;
  };

  IterResult train_iteration(std::size_t task, bool jumpstart);
  IterResult eval_iteration(std::size_t task);
  std::optional<metrics::EvalRecord> mean_action_eval(std::size_t task);
  metrics::EvalRecord make_record(std::size_t task, const ppo::RolloutBuffer& buf) const;
  double erp_signal(const ppo::RolloutBuffer& buf) const;
  double current_lr() const;
  long counted_episodes() const;
  void emit_rows(const std::map<std::size_t, IterResult>& results);
  void open_outputs();
  void write_final();

  RunConfig config_;
  std::uint64_t seed_;
  std::optional<std::filesystem::path> dir_;
  std::vector<env::ArmSpec> specs_;
  StreamRegistry streams_;
  ppo::ActorCritic agent_;
  ppo::AdamState actor_opt_, critic_opt_;
  std::vector<ppo::RewardNormalizer> normalizers_;
  std::vector<TaskRuntime> tasks_;
  std::mt19937_64 method_rng_;
  sched::Scheduler scheduler_;
  metrics::BestPolicyStore best_;
  long k_ = 0;
  long total_episodes_ = 0;
  long train_episodes_ = 0;
  RunArtifacts artifacts_;

  std::ofstream metrics_csv_, scheduler_csv_, train_log_;
};

RunArtifacts run_method(const RunConfig& config, std::uint64_t seed,
                        std::optional<std::filesystem::path> out_dir);
RunArtifacts run_erp_bpnn(RunConfig config, std::uint64_t seed,
                          std::optional<std::filesystem::path> out_dir);
RunArtifacts run_random_bpnn(RunConfig config, std::uint64_t seed,
                             std::optional<std::filesystem::path> out_dir);
RunArtifacts run_random_mlp(RunConfig config, std::uint64_t seed,
                            std::optional<std::filesystem::path> out_dir);

/// Closed-form total episodes for a run with `phase2` post-jumpstart iterations.
long expected_episode_total(const RunConfig& config, long phase2);

}  // namespace erpbpnn
