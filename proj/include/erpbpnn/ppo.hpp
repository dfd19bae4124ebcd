#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "erpbpnn/bpnn.hpp"
#include "erpbpnn/env.hpp"

namespace erpbpnn::ppo {

struct Hyper {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double vf_coef = 0.5;
  double ent_coef = 0.0;
  double learning_rate = 3e-4;
  bool linear_lr_decay = false;
  int epochs = 10;
  int minibatch_size = 64;
  double max_grad_norm = 0.5;  // <= 0 disables clipping
  bool normalize_advantages = true;
  double init_log_std = 0.0;
  double log_std_min = -20.0;
  double log_std_max = 2.0;
};

/// Diagonal Gaussian with a state-independent log standard deviation.
struct GaussianHead {
  static double log_prob(const Vec& mean, const Vec& log_std, const Vec& action);
  static double entropy(const Vec& log_std);
  static Vec sample(const Vec& mean, const Vec& log_std, std::mt19937_64& rng);
};

/// Actor and critic are separate networks over the same task columns.
struct ActorCritic {
  BpnnNet actor;
  BpnnNet critic;
  std::vector<Vec> log_std;  // one per task

  double clamp_log_std_min = -20.0;
  double clamp_log_std_max = 2.0;

  Vec clamped_log_std(std::size_t task) const;
  Vec mean_action(const Vec& obs, std::size_t task) const;
  double value(const Vec& obs, std::size_t task) const;
};

/// Running mean/variance over batches (parallel-merge form).
class RunningMeanStd {
 public:
  void update(std::span<const double> batch);
  double mean() const { return mean_; }
  double var() const { return var_; }
  double count() const { return count_; }
  void restore(double mean, double var, double count);

 private:
  double mean_ = 0.0;
  double var_ = 1.0;
  double count_ = 1e-4;
};

/// Scales rewards by the running std of the discounted return (no mean
/// subtraction) and clips the result into (-clip, clip).
class RewardNormalizer {
 public:
  RewardNormalizer() = default;
  RewardNormalizer(std::size_t num_envs, double gamma, double clip = 10.0, double epsilon = 1e-8);

  /// One lockstep step across all envs.
  std::vector<double> normalize(std::span<const double> rewards, std::span<const char> dones);

  const RunningMeanStd& stats() const { return rms_; }
  nlohmann::json to_json() const;
  void from_json(const nlohmann::json& j);

 private:
  std::vector<double> returns_;
  RunningMeanStd rms_;
  double gamma_ = 0.99;
  double clip_ = 10.0;
  double epsilon_ = 1e-8;
};

struct Transition {
  Vec obs;
  Vec action;
  double log_prob = 0.0;
  double raw_reward = 0.0;
  double reward = 0.0;  // training reward: normalized-clipped, or raw if no normalizer
  double value = 0.0;
  bool done = false;
};

struct EpisodeSummary {
  std::size_t env = 0;
  double raw_return = 0.0;
  double train_return = 0.0;
  double discounted_raw_return = 0.0;
  double final_distance = 0.0;
  double deviation = 0.0;
  std::vector<env::Vec2> fingertip_path;  // x(0)..x(T)
  env::Vec2 target = env::Vec2::Zero();
};

struct RolloutBuffer {
  std::size_t task = 0;
  std::vector<Transition> transitions;  // env-major, episodes contiguous
  std::vector<ForwardTrace> actor_traces;
  std::vector<ForwardTrace> critic_traces;
  std::vector<double> advantages;
  std::vector<double> returns;
  std::vector<EpisodeSummary> episodes;

  std::size_t size() const { return transitions.size(); }
  double mean_raw_return() const;
  double mean_train_return() const;
};

enum class ActionMode { Sample, Mean };

struct RolloutOptions {
  int episodes_per_env = 2;
  double gamma = 0.99;  // discounted-return metric only
  ActionMode mode = ActionMode::Sample;
  std::vector<env::TraceRecord>* trace = nullptr;
  std::size_t episode_offset = 0;  // numbering for trace records
};

/// Runs `episodes_per_env` full episodes on every env in lockstep. Rewards go
/// through `normalizer` when given; otherwise the raw reward is the training
/// reward. `action_rngs[i]` drives env i.
RolloutBuffer collect_rollout(std::size_t task, const ActorCritic& ac, std::span<env::ReacherEnv> envs,
                              std::span<std::mt19937_64> action_rngs, RewardNormalizer* normalizer,
                              const RolloutOptions& options);

/// Fills advantages and return targets. Advantages are left unnormalized.
void compute_gae(RolloutBuffer& buffer, double gamma, double lambda);

struct AdamHyper {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of `param` in place. `step` counts from 1.
template <typename P, typename G>
void adam_update(P& param, const G& grad, P& m, P& v, long step, const AdamHyper& h) {
  m = h.beta1 * m + (1.0 - h.beta1) * grad;
  v = (h.beta2 * v.array() + (1.0 - h.beta2) * grad.array().square()).matrix();
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
  param.array() -= h.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + h.eps);
}

/// Adam moments keyed by task column, plus free vectors (log-std).
class AdamState {
 public:
  /// Updates an unfrozen module; frozen modules are skipped entirely, and
  /// laterals are skipped when the module marks them frozen.
  void step_module(TaskModule& module, const ModuleParams& grad, const AdamHyper& h);
  void step_vector(std::size_t key, Vec& param, const Vec& grad, const AdamHyper& h);

  bool has_module(std::size_t m) const { return modules_.count(m) != 0; }
  long module_steps(std::size_t m) const;

 private:
  struct ModuleSlot {
    ModuleParams m, v;
    long step = 0;
  };
  struct VectorSlot {
    Vec m, v;
    long step = 0;
  };
  std::map<std::size_t, ModuleSlot> modules_;
  std::map<std::size_t, VectorSlot> vectors_;
};

/// Applies `grads` to every unfrozen module of `net`.
void adam_step(BpnnNet& net, const GradientSet& grads, AdamState& state, const AdamHyper& h);

/// min(r A, clip(r, 1-eps, 1+eps) A) for one sample.
double clipped_surrogate(double ratio, double advantage, double eps);
/// 0.5 max((V-R)^2, (V_old + clip(V - V_old, -eps, eps) - R)^2) for one sample.
double clipped_value_loss(double value, double old_value, double target, double eps);

struct UpdateStats {
  double policy_loss = 0.0;      // -L^CLIP, averaged over minibatches
  double value_loss = 0.0;
  double entropy = 0.0;
  double grad_norm = 0.0;        // pre-clip global norm, averaged
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double first_surrogate = 0.0;  // L^CLIP on the first minibatch of epoch 0
  int optimizer_steps = 0;
};

using StepHook = std::function<void(int step)>;

/// PPO epochs over `buffer` for task `active`. Preconditions: `active` is the
/// only unfrozen column in both nets and compute_gae has run. Throws
/// TrainingError on a non-finite loss.
UpdateStats ppo_update(RolloutBuffer& buffer, ActorCritic& ac, AdamState& actor_opt,
                       AdamState& critic_opt, std::size_t active, const Hyper& hyper, double lr,
                       std::mt19937_64& rng, const StepHook& on_step = {});

}  // namespace erpbpnn::ppo
