#include "erpbpnn/ppo.hpp"

#include "erpbpnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace erpbpnn::ppo {

namespace {
constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)
}

double GaussianHead::log_prob(const Vec& mean, const Vec& log_std, const Vec& action) {
  double lp = 0.0;
  for (Index k = 0; k < mean.size(); ++k) {
    const double z = (action[k] - mean[k]) * std::exp(-log_std[k]);
    lp += -0.5 * z * z - log_std[k] - kHalfLog2Pi;
  }
  return lp;
}

double GaussianHead::entropy(const Vec& log_std) {
  return (log_std.array() + 0.5 + kHalfLog2Pi).sum();
}

Vec GaussianHead::sample(const Vec& mean, const Vec& log_std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec a(mean.size());
  for (Index k = 0; k < mean.size(); ++k) a[k] = mean[k] + std::exp(log_std[k]) * normal(rng);
  return a;
}

Vec ActorCritic::clamped_log_std(std::size_t task) const {
  return log_std.at(task).cwiseMax(clamp_log_std_min).cwiseMin(clamp_log_std_max);
}

Vec ActorCritic::mean_action(const Vec& obs, std::size_t task) const {
  return forward(actor, obs, task).output(task);
}

double ActorCritic::value(const Vec& obs, std::size_t task) const {
  return forward(critic, obs, task).output(task)[0];
}

void RunningMeanStd::update(std::span<const double> batch) {
  if (batch.empty()) return;
  const double n = static_cast<double>(batch.size());
  const double bmean = std::accumulate(batch.begin(), batch.end(), 0.0) / n;
  double bvar = 0.0;
  for (double x : batch) bvar += (x - bmean) * (x - bmean);
  bvar /= n;

  const double delta = bmean - mean_;
  const double total = count_ + n;
  const double m2 = var_ * count_ + bvar * n + delta * delta * count_ * n / total;
  mean_ += delta * n / total;
  var_ = m2 / total;
  count_ = total;
}

void RunningMeanStd::restore(double mean, double var, double count) {
  mean_ = mean;
  var_ = var;
  count_ = count;
}

RewardNormalizer::RewardNormalizer(std::size_t num_envs, double gamma, double clip, double epsilon)
    : returns_(num_envs, 0.0), gamma_(gamma), clip_(clip), epsilon_(epsilon) {}

std::vector<double> RewardNormalizer::normalize(std::span<const double> rewards,
                                                std::span<const char> dones) {
  if (rewards.size() != returns_.size() || dones.size() != returns_.size())
    throw ConfigError("reward normalizer: batch size does not match env count");
  for (std::size_t i = 0; i < rewards.size(); ++i) returns_[i] = returns_[i] * gamma_ + rewards[i];
  rms_.update(returns_);
  const double scale = 1.0 / std::sqrt(rms_.var() + epsilon_);
  // Open interval (-clip, clip).
  const double bound = std::nextafter(clip_, 0.0);
  std::vector<double> out(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    out[i] = std::clamp(rewards[i] * scale, -bound, bound);
    if (dones[i]) returns_[i] = 0.0;
  }
  return out;
}

nlohmann::json RewardNormalizer::to_json() const {
  return {{"returns", returns_}, {"mean", rms_.mean()}, {"var", rms_.var()},
          {"count", rms_.count()}, {"gamma", gamma_},    {"clip", clip_},
          {"epsilon", epsilon_}};
}

void RewardNormalizer::from_json(const nlohmann::json& j) {
  returns_ = j.at("returns").get<std::vector<double>>();
  rms_.restore(j.at("mean").get<double>(), j.at("var").get<double>(), j.at("count").get<double>());
  gamma_ = j.at("gamma").get<double>();
  clip_ = j.at("clip").get<double>();
  epsilon_ = j.at("epsilon").get<double>();
}

double RolloutBuffer::mean_raw_return() const {
  if (episodes.empty()) return 0.0;
  double s = 0.0;
  for (const auto& e : episodes) s += e.raw_return;
  return s / static_cast<double>(episodes.size());
}

double RolloutBuffer::mean_train_return() const {
  if (episodes.empty()) return 0.0;
  double s = 0.0;
  for (const auto& e : episodes) s += e.train_return;
  return s / static_cast<double>(episodes.size());
}

RolloutBuffer collect_rollout(std::size_t task, const ActorCritic& ac, std::span<env::ReacherEnv> envs,
                              std::span<std::mt19937_64> action_rngs, RewardNormalizer* normalizer,
                              const RolloutOptions& options) {
  const std::size_t num_envs = envs.size();
  if (num_envs == 0 || action_rngs.size() != num_envs)
    throw ConfigError("collect_rollout: need one action stream per env");
  const int length = envs.front().spec().episode_length;
  const Vec log_std = ac.clamped_log_std(task);

  // Per-env slices, concatenated env-major at the end.
  std::vector<RolloutBuffer> per_env(num_envs);
  std::vector<EpisodeSummary> open(num_envs);
  std::vector<Vec> actions(num_envs);
  std::vector<double> raw(num_envs);
  std::vector<char> dones(num_envs);

  for (int ep = 0; ep < options.episodes_per_env; ++ep) {
    std::vector<env::PaddedObs> obs(num_envs);
    for (std::size_t e = 0; e < num_envs; ++e) {
      obs[e] = envs[e].reset();
      open[e] = EpisodeSummary{};
      open[e].env = e;
      open[e].target = envs[e].state().target;
      open[e].fingertip_path.reserve(length + 1);
      open[e].fingertip_path.push_back(envs[e].fingertip());
    }
    double discount = 1.0;
    for (int t = 0; t < length; ++t) {
      for (std::size_t e = 0; e < num_envs; ++e) {
        Vec x = obs[e];
        ForwardTrace at = forward(ac.actor, x, task);
        ForwardTrace ct = forward(ac.critic, x, task);
        const Vec& mean = at.output(task);
        actions[e] = options.mode == ActionMode::Sample
                         ? GaussianHead::sample(mean, log_std, action_rngs[e])
                         : mean;
        Transition tr;
        tr.obs = std::move(x);
        tr.action = actions[e];
        tr.log_prob = GaussianHead::log_prob(mean, log_std, actions[e]);
        tr.value = ct.output(task)[0];
        per_env[e].transitions.push_back(std::move(tr));
        per_env[e].actor_traces.push_back(std::move(at));
        per_env[e].critic_traces.push_back(std::move(ct));
      }
      const auto results = env::vector_step(envs, actions);
      for (std::size_t e = 0; e < num_envs; ++e) {
        raw[e] = results[e].reward;
        dones[e] = results[e].done ? 1 : 0;
      }
      std::vector<double> train = normalizer ? normalizer->normalize(raw, dones) : raw;
      for (std::size_t e = 0; e < num_envs; ++e) {
        Transition& tr = per_env[e].transitions.back();
        tr.raw_reward = raw[e];
        tr.reward = train[e];
        tr.done = results[e].done;
        EpisodeSummary& s = open[e];
        s.raw_return += raw[e];
        s.train_return += train[e];
        s.discounted_raw_return += discount * raw[e];
        s.fingertip_path.push_back(results[e].fingertip);
        if (options.trace) {
          env::TraceRecord rec;
          rec.task = task;
          rec.episode = options.episode_offset + static_cast<std::size_t>(ep) * num_envs + e;
          rec.step = t;
          rec.obs = per_env[e].transitions.back().obs;
          rec.action = results[e].clipped_action;
          rec.reward = raw[e];
          rec.fingertip = results[e].fingertip;
          rec.target = s.target;
          options.trace->push_back(std::move(rec));
        }
        obs[e] = results[e].obs;
      }
      discount *= options.gamma;
    }
    for (std::size_t e = 0; e < num_envs; ++e) {
      EpisodeSummary& s = open[e];
      const auto& path = s.fingertip_path;
      s.final_distance = (path.back() - s.target).norm();
      s.deviation = metrics::path_deviation(path, s.target);
      per_env[e].episodes.push_back(std::move(s));
    }
  }

  RolloutBuffer out;
  out.task = task;
  for (auto& b : per_env) {
    std::move(b.transitions.begin(), b.transitions.end(), std::back_inserter(out.transitions));
    std::move(b.actor_traces.begin(), b.actor_traces.end(), std::back_inserter(out.actor_traces));
    std::move(b.critic_traces.begin(), b.critic_traces.end(), std::back_inserter(out.critic_traces));
  }
  // Episode order: episode-major, then env, matching trace numbering.
  for (int ep = 0; ep < options.episodes_per_env; ++ep)
    for (auto& b : per_env) out.episodes.push_back(std::move(b.episodes[ep]));
  return out;
}

void compute_gae(RolloutBuffer& buffer, double gamma, double lambda) {
  const std::size_t n = buffer.size();
  buffer.advantages.assign(n, 0.0);
  buffer.returns.assign(n, 0.0);
  double next_adv = 0.0;
  double next_value = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const Transition& tr = buffer.transitions[i];
    const bool terminal = tr.done || i + 1 == n;
    const double bootstrap = terminal ? 0.0 : next_value;
    const double carry = terminal ? 0.0 : next_adv;
    const double delta = tr.reward + gamma * bootstrap - tr.value;
    const double adv = delta + gamma * lambda * carry;
    buffer.advantages[i] = adv;
    buffer.returns[i] = adv + tr.value;
    next_adv = adv;
    next_value = tr.value;
  }
}

void AdamState::step_module(TaskModule& module, const ModuleParams& grad, const AdamHyper& h) {
  if (module.frozen) return;
  auto it = modules_.find(module.index);
  if (it == modules_.end()) {
    ModuleSlot slot{module.params.zeros_like(), module.params.zeros_like(), 0};
    it = modules_.emplace(module.index, std::move(slot)).first;
  }
  ModuleSlot& s = it->second;
  ++s.step;
  auto& p = module.params;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    adam_update(p.weights[l], grad.weights[l], s.m.weights[l], s.v.weights[l], s.step, h);
    adam_update(p.biases[l], grad.biases[l], s.m.biases[l], s.v.biases[l], s.step, h);
    if (module.laterals_frozen) continue;
    for (std::size_t t = 0; t < p.laterals[l].size(); ++t) {
      auto& link = p.laterals[l][t];
      if (!link) continue;
      const auto& g = *grad.laterals[l][t];
      auto& lm = *s.m.laterals[l][t];
      auto& lv = *s.v.laterals[l][t];
      adam_update(link->weight, g.weight, lm.weight, lv.weight, s.step, h);
      adam_update(link->bias, g.bias, lm.bias, lv.bias, s.step, h);
    }
  }
}

void AdamState::step_vector(std::size_t key, Vec& param, const Vec& grad, const AdamHyper& h) {
  auto it = vectors_.find(key);
  if (it == vectors_.end()) {
    it = vectors_.emplace(key, VectorSlot{Vec::Zero(param.size()), Vec::Zero(param.size()), 0}).first;
  }
  VectorSlot& s = it->second;
  ++s.step;
  adam_update(param, grad, s.m, s.v, s.step, h);
}

long AdamState::module_steps(std::size_t m) const {
  auto it = modules_.find(m);
  return it == modules_.end() ? 0 : it->second.step;
}

void adam_step(BpnnNet& net, const GradientSet& grads, AdamState& state, const AdamHyper& h) {
  if (grads.modules.size() != net.num_modules())
    throw ConfigError("adam_step: gradient set does not match network");
  for (std::size_t m = 0; m < net.num_modules(); ++m)
    state.step_module(net.module(m), grads.modules[m], h);
}

double clipped_surrogate(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

double clipped_value_loss(double value, double old_value, double target, double eps) {
  const double unclipped = (value - target) * (value - target);
  const double v_clip = old_value + std::clamp(value - old_value, -eps, eps);
  const double clipped = (v_clip - target) * (v_clip - target);
  return 0.5 * std::max(unclipped, clipped);
}

namespace {

void check_exclusive_unfrozen(const BpnnNet& net, std::size_t active, const char* which) {
  for (std::size_t m = 0; m < net.num_modules(); ++m) {
    const bool should_be_frozen = m != active;
    if (net.module(m).frozen != should_be_frozen) {
      throw ConfigError(std::string("ppo_update: ") + which + " column " + std::to_string(m) +
                        (should_be_frozen ? " must be frozen" : " must be unfrozen"));
    }
  }
}

}  // namespace

UpdateStats ppo_update(RolloutBuffer& buffer, ActorCritic& ac, AdamState& actor_opt,
                       AdamState& critic_opt, std::size_t active, const Hyper& hyper, double lr,
                       std::mt19937_64& rng, const StepHook& on_step) {
  check_exclusive_unfrozen(ac.actor, active, "actor");
  check_exclusive_unfrozen(ac.critic, active, "critic");
  const std::size_t n = buffer.size();
  if (n == 0 || buffer.advantages.size() != n || buffer.actor_traces.size() != n ||
      buffer.critic_traces.size() != n)
    throw ConfigError("ppo_update: buffer is empty or advantages were not computed");

  TaskModule& actor_mod = ac.actor.module(active);
  TaskModule& critic_mod = ac.critic.module(active);
  const bool actor_skip_lat = actor_mod.laterals_frozen;
  const bool critic_skip_lat = critic_mod.laterals_frozen;
  Vec& log_std = ac.log_std.at(active);
  const AdamHyper adam{lr, 0.9, 0.999, 1e-8};
  const std::size_t mb = static_cast<std::size_t>(std::max(1, hyper.minibatch_size));
  const double eps = hyper.clip_eps;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  UpdateStats stats;
  int minibatches = 0;
  ModuleParams actor_grad = actor_mod.params.zeros_like();
  ModuleParams critic_grad = critic_mod.params.zeros_like();

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += mb) {
      const std::size_t stop = std::min(n, start + mb);
      const std::size_t count = stop - start;
      const double inv = 1.0 / static_cast<double>(count);

      double adv_mean = 0.0, adv_std = 1.0;
      if (hyper.normalize_advantages && count > 1) {
        for (std::size_t i = start; i < stop; ++i) adv_mean += buffer.advantages[order[i]];
        adv_mean *= inv;
        double ss = 0.0;
        for (std::size_t i = start; i < stop; ++i) {
          const double d = buffer.advantages[order[i]] - adv_mean;
          ss += d * d;
        }
        adv_std = std::sqrt(ss / static_cast<double>(count - 1)) + 1e-8;
      }

      actor_grad.set_zero();
      critic_grad.set_zero();
      const Vec ls = log_std.cwiseMax(hyper.log_std_min).cwiseMin(hyper.log_std_max);
      const Vec inv_var = (-2.0 * ls).array().exp();
      Vec ls_grad = Vec::Zero(ls.size());
      double surrogate = 0.0, v_loss = 0.0, kl = 0.0, clipped_count = 0.0;

      for (std::size_t i = start; i < stop; ++i) {
        const std::size_t idx = order[i];
        const Transition& tr = buffer.transitions[idx];
        const double adv = hyper.normalize_advantages && count > 1
                               ? (buffer.advantages[idx] - adv_mean) / adv_std
                               : buffer.advantages[idx];

        ForwardTrace& at = buffer.actor_traces[idx];
        forward_active(ac.actor, at, active);
        const Vec& mean = at.output(active);
        const double logp = GaussianHead::log_prob(mean, ls, tr.action);
        const double log_ratio = logp - tr.log_prob;
        const double ratio = std::exp(log_ratio);
        const double unclipped_term = ratio * adv;
        const double clipped_term = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv;
        surrogate += std::min(unclipped_term, clipped_term);
        kl += (ratio - 1.0) - log_ratio;
        if (std::abs(ratio - 1.0) > eps) clipped_count += 1.0;

        // d(-surrogate)/d logp; zero when the clipped branch is selected.
        const double dlogp = unclipped_term <= clipped_term ? -ratio * adv * inv : 0.0;
        if (dlogp != 0.0) {
          const Vec diff = tr.action - mean;
          const Vec dmean = dlogp * diff.cwiseProduct(inv_var);
          accumulate_backward(ac.actor, at, active, dmean, actor_grad, actor_skip_lat);
          ls_grad.array() += dlogp * (diff.array().square() * inv_var.array() - 1.0);
        }

        ForwardTrace& ct = buffer.critic_traces[idx];
        forward_active(ac.critic, ct, active);
        const double v = ct.output(active)[0];
        const double target = buffer.returns[idx];
        v_loss += clipped_value_loss(v, tr.value, target, eps);
        const double unclipped = (v - target) * (v - target);
        const double delta_v = std::clamp(v - tr.value, -eps, eps);
        const double v_clip = tr.value + delta_v;
        const double clipped = (v_clip - target) * (v_clip - target);
        double dv = 0.0;
        if (unclipped >= clipped) {
          dv = v - target;
        } else if (std::abs(v - tr.value) < eps) {
          dv = v_clip - target;
        }
        if (dv != 0.0) {
          Vec g(1);
          g[0] = hyper.vf_coef * dv * inv;
          accumulate_backward(ac.critic, ct, active, g, critic_grad, critic_skip_lat);
        }
      }

      surrogate *= inv;
      v_loss *= inv;
      const double entropy = GaussianHead::entropy(ls);
      const double loss = -surrogate + hyper.vf_coef * v_loss - hyper.ent_coef * entropy;
      if (!std::isfinite(loss) || !actor_grad.is_finite() || !critic_grad.is_finite() ||
          !all_finite(ls_grad)) {
        std::ostringstream msg;
        msg << "ppo_update: non-finite loss for task " << active << " (epoch " << epoch
            << ", minibatch at " << start << "): policy=" << -surrogate << " value=" << v_loss
            << " entropy=" << entropy;
        throw TrainingError(msg.str());
      }
      ls_grad.array() -= hyper.ent_coef;
      // Components held at the clamp bound receive no gradient.
      for (Index k = 0; k < ls.size(); ++k)
        if (log_std[k] != ls[k]) ls_grad[k] = 0.0;

      const double norm =
          std::sqrt(actor_grad.squared_norm() + critic_grad.squared_norm() + ls_grad.squaredNorm());
      if (hyper.max_grad_norm > 0.0 && norm > hyper.max_grad_norm) {
        const double s = hyper.max_grad_norm / (norm + 1e-6);
        actor_grad.scale(s);
        critic_grad.scale(s);
        ls_grad *= s;
      }

      actor_opt.step_module(actor_mod, actor_grad, adam);
      actor_opt.step_vector(active, log_std, ls_grad, adam);
      log_std = log_std.cwiseMax(hyper.log_std_min).cwiseMin(hyper.log_std_max);
      critic_opt.step_module(critic_mod, critic_grad, adam);

      if (minibatches == 0) stats.first_surrogate = surrogate;
      stats.policy_loss += -surrogate;
      stats.value_loss += v_loss;
      stats.entropy += entropy;
      stats.grad_norm += norm;
      stats.approx_kl += kl * inv;
      stats.clip_fraction += clipped_count * inv;
      ++minibatches;
      ++stats.optimizer_steps;
      if (on_step) on_step(stats.optimizer_steps);
    }
  }

  const double k = static_cast<double>(std::max(1, minibatches));
  stats.policy_loss /= k;
  stats.value_loss /= k;
  stats.entropy /= k;
  stats.grad_norm /= k;
  stats.approx_kl /= k;
  stats.clip_fraction /= k;
  return stats;
}

}  // namespace erpbpnn::ppo
