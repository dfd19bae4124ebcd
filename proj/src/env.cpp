#include "erpbpnn/env.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace erpbpnn::env {

double ArmSpec::reach() const {
  return std::accumulate(link_lengths.begin(), link_lengths.end(), 0.0);
}

void ArmSpec::validate() const {
  if (n_links < 2 || n_links > kMaxLinks)
    throw ConfigError("arm: n_links must be in {2,3,4}, got " + std::to_string(n_links));
  if (static_cast<int>(link_lengths.size()) != n_links)
    throw ConfigError("arm: link_lengths must have n_links entries");
  for (double len : link_lengths)
    if (!(len > 0.0)) throw ConfigError("arm: link lengths must be positive");
  if (!(max_torque > 0.0)) throw ConfigError("arm: max_torque must be positive");
  if (episode_length < 1) throw ConfigError("arm: episode_length must be at least 1");
}

ArmSpec make_arm(int n_links, double total_reach) {
  ArmSpec spec;
  spec.n_links = n_links;
  if (n_links > 0) spec.link_lengths.assign(n_links, total_reach / n_links);
  spec.validate();
  return spec;
}

Vec2 fingertip(const ArmSpec& spec, const ReacherState& state) {
  Vec2 tip = Vec2::Zero();
  double angle = 0.0;
  for (int i = 0; i < spec.n_links; ++i) {
    angle += state.joint_angles[i];
    tip += spec.link_lengths[i] * Vec2(std::cos(angle), std::sin(angle));
  }
  return tip;
}

PaddedObs observe(const ArmSpec& spec, const ReacherState& state) {
  PaddedObs obs = PaddedObs::Zero();
  for (int i = 0; i < spec.n_links; ++i) {
    obs[i] = std::cos(state.joint_angles[i]);
    obs[kMaxLinks + i] = std::sin(state.joint_angles[i]);
    obs[2 * kMaxLinks + i] = state.joint_velocities[i];
  }
  const Vec2 delta = fingertip(spec, state) - state.target;
  obs.segment<2>(3 * kMaxLinks) = state.target;
  obs.segment<2>(3 * kMaxLinks + 2) = delta;
  return obs;
}

double reward(const Vec2& tip, const Vec2& target, const Vec& action) {
  return -(tip - target).norm() - action.squaredNorm();
}

ReacherState reset(const ArmSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ReacherState s;
  s.joint_angles.resize(spec.n_links);
  s.joint_velocities.resize(spec.n_links);
  for (int i = 0; i < spec.n_links; ++i) {
    // (-pi, pi]
    s.joint_angles[i] = std::numbers::pi - 2.0 * std::numbers::pi * unit(rng);
  }
  for (int i = 0; i < spec.n_links; ++i) s.joint_velocities[i] = 0.005 * (2.0 * unit(rng) - 1.0);
  const double radius = 0.9 * spec.reach() * std::sqrt(unit(rng));
  const double phi = 2.0 * std::numbers::pi * unit(rng);
  s.target = radius * Vec2(std::cos(phi), std::sin(phi));
  s.step_count = 0;
  return s;
}

StepResult step(const ArmSpec& spec, ReacherState& state, const Vec& action, const Dynamics& dyn) {
  if (action.size() != spec.n_links) {
    throw ConfigError("reacher step: action has length " + std::to_string(action.size()) +
                      ", arm has " + std::to_string(spec.n_links) + " links");
  }
  if (state.step_count >= spec.episode_length)
    throw ConfigError("reacher step: episode already finished, call reset");

  StepResult r;
  r.clipped_action = action.cwiseMax(-spec.max_torque).cwiseMin(spec.max_torque);
  // Semi-implicit Euler: velocity first, then position with the new velocity.
  state.joint_velocities +=
      dyn.dt * (dyn.gain * r.clipped_action - dyn.damping * state.joint_velocities);
  state.joint_angles += dyn.dt * state.joint_velocities;
  ++state.step_count;

  r.fingertip = fingertip(spec, state);
  r.reward = reward(r.fingertip, state.target, r.clipped_action);
  r.done = state.step_count == spec.episode_length;
  r.obs = observe(spec, state);
  return r;
}

ReacherEnv::ReacherEnv(ArmSpec spec, std::uint64_t seed, Dynamics dyn)
    : spec_(std::move(spec)), dyn_(dyn), rng_(seed) {
  spec_.validate();
  state_ = env::reset(spec_, rng_);
}

PaddedObs ReacherEnv::reset() {
  state_ = env::reset(spec_, rng_);
  return observe(spec_, state_);
}

StepResult ReacherEnv::step(const Vec& action) { return env::step(spec_, state_, action, dyn_); }

std::vector<StepResult> vector_step(std::span<ReacherEnv> envs, std::span<const Vec> actions) {
  if (envs.size() != actions.size()) {
    throw ConfigError("vector_step: " + std::to_string(envs.size()) + " envs but " +
                      std::to_string(actions.size()) + " actions");
  }
  std::vector<StepResult> out;
  out.reserve(envs.size());
  for (std::size_t i = 0; i < envs.size(); ++i) out.push_back(envs[i].step(actions[i]));
  return out;
}

namespace {
template <typename Derived>
std::vector<double> to_vector(const Eigen::MatrixBase<Derived>& v) {
  return std::vector<double>(v.derived().data(), v.derived().data() + v.size());
}
}  // namespace

nlohmann::json to_json(const TraceRecord& r) {
  return {{"task", r.task},           {"episode", r.episode},
          {"step", r.step},           {"obs", to_vector(r.obs)},
          {"action", to_vector(r.action)}, {"reward", r.reward},
          {"fingertip", to_vector(r.fingertip)}, {"target", to_vector(r.target)}};
}

void write_trace_jsonl(std::ostream& out, std::span<const TraceRecord> records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

nlohmann::json to_json(const ArmSpec& spec) {
  return {{"n_links", spec.n_links},
          {"link_lengths", spec.link_lengths},
          {"max_torque", spec.max_torque},
          {"episode_length", spec.episode_length}};
}

ArmSpec arm_from_json(const nlohmann::json& j) {
  ArmSpec spec;
  spec.n_links = j.at("n_links").get<int>();
  spec.link_lengths = j.at("link_lengths").get<std::vector<double>>();
  spec.max_torque = j.value("max_torque", 1.0);
  spec.episode_length = j.value("episode_length", kEpisodeLength);
  spec.validate();
  return spec;
}

}  // namespace erpbpnn::env
