#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "erpbpnn/linalg.hpp"

namespace erpbpnn::env {

inline constexpr int kMaxLinks = 4;
inline constexpr Index kObsDim = 16;
inline constexpr int kEpisodeLength = 50;

/// Kinematic integration constants.
struct Dynamics {
  double dt = 0.02;
  double gain = 20.0;
  double damping = 1.0;
};

struct ArmSpec {
  int n_links = 2;
  std::vector<double> link_lengths;
  double max_torque = 1.0;
  int episode_length = kEpisodeLength;

  double reach() const;
  void validate() const;
};

/// Equal link lengths summing to `total_reach`.
ArmSpec make_arm(int n_links, double total_reach = 0.21);

using Vec2 = Eigen::Vector2d;
using PaddedObs = Eigen::Matrix<double, kObsDim, 1>;

struct ReacherState {
  Vec joint_angles;
  Vec joint_velocities;
  Vec2 target = Vec2::Zero();
  int step_count = 0;
};

struct StepResult {
  PaddedObs obs;
  double reward = 0.0;
  bool done = false;
  Vec2 fingertip = Vec2::Zero();
  Vec clipped_action;
};

Vec2 fingertip(const ArmSpec& spec, const ReacherState& state);

/// Layout: [cos th_1..4, sin th_1..4, vel_1..4, target_x, target_y, dx, dy],
/// with d = fingertip - target and absent-link slots exactly zero.
PaddedObs observe(const ArmSpec& spec, const ReacherState& state);

/// -||fingertip - target|| - sum(a^2), with `action` already clipped.
double reward(const Vec2& tip, const Vec2& target, const Vec& action);

ReacherState reset(const ArmSpec& spec, std::mt19937_64& rng);

/// Advances one control step. Throws ConfigError on a wrong action length or
/// when stepping a finished episode.
StepResult step(const ArmSpec& spec, ReacherState& state, const Vec& action,
                const Dynamics& dyn = {});

/// One arm instance with its own RNG stream.
class ReacherEnv {
 public:
  ReacherEnv(ArmSpec spec, std::uint64_t seed, Dynamics dyn = {});

  PaddedObs reset();
  StepResult step(const Vec& action);

  const ArmSpec& spec() const { return spec_; }
  const ReacherState& state() const { return state_; }
  Vec2 fingertip() const { return env::fingertip(spec_, state_); }
  PaddedObs observation() const { return observe(spec_, state_); }

 private:
  ArmSpec spec_;
  Dynamics dyn_;
  std::mt19937_64 rng_;
  ReacherState state_;
};

/// Steps every env with its own action. Each env only touches its own state
/// and stream, so results do not depend on evaluation order.
std::vector<StepResult> vector_step(std::span<ReacherEnv> envs, std::span<const Vec> actions);

struct TraceRecord {
  std::size_t task = 0;
  std::size_t episode = 0;
  int step = 0;
  PaddedObs obs;
  Vec action;
  double reward = 0.0;
  Vec2 fingertip;
  Vec2 target;
};

nlohmann::json to_json(const TraceRecord& r);
void write_trace_jsonl(std::ostream& out, std::span<const TraceRecord> records);

nlohmann::json to_json(const ArmSpec& spec);
ArmSpec arm_from_json(const nlohmann::json& j);

}  // namespace erpbpnn::env
