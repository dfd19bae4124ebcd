#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "erpbpnn/env.hpp"
#include "erpbpnn/ppo.hpp"

namespace erpbpnn {

enum class Method { ErpBpnn, RandomBpnn, RandomMlp };
enum class BudgetCounting { All, TrainingOnly };
enum class ErpReward { Normalized, Raw };
enum class SelectionRule { Argmax, Softmax };

std::string to_string(Method m);
Method method_from_string(std::string_view s);

struct RunConfig {
  Method method = Method::ErpBpnn;
  std::vector<std::uint64_t> seeds{1};
  std::vector<env::ArmSpec> tasks;  // empty -> 2/3/4-link defaults

  // Scheduling
  long k_init = 20;
  std::size_t window = 5;
  int parallel_envs = 8;
  int episodes_per_env = 2;
  int episode_length = 50;
  long budget_episodes = 100000;
  BudgetCounting budget_counting = BudgetCounting::All;
  SelectionRule selection = SelectionRule::Argmax;
  double softmax_temperature = 1.0;
  ErpReward erp_reward = ErpReward::Normalized;
  bool freeze_laterals_in_jumpstart = true;
  bool mean_action_eval = true;

  // Network
  std::size_t hidden_layers = 3;
  Index hidden_size = 2;
  double lateral_init_scale = 0.01;
  double actor_output_gain = 0.01;
  double critic_output_gain = 1.0;

  ppo::Hyper ppo;

  std::string output_dir = "runs/erp-bpnn";
  std::vector<long> milestones{60000, 75000, 80000, 100000};
  std::size_t frequency_window = 35;

  /// Default tasks filled in and episode_length propagated to them.
  std::vector<env::ArmSpec> resolved_tasks() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Parses the TOML config format. Unknown keys and wrong types are errors.
RunConfig parse_config(std::string_view toml_text);
RunConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const RunConfig& c);

/// Resolves a relative output dir against $ERPBPNN_OUTPUT_ROOT when set.
std::filesystem::path resolve_output_dir(const std::string& dir);

}  // namespace erpbpnn
