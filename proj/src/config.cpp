#include "erpbpnn/config.hpp"

#define TOML_HEADER_ONLY 1
#include <toml.hpp>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace erpbpnn {

std::string to_string(Method m) {
  switch (m) {
    case Method::ErpBpnn: return "erp-bpnn";
    case Method::RandomBpnn: return "random-bpnn";
    case Method::RandomMlp: return "random-mlp";
  }
  return "unknown";
}

Method method_from_string(std::string_view s) {
  if (s == "erp-bpnn") return Method::ErpBpnn;
  if (s == "random-bpnn") return Method::RandomBpnn;
  if (s == "random-mlp") return Method::RandomMlp;
  throw ConfigError("method: expected one of erp-bpnn, random-bpnn, random-mlp, got '" +
                    std::string(s) + "'");
}

std::vector<env::ArmSpec> RunConfig::resolved_tasks() const {
  std::vector<env::ArmSpec> out = tasks;
  if (out.empty()) out = {env::make_arm(2), env::make_arm(3), env::make_arm(4)};
  for (auto& t : out) t.episode_length = episode_length;
  return out;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError(field + ": " + why);
  };
  if (seeds.empty()) fail("seeds", "at least one seed required");
  if (window < 2) fail("schedule.window", "must be at least 2");
  if (k_init <= static_cast<long>(window)) fail("schedule.k_init", "must exceed schedule.window");
  if (parallel_envs < 1) fail("schedule.parallel_envs", "must be at least 1");
  if (episodes_per_env < 1) fail("schedule.episodes_per_env", "must be at least 1");
  if (episode_length < 1) fail("schedule.episode_length", "must be at least 1");
  const auto specs = resolved_tasks();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    try {
      specs[i].validate();
    } catch (const ConfigError& e) {
      fail("tasks[" + std::to_string(i) + "]", e.what());
    }
  }
  const long jumpstart =
      static_cast<long>(specs.size()) * k_init * parallel_envs * episodes_per_env;
  if (budget_episodes <= jumpstart)
    fail("schedule.budget_episodes",
         "must exceed the jumpstart total of " + std::to_string(jumpstart) + " episodes");
  if (!(softmax_temperature > 0.0)) fail("schedule.softmax_temperature", "must be positive");
  if (hidden_layers < 1) fail("network.hidden_layers", "must be at least 1");
  if (hidden_size < 1) fail("network.hidden_size", "must be at least 1");
  if (!(ppo.gamma >= 0.0 && ppo.gamma <= 1.0)) fail("ppo.gamma", "must be in [0, 1]");
  if (!(ppo.gae_lambda >= 0.0 && ppo.gae_lambda <= 1.0)) fail("ppo.gae_lambda", "must be in [0, 1]");
  if (!(ppo.clip_eps > 0.0)) fail("ppo.clip_eps", "must be positive");
  if (!(ppo.learning_rate > 0.0)) fail("ppo.learning_rate", "must be positive");
  if (ppo.epochs < 1) fail("ppo.epochs", "must be at least 1");
  if (ppo.minibatch_size < 1) fail("ppo.minibatch_size", "must be at least 1");
  if (!(ppo.log_std_min < ppo.log_std_max)) fail("ppo.log_std_min", "must be below ppo.log_std_max");
  if (frequency_window < 1) fail("report.frequency_window", "must be at least 1");
}

namespace {

// Reads typed values from one TOML table and reports unknown keys.
class TableReader {
 public:
  TableReader(const toml::table* table, std::string prefix)
      : table_(table), prefix_(std::move(prefix)) {}

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      auto v = node->value_exact<bool>();
      if (!v) fail(key, "expected a boolean");
      out = *v;
    } else if constexpr (std::is_integral_v<T>) {
      auto v = node->value_exact<std::int64_t>();
      if (!v) fail(key, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (*v < 0) fail(key, "must be non-negative");
      }
      out = static_cast<T>(*v);
    } else if constexpr (std::is_floating_point_v<T>) {
      auto v = node->value<double>();  // integers are accepted for reals
      if (!v) fail(key, "expected a number");
      out = *v;
    } else if constexpr (std::is_same_v<T, std::string>) {
      auto v = node->value_exact<std::string>();
      if (!v) fail(key, "expected a string");
      out = *v;
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

  template <typename T>
  void read_array(const char* key, std::vector<T>& out) {
    seen_.insert(key);
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    const toml::array* arr = node->as_array();
    if (!arr) fail(key, "expected an array");
    out.clear();
    for (const auto& el : *arr) {
      if constexpr (std::is_integral_v<T>) {
        auto v = el.value_exact<std::int64_t>();
        if (!v || (std::is_unsigned_v<T> && *v < 0)) fail(key, "expected non-negative integers");
        out.push_back(static_cast<T>(*v));
      } else {
        auto v = el.value<double>();
        if (!v) fail(key, "expected numbers");
        out.push_back(*v);
      }
    }
  }

  void allow(const char* key) { seen_.insert(key); }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_) {
      if (!seen_.count(std::string(k.str())))
        throw ConfigError(name(std::string(k.str())) + ": unknown key");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw ConfigError(name(key) + ": " + why);
  }

  std::string name(const std::string& key) const {
    return prefix_.empty() ? key : prefix_ + "." + key;
  }

 private:
  const toml::table* table_;
  std::string prefix_;
  std::set<std::string> seen_;
};

const toml::table* subtable(const toml::table& root, const char* key) {
  const toml::node* n = root.get(key);
  if (!n) return nullptr;
  const toml::table* t = n->as_table();
  if (!t) throw ConfigError(std::string(key) + ": expected a table");
  return t;
}

}  // namespace

RunConfig parse_config(std::string_view toml_text) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config: TOML syntax error at line " << e.source().begin.line << ": " << e.description();
    throw ConfigError(msg.str());
  }

  RunConfig c;
  TableReader top(&root, "");
  std::string method = to_string(c.method);
  top.read("method", method);
  c.method = method_from_string(method);
  top.read_array("seeds", c.seeds);
  top.read("output_dir", c.output_dir);

  {
    TableReader t(subtable(root, "schedule"), "schedule");
    t.read("k_init", c.k_init);
    t.read("window", c.window);
    t.read("parallel_envs", c.parallel_envs);
    t.read("episodes_per_env", c.episodes_per_env);
    t.read("episode_length", c.episode_length);
    t.read("budget_episodes", c.budget_episodes);
    std::string counting = "all", selection = "argmax", erp_reward = "normalized";
    t.read("budget_counting", counting);
    t.read("selection", selection);
    t.read("erp_reward", erp_reward);
    if (counting == "all") c.budget_counting = BudgetCounting::All;
    else if (counting == "training") c.budget_counting = BudgetCounting::TrainingOnly;
    else t.fail("budget_counting", "expected 'all' or 'training'");
    if (selection == "argmax") c.selection = SelectionRule::Argmax;
    else if (selection == "softmax") c.selection = SelectionRule::Softmax;
    else t.fail("selection", "expected 'argmax' or 'softmax'");
    if (erp_reward == "normalized") c.erp_reward = ErpReward::Normalized;
    else if (erp_reward == "raw") c.erp_reward = ErpReward::Raw;
    else t.fail("erp_reward", "expected 'normalized' or 'raw'");
    t.read("softmax_temperature", c.softmax_temperature);
    t.read("freeze_laterals_in_jumpstart", c.freeze_laterals_in_jumpstart);
    t.read("mean_action_eval", c.mean_action_eval);
    t.finish();
  }
  {
    TableReader t(subtable(root, "network"), "network");
    t.read("hidden_layers", c.hidden_layers);
    long hidden = c.hidden_size;
    t.read("hidden_size", hidden);
    c.hidden_size = hidden;
    t.read("lateral_init_scale", c.lateral_init_scale);
    t.read("actor_output_gain", c.actor_output_gain);
    t.read("critic_output_gain", c.critic_output_gain);
    t.finish();
  }
  {
    TableReader t(subtable(root, "ppo"), "ppo");
    auto& p = c.ppo;
    t.read("gamma", p.gamma);
    t.read("gae_lambda", p.gae_lambda);
    t.read("clip_eps", p.clip_eps);
    t.read("vf_coef", p.vf_coef);
    t.read("ent_coef", p.ent_coef);
    t.read("learning_rate", p.learning_rate);
    t.read("linear_lr_decay", p.linear_lr_decay);
    t.read("epochs", p.epochs);
    t.read("minibatch_size", p.minibatch_size);
    t.read("max_grad_norm", p.max_grad_norm);
    t.read("normalize_advantages", p.normalize_advantages);
    t.read("init_log_std", p.init_log_std);
    t.read("log_std_min", p.log_std_min);
    t.read("log_std_max", p.log_std_max);
    t.finish();
  }
  {
    TableReader t(subtable(root, "report"), "report");
    t.read_array("milestones", c.milestones);
    t.read("frequency_window", c.frequency_window);
    t.finish();
  }
  for (const char* key : {"schedule", "network", "ppo", "report", "tasks"}) top.allow(key);
  top.finish();
  if (const toml::node* n = root.get("tasks")) {
    const toml::array* arr = n->as_array();
    if (!arr) throw ConfigError("tasks: expected an array of tables");
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const toml::table* tt = (*arr)[i].as_table();
      const std::string prefix = "tasks[" + std::to_string(i) + "]";
      if (!tt) throw ConfigError(prefix + ": expected a table");
      TableReader t(tt, prefix);
      env::ArmSpec spec;
      t.read("n_links", spec.n_links);
      double reach = 0.21;
      t.read("total_reach", reach);
      t.read_array("link_lengths", spec.link_lengths);
      t.read("max_torque", spec.max_torque);
      t.finish();
      if (spec.link_lengths.empty() && spec.n_links > 0)
        spec.link_lengths.assign(spec.n_links, reach / spec.n_links);
      c.tasks.push_back(std::move(spec));
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : c.resolved_tasks()) tasks.push_back(env::to_json(t));
  const auto& p = c.ppo;
  return {
      {"method", to_string(c.method)},
      {"seeds", c.seeds},
      {"output_dir", c.output_dir},
      {"tasks", tasks},
      {"schedule",
       {{"k_init", c.k_init},
        {"window", c.window},
        {"parallel_envs", c.parallel_envs},
        {"episodes_per_env", c.episodes_per_env},
        {"episode_length", c.episode_length},
        {"budget_episodes", c.budget_episodes},
        {"budget_counting", c.budget_counting == BudgetCounting::All ? "all" : "training"},
        {"selection", c.selection == SelectionRule::Argmax ? "argmax" : "softmax"},
        {"softmax_temperature", c.softmax_temperature},
        {"erp_reward", c.erp_reward == ErpReward::Normalized ? "normalized" : "raw"},
        {"freeze_laterals_in_jumpstart", c.freeze_laterals_in_jumpstart},
        {"mean_action_eval", c.mean_action_eval}}},
      {"network",
       {{"hidden_layers", c.hidden_layers},
        {"hidden_size", c.hidden_size},
        {"lateral_init_scale", c.lateral_init_scale},
        {"actor_output_gain", c.actor_output_gain},
        {"critic_output_gain", c.critic_output_gain}}},
      {"ppo",
       {{"gamma", p.gamma},
        {"gae_lambda", p.gae_lambda},
        {"clip_eps", p.clip_eps},
        {"vf_coef", p.vf_coef},
        {"ent_coef", p.ent_coef},
        {"learning_rate", p.learning_rate},
        {"linear_lr_decay", p.linear_lr_decay},
        {"epochs", p.epochs},
        {"minibatch_size", p.minibatch_size},
        {"max_grad_norm", p.max_grad_norm},
        {"normalize_advantages", p.normalize_advantages},
        {"init_log_std", p.init_log_std},
        {"log_std_min", p.log_std_min},
        {"log_std_max", p.log_std_max}}},
      {"report", {{"milestones", c.milestones}, {"frequency_window", c.frequency_window}}},
  };
}

std::filesystem::path resolve_output_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("ERPBPNN_OUTPUT_ROOT"); root && *root)
    return std::filesystem::path(root) / p;
  return p;
}

}  // namespace erpbpnn
