#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "erpbpnn/linalg.hpp"

namespace erpbpnn {

/// U^{(m:t)} and its bias: a learned map from layer l-1 of source module t
/// into the pre-activation of layer l of the owning module.
struct LateralLink {
  Mat weight;
  Vec bias;
};

/// Parameter tensors of one task module. Reused as gradient and
/// optimizer-moment containers, so every instance of the same module has
/// identical shapes.
struct ModuleParams {
  std::vector<Mat> weights;  // weights[l]: n_l x n_{l-1}
  std::vector<Vec> biases;
  // laterals[l][t] is empty for l == 0, for t == owner, and in MLP mode.
  std::vector<std::vector<std::optional<LateralLink>>> laterals;

  ModuleParams zeros_like() const;
  void set_zero();
  double squared_norm() const;
  void scale(double factor);
  bool is_finite() const;
  std::size_t parameter_count() const;
};

struct TaskModule {
  std::size_t index = 0;
  std::vector<Index> layer_sizes;  // n_1..n_L; n_L is the head size
  ModuleParams params;
  bool frozen = true;
  // Only consulted while the module is unfrozen. Jumpstart training keeps
  // incoming laterals fixed.
  bool laterals_frozen = false;
};

/// Bidirectional progressive network: one column per task, each fed the same
/// input, with lateral links from every other column at layers l >= 2.
class BpnnNet {
 public:
  BpnnNet() = default;

  /// Per-module layer sizes, output layer last. All modules must have the
  /// same depth. With `lateral = false` the columns are independent MLPs.
  BpnnNet(Index input_dim, std::vector<std::vector<Index>> layer_sizes, bool lateral = true);

  /// Uniform hidden stack per module with task-specific head sizes.
  static BpnnNet make(Index input_dim, const std::vector<Index>& head_sizes,
                      std::size_t hidden_layers, Index hidden_size, bool lateral = true);

  Index input_dim() const { return input_dim_; }
  std::size_t num_modules() const { return modules_.size(); }
  std::size_t num_layers() const { return num_layers_; }
  bool has_laterals() const { return lateral_; }

  TaskModule& module(std::size_t m);
  const TaskModule& module(std::size_t m) const;
  const std::vector<TaskModule>& modules() const { return modules_; }

  /// n_{l-1} for module m, with layer indices counted from 0.
  Index layer_in(std::size_t m, std::size_t l) const;

  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t s) { seed_ = s; }

 private:
  Index input_dim_ = 0;
  std::size_t num_layers_ = 0;
  bool lateral_ = true;
  std::uint64_t seed_ = 0;
  std::vector<TaskModule> modules_;
};

struct ModuleTrace {
  std::vector<Vec> activations;  // h_1..h_L
};

struct ForwardTrace {
  Vec input;
  std::vector<ModuleTrace> modules;

  const Vec& output(std::size_t m) const { return modules[m].activations.back(); }
  /// h_{l}^{(m)} with h_0 = input; `layer` counts from 0 = input.
  const Vec& activation(std::size_t m, std::size_t layer) const {
    return layer == 0 ? input : modules[m].activations[layer - 1];
  }
};

/// Gradient blocks for every module. Only the active module is nonzero.
struct GradientSet {
  std::size_t active = 0;
  std::vector<ModuleParams> modules;
};

/// Full forward pass: tanh on hidden layers, identity on the output layer.
ForwardTrace forward(const BpnnNet& net, const Vec& x, std::size_t active);

/// Refreshes a trace from `forward` after only column `active` changed.
/// Recomputes the active column and every hidden activation that can depend
/// on it through laterals; first layers and output layers of the other columns
/// are left as they were.
void forward_active(const BpnnNet& net, ForwardTrace& trace, std::size_t active);

GradientSet backward(const BpnnNet& net, const ForwardTrace& trace, std::size_t active,
                     const Vec& out_grad);

/// Accumulates d(out_grad . output_active)/d(params of active) into `grad`.
/// Lateral sources are treated as constants. `grad` must match the module's
/// shapes; `skip_laterals` leaves lateral blocks untouched.
void accumulate_backward(const BpnnNet& net, const ForwardTrace& trace, std::size_t active,
                         const Vec& out_grad, ModuleParams& grad, bool skip_laterals = false);

void set_frozen(BpnnNet& net, std::size_t m, bool frozen);
void freeze_all(BpnnNet& net);

struct InitScales {
  double hidden_gain = 1.4142135623730951;  // sqrt(2)
  double output_gain = 1.0;
  double lateral_scale = 0.01;
};

/// Orthogonal-init main path, zero biases, small orthogonal laterals.
void init_params(BpnnNet& net, std::uint64_t seed, const InitScales& scales = {});

nlohmann::json to_json(const BpnnNet& net);
BpnnNet bpnn_from_json(const nlohmann::json& j);

/// Serialized parameters of one module, for bit-exact comparisons.
std::string serialize_module(const TaskModule& module);

}  // namespace erpbpnn
