#include "erpbpnn/bpnn.hpp"

#include <Eigen/QR>

#include <cstring>
#include <random>
#include <string>

namespace erpbpnn {

namespace {

template <typename F>
void for_each_tensor(ModuleParams& p, F&& f) {
  for (auto& w : p.weights) f(w);
  for (auto& b : p.biases) f(b);
  for (auto& layer : p.laterals) {
    for (auto& link : layer) {
      if (link) {
        f(link->weight);
        f(link->bias);
      }
    }
  }
}

template <typename F>
void for_each_tensor(const ModuleParams& p, F&& f) {
  for (const auto& w : p.weights) f(w);
  for (const auto& b : p.biases) f(b);
  for (const auto& layer : p.laterals) {
    for (const auto& link : layer) {
      if (link) {
        f(link->weight);
        f(link->bias);
      }
    }
  }
}

// Orthogonal matrix scaled by `gain`, following the QR-of-Gaussian recipe.
Mat orthogonal(Index rows, Index cols, double gain, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index big = std::max(rows, cols);
  const Index small = std::min(rows, cols);
  Eigen::MatrixXd g(big, small);
  for (Index i = 0; i < big; ++i)
    for (Index j = 0; j < small; ++j) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (Index j = 0; j < small; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  Mat out = rows >= cols ? Mat(q) : Mat(q.transpose());
  return gain * out;
}

nlohmann::json tensor_json(std::size_t module, std::size_t layer, const char* kind, long source,
                           const Eigen::Ref<const Mat>& t) {
  std::vector<double> data(t.data(), t.data() + t.size());
  return {{"module", module}, {"layer", layer}, {"kind", kind}, {"source", source},
          {"rows", t.rows()}, {"cols", t.cols()}, {"data", std::move(data)}};
}

template <typename Dense>
void load_tensor(const nlohmann::json& j, Dense& target) {
  const auto rows = j.at("rows").get<Index>();
  const auto cols = j.at("cols").get<Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows != target.rows() || cols != target.cols() ||
      static_cast<Index>(data.size()) != rows * cols) {
    throw ConfigError("checkpoint tensor shape mismatch at module " +
                      std::to_string(j.at("module").get<long>()) + " layer " +
                      std::to_string(j.at("layer").get<long>()));
  }
  std::memcpy(target.data(), data.data(), data.size() * sizeof(double));
}

}  // namespace

ModuleParams ModuleParams::zeros_like() const {
  ModuleParams z = *this;
  z.set_zero();
  return z;
}

void ModuleParams::set_zero() {
  for_each_tensor(*this, [](auto& t) { t.setZero(); });
}

double ModuleParams::squared_norm() const {
  double s = 0.0;
  for_each_tensor(*this, [&](const auto& t) { s += t.squaredNorm(); });
  return s;
}

void ModuleParams::scale(double factor) {
  for_each_tensor(*this, [&](auto& t) { t *= factor; });
}

bool ModuleParams::is_finite() const {
  bool ok = true;
  for_each_tensor(*this, [&](const auto& t) { ok = ok && all_finite(t); });
  return ok;
}

std::size_t ModuleParams::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor(*this, [&](const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

BpnnNet::BpnnNet(Index input_dim, std::vector<std::vector<Index>> layer_sizes, bool lateral)
    : input_dim_(input_dim), lateral_(lateral) {
  if (input_dim <= 0) throw ConfigError("bpnn: input_dim must be positive");
  if (layer_sizes.empty()) throw ConfigError("bpnn: at least one module required");
  num_layers_ = layer_sizes.front().size();
  if (num_layers_ == 0) throw ConfigError("bpnn: modules need at least one layer");
  for (const auto& sizes : layer_sizes) {
    if (sizes.size() != num_layers_)
      throw ConfigError("bpnn: all modules must have the same number of layers");
    for (Index n : sizes)
      if (n <= 0) throw ConfigError("bpnn: layer sizes must be positive");
  }

  const std::size_t count = layer_sizes.size();
  modules_.resize(count);
  for (std::size_t m = 0; m < count; ++m) {
    TaskModule& mod = modules_[m];
    mod.index = m;
    mod.layer_sizes = layer_sizes[m];
    auto& p = mod.params;
    p.laterals.assign(num_layers_, std::vector<std::optional<LateralLink>>(count));
    for (std::size_t l = 0; l < num_layers_; ++l) {
      const Index rows = mod.layer_sizes[l];
      const Index cols = l == 0 ? input_dim_ : mod.layer_sizes[l - 1];
      p.weights.push_back(Mat::Zero(rows, cols));
      p.biases.push_back(Vec::Zero(rows));
      if (!lateral_ || l == 0) continue;
      for (std::size_t t = 0; t < count; ++t) {
        if (t == m) continue;
        p.laterals[l][t] = LateralLink{Mat::Zero(rows, layer_sizes[t][l - 1]), Vec::Zero(rows)};
      }
    }
  }
}

BpnnNet BpnnNet::make(Index input_dim, const std::vector<Index>& head_sizes,
                      std::size_t hidden_layers, Index hidden_size, bool lateral) {
  std::vector<std::vector<Index>> sizes;
  for (Index head : head_sizes) {
    std::vector<Index> s(hidden_layers, hidden_size);
    s.push_back(head);
    sizes.push_back(std::move(s));
  }
  return BpnnNet(input_dim, std::move(sizes), lateral);
}

TaskModule& BpnnNet::module(std::size_t m) {
  if (m >= modules_.size()) throw ConfigError("bpnn: task id " + std::to_string(m) + " out of range");
  return modules_[m];
}

const TaskModule& BpnnNet::module(std::size_t m) const {
  if (m >= modules_.size()) throw ConfigError("bpnn: task id " + std::to_string(m) + " out of range");
  return modules_[m];
}

Index BpnnNet::layer_in(std::size_t m, std::size_t l) const {
  return l == 0 ? input_dim_ : module(m).layer_sizes[l - 1];
}

namespace {

// Pre-activation of layer l of module m, reading the previous layer of every
// module from `trace`.
Vec layer_preactivation(const BpnnNet& net, const ForwardTrace& trace, std::size_t m,
                        std::size_t l) {
  const ModuleParams& p = net.module(m).params;
  Vec z = p.biases[l];
  z.noalias() += p.weights[l] * trace.activation(m, l);
  if (l > 0) {
    for (std::size_t t = 0; t < net.num_modules(); ++t) {
      const auto& link = p.laterals[l][t];
      if (!link) continue;
      z.noalias() += link->weight * trace.activation(t, l);
      z += link->bias;
    }
  }
  return z;
}

void activate(Vec& z, bool output_layer) {
  if (!output_layer) z = tanh_vec(z);
}

}  // namespace

ForwardTrace forward(const BpnnNet& net, const Vec& x, std::size_t active) {
  if (x.size() != net.input_dim()) {
    throw ConfigError("bpnn forward: input has length " + std::to_string(x.size()) +
                      ", expected " + std::to_string(net.input_dim()));
  }
  if (active >= net.num_modules()) throw ConfigError("bpnn forward: invalid active task");

  ForwardTrace trace;
  trace.input = x;
  trace.modules.resize(net.num_modules());
  const std::size_t layers = net.num_layers();
  for (auto& mt : trace.modules) mt.activations.reserve(layers);
  // Layer-major: every lateral at layer l reads layer l-1 of the same pass.
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<Vec> next(net.num_modules());
    for (std::size_t m = 0; m < net.num_modules(); ++m) {
      next[m] = layer_preactivation(net, trace, m, l);
      activate(next[m], l + 1 == layers);
    }
    for (std::size_t m = 0; m < net.num_modules(); ++m)
      trace.modules[m].activations.push_back(std::move(next[m]));
  }
  return trace;
}

void forward_active(const BpnnNet& net, ForwardTrace& trace, std::size_t active) {
  if (trace.modules.size() != net.num_modules() || trace.input.size() != net.input_dim())
    throw ConfigError("bpnn forward_active: trace does not match network");
  if (active >= net.num_modules()) throw ConfigError("bpnn forward_active: invalid active task");
  const std::size_t layers = net.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    const bool output_layer = l + 1 == layers;
    std::vector<Vec> next(net.num_modules());
    for (std::size_t m = 0; m < net.num_modules(); ++m) {
      // Layer 0 of another column sees only x; its output layer is never read
      // by the active column.
      const bool refresh = m == active || (net.has_laterals() && l > 0 && !output_layer);
      if (!refresh) continue;
      next[m] = layer_preactivation(net, trace, m, l);
      activate(next[m], output_layer);
    }
    for (std::size_t m = 0; m < net.num_modules(); ++m)
      if (next[m].size() > 0) trace.modules[m].activations[l] = std::move(next[m]);
  }
}

void accumulate_backward(const BpnnNet& net, const ForwardTrace& trace, std::size_t active,
                         const Vec& out_grad, ModuleParams& grad, bool skip_laterals) {
  const TaskModule& mod = net.module(active);
  const std::size_t layers = net.num_layers();
  bool shapes_ok = trace.modules.size() == net.num_modules() && trace.input.size() == net.input_dim();
  for (std::size_t m = 0; shapes_ok && m < net.num_modules(); ++m) {
    const auto& acts = trace.modules[m].activations;
    shapes_ok = acts.size() == layers;
    for (std::size_t l = 0; shapes_ok && l < layers; ++l)
      shapes_ok = acts[l].size() == net.module(m).layer_sizes[l];
  }
  if (!shapes_ok) throw ConfigError("bpnn backward: trace does not match network");
  if (out_grad.size() != mod.layer_sizes.back())
    throw ConfigError("bpnn backward: output gradient has wrong length");

  Vec delta = out_grad;  // identity output activation
  for (std::size_t l = layers; l-- > 0;) {
    const Vec& below = trace.activation(active, l);
    grad.weights[l].noalias() += delta * below.transpose();
    grad.biases[l] += delta;
    if (l > 0 && !skip_laterals) {
      for (std::size_t t = 0; t < net.num_modules(); ++t) {
        auto& g = grad.laterals[l][t];
        if (!g) continue;
        g->weight.noalias() += delta * trace.activation(t, l).transpose();
        g->bias += delta;
      }
    }
    if (l == 0) break;
    Vec back = mod.params.weights[l].transpose() * delta;
    delta = back.array() * (1.0 - below.array().square());
  }
}

GradientSet backward(const BpnnNet& net, const ForwardTrace& trace, std::size_t active,
                     const Vec& out_grad) {
  GradientSet g;
  g.active = active;
  for (const auto& mod : net.modules()) g.modules.push_back(mod.params.zeros_like());
  accumulate_backward(net, trace, active, out_grad, g.modules[active]);
  return g;
}

void set_frozen(BpnnNet& net, std::size_t m, bool frozen) { net.module(m).frozen = frozen; }

void freeze_all(BpnnNet& net) {
  for (std::size_t m = 0; m < net.num_modules(); ++m) set_frozen(net, m, true);
}

void init_params(BpnnNet& net, std::uint64_t seed, const InitScales& scales) {
  std::mt19937_64 rng(seed);
  net.set_seed(seed);
  const std::size_t layers = net.num_layers();
  for (std::size_t m = 0; m < net.num_modules(); ++m) {
    TaskModule& mod = net.module(m);
    for (std::size_t l = 0; l < layers; ++l) {
      const double gain = l + 1 == layers ? scales.output_gain : scales.hidden_gain;
      auto& w = mod.params.weights[l];
      w = orthogonal(w.rows(), w.cols(), gain, rng);
      mod.params.biases[l].setZero();
      for (auto& link : mod.params.laterals[l]) {
        if (!link) continue;
        link->weight = orthogonal(link->weight.rows(), link->weight.cols(), scales.lateral_scale, rng);
        link->bias.setZero();
      }
    }
  }
}

nlohmann::json to_json(const BpnnNet& net) {
  nlohmann::json modules = nlohmann::json::array();
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& mod : net.modules()) {
    modules.push_back({{"index", mod.index}, {"layer_sizes", mod.layer_sizes}, {"frozen", mod.frozen}});
    const auto& p = mod.params;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      tensors.push_back(tensor_json(mod.index, l, "W", -1, p.weights[l]));
      tensors.push_back(tensor_json(mod.index, l, "b", -1, p.biases[l].transpose()));
      for (std::size_t t = 0; t < p.laterals[l].size(); ++t) {
        const auto& link = p.laterals[l][t];
        if (!link) continue;
        tensors.push_back(tensor_json(mod.index, l, "U", static_cast<long>(t), link->weight));
        tensors.push_back(tensor_json(mod.index, l, "c", static_cast<long>(t), link->bias.transpose()));
      }
    }
  }
  return {{"input_dim", net.input_dim()}, {"lateral", net.has_laterals()},
          {"seed", net.seed()},           {"modules", std::move(modules)},
          {"tensors", std::move(tensors)}};
}

BpnnNet bpnn_from_json(const nlohmann::json& j) {
  std::vector<std::vector<Index>> sizes;
  for (const auto& m : j.at("modules")) sizes.push_back(m.at("layer_sizes").get<std::vector<Index>>());
  BpnnNet net(j.at("input_dim").get<Index>(), sizes, j.at("lateral").get<bool>());
  net.set_seed(j.at("seed").get<std::uint64_t>());
  for (std::size_t m = 0; m < net.num_modules(); ++m)
    net.module(m).frozen = j.at("modules").at(m).at("frozen").get<bool>();
  for (const auto& t : j.at("tensors")) {
    const auto m = t.at("module").get<std::size_t>();
    const auto l = t.at("layer").get<std::size_t>();
    const auto kind = t.at("kind").get<std::string>();
    const auto src = t.at("source").get<long>();
    auto& p = net.module(m).params;
    if (l >= net.num_layers()) throw ConfigError("checkpoint: layer index out of range");
    if (kind == "W") {
      load_tensor(t, p.weights[l]);
    } else if (kind == "b") {
      Eigen::Map<Mat> row(p.biases[l].data(), 1, p.biases[l].size());
      Mat tmp = row;
      load_tensor(t, tmp);
      p.biases[l] = tmp.transpose();
    } else if (kind == "U" || kind == "c") {
      if (src < 0 || static_cast<std::size_t>(src) >= net.num_modules() || !p.laterals[l][src])
        throw ConfigError("checkpoint: lateral tensor for a connection the network does not have");
      auto& link = *p.laterals[l][src];
      if (kind == "U") {
        load_tensor(t, link.weight);
      } else {
        Mat tmp(1, link.bias.size());
        load_tensor(t, tmp);
        link.bias = tmp.transpose();
      }
    } else {
      throw ConfigError("checkpoint: unknown tensor kind '" + kind + "'");
    }
  }
  return net;
}

std::string serialize_module(const TaskModule& module) {
  std::string out;
  for_each_tensor(module.params, [&](const auto& t) {
    const auto* bytes = reinterpret_cast<const char*>(t.data());
    out.append(bytes, static_cast<std::size_t>(t.size()) * sizeof(double));
  });
  return out;
}

}  // namespace erpbpnn
