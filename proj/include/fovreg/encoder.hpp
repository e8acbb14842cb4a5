#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fovreg/rng.hpp"

namespace fovreg {

enum class Activation { relu, tanh };

inline std::string activation_name(Activation a) {
  return a == Activation::relu ? "relu" : "tanh";
}

inline Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation: " + name);
}

/// Multilayer perceptron with an L2-normalized linear head. weights[l] has
/// shape dims[l+1] x dims[l]. Hidden layers apply the activation; the last
/// layer is linear before normalization.
struct EncoderModel {
  std::vector<int> dims;
  Activation activation = Activation::relu;
  std::uint64_t seed = 0;
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  int input_dim() const { return dims.front(); }
  int output_dim() const { return dims.back(); }
  std::size_t layer_count() const { return weights.size(); }
};

/// Xavier-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases.
/// Draw order is fixed (layer by layer, row-major) so init is reproducible.
inline EncoderModel init_encoder(const std::vector<int>& dims, Activation activation,
                                 std::uint64_t seed) {
  if (dims.size() < 2) throw std::invalid_argument("init_encoder: need at least two dims");
  for (int d : dims)
    if (d <= 0) throw std::invalid_argument("init_encoder: dims must be positive");
  EncoderModel m;
  m.dims = dims;
  m.activation = activation;
  m.seed = seed;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Eigen::MatrixXd w(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c) w(r, c) = rng.uniform(-bound, bound);
    m.weights.push_back(std::move(w));
    m.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return m;
}

/// Intermediate values of one forward pass, consumed by backward().
struct ForwardCache {
  std::vector<Eigen::VectorXd> inputs;    // input to each layer
  std::vector<Eigen::VectorXd> preacts;   // pre-activation per layer
  Eigen::VectorXd prenorm;                // output before L2 normalization
  double norm_guard = 0.0;                // sqrt(|u|^2 + eps^2)
  Eigen::VectorXd descriptor;
};

inline constexpr double kNormEpsilon = 1e-12;

/// Forward pass; the returned descriptor has unit L2 norm (the guard epsilon
/// inside the norm keeps the division finite for pathological inputs).
inline Eigen::VectorXd encoder_forward(const EncoderModel& m, const Eigen::VectorXd& x,
                                       ForwardCache* cache = nullptr) {
  if (x.size() != m.input_dim())
    throw std::invalid_argument("encoder_forward: input dimension mismatch");
  Eigen::VectorXd a = x;
  if (cache) {
    cache->inputs.clear();
    cache->preacts.clear();
  }
  const std::size_t layers = m.layer_count();
  for (std::size_t l = 0; l < layers; ++l) {
    if (cache) cache->inputs.push_back(a);
    Eigen::VectorXd z = m.weights[l] * a + m.biases[l];
    if (cache) cache->preacts.push_back(z);
    if (l + 1 < layers) {
      if (m.activation == Activation::relu)
        a = z.cwiseMax(0.0);
      else
        a = z.array().tanh().matrix();
    } else {
      a = std::move(z);  // linear head
    }
  }
  const double s = std::sqrt(a.squaredNorm() + kNormEpsilon * kNormEpsilon);
  Eigen::VectorXd v = a / s;
  if (cache) {
    cache->prenorm = std::move(a);
    cache->norm_guard = s;
    cache->descriptor = v;
  }
  return v;
}

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

inline Gradients zero_gradients(const EncoderModel& m) {
  Gradients g;
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    g.weights.push_back(Eigen::MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols()));
    g.biases.push_back(Eigen::VectorXd::Zero(m.biases[l].size()));
  }
  return g;
}

/// Backpropagation through the normalization and the MLP, accumulating
/// parameter gradients into `out` (scaled by `weight`). The normalization
/// Jacobian is (I - v v^T) / s applied to the incoming gradient.
inline void encoder_backward_accumulate(const EncoderModel& m, const ForwardCache& cache,
                                        const Eigen::VectorXd& grad_descriptor,
                                        Gradients& out, double weight = 1.0) {
  const Eigen::VectorXd& v = cache.descriptor;
  const double s = cache.norm_guard;
  Eigen::VectorXd delta = (grad_descriptor - v * v.dot(grad_descriptor)) / s;
  const std::size_t layers = m.layer_count();
  for (std::size_t l = layers; l-- > 0;) {
    if (l + 1 < layers) {
      // chain through the hidden activation
      const Eigen::VectorXd& z = cache.preacts[l];
      if (m.activation == Activation::relu) {
        delta = (z.array() > 0.0).select(delta, 0.0);
      } else {
        const Eigen::ArrayXd t = z.array().tanh();
        delta = (delta.array() * (1.0 - t * t)).matrix();
      }
    }
    out.weights[l].noalias() += weight * delta * cache.inputs[l].transpose();
    out.biases[l].noalias() += weight * delta;
    if (l > 0) delta = m.weights[l].transpose() * delta;
  }
}

inline Gradients encoder_backward(const EncoderModel& m, const ForwardCache& cache,
                                  const Eigen::VectorXd& grad_descriptor) {
  Gradients g = zero_gradients(m);
  encoder_backward_accumulate(m, cache, grad_descriptor, g);
  return g;
}

struct SgdConfig {
  enum class Schedule { constant, step };
  double learning_rate = 0.1;
  Schedule schedule = Schedule::constant;
  double step_factor = 0.1;
  std::int64_t step_period = 250000;
};

inline double learning_rate_at(const SgdConfig& cfg, std::int64_t iteration) {
  if (cfg.schedule == SgdConfig::Schedule::constant) return cfg.learning_rate;
  const std::int64_t decays = iteration / cfg.step_period;
  return cfg.learning_rate * std::pow(cfg.step_factor, static_cast<double>(decays));
}

/// In-place SGD update p <- p - lr(iteration) * g. Rejects non-finite
/// gradients so a diverging run halts with the iteration index.
inline void sgd_step(EncoderModel& m, const Gradients& g, std::int64_t iteration,
                     const SgdConfig& cfg) {
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    if (!g.weights[l].allFinite() || !g.biases[l].allFinite())
      throw std::runtime_error("sgd_step: non-finite gradient at iteration " +
                               std::to_string(iteration));
  }
  const double lr = learning_rate_at(cfg, iteration);
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    m.weights[l].noalias() -= lr * g.weights[l];
    m.biases[l].noalias() -= lr * g.biases[l];
  }
}

inline nlohmann::json checkpoint_to_json(const EncoderModel& m, std::int64_t iteration) {
  nlohmann::json j;
  j["dims"] = m.dims;
  j["activation"] = activation_name(m.activation);
  j["seed"] = m.seed;
  j["iteration"] = iteration;
  nlohmann::json weights = nlohmann::json::array();
  for (const auto& w : m.weights) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < w.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (int c = 0; c < w.cols(); ++c) row.push_back(w(r, c));
      rows.push_back(std::move(row));
    }
    weights.push_back(std::move(rows));
  }
  j["weights"] = std::move(weights);
  nlohmann::json biases = nlohmann::json::array();
  for (const auto& b : m.biases) {
    nlohmann::json vec = nlohmann::json::array();
    for (int i = 0; i < b.size(); ++i) vec.push_back(b(i));
    biases.push_back(std::move(vec));
  }
  j["biases"] = std::move(biases);
  return j;
}

struct Checkpoint {
  EncoderModel model;
  std::int64_t iteration = 0;
};

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint ck;
  ck.model.dims = j.at("dims").get<std::vector<int>>();
  ck.model.activation = activation_from_name(j.at("activation").get<std::string>());
  ck.model.seed = j.at("seed").get<std::uint64_t>();
  ck.iteration = j.at("iteration").get<std::int64_t>();
  const auto& weights = j.at("weights");
  const auto& biases = j.at("biases");
  if (weights.size() + 1 != ck.model.dims.size() || biases.size() != weights.size())
    throw std::runtime_error("checkpoint: layer count mismatch");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const auto& rows = weights[l];
    Eigen::MatrixXd w(ck.model.dims[l + 1], ck.model.dims[l]);
    if (static_cast<int>(rows.size()) != w.rows())
      throw std::runtime_error("checkpoint: weight shape mismatch");
    for (int r = 0; r < w.rows(); ++r) {
      const auto& row = rows[r];
      if (static_cast<int>(row.size()) != w.cols())
        throw std::runtime_error("checkpoint: weight shape mismatch");
      for (int c = 0; c < w.cols(); ++c) w(r, c) = row[c].get<double>();
    }
    ck.model.weights.push_back(std::move(w));
    const auto& vec = biases[l];
    Eigen::VectorXd b(ck.model.dims[l + 1]);
    if (static_cast<int>(vec.size()) != b.size())
      throw std::runtime_error("checkpoint: bias shape mismatch");
    for (int i = 0; i < b.size(); ++i) b(i) = vec[i].get<double>();
    ck.model.biases.push_back(std::move(b));
  }
  return ck;
}

inline void save_checkpoint(const EncoderModel& m, std::int64_t iteration,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << checkpoint_to_json(m, iteration).dump() << "\n";
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  nlohmann::json j;
  in >> j;
  return checkpoint_from_json(j);
}

}  // namespace fovreg
