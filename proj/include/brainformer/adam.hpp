#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "brainformer/config.hpp"
#include "brainformer/parameters.hpp"

namespace brainformer {

struct AdamConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool decoupled = false;  // AdamW-style decay instead of L2 in the gradient

  static AdamConfig from(const TrainConfig& cfg) {
    return {cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.decoupled_decay};
  }
};

/// Adam with bias correction. Moment buffers mirror the parameter set layout.
template <Scalar T>
class Adam {
 public:
  Adam(ParameterSet<T>& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
    for (const auto& p : params.items()) {
      m_.emplace_back(p.tensor.numel(), T(0));
      v_.emplace_back(p.tensor.numel(), T(0));
    }
  }

  /// Applies one update from the gradients currently held by the parameters.
  /// A parameter without a gradient is treated as having a zero gradient.
  void step() {
    auto& items = params_->items();
    if (items.size() != m_.size()) throw UsageError("adam: parameter set changed after construction");
    for (const auto& p : items) {
      if (!p.tensor.has_grad()) continue;
      for (const T g : p.tensor.grad()) {
        if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient in parameter " + p.name);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t k = 0; k < items.size(); ++k) {
      auto& tensor = items[k].tensor;
      auto theta = tensor.mutable_data();
      const bool has = tensor.has_grad();
      const auto grad = has ? tensor.grad() : std::span<const T>{};
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        double g = has ? double(grad[i]) : 0.0;
        const double w = double(theta[i]);
        if (!cfg_.decoupled) g += cfg_.weight_decay * w;
        const double mi = cfg_.beta1 * double(m[i]) + (1.0 - cfg_.beta1) * g;
        const double vi = cfg_.beta2 * double(v[i]) + (1.0 - cfg_.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        double update = (mi / c1) / (std::sqrt(vi / c2) + cfg_.eps);
        if (cfg_.decoupled) update += cfg_.weight_decay * w;
        theta[i] = static_cast<T>(w - cfg_.learning_rate * update);
      }
    }
  }

  std::size_t steps() const { return t_; }
  void set_steps(std::size_t t) { t_ = t; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  ParameterSet<T>* params_;
  AdamConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace brainformer
