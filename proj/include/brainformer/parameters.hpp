#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "brainformer/tensor.hpp"

namespace brainformer {

template <Scalar T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

/// Ordered registry of trainable leaves. Order is registration order, which
/// fixes initialization draws, optimizer state layout and checkpoint layout.
template <Scalar T>
class ParameterSet {
 public:
  Tensor<T> add(std::string name, Tensor<T> tensor) {
    for (const auto& p : items_) {
      if (p.name == name) throw UsageError("duplicate parameter name " + name);
    }
    tensor.set_requires_grad(true);
    items_.push_back({std::move(name), tensor});
    return tensor;
  }

  std::vector<NamedParameter<T>>& items() { return items_; }
  const std::vector<NamedParameter<T>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  const NamedParameter<T>* find(const std::string& name) const {
    for (const auto& p : items_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : items_) p.tensor.zero_grad();
  }

 private:
  std::vector<NamedParameter<T>> items_;
};

/// Seeded parameter initialization draws.
template <Scalar T>
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor<T> normal(Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(dist(rng_));
    return Tensor<T>(std::move(shape), std::move(data));
  }

  /// N(0, 1/fan_in) weights.
  Tensor<T> fan_in(Shape shape, std::size_t fan) { return normal(std::move(shape), 1.0 / std::sqrt(double(fan))); }

  Tensor<T> constant(Shape shape, T value) { return Tensor<T>(std::move(shape), value); }

  /// Identity plus N(0, stddev²) noise.
  Tensor<T> near_identity(std::size_t n, double stddev) {
    Tensor<T> t = normal({n, n}, stddev);
    auto d = t.mutable_data();
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] += T(1);
    return t;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace brainformer
