#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "brainformer/errors.hpp"

namespace brainformer {

using Shape = std::vector<std::size_t>;

template <class T>
concept Scalar = std::same_as<T, float> || std::same_as<T, double>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    out << (i ? "x" : "") << shape[i];
  }
  out << ']';
  return out.str();
}

namespace detail {

template <Scalar T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated lazily by ensure_grad()
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <Scalar T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

}  // namespace detail

template <Scalar T>
class Tape;

/// N-dimensional row-major array with optional gradient tracking.
///
/// Copies share the underlying node, so a parameter held in a model struct and
/// in the optimizer's registry is the same storage. The element type is the
/// precision attribute: Tensor<double> for verification, Tensor<float> for
/// throughput runs.
template <Scalar T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<detail::TensorNode<T>>()) {
    validate(shape);
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<detail::TensorNode<T>>()) {
    validate(shape);
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor: shape " + shape_string(shape) + " does not match " +
                           std::to_string(data.size()) + " elements");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  static Tensor identity(std::size_t n) {
    Tensor out(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) out.node_->data[i * n + i] = T(1);
    return out;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t extent(std::size_t axis) const { return node().shape.at(axis); }
  std::size_t numel() const { return node().data.size(); }

  std::span<const T> data() const { return node().data; }
  /// Direct write access, intended for leaf initialization and optimizer updates.
  std::span<T> mutable_data() { return node().data; }

  T item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_string(shape()));
    return node().data[0];
  }
  T operator[](std::size_t i) const { return node().data.at(i); }

  bool requires_grad() const { return node().requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    node().requires_grad = flag;
    return *this;
  }

  bool has_grad() const { return node().grad.size() == node().data.size(); }
  std::span<const T> grad() const {
    if (!has_grad()) throw UsageError("tensor has no gradient");
    return node().grad;
  }
  void zero_grad() { node().grad.clear(); }

  /// Deep copy without gradient tracking.
  Tensor detach() const { return Tensor(shape(), node().data); }

  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

  const detail::NodePtr<T>& node_ptr() const { return node_; }
  static Tensor from_node(detail::NodePtr<T> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  static void validate(const Shape& shape) {
    for (auto e : shape) {
      if (e == 0) throw DimensionError("tensor: zero extent in shape " + shape_string(shape));
    }
  }

  detail::TensorNode<T>& node() const {
    if (!node_) throw UsageError("access to undefined tensor");
    return *node_;
  }

  detail::NodePtr<T> node_;
};

/// Reverse-mode tape. Constructing a Tape makes it the active recorder for the
/// current thread until it is destroyed; operations on tracked tensors append
/// their adjoints here. A tape supports exactly one backward pass.
template <Scalar T>
class Tape {
 public:
  Tape() : previous_(active_) { active_ = this; }
  ~Tape() { active_ = previous_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() noexcept { return active_; }

  /// Disables recording on this thread for its lifetime (inference, finite differences).
  class Suspend {
   public:
    Suspend() : saved_(active_) { active_ = nullptr; }
    ~Suspend() { active_ = saved_; }
    Suspend(const Suspend&) = delete;
    Suspend& operator=(const Suspend&) = delete;

   private:
    Tape* saved_;
  };

  void record(std::function<void()> adjoint) {
    if (consumed_) throw UsageError("tape already consumed by a backward pass");
    entries_.push_back(std::move(adjoint));
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool consumed() const noexcept { return consumed_; }

  /// Seeds d(output)/d(output) = 1 and replays adjoints in reverse order.
  void backward(const Tensor<T>& output) {
    if (consumed_) throw UsageError("backward: tape already consumed");
    if (output.numel() != 1) {
      throw UsageError("backward: output must be scalar, got shape " + shape_string(output.shape()));
    }
    if (!output.requires_grad()) throw UsageError("backward: output is not tracked");
    auto& node = *output.node_ptr();
    node.ensure_grad();
    node.grad[0] += T(1);
    consumed_ = true;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

 private:
  std::vector<std::function<void()>> entries_;
  bool consumed_ = false;
  Tape* previous_;
  static inline thread_local Tape* active_ = nullptr;
};

/// Runs the backward pass of the thread's active tape.
template <Scalar T>
void backward(const Tensor<T>& output) {
  auto* tape = Tape<T>::active();
  if (tape == nullptr) throw UsageError("backward: no active tape");
  tape->backward(output);
}

namespace detail {

template <Scalar T>
void check_finite(std::span<const T> values, const char* op) {
  for (const T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in result");
  }
}

/// True when an op over `inputs` must be recorded on the active tape.
template <Scalar T>
bool needs_tape(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

/// Wraps a freshly computed buffer as an op result, checking finiteness and
/// registering `adjoint` (called with the output node) when tracking is needed.
template <Scalar T, class Adjoint>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs, Adjoint&& adjoint) {
  check_finite<T>(data, op);
  Tensor<T> out(std::move(shape), std::move(data));
  if (needs_tape<T>(inputs)) {
    out.set_requires_grad(true);
    NodePtr<T> out_node = out.node_ptr();
    Tape<T>::active()->record([out_node, fn = std::forward<Adjoint>(adjoint)]() {
      if (out_node->grad.empty()) return;  // output never reached by the seed
      fn(*out_node);
    });
  }
  return out;
}

/// Gradient buffer of an input, or nullptr if it is not tracked.
template <Scalar T>
std::vector<T>* grad_sink(const NodePtr<T>& node) {
  if (!node->requires_grad) return nullptr;
  node->ensure_grad();
  return &node->grad;
}

}  // namespace detail

}  // namespace brainformer
