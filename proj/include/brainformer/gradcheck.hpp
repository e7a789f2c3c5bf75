#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "brainformer/tensor.hpp"

namespace brainformer {

inline constexpr double kGradcheckFloor = 1e-8;

/// |analytic − numeric| / max(|analytic|, |numeric|, floor).
inline double relative_gradient_error(double analytic, double numeric, double floor = kGradcheckFloor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

struct GradcheckOptions {
  double step = 1e-5;
  /// Coordinates checked per tensor; 0 checks all of them.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  /// Gradients smaller than this are compared in absolute terms (error × floor).
  double floor = kGradcheckFloor;
};

struct GradcheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t coords_checked = 0;
  // Coordinate responsible for max_relative_error.
  std::size_t worst_index = 0;
  double worst_analytic = 0.0, worst_numeric = 0.0;
};

namespace detail {

template <Scalar T>
double evaluate_scalar(const std::function<Tensor<T>()>& loss) {
  typename Tape<T>::Suspend no_record;
  const Tensor<T> value = loss();
  if (value.numel() != 1) throw UsageError("finite_diff_check: function must return a scalar");
  const double v = static_cast<double>(value.item());
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite function value");
  return v;
}

inline std::vector<std::size_t> pick_coords(std::size_t n, std::size_t max_coords, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (max_coords == 0 || max_coords >= n) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

/// Compares reverse-mode gradients of `loss` against central differences for
/// every named tensor, using a single backward pass for the analytic side.
/// NaN/Inf anywhere in the evaluation raises NumericError.
template <Scalar T>
std::vector<GradcheckEntry> gradcheck_tensors(const std::function<Tensor<T>()>& loss,
                                              std::vector<std::pair<std::string, Tensor<T>>> tensors,
                                              const GradcheckOptions& options = {}) {
  std::vector<bool> previous_flags;
  for (auto& [name, t] : tensors) {
    previous_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  std::vector<std::vector<T>> analytic;
  {
    Tape<T> tape;
    const Tensor<T> value = loss();
    tape.backward(value);
  }
  for (auto& [name, t] : tensors) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), T(0));
    }
    for (const T g : analytic.back()) {
      if (!std::isfinite(g)) throw NumericError("finite_diff_check: non-finite gradient for " + name);
    }
  }

  std::mt19937_64 rng(options.seed);
  std::vector<GradcheckEntry> report;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    auto& [name, t] = tensors[k];
    GradcheckEntry entry{name};
    auto values = t.mutable_data();
    for (const std::size_t i : detail::pick_coords(values.size(), options.max_coords, rng)) {
      const T saved = values[i];
      values[i] = saved + static_cast<T>(options.step);
      const double plus = detail::evaluate_scalar(loss);
      values[i] = saved - static_cast<T>(options.step);
      const double minus = detail::evaluate_scalar(loss);
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = static_cast<double>(analytic[k][i]);
      const double err = relative_gradient_error(a, numeric, options.floor);
      if (err > entry.max_relative_error || entry.coords_checked == 0) {
        entry.max_relative_error = err;
        entry.worst_index = i;
        entry.worst_analytic = a;
        entry.worst_numeric = numeric;
      }
      ++entry.coords_checked;
    }
    report.push_back(entry);
  }
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    tensors[k].second.zero_grad();
    tensors[k].second.set_requires_grad(previous_flags[k]);
  }
  return report;
}

/// Max relative error between the analytic gradient of f at x and central
/// differences with the given step.
template <Scalar T>
double finite_diff_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> x, double step = 1e-5) {
  if (!(step > 0.0)) throw UsageError("finite_diff_check: step must be positive");
  GradcheckOptions options;
  options.step = step;
  const auto report = gradcheck_tensors<T>([&]() { return f(x); }, {{"x", x}}, options);
  return report.front().max_relative_error;
}

}  // namespace brainformer
