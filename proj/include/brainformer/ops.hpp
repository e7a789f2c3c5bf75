#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "brainformer/tensor.hpp"

namespace brainformer {

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(a) + " with " +
                           shape_string(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

/// For every flat index of `to`, the flat index of the broadcast source `from`.
inline std::vector<std::size_t> broadcast_map(const Shape& from, const Shape& to) {
  const std::size_t rank = to.size();
  const std::size_t offset = rank - from.size();
  std::vector<std::size_t> src_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = rank; i-- > offset;) {
    const std::size_t e = from[i - offset];
    src_stride[i] = e == 1 ? 0 : stride;
    stride *= e;
  }
  std::vector<std::size_t> map(shape_numel(to));
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < map.size(); ++flat) {
    map[flat] = src;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      src += src_stride[ax];
      if (idx[ax] < to[ax]) break;
      src -= src_stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return map;
}

inline std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

enum class BinaryKind { add, sub, mul, div };

template <Scalar T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind, const char* name) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  const std::size_t n = shape_numel(out_shape);
  const bool direct_a = a.shape() == out_shape;
  const bool direct_b = b.shape() == out_shape;
  std::vector<std::size_t> map_a, map_b;
  if (!direct_a) map_a = broadcast_map(a.shape(), out_shape);
  if (!direct_b) map_b = broadcast_map(b.shape(), out_shape);
  auto ia = [&](std::size_t i) { return direct_a ? i : map_a[i]; };
  auto ib = [&](std::size_t i) { return direct_b ? i : map_b[i]; };

  const auto da = a.data();
  const auto db = b.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T x = da[ia(i)];
    const T y = db[ib(i)];
    switch (kind) {
      case BinaryKind::add: out[i] = x + y; break;
      case BinaryKind::sub: out[i] = x - y; break;
      case BinaryKind::mul: out[i] = x * y; break;
      case BinaryKind::div: out[i] = x / y; break;
    }
  }
  return make_result<T>(
      name, out_shape, std::move(out), {&a, &b},
      [na = a.node_ptr(), nb = b.node_ptr(), map_a = std::move(map_a), map_b = std::move(map_b),
       kind](TensorNode<T>& o) {
        const bool dir_a = map_a.empty();
        const bool dir_b = map_b.empty();
        auto* ga = grad_sink(na);
        auto* gb = grad_sink(nb);
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          const std::size_t ja = dir_a ? i : map_a[i];
          const std::size_t jb = dir_b ? i : map_b[i];
          const T g = o.grad[i];
          switch (kind) {
            case BinaryKind::add:
              if (ga) (*ga)[ja] += g;
              if (gb) (*gb)[jb] += g;
              break;
            case BinaryKind::sub:
              if (ga) (*ga)[ja] += g;
              if (gb) (*gb)[jb] -= g;
              break;
            case BinaryKind::mul:
              if (ga) (*ga)[ja] += g * nb->data[jb];
              if (gb) (*gb)[jb] += g * na->data[ja];
              break;
            case BinaryKind::div: {
              const T y = nb->data[jb];
              if (ga) (*ga)[ja] += g / y;
              if (gb) (*gb)[jb] -= g * na->data[ja] / (y * y);
              break;
            }
          }
        }
      });
}

// C += A(m×k) · B(k×n), row-major, optional transposes expressed by strides.
template <Scalar T>
void gemm_accumulate(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
                     bool trans_a, bool trans_b) {
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = a[i * k + p];
        if (av == T(0)) continue;
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (trans_a && !trans_b) {
    // A stored k×m
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const T av = a[p * m + i];
        if (av == T(0)) continue;
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!trans_a && trans_b) {
    // B stored n×k
    for (std::size_t i = 0; i < m; ++i) {
      const T* arow = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const T* brow = b + j * k;
        T acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        c[i * n + j] += acc;
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
        c[i * n + j] += acc;
      }
    }
  }
}

}  // namespace detail

template <Scalar T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::add, "add");
}
template <Scalar T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::sub, "sub");
}
template <Scalar T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::mul, "mul");
}
template <Scalar T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::div, "div");
}
/// Numpy-style right-aligned broadcasting addition.
template <Scalar T>
Tensor<T> broadcast_add(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}

/// y = scale·x + shift.
template <Scalar T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift = T(0)) {
  std::vector<T> out(x.numel());
  const auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * dx[i] + shift;
  return detail::make_result<T>("affine", x.shape(), std::move(out), {&x},
                                [nx = x.node_ptr(), scale](detail::TensorNode<T>& o) {
                                  auto* g = detail::grad_sink(nx);
                                  if (!g) return;
                                  for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += scale * o.grad[i];
                                });
}

template <Scalar T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return affine(x, factor);
}

template <Scalar T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (const T v : x.data()) acc += v;
  return detail::make_result<T>("sum", Shape{}, std::vector<T>{acc}, {&x},
                                [nx = x.node_ptr()](detail::TensorNode<T>& o) {
                                  auto* g = detail::grad_sink(nx);
                                  if (!g) return;
                                  for (auto& v : *g) v += o.grad[0];
                                });
}

template <Scalar T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Sums over the last axis: [..., n] -> [...] (rank-1 input gives a scalar).
template <Scalar T>
Tensor<T> sum_last(const Tensor<T>& x) {
  if (x.rank() == 0) throw DimensionError("sum_last: scalar input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  std::vector<T> out(rows, T(0));
  const auto dx = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (std::size_t j = 0; j < n; ++j) acc += dx[r * n + j];
    out[r] = acc;
  }
  return detail::make_result<T>("sum_last", out_shape, std::move(out), {&x},
                                [nx = x.node_ptr(), n](detail::TensorNode<T>& o) {
                                  auto* g = detail::grad_sink(nx);
                                  if (!g) return;
                                  for (std::size_t r = 0; r < o.grad.size(); ++r) {
                                    for (std::size_t j = 0; j < n; ++j) (*g)[r * n + j] += o.grad[r];
                                  }
                                });
}

template <Scalar T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] > T(0) ? dx[i] : T(0);
  return detail::make_result<T>("relu", x.shape(), std::move(out), {&x},
                                [nx = x.node_ptr()](detail::TensorNode<T>& o) {
                                  auto* g = detail::grad_sink(nx);
                                  if (!g) return;
                                  for (std::size_t i = 0; i < o.grad.size(); ++i) {
                                    if (nx->data[i] > T(0)) (*g)[i] += o.grad[i];
                                  }
                                });
}

/// Exact (erf-based) GELU.
template <Scalar T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  std::vector<T> out(x.numel());
  const auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = T(0.5) * dx[i] * (T(1) + std::erf(dx[i] * inv_sqrt2));
  }
  return detail::make_result<T>(
      "gelu", x.shape(), std::move(out), {&x}, [nx = x.node_ptr(), inv_sqrt2](detail::TensorNode<T>& o) {
        auto* g = detail::grad_sink(nx);
        if (!g) return;
        const T inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<T>;
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          const T v = nx->data[i];
          const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
          const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
          (*g)[i] += o.grad[i] * (cdf + v * pdf);
        }
      });
}

/// Reinterprets the row-major buffer with a new shape (copying the data).
template <Scalar T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::make_result<T>("reshape", std::move(shape), std::move(out), {&x},
                                [nx = x.node_ptr()](detail::TensorNode<T>& o) {
                                  auto* g = detail::grad_sink(nx);
                                  if (!g) return;
                                  for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
                                });
}

/// Materializing axis permutation: out.shape[i] = x.shape[axes[i]].
template <Scalar T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.rank();
  if (axes.size() != rank) throw DimensionError("permute: axis count does not match rank");
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    if (a >= rank || seen[a]) throw DimensionError("permute: invalid axis list");
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.shape()[axes[i]];
  const auto in_strides = detail::row_major_strides(x.shape());
  std::vector<std::size_t> stride_for_out(rank);
  for (std::size_t i = 0; i < rank; ++i) stride_for_out[i] = in_strides[axes[i]];

  // source index for each output index
  std::vector<std::size_t> src(x.numel());
  std::vector<std::size_t> idx(rank, 0);
  std::size_t s = 0;
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    src[flat] = s;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      s += stride_for_out[ax];
      if (idx[ax] < out_shape[ax]) break;
      s -= stride_for_out[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  std::vector<T> out(src.size());
  const auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[src[i]];
  return detail::make_result<T>("permute", out_shape, std::move(out), {&x},
                                [nx = x.node_ptr(), src = std::move(src)](detail::TensorNode<T>& o) {
                                  auto* g = detail::grad_sink(nx);
                                  if (!g) return;
                                  for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[src[i]] += o.grad[i];
                                });
}

template <Scalar T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("transpose: expected a matrix");
  return permute(x, {1, 0});
}

/// Sub-range [begin, end) along `axis`.
template <Scalar T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin >= end || end > x.shape()[axis]) {
    throw DimensionError("slice: invalid range on " + shape_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const std::size_t n = x.shape()[axis];
  const std::size_t len = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::vector<T> out(outer * len * inner);
  const auto dx = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(dx.begin() + (o * n + begin) * inner, len * inner, out.begin() + o * len * inner);
  }
  return detail::make_result<T>(
      "slice", out_shape, std::move(out), {&x},
      [nx = x.node_ptr(), outer, inner, n, begin, len](detail::TensorNode<T>& o) {
        auto* g = detail::grad_sink(nx);
        if (!g) return;
        for (std::size_t q = 0; q < outer; ++q) {
          for (std::size_t i = 0; i < len * inner; ++i) (*g)[(q * n + begin) * inner + i] += o.grad[q * len * inner + i];
        }
      });
}

/// Concatenation along `axis`; all other extents must agree.
template <Scalar T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw DimensionError("concat: axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != ref.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != ref[i]) {
        throw DimensionError("concat: " + shape_string(s) + " vs " + shape_string(ref));
      }
    }
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  Shape out_shape = ref;
  out_shape[axis] = total;
  std::vector<T> out(outer * total * inner);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.shape()[axis];
    const auto dp = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(dp.begin() + o * len * inner, len * inner, out.begin() + (o * total + off) * inner);
    }
    off += len;
  }

  Tensor<T> result(out_shape, std::move(out));
  detail::check_finite<T>(result.data(), "concat");
  bool tracked = false;
  for (const auto& p : parts) tracked = tracked || p.requires_grad();
  if (tracked && Tape<T>::active() != nullptr) {
    result.set_requires_grad(true);
    std::vector<detail::NodePtr<T>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node_ptr());
    Tape<T>::active()->record([out_node = result.node_ptr(), nodes = std::move(nodes),
                               offsets = std::move(offsets), axis, outer, inner, total]() {
      if (out_node->grad.empty()) return;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        auto* g = detail::grad_sink(nodes[k]);
        if (!g) continue;
        const std::size_t len = nodes[k]->shape[axis];
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < len * inner; ++i) {
            (*g)[o * len * inner + i] += out_node->grad[(o * total + offsets[k]) * inner + i];
          }
        }
      }
    });
  }
  return result;
}

/// Matrix product of A[m×k] and B[k×n].
template <Scalar T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw DimensionError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  std::vector<T> out(m * n, T(0));
  detail::gemm_accumulate(a.data().data(), b.data().data(), out.data(), m, k, n, false, false);
  return detail::make_result<T>("matmul", Shape{m, n}, std::move(out), {&a, &b},
                                [na = a.node_ptr(), nb = b.node_ptr(), m, k, n](detail::TensorNode<T>& o) {
                                  if (auto* ga = detail::grad_sink(na)) {
                                    // dA = dC · Bᵀ
                                    detail::gemm_accumulate(o.grad.data(), nb->data.data(), ga->data(), m, n, k,
                                                            false, true);
                                  }
                                  if (auto* gb = detail::grad_sink(nb)) {
                                    // dB = Aᵀ · dC
                                    detail::gemm_accumulate(na->data.data(), o.grad.data(), gb->data(), k, m, n,
                                                            true, false);
                                  }
                                });
}

/// Batched matrix product [b×m×k]·[b×k×n] -> [b×m×n].
template <Scalar T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.extent(0) != b.extent(0) || a.extent(2) != b.extent(1)) {
    throw DimensionError("bmm: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t batch = a.extent(0), m = a.extent(1), k = a.extent(2), n = b.extent(2);
  std::vector<T> out(batch * m * n, T(0));
  for (std::size_t q = 0; q < batch; ++q) {
    detail::gemm_accumulate(a.data().data() + q * m * k, b.data().data() + q * k * n, out.data() + q * m * n, m,
                            k, n, false, false);
  }
  return detail::make_result<T>(
      "bmm", Shape{batch, m, n}, std::move(out), {&a, &b},
      [na = a.node_ptr(), nb = b.node_ptr(), batch, m, k, n](detail::TensorNode<T>& o) {
        auto* ga = detail::grad_sink(na);
        auto* gb = detail::grad_sink(nb);
        for (std::size_t q = 0; q < batch; ++q) {
          const T* dc = o.grad.data() + q * m * n;
          if (ga) detail::gemm_accumulate(dc, nb->data.data() + q * k * n, ga->data() + q * m * k, m, n, k, false, true);
          if (gb) detail::gemm_accumulate(na->data.data() + q * m * k, dc, gb->data() + q * k * n, k, m, n, true, false);
        }
      });
}

/// Numerically stabilized softmax along `axis`.
template <Scalar T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const std::size_t n = x.shape()[axis];
  const auto dx = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = dx[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, dx[base + j * inner]);
      T total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(dx[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  return detail::make_result<T>(
      "softmax", x.shape(), std::move(out), {&x}, [nx = x.node_ptr(), outer, inner, n](detail::TensorNode<T>& y) {
        auto* g = detail::grad_sink(nx);
        if (!g) return;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            T dot = 0;
            for (std::size_t j = 0; j < n; ++j) dot += y.grad[base + j * inner] * y.data[base + j * inner];
            for (std::size_t j = 0; j < n; ++j) {
              const std::size_t idx = base + j * inner;
              (*g)[idx] += y.data[idx] * (y.grad[idx] - dot);
            }
          }
        }
      });
}

namespace detail {

// Shared normalization kernel: rows of length n are normalized, then scaled by
// gamma/beta indexed either per column (layernorm) or per row group (instance norm).
struct NormGeometry {
  std::size_t rows;
  std::size_t n;
  std::size_t rows_per_param;  // 0 => gamma/beta indexed by column
};

template <Scalar T>
Tensor<T> normalize_affine(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                           NormGeometry geo, const char* name) {
  const auto dx = x.data();
  const auto dg = gamma.data();
  const auto db = beta.data();
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(geo.rows);
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < geo.rows; ++r) {
    const T* row = dx.data() + r * geo.n;
    T mu = 0;
    for (std::size_t j = 0; j < geo.n; ++j) mu += row[j];
    mu /= static_cast<T>(geo.n);
    T var = 0;
    for (std::size_t j = 0; j < geo.n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(geo.n);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < geo.n; ++j) {
      const std::size_t idx = r * geo.n + j;
      const std::size_t p = geo.rows_per_param == 0 ? j : r / geo.rows_per_param % gamma.numel();
      xhat[idx] = (row[j] - mu) * is;
      out[idx] = xhat[idx] * dg[p] + db[p];
    }
  }
  return make_result<T>(
      name, x.shape(), std::move(out), {&x, &gamma, &beta},
      [nx = x.node_ptr(), ng = gamma.node_ptr(), nb = beta.node_ptr(), xhat = std::move(xhat),
       inv_std = std::move(inv_std), geo](TensorNode<T>& o) {
        auto* gx = grad_sink(nx);
        auto* gg = grad_sink(ng);
        auto* gb = grad_sink(nb);
        const std::size_t params = ng->data.size();
        for (std::size_t r = 0; r < geo.rows; ++r) {
          T sum_dh = 0, sum_dh_xhat = 0;
          for (std::size_t j = 0; j < geo.n; ++j) {
            const std::size_t idx = r * geo.n + j;
            const std::size_t p = geo.rows_per_param == 0 ? j : r / geo.rows_per_param % params;
            const T dy = o.grad[idx];
            if (gg) (*gg)[p] += dy * xhat[idx];
            if (gb) (*gb)[p] += dy;
            const T dh = dy * ng->data[p];
            sum_dh += dh;
            sum_dh_xhat += dh * xhat[idx];
          }
          if (!gx) continue;
          const T inv_n = T(1) / static_cast<T>(geo.n);
          for (std::size_t j = 0; j < geo.n; ++j) {
            const std::size_t idx = r * geo.n + j;
            const std::size_t p = geo.rows_per_param == 0 ? j : r / geo.rows_per_param % params;
            const T dh = o.grad[idx] * ng->data[p];
            (*gx)[idx] += inv_std[r] * (dh - sum_dh * inv_n - xhat[idx] * sum_dh_xhat * inv_n);
          }
        }
      });
}

}  // namespace detail

/// Normalizes every row along the last axis (length k), then applies gamma/beta[k].
template <Scalar T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  if (x.rank() == 0) throw DimensionError("layernorm: scalar input");
  const std::size_t k = x.shape().back();
  if (gamma.numel() != k || beta.numel() != k) {
    throw DimensionError("layernorm: gamma/beta must have " + std::to_string(k) + " elements");
  }
  return detail::normalize_affine(x, gamma, beta, eps, detail::NormGeometry{x.numel() / k, k, 0}, "layernorm");
}

/// Per-channel normalization over all spatial voxels of a C×h×w×d block, then gamma/beta[C].
template <Scalar T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  if (x.rank() < 2) throw DimensionError("instance_norm: expected channel-first input");
  const std::size_t channels = x.extent(0);
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw DimensionError("instance_norm: gamma/beta must have one entry per channel");
  }
  return detail::normalize_affine(x, gamma, beta, eps,
                                  detail::NormGeometry{channels, x.numel() / channels, 1}, "instance_norm");
}

}  // namespace brainformer
