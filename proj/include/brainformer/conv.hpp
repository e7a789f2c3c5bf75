#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "brainformer/tensor.hpp"

namespace brainformer {

namespace detail {

// Geometry of a strided, zero-padded cross-correlation from a "wide" grid
// (conv input) to a "narrow" grid (conv output). Transposed convolution reuses
// it with the roles of the two grids swapped.
struct ConvGeometry {
  std::size_t wide_channels = 0;
  std::size_t narrow_channels = 0;
  std::array<std::size_t, 3> wide{};
  std::array<std::size_t, 3> narrow{};
  std::array<std::size_t, 3> kernel{};
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t wide_volume() const { return wide[0] * wide[1] * wide[2]; }
  std::size_t narrow_volume() const { return narrow[0] * narrow[1] * narrow[2]; }
  std::size_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
};

// Output positions o with 0 <= o*stride - pad + k < extent, as [lo, hi).
inline std::array<std::size_t, 2> valid_range(std::size_t k, std::size_t pad, std::size_t stride,
                                              std::size_t narrow, std::size_t wide) {
  const long long kk = static_cast<long long>(k);
  const long long p = static_cast<long long>(pad);
  const long long s = static_cast<long long>(stride);
  long long lo = 0;
  if (kk < p) lo = (p - kk + s - 1) / s;
  long long hi = (static_cast<long long>(wide) - 1 + p - kk);
  hi = hi < 0 ? 0 : hi / s + 1;
  if (hi > static_cast<long long>(narrow)) hi = static_cast<long long>(narrow);
  if (lo > hi) lo = hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Visits every (kernel tap, narrow position, wide position) triple.
// `fn(kernel_offset, narrow_offset, wide_offset, count)` is called once per run
// along the last axis; the wide index advances by `stride` per narrow step.
template <class Fn>
void for_each_tap(const ConvGeometry& g, Fn&& fn) {
  const auto& w = g.wide;
  const auto& nw = g.narrow;
  for (std::size_t a = 0; a < g.kernel[0]; ++a) {
    const auto rx = valid_range(a, g.pad, g.stride, nw[0], w[0]);
    for (std::size_t b = 0; b < g.kernel[1]; ++b) {
      const auto ry = valid_range(b, g.pad, g.stride, nw[1], w[1]);
      for (std::size_t c = 0; c < g.kernel[2]; ++c) {
        const auto rz = valid_range(c, g.pad, g.stride, nw[2], w[2]);
        if (rz[0] >= rz[1]) continue;
        const std::size_t koff = (a * g.kernel[1] + b) * g.kernel[2] + c;
        const std::size_t count = rz[1] - rz[0];
        for (std::size_t ox = rx[0]; ox < rx[1]; ++ox) {
          const std::size_t ix = ox * g.stride + a - g.pad;
          for (std::size_t oy = ry[0]; oy < ry[1]; ++oy) {
            const std::size_t iy = oy * g.stride + b - g.pad;
            const std::size_t iz = rz[0] * g.stride + c - g.pad;
            fn(koff, (ox * nw[1] + oy) * nw[2] + rz[0], (ix * w[1] + iy) * w[2] + iz, count);
          }
        }
      }
    }
  }
}

// narrow[co] += Σ K[co, ci] ⋆ wide[ci]; K laid out [narrow_channels × wide_channels × k³].
template <Scalar T>
void conv_forward(const ConvGeometry& g, const T* wide, const T* kernel, T* narrow) {
  const std::size_t kv = g.kernel_volume();
  const std::size_t wv = g.wide_volume();
  const std::size_t nv = g.narrow_volume();
  const std::size_t s = g.stride;
  for (std::size_t co = 0; co < g.narrow_channels; ++co) {
    T* out = narrow + co * nv;
    for (std::size_t ci = 0; ci < g.wide_channels; ++ci) {
      const T* in = wide + ci * wv;
      const T* k = kernel + (co * g.wide_channels + ci) * kv;
      for_each_tap(g, [&](std::size_t koff, std::size_t noff, std::size_t woff, std::size_t count) {
        const T wgt = k[koff];
        if (wgt == T(0)) return;
        T* o = out + noff;
        const T* i = in + woff;
        for (std::size_t t = 0; t < count; ++t) o[t] += wgt * i[t * s];
      });
    }
  }
}

// wide[ci] += Σ K[co, ci] ⋆ᵀ narrow[co] (adjoint of conv_forward w.r.t. `wide`).
template <Scalar T>
void conv_adjoint(const ConvGeometry& g, const T* narrow, const T* kernel, T* wide) {
  const std::size_t kv = g.kernel_volume();
  const std::size_t wv = g.wide_volume();
  const std::size_t nv = g.narrow_volume();
  const std::size_t s = g.stride;
  for (std::size_t co = 0; co < g.narrow_channels; ++co) {
    const T* src = narrow + co * nv;
    for (std::size_t ci = 0; ci < g.wide_channels; ++ci) {
      T* dst = wide + ci * wv;
      const T* k = kernel + (co * g.wide_channels + ci) * kv;
      for_each_tap(g, [&](std::size_t koff, std::size_t noff, std::size_t woff, std::size_t count) {
        const T wgt = k[koff];
        if (wgt == T(0)) return;
        const T* o = src + noff;
        T* i = dst + woff;
        for (std::size_t t = 0; t < count; ++t) i[t * s] += wgt * o[t];
      });
    }
  }
}

// dK[co, ci] += narrow[co] · shifted wide[ci].
template <Scalar T>
void conv_kernel_grad(const ConvGeometry& g, const T* wide, const T* narrow, T* dkernel) {
  const std::size_t kv = g.kernel_volume();
  const std::size_t wv = g.wide_volume();
  const std::size_t nv = g.narrow_volume();
  const std::size_t s = g.stride;
  for (std::size_t co = 0; co < g.narrow_channels; ++co) {
    const T* dn = narrow + co * nv;
    for (std::size_t ci = 0; ci < g.wide_channels; ++ci) {
      const T* in = wide + ci * wv;
      T* dk = dkernel + (co * g.wide_channels + ci) * kv;
      for_each_tap(g, [&](std::size_t koff, std::size_t noff, std::size_t woff, std::size_t count) {
        const T* o = dn + noff;
        const T* i = in + woff;
        T acc = 0;
        for (std::size_t t = 0; t < count; ++t) acc += o[t] * i[t * s];
        dk[koff] += acc;
      });
    }
  }
}

inline void require_conv_operands(const Shape& x, const Shape& k, std::size_t stride, const char* op) {
  if (x.size() != 4) throw DimensionError(std::string(op) + ": input must be C×h×w×d, got " + shape_string(x));
  if (k.size() != 5) throw DimensionError(std::string(op) + ": kernel must be rank 5, got " + shape_string(k));
  if (stride == 0) throw DimensionError(std::string(op) + ": stride must be >= 1");
}

}  // namespace detail

/// 3D cross-correlation of a C_in×h×w×d block with a C_out×C_in×k₁×k₂×k₃ kernel.
/// Output extent per axis: floor((h + 2·pad − k)/stride) + 1.
template <Scalar T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride = 1, std::size_t pad = 0) {
  detail::require_conv_operands(input.shape(), kernel.shape(), stride, "conv3d");
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  if (ks[1] != xs[0]) {
    throw DimensionError("conv3d: kernel expects " + std::to_string(ks[1]) + " input channels, got " +
                         std::to_string(xs[0]));
  }
  detail::ConvGeometry g;
  g.wide_channels = xs[0];
  g.narrow_channels = ks[0];
  g.stride = stride;
  g.pad = pad;
  for (int a = 0; a < 3; ++a) {
    g.wide[a] = xs[a + 1];
    g.kernel[a] = ks[a + 2];
    if (g.kernel[a] > xs[a + 1] + 2 * pad) {
      throw DimensionError("conv3d: kernel " + shape_string(ks) + " larger than padded input " + shape_string(xs));
    }
    g.narrow[a] = (xs[a + 1] + 2 * pad - g.kernel[a]) / stride + 1;
  }
  std::vector<T> out(g.narrow_channels * g.narrow_volume(), T(0));
  detail::conv_forward(g, input.data().data(), kernel.data().data(), out.data());
  return detail::make_result<T>(
      "conv3d", Shape{g.narrow_channels, g.narrow[0], g.narrow[1], g.narrow[2]}, std::move(out), {&input, &kernel},
      [nx = input.node_ptr(), nk = kernel.node_ptr(), g](detail::TensorNode<T>& o) {
        if (auto* gx = detail::grad_sink(nx)) detail::conv_adjoint(g, o.grad.data(), nk->data.data(), gx->data());
        if (auto* gk = detail::grad_sink(nk)) detail::conv_kernel_grad(g, nx->data.data(), o.grad.data(), gk->data());
      });
}

/// Transposed 3D convolution: the adjoint of conv3d with the same kernel,
/// stride and padding. The kernel is laid out C_in×C_out×k₁×k₂×k₃ (C_in being
/// this op's input channels). Output extent: (h − 1)·stride + k − 2·pad.
template <Scalar T>
Tensor<T> conv3d_transpose(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride = 1,
                           std::size_t pad = 0) {
  detail::require_conv_operands(input.shape(), kernel.shape(), stride, "conv3d_transpose");
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  if (ks[0] != xs[0]) {
    throw DimensionError("conv3d_transpose: kernel expects " + std::to_string(ks[0]) + " input channels, got " +
                         std::to_string(xs[0]));
  }
  detail::ConvGeometry g;
  g.narrow_channels = xs[0];
  g.wide_channels = ks[1];
  g.stride = stride;
  g.pad = pad;
  for (int a = 0; a < 3; ++a) {
    g.narrow[a] = xs[a + 1];
    g.kernel[a] = ks[a + 2];
    const std::size_t full = (xs[a + 1] - 1) * stride + g.kernel[a];
    if (full <= 2 * pad) throw DimensionError("conv3d_transpose: padding exceeds output extent");
    g.wide[a] = full - 2 * pad;
  }
  std::vector<T> out(g.wide_channels * g.wide_volume(), T(0));
  detail::conv_adjoint(g, input.data().data(), kernel.data().data(), out.data());
  return detail::make_result<T>(
      "conv3d_transpose", Shape{g.wide_channels, g.wide[0], g.wide[1], g.wide[2]}, std::move(out),
      {&input, &kernel}, [nx = input.node_ptr(), nk = kernel.node_ptr(), g](detail::TensorNode<T>& o) {
        if (auto* gx = detail::grad_sink(nx)) detail::conv_forward(g, o.grad.data(), nk->data.data(), gx->data());
        if (auto* gk = detail::grad_sink(nk)) detail::conv_kernel_grad(g, o.grad.data(), nx->data.data(), gk->data());
      });
}

}  // namespace brainformer
