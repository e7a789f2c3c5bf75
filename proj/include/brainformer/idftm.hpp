#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <variant>

#include "brainformer/config.hpp"
#include "brainformer/conv.hpp"
#include "brainformer/fhsa.hpp"
#include "brainformer/ops.hpp"
#include "brainformer/parameters.hpp"
#include "brainformer/volume.hpp"

namespace brainformer {

/// Convolution kernel plus per-output-channel bias.
template <Scalar T>
struct ConvLayer {
  Tensor<T> kernel;
  Tensor<T> bias;  // [C_out]
};

/// Adds a per-channel bias to a channel-first block.
template <Scalar T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  Shape bshape(x.rank(), 1);
  bshape[0] = bias.numel();
  return add(x, reshape(bias, bshape));
}

template <Scalar T>
Tensor<T> conv_layer(const Tensor<T>& x, const ConvLayer<T>& layer, std::size_t pad = 0) {
  return add_channel_bias(conv3d(x, layer.kernel, 1, pad), layer.bias);
}

template <Scalar T>
Tensor<T> upsample_layer(const Tensor<T>& x, const ConvLayer<T>& layer, std::size_t factor) {
  return add_channel_bias(conv3d_transpose(x, layer.kernel, factor), layer.bias);
}

/// Parameters of the deformable fusion attention module acting on C×h×w×d blocks.
/// Output channels [r·c, (r+1)·c) of each q/k/v kernel form head r (c = C/n_h').
template <Scalar T>
struct IdftmParams {
  Tensor<T> q_kernel, k_kernel, v_kernel;  // C×C×s×s×s
  Tensor<T> pos_w;                         // n_h'×1×w×1×c
  Tensor<T> pos_h;                         // n_h'×h×1×1×c
  Tensor<T> pos_d;                         // n_h'×1×1×d×c
  Tensor<T> head_logic, head_weight;       // n_h'×n_h'
  ConvLayer<T> out;                        // 1×1×1, C -> C
  std::size_t heads = 1;
  bool scaled = false;

  std::size_t channels() const { return q_kernel.extent(0); }
  std::size_t head_channels() const { return channels() / heads; }
  Extents extents() const { return {pos_h.extent(1), pos_w.extent(2), pos_d.extent(3)}; }
};

template <Scalar T>
struct IdftmQkv {
  Tensor<T> q, k, v;  // each n_h'×c×λ
};

/// Flattens the spatial axes of a C×h×w×d block into heads: [n_h'×c×λ].
template <Scalar T>
Tensor<T> to_head_sequences(const Tensor<T>& block, std::size_t heads) {
  const std::size_t c = block.extent(0);
  if (c % heads != 0) throw DimensionError("IDFTM: channels not divisible by heads");
  const std::size_t lambda = block.numel() / c;
  return reshape(block, {heads, c / heads, lambda});
}

template <Scalar T>
IdftmQkv<T> idftm_qkv(const Tensor<T>& block, const IdftmParams<T>& p) {
  if (block.rank() != 4 || block.extent(0) != p.channels()) {
    throw DimensionError("idftm_qkv: block " + shape_string(block.shape()) + " vs " + std::to_string(p.channels()) +
                         " channels");
  }
  const std::size_t pad = p.q_kernel.extent(2) / 2;
  return {to_head_sequences(conv3d(block, p.q_kernel, 1, pad), p.heads),
          to_head_sequences(conv3d(block, p.k_kernel, 1, pad), p.heads),
          to_head_sequences(conv3d(block, p.v_kernel, 1, pad), p.heads)};
}

/// ω = α_w + α_h + α_d broadcast to n_h'×h×w×d×c.
template <Scalar T>
Tensor<T> fuse_positions(const IdftmParams<T>& p) {
  return add(add(p.pos_w, p.pos_h), p.pos_d);
}

/// ω for a single head r: h×w×d×c.
template <Scalar T>
Tensor<T> fuse_positions(const IdftmParams<T>& p, std::size_t head) {
  const auto all = fuse_positions(p);
  const Shape& s = all.shape();
  return reshape(slice(all, 0, head, head + 1), {s[1], s[2], s[3], s[4]});
}

/// R_ω: same flattening as the q/k/v sequences, [h×w×d×c] -> [c×λ]
/// (or [n_h'×h×w×d×c] -> [n_h'×c×λ]).
template <Scalar T>
Tensor<T> position_sequence(const Tensor<T>& omega) {
  if (omega.rank() == 4) {
    const std::size_t c = omega.extent(3);
    return reshape(permute(omega, {3, 0, 1, 2}), {c, omega.numel() / c});
  }
  if (omega.rank() != 5) throw DimensionError("position_sequence: expected h×w×d×c or n×h×w×d×c");
  const std::size_t heads = omega.extent(0), c = omega.extent(4);
  return reshape(permute(omega, {0, 4, 1, 2, 3}), {heads, c, omega.numel() / (heads * c)});
}

/// E = Kᵀ·Q + R_ωᵀ·Q (λ×λ per head), optionally divided by √c.
template <Scalar T>
Tensor<T> idftm_intensity(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& r, bool scaled = false) {
  Tensor<T> e;
  if (q.rank() == 2) {
    e = add(matmul(transpose(k), q), matmul(transpose(r), q));
  } else {
    e = add(bmm(permute(k, {0, 2, 1}), q), bmm(permute(r, {0, 2, 1}), q));
  }
  if (!scaled) return e;
  const std::size_t c = q.extent(q.rank() - 2);
  return scale(e, T(1) / std::sqrt(static_cast<T>(c)));
}

template <Scalar T>
Tensor<T> idftm_logic_fusion(const Tensor<T>& e, const Tensor<T>& head_logic) {
  return logic_fusion(e, head_logic);
}

template <Scalar T>
Tensor<T> idftm_weight_fusion(const Tensor<T>& h_a, const Tensor<T>& head_weight) {
  return weight_fusion(h_a, head_weight);
}

/// H_V[r] = H_B[r]·V[r]ᵀ, giving n_h'×λ×c.
template <Scalar T>
Tensor<T> idftm_apply_values(const Tensor<T>& h_b, const Tensor<T>& v) {
  return bmm(h_b, permute(v, {0, 2, 1}));
}

/// Unflattens λ back to h×w×d, stacks heads into C channels and applies F'_s.
template <Scalar T>
Tensor<T> idftm_reproject(const Tensor<T>& h_v, const ConvLayer<T>& out, const Extents& extents) {
  const std::size_t heads = h_v.extent(0), c = h_v.extent(2);
  const auto block = reshape(permute(h_v, {0, 2, 1}), {heads * c, extents[0], extents[1], extents[2]});
  return conv_layer(block, out);
}

template <Scalar T>
Tensor<T> idftm_forward(const Tensor<T>& block, const IdftmParams<T>& p) {
  const Extents ext{block.extent(1), block.extent(2), block.extent(3)};
  if (ext != p.extents()) {
    throw DimensionError("IDFTM: block extents " + extents_string(ext) + " vs positional weights " +
                         extents_string(p.extents()));
  }
  const auto qkv = idftm_qkv(block, p);
  const auto r = position_sequence(fuse_positions(p));
  const auto e = idftm_intensity(qkv.q, qkv.k, r, p.scaled);
  const auto h_b = idftm_weight_fusion(idftm_logic_fusion(e, p.head_logic), p.head_weight);
  return idftm_reproject(idftm_apply_values(h_b, qkv.v), p.out, ext);
}

/// Residual convolution module: two conv3³ → instance norm → ReLU units plus a skip.
template <Scalar T>
struct RbmParams {
  Tensor<T> conv1, conv2;  // C_out×C_in×3³, C_out×C_out×3³
  Tensor<T> gamma1, beta1, gamma2, beta2;
  Tensor<T> skip;  // 1×1×1 projection, undefined when channels are unchanged
};

template <Scalar T>
Tensor<T> conv_norm_relu(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& gamma, const Tensor<T>& beta) {
  return relu(instance_norm(conv3d(x, kernel, 1, kernel.extent(2) / 2), gamma, beta));
}

/// The two conv units without the skip.
template <Scalar T>
Tensor<T> rbm_branch(const Tensor<T>& x, const RbmParams<T>& p) {
  return conv_norm_relu(conv_norm_relu(x, p.conv1, p.gamma1, p.beta1), p.conv2, p.gamma2, p.beta2);
}

template <Scalar T>
Tensor<T> rbm_forward(const Tensor<T>& x, const RbmParams<T>& p) {
  return add(rbm_branch(x, p), p.skip.defined() ? conv3d(x, p.skip) : x);
}

/// T̂'' = T̂' + R̂(T̂') with T̂' = IDFTM(T'). The outer sum already is the
/// residual path, so R̂ here is the RBM's conv branch alone; a zero RBM
/// leaves T̂' unchanged.
template <Scalar T>
Tensor<T> idftm_rbm_block(const Tensor<T>& block, const IdftmParams<T>& idftm, const RbmParams<T>& rbm) {
  const auto attended = idftm_forward(block, idftm);
  return add(attended, rbm_branch(attended, rbm));
}

template <Scalar T>
using CascadeUnit = std::variant<IdftmParams<T>, RbmParams<T>>;

template <Scalar T>
struct CascadeParams {
  CascadeUnit<T> first;
  CascadeUnit<T> second;
};

template <Scalar T>
Tensor<T> apply_unit(const Tensor<T>& x, const CascadeUnit<T>& unit) {
  if (const auto* idftm = std::get_if<IdftmParams<T>>(&unit)) return idftm_forward(x, *idftm);
  return rbm_forward(x, std::get<RbmParams<T>>(unit));
}

/// Second unit as the branch of a residual sum (RBM without its own skip).
template <Scalar T>
Tensor<T> apply_residual_branch(const Tensor<T>& x, const CascadeUnit<T>& unit) {
  if (const auto* idftm = std::get_if<IdftmParams<T>>(&unit)) return idftm_forward(x, *idftm);
  return rbm_branch(x, std::get<RbmParams<T>>(unit));
}

/// first(x) + second(first(x)); shape-preserving.
template <Scalar T>
Tensor<T> cascade_forward(const Tensor<T>& x, const CascadeParams<T>& p) {
  const auto first = apply_unit(x, p.first);
  return add(first, apply_residual_branch(first, p.second));
}

template <Scalar T>
IdftmParams<T> make_idftm(ParameterSet<T>& params, Initializer<T>& init, const std::string& prefix,
                          std::size_t channels, const Extents& extents, std::size_t heads, std::size_t kernel,
                          bool scaled, double init_std) {
  if (channels % heads != 0) {
    throw ConfigError(prefix + ": channels " + std::to_string(channels) + " not divisible by heads " +
                      std::to_string(heads));
  }
  const std::size_t c = channels / heads;
  IdftmParams<T> p;
  p.heads = heads;
  p.scaled = scaled;
  // q/k/v start from one shared draw and are trained independently afterwards.
  const auto shared = init.fan_in({channels, channels, kernel, kernel, kernel}, channels * kernel * kernel * kernel);
  p.q_kernel = params.add(prefix + ".q_kernel", shared.detach());
  p.k_kernel = params.add(prefix + ".k_kernel", shared.detach());
  p.v_kernel = params.add(prefix + ".v_kernel", shared.detach());
  p.pos_w = params.add(prefix + ".pos_w", init.normal({heads, 1, extents[1], 1, c}, init_std));
  p.pos_h = params.add(prefix + ".pos_h", init.normal({heads, extents[0], 1, 1, c}, init_std));
  p.pos_d = params.add(prefix + ".pos_d", init.normal({heads, 1, 1, extents[2], c}, init_std));
  p.head_logic = params.add(prefix + ".head_logic", init.near_identity(heads, init_std));
  p.head_weight = params.add(prefix + ".head_weight", init.near_identity(heads, init_std));
  p.out.kernel = params.add(prefix + ".out.kernel", init.fan_in({channels, channels, 1, 1, 1}, channels));
  p.out.bias = params.add(prefix + ".out.bias", init.constant({channels}, T(0)));
  return p;
}

template <Scalar T>
RbmParams<T> make_rbm(ParameterSet<T>& params, Initializer<T>& init, const std::string& prefix, std::size_t in_ch,
                      std::size_t out_ch) {
  RbmParams<T> p;
  p.conv1 = params.add(prefix + ".conv1", init.fan_in({out_ch, in_ch, 3, 3, 3}, in_ch * 27));
  p.gamma1 = params.add(prefix + ".gamma1", init.constant({out_ch}, T(1)));
  p.beta1 = params.add(prefix + ".beta1", init.constant({out_ch}, T(0)));
  p.conv2 = params.add(prefix + ".conv2", init.fan_in({out_ch, out_ch, 3, 3, 3}, out_ch * 27));
  p.gamma2 = params.add(prefix + ".gamma2", init.constant({out_ch}, T(1)));
  p.beta2 = params.add(prefix + ".beta2", init.constant({out_ch}, T(0)));
  if (in_ch != out_ch) p.skip = params.add(prefix + ".skip", init.fan_in({out_ch, in_ch, 1, 1, 1}, in_ch));
  return p;
}

template <Scalar T>
CascadeParams<T> make_cascade(ParameterSet<T>& params, Initializer<T>& init, const std::string& prefix,
                              std::size_t channels, const Extents& extents, const ModelConfig& cfg) {
  auto idftm = [&](const std::string& name) -> CascadeUnit<T> {
    return make_idftm(params, init, prefix + "." + name, channels, extents, cfg.idftm_heads, cfg.qkv_kernel,
                      cfg.scaled_idftm, cfg.init_std);
  };
  auto rbm = [&](const std::string& name) -> CascadeUnit<T> {
    return make_rbm(params, init, prefix + "." + name, channels, channels);
  };
  switch (cfg.cascade) {
    case CascadeMode::rbm_rbm: return {rbm("rbm1"), rbm("rbm2")};
    case CascadeMode::idftm_idftm: return {idftm("idftm1"), idftm("idftm2")};
    case CascadeMode::idftm_rbm: break;
  }
  return {idftm("idftm"), rbm("rbm")};
}

}  // namespace brainformer
