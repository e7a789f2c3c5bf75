#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "brainformer/config.hpp"
#include "brainformer/ops.hpp"
#include "brainformer/parameters.hpp"

namespace brainformer {

/// Trainable mappings of one fusion-head self-attention block.
template <Scalar T>
struct FusionAttentionParams {
  Tensor<T> w_q, w_k, w_v;  // k×k, split column-wise into heads
  Tensor<T> head_logic;     // n_h×n_h, mixes intensities across heads before softmax
  Tensor<T> head_weight;    // n_h×n_h, mixes attention maps after softmax
  Tensor<T> w_out;          // k×k
  std::size_t heads = 1;

  std::size_t width() const { return w_q.extent(0); }
  std::size_t head_width() const { return width() / heads; }
};

template <Scalar T>
struct LayerNormParams {
  Tensor<T> gamma, beta;
};

template <Scalar T>
struct MlpParams {
  Tensor<T> w1, b1;  // k×(r·k), r·k
  Tensor<T> w2, b2;  // (r·k)×k, k
};

template <Scalar T>
struct FusionLayerParams {
  FusionAttentionParams<T> attention;
  LayerNormParams<T> ln1, ln2;
  MlpParams<T> mlp;
};

template <Scalar T>
struct HeadProjections {
  Tensor<T> q, k, v;  // each n_h×N×k_h
};

/// Splits S·W column-wise into heads: [N×k] -> [n_h×N×k_h].
template <Scalar T>
Tensor<T> split_heads(const Tensor<T>& projected, std::size_t heads) {
  const std::size_t n = projected.extent(0);
  const std::size_t k = projected.extent(1);
  if (k % heads != 0) throw DimensionError("split_heads: width not divisible by head count");
  return permute(reshape(projected, {n, heads, k / heads}), {1, 0, 2});
}

/// Inverse of split_heads: [n_h×N×k_h] -> [N×(n_h·k_h)].
template <Scalar T>
Tensor<T> merge_heads(const Tensor<T>& per_head) {
  const std::size_t heads = per_head.extent(0), n = per_head.extent(1), kh = per_head.extent(2);
  return reshape(permute(per_head, {1, 0, 2}), {n, heads * kh});
}

template <Scalar T>
HeadProjections<T> qkv_project(const Tensor<T>& tokens, const FusionAttentionParams<T>& p) {
  if (tokens.rank() != 2 || tokens.extent(1) != p.width()) {
    throw DimensionError("qkv_project: tokens " + shape_string(tokens.shape()) + " vs width " +
                         std::to_string(p.width()));
  }
  return {split_heads(matmul(tokens, p.w_q), p.heads), split_heads(matmul(tokens, p.w_k), p.heads),
          split_heads(matmul(tokens, p.w_v), p.heads)};
}

/// E = Q·Kᵀ/√k_h, for one head (N×k_h) or all heads at once (n_h×N×k_h).
template <Scalar T>
Tensor<T> attention_intensity(const Tensor<T>& q, const Tensor<T>& k, std::size_t head_width) {
  const T inv = T(1) / std::sqrt(static_cast<T>(head_width));
  if (q.rank() == 2) return scale(matmul(q, transpose(k)), inv);
  return scale(bmm(q, permute(k, {0, 2, 1})), inv);
}

/// out[r] = Σ_s mix[r,s]·maps[s], applied pointwise over the trailing axes.
template <Scalar T>
Tensor<T> mix_heads(const Tensor<T>& maps, const Tensor<T>& mix) {
  const std::size_t heads = maps.extent(0);
  if (mix.rank() != 2 || mix.extent(0) != heads || mix.extent(1) != heads) {
    throw DimensionError("mix_heads: mapping " + shape_string(mix.shape()) + " for " + std::to_string(heads) +
                         " heads");
  }
  const Shape shape = maps.shape();
  return reshape(matmul(mix, reshape(maps, {heads, maps.numel() / heads})), shape);
}

/// h_A: head-mixed intensities, softmax-normalized along the key (last) axis.
template <Scalar T>
Tensor<T> logic_fusion(const Tensor<T>& intensities, const Tensor<T>& head_logic) {
  const auto mixed = mix_heads(intensities, head_logic);
  return softmax(mixed, mixed.rank() - 1);
}

/// h_B: pointwise head mix of the normalized maps.
template <Scalar T>
Tensor<T> weight_fusion(const Tensor<T>& h_a, const Tensor<T>& head_weight) {
  return mix_heads(h_a, head_weight);
}

/// h_v[r] = h_B[r]·V[r].
template <Scalar T>
Tensor<T> apply_values(const Tensor<T>& h_b, const Tensor<T>& v) {
  return bmm(h_b, v);
}

/// Concatenates heads along the feature axis and applies F_P.
template <Scalar T>
Tensor<T> reproject(const Tensor<T>& h_v, const Tensor<T>& w_out) {
  return matmul(merge_heads(h_v), w_out);
}

/// Full attention block on N×k tokens. In standard mode the two head
/// mappings are skipped, which is exactly multi-head self-attention.
template <Scalar T>
Tensor<T> fusion_attention(const Tensor<T>& tokens, const FusionAttentionParams<T>& p, AttentionMode mode) {
  const auto qkv = qkv_project(tokens, p);
  const auto e = attention_intensity(qkv.q, qkv.k, p.head_width());
  Tensor<T> weights;
  if (mode == AttentionMode::fusion) {
    weights = weight_fusion(logic_fusion(e, p.head_logic), p.head_weight);
  } else {
    weights = softmax(e, 2);
  }
  return reproject(apply_values(weights, qkv.v), p.w_out);
}

template <Scalar T>
Tensor<T> mlp_forward(const Tensor<T>& x, const MlpParams<T>& p) {
  const auto hidden = gelu(add(matmul(x, p.w1), p.b1));
  return add(matmul(hidden, p.w2), p.b2);
}

/// Pre-norm layer: S' = S + FHSA(LN(S)); out = S' + MLP(LN(S')).
template <Scalar T>
Tensor<T> fusion_layer_forward(const Tensor<T>& tokens, const FusionLayerParams<T>& p, AttentionMode mode) {
  const auto mid = add(tokens, fusion_attention(layernorm(tokens, p.ln1.gamma, p.ln1.beta), p.attention, mode));
  return add(mid, mlp_forward(layernorm(mid, p.ln2.gamma, p.ln2.beta), p.mlp));
}

/// Runs all L layers and returns the outputs after layers L/n, 2L/n, ..., L.
template <Scalar T>
std::vector<Tensor<T>> encoder_forward(const Tensor<T>& tokens, const std::vector<FusionLayerParams<T>>& layers,
                                       std::size_t taps, AttentionMode mode) {
  if (taps == 0 || layers.size() % taps != 0) {
    throw ConfigError("encoder: " + std::to_string(layers.size()) + " layers not divisible into " +
                      std::to_string(taps) + " taps");
  }
  const std::size_t per_tap = layers.size() / taps;
  std::vector<Tensor<T>> out;
  Tensor<T> s = tokens;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    s = fusion_layer_forward(s, layers[l], mode);
    if ((l + 1) % per_tap == 0) out.push_back(s);
  }
  return out;
}

template <Scalar T>
FusionLayerParams<T> make_fusion_layer(ParameterSet<T>& params, Initializer<T>& init, const std::string& prefix,
                                       std::size_t width, std::size_t heads, std::size_t mlp_ratio,
                                       AttentionMode mode, double init_std) {
  FusionLayerParams<T> layer;
  auto& a = layer.attention;
  a.heads = heads;
  a.w_q = params.add(prefix + ".attn.w_q", init.fan_in({width, width}, width));
  a.w_k = params.add(prefix + ".attn.w_k", init.fan_in({width, width}, width));
  a.w_v = params.add(prefix + ".attn.w_v", init.fan_in({width, width}, width));
  if (mode == AttentionMode::fusion) {
    a.head_logic = params.add(prefix + ".attn.head_logic", init.near_identity(heads, init_std));
    a.head_weight = params.add(prefix + ".attn.head_weight", init.near_identity(heads, init_std));
  } else {
    a.head_logic = Tensor<T>::identity(heads);
    a.head_weight = Tensor<T>::identity(heads);
  }
  a.w_out = params.add(prefix + ".attn.w_out", init.fan_in({width, width}, width));
  layer.ln1 = {params.add(prefix + ".ln1.gamma", init.constant({width}, T(1))),
               params.add(prefix + ".ln1.beta", init.constant({width}, T(0)))};
  layer.ln2 = {params.add(prefix + ".ln2.gamma", init.constant({width}, T(1))),
               params.add(prefix + ".ln2.beta", init.constant({width}, T(0)))};
  const std::size_t hidden = width * mlp_ratio;
  layer.mlp.w1 = params.add(prefix + ".mlp.w1", init.fan_in({width, hidden}, width));
  layer.mlp.b1 = params.add(prefix + ".mlp.b1", init.constant({hidden}, T(0)));
  layer.mlp.w2 = params.add(prefix + ".mlp.w2", init.fan_in({hidden, width}, hidden));
  layer.mlp.b2 = params.add(prefix + ".mlp.b2", init.constant({width}, T(0)));
  return layer;
}

}  // namespace brainformer
