#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "brainformer/idftm.hpp"
#include "brainformer/sequentializer.hpp"

namespace brainformer {

/// Named shapes recorded while a forward pass runs (or predicted analytically).
using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

inline void trace_shape(ShapeTrace* trace, std::string name, const Shape& shape) {
  if (trace != nullptr) trace->emplace_back(std::move(name), shape);
}

/// One decoder scale b < n: upsample the running features, lift tap b to the
/// same grid, concatenate, fuse channels and run the cascade.
template <Scalar T>
struct DecoderStageParams {
  std::size_t scale = 0;                 // b
  ConvLayer<T> up;                       // transposed 2³/2, C_{b+1} -> C_b
  std::vector<ConvLayer<T>> skip_path;   // n−b transposed 2³/2 convs, k -> C_b -> ... -> C_b
  ConvLayer<T> fuse;                     // 1×1×1, 2·C_b -> C_b
  CascadeParams<T> cascade;
};

template <Scalar T>
struct DecoderParams {
  ConvLayer<T> bottom;                   // 1×1×1, k -> C_n on the deepest tap
  CascadeParams<T> bottom_cascade;
  std::vector<DecoderStageParams<T>> stages;  // b = n−1 down to 1
  ConvLayer<T> restore;                  // transposed f³/f, C_1 -> C_1; undefined when f == 1
  Tensor<T> input_conv;                  // 3³, C -> C_1 on the raw block; no bias ahead of the norm
  Tensor<T> input_gamma, input_beta;
  ConvLayer<T> head;                     // 1×1×1, 2·C_1 -> 4
};

namespace detail {

inline void require_stage_shape(std::size_t stage, const char* what, const Shape& got, const Shape& want) {
  if (got != want) {
    throw ConfigError("decoder stage " + std::to_string(stage) + ": " + what + " has shape " + shape_string(got) +
                      ", expected " + shape_string(want));
  }
}

inline Shape block_shape(std::size_t channels, const Extents& e) { return {channels, e[0], e[1], e[2]}; }

}  // namespace detail

/// Maps the n encoder taps (shallowest first) and the raw input block to
/// 4-class logits at the block's native resolution.
template <Scalar T>
Tensor<T> decoder_forward(const std::vector<TokenSequence<T>>& taps, const Tensor<T>& input, const ModelConfig& cfg,
                          const DecoderParams<T>& p, ShapeTrace* trace = nullptr) {
  const std::size_t n = cfg.taps;
  if (taps.size() != n) {
    throw DimensionError("decoder: expected " + std::to_string(n) + " taps, got " + std::to_string(taps.size()));
  }
  const auto g = cfg.grid();

  auto x = conv_layer(tokens_to_block(taps[n - 1]), p.bottom);
  detail::require_stage_shape(n, "projected tap", x.shape(), detail::block_shape(cfg.stage_channels(n), g));
  x = cascade_forward(x, p.bottom_cascade);
  trace_shape(trace, "stage " + std::to_string(n), x.shape());

  for (const auto& stage : p.stages) {
    const std::size_t b = stage.scale;
    const Shape want = detail::block_shape(cfg.stage_channels(b), cfg.stage_extents(b));
    const auto up = upsample_layer(x, stage.up, 2);
    detail::require_stage_shape(b, "upsampled features", up.shape(), want);
    auto skip = tokens_to_block(taps[b - 1]);
    for (const auto& layer : stage.skip_path) skip = upsample_layer(skip, layer, 2);
    detail::require_stage_shape(b, "skip features", skip.shape(), want);
    x = cascade_forward(conv_layer(concat<T>({up, skip}, 0), stage.fuse), stage.cascade);
    trace_shape(trace, "stage " + std::to_string(b), x.shape());
  }

  const std::size_t f = cfg.restore_factor();
  if (f > 1) x = upsample_layer(x, p.restore, f);
  trace_shape(trace, "restored", x.shape());

  const auto raw = conv_norm_relu(input, p.input_conv, p.input_gamma, p.input_beta);
  detail::require_stage_shape(0, "restored features", x.shape(), raw.shape());
  const auto logits = conv_layer(concat<T>({x, raw}, 0), p.head);
  trace_shape(trace, "logits", logits.shape());
  return logits;
}

template <Scalar T>
ConvLayer<T> make_conv_layer(ParameterSet<T>& params, Initializer<T>& init, const std::string& name, Shape kernel_shape,
                             std::size_t fan_in, std::size_t bias_size) {
  return {params.add(name + ".kernel", init.fan_in(std::move(kernel_shape), fan_in)),
          params.add(name + ".bias", init.constant({bias_size}, T(0)))};
}

template <Scalar T>
DecoderParams<T> make_decoder(ParameterSet<T>& params, Initializer<T>& init, const ModelConfig& cfg) {
  const std::size_t n = cfg.taps, k = cfg.embed_dim;
  DecoderParams<T> d;
  const std::size_t cn = cfg.stage_channels(n);
  d.bottom = make_conv_layer(params, init, "decoder.bottom", {cn, k, 1, 1, 1}, k, cn);
  d.bottom_cascade = make_cascade(params, init, "decoder.stage" + std::to_string(n), cn, cfg.grid(), cfg);
  for (std::size_t b = n - 1; b >= 1; --b) {
    const std::string prefix = "decoder.stage" + std::to_string(b);
    const std::size_t cb = cfg.stage_channels(b), cprev = cfg.stage_channels(b + 1);
    DecoderStageParams<T> s;
    s.scale = b;
    // Transposed conv with kernel = stride: each output voxel sees one tap per input channel.
    s.up = make_conv_layer(params, init, prefix + ".up", {cprev, cb, 2, 2, 2}, cprev, cb);
    for (std::size_t j = 0; j < n - b; ++j) {
      const std::size_t cin = j == 0 ? k : cb;
      s.skip_path.push_back(
          make_conv_layer(params, init, prefix + ".skip" + std::to_string(j), {cin, cb, 2, 2, 2}, cin, cb));
    }
    s.fuse = make_conv_layer(params, init, prefix + ".fuse", {cb, 2 * cb, 1, 1, 1}, 2 * cb, cb);
    s.cascade = make_cascade(params, init, prefix, cb, cfg.stage_extents(b), cfg);
    d.stages.push_back(std::move(s));
  }
  const std::size_t c1 = cfg.stage_channels(1), f = cfg.restore_factor();
  if (f > 1) d.restore = make_conv_layer(params, init, "decoder.restore", {c1, c1, f, f, f}, c1, c1);
  d.input_conv = params.add("decoder.input.kernel", init.fan_in({c1, cfg.channels, 3, 3, 3}, cfg.channels * 27));
  d.input_gamma = params.add("decoder.input.gamma", init.constant({c1}, T(1)));
  d.input_beta = params.add("decoder.input.beta", init.constant({c1}, T(0)));
  d.head = make_conv_layer(params, init, "decoder.head", {kNumClasses, 2 * c1, 1, 1, 1}, 2 * c1, kNumClasses);
  return d;
}

}  // namespace brainformer
