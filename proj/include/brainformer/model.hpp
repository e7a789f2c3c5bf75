#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "brainformer/decoder.hpp"
#include "brainformer/fhsa.hpp"
#include "brainformer/sequentializer.hpp"

namespace brainformer {

/// Encoder-decoder segmentation network on fixed-size C×H×W×D blocks.
///
/// Parameter registration order is embedding, encoder layers, decoder; it is
/// part of the checkpoint format.
template <Scalar T>
class Brainformer {
 public:
  Brainformer(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Initializer<T> init(seed);
    const std::size_t patch_len = cfg_.channels * cfg_.patch * cfg_.patch * cfg_.patch;
    embedding_.projection =
        params_.add("embed.projection", init.fan_in({patch_len, cfg_.embed_dim}, patch_len));
    embedding_.positions = params_.add("embed.positions", init.normal({cfg_.tokens(), cfg_.embed_dim}, cfg_.init_std));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      layers_.push_back(make_fusion_layer(params_, init, "encoder.layer" + std::to_string(l), cfg_.embed_dim,
                                          cfg_.heads, cfg_.mlp_ratio, cfg_.attention, cfg_.init_std));
    }
    decoder_ = make_decoder(params_, init, cfg_);
  }

  Brainformer(const Brainformer&) = delete;
  Brainformer& operator=(const Brainformer&) = delete;
  Brainformer(Brainformer&&) = default;
  Brainformer& operator=(Brainformer&&) = default;

  /// Logits [4×H×W×D] for one input block.
  Tensor<T> forward(const Tensor<T>& block, ShapeTrace* trace = nullptr) const {
    const Shape want{cfg_.channels, cfg_.block[0], cfg_.block[1], cfg_.block[2]};
    if (block.shape() != want) {
      throw DimensionError("model input " + shape_string(block.shape()) + ", expected " + shape_string(want));
    }
    trace_shape(trace, "input", block.shape());
    const auto patches = partition(block, cfg_.patch);
    trace_shape(trace, "patches", patches.shape());
    const auto seq = embed(patches, embedding_, cfg_.patch, cfg_.grid());
    trace_shape(trace, "tokens", seq.tokens.shape());
    const auto outs = encoder_forward(seq.tokens, layers_, cfg_.taps, cfg_.attention);
    std::vector<TokenSequence<T>> taps;
    for (std::size_t b = 0; b < outs.size(); ++b) {
      trace_shape(trace, "tap " + std::to_string(b + 1), outs[b].shape());
      taps.push_back({outs[b], cfg_.patch, cfg_.grid()});
    }
    return decoder_forward(taps, block, cfg_, decoder_, trace);
  }

  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  ParameterSet<T> params_;
  EmbeddingParams<T> embedding_;
  std::vector<FusionLayerParams<T>> layers_;
  DecoderParams<T> decoder_;
};

/// The shapes forward() will produce, computed from the configuration alone.
inline ShapeTrace predicted_shapes(const ModelConfig& cfg) {
  cfg.validate();
  const auto g = cfg.grid();
  const std::size_t n = cfg.taps, k = cfg.embed_dim, tokens = cfg.tokens();
  ShapeTrace t;
  t.emplace_back("input", Shape{cfg.channels, cfg.block[0], cfg.block[1], cfg.block[2]});
  t.emplace_back("patches", Shape{tokens, cfg.channels * cfg.patch * cfg.patch * cfg.patch});
  t.emplace_back("tokens", Shape{tokens, k});
  for (std::size_t b = 1; b <= n; ++b) t.emplace_back("tap " + std::to_string(b), Shape{tokens, k});
  t.emplace_back("stage " + std::to_string(n), detail::block_shape(cfg.stage_channels(n), g));
  for (std::size_t b = n - 1; b >= 1; --b) {
    t.emplace_back("stage " + std::to_string(b), detail::block_shape(cfg.stage_channels(b), cfg.stage_extents(b)));
  }
  t.emplace_back("restored", detail::block_shape(cfg.stage_channels(1), cfg.block));
  t.emplace_back("logits", detail::block_shape(kNumClasses, cfg.block));
  return t;
}

}  // namespace brainformer
