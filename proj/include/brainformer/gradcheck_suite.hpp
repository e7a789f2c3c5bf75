#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "brainformer/gradcheck.hpp"
#include "brainformer/losses.hpp"
#include "brainformer/model.hpp"

namespace brainformer {

/// One checked module: the per-tensor errors of a single scalar loss.
struct GradcheckGroup {
  std::string module;
  std::vector<GradcheckEntry> entries;

  double max_error() const {
    double m = 0;
    for (const auto& e : entries) m = std::max(m, e.max_relative_error);
    return m;
  }
};

struct GradcheckSuiteOptions {
  double tolerance = 1e-4;
  double step = 1e-5;  // smaller steps let roundoff dominate, larger ones trip over ReLU kinks
  std::size_t max_coords = 8;  // per tensor; 0 checks every coordinate
  std::uint64_t seed = 1;
  // A central difference on an O(1) loss carries about ulp/(2·step) ≈ 1e-11 of
  // roundoff, so components much below 1e-6 cannot be resolved to 1e-4 relative.
  double floor = 1e-6;
};

struct GradcheckSuiteReport {
  std::vector<GradcheckGroup> groups;
  double tolerance = 1e-4;

  bool passed() const {
    return std::all_of(groups.begin(), groups.end(), [&](const auto& g) { return g.max_error() < tolerance; });
  }
};

using NamedTensors = std::vector<std::pair<std::string, Tensor<double>>>;

/// Projects an output onto fixed random weights so every element contributes
/// a distinct gradient.
class GradcheckProbe {
 public:
  explicit GradcheckProbe(std::uint64_t seed) : rng_(seed) {}

  Tensor<double> random(Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = dist(rng_);
    return Tensor<double>(std::move(shape), std::move(data));
  }

  std::vector<std::uint8_t> labels(std::size_t n) {
    std::vector<std::uint8_t> out(n);
    for (auto& l : out) l = static_cast<std::uint8_t>(std::uniform_int_distribution<int>(0, 3)(rng_));
    return out;
  }

 private:
  std::mt19937_64 rng_;
};

inline GradcheckGroup check_group(std::string module, const std::function<Tensor<double>()>& loss,
                                  NamedTensors tensors, const GradcheckSuiteOptions& options) {
  GradcheckOptions o;
  o.step = options.step;
  o.max_coords = options.max_coords;
  o.seed = options.seed;
  o.floor = options.floor;
  return {std::move(module), gradcheck_tensors<double>(loss, std::move(tensors), o)};
}

namespace detail {

inline NamedTensors with_prefix_match(const ParameterSet<double>& params, const std::string& prefix) {
  NamedTensors out;
  for (const auto& p : params.items())
    if (p.name.rfind(prefix, 0) == 0) out.emplace_back(p.name, p.tensor);
  return out;
}

}  // namespace detail

/// Finite-difference check of every module and of the whole network (with
/// the Dice loss on top) at double precision.
inline GradcheckSuiteReport run_gradcheck_suite(const ModelConfig& cfg, const GradcheckSuiteOptions& options = {}) {
  cfg.validate();
  GradcheckSuiteReport report;
  report.tolerance = options.tolerance;
  GradcheckProbe probe(options.seed);
  const std::size_t k = cfg.embed_dim, tokens = cfg.tokens();

  // Encoder attention (projections, head logic/weight mixing, reprojection).
  {
    ParameterSet<double> params;
    Initializer<double> init(options.seed);
    const auto layer = make_fusion_layer(params, init, "fhsa", k, cfg.heads, cfg.mlp_ratio, cfg.attention, 0.2);
    const auto x = probe.random({tokens, k});
    const auto w = probe.random({tokens, k});
    auto named = detail::with_prefix_match(params, "fhsa.attn");
    named.emplace_back("fhsa.input", x);
    report.groups.push_back(check_group(
        "fhsa attention", [&] { return sum(mul(fusion_attention(x, layer.attention, cfg.attention), w)); }, named,
        options));
    // Whole pre-norm layer: adds both layer norms and the MLP.
    named = detail::with_prefix_match(params, "fhsa");
    named.emplace_back("fhsa.input", x);
    report.groups.push_back(check_group(
        "encoder layer (ln+mlp)", [&] { return sum(mul(fusion_layer_forward(x, layer, cfg.attention), w)); }, named,
        options));
  }

  const std::size_t c = cfg.stage_channels(cfg.taps);
  const Extents e = cfg.grid();
  const Shape block_shape{c, e[0], e[1], e[2]};

  // Decoder attention block on the deepest stage.
  {
    ParameterSet<double> params;
    Initializer<double> init(options.seed + 1);
    const auto p = make_idftm(params, init, "idftm", c, e, cfg.idftm_heads, cfg.qkv_kernel, cfg.scaled_idftm, 0.2);
    const auto x = probe.random(block_shape);
    const auto w = probe.random(block_shape);
    auto named = detail::with_prefix_match(params, "idftm");
    named.emplace_back("idftm.input", x);
    report.groups.push_back(check_group("idftm", [&] { return sum(mul(idftm_forward(x, p), w)); }, named, options));
  }

  // Residual convolution module, with a channel-changing skip.
  {
    ParameterSet<double> params;
    Initializer<double> init(options.seed + 2);
    const auto p = make_rbm(params, init, "rbm", c, 2 * c);
    const auto x = probe.random(block_shape);
    const auto w = probe.random({2 * c, e[0], e[1], e[2]});
    auto named = detail::with_prefix_match(params, "rbm");
    named.emplace_back("rbm.input", x);
    report.groups.push_back(check_group("rbm", [&] { return sum(mul(rbm_forward(x, p), w)); }, named, options));
  }

  // Cascaded attention + residual convolution.
  {
    ParameterSet<double> params;
    Initializer<double> init(options.seed + 3);
    const auto a = make_idftm(params, init, "cascade.idftm", c, e, cfg.idftm_heads, cfg.qkv_kernel,
                              cfg.scaled_idftm, 0.2);
    const auto r = make_rbm(params, init, "cascade.rbm", c, c);
    const auto x = probe.random(block_shape);
    const auto w = probe.random(block_shape);
    auto named = detail::with_prefix_match(params, "cascade");
    named.emplace_back("cascade.input", x);
    report.groups.push_back(
        check_group("idftm+rbm cascade", [&] { return sum(mul(idftm_rbm_block(x, a, r), w)); }, named, options));
  }

  // Dice loss on random logits.
  {
    const auto logits = probe.random({kNumClasses, cfg.block[0], cfg.block[1], cfg.block[2]}, -2.0, 2.0);
    const auto labels = probe.labels(extents_volume(cfg.block));
    report.groups.push_back(check_group(
        "dice loss", [&] { return softmax_dice_loss(logits, labels); }, {{"dice.logits", logits}}, options));
  }

  // Full network under the training loss.
  {
    Brainformer<double> model(cfg, options.seed + 4);
    const auto x = probe.random({cfg.channels, cfg.block[0], cfg.block[1], cfg.block[2]});
    const auto labels = probe.labels(extents_volume(cfg.block));
    NamedTensors named{{"network.input", x}};
    for (const auto& p : model.parameters().items()) named.emplace_back(p.name, p.tensor);
    report.groups.push_back(
        check_group("network", [&] { return softmax_dice_loss(model.forward(x), labels); }, named, options));
  }
  return report;
}

}  // namespace brainformer
