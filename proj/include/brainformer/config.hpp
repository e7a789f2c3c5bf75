#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "brainformer/errors.hpp"
#include "brainformer/volume.hpp"

namespace brainformer {

/// Encoder attention: fusion-head (FHSA) or plain multi-head (MHSA baseline).
enum class AttentionMode { fusion, standard };

/// Decoder cascade per stage.
enum class CascadeMode { rbm_rbm, idftm_idftm, idftm_rbm };

enum class Precision { f64, f32 };

inline std::string to_string(AttentionMode m) { return m == AttentionMode::fusion ? "fhsa" : "mhsa"; }
inline std::string to_string(CascadeMode m) {
  switch (m) {
    case CascadeMode::rbm_rbm: return "rbm+rbm";
    case CascadeMode::idftm_idftm: return "idftm+idftm";
    case CascadeMode::idftm_rbm: return "idftm+rbm";
  }
  return "?";
}
inline std::string to_string(Precision p) { return p == Precision::f64 ? "double" : "float"; }

struct ModelConfig {
  std::size_t channels = 4;
  Extents block{16, 16, 16};
  std::size_t patch = 4;          // p
  std::size_t embed_dim = 32;     // k
  std::size_t layers = 2;         // L
  std::size_t taps = 2;           // n
  std::size_t heads = 2;          // n_h
  std::size_t idftm_heads = 2;    // n_h'
  std::size_t base_channels = 16; // ρ
  std::size_t qkv_kernel = 3;     // IDFTM q/k/v kernel edge
  std::size_t mlp_ratio = 4;
  AttentionMode attention = AttentionMode::fusion;
  CascadeMode cascade = CascadeMode::idftm_rbm;
  bool scaled_idftm = false;
  double init_std = 0.02;

  Extents grid() const { return {block[0] / patch, block[1] / patch, block[2] / patch}; }
  std::size_t tokens() const { return extents_volume(grid()); }

  /// C_b = ρ / 2^(n−b), b = 1..n.
  std::size_t stage_channels(std::size_t b) const { return base_channels >> (taps - b); }

  /// Spatial extents at which scale b is decoded: grid · 2^(n−b).
  Extents stage_extents(std::size_t b) const {
    const Extents g = grid();
    const std::size_t f = std::size_t{1} << (taps - b);
    return {g[0] * f, g[1] * f, g[2] * f};
  }

  /// Upsampling factor of the final restoration stage, p / 2^(n−1).
  std::size_t restore_factor() const { return patch >> (taps - 1); }

  /// Rejects every divisibility or range violation before any compute.
  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (channels == 0) fail("channels must be positive");
    if (patch == 0) fail("patch must be positive");
    for (int a = 0; a < 3; ++a) {
      if (block[a] == 0 || block[a] % patch != 0) {
        fail("block extent " + std::to_string(block[a]) + " not divisible by patch " + std::to_string(patch));
      }
    }
    if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
      fail("embed_dim " + std::to_string(embed_dim) + " not divisible by heads " + std::to_string(heads));
    }
    if (taps == 0 || layers == 0 || layers % taps != 0) {
      fail("layers " + std::to_string(layers) + " not divisible by taps " + std::to_string(taps));
    }
    if (taps > 16) fail("taps too large");
    const std::size_t up = std::size_t{1} << (taps - 1);
    if (base_channels % up != 0) {
      fail("base_channels " + std::to_string(base_channels) + " not divisible by 2^(taps-1) = " + std::to_string(up));
    }
    if (patch % up != 0) {
      fail("patch " + std::to_string(patch) + " must be a multiple of 2^(taps-1) = " + std::to_string(up) +
           " so the decoder restores the block extent");
    }
    if (idftm_heads == 0) fail("idftm_heads must be positive");
    for (std::size_t b = 1; b <= taps; ++b) {
      if (stage_channels(b) % idftm_heads != 0) {
        fail("stage " + std::to_string(b) + " channels " + std::to_string(stage_channels(b)) +
             " not divisible by idftm_heads " + std::to_string(idftm_heads));
      }
    }
    if (qkv_kernel == 0 || qkv_kernel % 2 == 0) fail("qkv_kernel must be odd");
    if (mlp_ratio == 0) fail("mlp_ratio must be positive");
  }
};

struct TrainConfig {
  ModelConfig model;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  bool decoupled_decay = false;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 2;
  std::size_t steps = 100;
  std::uint64_t seed = 1;
  Precision precision = Precision::f64;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  double foreground_prob = 0.6;      // crop bias toward tumor voxels

  void validate() const {
    model.validate();
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(foreground_prob >= 0.0 && foreground_prob <= 1.0)) throw ConfigError("foreground_prob must be in [0,1]");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class Int>
Int parse_integer(const std::string& key, const std::string& value) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + value + "'");
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

inline Extents parse_extents(const std::string& key, const std::string& value) {
  Extents e{};
  std::stringstream in(value);
  std::string part;
  int n = 0;
  while (std::getline(in, part, 'x')) {
    if (n == 3) break;
    e[n++] = parse_integer<std::size_t>(key, part);
  }
  if (n == 1) e[1] = e[2] = e[0];
  else if (n != 3) throw ConfigError("config key '" + key + "': expected HxWxD, got '" + value + "'");
  return e;
}

}  // namespace detail

/// Applies one key=value setting; unknown keys are configuration errors.
inline void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value) {
  using namespace detail;
  ModelConfig& m = cfg.model;
  if (key == "channels") m.channels = parse_integer<std::size_t>(key, value);
  else if (key == "block") m.block = parse_extents(key, value);
  else if (key == "patch") m.patch = parse_integer<std::size_t>(key, value);
  else if (key == "embed_dim") m.embed_dim = parse_integer<std::size_t>(key, value);
  else if (key == "layers") m.layers = parse_integer<std::size_t>(key, value);
  else if (key == "taps") m.taps = parse_integer<std::size_t>(key, value);
  else if (key == "heads") m.heads = parse_integer<std::size_t>(key, value);
  else if (key == "idftm_heads") m.idftm_heads = parse_integer<std::size_t>(key, value);
  else if (key == "base_channels") m.base_channels = parse_integer<std::size_t>(key, value);
  else if (key == "qkv_kernel") m.qkv_kernel = parse_integer<std::size_t>(key, value);
  else if (key == "mlp_ratio") m.mlp_ratio = parse_integer<std::size_t>(key, value);
  else if (key == "scaled_idftm") m.scaled_idftm = parse_bool(key, value);
  else if (key == "init_std") m.init_std = parse_double(key, value);
  else if (key == "attention") {
    if (value == "fhsa") m.attention = AttentionMode::fusion;
    else if (value == "mhsa") m.attention = AttentionMode::standard;
    else throw ConfigError("attention must be fhsa or mhsa, got '" + value + "'");
  } else if (key == "cascade") {
    if (value == "rbm+rbm") m.cascade = CascadeMode::rbm_rbm;
    else if (value == "idftm+idftm") m.cascade = CascadeMode::idftm_idftm;
    else if (value == "idftm+rbm") m.cascade = CascadeMode::idftm_rbm;
    else throw ConfigError("cascade must be rbm+rbm, idftm+idftm or idftm+rbm, got '" + value + "'");
  } else if (key == "learning_rate") cfg.learning_rate = parse_double(key, value);
  else if (key == "weight_decay") cfg.weight_decay = parse_double(key, value);
  else if (key == "decoupled_decay") cfg.decoupled_decay = parse_bool(key, value);
  else if (key == "beta1") cfg.beta1 = parse_double(key, value);
  else if (key == "beta2") cfg.beta2 = parse_double(key, value);
  else if (key == "adam_eps") cfg.adam_eps = parse_double(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_integer<std::size_t>(key, value);
  else if (key == "steps") cfg.steps = parse_integer<std::size_t>(key, value);
  else if (key == "seed") cfg.seed = parse_integer<std::uint64_t>(key, value);
  else if (key == "checkpoint_every") cfg.checkpoint_every = parse_integer<std::size_t>(key, value);
  else if (key == "foreground_prob") cfg.foreground_prob = parse_double(key, value);
  else if (key == "precision") {
    if (value == "double") cfg.precision = Precision::f64;
    else if (value == "float") cfg.precision = Precision::f32;
    else throw ConfigError("precision must be double or float, got '" + value + "'");
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

/// Parses "key=value" lines; '#' starts a comment.
inline void apply_config_text(TrainConfig& cfg, std::string_view text) {
  std::stringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
    }
    apply_setting(cfg, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
}

inline TrainConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  TrainConfig cfg;
  apply_config_text(cfg, buf.str());
  return cfg;
}

/// Canonical key=value rendering of every setting (also the echo printed at startup).
inline std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& cfg) {
  auto num = [](double v) {
    std::ostringstream o;
    o.precision(17);
    o << v;
    return o.str();
  };
  const ModelConfig& m = cfg.model;
  return {
      {"channels", std::to_string(m.channels)},
      {"block", extents_string(m.block)},
      {"patch", std::to_string(m.patch)},
      {"embed_dim", std::to_string(m.embed_dim)},
      {"layers", std::to_string(m.layers)},
      {"taps", std::to_string(m.taps)},
      {"heads", std::to_string(m.heads)},
      {"idftm_heads", std::to_string(m.idftm_heads)},
      {"base_channels", std::to_string(m.base_channels)},
      {"qkv_kernel", std::to_string(m.qkv_kernel)},
      {"mlp_ratio", std::to_string(m.mlp_ratio)},
      {"attention", to_string(m.attention)},
      {"cascade", to_string(m.cascade)},
      {"scaled_idftm", m.scaled_idftm ? "true" : "false"},
      {"init_std", num(m.init_std)},
      {"learning_rate", num(cfg.learning_rate)},
      {"weight_decay", num(cfg.weight_decay)},
      {"decoupled_decay", cfg.decoupled_decay ? "true" : "false"},
      {"beta1", num(cfg.beta1)},
      {"beta2", num(cfg.beta2)},
      {"adam_eps", num(cfg.adam_eps)},
      {"batch_size", std::to_string(cfg.batch_size)},
      {"steps", std::to_string(cfg.steps)},
      {"seed", std::to_string(cfg.seed)},
      {"precision", to_string(cfg.precision)},
      {"checkpoint_every", std::to_string(cfg.checkpoint_every)},
      {"foreground_prob", num(cfg.foreground_prob)},
  };
}

inline std::string config_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + "=" + v + "\n";
  return out;
}

/// FNV-1a over the canonical model settings; identifies parameter layouts.
inline std::uint64_t model_hash(const ModelConfig& model) {
  TrainConfig probe;
  probe.model = model;
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [k, v] : config_entries(probe)) {
    if (k == "learning_rate") break;  // model keys come first
    for (const char ch : k + "=" + v + ";") {
      h ^= static_cast<unsigned char>(ch);
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace brainformer
