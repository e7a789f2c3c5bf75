#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "brainformer/adam.hpp"
#include "brainformer/checkpoint.hpp"
#include "brainformer/losses.hpp"
#include "brainformer/manifest.hpp"
#include "brainformer/metrics.hpp"
#include "brainformer/model.hpp"
#include "brainformer/phantom.hpp"
#include "brainformer/volume_io.hpp"

namespace brainformer {

/// A labelled training or evaluation volume, already intensity-normalized.
struct Subject {
  std::string name;
  VolumeBlock volume;
};

/// Checks a volume against the model before any compute happens.
inline void check_subject(const VolumeBlock& v, const ModelConfig& cfg, const std::string& name, bool need_labels) {
  if (v.channels != cfg.channels) {
    throw ConfigError(name + ": volume has " + std::to_string(v.channels) + " channels, model expects " +
                      std::to_string(cfg.channels));
  }
  if (need_labels && !v.has_labels()) throw ConfigError(name + ": volume carries no labels");
  for (int a = 0; a < 3; ++a) {
    if (v.extents[a] < cfg.block[a]) {
      throw ConfigError(name + ": volume " + extents_string(v.extents) + " is smaller than the block " +
                        extents_string(cfg.block));
    }
  }
}

inline std::vector<Subject> load_subjects(const Manifest& manifest, const std::string& split, const ModelConfig& cfg,
                                          bool need_block_fit = true) {
  std::vector<Subject> out;
  for (const auto& e : manifest.split(split)) {
    VolumeBlock v = read_volume(e.path);
    if (need_block_fit) {
      check_subject(v, cfg, e.file, true);
    } else {
      if (v.channels != cfg.channels) {
        throw ConfigError(e.file + ": volume has " + std::to_string(v.channels) + " channels, model expects " +
                          std::to_string(cfg.channels));
      }
      if (!v.has_labels()) throw ConfigError(e.file + ": volume carries no labels");
    }
    out.push_back({e.file, normalize(std::move(v))});
  }
  if (out.empty()) throw ConfigError("manifest has no '" + split + "' entries");
  return out;
}

/// Mean softmax Dice loss over a batch of blocks.
template <Scalar T>
Tensor<T> batch_loss(const Brainformer<T>& model, const std::vector<VolumeBlock>& batch) {
  Tensor<T> total;
  for (const auto& b : batch) {
    const auto loss = softmax_dice_loss(model.forward(intensities_tensor<T>(b)), b.labels);
    total = total.defined() ? add(total, loss) : loss;
  }
  return scale(total, T(1) / static_cast<T>(batch.size()));
}

inline std::string format_trace_line(std::size_t step, double loss, double wall_ms) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%zu %.17g %.3f", step, loss, wall_ms);
  return buf;
}

/// Owns the model, optimizer and data RNG of one training run.
template <Scalar T>
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<Subject> subjects)
      : cfg_(std::move(cfg)), model_((cfg_.validate(), cfg_.model), cfg_.seed),
        adam_(model_.parameters(), AdamConfig::from(cfg_)), subjects_(std::move(subjects)) {
    if (subjects_.empty()) throw ConfigError("training set is empty");
    for (const auto& s : subjects_) check_subject(s.volume, cfg_.model, s.name, true);
    std::seed_seq seq{cfg_.seed, std::uint64_t{0x6461746172ull}};
    data_rng_.seed(seq);
  }

  /// Continues from a saved state; the model layout must match.
  void resume(const Checkpoint<T>& c) {
    restore_checkpoint(c, model_, &adam_);
    std::istringstream in(c.rng_state);
    in >> data_rng_;
    if (!in) throw IoError("checkpoint RNG state is unreadable");
  }

  /// Draws the next batch of crops in a fixed order from the data RNG.
  std::vector<VolumeBlock> next_batch() {
    std::vector<VolumeBlock> batch;
    for (std::size_t i = 0; i < cfg_.batch_size; ++i) {
      const auto s = std::uniform_int_distribution<std::size_t>(0, subjects_.size() - 1)(data_rng_);
      const std::uint64_t crop_seed = data_rng_();
      batch.push_back(crop_block(subjects_[s].volume, cfg_.model.block, crop_seed, cfg_.foreground_prob));
    }
    return batch;
  }

  /// One optimizer step; returns the batch loss before the update.
  double train_step() {
    const auto batch = next_batch();
    model_.parameters().zero_grad();
    double value;
    {
      Tape<T> tape;
      const auto loss = batch_loss(model_, batch);
      value = static_cast<double>(loss.item());
      tape.backward(loss);
    }
    adam_.step();
    model_.parameters().zero_grad();
    return value;
  }

  std::size_t step() const { return adam_.steps(); }
  std::string rng_state() const {
    std::ostringstream out;
    out << data_rng_;
    return out.str();
  }
  Checkpoint<T> checkpoint() const { return capture_checkpoint(model_, adam_, cfg_, rng_state()); }

  Brainformer<T>& model() { return model_; }
  const Brainformer<T>& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  TrainConfig cfg_;
  Brainformer<T> model_;
  Adam<T> adam_;
  std::vector<Subject> subjects_;
  std::mt19937_64 data_rng_;
};

inline std::string checkpoint_name(std::size_t step) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "checkpoint-%06zu.brck", step);
  return buf;
}

/// Trains until `until_step`, writing one trace line per step. When `out_dir`
/// is non-empty, checkpoints go there every `checkpoint_every` steps and
/// `final.brck` is written at the end.
template <Scalar T>
void run_training(Trainer<T>& trainer, std::size_t until_step, std::ostream* trace, const std::string& out_dir) {
  const std::size_t every = trainer.config().checkpoint_every;
  while (trainer.step() < until_step) {
    const auto start = std::chrono::steady_clock::now();
    const double loss = trainer.train_step();
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (trace) *trace << format_trace_line(trainer.step(), loss, ms) << '\n' << std::flush;
    if (!out_dir.empty() && every > 0 && trainer.step() % every == 0) {
      write_checkpoint((std::filesystem::path(out_dir) / checkpoint_name(trainer.step())).string(),
                       trainer.checkpoint());
    }
  }
  if (!out_dir.empty()) write_checkpoint((std::filesystem::path(out_dir) / "final.brck").string(), trainer.checkpoint());
}

/// Class with the largest logit per voxel; ties go to the lower class.
template <Scalar T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& logits) {
  if (logits.rank() != 4 || logits.extent(0) != kNumClasses) {
    throw DimensionError("argmax_labels: expected 4×H×W×D logits, got " + shape_string(logits.shape()));
  }
  const std::size_t n = logits.numel() / kNumClasses;
  const auto d = logits.data();
  std::vector<std::uint8_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < kNumClasses; ++c)
      if (d[c * n + i] > d[best * n + i]) best = c;
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

/// Zero padding per axis up to the next block multiple, split as evenly as
/// possible with the extra voxel on the high side.
inline Extents padded_extents(const Extents& volume, const Extents& block) {
  Extents out;
  for (int a = 0; a < 3; ++a) out[a] = (volume[a] + block[a] - 1) / block[a] * block[a];
  return out;
}

inline VolumeBlock center_pad(const VolumeBlock& v, const Extents& target) {
  VolumeBlock out;
  out.channels = v.channels;
  out.extents = target;
  out.dtype = v.dtype;
  out.intensities.assign(v.channels * extents_volume(target), 0.0);
  Extents lo;
  for (int a = 0; a < 3; ++a) lo[a] = (target[a] - v.extents[a]) / 2;
  for (std::size_t c = 0; c < v.channels; ++c)
    for (std::size_t x = 0; x < v.extents[0]; ++x)
      for (std::size_t y = 0; y < v.extents[1]; ++y)
        for (std::size_t z = 0; z < v.extents[2]; ++z)
          out.at(c, x + lo[0], y + lo[1], z + lo[2]) = v.at(c, x, y, z);
  return out;
}

/// Segments a whole (normalized) volume: center-pad to block multiples, run
/// non-overlapping blocks without recording, take the argmax, crop back.
template <Scalar T>
std::vector<std::uint8_t> predict_labels(const Brainformer<T>& model, const VolumeBlock& v) {
  const auto& cfg = model.config();
  if (v.channels != cfg.channels) {
    throw ConfigError("predict: volume has " + std::to_string(v.channels) + " channels, model expects " +
                      std::to_string(cfg.channels));
  }
  const Extents full = padded_extents(v.extents, cfg.block);
  const VolumeBlock padded = center_pad(v, full);
  std::vector<std::uint8_t> labels(extents_volume(full));
  typename Tape<T>::Suspend no_record;
  for (std::size_t ox = 0; ox < full[0]; ox += cfg.block[0])
    for (std::size_t oy = 0; oy < full[1]; oy += cfg.block[1])
      for (std::size_t oz = 0; oz < full[2]; oz += cfg.block[2]) {
        const auto block = extract_block(padded, {ox, oy, oz}, cfg.block);
        const auto pred = argmax_labels(model.forward(intensities_tensor<T>(block)));
        const auto [bh, bw, bd] = cfg.block;
        for (std::size_t x = 0; x < bh; ++x)
          for (std::size_t y = 0; y < bw; ++y)
            std::copy_n(pred.begin() + (x * bw + y) * bd, bd,
                        labels.begin() + ((ox + x) * full[1] + oy + y) * full[2] + oz);
      }
  Extents lo;
  for (int a = 0; a < 3; ++a) lo[a] = (full[a] - v.extents[a]) / 2;
  std::vector<std::uint8_t> out(v.voxels());
  for (std::size_t x = 0; x < v.extents[0]; ++x)
    for (std::size_t y = 0; y < v.extents[1]; ++y)
      std::copy_n(labels.begin() + ((x + lo[0]) * full[1] + y + lo[1]) * full[2] + lo[2], v.extents[2],
                  out.begin() + (x * v.extents[1] + y) * v.extents[2]);
  return out;
}

struct SubjectReport {
  std::string name;
  MetricReport report;
};

struct Evaluation {
  std::vector<SubjectReport> subjects;  // manifest order
  MetricReport mean;
};

template <Scalar T>
Evaluation evaluate(const Brainformer<T>& model, const std::vector<Subject>& subjects) {
  Evaluation out;
  std::vector<MetricReport> reports;
  for (const auto& s : subjects) {
    if (!s.volume.has_labels()) throw ConfigError(s.name + ": evaluation needs labels");
    const auto pred = predict_labels(model, s.volume);
    reports.push_back(evaluate_labels(pred, s.volume.labels, s.volume.extents));
    out.subjects.push_back({s.name, reports.back()});
  }
  out.mean = mean_report(reports);
  return out;
}

}  // namespace brainformer
