#pragma once

// Seeded mini-batch training with AdaDelta, per-epoch validation and
// best/final checkpoints.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "nrsteg/dataset.hpp"
#include "nrsteg/model.hpp"
#include "nrsteg/optimizer.hpp"

namespace nrsteg {

struct TrainConfig {
  AdaDeltaConfig opt;
  int epochs = 150;
  int batch_size = 20;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs between extra checkpoints; 0 disables
  int threads = 1;

  void validate() const;
};

struct LabelledFrames {
  Tensor<float> frames;  // N x 1 x 224 x 224
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

/// Loads and preprocesses every record of a split; rejects an empty split or
/// an unreadable frame source.
LabelledFrames load_split(const DatasetManifest& m, Split split, int threads = 1);
LabelledFrames load_records(const DatasetManifest& m, const std::vector<ManifestRecord>& records, int threads = 1);

// Items [idx...] of `all` gathered into one batch.
Tensor<float> gather(const Tensor<float>& all, const std::vector<std::size_t>& idx);

/// Seeded shuffle of [0, n) cut into batches of batch_size; the last batch keeps
/// the remainder, and a remainder of one item joins the previous batch.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, std::uint64_t seed);

struct ValidationResult {
  double accuracy = 0;
  std::array<double, kClasses> per_class{};  // recall per true class; 0 for absent classes
  std::vector<int> predictions;
  RowMatrix<float> probs;
};

ValidationResult validate(const Model<float>& m, const LabelledFrames& data, int threads = 1);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;
  double val_accuracy = 0;
  double seconds = 0;
};

struct TrainResult {
  Model<float> best;
  Model<float> last;
  int best_epoch = -1;
  double best_val_accuracy = 0;
  std::vector<EpochMetrics> history;
};

inline constexpr const char* kMetricsColumns = "epoch\ttrain_loss\tval_accuracy\tseconds";

/// Trains a freshly initialized model on the manifest's train split, validating
/// on its val split after every epoch. Writes out/metrics.tsv, out/best.nrcn
/// (highest val accuracy, later epoch on ties), out/final.nrcn (with optimizer
/// state) and out/epoch_NNN.nrcn at the configured cadence.
TrainResult train(const DatasetManifest& m, const TrainConfig& cfg, const std::filesystem::path& out,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

}  // namespace nrsteg
