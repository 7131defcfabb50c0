#include "nrsteg/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

#include "nrsteg/checkpoint.hpp"
#include "nrsteg/error.hpp"
#include "nrsteg/parallel.hpp"
#include "nrsteg/rng.hpp"

namespace fs = std::filesystem;

namespace nrsteg {

void TrainConfig::validate() const {
  opt.validate();
  if (epochs < 1) throw ValidationError("epochs must be positive");
  if (batch_size < 2) throw ValidationError("batch_size must be at least 2");
  if (checkpoint_every < 0) throw ValidationError("checkpoint_every must be nonnegative");
  if (threads < 1) throw ValidationError("threads must be positive");
}

LabelledFrames load_records(const DatasetManifest& m, const std::vector<ManifestRecord>& records, int threads) {
  if (records.empty()) throw ValidationError("empty split");
  LabelledFrames d;
  d.frames = Tensor<float>(int(records.size()), 1, kInputSize, kInputSize);
  d.labels.resize(records.size());
  const Eigen::Index item = d.frames.shape().item();
  parallel_for(int(records.size()), threads, [&](int i) {
    const Tensor<float> t = load_record(m, records[std::size_t(i)]);
    d.frames.values().segment(item * i, item) = t.values();
    d.labels[std::size_t(i)] = records[std::size_t(i)].label;
  });
  return d;
}

LabelledFrames load_split(const DatasetManifest& m, Split split, int threads) {
  const auto records = m.split(split);
  if (records.empty()) throw ValidationError(std::string("manifest has no ") + split_name(split) + " records");
  return load_records(m, records, threads);
}

Tensor<float> gather(const Tensor<float>& all, const std::vector<std::size_t>& idx) {
  Tensor<float> b(int(idx.size()), all.channels(), all.height(), all.width());
  const Eigen::Index item = all.shape().item();
  for (std::size_t i = 0; i < idx.size(); ++i)
    b.values().segment(item * Eigen::Index(i), item) = all.values().segment(item * Eigen::Index(idx[i]), item);
  return b;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, std::uint64_t seed) {
  if (batch_size < 1) throw ValidationError("batch_size must be positive");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  SplitMix64 g(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[std::size_t(g.below(i))]);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < n; b += std::size_t(batch_size))
    batches.emplace_back(order.begin() + long(b), order.begin() + long(std::min(n, b + std::size_t(batch_size))));
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back()[0]);
    batches.pop_back();
  }
  return batches;
}

ValidationResult validate(const Model<float>& m, const LabelledFrames& data, int threads) {
  if (data.size() == 0) throw ValidationError("validate: empty split");
  constexpr std::size_t kChunk = 16;
  ValidationResult r;
  r.probs.resize(Eigen::Index(data.size()), kClasses);
  r.predictions.resize(data.size());
  for (std::size_t b = 0; b < data.size(); b += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(data.size(), b + kChunk); ++i) idx.push_back(i);
    const RowMatrix<float> p = probabilities(infer(m, gather(data.frames, idx), threads));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      r.probs.row(Eigen::Index(idx[i])) = p.row(Eigen::Index(i));
      r.predictions[idx[i]] = argmax_lowest(p.row(Eigen::Index(i)));
    }
  }
  std::array<std::size_t, kClasses> hit{}, count{};
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    ++count[std::size_t(data.labels[i])];
    if (r.predictions[i] == data.labels[i]) {
      ++correct;
      ++hit[std::size_t(data.labels[i])];
    }
  }
  r.accuracy = double(correct) / double(data.size());
  for (int c = 0; c < kClasses; ++c) r.per_class[c] = count[c] ? double(hit[c]) / double(count[c]) : 0.0;
  return r;
}

TrainResult train(const DatasetManifest& m, const TrainConfig& cfg, const fs::path& out,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
  cfg.validate();
  const LabelledFrames train_set = load_split(m, Split::Train, cfg.threads);
  const LabelledFrames val_set = load_split(m, Split::Val, cfg.threads);

  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError(out.string() + ": " + ec.message());
  std::ofstream log(out / "metrics.tsv", std::ios::binary);
  if (!log) throw IoError((out / "metrics.tsv").string() + ": cannot open for writing");
  log << kMetricsColumns << "\n";

  TrainResult result;
  Model<float> model = init_model<float>(derive_seed(cfg.seed, 0x1417));
  OptState<float> state = OptState<float>::fresh(model);
  const std::uint64_t shuffle_seed = derive_seed(cfg.seed, 0x5F1E);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0;
    for (const auto& idx : make_batches(train_set.size(), cfg.batch_size, derive_seed(shuffle_seed, epoch))) {
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(train_set.labels[i]);
      auto lg = loss_and_grad(model, gather(train_set.frames, idx), labels, cfg.threads);
      adadelta_step(model, lg.grads, state, cfg.opt);
      loss_sum += lg.loss * double(idx.size());
    }
    const ValidationResult v = validate(model, val_set, cfg.threads);
    const EpochMetrics em{epoch, loss_sum / double(train_set.size()), v.accuracy,
                          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    result.history.push_back(em);

    char line[128];
    std::snprintf(line, sizeof line, "%d\t%.6f\t%.6f\t%.2f\n", em.epoch, em.train_loss, em.val_accuracy, em.seconds);
    log << line << std::flush;

    if (result.best_epoch < 0 || v.accuracy >= result.best_val_accuracy) {
      result.best = model;
      result.best_epoch = epoch;
      result.best_val_accuracy = v.accuracy;
      save_checkpoint(model, out / "best.nrcn");
    }
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.nrcn", epoch);
      save_checkpoint(model, out / name, &state);
    }
    if (on_epoch) on_epoch(em);
  }
  save_checkpoint(model, out / "final.nrcn", &state);
  result.last = std::move(model);
  return result;
}

}  // namespace nrsteg
