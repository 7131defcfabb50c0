#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "nrsteg/checkpoint.hpp"
#include "nrsteg/optimizer.hpp"
#include "nrsteg/trainer.hpp"
#include "support.hpp"

using namespace nrsteg;
using nrsteg::test::ScratchDir;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Closed form of one step from fresh state: -lr * sqrt(eps) / sqrt((1 - rho) g^2 + eps) * g.
double first_step(double g, const AdaDeltaConfig& c) {
  return -c.lr * std::sqrt(c.eps) / std::sqrt((1 - c.rho) * g * g + c.eps) * g;
}

Tensor<float> random_batch(int n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  Tensor<float> x(n, 1, kInputSize, kInputSize);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& v : x.values()) v = float(u(gen));
  return x;
}

}  // namespace

TEST_CASE("adadelta first step matches the closed form") {
  const AdaDeltaConfig cfg;
  CHECK(cfg.lr == 0.4);
  CHECK(cfg.rho == 0.95);
  CHECK(cfg.eps == 1e-8);
  CHECK(first_step(1.0, cfg) == doctest::Approx(-1.7889e-4).epsilon(1e-4));

  auto m = init_model<double>(0);
  auto g = zeros_like(m);
  auto st = OptState<double>::fresh(m);
  g.fc.bias.setOnes();
  const double before = m.fc.bias[1];
  adadelta_step(m, g, st, cfg);
  CHECK(std::abs((m.fc.bias[1] - before) - first_step(1.0, cfg)) < 1e-12);
  // -1.7889e-4 is the closed form -1.78885e-4 rounded to five significant digits
  CHECK(std::abs((m.fc.bias[1] - before) - -1.7889e-4) < 5e-9);
  CHECK(st.square_avg.fc.bias[0] == doctest::Approx(0.05));
  CHECK(st.delta_avg.fc.bias[0] == doctest::Approx(0.05 * first_step(1.0, cfg) * first_step(1.0, cfg) / (0.4 * 0.4)));
}

TEST_CASE("adadelta decay touches weights only, buffers never move") {
  AdaDeltaConfig cfg;
  auto m = init_model<double>(1);
  const auto start = m;
  auto g = zeros_like(m);
  auto st = OptState<double>::fresh(m);
  adadelta_step(m, g, st, cfg);
  // zero gradient: weights move by their decay term, everything else is fixed
  const double w = start.fc.weight[0];
  CHECK(std::abs((m.fc.weight[0] - w) - first_step(cfg.weight_decay * w, cfg)) < 1e-15);
  CHECK(m.fc.bias == start.fc.bias);
  CHECK(m.bank.thresholds == start.bank.thresholds);
  CHECK(m.conv1.bn.gamma == start.conv1.bn.gamma);

  g.conv1.bn.running_mean.setConstant(5.0);
  adadelta_step(m, g, st, cfg);
  CHECK(m.conv1.bn.running_mean == start.conv1.bn.running_mean);

  g.fc.bias[0] = std::nan("");
  const auto snapshot = encode_checkpoint(m.cast<float>());
  CHECK_THROWS_AS(adadelta_step(m, g, st, cfg), ValidationError);
  CHECK(encode_checkpoint(m.cast<float>()) == snapshot);

  cfg.rho = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("batches cover every index once") {
  const auto b = make_batches(41, 20, 3);
  REQUIRE(b.size() == 2);
  CHECK(b[0].size() == 20);
  CHECK(b[1].size() == 21);
  std::set<std::size_t> seen;
  for (const auto& batch : b) seen.insert(batch.begin(), batch.end());
  CHECK(seen.size() == 41);
  CHECK(make_batches(41, 20, 3) == b);
  CHECK(make_batches(41, 20, 4) != b);
  CHECK(make_batches(45, 20, 0).back().size() == 5);
  CHECK(make_batches(1, 20, 0).size() == 1);
}

TEST_CASE("training loss falls over a few steps") {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto m = init_model<float>(seed);
    auto st = OptState<float>::fresh(m);
    const auto x = random_batch(4, seed + 10);
    const std::vector<int> labels{0, 1, 2, 1};
    AdaDeltaConfig cfg;
    cfg.lr = 1.0;
    double first = 0, last = 0;
    for (int step = 0; step < 5; ++step) {
      const auto lg = loss_and_grad(m, x, labels);
      if (step == 0) first = lg.loss;
      last = lg.loss;
      adadelta_step(m, lg.grads, st, cfg);
    }
    INFO("seed ", seed, " first ", first, " last ", last);
    CHECK(last < first);
  }
}

TEST_CASE("loss_and_grad is independent of the thread count") {
  auto m1 = init_model<float>(4);
  auto m2 = m1;
  const auto x = random_batch(3, 5);
  const auto a = loss_and_grad(m1, x, {0, 1, 2}, 1);
  const auto b = loss_and_grad(m2, x, {0, 1, 2}, 3);
  CHECK(a.loss == b.loss);
  CHECK(encode_checkpoint(a.grads) == encode_checkpoint(b.grads));
  CHECK_THROWS_AS(loss_and_grad(m1, x, {0, 1}), ValidationError);
}

TEST_CASE("validation metrics") {
  const auto m = init_model<float>(6);
  LabelledFrames d;
  d.frames = random_batch(5, 2);
  d.labels = {0, 0, 1, 1, 2};
  const auto v = validate(m, d);
  REQUIRE(v.predictions.size() == 5);
  const auto direct = predict(m, d.frames);
  CHECK(v.predictions == direct);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < 5; ++i) correct += direct[i] == d.labels[i];
  CHECK(v.accuracy == doctest::Approx(double(correct) / 5));
  for (int i = 0; i < 5; ++i) CHECK(std::abs(v.probs.row(i).sum() - 1.0f) < 1e-5f);
}

TEST_CASE("train writes metrics and checkpoints deterministically") {
  ScratchDir dir("train");
  fs::create_directories(dir / "vids");
  for (int i = 0; i < 4; ++i)
    write_y8v(gen_synthetic_video(SyntheticKind::Blocks, 48, 48, 4, 5.0, 30 + i), dir / "vids" / ("v" + std::to_string(i) + ".y8v"));
  DatasetConfig dc;
  dc.k = 15;
  dc.clip_seconds = 1.0;
  dc.segments_train = 1;
  dc.segments_eval = 1;
  const auto m = build_dataset(list_videos(dir / "vids"), dc, dir / "ds");

  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.checkpoint_every = 1;
  std::vector<int> seen;
  const auto r = train(m, tc, dir / "run", [&](const EpochMetrics& e) { seen.push_back(e.epoch); });
  CHECK(seen == std::vector<int>{0, 1});
  REQUIRE(r.history.size() == 2);
  CHECK(fs::exists(dir / "run" / "best.nrcn"));
  CHECK(fs::exists(dir / "run" / "epoch_000.nrcn"));
  CHECK(fs::exists(dir / "run" / "epoch_001.nrcn"));
  const auto full = load_checkpoint_full(dir / "run" / "final.nrcn");
  CHECK(full.optimizer.has_value());
  CHECK(encode_checkpoint(full.model) == encode_checkpoint(r.last));

  std::ifstream metrics(dir / "run" / "metrics.tsv");
  std::string header, row;
  std::getline(metrics, header);
  CHECK(header == kMetricsColumns);
  int rows = 0;
  while (std::getline(metrics, row)) ++rows;
  CHECK(rows == 2);

  const auto r2 = train(m, tc, dir / "run2");
  CHECK(slurp(dir / "run" / "final.nrcn") == slurp(dir / "run2" / "final.nrcn"));
  CHECK(slurp(dir / "run" / "best.nrcn") == slurp(dir / "run2" / "best.nrcn"));
  CHECK(r2.history[1].train_loss == r.history[1].train_loss);

  tc.batch_size = 1;
  CHECK_THROWS_AS(train(m, tc, dir / "run3"), ValidationError);
}
