#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "nrsteg/error.hpp"
#include "nrsteg/grad_check.hpp"
#include "nrsteg/numerics.hpp"
#include "support.hpp"

using namespace nrsteg;
using nrsteg::test::naive_conv;
using nrsteg::test::naive_pool;
using nrsteg::test::randomize;

TEST_CASE("conv2d: zero-sum kernel kills a constant input") {
  Tensor<double> x(1, 1, 6, 7, 7.0);
  auto p = ConvParams<double>::zeros(1, 1, 3, 3);
  p.kernels << 1, -2, 1, 0, 3, 0, -1, -1, -1;
  const auto y = conv2d(x, p);
  CHECK(y.height() == 4);
  CHECK(y.width() == 5);
  CHECK(y.values().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("conv2d: row [3,5,9] with kernel [-1,1] gives [2,4]") {
  Tensor<double> x(1, 1, 1, 3);
  x.values() << 3, 5, 9;
  auto p = ConvParams<double>::zeros(1, 1, 1, 2);
  p.kernels << -1, 1;
  const auto y = conv2d(x, p);
  const auto ref = naive_conv(x, p);
  REQUIRE(y.width() == 2);
  CHECK(y(0, 0, 0, 0) == 2.0);
  CHECK(y(0, 0, 0, 1) == 4.0);
  CHECK(y.values() == ref.values());
}

TEST_CASE("conv2d: centred 5x5 delta crops two pixels per border") {
  std::mt19937_64 gen(3);
  Tensor<double> x(2, 1, 11, 9);
  randomize(x, gen);
  auto p = ConvParams<double>::zeros(1, 1, 5, 5);
  p.at(0, 0, 2, 2) = 1.0;
  const auto y = conv2d(x, p);
  REQUIRE(y.height() == 7);
  REQUIRE(y.width() == 5);
  for (int n = 0; n < 2; ++n)
    for (int r = 0; r < 7; ++r)
      for (int c = 0; c < 5; ++c) CHECK(y(n, 0, r, c) == x(n, 0, r + 2, c + 2));
}

TEST_CASE("conv2d matches the nested-loop oracle on random small shapes") {
  std::mt19937_64 gen(11);
  std::uniform_int_distribution<int> dim(3, 16), ch(1, 4), k(1, 3);
  for (int trial = 0; trial < 40; ++trial) {
    const int kh = 2 * k(gen) - 1, kw = 2 * k(gen) - 1;
    const bool same = trial % 2 == 0;
    const int stride = same ? 1 : 1 + trial % 3;
    auto p = ConvParams<double>::zeros(ch(gen), ch(gen), kh, kw, stride, same ? Padding::Same : Padding::Valid);
    Tensor<double> kt(1, 1, 1, int(p.kernels.size()));
    randomize(kt, gen);
    p.kernels = kt.values();
    Tensor<double> x(1 + trial % 2, p.in_channels, std::max(dim(gen), kh), std::max(dim(gen), kw));
    randomize(x, gen);
    const auto y = conv2d(x, p);
    const auto ref = naive_conv(x, p);
    REQUIRE(y.shape() == ref.shape());
    CHECK((y.values() - ref.values()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(y.height() == output_extent(x.height(), kh, stride, p.pad_h()));
  }
}

TEST_CASE("conv2d is linear in its input") {
  std::mt19937_64 gen(5);
  auto p = ConvParams<double>::zeros(3, 2, 3, 3, 1, Padding::Same);
  Tensor<double> kt(1, 1, 1, int(p.kernels.size()));
  randomize(kt, gen);
  p.kernels = kt.values();
  Tensor<double> a(2, 2, 9, 8), b(2, 2, 9, 8), mix(2, 2, 9, 8);
  randomize(a, gen);
  randomize(b, gen);
  mix.values() = 1.5 * a.values() - 0.25 * b.values();
  const Vector<double> lhs = conv2d(mix, p).values();
  const Vector<double> rhs = 1.5 * conv2d(a, p).values() - 0.25 * conv2d(b, p).values();
  CHECK((lhs - rhs).norm() / rhs.norm() < 1e-9);
}

TEST_CASE("conv2d rejects bad configurations") {
  Tensor<double> x(1, 2, 4, 4);
  CHECK_THROWS_AS(conv2d(x, ConvParams<double>::zeros(1, 3, 3, 3)), ValidationError);
  CHECK_THROWS_AS(conv2d(x, ConvParams<double>::zeros(1, 2, 5, 3)), ValidationError);
  CHECK_THROWS_AS(ConvParams<double>::zeros(1, 2, 2, 2, 1, Padding::Same), ValidationError);
  CHECK_THROWS_AS(ConvParams<double>::zeros(1, 2, 3, 3, 0), ValidationError);
  try {
    conv2d(x, ConvParams<double>::zeros(1, 2, 3, 5));
    FAIL("expected rejection");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("width") != std::string::npos);
  }
}

TEST_CASE("conv2d output is independent of the thread count") {
  std::mt19937_64 gen(8);
  auto p = ConvParams<float>::zeros(4, 3, 3, 3);
  Tensor<float> kt(1, 1, 1, int(p.kernels.size()));
  randomize(kt, gen);
  p.kernels = kt.values();
  Tensor<float> x(5, 3, 20, 20);
  randomize(x, gen);
  const auto y1 = conv2d(x, p, 1), y3 = conv2d(x, p, 3);
  CHECK(y1.values() == y3.values());
  Tensor<float> gy(y1.shape());
  randomize(gy, gen);
  const auto g1 = conv2d_backward(x, p, gy, true, 1), g3 = conv2d_backward(x, p, gy, true, 3);
  CHECK(g1.kernels == g3.kernels);
  CHECK(g1.input.values() == g3.input.values());
}

TEST_CASE("avg_pool2d values and shapes") {
  Tensor<double> x(1, 1, 2, 2);
  x.values() << 1, 2, 3, 4;
  CHECK(avg_pool2d(x, {2, 2, 2})(0, 0, 0, 0) == 2.5);

  Tensor<double> c(1, 2, 9, 7, 4.25);
  const auto pc = avg_pool2d(c, {3, 3, 2});
  CHECK(pc.height() == 4);
  CHECK(pc.width() == 3);
  CHECK((pc.values().array() == 4.25).all());

  Tensor<double> big(1, 1, 214, 214);
  std::mt19937_64 gen(2);
  randomize(big, gen);
  const auto pb = avg_pool2d(big, {2, 2, 2});
  CHECK(pb.height() == 107);
  CHECK(pb.width() == 107);
  CHECK((pb.values() - naive_pool(big, {2, 2, 2}).values()).cwiseAbs().maxCoeff() < 1e-12);

  for (int n : {53, 26, 107}) {
    Tensor<double> t(1, 1, n, n + 1);
    randomize(t, gen);
    const auto pt = avg_pool2d(t, {3, 3, 2});
    CHECK((pt.values() - naive_pool(t, {3, 3, 2}).values()).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(avg_pool2d(Tensor<double>(1, 1, 2, 5), {3, 3, 2}), ValidationError);
}

TEST_CASE("batch_norm train: {1,3} normalizes to {-1,+1}") {
  Tensor<double> x(2, 1, 1, 1);
  x.values() << 1, 3;
  auto p = BatchNormParams<double>::identity(1);
  const auto y = batch_norm_train(x, p);
  const double expect = 1.0 / std::sqrt(1.0 + p.eps);
  CHECK(y(0, 0, 0, 0) == doctest::Approx(-expect).epsilon(1e-12));
  CHECK(y(1, 0, 0, 0) == doctest::Approx(expect).epsilon(1e-12));
  // running stats: momentum 0.1, unbiased variance (2 samples, var 1 -> 2)
  CHECK(p.running_mean[0] == doctest::Approx(0.1 * 2.0));
  CHECK(p.running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 2.0));
}

TEST_CASE("batch_norm train: per-channel batch moments") {
  std::mt19937_64 gen(4);
  Tensor<double> x(3, 4, 6, 5);
  randomize(x, gen, 30.0);
  auto p = BatchNormParams<double>::identity(4);
  const auto y = batch_norm_train(x, p);
  for (int c = 0; c < 4; ++c) {
    double s = 0, sq = 0, raw = 0, raw_sq = 0;
    const double count = 3 * 30;
    for (int n = 0; n < 3; ++n)
      for (int i = 0; i < 30; ++i) {
        const double v = y.item(n)(c, i);
        s += v;
        sq += v * v;
        raw += x.item(n)(c, i);
      }
    for (int n = 0; n < 3; ++n)
      for (int i = 0; i < 30; ++i) raw_sq += std::pow(x.item(n)(c, i) - raw / count, 2);
    const double var_in = raw_sq / count;
    CHECK(std::abs(s / count) < 1e-6);
    // normalized variance is var / (var + eps)
    CHECK(std::abs(sq / count - var_in / (var_in + p.eps)) < 1e-9);
    CHECK(std::abs(sq / count - 1.0) < 1e-6);
  }
}

TEST_CASE("batch_norm gamma zero and eval identity") {
  std::mt19937_64 gen(6);
  Tensor<double> x(2, 3, 4, 4);
  randomize(x, gen);
  auto p = BatchNormParams<double>::identity(3);
  p.gamma.setZero();
  p.beta << 0.5, -1, 2;
  const auto y = batch_norm_train(x, p);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) CHECK((y.item(n).row(c).array() == p.beta[c]).all());

  auto q = BatchNormParams<double>::identity(3);
  const auto e = batch_norm_eval(x, q);
  CHECK((e.values() - x.values()).cwiseAbs().maxCoeff() < 1e-5 * x.values().cwiseAbs().maxCoeff());
  CHECK_THROWS_AS(batch_norm_eval(x, BatchNormParams<double>::identity(2)), ValidationError);
}

TEST_CASE("relu and ptlu") {
  Tensor<double> r(1, 1, 1, 3);
  r.values() << -1, 0, 2;
  const auto rr = activate(r, Activation::Relu);
  CHECK(rr(0, 0, 0, 0) == 0);
  CHECK(rr(0, 0, 0, 1) == 0);
  CHECK(rr(0, 0, 0, 2) == 2);

  Tensor<double> t(1, 1, 1, 3);
  t.values() << 5, -2, -7;
  Vector<double> th = Vector<double>::Constant(1, 3.0);
  const auto pt = activate(t, Activation::Ptlu, &th);
  CHECK(pt(0, 0, 0, 0) == 3);
  CHECK(pt(0, 0, 0, 1) == -2);
  CHECK(pt(0, 0, 0, 2) == -3);

  Vector<double> wide = Vector<double>::Constant(1, 1e300);
  CHECK(activate(t, Activation::Ptlu, &wide).values() == t.values());
  Vector<double> bad = Vector<double>::Constant(1, 0.0);
  CHECK_THROWS_AS(activate(t, Activation::Ptlu, &bad), ValidationError);
  CHECK_THROWS_AS(activate(t, Activation::Ptlu), ValidationError);
}

TEST_CASE("linear layer") {
  auto p = LinearParams<double>::zeros(4, 4);
  p.matrix().setIdentity();
  Vector<double> v(4);
  v << 1, -2, 3, 0.5;
  CHECK(linear(v, p) == v);

  auto z = LinearParams<double>::zeros(3, 144);
  z.bias << 1, 2, 3;
  const Vector<double> f = Vector<double>::LinSpaced(144, -1, 1);
  const auto out = linear(f, z);
  CHECK(out.size() == 3);
  CHECK(out == z.bias);
  CHECK_THROWS_AS(linear(Vector<double>(143), z), ValidationError);
}

TEST_CASE("softmax cross-entropy") {
  Vector<double> zero = Vector<double>::Zero(3);
  for (int label = 0; label < 3; ++label) {
    const auto s = softmax_cross_entropy(zero, label);
    CHECK(s.loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(s.probs[label] == doctest::Approx(1.0 / 3));
  }
  Vector<double> ten(3);
  ten << 10, 0, 0;
  const double oracle = std::log1p(2 * std::exp(-10.0));
  CHECK(softmax_cross_entropy(ten, 0).loss == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(oracle == doctest::Approx(9.079e-5).epsilon(1e-3));

  Vector<double> shifted = ten.array() + 123.0;
  CHECK(std::abs(softmax_cross_entropy(shifted, 1).loss - softmax_cross_entropy(ten, 1).loss) < 1e-12);
  CHECK((softmax_cross_entropy(shifted, 1).probs - softmax_cross_entropy(ten, 1).probs).cwiseAbs().maxCoeff() < 1e-12);

  Vector<double> huge(3);
  huge << 1e4, -1e4, 5e3;
  const auto h = softmax_cross_entropy(huge, 1);
  CHECK(std::isfinite(h.loss));
  CHECK(std::abs(h.probs.sum() - 1.0) < 1e-9);
  CHECK((h.probs.array() >= 0).all());
  CHECK((h.probs.array() <= 1).all());

  CHECK_THROWS_AS(softmax_cross_entropy(zero, 3), ValidationError);
  CHECK_THROWS_AS(softmax_cross_entropy(zero, -1), ValidationError);
}

TEST_CASE("gradient_error falls back to absolute error near zero") {
  CHECK(gradient_error(0.0, 0.0) == 0.0);
  CHECK(gradient_error(1e-10, -1e-10) == doctest::Approx(2e-10));
  CHECK(gradient_error(1.0, 1.1) == doctest::Approx(0.1 / 1.1));

  double v = 0.3;
  std::vector<Probe> probes{{"v", &v, 0.0}};
  const auto r = grad_check([] { return 2.0; }, probes);
  CHECK(r.checked == 1);
  CHECK(r.max_error < 1e-8);
}

TEST_CASE("grad_check detects a kink") {
  double v = 0.0;
  std::vector<Probe> probes{{"v", &v, 0.0}};
  const auto r = grad_check([&] { return std::abs(v); }, probes);
  CHECK(r.kinks == 1);
  CHECK(r.checked == 0);
}

TEST_CASE("linear gradient at a random point is accurate to 1e-6") {
  GradCheckReport all;
  for (std::uint64_t seed = 1; all.checked < 100; ++seed) all.merge(grad_check_op(CheckedOp::Linear, seed));
  CHECK(all.max_error < 1e-6);
}

TEST_CASE("every op passes finite differences over at least 100 points") {
  for (auto op : {CheckedOp::Conv2d, CheckedOp::AvgPool2d, CheckedOp::BatchNormTrain, CheckedOp::BatchNormEval,
                  CheckedOp::Relu, CheckedOp::Ptlu, CheckedOp::Linear, CheckedOp::SoftmaxCrossEntropy}) {
    GradCheckReport all;
    for (std::uint64_t seed = 1; all.checked < 100; ++seed) all.merge(grad_check_op(op, seed));
    INFO(op_name(op), ": ", all.worst);
    CHECK(all.max_error < 1e-4);
    CHECK(all.checked >= 100);
  }
}
