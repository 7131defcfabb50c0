#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "nrsteg/dataset.hpp"
#include "nrsteg/embedders.hpp"
#include "nrsteg/filter_bank.hpp"
#include "support.hpp"

using namespace nrsteg;

namespace {

double kernel_sum(const ConvParams<double>& p, int k) {
  double s = 0;
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) s += p.at(k, 0, y, x);
  return s;
}

Tensor<double> to_tensor(const Frame& f) {
  Tensor<double> t(1, 1, f.height, f.width);
  for (std::size_t i = 0; i < f.size(); ++i) t.values()[Eigen::Index(i)] = f.pixels[i] / 255.0;
  return t;
}

double high_pass_response(const ConvParams<double>& conv, const Frame& a, const Frame& b) {
  const auto ra = conv2d(to_tensor(a), conv), rb = conv2d(to_tensor(b), conv);
  const Eigen::Index per = ra.shape().plane();
  return (ra.values().head(kHighPassCount * per) - rb.values().head(kHighPassCount * per)).cwiseAbs().mean();
}

}  // namespace

TEST_CASE("bank has 34 single-channel 5x5 kernels") {
  const auto bank = build_srm_bank<double>(1);
  CHECK(bank.conv.out_channels == 34);
  CHECK(bank.conv.in_channels == 1);
  CHECK(bank.conv.kernel_h == 5);
  CHECK(bank.conv.kernel_w == 5);
  CHECK(bank.conv.padding == Padding::Valid);
  CHECK(bank.conv.stride == 1);
  CHECK(bank.thresholds.size() == 34);
  CHECK((bank.thresholds.array() > 0).all());
  CHECK(bank.bn.channels() == 34);
}

TEST_CASE("high-pass kernels sum to zero") {
  const auto bank = build_srm_bank<double>(9);
  for (int k = 0; k < kHighPassCount; ++k) {
    INFO("kernel ", k);
    CHECK(std::abs(kernel_sum(bank.conv, k)) < 1e-12);
  }
}

TEST_CASE("kernel families: normalizers and distinctness") {
  const auto bank = build_srm_bank<double>(0);
  // first order: one +1 tap, one -1 tap
  for (int k = 0; k < 8; ++k) {
    int plus = 0, minus = 0, zero = 0;
    for (int j = 0; j < 25; ++j) {
      const double v = bank.conv.kernels[k * 25 + j];
      plus += v == 1.0;
      minus += v == -1.0;
      zero += v == 0.0;
    }
    CHECK(plus == 1);
    CHECK(minus == 1);
    CHECK(zero == 23);
  }
  // horizontal second order: centre row [0, .5, -1, .5, 0]
  const double expect[5] = {0, 0.5, -1, 0.5, 0};
  for (int x = 0; x < 5; ++x) CHECK(bank.conv.at(8, 0, 2, x) == expect[x]);
  // third order has a 1/3 tap
  CHECK(bank.conv.at(16, 0, 2, 1) == doctest::Approx(1.0 / 3));
  // 3x3 square: centre -1, corners -1/4
  CHECK(bank.conv.at(24, 0, 2, 2) == -1.0);
  CHECK(bank.conv.at(24, 0, 1, 1) == -0.25);
  CHECK(bank.conv.at(24, 0, 0, 0) == 0.0);
  // 5x5 square: centre -12/12
  CHECK(bank.conv.at(25, 0, 2, 2) == doctest::Approx(-1.0));
  CHECK(bank.conv.at(25, 0, 0, 0) == doctest::Approx(-1.0 / 12));
  for (int a = 0; a < kHighPassCount; ++a)
    for (int b = a + 1; b < kHighPassCount; ++b)
      CHECK((bank.conv.kernels.segment(a * 25, 25) - bank.conv.kernels.segment(b * 25, 25)).cwiseAbs().maxCoeff() > 0);
}

TEST_CASE("global kernels: zero mean, bounded, seeded") {
  const auto a = build_srm_bank<double>(5), b = build_srm_bank<double>(5), c = build_srm_bank<double>(6);
  CHECK(a.conv.kernels == b.conv.kernels);
  CHECK(a.conv.kernels.tail(100) != c.conv.kernels.tail(100));
  CHECK(a.conv.kernels.head(750) == c.conv.kernels.head(750));
  for (int k = kHighPassCount; k < kBankSize; ++k) {
    const auto seg = a.conv.kernels.segment(k * 25, 25);
    CHECK(std::abs(seg.sum()) < 1e-12);
    CHECK(seg.cwiseAbs().maxCoeff() <= 0.2);
    CHECK(seg.cwiseAbs().maxCoeff() > 0);
  }
}

TEST_CASE("constant frames: high-pass channels respond zero") {
  auto bank = build_srm_bank<float>(3);
  for (float level : {0.0f, 128.0f / 255, 1.0f}) {
    Tensor<float> x(1, 1, 224, 224, level);
    const auto z = conv2d(x, bank.conv);
    REQUIRE(z.height() == 220);
    REQUIRE(z.width() == 220);
    const auto out = residual_forward(x, bank, Mode::Eval);
    CHECK(out.channels() == 34);
    for (int k = 0; k < kHighPassCount; ++k) {
      CHECK(z.item(0).row(k).cwiseAbs().maxCoeff() <= 1e-6f);
      CHECK(out.item(0).row(k).cwiseAbs().maxCoeff() <= 1e-6f);
    }
  }
}

TEST_CASE("adding a constant leaves high-pass responses unchanged") {
  std::mt19937_64 gen(12);
  auto bank = build_srm_bank<double>(3);
  Tensor<double> x(1, 1, 30, 27);
  nrsteg::test::randomize(x, gen);
  Tensor<double> shifted = x;
  shifted.values().array() += 0.37;
  const auto a = conv2d(x, bank.conv), b = conv2d(shifted, bank.conv);
  const Eigen::Index n = kHighPassCount * a.shape().plane();
  CHECK((a.values().head(n) - b.values().head(n)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("residual sensitivity grows with the perturbed fraction") {
  const auto bank = build_srm_bank<double>(0);
  const auto video = gen_synthetic_video(SyntheticKind::Noise, 96, 96, 10, 0.1, 4);
  const Frame& clean = video.frames.front();
  double previous = 0;
  for (double rate : {0.01, 0.1, 0.5}) {
    const auto stego = embed_lsb_matching(clean, rate, StegoKey{77});
    const double r = high_pass_response(bank.conv, stego, clean);
    INFO("rate ", rate, " response ", r);
    CHECK(r > previous);
    previous = r;
  }
  CHECK(high_pass_response(bank.conv, clean, clean) == 0.0);
}

TEST_CASE("residual_forward rejects multi-channel input") {
  auto bank = build_srm_bank<double>(0);
  CHECK_THROWS_AS(residual_forward(Tensor<double>(1, 2, 10, 10), bank, Mode::Eval), ValidationError);
}
