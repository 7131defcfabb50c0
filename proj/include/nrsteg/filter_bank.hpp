#pragma once

// The residual convolution layer: 34 trainable 5x5 kernels, 30 initialized to
// the spatial-rich-model high-pass family and 4 "global" kernels initialized
// to small zero-mean noise.

#include <array>
#include <cstdint>

#include "nrsteg/numerics.hpp"
#include "nrsteg/rng.hpp"

namespace nrsteg {

inline constexpr int kBankSize = 34;
inline constexpr int kHighPassCount = 30;
inline constexpr int kBankKernel = 5;
inline constexpr double kInitialThreshold = 3.0;

template <typename Scalar>
struct FilterBank {
  ConvParams<Scalar> conv;     // 34 x 1 x 5 x 5, valid, stride 1
  Vector<Scalar> thresholds;   // PTLU T_c
  BatchNormParams<Scalar> bn;

  template <typename Other>
  FilterBank<Other> cast() const {
    return {conv.template cast<Other>(), thresholds.template cast<Other>(), bn.template cast<Other>()};
  }
};

namespace detail {

using Kernel5 = std::array<std::array<double, 5>, 5>;

struct Offset {
  int dy, dx;
};

// E, SE, S, SW, W, NW, N, NE
inline constexpr std::array<Offset, 8> kDirections{
    {{0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}, {-1, -1}, {-1, 0}, {-1, 1}}};
// horizontal, vertical, diagonal, anti-diagonal
inline constexpr std::array<Offset, 4> kAxes{{{0, 1}, {1, 0}, {1, 1}, {1, -1}}};

inline void put(Kernel5& k, Offset u, int steps, double v) { k[2 + u.dy * steps][2 + u.dx * steps] += v; }

inline Kernel5 embed3(const std::array<std::array<double, 3>, 3>& small, double norm) {
  Kernel5 k{};
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) k[y + 1][x + 1] = small[y][x] / norm;
  return k;
}

inline std::array<Kernel5, kHighPassCount> srm_high_pass() {
  std::array<Kernel5, kHighPassCount> bank{};
  int i = 0;
  for (const auto u : kDirections) {  // first order: x[c+u] - x[c]
    put(bank[i], u, 0, -1.0);
    put(bank[i], u, 1, 1.0);
    ++i;
  }
  for (int spacing : {1, 2}) {  // second order [1 -2 1]/2, adjacent then dilated taps
    for (const auto u : kAxes) {
      put(bank[i], u, -spacing, 0.5);
      put(bank[i], u, 0, -1.0);
      put(bank[i], u, spacing, 0.5);
      ++i;
    }
  }
  for (const auto u : kDirections) {  // third order [1 -3 3 -1]/3
    put(bank[i], u, -1, 1.0 / 3);
    put(bank[i], u, 0, -1.0);
    put(bank[i], u, 1, 1.0);
    put(bank[i], u, 2, -1.0 / 3);
    ++i;
  }
  bank[i++] = embed3({{{-1, 2, -1}, {2, -4, 2}, {-1, 2, -1}}}, 4.0);
  bank[i++] = Kernel5{{{-1, 2, -2, 2, -1},
                       {2, -6, 8, -6, 2},
                       {-2, 8, -12, 8, -2},
                       {2, -6, 8, -6, 2},
                       {-1, 2, -2, 2, -1}}};
  for (auto& row : bank[i - 1])
    for (auto& v : row) v /= 12.0;
  std::array<std::array<double, 3>, 3> edge{{{-1, 2, -1}, {2, -4, 2}, {0, 0, 0}}};
  for (int r = 0; r < 4; ++r) {
    bank[i++] = embed3(edge, 4.0);
    std::array<std::array<double, 3>, 3> rotated{};
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) rotated[x][2 - y] = edge[y][x];
    edge = rotated;
  }
  return bank;
}

}  // namespace detail

template <typename Scalar>
FilterBank<Scalar> build_srm_bank(std::uint64_t seed) {
  FilterBank<Scalar> bank;
  bank.conv = ConvParams<Scalar>::zeros(kBankSize, 1, kBankKernel, kBankKernel);
  const auto high_pass = detail::srm_high_pass();
  for (int k = 0; k < kHighPassCount; ++k)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) bank.conv.at(k, 0, y, x) = Scalar(high_pass[k][y][x]);

  SplitMix64 rng(derive_seed(seed, 0xBA4C));
  for (int k = kHighPassCount; k < kBankSize; ++k) {
    std::array<double, 25> taps{};
    double mean = 0;
    for (auto& t : taps) {
      t = -0.1 + 0.2 * rng.uniform();
      mean += t / 25;
    }
    for (int j = 0; j < 25; ++j) bank.conv.at(k, 0, j / 5, j % 5) = Scalar(taps[j] - mean);
  }
  bank.thresholds = Vector<Scalar>::Constant(kBankSize, Scalar(kInitialThreshold));
  bank.bn = BatchNormParams<Scalar>::identity(kBankSize);
  return bank;
}

// conv (valid, stride 1) -> batch norm -> PTLU. Input must be single channel.
template <typename Scalar>
Tensor<Scalar> residual_forward(const Tensor<Scalar>& frames, FilterBank<Scalar>& bank, Mode mode,
                                int threads = 1) {
  if (frames.channels() != 1)
    throw ValidationError("residual_forward: expected 1 input channel, got " +
                          std::to_string(frames.channels()));
  auto z = conv2d(frames, bank.conv, threads);
  return activate(batch_norm(z, bank.bn, mode), Activation::Ptlu, &bank.thresholds);
}

}  // namespace nrsteg
