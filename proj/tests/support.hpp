#pragma once

// Shared helpers for the unit tests: naive reference implementations and
// scratch directories.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <random>
#include <string>

#include "nrsteg/grad_check.hpp"
#include "nrsteg/model.hpp"
#include "nrsteg/numerics.hpp"
#include "nrsteg/video.hpp"

namespace nrsteg::test {

// Nested-loop cross-correlation, the oracle for conv2d.
inline Tensor<double> naive_conv(const Tensor<double>& x, const ConvParams<double>& p) {
  const int oh = (x.height() + 2 * p.pad_h() - p.kernel_h) / p.stride + 1;
  const int ow = (x.width() + 2 * p.pad_w() - p.kernel_w) / p.stride + 1;
  Tensor<double> y(x.batch(), p.out_channels, oh, ow);
  for (int n = 0; n < x.batch(); ++n)
    for (int o = 0; o < p.out_channels; ++o)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double s = 0;
          for (int c = 0; c < p.in_channels; ++c)
            for (int ky = 0; ky < p.kernel_h; ++ky)
              for (int kx = 0; kx < p.kernel_w; ++kx) {
                const int iy = oy * p.stride + ky - p.pad_h(), ix = ox * p.stride + kx - p.pad_w();
                if (iy < 0 || ix < 0 || iy >= x.height() || ix >= x.width()) continue;
                s += p.at(o, c, ky, kx) * x(n, c, iy, ix);
              }
          y(n, o, oy, ox) = s;
        }
  return y;
}

inline Tensor<double> naive_pool(const Tensor<double>& x, const PoolWindow& w) {
  const int oh = (x.height() - w.height) / w.stride + 1, ow = (x.width() - w.width) / w.stride + 1;
  Tensor<double> y(x.batch(), x.channels(), oh, ow);
  for (int n = 0; n < x.batch(); ++n)
    for (int c = 0; c < x.channels(); ++c)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double s = 0;
          for (int ky = 0; ky < w.height; ++ky)
            for (int kx = 0; kx < w.width; ++kx) s += x(n, c, oy * w.stride + ky, ox * w.stride + kx);
          y(n, c, oy, ox) = s / (w.height * w.width);
        }
  return y;
}

template <typename Scalar>
void randomize(Tensor<Scalar>& t, std::mt19937_64& gen, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  for (Eigen::Index i = 0; i < t.values().size(); ++i) t.values()(i) = Scalar(d(gen));
}

// Central differences of the mean cross-entropy of the composed network
// (train mode, batch of `batch` random frames) at `per_tensor` random
// coordinates of every trainable tensor plus `input_probes` coordinates of the
// input.
inline GradCheckReport network_grad_check(std::uint64_t seed, int per_tensor = 3, int input_probes = 4,
                                          int batch = 2, double h = 1e-6) {
  std::mt19937_64 gen(seed);
  auto m = init_model<double>(seed);
  Tensor<double> x(batch, 1, kInputSize, kInputSize);
  std::uniform_real_distribution<double> pix(0.0, 1.0);
  for (auto& v : x.values()) v = pix(gen);
  std::vector<int> labels;
  for (int i = 0; i < batch; ++i) labels.push_back(i % kClasses);

  Tensor<double> grad_x;
  const auto lg = loss_and_grad(m, x, labels, 1, &grad_x);
  std::vector<Probe> probes;
  for_each_tensor(
      [&](const std::string& name, ParamRole role, const std::vector<std::uint32_t>&, Vector<double>& p,
          const Vector<double>& g) {
        if (!is_trainable(role)) return;
        for (int k = 0; k < per_tensor; ++k) {
          const auto i = std::uniform_int_distribution<Eigen::Index>(0, p.size() - 1)(gen);
          probes.push_back({name + "[" + std::to_string(i) + "]", p.data() + i, g[i]});
        }
      },
      m, lg.grads);
  for (int k = 0; k < input_probes; ++k) {
    const auto i = std::uniform_int_distribution<Eigen::Index>(0, x.size() - 1)(gen);
    probes.push_back({"input[" + std::to_string(i) + "]", x.data() + i, grad_x.values()[i]});
  }
  auto loss = [&] {
    const RowMatrix<double> logits = forward(m, x, Mode::Train);
    double total = 0;
    for (int i = 0; i < batch; ++i) total += softmax_cross_entropy<double>(logits.row(i).transpose(), labels[i]).loss;
    return total / batch;
  };
  // one-sided slopes agree to O(h) away from relu/ptlu knees; a wider gap marks a knee crossing
  return grad_check(loss, probes, h, 1e-4);
}

// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("nrsteg_" + tag + "_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()) +
             "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace nrsteg::test
