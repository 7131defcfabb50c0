#pragma once

// Finite-difference verification of analytic gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nrsteg/numerics.hpp"

namespace nrsteg {

// One coordinate to verify: where the value lives and what backward produced for it.
struct Probe {
  std::string name;
  double* value = nullptr;
  double analytic = 0.0;
};

struct GradCheckReport {
  double max_error = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;  // probes skipped because the loss is not differentiable there
  std::string worst;

  void merge(const GradCheckReport& other) {
    if (other.max_error > max_error) {
      max_error = other.max_error;
      worst = other.worst;
    }
    checked += other.checked;
    kinks += other.kinks;
  }
};

// Relative error, falling back to absolute error when both magnitudes are
// below `floor` (a zero gradient has no meaningful relative scale).
inline double gradient_error(double analytic, double numeric, double floor = 1e-8) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  const double diff = std::abs(analytic - numeric);
  return scale < floor ? diff : diff / scale;
}

/// Compares every probe's analytic derivative with the central difference
/// (f(v+h) - f(v-h)) / 2h of `loss`.
///
/// A probe whose one-sided slopes disagree by more than `kink_tolerance`
/// (relative) sits on a non-differentiable point; it is counted in `kinks` and
/// excluded from the error.
template <typename LossFn>
GradCheckReport grad_check(LossFn&& loss, std::vector<Probe>& probes, double h = 1e-5,
                           double kink_tolerance = 1e-2) {
  GradCheckReport report;
  const double f0 = loss();
  for (auto& probe : probes) {
    const double saved = *probe.value;
    *probe.value = saved + h;
    const double fp = loss();
    *probe.value = saved - h;
    const double fm = loss();
    *probe.value = saved;

    const double forward = (fp - f0) / h;
    const double backward = (f0 - fm) / h;
    const double slope_scale = std::max({std::abs(forward), std::abs(backward), 1e-6});
    if (std::abs(forward - backward) > kink_tolerance * slope_scale) {
      ++report.kinks;
      continue;
    }
    const double numeric = (fp - fm) / (2 * h);
    const double err = gradient_error(probe.analytic, numeric);
    ++report.checked;
    if (err > report.max_error || report.worst.empty()) {
      report.max_error = std::max(report.max_error, err);
      report.worst = probe.name + " analytic=" + std::to_string(probe.analytic) +
                     " numeric=" + std::to_string(numeric);
    }
  }
  return report;
}

enum class CheckedOp { Conv2d, AvgPool2d, BatchNormTrain, BatchNormEval, Relu, Ptlu, Linear, SoftmaxCrossEntropy };

inline const char* op_name(CheckedOp op) {
  switch (op) {
    case CheckedOp::Conv2d: return "conv2d";
    case CheckedOp::AvgPool2d: return "avg_pool2d";
    case CheckedOp::BatchNormTrain: return "batch_norm(train)";
    case CheckedOp::BatchNormEval: return "batch_norm(eval)";
    case CheckedOp::Relu: return "relu";
    case CheckedOp::Ptlu: return "ptlu";
    case CheckedOp::Linear: return "linear";
    case CheckedOp::SoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "?";
}

namespace detail {

inline void fill_normal(Vector<double>& v, std::mt19937_64& gen, double sd = 1.0, double mean = 0.0) {
  std::normal_distribution<double> dist(mean, sd);
  for (auto& x : v) x = dist(gen);
}

inline void add_probes(std::vector<Probe>& probes, const std::string& name, Vector<double>& values,
                       const Vector<double>& analytic) {
  for (Eigen::Index i = 0; i < values.size(); ++i)
    probes.push_back({name + "[" + std::to_string(i) + "]", values.data() + i, analytic[i]});
}

inline int uniform_int(std::mt19937_64& gen, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(gen);
}

// Min distance of any input element to a knee of the activation.
inline bool near_knee(const Tensor<double>& x, const Vector<double>* thresholds, double margin) {
  for (int n = 0; n < x.batch(); ++n)
    for (int c = 0; c < x.channels(); ++c) {
      auto row = x.item(n).row(c).array();
      if (!thresholds) {
        if ((row.abs() < margin).any()) return true;
      } else {
        const double t = (*thresholds)[c];
        if (((row - t).abs() < margin).any() || ((row + t).abs() < margin).any()) return true;
      }
    }
  return false;
}

}  // namespace detail

/// Checks one randomly drawn instance of `op` (random dims, parameters and
/// input point) against central differences. Loss is a random linear
/// projection of the op output, so every output coordinate contributes.
/// Instances whose inputs land within 100h of an activation knee are redrawn;
/// the number of redraws is reported through `kinks`.
inline GradCheckReport grad_check_op(CheckedOp op, std::uint64_t seed, double h = 1e-5) {
  std::mt19937_64 gen(seed);
  using detail::uniform_int;
  GradCheckReport report;
  std::vector<Probe> probes;

  auto project = [](const Tensor<double>& y, const Tensor<double>& r) {
    return y.values().dot(r.values());
  };

  switch (op) {
    case CheckedOp::Conv2d: {
      const bool same = uniform_int(gen, 0, 1) == 1;
      const int k = same ? 2 * uniform_int(gen, 0, 2) + 1 : uniform_int(gen, 1, 4);
      auto p = ConvParams<double>::zeros(uniform_int(gen, 1, 3), uniform_int(gen, 1, 3), k, k,
                                         uniform_int(gen, 1, 3), same ? Padding::Same : Padding::Valid);
      detail::fill_normal(p.kernels, gen);
      Tensor<double> x(uniform_int(gen, 1, 2), p.in_channels, k + uniform_int(gen, 0, 6),
                       k + uniform_int(gen, 0, 6));
      detail::fill_normal(x.values(), gen);
      Tensor<double> r(conv_output_shape(x.shape(), p));
      detail::fill_normal(r.values(), gen);
      auto g = conv2d_backward(x, p, r);
      detail::add_probes(probes, "input", x.values(), g.input.values());
      detail::add_probes(probes, "kernels", p.kernels, g.kernels);
      return grad_check([&] { return project(conv2d(x, p), r); }, probes, h);
    }
    case CheckedOp::AvgPool2d: {
      PoolWindow win{uniform_int(gen, 1, 3), uniform_int(gen, 1, 3), uniform_int(gen, 1, 3)};
      Tensor<double> x(uniform_int(gen, 1, 2), uniform_int(gen, 1, 3), win.height + uniform_int(gen, 0, 6),
                       win.width + uniform_int(gen, 0, 6));
      detail::fill_normal(x.values(), gen);
      Tensor<double> r(pool_output_shape(x.shape(), win));
      detail::fill_normal(r.values(), gen);
      auto gx = avg_pool2d_backward(x.shape(), win, r);
      detail::add_probes(probes, "input", x.values(), gx.values());
      return grad_check([&] { return project(avg_pool2d(x, win), r); }, probes, h);
    }
    case CheckedOp::BatchNormTrain:
    case CheckedOp::BatchNormEval: {
      const bool train = op == CheckedOp::BatchNormTrain;
      const int channels = uniform_int(gen, 1, 3);
      auto p = BatchNormParams<double>::identity(channels);
      detail::fill_normal(p.gamma, gen, 0.5, 1.0);
      detail::fill_normal(p.beta, gen);
      detail::fill_normal(p.running_mean, gen);
      detail::fill_normal(p.running_var, gen);
      p.running_var = (p.running_var.array().abs() + 0.5).matrix();
      Tensor<double> x(uniform_int(gen, 2, 3), channels, uniform_int(gen, 2, 4), uniform_int(gen, 2, 4));
      detail::fill_normal(x.values(), gen, 2.0, 1.0);
      Tensor<double> r(x.shape());
      detail::fill_normal(r.values(), gen);
      BatchNormCache<double> cache;
      auto scratch = p;
      batch_norm(x, scratch, train ? Mode::Train : Mode::Eval, &cache);
      auto g = batch_norm_backward(x, p, cache, r);
      detail::add_probes(probes, "input", x.values(), g.input.values());
      detail::add_probes(probes, "gamma", p.gamma, g.gamma);
      detail::add_probes(probes, "beta", p.beta, g.beta);
      return grad_check(
          [&] {
            auto q = p;  // running statistics must not drift between evaluations
            return project(batch_norm(x, q, train ? Mode::Train : Mode::Eval), r);
          },
          probes, h);
    }
    case CheckedOp::Relu:
    case CheckedOp::Ptlu: {
      const bool ptlu = op == CheckedOp::Ptlu;
      const int channels = uniform_int(gen, 1, 3);
      Vector<double> t = Vector<double>::Zero(channels);
      Tensor<double> x(uniform_int(gen, 1, 2), channels, uniform_int(gen, 1, 4), uniform_int(gen, 1, 4));
      do {
        for (auto& v : t) v = std::uniform_real_distribution<double>(0.5, 2.0)(gen);
        detail::fill_normal(x.values(), gen, 2.0);
        if (detail::near_knee(x, ptlu ? &t : nullptr, 100 * h)) ++report.kinks;
        else break;
      } while (true);
      const Vector<double>* tp = ptlu ? &t : nullptr;
      const Activation kind = ptlu ? Activation::Ptlu : Activation::Relu;
      Tensor<double> r(x.shape());
      detail::fill_normal(r.values(), gen);
      auto g = activate_backward(activate(x, kind, tp), kind, tp, r);
      detail::add_probes(probes, "input", x.values(), g.input.values());
      if (ptlu) detail::add_probes(probes, "threshold", t, g.thresholds);
      auto result = grad_check([&] { return project(activate(x, kind, tp), r); }, probes, h);
      result.kinks += report.kinks;
      return result;
    }
    case CheckedOp::Linear: {
      auto p = LinearParams<double>::zeros(uniform_int(gen, 1, 5), uniform_int(gen, 1, 10));
      detail::fill_normal(p.weight, gen);
      detail::fill_normal(p.bias, gen);
      RowMatrix<double> x(uniform_int(gen, 1, 3), p.in_features);
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = std::normal_distribution<double>()(gen);
      RowMatrix<double> r(x.rows(), p.out_features);
      for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = std::normal_distribution<double>()(gen);
      auto g = linear_backward(x, p, r);
      for (Eigen::Index i = 0; i < x.size(); ++i)
        probes.push_back({"input[" + std::to_string(i) + "]", x.data() + i, g.input.data()[i]});
      detail::add_probes(probes, "weight", p.weight, g.weight);
      detail::add_probes(probes, "bias", p.bias, g.bias);
      return grad_check([&] { return (linear(x, p).array() * r.array()).sum(); }, probes, h);
    }
    case CheckedOp::SoftmaxCrossEntropy: {
      Vector<double> logits(3);
      detail::fill_normal(logits, gen, 3.0);
      const int label = uniform_int(gen, 0, 2);
      auto fwd = softmax_cross_entropy(logits, label);
      auto g = softmax_cross_entropy_grad(fwd.probs, label);
      detail::add_probes(probes, "logits", logits, g);
      return grad_check([&] { return softmax_cross_entropy(logits, label).loss; }, probes, h);
    }
  }
  return report;
}

}  // namespace nrsteg
