#pragma once

// Tensor primitives of the noise-residual network with their analytic
// gradients. All operators are templated on the scalar type: training runs in
// float, gradient verification in double.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nrsteg/error.hpp"
#include "nrsteg/parallel.hpp"
#include "nrsteg/tensor.hpp"

namespace nrsteg {

enum class Mode { Train, Eval };
enum class Padding { Valid, Same };
enum class Activation { Relu, Ptlu };

// floor((n + 2p - k) / stride) + 1
constexpr int output_extent(int n, int kernel, int stride, int pad) {
  return (n + 2 * pad - kernel) / stride + 1;
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip, no bias).

template <typename Scalar>
struct ConvParams {
  int out_channels = 0;
  int in_channels = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;
  Padding padding = Padding::Valid;
  Vector<Scalar> kernels;  // out x in x kh x kw, row-major

  static ConvParams zeros(int out, int in, int kh, int kw, int stride = 1,
                          Padding padding = Padding::Valid) {
    ConvParams p;
    p.out_channels = out;
    p.in_channels = in;
    p.kernel_h = kh;
    p.kernel_w = kw;
    p.stride = stride;
    p.padding = padding;
    p.validate();
    p.kernels = Vector<Scalar>::Zero(Eigen::Index(out) * in * kh * kw);
    return p;
  }

  void validate() const {
    if (out_channels < 1 || in_channels < 1 || kernel_h < 1 || kernel_w < 1)
      throw ValidationError("conv2d: kernel dims must be positive");
    if (stride < 1) throw ValidationError("conv2d: stride must be >= 1");
    if (padding == Padding::Same && (kernel_h % 2 == 0 || kernel_w % 2 == 0))
      throw ValidationError("conv2d: same padding requires odd kernel dims, got " +
                            std::to_string(kernel_h) + "x" + std::to_string(kernel_w));
  }

  int pad_h() const { return padding == Padding::Same ? (kernel_h - 1) / 2 : 0; }
  int pad_w() const { return padding == Padding::Same ? (kernel_w - 1) / 2 : 0; }
  int patch() const { return in_channels * kernel_h * kernel_w; }

  Eigen::Map<const RowMatrix<Scalar>> weights() const {
    return {kernels.data(), out_channels, patch()};
  }
  Eigen::Map<RowMatrix<Scalar>> weights() { return {kernels.data(), out_channels, patch()}; }

  Scalar& at(int o, int i, int y, int x) {
    return kernels[((Eigen::Index(o) * in_channels + i) * kernel_h + y) * kernel_w + x];
  }
  Scalar at(int o, int i, int y, int x) const {
    return kernels[((Eigen::Index(o) * in_channels + i) * kernel_h + y) * kernel_w + x];
  }

  template <typename Other>
  ConvParams<Other> cast() const {
    ConvParams<Other> p;
    p.out_channels = out_channels;
    p.in_channels = in_channels;
    p.kernel_h = kernel_h;
    p.kernel_w = kernel_w;
    p.stride = stride;
    p.padding = padding;
    p.kernels = kernels.template cast<Other>();
    return p;
  }
};

template <typename Scalar>
Shape conv_output_shape(const Shape& in, const ConvParams<Scalar>& p) {
  p.validate();
  if (in.channels != p.in_channels)
    throw ValidationError("conv2d: channel axis mismatch: input has " +
                          std::to_string(in.channels) + " channels, kernels expect " +
                          std::to_string(p.in_channels));
  if (in.height + 2 * p.pad_h() < p.kernel_h)
    throw ValidationError("conv2d: height axis too small: " + std::to_string(in.height) +
                          " < kernel " + std::to_string(p.kernel_h));
  if (in.width + 2 * p.pad_w() < p.kernel_w)
    throw ValidationError("conv2d: width axis too small: " + std::to_string(in.width) +
                          " < kernel " + std::to_string(p.kernel_w));
  return {in.batch, p.out_channels, output_extent(in.height, p.kernel_h, p.stride, p.pad_h()),
          output_extent(in.width, p.kernel_w, p.stride, p.pad_w())};
}

namespace detail {

template <typename Scalar>
Scalar* scratch(std::size_t n, int slot) {
  thread_local std::vector<Scalar> buffers[2];
  auto& b = buffers[slot];
  if (b.size() < n) b.resize(n);
  return b.data();
}

// Unfolds output rows [oy0, oy1) of one CHW item into a (C*kh*kw) x ((oy1-oy0)*ow)
// row-major patch matrix.
template <typename Scalar>
void im2col(const Scalar* src, int channels, int height, int width, const ConvParams<Scalar>& p,
            int oy0, int oy1, int ow, Scalar* col) {
  const int ph = p.pad_h(), pw = p.pad_w(), s = p.stride;
  const Eigen::Index cols = Eigen::Index(oy1 - oy0) * ow;
  for (int c = 0; c < channels; ++c) {
    const Scalar* plane = src + Eigen::Index(c) * height * width;
    for (int ky = 0; ky < p.kernel_h; ++ky) {
      for (int kx = 0; kx < p.kernel_w; ++kx) {
        Scalar* dst = col + ((Eigen::Index(c) * p.kernel_h + ky) * p.kernel_w + kx) * cols;
        for (int oy = oy0; oy < oy1; ++oy) {
          Scalar* row = dst + Eigen::Index(oy - oy0) * ow;
          const int iy = oy * s + ky - ph;
          if (iy < 0 || iy >= height) {
            std::fill(row, row + ow, Scalar(0));
            continue;
          }
          const Scalar* line = plane + Eigen::Index(iy) * width;
          if (s == 1 && pw == 0) {
            std::copy(line + kx, line + kx + ow, row);
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * s + kx - pw;
              row[ox] = (ix >= 0 && ix < width) ? line[ix] : Scalar(0);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates a patch matrix back onto a CHW item.
template <typename Scalar>
void col2im(const Scalar* col, int channels, int height, int width, const ConvParams<Scalar>& p,
            int oy0, int oy1, int ow, Scalar* dst) {
  const int ph = p.pad_h(), pw = p.pad_w(), s = p.stride;
  const Eigen::Index cols = Eigen::Index(oy1 - oy0) * ow;
  for (int c = 0; c < channels; ++c) {
    Scalar* plane = dst + Eigen::Index(c) * height * width;
    for (int ky = 0; ky < p.kernel_h; ++ky) {
      for (int kx = 0; kx < p.kernel_w; ++kx) {
        const Scalar* src = col + ((Eigen::Index(c) * p.kernel_h + ky) * p.kernel_w + kx) * cols;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * s + ky - ph;
          if (iy < 0 || iy >= height) continue;
          const Scalar* row = src + Eigen::Index(oy - oy0) * ow;
          Scalar* line = plane + Eigen::Index(iy) * width;
          if (s == 1) {
            const int lo = std::max(0, pw - kx), hi = std::min(ow, width + pw - kx);
            if (hi > lo)
              Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(line + lo + kx - pw, hi - lo) +=
                  Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(row + lo, hi - lo);
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * s + kx - pw;
              if (ix >= 0 && ix < width) line[ix] += row[ox];
            }
          }
        }
      }
    }
  }
}

// Output rows per im2col block, sized so a block's patch matrix stays cache resident.
inline int conv_row_block(int patch, int ow) {
  constexpr long kTarget = 1 << 16;  // elements
  return int(std::max(1L, kTarget / (long(patch) * ow)));
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const ConvParams<Scalar>& p, int threads = 1) {
  const Shape out_shape = conv_output_shape(x.shape(), p);
  Tensor<Scalar> y(out_shape);
  const int oh = out_shape.height, ow = out_shape.width;
  const auto w = p.weights();
  parallel_for(x.batch(), threads, [&](int n) {
    const int rb = detail::conv_row_block(p.patch(), ow);
    Scalar* col = detail::scratch<Scalar>(std::size_t(p.patch()) * rb * ow, 0);
    auto yn = y.item(n);
    for (int oy0 = 0; oy0 < oh; oy0 += rb) {
      const int oy1 = std::min(oh, oy0 + rb);
      const Eigen::Index bc = Eigen::Index(oy1 - oy0) * ow;
      detail::im2col(x.item_data(n), x.channels(), x.height(), x.width(), p, oy0, oy1, ow, col);
      Eigen::Map<const RowMatrix<Scalar>> patches(col, p.patch(), bc);
      yn.middleCols(Eigen::Index(oy0) * ow, bc).noalias() = w * patches;
    }
  });
  return y;
}

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> input;     // empty when not requested
  Vector<Scalar> kernels;   // same layout as ConvParams::kernels
};

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& x, const ConvParams<Scalar>& p,
                                  const Tensor<Scalar>& grad_out, bool need_input_grad = true,
                                  int threads = 1) {
  const Shape out_shape = conv_output_shape(x.shape(), p);
  if (grad_out.shape() != out_shape)
    throw ValidationError("conv2d_backward: gradient shape " + grad_out.shape().str() +
                          " does not match output " + out_shape.str());
  const int oh = out_shape.height, ow = out_shape.width;
  const auto w = p.weights();

  ConvGrads<Scalar> g;
  if (need_input_grad) g.input = Tensor<Scalar>(x.shape());
  std::vector<RowMatrix<Scalar>> per_item(x.batch());
  parallel_for(x.batch(), threads, [&](int n) {
    const int rb = detail::conv_row_block(p.patch(), ow);
    Scalar* col = detail::scratch<Scalar>(std::size_t(p.patch()) * rb * ow, 0);
    Scalar* gcol = need_input_grad ? detail::scratch<Scalar>(std::size_t(p.patch()) * rb * ow, 1) : nullptr;
    const auto gy = grad_out.item(n);
    per_item[n] = RowMatrix<Scalar>::Zero(p.out_channels, p.patch());
    for (int oy0 = 0; oy0 < oh; oy0 += rb) {
      const int oy1 = std::min(oh, oy0 + rb);
      const Eigen::Index bc = Eigen::Index(oy1 - oy0) * ow;
      const auto gyb = gy.middleCols(Eigen::Index(oy0) * ow, bc);
      detail::im2col(x.item_data(n), x.channels(), x.height(), x.width(), p, oy0, oy1, ow, col);
      Eigen::Map<const RowMatrix<Scalar>> patches(col, p.patch(), bc);
      per_item[n].noalias() += gyb * patches.transpose();
      if (need_input_grad) {
        Eigen::Map<RowMatrix<Scalar>> gpatches(gcol, p.patch(), bc);
        gpatches.noalias() = w.transpose() * gyb;
        detail::col2im(gcol, x.channels(), x.height(), x.width(), p, oy0, oy1, ow, g.input.item_data(n));
      }
    }
  });
  RowMatrix<Scalar> total = RowMatrix<Scalar>::Zero(p.out_channels, p.patch());
  for (const auto& m : per_item) total += m;  // fixed order keeps results thread-count independent
  g.kernels = Eigen::Map<const Vector<Scalar>>(total.data(), total.size());
  return g;
}

// ---------------------------------------------------------------------------
// Average pooling, valid windows only.

struct PoolWindow {
  int height = 2;
  int width = 2;
  int stride = 2;
};

inline Shape pool_output_shape(const Shape& in, const PoolWindow& win) {
  if (win.height < 1 || win.width < 1 || win.stride < 1)
    throw ValidationError("avg_pool2d: window and stride must be positive");
  if (win.height > in.height || win.width > in.width)
    throw ValidationError("avg_pool2d: window " + std::to_string(win.height) + "x" +
                          std::to_string(win.width) + " larger than input " +
                          std::to_string(in.height) + "x" + std::to_string(in.width));
  return {in.batch, in.channels, output_extent(in.height, win.height, win.stride, 0),
          output_extent(in.width, win.width, win.stride, 0)};
}

template <typename Scalar>
Tensor<Scalar> avg_pool2d(const Tensor<Scalar>& x, const PoolWindow& win) {
  const Shape os = pool_output_shape(x.shape(), win);
  Tensor<Scalar> y(os);
  const Scalar scale = Scalar(1) / Scalar(win.height * win.width);
  for (int n = 0; n < os.batch; ++n)
    for (int c = 0; c < os.channels; ++c)
      for (int oy = 0; oy < os.height; ++oy)
        for (int ox = 0; ox < os.width; ++ox) {
          Scalar acc(0);
          for (int ky = 0; ky < win.height; ++ky)
            for (int kx = 0; kx < win.width; ++kx)
              acc += x(n, c, oy * win.stride + ky, ox * win.stride + kx);
          y(n, c, oy, ox) = acc * scale;
        }
  return y;
}

template <typename Scalar>
Tensor<Scalar> avg_pool2d_backward(const Shape& input_shape, const PoolWindow& win,
                                   const Tensor<Scalar>& grad_out) {
  const Shape os = pool_output_shape(input_shape, win);
  if (grad_out.shape() != os)
    throw ValidationError("avg_pool2d_backward: gradient shape mismatch");
  Tensor<Scalar> gx(input_shape);
  const Scalar scale = Scalar(1) / Scalar(win.height * win.width);
  for (int n = 0; n < os.batch; ++n)
    for (int c = 0; c < os.channels; ++c)
      for (int oy = 0; oy < os.height; ++oy)
        for (int ox = 0; ox < os.width; ++ox) {
          const Scalar g = grad_out(n, c, oy, ox) * scale;
          for (int ky = 0; ky < win.height; ++ky)
            for (int kx = 0; kx < win.width; ++kx)
              gx(n, c, oy * win.stride + ky, ox * win.stride + kx) += g;
        }
  return gx;
}

// ---------------------------------------------------------------------------
// Batch normalization over (batch, height, width) per channel.

template <typename Scalar>
struct BatchNormParams {
  Vector<Scalar> gamma;
  Vector<Scalar> beta;
  Vector<Scalar> running_mean;
  Vector<Scalar> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNormParams identity(int channels) {
    BatchNormParams p;
    p.gamma = Vector<Scalar>::Ones(channels);
    p.beta = Vector<Scalar>::Zero(channels);
    p.running_mean = Vector<Scalar>::Zero(channels);
    p.running_var = Vector<Scalar>::Ones(channels);
    return p;
  }

  int channels() const { return int(gamma.size()); }

  void validate() const {
    if (!(eps > 0)) throw ValidationError("batch_norm: eps must be positive");
    if (!(momentum > 0 && momentum < 1)) throw ValidationError("batch_norm: momentum not in (0,1)");
    if ((running_var.array() < Scalar(0)).any())
      throw ValidationError("batch_norm: running_var must be nonnegative");
  }

  template <typename Other>
  BatchNormParams<Other> cast() const {
    BatchNormParams<Other> p;
    p.gamma = gamma.template cast<Other>();
    p.beta = beta.template cast<Other>();
    p.running_mean = running_mean.template cast<Other>();
    p.running_var = running_var.template cast<Other>();
    p.eps = eps;
    p.momentum = momentum;
    return p;
  }
};

// Statistics used by the forward pass, retained for the backward pass.
template <typename Scalar>
struct BatchNormCache {
  Mode mode = Mode::Eval;
  Vector<Scalar> mean;
  Vector<Scalar> inv_std;
};

template <typename Scalar>
Tensor<Scalar> batch_norm_apply(const Tensor<Scalar>& x, const BatchNormParams<Scalar>& p,
                                const Vector<Scalar>& mean, const Vector<Scalar>& inv_std) {
  Tensor<Scalar> y(x.shape());
  for (int n = 0; n < x.batch(); ++n) {
    auto in = x.item(n);
    auto out = y.item(n);
    for (int c = 0; c < x.channels(); ++c) {
      const Scalar scale = p.gamma[c] * inv_std[c];
      const Scalar shift = p.beta[c] - mean[c] * scale;
      out.row(c) = (in.row(c).array() * scale + shift).matrix();
    }
  }
  return y;
}

template <typename Scalar>
void check_bn_channels(const Tensor<Scalar>& x, const BatchNormParams<Scalar>& p) {
  if (x.size() == 0) throw ValidationError("batch_norm: empty batch");
  if (x.channels() != p.channels())
    throw ValidationError("batch_norm: channel mismatch: input " + std::to_string(x.channels()) +
                          ", params " + std::to_string(p.channels()));
}

template <typename Scalar>
Tensor<Scalar> batch_norm_eval(const Tensor<Scalar>& x, const BatchNormParams<Scalar>& p,
                               BatchNormCache<Scalar>* cache = nullptr) {
  check_bn_channels(x, p);
  p.validate();
  Vector<Scalar> inv_std =
      (p.running_var.array() + Scalar(p.eps)).rsqrt().matrix();
  if (cache) *cache = {Mode::Eval, p.running_mean, inv_std};
  return batch_norm_apply(x, p, p.running_mean, inv_std);
}

// Normalizes with batch statistics and folds them into the running estimates
// (unbiased variance for the running estimate).
template <typename Scalar>
Tensor<Scalar> batch_norm_train(const Tensor<Scalar>& x, BatchNormParams<Scalar>& p,
                                BatchNormCache<Scalar>* cache = nullptr) {
  check_bn_channels(x, p);
  p.validate();
  const int channels = x.channels();
  const double count = double(x.batch()) * double(x.shape().plane());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(channels);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(channels);
  for (int n = 0; n < x.batch(); ++n) {
    auto in = x.item(n);
    for (int c = 0; c < channels; ++c) sum[c] += in.row(c).template cast<double>().sum();
  }
  const Eigen::VectorXd mean = sum / count;
  for (int n = 0; n < x.batch(); ++n) {
    auto in = x.item(n);
    for (int c = 0; c < channels; ++c)
      sq[c] += (in.row(c).template cast<double>().array() - mean[c]).square().sum();
  }
  const Eigen::VectorXd var = sq / count;
  const Eigen::VectorXd inv_std = (var.array() + p.eps).rsqrt().matrix();

  const double unbias = count > 1 ? count / (count - 1) : 1.0;
  const double m = p.momentum;
  p.running_mean = ((1 - m) * p.running_mean.template cast<double>() + m * mean).template cast<Scalar>();
  p.running_var =
      ((1 - m) * p.running_var.template cast<double>() + m * unbias * var).template cast<Scalar>();

  BatchNormCache<Scalar> local{Mode::Train, mean.template cast<Scalar>(), inv_std.template cast<Scalar>()};
  Tensor<Scalar> y = batch_norm_apply(x, p, local.mean, local.inv_std);
  if (cache) *cache = std::move(local);
  return y;
}

template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& x, BatchNormParams<Scalar>& p, Mode mode,
                          BatchNormCache<Scalar>* cache = nullptr) {
  return mode == Mode::Train ? batch_norm_train(x, p, cache) : batch_norm_eval(x, p, cache);
}

template <typename Scalar>
struct BatchNormGrads {
  Tensor<Scalar> input;
  Vector<Scalar> gamma;
  Vector<Scalar> beta;
};

template <typename Scalar>
BatchNormGrads<Scalar> batch_norm_backward(const Tensor<Scalar>& x, const BatchNormParams<Scalar>& p,
                                           const BatchNormCache<Scalar>& cache,
                                           const Tensor<Scalar>& grad_out) {
  const int channels = x.channels();
  const double count = double(x.batch()) * double(x.shape().plane());
  Eigen::VectorXd sum_dy = Eigen::VectorXd::Zero(channels);
  Eigen::VectorXd sum_dy_xhat = Eigen::VectorXd::Zero(channels);
  for (int n = 0; n < x.batch(); ++n) {
    auto in = x.item(n);
    auto gy = grad_out.item(n);
    for (int c = 0; c < channels; ++c) {
      const auto xhat = ((in.row(c).array() - cache.mean[c]) * cache.inv_std[c]).template cast<double>();
      const auto g = gy.row(c).array().template cast<double>();
      sum_dy[c] += g.sum();
      sum_dy_xhat[c] += (g * xhat).sum();
    }
  }
  BatchNormGrads<Scalar> out{Tensor<Scalar>(x.shape()), sum_dy_xhat.template cast<Scalar>(),
                             sum_dy.template cast<Scalar>()};
  for (int n = 0; n < x.batch(); ++n) {
    auto in = x.item(n);
    auto gy = grad_out.item(n);
    auto gx = out.input.item(n);
    for (int c = 0; c < channels; ++c) {
      const Scalar k = p.gamma[c] * cache.inv_std[c];
      if (cache.mode == Mode::Eval) {
        gx.row(c) = gy.row(c) * k;
      } else {
        const Scalar mean_dy = Scalar(sum_dy[c] / count);
        const Scalar mean_dy_xhat = Scalar(sum_dy_xhat[c] / count);
        const auto xhat = (in.row(c).array() - cache.mean[c]) * cache.inv_std[c];
        gx.row(c) = (k * (gy.row(c).array() - mean_dy - xhat * mean_dy_xhat)).matrix();
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations. PTLU clamps channel c to [-T_c, T_c] with trainable T_c.

template <typename Scalar>
void check_thresholds(int channels, const Vector<Scalar>* thresholds) {
  if (!thresholds || thresholds->size() != channels)
    throw ValidationError("activate: ptlu needs one threshold per channel (" +
                          std::to_string(channels) + ")");
  if (!(thresholds->array() > Scalar(0)).all())
    throw ValidationError("activate: ptlu thresholds must be positive");
}

template <typename Scalar>
Tensor<Scalar> activate(const Tensor<Scalar>& x, Activation kind,
                        const Vector<Scalar>* thresholds = nullptr) {
  Tensor<Scalar> y(x.shape());
  if (kind == Activation::Relu) {
    y.values() = x.values().cwiseMax(Scalar(0));
    return y;
  }
  check_thresholds(x.channels(), thresholds);
  for (int n = 0; n < x.batch(); ++n) {
    auto in = x.item(n);
    auto out = y.item(n);
    for (int c = 0; c < x.channels(); ++c) {
      const Scalar t = (*thresholds)[c];
      out.row(c) = in.row(c).cwiseMax(-t).cwiseMin(t);
    }
  }
  return y;
}

template <typename Scalar>
struct ActivationGrads {
  Tensor<Scalar> input;
  Vector<Scalar> thresholds;  // empty for relu
};

// Backward from the activation *output*: relu passes where y > 0; ptlu passes
// strictly inside (-T, T) and routes saturated gradients to T.
template <typename Scalar>
ActivationGrads<Scalar> activate_backward(const Tensor<Scalar>& y, Activation kind,
                                          const Vector<Scalar>* thresholds,
                                          const Tensor<Scalar>& grad_out) {
  ActivationGrads<Scalar> g{Tensor<Scalar>(y.shape()), {}};
  if (kind == Activation::Relu) {
    g.input.values() =
        (y.values().array() > Scalar(0)).select(grad_out.values().array(), Scalar(0)).matrix();
    return g;
  }
  check_thresholds(y.channels(), thresholds);
  g.thresholds = Vector<Scalar>::Zero(y.channels());
  for (int n = 0; n < y.batch(); ++n) {
    auto out = y.item(n);
    auto gy = grad_out.item(n);
    auto gx = g.input.item(n);
    for (int c = 0; c < y.channels(); ++c) {
      const Scalar t = (*thresholds)[c];
      const auto v = out.row(c).array();
      const auto d = gy.row(c).array();
      gx.row(c) = ((v < t && v > -t).select(d, Scalar(0))).matrix();
      g.thresholds[c] += (v >= t).select(d, Scalar(0)).sum() - (v <= -t).select(d, Scalar(0)).sum();
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Fully connected layer.

template <typename Scalar>
struct LinearParams {
  int out_features = 0;
  int in_features = 0;
  Vector<Scalar> weight;  // out x in, row-major
  Vector<Scalar> bias;

  static LinearParams zeros(int out, int in) {
    return {out, in, Vector<Scalar>::Zero(Eigen::Index(out) * in), Vector<Scalar>::Zero(out)};
  }
  Eigen::Map<const RowMatrix<Scalar>> matrix() const { return {weight.data(), out_features, in_features}; }
  Eigen::Map<RowMatrix<Scalar>> matrix() { return {weight.data(), out_features, in_features}; }

  template <typename Other>
  LinearParams<Other> cast() const {
    return {out_features, in_features, weight.template cast<Other>(), bias.template cast<Other>()};
  }
};

// features: one row per batch item.
template <typename Scalar>
RowMatrix<Scalar> linear(const RowMatrix<Scalar>& features, const LinearParams<Scalar>& p) {
  if (features.cols() != p.in_features)
    throw ValidationError("linear: feature length " + std::to_string(features.cols()) +
                          " does not match weight columns " + std::to_string(p.in_features));
  RowMatrix<Scalar> out = features * p.matrix().transpose();
  out.rowwise() += p.bias.transpose();
  return out;
}

template <typename Scalar>
Vector<Scalar> linear(const Vector<Scalar>& features, const LinearParams<Scalar>& p) {
  RowMatrix<Scalar> row = features.transpose();
  return linear(row, p).row(0).transpose();
}

template <typename Scalar>
struct LinearGrads {
  RowMatrix<Scalar> input;
  Vector<Scalar> weight;
  Vector<Scalar> bias;
};

template <typename Scalar>
LinearGrads<Scalar> linear_backward(const RowMatrix<Scalar>& features, const LinearParams<Scalar>& p,
                                    const RowMatrix<Scalar>& grad_out) {
  LinearGrads<Scalar> g;
  g.input = grad_out * p.matrix();
  RowMatrix<Scalar> gw = grad_out.transpose() * features;
  g.weight = Eigen::Map<const Vector<Scalar>>(gw.data(), gw.size());
  g.bias = grad_out.colwise().sum().transpose();
  return g;
}

// ---------------------------------------------------------------------------
// Softmax + cross-entropy.

template <typename Scalar>
struct SoftmaxLoss {
  Scalar loss;
  Vector<Scalar> probs;
};

template <typename Scalar>
Vector<Scalar> softmax(const Vector<Scalar>& logits) {
  const Scalar top = logits.maxCoeff();
  Vector<Scalar> e = (logits.array() - top).exp().matrix();
  return e / e.sum();
}

template <typename Scalar>
SoftmaxLoss<Scalar> softmax_cross_entropy(const Vector<Scalar>& logits, int label) {
  if (label < 0 || label >= logits.size())
    throw ValidationError("softmax_cross_entropy: label " + std::to_string(label) +
                          " out of range [0, " + std::to_string(logits.size()) + ")");
  const Scalar top = logits.maxCoeff();
  const Vector<Scalar> shifted = (logits.array() - top).matrix();
  const Scalar log_z = std::log(shifted.array().exp().sum());
  SoftmaxLoss<Scalar> out;
  out.loss = log_z - shifted[label];
  out.probs = (shifted.array() - log_z).exp().matrix();
  return out;
}

// d loss / d logits = probs - onehot(label)
template <typename Scalar>
Vector<Scalar> softmax_cross_entropy_grad(const Vector<Scalar>& probs, int label) {
  Vector<Scalar> g = probs;
  g[label] -= Scalar(1);
  return g;
}

}  // namespace nrsteg
