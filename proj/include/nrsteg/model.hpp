#pragma once

// The 15-layer noise-residual CNN: residual conv layer, six conv+BN layers,
// two steganalysis residual blocks with x - F(x) mapping, four average
// pooling layers and a 144 -> 3 classifier.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <tuple>
#include <vector>

#include "nrsteg/filter_bank.hpp"
#include "nrsteg/numerics.hpp"
#include "nrsteg/rng.hpp"

namespace nrsteg {

inline constexpr int kInputSize = 224;
inline constexpr int kClasses = 3;
inline constexpr int kFeatures = 144;  // 16 * 3 * 3

inline constexpr std::array<const char*, kClasses> kClassNames{"regular", "deep-stego", "MSU-stego"};

template <typename Scalar>
struct ConvBnLayer {
  ConvParams<Scalar> conv;
  BatchNormParams<Scalar> bn;

  template <typename Other>
  ConvBnLayer<Other> cast() const {
    return {conv.template cast<Other>(), bn.template cast<Other>()};
  }
};

template <typename Scalar>
struct StegoResBlockParams {
  ConvParams<Scalar> conv_a;  // 3x3 same padding
  BatchNormParams<Scalar> bn_a;
  ConvParams<Scalar> conv_b;
  BatchNormParams<Scalar> bn_b;

  template <typename Other>
  StegoResBlockParams<Other> cast() const {
    return {conv_a.template cast<Other>(), bn_a.template cast<Other>(), conv_b.template cast<Other>(),
            bn_b.template cast<Other>()};
  }
};

template <typename Scalar>
struct Model {
  FilterBank<Scalar> bank;
  ConvBnLayer<Scalar> conv1, conv2, conv3;
  StegoResBlockParams<Scalar> res1, res2;
  ConvBnLayer<Scalar> conv4, conv5, conv6;
  LinearParams<Scalar> fc;

  template <typename Other>
  Model<Other> cast() const {
    return {bank.template cast<Other>(), conv1.template cast<Other>(), conv2.template cast<Other>(),
            conv3.template cast<Other>(),  res1.template cast<Other>(),  res2.template cast<Other>(),
            conv4.template cast<Other>(), conv5.template cast<Other>(), conv6.template cast<Other>(),
            fc.template cast<Other>()};
  }
};

inline constexpr PoolWindow kPool1{2, 2, 2};
inline constexpr PoolWindow kPool2{3, 3, 2};
inline constexpr PoolWindow kPool3{3, 3, 2};
inline constexpr PoolWindow kPool4{2, 2, 2};

// ---------------------------------------------------------------------------
// Layer table and parameter enumeration.

struct LayerInfo {
  int index;            // 1-based row of the architecture table
  const char* name;
  const char* param_prefix;  // empty for parameter-free layers
};

inline constexpr std::array<LayerInfo, 15> kLayers{{
    {1, "residual convolutional layer", "resconv"},
    {2, "convolutional layer 1", "conv1"},
    {3, "convolutional layer 2", "conv2"},
    {4, "convolutional layer 3", "conv3"},
    {5, "average pooling layer 1", ""},
    {6, "steganalysis residual block 1", "res1"},
    {7, "average pooling layer 2", ""},
    {8, "steganalysis residual block 2", "res2"},
    {9, "average pooling layer 3", ""},
    {10, "convolutional layer 4", "conv4"},
    {11, "average pooling layer 4", ""},
    {12, "convolutional layer 5", "conv5"},
    {13, "convolutional layer 6", "conv6"},
    {14, "fully connected layer", "fc"},
    {15, "softmax layer", ""},
}};

enum class ParamRole {
  Weight,     // conv kernels and fc weights: trained, weight-decayed
  Bias,       // trained, no decay
  Norm,       // bn gamma/beta: trained, no decay
  Threshold,  // ptlu thresholds: trained, no decay
  Buffer,     // bn running statistics: not trained
};

inline bool is_trainable(ParamRole r) { return r != ParamRole::Buffer; }
inline bool is_decayed(ParamRole r) { return r == ParamRole::Weight; }

namespace detail {

template <typename Fn, typename... C>
void visit_conv(Fn& fn, const std::string& name, C&... convs) {
  const auto& c = std::get<0>(std::tie(convs...));
  fn(name + ".weight", ParamRole::Weight,
     std::vector<std::uint32_t>{std::uint32_t(c.out_channels), std::uint32_t(c.in_channels),
                                std::uint32_t(c.kernel_h), std::uint32_t(c.kernel_w)},
     convs.kernels...);
}

template <typename Fn, typename... B>
void visit_bn(Fn& fn, const std::string& name, B&... bns) {
  const std::vector<std::uint32_t> dims{std::uint32_t(std::get<0>(std::tie(bns...)).gamma.size())};
  fn(name + ".gamma", ParamRole::Norm, dims, bns.gamma...);
  fn(name + ".beta", ParamRole::Norm, dims, bns.beta...);
  fn(name + ".running_mean", ParamRole::Buffer, dims, bns.running_mean...);
  fn(name + ".running_var", ParamRole::Buffer, dims, bns.running_var...);
}

}  // namespace detail

/// Calls fn(name, role, dims, tensor_of_each_model...) for every stored tensor,
/// in checkpoint order. Passing several structurally identical models (e.g.
/// parameters, gradients, optimizer accumulators) visits them in lockstep.
template <typename Fn, typename... Ms>
void for_each_tensor(Fn&& fn, Ms&... ms) {
  detail::visit_conv(fn, "resconv", ms.bank.conv...);
  detail::visit_bn(fn, "resconv.bn", ms.bank.bn...);
  fn(std::string("resconv.ptlu.threshold"), ParamRole::Threshold,
     std::vector<std::uint32_t>{std::uint32_t(kBankSize)}, ms.bank.thresholds...);
  auto conv_bn = [&](const std::string& name, auto&... layers) {
    detail::visit_conv(fn, name, layers.conv...);
    detail::visit_bn(fn, name + ".bn", layers.bn...);
  };
  auto block = [&](const std::string& name, auto&... blocks) {
    detail::visit_conv(fn, name + ".conv_a", blocks.conv_a...);
    detail::visit_bn(fn, name + ".bn_a", blocks.bn_a...);
    detail::visit_conv(fn, name + ".conv_b", blocks.conv_b...);
    detail::visit_bn(fn, name + ".bn_b", blocks.bn_b...);
  };
  conv_bn("conv1", ms.conv1...);
  conv_bn("conv2", ms.conv2...);
  conv_bn("conv3", ms.conv3...);
  block("res1", ms.res1...);
  block("res2", ms.res2...);
  conv_bn("conv4", ms.conv4...);
  conv_bn("conv5", ms.conv5...);
  conv_bn("conv6", ms.conv6...);
  const auto& fc = std::get<0>(std::tie(ms...)).fc;
  fn(std::string("fc.weight"), ParamRole::Weight,
     std::vector<std::uint32_t>{std::uint32_t(fc.out_features), std::uint32_t(fc.in_features)},
     ms.fc.weight...);
  fn(std::string("fc.bias"), ParamRole::Bias, std::vector<std::uint32_t>{std::uint32_t(fc.out_features)},
     ms.fc.bias...);
}

// ---------------------------------------------------------------------------
// Initialization.

namespace detail {

// N(0, gain / fan_in) weights.
template <typename Scalar>
void fan_in_init(Vector<Scalar>& w, int fan_in, double gain, std::uint64_t seed) {
  SplitMix64 g(seed);
  const double sd = std::sqrt(gain / fan_in);
  for (auto& v : w) v = Scalar(sd * standard_normal(g));
}

template <typename Scalar>
ConvBnLayer<Scalar> make_conv_bn(int out, int in, int k, int stride, std::uint64_t seed) {
  ConvBnLayer<Scalar> l{ConvParams<Scalar>::zeros(out, in, k, k, stride, Padding::Valid),
                        BatchNormParams<Scalar>::identity(out)};
  fan_in_init(l.conv.kernels, in * k * k, 2.0, seed);
  return l;
}

template <typename Scalar>
StegoResBlockParams<Scalar> make_block(int channels, std::uint64_t seed) {
  StegoResBlockParams<Scalar> b{ConvParams<Scalar>::zeros(channels, channels, 3, 3, 1, Padding::Same),
                                BatchNormParams<Scalar>::identity(channels),
                                ConvParams<Scalar>::zeros(channels, channels, 3, 3, 1, Padding::Same),
                                BatchNormParams<Scalar>::identity(channels)};
  fan_in_init(b.conv_a.kernels, channels * 9, 2.0, derive_seed(seed, 1));
  fan_in_init(b.conv_b.kernels, channels * 9, 2.0, derive_seed(seed, 2));
  return b;
}

}  // namespace detail

/// Deterministic initialization: SRM filter bank, He (gain 2) fan-in normal
/// conv kernels, gain-1 fan-in classifier weights, identity batch norms.
template <typename Scalar>
Model<Scalar> init_model(std::uint64_t seed) {
  Model<Scalar> m;
  m.bank = build_srm_bank<Scalar>(seed);
  m.conv1 = detail::make_conv_bn<Scalar>(34, 34, 3, 1, derive_seed(seed, 2));
  m.conv2 = detail::make_conv_bn<Scalar>(34, 34, 3, 1, derive_seed(seed, 3));
  m.conv3 = detail::make_conv_bn<Scalar>(34, 34, 3, 1, derive_seed(seed, 4));
  m.res1 = detail::make_block<Scalar>(34, derive_seed(seed, 6));
  m.res2 = detail::make_block<Scalar>(34, derive_seed(seed, 8));
  m.conv4 = detail::make_conv_bn<Scalar>(32, 34, 3, 1, derive_seed(seed, 10));
  m.conv5 = detail::make_conv_bn<Scalar>(16, 32, 3, 1, derive_seed(seed, 12));
  m.conv6 = detail::make_conv_bn<Scalar>(16, 16, 3, 3, derive_seed(seed, 13));
  m.fc = LinearParams<Scalar>::zeros(kClasses, kFeatures);
  detail::fan_in_init(m.fc.weight, kFeatures, 1.0, derive_seed(seed, 14));
  return m;
}

// Same structure with every tensor zeroed (gradient / accumulator storage).
template <typename Scalar>
Model<Scalar> zeros_like(const Model<Scalar>& m) {
  Model<Scalar> z = m;
  for_each_tensor([](const std::string&, ParamRole, const std::vector<std::uint32_t>&, Vector<Scalar>& t) {
    t.setZero();
  }, z);
  return z;
}

// ---------------------------------------------------------------------------
// Shape chain.

struct ShapeStep {
  std::string layer;
  Shape shape;
};

template <typename Scalar>
std::vector<ShapeStep> shape_chain(const Model<Scalar>& m, Shape input = {1, 1, kInputSize, kInputSize}) {
  std::vector<ShapeStep> chain{{"input", input}};
  auto push = [&](const char* name, Shape s) {
    chain.push_back({name, s});
    return s;
  };
  Shape s = push("resconv", conv_output_shape(input, m.bank.conv));
  s = push("conv1", conv_output_shape(s, m.conv1.conv));
  s = push("conv2", conv_output_shape(s, m.conv2.conv));
  s = push("conv3", conv_output_shape(s, m.conv3.conv));
  s = push("pool1", pool_output_shape(s, kPool1));
  s = push("res1", conv_output_shape(conv_output_shape(s, m.res1.conv_a), m.res1.conv_b));
  s = push("pool2", pool_output_shape(s, kPool2));
  s = push("res2", conv_output_shape(conv_output_shape(s, m.res2.conv_a), m.res2.conv_b));
  s = push("pool3", pool_output_shape(s, kPool3));
  s = push("conv4", conv_output_shape(s, m.conv4.conv));
  s = push("pool4", pool_output_shape(s, kPool4));
  s = push("conv5", conv_output_shape(s, m.conv5.conv));
  s = push("conv6", conv_output_shape(s, m.conv6.conv));
  push("fc", Shape{s.batch, m.fc.out_features, 1, 1});
  return chain;
}

// ---------------------------------------------------------------------------
// Forward / backward.

template <typename Scalar>
struct ConvStage {
  Tensor<Scalar> conv_out;
  BatchNormCache<Scalar> bn;
  Tensor<Scalar> act_out;
};

template <typename Scalar>
struct BlockStage {
  Tensor<Scalar> za;
  BatchNormCache<Scalar> bn_a;
  Tensor<Scalar> ha;
  Tensor<Scalar> zb;
  BatchNormCache<Scalar> bn_b;
  Tensor<Scalar> out;
};

// Activations retained by a training forward pass.
template <typename Scalar>
struct ForwardCache {
  Tensor<Scalar> input;
  ConvStage<Scalar> resconv, conv1, conv2, conv3;
  Tensor<Scalar> pool1;
  BlockStage<Scalar> res1;
  Tensor<Scalar> pool2;
  BlockStage<Scalar> res2;
  Tensor<Scalar> pool3;
  ConvStage<Scalar> conv4;
  Tensor<Scalar> pool4;
  ConvStage<Scalar> conv5, conv6;
  RowMatrix<Scalar> features;
};

namespace detail {

template <typename Scalar, typename BN>
Tensor<Scalar> run_bn(const Tensor<Scalar>& z, BN& bn, Mode mode, BatchNormCache<Scalar>* cache) {
  if (mode == Mode::Train) {
    if constexpr (std::is_const_v<BN>) {
      throw ValidationError("training forward needs a mutable model");
    } else {
      return batch_norm_train(z, bn, cache);
    }
  }
  return batch_norm_eval(z, bn, cache);
}

template <typename Scalar, typename Conv, typename BN>
Tensor<Scalar> run_conv_stage(const Tensor<Scalar>& x, const Conv& conv, BN& bn, Activation act,
                              const std::type_identity_t<Vector<Scalar>>* thresholds, Mode mode, ConvStage<Scalar>* st,
                              int threads) {
  BatchNormCache<Scalar> bn_cache;
  Tensor<Scalar> z = conv2d(x, conv, threads);
  Tensor<Scalar> a = activate(run_bn(z, bn, mode, &bn_cache), act, thresholds);
  if (st) {
    st->conv_out = std::move(z);
    st->bn = std::move(bn_cache);
    st->act_out = a;
  }
  return a;
}

template <typename Scalar, typename Block>
Tensor<Scalar> run_block(const Tensor<Scalar>& x, Block& b, Mode mode, BlockStage<Scalar>* st, int threads) {
  if (x.channels() != b.conv_a.in_channels)
    throw ValidationError("stego_residual_block: channel mismatch: input has " +
                          std::to_string(x.channels()) + ", block expects " +
                          std::to_string(b.conv_a.in_channels));
  BatchNormCache<Scalar> ca, cb;
  Tensor<Scalar> za = conv2d(x, b.conv_a, threads);
  Tensor<Scalar> ha = activate(run_bn(za, b.bn_a, mode, &ca), Activation::Relu);
  Tensor<Scalar> zb = conv2d(ha, b.conv_b, threads);
  Tensor<Scalar> f = run_bn(zb, b.bn_b, mode, &cb);
  Tensor<Scalar> out(x.shape());
  out.values() = (x.values() - f.values()).cwiseMax(Scalar(0));
  if (st) *st = {std::move(za), std::move(ca), std::move(ha), std::move(zb), std::move(cb), out};
  return out;
}

template <typename Scalar, typename M>
RowMatrix<Scalar> run_forward(M& m, const Tensor<Scalar>& x, Mode mode, ForwardCache<Scalar>* c, int threads) {
  if (x.channels() != 1 || x.height() != kInputSize || x.width() != kInputSize)
    throw ValidationError("forward: expected input 1x224x224 per item, got " + std::to_string(x.channels()) +
                          "x" + std::to_string(x.height()) + "x" + std::to_string(x.width()));
  auto stage = [&](ConvStage<Scalar> ForwardCache<Scalar>::*field) -> ConvStage<Scalar>* {
    return c ? &(c->*field) : nullptr;
  };
  auto keep = [&](Tensor<Scalar> ForwardCache<Scalar>::*field, const Tensor<Scalar>& t) {
    if (c) c->*field = t;
  };
  if (c) c->input = x;
  auto h = run_conv_stage(x, m.bank.conv, m.bank.bn, Activation::Ptlu, &m.bank.thresholds, mode,
                          stage(&ForwardCache<Scalar>::resconv), threads);
  h = run_conv_stage(h, m.conv1.conv, m.conv1.bn, Activation::Relu, nullptr, mode,
                     stage(&ForwardCache<Scalar>::conv1), threads);
  h = run_conv_stage(h, m.conv2.conv, m.conv2.bn, Activation::Relu, nullptr, mode,
                     stage(&ForwardCache<Scalar>::conv2), threads);
  h = run_conv_stage(h, m.conv3.conv, m.conv3.bn, Activation::Relu, nullptr, mode,
                     stage(&ForwardCache<Scalar>::conv3), threads);
  h = avg_pool2d(h, kPool1);
  keep(&ForwardCache<Scalar>::pool1, h);
  h = run_block(h, m.res1, mode, c ? &c->res1 : nullptr, threads);
  h = avg_pool2d(h, kPool2);
  keep(&ForwardCache<Scalar>::pool2, h);
  h = run_block(h, m.res2, mode, c ? &c->res2 : nullptr, threads);
  h = avg_pool2d(h, kPool3);
  keep(&ForwardCache<Scalar>::pool3, h);
  h = run_conv_stage(h, m.conv4.conv, m.conv4.bn, Activation::Relu, nullptr, mode,
                     stage(&ForwardCache<Scalar>::conv4), threads);
  h = avg_pool2d(h, kPool4);
  keep(&ForwardCache<Scalar>::pool4, h);
  h = run_conv_stage(h, m.conv5.conv, m.conv5.bn, Activation::Relu, nullptr, mode,
                     stage(&ForwardCache<Scalar>::conv5), threads);
  h = run_conv_stage(h, m.conv6.conv, m.conv6.bn, Activation::Relu, nullptr, mode,
                     stage(&ForwardCache<Scalar>::conv6), threads);
  if (h.shape().item() != m.fc.in_features)
    throw ValidationError("forward: classifier expects " + std::to_string(m.fc.in_features) +
                          " features, feature extractor produced " + std::to_string(h.shape().item()));
  RowMatrix<Scalar> features = Eigen::Map<const RowMatrix<Scalar>>(h.data(), h.batch(), m.fc.in_features);
  RowMatrix<Scalar> logits = linear(features, m.fc);
  if (c) c->features = std::move(features);
  if (!logits.allFinite()) throw ValidationError("forward: non-finite logits");
  return logits;
}

template <typename Scalar>
Tensor<Scalar> conv_stage_backward(const Tensor<Scalar>& stage_input, const ConvParams<Scalar>& conv,
                                   const BatchNormParams<Scalar>& bn, Activation act,
                                   const std::type_identity_t<Vector<Scalar>>* thresholds, const ConvStage<Scalar>& st,
                                   const Tensor<Scalar>& grad_out, ConvParams<Scalar>& g_conv,
                                   BatchNormParams<Scalar>& g_bn, std::type_identity_t<Vector<Scalar>>* g_thresholds,
                                   bool need_input_grad, int threads) {
  auto ga = activate_backward(st.act_out, act, thresholds, grad_out);
  if (g_thresholds) *g_thresholds += ga.thresholds;
  auto gb = batch_norm_backward(st.conv_out, bn, st.bn, ga.input);
  g_bn.gamma += gb.gamma;
  g_bn.beta += gb.beta;
  auto gc = conv2d_backward(stage_input, conv, gb.input, need_input_grad, threads);
  g_conv.kernels += gc.kernels;
  return std::move(gc.input);
}

template <typename Scalar>
Tensor<Scalar> block_backward(const Tensor<Scalar>& x, const StegoResBlockParams<Scalar>& b,
                              const BlockStage<Scalar>& st, const Tensor<Scalar>& grad_out,
                              StegoResBlockParams<Scalar>& g, int threads) {
  Tensor<Scalar> gs(x.shape());
  gs.values() = (st.out.values().array() > Scalar(0)).select(grad_out.values().array(), Scalar(0)).matrix();
  Tensor<Scalar> gf(x.shape());
  gf.values() = -gs.values();
  auto gbb = batch_norm_backward(st.zb, b.bn_b, st.bn_b, gf);
  g.bn_b.gamma += gbb.gamma;
  g.bn_b.beta += gbb.beta;
  auto gcb = conv2d_backward(st.ha, b.conv_b, gbb.input, true, threads);
  g.conv_b.kernels += gcb.kernels;
  auto gha = activate_backward(st.ha, Activation::Relu, static_cast<const Vector<Scalar>*>(nullptr), gcb.input);
  auto gba = batch_norm_backward(st.za, b.bn_a, st.bn_a, gha.input);
  g.bn_a.gamma += gba.gamma;
  g.bn_a.beta += gba.beta;
  auto gca = conv2d_backward(x, b.conv_a, gba.input, true, threads);
  g.conv_a.kernels += gca.kernels;
  gs.values() += gca.input.values();
  return gs;
}

}  // namespace detail

/// Training-capable forward pass. In Mode::Train batch norms use batch
/// statistics and update their running estimates; pass `cache` to enable backward().
template <typename Scalar>
RowMatrix<Scalar> forward(Model<Scalar>& m, const Tensor<Scalar>& batch, Mode mode,
                          ForwardCache<Scalar>* cache = nullptr, int threads = 1) {
  return detail::run_forward(m, batch, mode, cache, threads);
}

// Eval-mode forward; never mutates the model.
template <typename Scalar>
RowMatrix<Scalar> infer(const Model<Scalar>& m, const Tensor<Scalar>& batch, int threads = 1) {
  return detail::run_forward(m, batch, Mode::Eval, static_cast<ForwardCache<Scalar>*>(nullptr), threads);
}

template <typename Scalar>
Tensor<Scalar> stego_residual_block(const Tensor<Scalar>& x, StegoResBlockParams<Scalar>& p, Mode mode) {
  return detail::run_block(x, p, mode, static_cast<BlockStage<Scalar>*>(nullptr), 1);
}

/// Gradients of a scalar loss w.r.t. every trainable tensor, given d loss / d logits.
/// Buffers (running statistics) in the result stay zero.
template <typename Scalar>
Model<Scalar> backward(const Model<Scalar>& m, const ForwardCache<Scalar>& c, const RowMatrix<Scalar>& grad_logits,
                       Tensor<Scalar>* grad_input = nullptr, int threads = 1) {
  using namespace detail;
  Model<Scalar> g = zeros_like(m);
  auto gl = linear_backward(c.features, m.fc, grad_logits);
  g.fc.weight += gl.weight;
  g.fc.bias += gl.bias;
  Tensor<Scalar> gh(c.conv6.act_out.shape());
  gh.values() = Eigen::Map<const Vector<Scalar>>(gl.input.data(), gl.input.size());

  const Vector<Scalar>* none = nullptr;
  gh = conv_stage_backward(c.conv5.act_out, m.conv6.conv, m.conv6.bn, Activation::Relu, none, c.conv6, gh,
                           g.conv6.conv, g.conv6.bn, nullptr, true, threads);
  gh = conv_stage_backward(c.pool4, m.conv5.conv, m.conv5.bn, Activation::Relu, none, c.conv5, gh,
                           g.conv5.conv, g.conv5.bn, nullptr, true, threads);
  gh = avg_pool2d_backward(c.conv4.act_out.shape(), kPool4, gh);
  gh = conv_stage_backward(c.pool3, m.conv4.conv, m.conv4.bn, Activation::Relu, none, c.conv4, gh,
                           g.conv4.conv, g.conv4.bn, nullptr, true, threads);
  gh = avg_pool2d_backward(c.res2.out.shape(), kPool3, gh);
  gh = block_backward(c.pool2, m.res2, c.res2, gh, g.res2, threads);
  gh = avg_pool2d_backward(c.res1.out.shape(), kPool2, gh);
  gh = block_backward(c.pool1, m.res1, c.res1, gh, g.res1, threads);
  gh = avg_pool2d_backward(c.conv3.act_out.shape(), kPool1, gh);
  gh = conv_stage_backward(c.conv2.act_out, m.conv3.conv, m.conv3.bn, Activation::Relu, none, c.conv3, gh,
                           g.conv3.conv, g.conv3.bn, nullptr, true, threads);
  gh = conv_stage_backward(c.conv1.act_out, m.conv2.conv, m.conv2.bn, Activation::Relu, none, c.conv2, gh,
                           g.conv2.conv, g.conv2.bn, nullptr, true, threads);
  gh = conv_stage_backward(c.resconv.act_out, m.conv1.conv, m.conv1.bn, Activation::Relu, none, c.conv1, gh,
                           g.conv1.conv, g.conv1.bn, nullptr, true, threads);
  gh = conv_stage_backward(c.input, m.bank.conv, m.bank.bn, Activation::Ptlu, &m.bank.thresholds, c.resconv,
                           gh, g.bank.conv, g.bank.bn, &g.bank.thresholds, grad_input != nullptr, threads);
  if (grad_input) *grad_input = std::move(gh);
  return g;
}

template <typename Scalar>
struct LossAndGrad {
  double loss = 0;              // mean cross-entropy over the batch
  RowMatrix<Scalar> probs;      // batch x 3
  Model<Scalar> grads;
};

/// One training-mode forward/backward over a labelled batch.
template <typename Scalar>
LossAndGrad<Scalar> loss_and_grad(Model<Scalar>& m, const Tensor<Scalar>& batch, const std::vector<int>& labels,
                                  int threads = 1, Tensor<Scalar>* grad_input = nullptr) {
  if (int(labels.size()) != batch.batch())
    throw ValidationError("loss_and_grad: " + std::to_string(labels.size()) + " labels for batch of " +
                          std::to_string(batch.batch()));
  ForwardCache<Scalar> cache;
  RowMatrix<Scalar> logits = forward(m, batch, Mode::Train, &cache, threads);
  LossAndGrad<Scalar> out;
  out.probs.resize(logits.rows(), logits.cols());
  RowMatrix<Scalar> grad(logits.rows(), logits.cols());
  const Scalar inv_n = Scalar(1) / Scalar(batch.batch());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto sce = softmax_cross_entropy<Scalar>(logits.row(i).transpose(), labels[i]);
    out.loss += double(sce.loss);
    out.probs.row(i) = sce.probs.transpose();
    grad.row(i) = softmax_cross_entropy_grad(sce.probs, labels[i]).transpose() * inv_n;
  }
  out.loss /= double(batch.batch());
  out.grads = backward(m, cache, grad, grad_input, threads);
  return out;
}

template <typename Scalar>
RowMatrix<Scalar> probabilities(const RowMatrix<Scalar>& logits) {
  RowMatrix<Scalar> p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) p.row(i) = softmax<Scalar>(logits.row(i).transpose()).transpose();
  return p;
}

// argmax with ties resolved toward the lowest class index.
template <typename Derived>
int argmax_lowest(const Eigen::MatrixBase<Derived>& row) {
  int best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j)
    if (row(j) > row(best)) best = int(j);
  return best;
}

template <typename Scalar>
std::vector<int> predict(const Model<Scalar>& m, const Tensor<Scalar>& batch, int threads = 1) {
  const RowMatrix<Scalar> probs = probabilities(infer(m, batch, threads));
  std::vector<int> classes(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) classes[i] = argmax_lowest(probs.row(i));
  return classes;
}

}  // namespace nrsteg
