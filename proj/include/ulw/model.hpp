#pragma once

// The sleep stager: a stack of dual-stream separable-convolution (DSSC) blocks
// shared across input channels, global average pooling, and a small dense
// head.
//
//   per channel c:  x_c -> DSSC_1 -> dropout -> ... -> DSSC_n -> GAP -> f_c
//   head:           concat(f_1..f_C) -> dense(64) -> relu -> dropout -> dense(5) -> softmax
//
// A DSSC block sums a main stream
//   conv(K) -> BN -> ReLU -> maxpool -> conv(K) -> BN -> ReLU -> maxpool
// with a shortcut of two kernel-1 convolutions strided by the pool stride.

#include <cmath>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "ulw/config.hpp"
#include "ulw/nn/conv.hpp"
#include "ulw/nn/layers.hpp"
#include "ulw/rng.hpp"
#include "ulw/tensor.hpp"

namespace ulw {

using nn::Mode;

template <typename Real>
using ConvLayer = std::variant<nn::SepConvParams<Real>, nn::ConvParams<Real>>;

template <typename Real>
ConvLayer<Real> make_conv(ConvType type, std::size_t kernel, std::size_t in, std::size_t out, std::size_t stride) {
  if (type == ConvType::Separable) return nn::SepConvParams<Real>::zeros(kernel, in, out, stride);
  return nn::ConvParams<Real>::zeros(kernel, in, out, stride);
}

template <typename Real>
Tensor3<Real> conv_forward(const ConvLayer<Real>& layer, const Tensor3<Real>& x, nn::ConvCache<Real>* cache) {
  if (const auto* sep = std::get_if<nn::SepConvParams<Real>>(&layer)) return nn::sepconv1d_forward(x, *sep, cache);
  return nn::conv1d_forward(x, std::get<nn::ConvParams<Real>>(layer), cache);
}

template <typename Real>
Tensor3<Real> conv_backward(const nn::ConvCache<Real>& cache, const ConvLayer<Real>& layer,
                            const Tensor3<Real>& grad_out, ConvLayer<Real>& grad) {
  if (const auto* sep = std::get_if<nn::SepConvParams<Real>>(&layer))
    return nn::sepconv1d_backward(cache, *sep, grad_out, std::get<nn::SepConvParams<Real>>(grad));
  return nn::conv1d_backward(cache, std::get<nn::ConvParams<Real>>(layer), grad_out,
                             std::get<nn::ConvParams<Real>>(grad));
}

template <typename Real>
struct DsscParams {
  ConvLayer<Real> main_conv1;
  ConvLayer<Real> main_conv2;
  nn::BatchNormParams<Real> bn1;
  nn::BatchNormParams<Real> bn2;
  ConvLayer<Real> shortcut_conv1;
  ConvLayer<Real> shortcut_conv2;
  std::size_t pool_size = 2;
  std::size_t pool_stride = 2;
};

template <typename Real>
struct ModelParams {
  using value_type = Real;

  ModelConfig config;
  std::vector<DsscParams<Real>> extractor;  // one copy, shared by every input channel
  nn::DenseParams<Real> head_hidden;
  nn::DenseParams<Real> head_out;
};

// ------------------------------------------------------------ param views

enum class ParamRole {
  ConvKernel,
  ConvBias,
  BnGamma,
  BnBeta,
  BnRunningMean,
  BnRunningVar,
  DenseWeight,
  DenseBias,
};

constexpr bool is_trainable(ParamRole role) {
  return role != ParamRole::BnRunningMean && role != ParamRole::BnRunningVar;
}

template <typename T>
struct ParamView {
  std::string name;
  std::span<T> values;
  ParamRole role;
  std::size_t fan_in = 0;  // for Glorot initialization of weight arrays
  std::size_t fan_out = 0;

  bool trainable() const { return is_trainable(role); }
};

/// Every array of the model in a fixed order (also the checkpoint order).
template <typename Model>
auto param_views(Model& params) {
  using Real = typename std::remove_const_t<Model>::value_type;
  using T = std::conditional_t<std::is_const_v<Model>, const Real, Real>;
  std::vector<ParamView<T>> views;
  auto add = [&](std::string name, auto& values, ParamRole role, std::size_t fan_in, std::size_t fan_out) {
    views.push_back({std::move(name), std::span<T>(values), role, fan_in, fan_out});
  };
  auto add_conv = [&](const std::string& name, auto& layer) {
    std::visit(
        [&](auto& conv) {
          const auto K = conv.kernel, M = conv.in_channels, N = conv.out_channels;
          if constexpr (requires { conv.depthwise; }) {
            add(name + ".depthwise", conv.depthwise, ParamRole::ConvKernel, K * M, K);
            add(name + ".pointwise", conv.pointwise, ParamRole::ConvKernel, M, N);
          } else {
            add(name + ".kernel", conv.weight, ParamRole::ConvKernel, K * M, K * N);
          }
          add(name + ".bias", conv.bias, ParamRole::ConvBias, 0, 0);
        },
        layer);
  };
  auto add_bn = [&](const std::string& name, auto& bn) {
    add(name + ".gamma", bn.gamma, ParamRole::BnGamma, 0, 0);
    add(name + ".beta", bn.beta, ParamRole::BnBeta, 0, 0);
    add(name + ".running_mean", bn.running_mean, ParamRole::BnRunningMean, 0, 0);
    add(name + ".running_var", bn.running_var, ParamRole::BnRunningVar, 0, 0);
  };
  for (std::size_t i = 0; i < params.extractor.size(); ++i) {
    auto& blk = params.extractor[i];
    const std::string prefix = "block" + std::to_string(i + 1);
    add_conv(prefix + ".main_conv1", blk.main_conv1);
    add_bn(prefix + ".bn1", blk.bn1);
    add_conv(prefix + ".main_conv2", blk.main_conv2);
    add_bn(prefix + ".bn2", blk.bn2);
    add_conv(prefix + ".shortcut_conv1", blk.shortcut_conv1);
    add_conv(prefix + ".shortcut_conv2", blk.shortcut_conv2);
  }
  add("head_hidden.weight", params.head_hidden.weight, ParamRole::DenseWeight, params.head_hidden.in,
      params.head_hidden.out);
  add("head_hidden.bias", params.head_hidden.bias, ParamRole::DenseBias, 0, 0);
  add("head_out.weight", params.head_out.weight, ParamRole::DenseWeight, params.head_out.in, params.head_out.out);
  add("head_out.bias", params.head_out.bias, ParamRole::DenseBias, 0, 0);
  return views;
}

template <typename Real>
std::size_t trainable_count(const ModelParams<Real>& params) {
  std::size_t total = 0;
  for (const auto& v : param_views(params))
    if (v.trainable()) total += v.values.size();
  return total;
}

template <typename Real>
std::size_t extractor_storage(const ModelParams<Real>& params) {
  std::size_t total = 0;
  for (const auto& v : param_views(params))
    if (v.name.starts_with("block")) total += v.values.size();
  return total;
}

// ----------------------------------------------------------- construction

/// All arrays sized for `config` and zero-filled (BN included).
template <typename Real>
ModelParams<Real> allocate_params(const ModelConfig& config) {
  config.validate();
  ModelParams<Real> p;
  p.config = config;
  std::size_t in = 1;
  for (const std::size_t f : config.filters) {
    DsscParams<Real> blk;
    blk.main_conv1 = make_conv<Real>(config.conv_type, config.kernel_size, in, f, 1);
    blk.main_conv2 = make_conv<Real>(config.conv_type, config.kernel_size, f, f, 1);
    blk.shortcut_conv1 = make_conv<Real>(config.conv_type, 1, in, f, config.pool_stride);
    blk.shortcut_conv2 = make_conv<Real>(config.conv_type, 1, f, f, config.pool_stride);
    for (auto* bn : {&blk.bn1, &blk.bn2}) {
      *bn = nn::BatchNormParams<Real>::identity(f, config.bn_epsilon, config.bn_momentum);
      std::fill(bn->gamma.begin(), bn->gamma.end(), Real{0});
      std::fill(bn->running_var.begin(), bn->running_var.end(), Real{0});
    }
    blk.pool_size = config.pool_size;
    blk.pool_stride = config.pool_stride;
    p.extractor.push_back(std::move(blk));
    in = f;
  }
  p.head_hidden = nn::DenseParams<Real>::zeros(config.concat_width(), config.head_hidden);
  p.head_out = nn::DenseParams<Real>::zeros(config.head_hidden, config.n_classes);
  return p;
}

/// Glorot-uniform weights, zero biases and beta, unit gamma, running
/// statistics (0, 1). Deterministic in `seed`.
template <typename Real>
ModelParams<Real> build_model(const ModelConfig& config, std::uint64_t seed) {
  auto p = allocate_params<Real>(config);
  Rng rng(seed);
  for (auto& view : param_views(p)) {
    switch (view.role) {
      case ParamRole::ConvKernel:
      case ParamRole::DenseWeight: {
        const double limit = std::sqrt(6.0 / static_cast<double>(view.fan_in + view.fan_out));
        for (auto& v : view.values) v = static_cast<Real>(rng.uniform(-limit, limit));
        break;
      }
      case ParamRole::BnGamma:
      case ParamRole::BnRunningVar:
        std::fill(view.values.begin(), view.values.end(), Real{1});
        break;
      default:
        std::fill(view.values.begin(), view.values.end(), Real{0});
    }
  }
  return p;
}

template <typename To, typename From>
ModelParams<To> convert_params(const ModelParams<From>& src) {
  auto dst = allocate_params<To>(src.config);
  auto sv = param_views(src);
  auto dv = param_views(dst);
  for (std::size_t i = 0; i < sv.size(); ++i)
    for (std::size_t j = 0; j < sv[i].values.size(); ++j) dv[i].values[j] = static_cast<To>(sv[i].values[j]);
  return dst;
}

// ------------------------------------------------------------- DSSC block

template <typename Real>
struct DsscCache {
  nn::ConvCache<Real> conv1, conv2, shortcut1, shortcut2;
  nn::BatchNormCache<Real> bn1, bn2;
  Tensor3<Real> relu1, relu2;  // post-activation, for the ReLU mask
  nn::MaxPoolCache pool1, pool2;
};

template <typename Real>
Tensor3<Real> dssc_main_forward(const Tensor3<Real>& x, DsscParams<Real>& p, Mode mode,
                                DsscCache<Real>* cache = nullptr) {
  auto h = conv_forward(p.main_conv1, x, cache ? &cache->conv1 : nullptr);
  h = nn::relu_forward(nn::batchnorm_forward(h, p.bn1, mode, cache ? &cache->bn1 : nullptr));
  if (cache) cache->relu1 = h;
  h = nn::maxpool1d_forward(h, p.pool_size, p.pool_stride, cache ? &cache->pool1 : nullptr);
  h = conv_forward(p.main_conv2, h, cache ? &cache->conv2 : nullptr);
  h = nn::relu_forward(nn::batchnorm_forward(h, p.bn2, mode, cache ? &cache->bn2 : nullptr));
  if (cache) cache->relu2 = h;
  return nn::maxpool1d_forward(h, p.pool_size, p.pool_stride, cache ? &cache->pool2 : nullptr);
}

template <typename Real>
Tensor3<Real> dssc_shortcut_forward(const Tensor3<Real>& x, const DsscParams<Real>& p,
                                    DsscCache<Real>* cache = nullptr) {
  auto s = conv_forward(p.shortcut_conv1, x, cache ? &cache->shortcut1 : nullptr);
  return conv_forward(p.shortcut_conv2, s, cache ? &cache->shortcut2 : nullptr);
}

/// Output length is ceil(ceil(L / stride) / stride) for both streams.
template <typename Real>
Tensor3<Real> dssc_forward(const Tensor3<Real>& x, DsscParams<Real>& p, Mode mode,
                           DsscCache<Real>* cache = nullptr) {
  auto main = dssc_main_forward(x, p, mode, cache);
  const auto shortcut = dssc_shortcut_forward(x, p, cache);
  if (!main.same_shape(shortcut))
    fail(Errc::ShapeMismatch, "DSSC main " + main.shape_string() + " vs shortcut " + shortcut.shape_string());
  auto out = main.values();
  const auto add = shortcut.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += add[i];
  return main;
}

template <typename Real>
Tensor3<Real> dssc_backward(const DsscCache<Real>& cache, const DsscParams<Real>& p, const Tensor3<Real>& grad_out,
                            DsscParams<Real>& grad) {
  auto g = nn::maxpool1d_backward(cache.pool2, grad_out);
  g = nn::relu_backward(cache.relu2, std::move(g));
  g = nn::batchnorm_backward(cache.bn2, p.bn2, g, grad.bn2);
  g = conv_backward(cache.conv2, p.main_conv2, g, grad.main_conv2);
  g = nn::maxpool1d_backward(cache.pool1, g);
  g = nn::relu_backward(cache.relu1, std::move(g));
  g = nn::batchnorm_backward(cache.bn1, p.bn1, g, grad.bn1);
  g = conv_backward(cache.conv1, p.main_conv1, g, grad.main_conv1);

  auto s = conv_backward(cache.shortcut2, p.shortcut_conv2, grad_out, grad.shortcut_conv2);
  s = conv_backward(cache.shortcut1, p.shortcut_conv1, s, grad.shortcut_conv1);

  auto gx = g.values();
  const auto gs = s.values();
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gs[i];
  return g;
}

// ------------------------------------------------------------- extractor

template <typename Real>
struct ExtractorCache {
  std::vector<DsscCache<Real>> blocks;
  std::vector<nn::DropoutCache<Real>> dropouts;  // after blocks 1..n-1
  std::size_t pooled_length = 0;
};

/// Shared feature extractor for one channel: x_c [B, 1, T] -> [B, F_n].
template <typename Real>
Tensor2<Real> extractor_forward(const Tensor3<Real>& x, ModelParams<Real>& params, Mode mode, Rng& rng,
                                ExtractorCache<Real>* cache = nullptr) {
  const auto n = params.extractor.size();
  if (cache) {
    cache->blocks.assign(n, {});
    cache->dropouts.assign(n > 0 ? n - 1 : 0, {});
  }
  Tensor3<Real> h = x;
  for (std::size_t i = 0; i < n; ++i) {
    h = dssc_forward(h, params.extractor[i], mode, cache ? &cache->blocks[i] : nullptr);
    if (i + 1 < n)
      h = nn::dropout_forward(std::move(h), params.config.dropout_block, mode, rng,
                              cache ? &cache->dropouts[i] : nullptr);
  }
  if (cache) cache->pooled_length = h.length();
  return nn::global_avg_pool_forward(h);
}

template <typename Real>
Tensor3<Real> extractor_backward(const ExtractorCache<Real>& cache, const ModelParams<Real>& params,
                                 const Tensor2<Real>& grad_features, ModelParams<Real>& grad) {
  auto g = nn::global_avg_pool_backward(grad_features, cache.pooled_length);
  for (std::size_t i = params.extractor.size(); i-- > 0;) {
    if (i + 1 < params.extractor.size()) g = nn::dropout_backward(cache.dropouts[i], std::move(g));
    g = dssc_backward(cache.blocks[i], params.extractor[i], g, grad.extractor[i]);
  }
  return g;
}

// ---------------------------------------------------------------- network

template <typename Real>
struct ModelCache {
  std::vector<ExtractorCache<Real>> channels;
  Tensor2<Real> features;       // [B, C * F_n]
  Tensor2<Real> hidden;         // post-ReLU head activation
  nn::DropoutCache<Real> head_dropout;
  Tensor2<Real> hidden_dropped;
};

template <typename Real>
struct ForwardOutput {
  Tensor2<Real> logits;
  Tensor2<Real> probs;
};

/// Channel c of x as a [B, 1, T] tensor.
template <typename Real>
Tensor3<Real> slice_channel(const Tensor3<Real>& x, std::size_t c) {
  Tensor3<Real> out(x.batch(), 1, x.length());
  for (std::size_t b = 0; b < x.batch(); ++b) {
    const auto src = x.row(b, c);
    std::copy(src.begin(), src.end(), out.row(b, 0).begin());
  }
  return out;
}

/// Full forward pass. Channels are processed one at a time through the
/// shared extractor, in channel order; in Train mode each channel forms its
/// own batch for BN statistics and running stats are updated per channel.
template <typename Real>
ForwardOutput<Real> model_forward(ModelParams<Real>& params, const Tensor3<Real>& x, Mode mode, Rng& rng,
                                  ModelCache<Real>* cache = nullptr) {
  const auto& cfg = params.config;
  if (x.channels() != cfg.n_input_channels)
    fail(Errc::ShapeMismatch, "model expects " + std::to_string(cfg.n_input_channels) + " channels, got " +
                                  std::to_string(x.channels()));
  const std::size_t B = x.batch(), C = x.channels(), F = cfg.feature_width();
  if (cache) cache->channels.assign(C, {});

  Tensor2<Real> features(B, C * F);
  for (std::size_t c = 0; c < C; ++c) {
    const auto f = extractor_forward(slice_channel(x, c), params, mode, rng, cache ? &cache->channels[c] : nullptr);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < F; ++j) features(b, c * F + j) = f(b, j);
  }

  auto hidden = nn::dense_forward(features, params.head_hidden);
  nn::relu_inplace(hidden.values());
  auto dropped = nn::dropout_forward(hidden, cfg.dropout_head, mode, rng, cache ? &cache->head_dropout : nullptr);
  ForwardOutput<Real> out;
  out.logits = nn::dense_forward(dropped, params.head_out);
  out.probs = nn::softmax(out.logits);
  if (cache) {
    cache->features = std::move(features);
    cache->hidden = std::move(hidden);
    cache->hidden_dropped = std::move(dropped);
  }
  return out;
}

/// Gradients of the loss wrt every parameter given dLoss/dlogits.
/// Extractor gradients are the sum of the per-channel contributions.
template <typename Real>
ModelParams<Real> model_backward(const ModelParams<Real>& params, const ModelCache<Real>& cache,
                                 const Tensor2<Real>& grad_logits) {
  auto grad = allocate_params<Real>(params.config);
  auto g = nn::dense_backward(cache.hidden_dropped, params.head_out, grad_logits, grad.head_out);
  g = nn::dropout_backward(cache.head_dropout, std::move(g));
  g = nn::relu_backward(cache.hidden, std::move(g));
  g = nn::dense_backward(cache.features, params.head_hidden, g, grad.head_hidden);

  const std::size_t B = g.rows(), F = params.config.feature_width();
  for (std::size_t c = 0; c < cache.channels.size(); ++c) {
    Tensor2<Real> gf(B, F);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < F; ++j) gf(b, j) = g(b, c * F + j);
    extractor_backward(cache.channels[c], params, gf, grad);
  }
  return grad;
}

/// Infer-mode class probabilities; parameters are left untouched.
template <typename Real>
Tensor2<Real> predict_probs(const ModelParams<Real>& params, const Tensor3<Real>& x) {
  auto local = params;
  Rng unused(0);
  return model_forward(local, x, Mode::Infer, unused).probs;
}

}  // namespace ulw
