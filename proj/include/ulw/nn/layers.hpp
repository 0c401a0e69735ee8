#pragma once

// Batch normalization, activations, pooling, dense and loss kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ulw/rng.hpp"
#include "ulw/tensor.hpp"

namespace ulw::nn {

enum class Mode { Train, Infer };

// ---------------------------------------------------------------- batchnorm

template <typename Real>
struct BatchNormParams {
  std::vector<Real> gamma;
  std::vector<Real> beta;
  std::vector<Real> running_mean;
  std::vector<Real> running_var;
  double epsilon = 1e-3;
  double momentum = 0.99;  // running = momentum * running + (1 - momentum) * batch

  static BatchNormParams identity(std::size_t channels, double epsilon = 1e-3, double momentum = 0.99) {
    return {std::vector<Real>(channels, Real{1}), std::vector<Real>(channels, Real{0}),
            std::vector<Real>(channels, Real{0}), std::vector<Real>(channels, Real{1}), epsilon, momentum};
  }
  std::size_t channels() const { return gamma.size(); }
};

template <typename Real>
struct BatchNormCache {
  Tensor3<Real> normalized;     // x_hat
  std::vector<Real> inv_std;    // per channel
  Mode mode = Mode::Train;
};

/// Train: per-channel statistics over (batch, length), running stats
/// updated. Infer: running statistics, parameters untouched.
template <typename Real>
Tensor3<Real> batchnorm_forward(const Tensor3<Real>& x, BatchNormParams<Real>& p, Mode mode,
                                BatchNormCache<Real>* cache = nullptr) {
  const std::size_t B = x.batch(), C = x.channels(), L = x.length();
  if (C != p.channels())
    fail(Errc::ShapeMismatch, "batchnorm expects " + std::to_string(p.channels()) + " channels, got " +
                                  std::to_string(C));
  const std::size_t count = B * L;
  if (mode == Mode::Train && count < 2)
    fail(Errc::DegenerateBatch, "batch statistics need at least two values per channel");

  Tensor3<Real> y(B, C, L);
  Tensor3<Real> xhat(B, C, L);
  std::vector<Real> inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    double mean, var;
    if (mode == Mode::Train) {
      double sum = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (const Real v : x.row(b, c)) sum += v;
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (const Real v : x.row(b, c)) sq += (v - mean) * (v - mean);
      var = sq / static_cast<double>(count);
      p.running_mean[c] = static_cast<Real>(p.momentum * p.running_mean[c] + (1.0 - p.momentum) * mean);
      p.running_var[c] = static_cast<Real>(p.momentum * p.running_var[c] + (1.0 - p.momentum) * var);
    } else {
      mean = p.running_mean[c];
      var = p.running_var[c];
    }
    const Real is = static_cast<Real>(1.0 / std::sqrt(var + p.epsilon));
    const Real m = static_cast<Real>(mean);
    inv_std[c] = is;
    const Real g = p.gamma[c], bt = p.beta[c];
    for (std::size_t b = 0; b < B; ++b) {
      const auto in = x.row(b, c);
      auto xh = xhat.row(b, c);
      auto out = y.row(b, c);
      for (std::size_t l = 0; l < L; ++l) {
        xh[l] = (in[l] - m) * is;
        out[l] = g * xh[l] + bt;
      }
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return y;
}

/// Train-mode caches get the full batch-statistics adjoint; Infer-mode
/// caches treat the statistics as constants.
template <typename Real>
Tensor3<Real> batchnorm_backward(const BatchNormCache<Real>& cache, const BatchNormParams<Real>& p,
                                 const Tensor3<Real>& grad_out, BatchNormParams<Real>& grad) {
  const auto& xhat = cache.normalized;
  if (!grad_out.same_shape(xhat))
    fail(Errc::ShapeMismatch, "batchnorm backward: grad " + grad_out.shape_string() + " does not match forward");
  const std::size_t B = xhat.batch(), C = xhat.channels(), L = xhat.length();
  const double count = static_cast<double>(B * L);

  Tensor3<Real> grad_x(B, C, L);
  for (std::size_t c = 0; c < C; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const auto g = grad_out.row(b, c);
      const auto xh = xhat.row(b, c);
      for (std::size_t l = 0; l < L; ++l) {
        sum_g += g[l];
        sum_gx += g[l] * xh[l];
      }
    }
    grad.beta[c] += static_cast<Real>(sum_g);
    grad.gamma[c] += static_cast<Real>(sum_gx);

    const Real scale = p.gamma[c] * cache.inv_std[c];
    if (cache.mode == Mode::Infer) {
      for (std::size_t b = 0; b < B; ++b) {
        const auto g = grad_out.row(b, c);
        auto gx = grad_x.row(b, c);
        for (std::size_t l = 0; l < L; ++l) gx[l] = scale * g[l];
      }
      continue;
    }
    const Real mean_g = static_cast<Real>(sum_g / count);
    const Real mean_gx = static_cast<Real>(sum_gx / count);
    for (std::size_t b = 0; b < B; ++b) {
      const auto g = grad_out.row(b, c);
      const auto xh = xhat.row(b, c);
      auto gx = grad_x.row(b, c);
      for (std::size_t l = 0; l < L; ++l) gx[l] = scale * (g[l] - mean_g - xh[l] * mean_gx);
    }
  }
  return grad_x;
}

// --------------------------------------------------------------------- relu

template <typename Real>
void relu_inplace(std::span<Real> x) {
  for (auto& v : x) v = v > Real{0} ? v : Real{0};
}

template <typename Real>
Tensor3<Real> relu_forward(Tensor3<Real> x) {
  relu_inplace(x.values());
  return x;
}

/// `activated` is either the forward input or output; both give the same
/// mask because the subgradient at 0 is 0.
template <typename Container>
Container relu_backward(const Container& activated, Container grad) {
  auto g = grad.values();
  const auto a = activated.values();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(a[i] > 0)) g[i] = 0;
  return grad;
}

// ------------------------------------------------------------------ maxpool

struct MaxPoolCache {
  std::size_t input_length = 0;
  std::vector<std::uint32_t> argmax;  // per output element, index into the input row
};

/// SAME-padded max pooling; padding is -inf so it never wins. Ties go to the
/// first maximum in the window.
template <typename Real>
Tensor3<Real> maxpool1d_forward(const Tensor3<Real>& x, std::size_t pool_size, std::size_t stride,
                                MaxPoolCache* cache = nullptr) {
  if (pool_size == 0 || stride == 0) fail(Errc::ShapeMismatch, "pool size and stride must be positive");
  const std::size_t B = x.batch(), C = x.channels(), L = x.length();
  const std::size_t out_len = same_length(L, stride);
  const std::size_t pad = same_pad_left(L, pool_size, stride);
  Tensor3<Real> y(B, C, out_len);
  if (cache) {
    cache->input_length = L;
    cache->argmax.assign(B * C * out_len, 0);
  }
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const auto in = x.row(b, c);
      auto out = y.row(b, c);
      for (std::size_t o = 0; o < out_len; ++o) {
        const auto start = static_cast<std::ptrdiff_t>(o * stride) - static_cast<std::ptrdiff_t>(pad);
        Real best = -std::numeric_limits<Real>::infinity();
        std::size_t arg = 0;
        bool found = false;
        for (std::size_t k = 0; k < pool_size; ++k) {
          const auto i = start + static_cast<std::ptrdiff_t>(k);
          if (i < 0 || i >= static_cast<std::ptrdiff_t>(L)) continue;
          const Real v = in[static_cast<std::size_t>(i)];
          if (!found || v > best) {
            best = v;
            arg = static_cast<std::size_t>(i);
            found = true;
          }
        }
        out[o] = best;
        if (cache) cache->argmax[(b * C + c) * out_len + o] = static_cast<std::uint32_t>(arg);
      }
    }
  }
  return y;
}

template <typename Real>
Tensor3<Real> maxpool1d_backward(const MaxPoolCache& cache, const Tensor3<Real>& grad_out) {
  const std::size_t B = grad_out.batch(), C = grad_out.channels(), out_len = grad_out.length();
  if (cache.argmax.size() != B * C * out_len) fail(Errc::ShapeMismatch, "maxpool backward: cache mismatch");
  Tensor3<Real> grad_x(B, C, cache.input_length);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const auto g = grad_out.row(b, c);
      auto gx = grad_x.row(b, c);
      const auto* arg = cache.argmax.data() + (b * C + c) * out_len;
      for (std::size_t o = 0; o < out_len; ++o) gx[arg[o]] += g[o];
    }
  return grad_x;
}

// ------------------------------------------------------- global avg pooling

template <typename Real>
Tensor2<Real> global_avg_pool_forward(const Tensor3<Real>& x) {
  Tensor2<Real> y(x.batch(), x.channels());
  for (std::size_t b = 0; b < x.batch(); ++b)
    for (std::size_t c = 0; c < x.channels(); ++c) {
      Real sum{0};
      for (const Real v : x.row(b, c)) sum += v;
      y(b, c) = sum / static_cast<Real>(x.length());
    }
  return y;
}

template <typename Real>
Tensor3<Real> global_avg_pool_backward(const Tensor2<Real>& grad_out, std::size_t length) {
  Tensor3<Real> grad_x(grad_out.rows(), grad_out.cols(), length);
  for (std::size_t b = 0; b < grad_out.rows(); ++b)
    for (std::size_t c = 0; c < grad_out.cols(); ++c) {
      const Real g = grad_out(b, c) / static_cast<Real>(length);
      for (auto& v : grad_x.row(b, c)) v = g;
    }
  return grad_x;
}

// -------------------------------------------------------------------- dense

template <typename Real>
struct DenseParams {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<Real> weight;  // in x out, index i * out + o
  std::vector<Real> bias;

  static DenseParams zeros(std::size_t in, std::size_t out) {
    return {in, out, std::vector<Real>(in * out), std::vector<Real>(out)};
  }
};

/// y = x W + b
template <typename Real>
Tensor2<Real> dense_forward(const Tensor2<Real>& x, const DenseParams<Real>& p) {
  if (x.cols() != p.in)
    fail(Errc::ShapeMismatch, "dense expects width " + std::to_string(p.in) + ", got " + std::to_string(x.cols()));
  Tensor2<Real> y(x.rows(), p.out);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto out = y.row(r);
    std::copy(p.bias.begin(), p.bias.end(), out.begin());
    const auto in = x.row(r);
    for (std::size_t i = 0; i < p.in; ++i) {
      const Real xi = in[i];
      const Real* w = p.weight.data() + i * p.out;
      for (std::size_t o = 0; o < p.out; ++o) out[o] += xi * w[o];
    }
  }
  return y;
}

template <typename Real>
Tensor2<Real> dense_backward(const Tensor2<Real>& input, const DenseParams<Real>& p, const Tensor2<Real>& grad_out,
                             DenseParams<Real>& grad) {
  if (grad_out.rows() != input.rows() || grad_out.cols() != p.out)
    fail(Errc::ShapeMismatch, "dense backward: grad does not match forward");
  Tensor2<Real> grad_x(input.rows(), p.in);
  for (std::size_t r = 0; r < input.rows(); ++r) {
    const auto g = grad_out.row(r);
    const auto in = input.row(r);
    auto gx = grad_x.row(r);
    for (std::size_t o = 0; o < p.out; ++o) grad.bias[o] += g[o];
    for (std::size_t i = 0; i < p.in; ++i) {
      const Real* w = p.weight.data() + i * p.out;
      Real* gw = grad.weight.data() + i * p.out;
      Real acc{0};
      for (std::size_t o = 0; o < p.out; ++o) {
        acc += w[o] * g[o];
        gw[o] += in[i] * g[o];
      }
      gx[i] = acc;
    }
  }
  return grad_x;
}

// ------------------------------------------------------------------ dropout

/// Inverted dropout. The mask holds 0 or 1/(1-rate) per element; empty in
/// Infer mode or at rate 0.
template <typename Real>
struct DropoutCache {
  std::vector<Real> mask;
};

template <typename Container>
Container dropout_forward(Container x, double rate, Mode mode, Rng& rng,
                          DropoutCache<typename Container::value_type>* cache = nullptr) {
  using Real = typename Container::value_type;
  if (cache) cache->mask.clear();
  if (mode == Mode::Infer || rate <= 0.0) return x;
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
  auto v = x.values();
  std::vector<Real> mask(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    mask[i] = rng.uniform() < rate ? Real{0} : keep_scale;
    v[i] *= mask[i];
  }
  if (cache) cache->mask = std::move(mask);
  return x;
}

template <typename Container>
Container dropout_backward(const DropoutCache<typename Container::value_type>& cache, Container grad) {
  if (cache.mask.empty()) return grad;
  auto g = grad.values();
  if (g.size() != cache.mask.size()) fail(Errc::ShapeMismatch, "dropout backward: mask mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= cache.mask[i];
  return grad;
}

// ------------------------------------------------------ softmax + x-entropy

template <typename Real>
Tensor2<Real> softmax(const Tensor2<Real>& logits) {
  Tensor2<Real> probs(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r);
    auto p = probs.row(r);
    const Real zmax = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) total += std::exp(static_cast<double>(z[c] - zmax));
    for (std::size_t c = 0; c < z.size(); ++c)
      p[c] = static_cast<Real>(std::exp(static_cast<double>(z[c] - zmax)) / total);
  }
  return probs;
}

template <typename Real>
struct SoftmaxXent {
  double loss = 0.0;  // mean over the batch
  Tensor2<Real> probs;
};

template <typename Real>
SoftmaxXent<Real> softmax_xent_forward(const Tensor2<Real>& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) fail(Errc::ShapeMismatch, "one label per logit row required");
  SoftmaxXent<Real> out;
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r);
    const auto label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= z.size())
      fail(Errc::LabelOutOfRange, "label " + std::to_string(label) + " out of range");
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (const Real v : z) sum += std::exp(v - zmax);
    total += std::log(sum) - (z[static_cast<std::size_t>(label)] - zmax);
  }
  out.loss = logits.rows() ? total / static_cast<double>(logits.rows()) : 0.0;
  out.probs = softmax(logits);
  return out;
}

/// Gradient of the mean loss wrt the logits: (probs - onehot) / B.
template <typename Real>
Tensor2<Real> softmax_xent_backward(const Tensor2<Real>& probs, std::span<const int> labels) {
  Tensor2<Real> grad = probs;
  const Real inv_b = Real{1} / static_cast<Real>(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    auto g = grad.row(r);
    g[static_cast<std::size_t>(labels[r])] -= Real{1};
    for (auto& v : g) v *= inv_b;
  }
  return grad;
}

}  // namespace ulw::nn
