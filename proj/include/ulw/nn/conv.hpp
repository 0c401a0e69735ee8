#pragma once

// 1-D convolutions with SAME padding: the depthwise-separable form used
// throughout the network and the standard form for the conv-type ablation.
//
// Backward functions *accumulate* into the supplied gradient parameters so a
// layer shared across several input channels sums its contributions.

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "ulw/tensor.hpp"

namespace ulw::nn {

template <typename Real>
struct ConvCache {
  Tensor3<Real> input;
  Tensor3<Real> depthwise_out;  // separable only
};

/// Depthwise (multiplier 1) followed by pointwise mixing plus bias.
template <typename Real>
struct SepConvParams {
  std::size_t kernel = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t stride = 1;
  std::vector<Real> depthwise;  // kernel x in_channels, index k * M + m
  std::vector<Real> pointwise;  // in_channels x out_channels, index m * N + n
  std::vector<Real> bias;       // out_channels

  static SepConvParams zeros(std::size_t kernel, std::size_t in, std::size_t out, std::size_t stride) {
    return {kernel, in, out, stride, std::vector<Real>(kernel * in), std::vector<Real>(in * out),
            std::vector<Real>(out)};
  }
};

/// Dense K x M x N kernel plus bias.
template <typename Real>
struct ConvParams {
  std::size_t kernel = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t stride = 1;
  std::vector<Real> weight;  // index (k * M + m) * N + n
  std::vector<Real> bias;

  static ConvParams zeros(std::size_t kernel, std::size_t in, std::size_t out, std::size_t stride) {
    return {kernel, in, out, stride, std::vector<Real>(kernel * in * out), std::vector<Real>(out)};
  }
};

namespace detail {

inline void check_conv_input(std::size_t channels, std::size_t expected, std::size_t stride) {
  if (channels != expected)
    fail(Errc::ShapeMismatch, "conv expects " + std::to_string(expected) + " input channels, got " +
                                  std::to_string(channels));
  if (stride == 0) fail(Errc::ShapeMismatch, "conv stride must be positive");
}

/// Output positions o for which o * stride + shift lands inside [0, length).
struct TapRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline TapRange tap_range(std::size_t out_len, std::size_t stride, std::ptrdiff_t shift, std::size_t length) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const auto len = static_cast<std::ptrdiff_t>(length);
  std::ptrdiff_t lo = shift < 0 ? (-shift + s - 1) / s : 0;
  std::ptrdiff_t hi = len - shift <= 0 ? 0 : (len - shift + s - 1) / s;  // first o with o*s + shift >= len
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out_len));
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

inline std::ptrdiff_t tap_shift(std::size_t k, std::size_t pad) {
  return static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
}

/// out[o] += sum_k in[o*stride + k - pad] * w[k * w_step]  (zero padding)
template <typename Real>
void correlate_accumulate(std::span<const Real> in, const Real* w, std::size_t w_step, std::size_t kernel,
                          std::size_t stride, std::size_t pad, std::span<Real> out) {
  for (std::size_t k = 0; k < kernel; ++k) {
    const Real wk = w[k * w_step];
    const auto shift = tap_shift(k, pad);
    const auto [lo, hi] = tap_range(out.size(), stride, shift, in.size());
    const Real* src = in.data() + (static_cast<std::ptrdiff_t>(lo * stride) + shift);
    if (stride == 1) {
      for (std::size_t o = lo; o < hi; ++o) out[o] += wk * src[o - lo];
    } else {
      for (std::size_t o = lo; o < hi; ++o) out[o] += wk * src[(o - lo) * stride];
    }
  }
}

/// Adjoint of correlate_accumulate for one tap: returns sum in*g and adds
/// wk*g into grad_in.
template <typename Real>
Real correlate_adjoint(std::span<const Real> in, std::span<const Real> g, Real wk, std::size_t stride,
                       std::ptrdiff_t shift, std::span<Real> grad_in) {
  const auto [lo, hi] = tap_range(g.size(), stride, shift, in.size());
  const auto base = static_cast<std::ptrdiff_t>(lo * stride) + shift;
  const Real* src = in.data() + base;
  Real* dst = grad_in.data() + base;
  Real acc{0};
  for (std::size_t o = lo; o < hi; ++o) {
    const std::size_t j = (o - lo) * stride;
    acc += src[j] * g[o];
    dst[j] += wk * g[o];
  }
  return acc;
}

}  // namespace detail

template <typename Real>
Tensor3<Real> sepconv1d_forward(const Tensor3<Real>& x, const SepConvParams<Real>& p,
                                ConvCache<Real>* cache = nullptr) {
  detail::check_conv_input(x.channels(), p.in_channels, p.stride);
  const std::size_t B = x.batch(), M = p.in_channels, N = p.out_channels, L = x.length();
  const std::size_t out_len = same_length(L, p.stride);
  const std::size_t pad = same_pad_left(L, p.kernel, p.stride);

  Tensor3<Real> dw(B, M, out_len);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t m = 0; m < M; ++m)
      detail::correlate_accumulate<Real>(x.row(b, m), p.depthwise.data() + m, M, p.kernel, p.stride, pad,
                                         dw.row(b, m));

  Tensor3<Real> y(B, N, out_len);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t n = 0; n < N; ++n) {
      auto out = y.row(b, n);
      std::fill(out.begin(), out.end(), p.bias[n]);
      for (std::size_t m = 0; m < M; ++m) {
        const Real w = p.pointwise[m * N + n];
        const auto in = dw.row(b, m);
        for (std::size_t o = 0; o < out_len; ++o) out[o] += w * in[o];
      }
    }
  }
  if (cache) {
    cache->input = x;
    cache->depthwise_out = std::move(dw);
  }
  return y;
}

/// Returns grad wrt the input; parameter gradients are added into `grad`.
template <typename Real>
Tensor3<Real> sepconv1d_backward(const ConvCache<Real>& cache, const SepConvParams<Real>& p,
                                 const Tensor3<Real>& grad_out, SepConvParams<Real>& grad) {
  const auto& x = cache.input;
  const auto& dw = cache.depthwise_out;
  const std::size_t B = x.batch(), M = p.in_channels, N = p.out_channels, L = x.length();
  const std::size_t out_len = dw.length();
  if (grad_out.batch() != B || grad_out.channels() != N || grad_out.length() != out_len)
    fail(Errc::ShapeMismatch, "sepconv backward: grad " + grad_out.shape_string() + " does not match forward");
  const std::size_t pad = same_pad_left(L, p.kernel, p.stride);

  Tensor3<Real> grad_dw(B, M, out_len);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t n = 0; n < N; ++n) {
      const auto g = grad_out.row(b, n);
      Real bias_acc{0};
      for (std::size_t o = 0; o < out_len; ++o) bias_acc += g[o];
      grad.bias[n] += bias_acc;
      for (std::size_t m = 0; m < M; ++m) {
        const auto d = dw.row(b, m);
        Real acc{0};
        for (std::size_t o = 0; o < out_len; ++o) acc += d[o] * g[o];
        grad.pointwise[m * N + n] += acc;
        const Real w = p.pointwise[m * N + n];
        auto gd = grad_dw.row(b, m);
        for (std::size_t o = 0; o < out_len; ++o) gd[o] += w * g[o];
      }
    }
  }

  Tensor3<Real> grad_x(B, M, L);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t k = 0; k < p.kernel; ++k)
        grad.depthwise[k * M + m] += detail::correlate_adjoint<Real>(
            x.row(b, m), grad_dw.row(b, m), p.depthwise[k * M + m], p.stride, detail::tap_shift(k, pad),
            grad_x.row(b, m));
    }
  }
  return grad_x;
}

template <typename Real>
Tensor3<Real> conv1d_forward(const Tensor3<Real>& x, const ConvParams<Real>& p, ConvCache<Real>* cache = nullptr) {
  detail::check_conv_input(x.channels(), p.in_channels, p.stride);
  const std::size_t B = x.batch(), M = p.in_channels, N = p.out_channels, L = x.length();
  const std::size_t out_len = same_length(L, p.stride);
  const std::size_t pad = same_pad_left(L, p.kernel, p.stride);

  Tensor3<Real> y(B, N, out_len);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t n = 0; n < N; ++n) {
      auto out = y.row(b, n);
      std::fill(out.begin(), out.end(), p.bias[n]);
      for (std::size_t m = 0; m < M; ++m)
        detail::correlate_accumulate<Real>(x.row(b, m), p.weight.data() + m * N + n, M * N, p.kernel, p.stride,
                                           pad, out);
    }
  }
  if (cache) {
    cache->input = x;
    cache->depthwise_out = {};
  }
  return y;
}

template <typename Real>
Tensor3<Real> conv1d_backward(const ConvCache<Real>& cache, const ConvParams<Real>& p, const Tensor3<Real>& grad_out,
                              ConvParams<Real>& grad) {
  const auto& x = cache.input;
  const std::size_t B = x.batch(), M = p.in_channels, N = p.out_channels, L = x.length();
  const std::size_t out_len = same_length(L, p.stride);
  if (grad_out.batch() != B || grad_out.channels() != N || grad_out.length() != out_len)
    fail(Errc::ShapeMismatch, "conv backward: grad " + grad_out.shape_string() + " does not match forward");
  const std::size_t pad = same_pad_left(L, p.kernel, p.stride);

  Tensor3<Real> grad_x(B, M, L);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t n = 0; n < N; ++n) {
      const auto g = grad_out.row(b, n);
      Real bias_acc{0};
      for (std::size_t o = 0; o < out_len; ++o) bias_acc += g[o];
      grad.bias[n] += bias_acc;
      for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t k = 0; k < p.kernel; ++k) {
          const std::size_t widx = (k * M + m) * N + n;
          grad.weight[widx] += detail::correlate_adjoint<Real>(x.row(b, m), g, p.weight[widx], p.stride,
                                                               detail::tap_shift(k, pad), grad_x.row(b, m));
        }
      }
    }
  }
  return grad_x;
}

}  // namespace ulw::nn
