#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "gradcheck.hpp"
#include "ulw/model.hpp"

using namespace ulw;
using namespace ulw::nn;

namespace {

constexpr double kKernelTolerance = 1e-5;

Tensor3<double> random_tensor(std::size_t b, std::size_t c, std::size_t l, Rng& rng) {
  Tensor3<double> t(b, c, l);
  for (auto& v : t.values()) v = rng.uniform(-1, 1);
  return t;
}

template <typename Vec>
void randomize(Vec&& v, Rng& rng, double scale = 1.0) {
  for (auto& x : v) x = rng.uniform(-scale, scale);
}

template <typename T>
double dot(const T& a, const T& b) {
  double s = 0;
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return s;
}

/// Reference SAME correlation built on an explicitly padded copy.
/// TF SAME: out = ceil(L/s), total = max((out-1)*s + K - L, 0), left = total/2.
double padded_at(std::span<const double> row, std::size_t K, std::size_t s, std::ptrdiff_t idx) {
  const std::size_t L = row.size();
  const std::size_t out = (L + s - 1) / s;
  const std::ptrdiff_t need = static_cast<std::ptrdiff_t>((out - 1) * s + K) - static_cast<std::ptrdiff_t>(L);
  const std::ptrdiff_t left = std::max<std::ptrdiff_t>(need, 0) / 2;
  const std::ptrdiff_t j = idx - left;
  return j < 0 || j >= static_cast<std::ptrdiff_t>(L) ? 0.0 : row[static_cast<std::size_t>(j)];
}

Tensor3<double> reference_conv(const Tensor3<double>& x, const ConvParams<double>& p) {
  const std::size_t out = (x.length() + p.stride - 1) / p.stride;
  Tensor3<double> y(x.batch(), p.out_channels, out);
  for (std::size_t b = 0; b < x.batch(); ++b)
    for (std::size_t n = 0; n < p.out_channels; ++n)
      for (std::size_t o = 0; o < out; ++o) {
        double acc = p.bias[n];
        for (std::size_t m = 0; m < p.in_channels; ++m)
          for (std::size_t k = 0; k < p.kernel; ++k)
            acc += p.weight[(k * p.in_channels + m) * p.out_channels + n] *
                   padded_at(x.row(b, m), p.kernel, p.stride, static_cast<std::ptrdiff_t>(o * p.stride + k));
        y(b, n, o) = acc;
      }
  return y;
}

Tensor3<double> reference_sepconv(const Tensor3<double>& x, const SepConvParams<double>& p) {
  const std::size_t out = (x.length() + p.stride - 1) / p.stride;
  Tensor3<double> y(x.batch(), p.out_channels, out);
  for (std::size_t b = 0; b < x.batch(); ++b)
    for (std::size_t o = 0; o < out; ++o) {
      std::vector<double> depth(p.in_channels);
      for (std::size_t m = 0; m < p.in_channels; ++m)
        for (std::size_t k = 0; k < p.kernel; ++k)
          depth[m] += p.depthwise[k * p.in_channels + m] *
                      padded_at(x.row(b, m), p.kernel, p.stride, static_cast<std::ptrdiff_t>(o * p.stride + k));
      for (std::size_t n = 0; n < p.out_channels; ++n) {
        double acc = p.bias[n];
        for (std::size_t m = 0; m < p.in_channels; ++m) acc += p.pointwise[m * p.out_channels + n] * depth[m];
        y(b, n, o) = acc;
      }
    }
  return y;
}

}  // namespace

TEST(SamePadding, LengthsAndLeftPad) {
  EXPECT_EQ(same_length(3000, 2), 1500u);
  EXPECT_EQ(same_length(375, 2), 188u);
  EXPECT_EQ(same_length(1, 4), 1u);
  EXPECT_EQ(same_pad_left(10, 3, 1), 1u);  // total 2
  EXPECT_EQ(same_pad_left(10, 4, 1), 1u);  // total 3, extra on the right
  EXPECT_EQ(same_pad_left(10, 2, 2), 0u);  // total 0
  EXPECT_EQ(same_pad_left(5, 2, 2), 0u);   // total 1 goes right
  EXPECT_EQ(same_pad_left(7, 4, 2), 1u);   // total 3
}

class ConvShapes : public ::testing::TestWithParam<std::tuple<std::size_t, std::size_t, std::size_t>> {};

TEST_P(ConvShapes, ForwardMatchesReference) {
  const auto [K, stride, L] = GetParam();
  Rng rng(K * 100 + stride * 10 + L);
  const auto x = random_tensor(2, 3, L, rng);
  auto conv = ConvParams<double>::zeros(K, 3, 4, stride);
  auto sep = SepConvParams<double>::zeros(K, 3, 4, stride);
  randomize(conv.weight, rng);
  randomize(conv.bias, rng);
  randomize(sep.depthwise, rng);
  randomize(sep.pointwise, rng);
  randomize(sep.bias, rng);

  const auto yc = conv1d_forward(x, conv);
  const auto rc = reference_conv(x, conv);
  ASSERT_TRUE(yc.same_shape(rc));
  for (std::size_t i = 0; i < yc.size(); ++i) EXPECT_NEAR(yc.values()[i], rc.values()[i], 1e-12);

  const auto ys = sepconv1d_forward(x, sep);
  const auto rs = reference_sepconv(x, sep);
  ASSERT_TRUE(ys.same_shape(rs));
  for (std::size_t i = 0; i < ys.size(); ++i) EXPECT_NEAR(ys.values()[i], rs.values()[i], 1e-12);
}

TEST_P(ConvShapes, SepConvGradients) {
  const auto [K, stride, L] = GetParam();
  Rng rng(7 + K + stride + L);
  auto x = random_tensor(2, 3, L, rng);
  auto p = SepConvParams<double>::zeros(K, 3, 4, stride);
  randomize(p.depthwise, rng);
  randomize(p.pointwise, rng);
  randomize(p.bias, rng);
  ConvCache<double> cache;
  const auto y = sepconv1d_forward(x, p, &cache);
  const auto r = random_tensor(y.batch(), y.channels(), y.length(), rng);
  auto grad = SepConvParams<double>::zeros(K, 3, 4, stride);
  const auto gx = sepconv1d_backward(cache, p, r, grad);
  auto loss = [&] { return dot(sepconv1d_forward(x, p), r); };

  EXPECT_LT(gradcheck::check(x.values(), gx.values(), loss).max_rel, kKernelTolerance);
  EXPECT_LT(gradcheck::check(p.depthwise, grad.depthwise, loss).max_rel, kKernelTolerance);
  EXPECT_LT(gradcheck::check(p.pointwise, grad.pointwise, loss).max_rel, kKernelTolerance);
  EXPECT_LT(gradcheck::check(p.bias, grad.bias, loss).max_rel, kKernelTolerance);
}

TEST_P(ConvShapes, ConvGradients) {
  const auto [K, stride, L] = GetParam();
  Rng rng(99 + K + stride + L);
  auto x = random_tensor(2, 3, L, rng);
  auto p = ConvParams<double>::zeros(K, 3, 2, stride);
  randomize(p.weight, rng);
  randomize(p.bias, rng);
  ConvCache<double> cache;
  const auto y = conv1d_forward(x, p, &cache);
  const auto r = random_tensor(y.batch(), y.channels(), y.length(), rng);
  auto grad = ConvParams<double>::zeros(K, 3, 2, stride);
  const auto gx = conv1d_backward(cache, p, r, grad);
  auto loss = [&] { return dot(conv1d_forward(x, p), r); };

  EXPECT_LT(gradcheck::check(x.values(), gx.values(), loss).max_rel, kKernelTolerance);
  EXPECT_LT(gradcheck::check(p.weight, grad.weight, loss).max_rel, kKernelTolerance);
  EXPECT_LT(gradcheck::check(p.bias, grad.bias, loss).max_rel, kKernelTolerance);
}

INSTANTIATE_TEST_SUITE_P(Kernels, ConvShapes,
                         ::testing::Values(std::make_tuple(3, 1, 11), std::make_tuple(3, 2, 11),
                                           std::make_tuple(1, 2, 9), std::make_tuple(1, 4, 10),
                                           std::make_tuple(7, 1, 5), std::make_tuple(4, 2, 8),
                                           std::make_tuple(3, 1, 1), std::make_tuple(2, 4, 3)));

TEST(BatchNorm, TrainModeNormalizesAndUpdatesRunningStats) {
  Rng rng(3);
  const auto x = random_tensor(4, 2, 10, rng);
  auto p = BatchNormParams<double>::identity(2, 1e-3, 0.9);
  const auto y = batchnorm_forward(x, p, Mode::Train);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0, sq = 0, xmean = 0, xsq = 0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t l = 0; l < 10; ++l) {
        mean += y(b, c, l);
        xmean += x(b, c, l);
      }
    mean /= 40;
    xmean /= 40;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t l = 0; l < 10; ++l) {
        sq += (y(b, c, l) - mean) * (y(b, c, l) - mean);
        xsq += (x(b, c, l) - xmean) * (x(b, c, l) - xmean);
      }
    const double var = xsq / 40;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(sq / 40, var / (var + 1e-3), 1e-12);
    EXPECT_NEAR(p.running_mean[c], 0.1 * xmean, 1e-12);
    EXPECT_NEAR(p.running_var[c], 0.9 + 0.1 * var, 1e-12);
  }
}

TEST(BatchNorm, InferModeUsesRunningStats) {
  auto p = BatchNormParams<double>::identity(1, 0.0 + 1e-3);
  p.running_mean = {2.0};
  p.running_var = {4.0 - 1e-3};
  p.gamma = {3.0};
  p.beta = {1.0};
  Tensor3<double> x(1, 1, 2);
  x(0, 0, 0) = 4.0;
  x(0, 0, 1) = 0.0;
  const auto before = p;
  const auto y = batchnorm_forward(x, p, Mode::Infer);
  EXPECT_NEAR(y(0, 0, 0), 4.0, 1e-12);  // 3 * (4-2)/2 + 1
  EXPECT_NEAR(y(0, 0, 1), -2.0, 1e-12);
  EXPECT_EQ(p.running_mean, before.running_mean);
}

TEST(BatchNorm, DegenerateBatch) {
  auto p = BatchNormParams<double>::identity(1);
  Tensor3<double> x(1, 1, 1);
  EXPECT_THROW(batchnorm_forward(x, p, Mode::Train), Error);
  EXPECT_NO_THROW(batchnorm_forward(x, p, Mode::Infer));
}

TEST(BatchNorm, GradientsBothModes) {
  for (const Mode mode : {Mode::Train, Mode::Infer}) {
    Rng rng(mode == Mode::Train ? 1 : 2);
    auto x = random_tensor(3, 2, 5, rng);
    auto p = BatchNormParams<double>::identity(2);
    randomize(p.gamma, rng);
    randomize(p.beta, rng);
    p.running_mean = {0.3, -0.2};
    p.running_var = {0.7, 1.4};
    BatchNormCache<double> cache;
    auto fwd_params = p;
    const auto y = batchnorm_forward(x, fwd_params, mode, &cache);
    const auto r = random_tensor(3, 2, 5, rng);
    auto grad = BatchNormParams<double>::identity(2);
    grad.gamma = {0, 0};
    grad.beta = {0, 0};
    const auto gx = batchnorm_backward(cache, p, r, grad);
    auto loss = [&] {
      auto q = p;  // running stats must not drift between evaluations
      return dot(batchnorm_forward(x, q, mode), r);
    };
    EXPECT_LT(gradcheck::check(x.values(), gx.values(), loss).max_rel, kKernelTolerance);
    EXPECT_LT(gradcheck::check(p.gamma, grad.gamma, loss).max_rel, kKernelTolerance);
    EXPECT_LT(gradcheck::check(p.beta, grad.beta, loss).max_rel, kKernelTolerance);
  }
}

TEST(MaxPool, SamePaddingAndTies) {
  Tensor3<double> x(1, 1, 5);
  const double v[] = {1, 3, 3, -2, 5};
  std::copy(std::begin(v), std::end(v), x.values().begin());
  MaxPoolCache cache;
  const auto y = maxpool1d_forward(x, 2, 2, &cache);
  ASSERT_EQ(y.length(), 3u);
  EXPECT_EQ(y(0, 0, 0), 3);
  EXPECT_EQ(y(0, 0, 1), 3);
  EXPECT_EQ(y(0, 0, 2), 5);  // pad on the right is -inf
  EXPECT_EQ(cache.argmax[1], 2u);

  Tensor3<double> tie(1, 1, 2);
  tie(0, 0, 0) = 1;
  tie(0, 0, 1) = 1;
  maxpool1d_forward(tie, 2, 2, &cache);
  EXPECT_EQ(cache.argmax[0], 0u);  // first maximum wins

  Tensor3<double> neg(1, 1, 3, -7.0);
  const auto yn = maxpool1d_forward(neg, 4, 2);
  for (const double o : yn.values()) EXPECT_EQ(o, -7.0);
}

TEST(MaxPool, Gradients) {
  for (const auto& [pool, stride] : {std::pair<std::size_t, std::size_t>{2, 2}, {4, 2}, {4, 4}, {3, 1}}) {
    Rng rng(pool * 10 + stride);
    auto x = random_tensor(2, 2, 13, rng);
    MaxPoolCache cache;
    const auto y = maxpool1d_forward(x, pool, stride, &cache);
    const auto r = random_tensor(y.batch(), y.channels(), y.length(), rng);
    const auto gx = maxpool1d_backward(cache, r);
    auto loss = [&] { return dot(maxpool1d_forward(x, pool, stride), r); };
    EXPECT_LT(gradcheck::check(x.values(), gx.values(), loss).max_rel, kKernelTolerance);
  }
}

TEST(Relu, ForwardAndBackward) {
  Tensor3<double> x(1, 1, 4);
  x(0, 0, 0) = -1;
  x(0, 0, 1) = 0;
  x(0, 0, 2) = 2;
  x(0, 0, 3) = -0.5;
  const auto y = relu_forward(x);
  EXPECT_EQ(y(0, 0, 2), 2);
  EXPECT_EQ(y(0, 0, 0), 0);
  const auto g = relu_backward(y, Tensor3<double>(1, 1, 4, 1.0));
  EXPECT_EQ(g(0, 0, 0), 0);
  EXPECT_EQ(g(0, 0, 1), 0);
  EXPECT_EQ(g(0, 0, 2), 1);
}

TEST(GlobalAvgPool, Gradients) {
  Rng rng(5);
  auto x = random_tensor(2, 3, 7, rng);
  const auto y = global_avg_pool_forward(x);
  EXPECT_NEAR(y(1, 2), [&] {
    double s = 0;
    for (const double v : x.row(1, 2)) s += v;
    return s / 7;
  }(), 1e-15);
  Tensor2<double> r(2, 3);
  randomize(r.values(), rng);
  const auto gx = global_avg_pool_backward(r, 7);
  auto loss = [&] { return dot(global_avg_pool_forward(x), r); };
  EXPECT_LT(gradcheck::check(x.values(), gx.values(), loss).max_rel, kKernelTolerance);
}

TEST(Dense, ForwardAndGradients) {
  Rng rng(8);
  Tensor2<double> x(3, 4);
  randomize(x.values(), rng);
  auto p = DenseParams<double>::zeros(4, 2);
  randomize(p.weight, rng);
  randomize(p.bias, rng);
  const auto y = dense_forward(x, p);
  double expect = p.bias[1];
  for (std::size_t i = 0; i < 4; ++i) expect += x(2, i) * p.weight[i * 2 + 1];
  EXPECT_NEAR(y(2, 1), expect, 1e-14);

  Tensor2<double> r(3, 2);
  randomize(r.values(), rng);
  auto grad = DenseParams<double>::zeros(4, 2);
  const auto gx = dense_backward(x, p, r, grad);
  auto loss = [&] { return dot(dense_forward(x, p), r); };
  EXPECT_LT(gradcheck::check(x.values(), gx.values(), loss).max_rel, kKernelTolerance);
  EXPECT_LT(gradcheck::check(p.weight, grad.weight, loss).max_rel, kKernelTolerance);
  EXPECT_LT(gradcheck::check(p.bias, grad.bias, loss).max_rel, kKernelTolerance);
}

TEST(Dropout, InvertedScalingAndInferIdentity) {
  Rng rng(1);
  Tensor3<double> x(1, 1, 20000, 1.0);
  DropoutCache<double> cache;
  const auto y = dropout_forward(x, 0.3, Mode::Train, rng, &cache);
  double mean = 0;
  std::size_t zeros = 0;
  for (const double v : y.values()) {
    mean += v;
    zeros += v == 0.0;
    if (v != 0.0) {
      EXPECT_NEAR(v, 1.0 / 0.7, 1e-15);
    }
  }
  EXPECT_NEAR(mean / 20000, 1.0, 0.03);
  EXPECT_NEAR(double(zeros) / 20000, 0.3, 0.02);
  const auto g = dropout_backward(cache, Tensor3<double>(1, 1, 20000, 1.0));
  EXPECT_EQ(g.values()[0], y.values()[0]);
  EXPECT_EQ(dropout_forward(x, 0.3, Mode::Infer, rng), x);
}

TEST(SoftmaxXent, LossAndGradients) {
  Rng rng(12);
  Tensor2<double> z(3, 5);
  randomize(z.values(), rng, 3.0);
  const std::vector<int> labels{0, 4, 2};
  const auto out = softmax_xent_forward(z, labels);
  double expect = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) s += std::exp(z(r, c));
    expect += -std::log(std::exp(z(r, static_cast<std::size_t>(labels[r]))) / s);
  }
  EXPECT_NEAR(out.loss, expect / 3, 1e-14);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0;
    for (const double p : out.probs.row(r)) s += p;
    EXPECT_NEAR(s, 1.0, 1e-15);
  }
  const auto g = softmax_xent_backward(out.probs, labels);
  auto loss = [&] { return softmax_xent_forward(z, labels).loss; };
  EXPECT_LT(gradcheck::check(z.values(), g.values(), loss).max_rel, kKernelTolerance);

  const std::vector<int> bad{0, 5, 1};
  EXPECT_THROW(softmax_xent_forward(z, bad), Error);
}

TEST(SoftmaxXent, StableForLargeLogits) {
  Tensor2<double> z(1, 5);
  z(0, 0) = 1000;
  z(0, 1) = -1000;
  const std::vector<int> labels{0};
  const auto out = softmax_xent_forward(z, labels);
  EXPECT_TRUE(std::isfinite(out.loss));
  EXPECT_NEAR(out.loss, 0.0, 1e-12);
}
