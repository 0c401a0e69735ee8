#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ulw/error.hpp"

namespace ulw {

/// Dense rank-3 array in (batch, channel, length) order. Each (b, c) row is
/// contiguous, so kernels iterate over length in the innermost loop.
template <typename Real>
class Tensor3 {
 public:
  using value_type = Real;

  Tensor3() = default;
  Tensor3(std::size_t batch, std::size_t channels, std::size_t length, Real fill = Real{0})
      : batch_(batch), channels_(channels), length_(length), data_(batch * channels * length, fill) {}

  std::size_t batch() const noexcept { return batch_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t length() const noexcept { return length_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real& operator()(std::size_t b, std::size_t c, std::size_t l) noexcept {
    return data_[(b * channels_ + c) * length_ + l];
  }
  const Real& operator()(std::size_t b, std::size_t c, std::size_t l) const noexcept {
    return data_[(b * channels_ + c) * length_ + l];
  }

  std::span<Real> row(std::size_t b, std::size_t c) noexcept {
    return {data_.data() + (b * channels_ + c) * length_, length_};
  }
  std::span<const Real> row(std::size_t b, std::size_t c) const noexcept {
    return {data_.data() + (b * channels_ + c) * length_, length_};
  }

  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }

  bool same_shape(const Tensor3& other) const noexcept {
    return batch_ == other.batch_ && channels_ == other.channels_ && length_ == other.length_;
  }

  std::string shape_string() const {
    return "[" + std::to_string(batch_) + "," + std::to_string(channels_) + "," +
           std::to_string(length_) + "]";
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t batch_ = 0;
  std::size_t channels_ = 0;
  std::size_t length_ = 0;
  std::vector<Real> data_;
};

/// Row-major matrix; used for pooled features, dense activations and logits.
template <typename Real>
class Tensor2 {
 public:
  using value_type = Real;

  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, Real fill = Real{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  Real& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const Real& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<Real> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const Real> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }

  bool same_shape(const Tensor2& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

template <typename Range>
bool all_finite(const Range& values) {
  return std::all_of(std::begin(values), std::end(values), [](auto v) { return std::isfinite(v); });
}

/// Output length of a SAME-padded window op: ceil(length / stride).
constexpr std::size_t same_length(std::size_t length, std::size_t stride) noexcept {
  return (length + stride - 1) / stride;
}

/// Left padding of a SAME-padded window op. The total pad is split evenly
/// with any odd remainder placed on the right.
constexpr std::size_t same_pad_left(std::size_t length, std::size_t window, std::size_t stride) noexcept {
  const std::size_t out = same_length(length, stride);
  if (out == 0) return 0;
  const std::size_t needed = (out - 1) * stride + window;
  return needed > length ? (needed - length) / 2 : 0;
}

}  // namespace ulw
