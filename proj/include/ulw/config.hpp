#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ulw/error.hpp"

namespace ulw {

enum class ConvType { Separable, Standard };

inline std::string_view to_string(ConvType t) { return t == ConvType::Separable ? "separable" : "standard"; }

inline ConvType parse_conv_type(std::string_view text) {
  if (text == "separable") return ConvType::Separable;
  if (text == "standard") return ConvType::Standard;
  fail(Errc::BadConfig, "conv_type must be 'separable' or 'standard', got '" + std::string(text) + "'");
}

/// Architecture hyperparameters. Defaults are the published configuration:
/// three blocks of (8, 16, 32) filters, kernel 3, pool 2, four input channels
/// of 30 s at 100 Hz.
struct ModelConfig {
  std::size_t n_blocks = 3;
  std::size_t kernel_size = 3;
  std::size_t pool_size = 2;
  std::size_t pool_stride = 2;  // also the stride of each shortcut conv
  std::vector<std::size_t> filters{8, 16, 32};
  ConvType conv_type = ConvType::Separable;
  std::size_t n_input_channels = 4;
  std::size_t input_length = 3000;
  std::size_t head_hidden = 64;
  std::size_t n_classes = 5;
  double dropout_block = 0.1;
  double dropout_head = 0.3;
  double bn_epsilon = 1e-3;
  double bn_momentum = 0.99;

  std::size_t feature_width() const { return filters.empty() ? 0 : filters.back(); }
  std::size_t concat_width() const { return n_input_channels * feature_width(); }

  void validate() const {
    if (n_blocks == 0) fail(Errc::BadConfig, "n_blocks must be at least 1");
    if (filters.size() != n_blocks)
      fail(Errc::BadConfig, "filters has " + std::to_string(filters.size()) + " entries but n_blocks is " +
                                std::to_string(n_blocks));
    for (std::size_t i = 0; i < filters.size(); ++i) {
      if (filters[i] == 0) fail(Errc::BadConfig, "filter counts must be positive");
      if (i > 0 && filters[i] <= filters[i - 1]) fail(Errc::BadConfig, "filters must be strictly increasing");
    }
    if (kernel_size == 0) fail(Errc::BadConfig, "kernel_size must be positive");
    if (pool_size == 0) fail(Errc::BadConfig, "pool_size must be positive");
    if (pool_stride != 1 && pool_stride != 2 && pool_stride != 4)
      fail(Errc::BadConfig, "pool_stride must be 1, 2 or 4");
    if (n_input_channels == 0) fail(Errc::BadConfig, "n_input_channels must be positive");
    if (input_length == 0) fail(Errc::BadConfig, "input_length must be positive");
    if (head_hidden == 0) fail(Errc::BadConfig, "head_hidden must be positive");
    if (n_classes != 5) fail(Errc::BadConfig, "n_classes must be 5 (Wake, N1, N2, N3, REM)");
    if (!(dropout_block >= 0 && dropout_block < 1) || !(dropout_head >= 0 && dropout_head < 1))
      fail(Errc::BadConfig, "dropout rates must lie in [0, 1)");
    if (!(bn_epsilon > 0) || !(bn_momentum >= 0 && bn_momentum < 1))
      fail(Errc::BadConfig, "bn_epsilon must be positive and bn_momentum in [0, 1)");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TrainConfig {
  double base_lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  double l2_lambda = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(base_lr > 0)) fail(Errc::BadConfig, "base_lr must be positive");
    if (batch_size == 0) fail(Errc::BadConfig, "batch_size must be at least 1");
    if (!(l2_lambda >= 0)) fail(Errc::BadConfig, "l2_lambda must be non-negative");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
      fail(Errc::BadConfig, "adam betas must lie in [0, 1)");
    if (!(adam_eps > 0)) fail(Errc::BadConfig, "adam_eps must be positive");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

}  // namespace ulw
