#pragma once

// Closed-form parameter and FLOPs accounting.
//
// Parameters are trainable scalars only (BN running statistics excluded);
// the extractor is counted once because it is shared across channels.
//
// FLOPs are for one forward pass of one epoch (all C channels plus the
// head): 2 per multiply-accumulate, +1 per output element for a bias, 2 per
// element for inference-form BN, 1 per element for ReLU, (pool_size - 1) per
// maxpool output, 1 per element for the residual add, L + 1 per feature for
// global average pooling.

#include <cstdint>
#include <string>
#include <vector>

#include "ulw/config.hpp"
#include "ulw/tensor.hpp"

namespace ulw {

struct ComplexityRow {
  std::string layer;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::string output_shape;  // channels x length (per input channel for extractor rows)
};

struct ComplexityReport {
  std::vector<ComplexityRow> rows;
  std::uint64_t total_params = 0;
  std::uint64_t total_flops = 0;
  std::string convention;
};

inline constexpr const char* kFlopsConvention =
    "2 FLOPs per MAC; +1 per output for bias; BN 2/elem (inference form); ReLU 1/elem; "
    "maxpool (pool_size-1)/output; residual add 1/elem; GAP L+1 per feature; "
    "extractor rows x C channels; one epoch, one forward pass";

inline constexpr double separable_ratio(double kernel, double out_channels) {
  return 1.0 / out_channels + 1.0 / kernel;
}

/// Parameters of one conv layer in the model's convention.
inline std::uint64_t conv_params(ConvType type, std::uint64_t K, std::uint64_t M, std::uint64_t N) {
  return type == ConvType::Separable ? K * M + M * N + N : K * M * N + N;
}

inline std::uint64_t conv_flops(ConvType type, std::uint64_t K, std::uint64_t M, std::uint64_t N,
                                std::uint64_t out_len) {
  const std::uint64_t macs = type == ConvType::Separable ? K * M + M * N : K * M * N;
  return (2 * macs + N) * out_len;
}

inline ComplexityReport analyze_complexity(const ModelConfig& cfg) {
  cfg.validate();
  ComplexityReport report;
  report.convention = kFlopsConvention;
  const std::uint64_t C = cfg.n_input_channels;
  auto shape = [](std::uint64_t ch, std::uint64_t len) { return std::to_string(ch) + "x" + std::to_string(len); };
  auto row = [&](std::string name, std::uint64_t params, std::uint64_t flops_per_channel, std::string out) {
    report.rows.push_back({std::move(name), params, flops_per_channel * C, std::move(out)});
  };

  std::uint64_t M = 1;
  std::uint64_t L = cfg.input_length;
  const std::uint64_t K = cfg.kernel_size, ps = cfg.pool_size, stride = cfg.pool_stride;
  for (std::size_t i = 0; i < cfg.filters.size(); ++i) {
    const std::uint64_t F = cfg.filters[i];
    const std::string b = "block" + std::to_string(i + 1) + ".";

    const std::uint64_t L1 = L;
    row(b + "main_conv1", conv_params(cfg.conv_type, K, M, F), conv_flops(cfg.conv_type, K, M, F, L1), shape(F, L1));
    row(b + "bn1", 2 * F, 2 * F * L1, shape(F, L1));
    row(b + "relu1", 0, F * L1, shape(F, L1));
    const std::uint64_t P1 = same_length(L1, stride);
    row(b + "pool1", 0, (ps - 1) * F * P1, shape(F, P1));
    row(b + "main_conv2", conv_params(cfg.conv_type, K, F, F), conv_flops(cfg.conv_type, K, F, F, P1), shape(F, P1));
    row(b + "bn2", 2 * F, 2 * F * P1, shape(F, P1));
    row(b + "relu2", 0, F * P1, shape(F, P1));
    const std::uint64_t P2 = same_length(P1, stride);
    row(b + "pool2", 0, (ps - 1) * F * P2, shape(F, P2));

    const std::uint64_t S1 = same_length(L, stride);
    row(b + "shortcut_conv1", conv_params(cfg.conv_type, 1, M, F), conv_flops(cfg.conv_type, 1, M, F, S1),
        shape(F, S1));
    const std::uint64_t S2 = same_length(S1, stride);
    row(b + "shortcut_conv2", conv_params(cfg.conv_type, 1, F, F), conv_flops(cfg.conv_type, 1, F, F, S2),
        shape(F, S2));
    row(b + "residual_add", 0, F * P2, shape(F, P2));

    M = F;
    L = P2;
  }
  row("gap", 0, M * (L + 1), shape(M, 1));

  // Head rows are not replicated per channel.
  const std::uint64_t in = C * M, H = cfg.head_hidden, out = cfg.n_classes;
  report.rows.push_back({"head_hidden", in * H + H, 2 * in * H + H, shape(H, 1)});
  report.rows.push_back({"head_relu", 0, H, shape(H, 1)});
  report.rows.push_back({"head_out", H * out + out, 2 * H * out + out, shape(out, 1)});

  for (const auto& r : report.rows) {
    report.total_params += r.params;
    report.total_flops += r.flops;
  }
  return report;
}

inline std::uint64_t count_params(const ModelConfig& cfg) { return analyze_complexity(cfg).total_params; }
inline std::uint64_t count_flops(const ModelConfig& cfg) { return analyze_complexity(cfg).total_flops; }

}  // namespace ulw
