#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "ulw/error.hpp"

namespace ulw {

inline constexpr std::size_t kNumStages = 5;

/// counts[true][predicted]
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumStages>, kNumStages> counts{};

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (const auto& row : counts)
      for (const auto v : row) n += v;
    return n;
  }
  std::uint64_t trace() const {
    std::uint64_t n = 0;
    for (std::size_t c = 0; c < kNumStages; ++c) n += counts[c][c];
    return n;
  }
  std::uint64_t row_sum(std::size_t c) const {
    std::uint64_t n = 0;
    for (const auto v : counts[c]) n += v;
    return n;
  }
  std::uint64_t col_sum(std::size_t c) const {
    std::uint64_t n = 0;
    for (const auto& row : counts) n += row[c];
    return n;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    for (std::size_t t = 0; t < kNumStages; ++t)
      for (std::size_t p = 0; p < kNumStages; ++p) counts[t][p] += other.counts[t][p];
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct MetricsReport {
  double accuracy = 0;
  double macro_f1 = 0;
  double kappa = 0;
  std::array<double, kNumStages> per_class_f1{};
  std::uint64_t n_epochs = 0;
};

inline ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.size() != y_pred.size())
    fail(Errc::LengthMismatch, std::to_string(y_true.size()) + " truths vs " + std::to_string(y_pred.size()) +
                                   " predictions");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i], p = y_pred[i];
    if (t < 0 || p < 0 || t >= static_cast<int>(kNumStages) || p >= static_cast<int>(kNumStages))
      fail(Errc::LabelOutOfRange, "label pair (" + std::to_string(t) + ", " + std::to_string(p) + ")");
    ++cm.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  return cm;
}

inline void require_nonempty(const ConfusionMatrix& cm) {
  if (cm.total() == 0) fail(Errc::EmptyMatrix, "no scored epochs");
}

inline double accuracy(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  return static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
}

/// F1_c = 2TP / (2TP + FP + FN), 0 when the denominator is 0.
inline std::array<double, kNumStages> per_class_f1(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  std::array<double, kNumStages> f1{};
  for (std::size_t c = 0; c < kNumStages; ++c) {
    const auto tp = cm.counts[c][c];
    const auto fp = cm.col_sum(c) - tp;
    const auto fn = cm.row_sum(c) - tp;
    const auto denom = 2 * tp + fp + fn;
    f1[c] = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return f1;
}

inline double macro_f1(const ConfusionMatrix& cm) {
  const auto f1 = per_class_f1(cm);
  double sum = 0;
  for (const double v : f1) sum += v;
  return sum / static_cast<double>(kNumStages);
}

inline double cohen_kappa(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  const double n = static_cast<double>(cm.total());
  const double po = static_cast<double>(cm.trace()) / n;
  double pe = 0;
  for (std::size_t c = 0; c < kNumStages; ++c)
    pe += static_cast<double>(cm.row_sum(c)) * static_cast<double>(cm.col_sum(c));
  pe /= n * n;
  if (pe == 1.0) return po == 1.0 ? 1.0 : 0.0;
  return (po - pe) / (1.0 - pe);
}

inline MetricsReport metrics(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.accuracy = accuracy(cm);
  r.per_class_f1 = per_class_f1(cm);
  r.macro_f1 = macro_f1(cm);
  r.kappa = cohen_kappa(cm);
  r.n_epochs = cm.total();
  return r;
}

struct FoldPredictions {
  std::vector<int> y_true;
  std::vector<int> y_pred;
};

/// Pools every fold's (true, predicted) pairs into one matrix.
inline MetricsReport aggregate_folds(std::span<const FoldPredictions> folds) {
  ConfusionMatrix pooled;
  for (const auto& f : folds) pooled += confusion(f.y_true, f.y_pred);
  return metrics(pooled);
}

}  // namespace ulw
