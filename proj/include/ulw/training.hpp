#pragma once

// Optimization: L2-regularized cross-entropy, Adam, per-epoch cosine
// annealing, seeded mini-batching, and subject-wise k-fold splitting.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "ulw/config.hpp"
#include "ulw/dataset.hpp"
#include "ulw/model.hpp"
#include "ulw/rng.hpp"

namespace ulw {

/// base_lr * (1 + cos(pi * epoch / total)) / 2, eta_min = 0.
inline double cosine_lr(std::size_t epoch, std::size_t total_epochs, double base_lr) {
  if (total_epochs == 0) return base_lr;
  const double lr =
      base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total_epochs)));
  return std::max(lr, 0.0);
}

// ----------------------------------------------------------- regularizer

/// lambda * sum w^2 over convolution kernels (depthwise, pointwise or full);
/// biases, BN and dense layers are not penalized.
template <typename Real>
double l2_penalty(const ModelParams<Real>& params, double lambda) {
  if (lambda == 0.0) return 0.0;
  double sum = 0.0;
  for (const auto& view : param_views(params))
    if (view.role == ParamRole::ConvKernel)
      for (const Real w : view.values) sum += static_cast<double>(w) * w;
  return lambda * sum;
}

template <typename Real>
void add_l2_gradient(const ModelParams<Real>& params, ModelParams<Real>& grads, double lambda) {
  if (lambda == 0.0) return;
  const auto pv = param_views(params);
  auto gv = param_views(grads);
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (pv[i].role != ParamRole::ConvKernel) continue;
    for (std::size_t j = 0; j < pv[i].values.size(); ++j)
      gv[i].values[j] += static_cast<Real>(2.0 * lambda * pv[i].values[j]);
  }
}

// ------------------------------------------------------------------ adam

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update of a flat array at step `t` (1-based, already incremented).
template <typename Real>
void adam_update(std::span<Real> theta, std::span<const Real> grad, std::span<Real> m, std::span<Real> v,
                 std::uint64_t t, double lr, const AdamSettings& s) {
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    const double mi = s.beta1 * m[i] + (1.0 - s.beta1) * g;
    const double vi = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
    m[i] = static_cast<Real>(mi);
    v[i] = static_cast<Real>(vi);
    const double mhat = mi / c1;
    const double vhat = vi / c2;
    theta[i] = static_cast<Real>(theta[i] - lr * mhat / (std::sqrt(vhat) + s.eps));
  }
}

template <typename Real>
struct AdamState {
  ModelParams<Real> m;
  ModelParams<Real> v;
  std::uint64_t t = 0;

  explicit AdamState(const ModelConfig& config)
      : m(allocate_params<Real>(config)), v(allocate_params<Real>(config)) {}
};

/// Applies one step to every trainable array. Non-finite gradients abort
/// before anything is modified.
template <typename Real>
void adam_step(ModelParams<Real>& params, const ModelParams<Real>& grads, AdamState<Real>& state, double lr,
               const AdamSettings& settings) {
  auto pv = param_views(params);
  const auto gv = param_views(grads);
  auto mv = param_views(state.m);
  auto vv = param_views(state.v);
  for (std::size_t i = 0; i < gv.size(); ++i) {
    if (!gv[i].trainable()) continue;
    for (std::size_t j = 0; j < gv[i].values.size(); ++j)
      if (!std::isfinite(gv[i].values[j]))
        fail(Errc::NonFiniteGradient, "non-finite gradient in '" + gv[i].name + "' at index " + std::to_string(j) +
                                          " (step " + std::to_string(state.t + 1) + ")");
  }
  ++state.t;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (!pv[i].trainable()) continue;
    adam_update<Real>(pv[i].values, gv[i].values, mv[i].values, vv[i].values, state.t, lr, settings);
  }
}

inline AdamSettings adam_settings(const TrainConfig& c) { return {c.adam_beta1, c.adam_beta2, c.adam_eps}; }

// --------------------------------------------------------------- batching

/// Seeded permutation of [0, n) cut into batches; the last may be short.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                          std::uint64_t epoch) {
  if (batch_size == 0) fail(Errc::BadConfig, "batch_size must be at least 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng{seed, epoch, 0x6261746368ULL};
  rng.shuffle(std::span(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return batches;
}

// ------------------------------------------------------------------ folds

struct FoldSplit {
  std::size_t fold_index = 0;
  std::vector<std::string> train_subjects;  // sorted
  std::vector<std::string> test_subjects;   // sorted
};

/// Subjects are sorted, shuffled under `seed`, and dealt round-robin into k
/// test groups.
inline std::vector<FoldSplit> subject_folds(std::vector<std::string> subjects, std::size_t k, std::uint64_t seed) {
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  if (k < 2) fail(Errc::BadConfig, "need at least 2 folds");
  if (subjects.size() < k)
    fail(Errc::TooFewSubjects, std::to_string(subjects.size()) + " subjects cannot fill " + std::to_string(k) +
                                   " folds");
  Rng rng{seed, 0x666f6c64ULL};
  rng.shuffle(std::span(subjects));

  std::vector<FoldSplit> folds(k);
  for (std::size_t i = 0; i < k; ++i) folds[i].fold_index = i;
  for (std::size_t i = 0; i < subjects.size(); ++i) folds[i % k].test_subjects.push_back(subjects[i]);
  for (auto& f : folds) {
    std::sort(f.test_subjects.begin(), f.test_subjects.end());
    for (const auto& s : subjects)
      if (!std::binary_search(f.test_subjects.begin(), f.test_subjects.end(), s)) f.train_subjects.push_back(s);
    std::sort(f.train_subjects.begin(), f.train_subjects.end());
  }
  return folds;
}

inline std::vector<std::string> unique_subjects(const EpochDataset& ds) {
  std::vector<std::string> s(ds.subject_keys);
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Epoch indices on each side of a split. Throws if a subject is on both sides.
inline SplitIndices split_indices(const EpochDataset& ds, const FoldSplit& split) {
  const std::set<std::string> train(split.train_subjects.begin(), split.train_subjects.end());
  const std::set<std::string> test(split.test_subjects.begin(), split.test_subjects.end());
  for (const auto& s : test)
    if (train.count(s)) fail(Errc::InvariantViolation, "subject '" + s + "' on both sides of fold split");
  SplitIndices out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (train.count(ds.subject_keys[i])) out.train.push_back(i);
    else if (test.count(ds.subject_keys[i])) out.test.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------- loop

template <typename Real>
Tensor3<Real> gather_batch(const EpochDataset& ds, std::span<const std::size_t> indices) {
  const std::size_t C = ds.x.channels(), T = ds.x.length();
  Tensor3<Real> x(indices.size(), C, T);
  for (std::size_t b = 0; b < indices.size(); ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const auto src = ds.x.row(indices[b], c);
      std::copy(src.begin(), src.end(), x.row(b, c).begin());
    }
  return x;
}

inline std::vector<int> gather_labels(const EpochDataset& ds, std::span<const std::size_t> indices) {
  std::vector<int> y(indices.size());
  for (std::size_t b = 0; b < indices.size(); ++b) y[b] = static_cast<int>(ds.y[indices[b]]);
  return y;
}

template <typename Real>
struct StepResult {
  double loss = 0.0;  // cross-entropy + L2 penalty
  double cross_entropy = 0.0;
  ModelParams<Real> grads;
  Tensor2<Real> probs;
};

/// Forward + backward for one batch, gradients including the L2 term.
template <typename Real>
StepResult<Real> loss_and_gradients(ModelParams<Real>& params, const Tensor3<Real>& x, std::span<const int> labels,
                                    Mode mode, Rng& rng, double l2_lambda) {
  ModelCache<Real> cache;
  auto fwd = model_forward(params, x, mode, rng, &cache);
  auto xent = nn::softmax_xent_forward(fwd.logits, labels);
  const auto grad_logits = nn::softmax_xent_backward(xent.probs, labels);
  StepResult<Real> out;
  out.grads = model_backward(params, cache, grad_logits);
  add_l2_gradient(params, out.grads, l2_lambda);
  out.cross_entropy = xent.loss;
  out.loss = xent.loss + l2_penalty(params, l2_lambda);
  out.probs = std::move(xent.probs);
  return out;
}

/// Infer-mode probabilities for `indices`, evaluated in chunks.
template <typename Real>
Tensor2<Real> predict_dataset(const ModelParams<Real>& params, const EpochDataset& ds,
                              std::span<const std::size_t> indices, std::size_t chunk = 64) {
  Tensor2<Real> probs(indices.size(), params.config.n_classes);
  auto local = params;
  Rng unused(0);
  for (std::size_t i = 0; i < indices.size(); i += chunk) {
    const auto part = indices.subspan(i, std::min(chunk, indices.size() - i));
    const auto p = model_forward(local, gather_batch<Real>(ds, part), Mode::Infer, unused).probs;
    for (std::size_t r = 0; r < part.size(); ++r)
      std::copy(p.row(r).begin(), p.row(r).end(), probs.row(i + r).begin());
  }
  return probs;
}

template <typename Real>
std::vector<int> argmax_rows(const Tensor2<Real>& probs) {
  std::vector<int> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto row = probs.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

template <typename Real>
double accuracy_on(const ModelParams<Real>& params, const EpochDataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto pred = argmax_rows(predict_dataset(params, ds, indices));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < indices.size(); ++i) hit += pred[i] == static_cast<int>(ds.y[indices[i]]);
  return static_cast<double>(hit) / static_cast<double>(indices.size());
}

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // batch-size-weighted mean of the regularized loss
  double test_acc = std::numeric_limits<double>::quiet_NaN();
};

template <typename Real>
struct TrainResult {
  ModelParams<Real> params;
  std::vector<EpochStats> history;
};

/// Called after every epoch; return false to stop early.
template <typename Real>
using EpochCallback = std::function<bool(const EpochStats&, const ModelParams<Real>&)>;

/// Trains from a fresh initialization. The run is a pure function of
/// (data, configs, seed): init uses `seed`, batches use (seed, epoch) and
/// dropout draws from a stream keyed by seed.
template <typename Real = float>
TrainResult<Real> fit(const EpochDataset& ds, std::span<const std::size_t> train_idx,
                      std::span<const std::size_t> test_idx, const ModelConfig& mcfg, const TrainConfig& tcfg,
                      const EpochCallback<Real>& on_epoch = {}) {
  mcfg.validate();
  tcfg.validate();
  if (ds.x.channels() != mcfg.n_input_channels)
    fail(Errc::ShapeMismatch, "dataset has " + std::to_string(ds.x.channels()) + " channels, model expects " +
                                  std::to_string(mcfg.n_input_channels));
  if (ds.x.length() != mcfg.input_length)
    fail(Errc::ShapeMismatch, "dataset epochs hold " + std::to_string(ds.x.length()) + " samples, model expects " +
                                  std::to_string(mcfg.input_length));
  TrainResult<Real> result{build_model<Real>(mcfg, tcfg.seed), {}};
  if (tcfg.epochs > 0 && train_idx.empty()) fail(Errc::InvariantViolation, "empty training split");

  AdamState<Real> adam(mcfg);
  const auto settings = adam_settings(tcfg);
  Rng dropout_rng{tcfg.seed, 0x64726f70ULL};
  std::vector<std::size_t> order(train_idx.begin(), train_idx.end());

  for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, tcfg.epochs, tcfg.base_lr);
    double loss_sum = 0.0;
    for (const auto& batch : make_batches(order.size(), tcfg.batch_size, tcfg.seed, epoch)) {
      std::vector<std::size_t> rows(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) rows[i] = order[batch[i]];
      const auto x = gather_batch<Real>(ds, rows);
      const auto y = gather_labels(ds, rows);
      auto step = loss_and_gradients(result.params, x, y, Mode::Train, dropout_rng, tcfg.l2_lambda);
      if (!std::isfinite(step.loss)) fail(Errc::NonFiniteGradient, "non-finite loss at epoch " + std::to_string(epoch));
      adam_step(result.params, step.grads, adam, lr, settings);
      loss_sum += step.loss * static_cast<double>(rows.size());
    }
    EpochStats stats{epoch, lr, loss_sum / static_cast<double>(order.size()), accuracy_on(result.params, ds, test_idx)};
    result.history.push_back(stats);
    if (on_epoch && !on_epoch(stats, result.params)) break;
  }
  return result;
}

template <typename Real = float>
TrainResult<Real> train_fold(const EpochDataset& ds, const FoldSplit& split, const ModelConfig& mcfg,
                             const TrainConfig& tcfg, const EpochCallback<Real>& on_epoch = {}) {
  const auto idx = split_indices(ds, split);
  if (idx.train.empty() || idx.test.empty())
    fail(Errc::InvariantViolation, "fold " + std::to_string(split.fold_index) + " has an empty side");
  return fit<Real>(ds, idx.train, idx.test, mcfg, tcfg, on_epoch);
}

}  // namespace ulw
