// Trains the default model on a synthetic single-channel recording set with
// subject-wise folds, then prints pooled metrics. Takes about 30 s on one core.
//
//   ./build/demo_train [epochs]

#include <cstdio>
#include <cstdlib>
#include <numbers>

#include "ulw/ulw.hpp"

using namespace ulw;

namespace {

// Each stage gets its own dominant rhythm; subjects differ by amplitude.
EpochDataset make_subjects(std::size_t n_subjects, std::size_t epochs_per_subject, std::uint64_t seed) {
  Rng rng(seed);
  EpochDataset ds;
  ds.channel_labels = {"EEG synthetic"};
  ds.x = Tensor3<float>(n_subjects * epochs_per_subject, 1, kEpochSamples);
  for (std::size_t s = 0; s < n_subjects; ++s) {
    const double gain = rng.uniform(0.7, 1.3);
    for (std::size_t e = 0; e < epochs_per_subject; ++e) {
      const std::size_t i = s * epochs_per_subject + e;
      const auto stage = static_cast<int>(rng.below(5));
      ds.y.push_back(static_cast<StageClass>(stage));
      char key[16];
      std::snprintf(key, sizeof key, "SC4%02zu", s);
      ds.subject_keys.emplace_back(key);
      const double hz = 1.0 + 2.5 * stage;
      const double phase = rng.uniform(0, 2 * std::numbers::pi);
      auto row = ds.x.row(i, 0);
      for (std::size_t t = 0; t < row.size(); ++t)
        row[t] = static_cast<float>(gain * std::sin(2 * std::numbers::pi * hz * t / kSampleRateHz + phase) +
                                    0.5 * rng.normal());
    }
  }
  return ds;
}

}  // namespace

int main(int argc, char** argv) {
  const auto ds = make_subjects(6, 60, 1);
  ModelConfig mcfg;
  mcfg.n_input_channels = 1;
  TrainConfig tcfg;
  tcfg.epochs = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 15;
  tcfg.seed = 11;
  // Small batches give the batch-norm running statistics enough updates to
  // settle on a dataset this size.
  tcfg.batch_size = 8;

  std::printf("model: %llu params, %.2f MFLOPs per epoch window\n",
              static_cast<unsigned long long>(count_params(mcfg)), count_flops(mcfg) / 1e6);

  std::vector<FoldPredictions> folds;
  for (const auto& split : subject_folds(unique_subjects(ds), 3, tcfg.seed)) {
    TrainConfig fold_cfg = tcfg;
    fold_cfg.seed = tcfg.seed + split.fold_index;
    const auto result = train_fold<float>(ds, split, mcfg, fold_cfg, [&](const EpochStats& s, const auto&) {
      std::printf("fold %zu epoch %2zu  lr %.2e  loss %.4f  test acc %.3f\n", split.fold_index, s.epoch, s.lr,
                  s.train_loss, s.test_acc);
      return true;
    });
    const auto idx = split_indices(ds, split);
    FoldPredictions fp;
    fp.y_true = gather_labels(ds, idx.test);
    fp.y_pred = argmax_rows(predict_dataset(result.params, ds, idx.test));
    folds.push_back(std::move(fp));
  }

  const auto m = aggregate_folds(folds);
  std::printf("pooled: ACC %.1f%%  MF1 %.1f%%  kappa %.3f\n", 100 * m.accuracy, 100 * m.macro_f1, m.kappa);
  for (std::size_t c = 0; c < kStageNames.size(); ++c)
    std::printf("  F1 %-3s %.1f%%\n", std::string(kStageNames[c]).c_str(), 100 * m.per_class_f1[c]);
}
