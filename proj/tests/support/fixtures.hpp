#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "ulw/ulw.hpp"

namespace fixtures {

namespace fs = std::filesystem;

inline const std::vector<std::string> kChannels{"EEG Fpz-Cz", "EEG Pz-Oz", "EOG horizontal", "EMG submental"};

/// Sleep-EDF-style PSG: 30 s records, each named channel at `rate_hz`
/// (one sample-per-record override per channel allowed), plus an extra
/// unused channel. Samples come from `sample(channel, t_seconds)` in uV.
template <typename Fn>
ulw::Bytes make_psg(std::size_t n_epochs, Fn sample, const std::vector<std::string>& channels = kChannels,
                    const std::vector<int>& rates = {}) {
  using namespace ulw::edf;
  std::vector<SignalHeader> signals;
  std::vector<std::vector<std::int16_t>> data;
  auto labels = channels;
  labels.push_back("Event marker");
  for (std::size_t c = 0; c < labels.size(); ++c) {
    const int rate = c < rates.size() ? rates[c] : 100;
    signals.push_back(make_signal(labels[c], rate * 30));
    std::vector<std::int16_t> d(n_epochs * static_cast<std::size_t>(rate) * 30);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double uv = c + 1 == labels.size() ? 0.0 : sample(c, static_cast<double>(i) / rate);
      // physical [-500, 500] over digital [-32768, 32767]
      const double digital = (uv + 500.0) * 65535.0 / 1000.0 - 32768.0;
      d[i] = static_cast<std::int16_t>(std::clamp(std::lround(digital), -32768L, 32767L));
    }
    data.push_back(std::move(d));
  }
  return encode_edf(make_header(signals, static_cast<std::int64_t>(n_epochs), 30.0), data);
}

/// One event per epoch (stage texts as Sleep-EDF spells them).
inline ulw::Bytes make_hypnogram(const std::vector<std::string>& stages) {
  std::vector<ulw::edf::HypnogramEvent> events;
  for (std::size_t i = 0; i < stages.size(); ++i)
    events.push_back({30.0 * static_cast<double>(i), 30.0, stages[i]});
  return ulw::edf::encode_hypnogram(events);
}

/// A night with wake at both ends and a sleep core.
inline std::vector<std::string> night_stages(std::size_t wake_before, std::size_t sleep, std::size_t wake_after) {
  static const char* cycle[] = {"Sleep stage 1", "Sleep stage 2", "Sleep stage 3", "Sleep stage 2",
                                "Sleep stage R", "Sleep stage 4", "Movement time", "Sleep stage 2"};
  std::vector<std::string> s(wake_before, "Sleep stage W");
  for (std::size_t i = 0; i < sleep; ++i) s.push_back(cycle[i % 8]);
  s.insert(s.end(), wake_after, "Sleep stage W");
  return s;
}

inline double default_sample(std::size_t c, double t) {
  return 40.0 * std::sin(2 * std::numbers::pi * (3.0 + c) * t) + 10.0 * std::sin(2 * std::numbers::pi * 0.05 * t);
}

/// Class-dependent sinusoids plus Gaussian noise, `per_class` epochs per
/// stage, shape [N, C, T].
inline ulw::EpochDataset synthetic_epochs(std::size_t n, std::size_t channels, std::size_t length,
                                          std::uint64_t seed, std::size_t n_subjects = 1) {
  ulw::Rng rng(seed);
  ulw::EpochDataset ds;
  ds.x = ulw::Tensor3<float>(n, channels, length);
  for (std::size_t c = 0; c < channels; ++c) ds.channel_labels.push_back("ch" + std::to_string(c));
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<int>(i % 5);
    ds.y.push_back(static_cast<ulw::StageClass>(label));
    ds.subject_keys.push_back("S" + std::to_string(100 + (i / 5) % n_subjects));
    const double freq = 1.0 + 2.5 * label;  // cycles per second at 100 Hz
    const double phase = rng.uniform(0, 2 * std::numbers::pi);
    for (std::size_t c = 0; c < channels; ++c) {
      auto row = ds.x.row(i, c);
      for (std::size_t t = 0; t < length; ++t)
        row[t] = static_cast<float>(std::sin(2 * std::numbers::pi * freq * t / 100.0 + phase + 0.3 * c) +
                                    0.3 * rng.normal());
    }
  }
  return ds;
}

inline ulw::EpochDataset synthetic_dataset(std::size_t per_class, std::size_t channels, std::size_t length,
                                           std::uint64_t seed, std::size_t n_subjects = 1) {
  return synthetic_epochs(per_class * 5, channels, length, seed, n_subjects);
}

/// Writes a Sleep-EDF style PSG / hypnogram pair into `dir`.
inline void write_recording(const fs::path& dir, const std::string& psg_name, const std::string& hyp_name,
                            std::size_t wake_before, std::size_t sleep, std::size_t wake_after) {
  const auto labels = night_stages(wake_before, sleep, wake_after);
  ulw::write_file((dir / psg_name).string(), make_psg(labels.size(), default_sample));
  ulw::write_file((dir / hyp_name).string(), make_hypnogram(labels));
}

/// Unique scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("ulws_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  std::string str(const std::string& leaf) const { return (path_ / leaf).string(); }

 private:
  fs::path path_;
};

}  // namespace fixtures
