#pragma once

// RawRecord -> EpochDataset: band-pass filtering, hypnogram expansion to
// 30 s epochs, MOVEMENT/UNKNOWN exclusion, wake trimming, per-record
// z-scoring; plus the binary dataset cache.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "ulw/bytes.hpp"
#include "ulw/edf.hpp"
#include "ulw/filter.hpp"
#include "ulw/tensor.hpp"

namespace ulw {

enum class StageClass : std::uint8_t { Wake = 0, N1 = 1, N2 = 2, N3 = 3, REM = 4 };

inline constexpr std::array<std::string_view, 5> kStageNames{"W", "N1", "N2", "N3", "REM"};

inline constexpr double kEpochSeconds = 30.0;
inline constexpr std::uint32_t kSampleRateHz = 100;
inline constexpr std::size_t kEpochSamples = 3000;
inline constexpr std::size_t kWakeMarginEpochs = 60;  // 30 minutes

/// Sleep-EDF (R&K) annotation text to the five-class scheme; stages 3 and 4
/// merge into N3. Movement and unscored epochs map to nullopt.
inline std::optional<StageClass> map_stage_label(std::string_view text) {
  if (text == "Sleep stage W") return StageClass::Wake;
  if (text == "Sleep stage 1") return StageClass::N1;
  if (text == "Sleep stage 2") return StageClass::N2;
  if (text == "Sleep stage 3" || text == "Sleep stage 4") return StageClass::N3;
  if (text == "Sleep stage R") return StageClass::REM;
  if (text == "Movement time" || text == "Sleep stage ?") return std::nullopt;
  fail(Errc::UnknownLabel, "unrecognized annotation '" + std::string(text) + "'");
}

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

/// Keeps 60 epochs (30 min) of wake either side of the first..last non-wake
/// epoch.
inline IndexRange trim_wake(std::span<const StageClass> labels) {
  const auto is_sleep = [](StageClass s) { return s != StageClass::Wake; };
  const auto first = std::find_if(labels.begin(), labels.end(), is_sleep);
  if (first == labels.end()) fail(Errc::AllWake, "record contains no sleep epochs");
  const auto last = std::find_if(labels.rbegin(), labels.rend(), is_sleep);
  const auto first_idx = static_cast<std::size_t>(first - labels.begin());
  const auto last_idx = labels.size() - 1 - static_cast<std::size_t>(last - labels.rbegin());
  return {first_idx > kWakeMarginEpochs ? first_idx - kWakeMarginEpochs : 0,
          std::min(labels.size(), last_idx + kWakeMarginEpochs + 1)};
}

/// Per-epoch labels from hypnogram events. Epochs not covered by any event
/// are nullopt. `n_signal_epochs` bounds the result: unlabeled or excluded
/// epochs beyond the signal are dropped; a scored stage beyond it is an
/// alignment error.
inline std::vector<std::optional<StageClass>> expand_labels(std::span<const edf::HypnogramEvent> events,
                                                            std::size_t n_signal_epochs) {
  std::vector<std::optional<StageClass>> labels;
  for (const auto& e : events) {
    const auto stage = map_stage_label(e.stage_text);
    const auto start = static_cast<std::size_t>(std::llround(e.onset_s / kEpochSeconds));
    const auto count = static_cast<std::size_t>(std::llround(e.duration_s / kEpochSeconds));
    if (labels.size() < start + count) labels.resize(start + count);
    for (std::size_t i = start; i < start + count; ++i) labels[i] = stage;
  }
  if (labels.size() > n_signal_epochs) {
    for (std::size_t i = n_signal_epochs; i < labels.size(); ++i)
      if (labels[i])
        fail(Errc::EpochAlignmentError, "hypnogram scores epoch " + std::to_string(i) + " but the signal holds only " +
                                            std::to_string(n_signal_epochs) + " epochs");
    labels.resize(n_signal_epochs);
  }
  return labels;
}

struct EpochDataset {
  Tensor3<float> x;  // N x C x 3000
  std::vector<StageClass> y;
  std::vector<std::string> subject_keys;
  std::vector<std::string> channel_labels;
  std::uint32_t sample_rate_hz = kSampleRateHz;

  std::size_t size() const { return y.size(); }

  void check_invariants() const {
    if (x.batch() != y.size() || y.size() != subject_keys.size())
      fail(Errc::ShapeMismatch, "dataset arrays disagree on epoch count");
    if (x.channels() != channel_labels.size()) fail(Errc::ShapeMismatch, "one label per channel required");
    for (const auto s : y)
      if (static_cast<unsigned>(s) > 4) fail(Errc::LabelOutOfRange, "stage label out of range");
    if (!all_finite(x.values())) fail(Errc::InvariantViolation, "non-finite sample in dataset");
  }

  friend bool operator==(const EpochDataset&, const EpochDataset&) = default;
};

struct PreprocessOptions {
  std::vector<std::string> channels{"EEG Fpz-Cz", "EEG Pz-Oz", "EOG horizontal", "EMG submental"};
  bool filter_all_channels = false;  // otherwise only EEG channels are band-passed
  double low_hz = 0.3;
  double high_hz = 45.0;
  int filter_order = 4;
};

struct RecordStats {
  std::size_t labeled_epochs = 0;   // before exclusion
  std::size_t excluded_epochs = 0;  // movement / unknown / unlabeled
  std::size_t retained_epochs = 0;  // after trimming
};

inline bool is_eeg_channel(std::string_view label) { return label.starts_with("EEG"); }

/// One record's retained epochs, channels in `opts.channels` order.
inline EpochDataset preprocess_record(const edf::RawRecord& rec, const PreprocessOptions& opts,
                                      RecordStats* stats_out = nullptr) {
  if (opts.channels.empty()) fail(Errc::MissingChannel, "no channels requested");
  std::optional<std::size_t> epochs_seen;
  for (const auto& label : opts.channels) {
    const auto it = rec.signals.find(label);
    if (it == rec.signals.end()) fail(Errc::MissingChannel, "channel '" + label + "' not in record");
    if (!epochs_seen) epochs_seen = it->second.samples.size() / kEpochSamples;
    const std::size_t n_signal_epochs = *epochs_seen;
    if (std::abs(it->second.sample_rate_hz - kSampleRateHz) > 1e-9)
      fail(Errc::UnsupportedSampleRate, "channel '" + label + "' is not sampled at 100 Hz");
    if (it->second.samples.size() / kEpochSamples != n_signal_epochs)
      fail(Errc::DurationMismatch, "channel '" + label + "' length differs");
  }

  const auto labels = expand_labels(rec.events, *epochs_seen);
  RecordStats stats;
  std::vector<std::size_t> kept;
  std::vector<StageClass> kept_labels;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) {
      kept.push_back(i);
      kept_labels.push_back(*labels[i]);
    } else {
      ++stats.excluded_epochs;
    }
  }
  stats.labeled_epochs = labels.size();
  const auto range = trim_wake(kept_labels);
  stats.retained_epochs = range.end - range.begin;

  const auto C = opts.channels.size();
  std::vector<std::vector<float>> channel_data;
  std::optional<FilterSpec> spec;
  for (const auto& label : opts.channels) {
    const auto& samples = rec.signals.at(label).samples;
    if (opts.filter_all_channels || is_eeg_channel(label)) {
      if (!spec) spec = design_bandpass(opts.low_hz, opts.high_hz, kSampleRateHz, opts.filter_order);
      channel_data.push_back(filtfilt(samples, *spec));
    } else {
      channel_data.push_back(samples);
    }
  }

  const std::size_t n_new = stats.retained_epochs;
  EpochDataset out;
  out.channel_labels = opts.channels;
  out.x = Tensor3<float>(n_new, C, kEpochSamples);

  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t k = range.begin; k < range.end; ++k) {
      const float* src = channel_data[c].data() + kept[k] * kEpochSamples;
      for (std::size_t s = 0; s < kEpochSamples; ++s) sum += src[s];
    }
    const double count = static_cast<double>(n_new * kEpochSamples);
    const double mean = count > 0 ? sum / count : 0.0;
    for (std::size_t k = range.begin; k < range.end; ++k) {
      const float* src = channel_data[c].data() + kept[k] * kEpochSamples;
      for (std::size_t s = 0; s < kEpochSamples; ++s) sq += (src[s] - mean) * (src[s] - mean);
    }
    const double sd = count > 0 ? std::sqrt(sq / count) : 0.0;
    const double scale = sd > 0 ? 1.0 / sd : 1.0;
    for (std::size_t k = range.begin; k < range.end; ++k) {
      const float* src = channel_data[c].data() + kept[k] * kEpochSamples;
      auto dst = out.x.row(k - range.begin, c);
      for (std::size_t s = 0; s < kEpochSamples; ++s) dst[s] = static_cast<float>((src[s] - mean) * scale);
    }
  }

  for (std::size_t k = range.begin; k < range.end; ++k) {
    out.y.push_back(kept_labels[k]);
    out.subject_keys.push_back(rec.subject_key);
  }
  if (stats_out) *stats_out = stats;
  return out;
}

inline EpochDataset concat_datasets(std::span<const EpochDataset> parts, std::vector<std::string> channel_labels) {
  EpochDataset ds;
  ds.channel_labels = std::move(channel_labels);
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.channel_labels != ds.channel_labels) fail(Errc::ShapeMismatch, "datasets disagree on channels");
    n += p.size();
  }
  ds.x = Tensor3<float>(n, ds.channel_labels.size(), kEpochSamples);
  auto dst = ds.x.values().begin();
  for (const auto& p : parts) {
    dst = std::copy(p.x.values().begin(), p.x.values().end(), dst);
    ds.y.insert(ds.y.end(), p.y.begin(), p.y.end());
    ds.subject_keys.insert(ds.subject_keys.end(), p.subject_keys.begin(), p.subject_keys.end());
  }
  return ds;
}

/// Records are merged in (subject_key, night) order.
inline EpochDataset build_epoch_dataset(std::vector<edf::RawRecord> records, const PreprocessOptions& opts) {
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.subject_key, a.night) < std::tie(b.subject_key, b.night);
  });
  std::vector<EpochDataset> parts;
  for (const auto& rec : records) parts.push_back(preprocess_record(rec, opts));
  return concat_datasets(parts, opts.channels);
}

// ------------------------------------------------------------------- cache

inline constexpr std::string_view kCacheMagic = "ULWS";
inline constexpr std::uint8_t kCacheVersion = 0x01;

inline Bytes encode_cache(const EpochDataset& ds) {
  ds.check_invariants();
  ByteWriter w;
  w.put_raw(kCacheMagic);
  w.put(kCacheVersion);
  w.put(static_cast<std::uint64_t>(ds.x.batch()));
  w.put(static_cast<std::uint64_t>(ds.x.channels()));
  w.put(static_cast<std::uint64_t>(ds.x.length()));
  w.put(ds.sample_rate_hz);
  for (const auto& label : ds.channel_labels) w.put_string(label);
  for (const auto& key : ds.subject_keys) w.put_string(key);
  w.put_array(ds.x.values());
  for (const auto s : ds.y) w.put(static_cast<std::uint8_t>(s));
  const auto body = std::span<const std::uint8_t>(w.bytes()).subspan(kCacheMagic.size());
  w.put(crc32(body));
  return std::move(w.bytes());
}

inline EpochDataset decode_cache(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kCacheMagic.size() ||
      std::string_view(reinterpret_cast<const char*>(bytes.data()), kCacheMagic.size()) != kCacheMagic)
    fail(Errc::BadMagic, "not a ULWS dataset cache");
  if (bytes.size() < kCacheMagic.size() + 1 + 4) fail(Errc::ChecksumMismatch, "cache truncated");
  if (bytes[kCacheMagic.size()] != kCacheVersion)
    fail(Errc::VersionMismatch, "cache version " + std::to_string(bytes[kCacheMagic.size()]) + ", expected 1");

  const auto body = bytes.subspan(kCacheMagic.size(), bytes.size() - kCacheMagic.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (crc32(body) != stored) fail(Errc::ChecksumMismatch, "dataset cache CRC mismatch");

  ByteReader r(body.subspan(1), Errc::ChecksumMismatch);
  const auto N = r.get<std::uint64_t>();
  const auto C = r.get<std::uint64_t>();
  const auto T = r.get<std::uint64_t>();
  EpochDataset ds;
  ds.sample_rate_hz = r.get<std::uint32_t>();
  for (std::uint64_t c = 0; c < C; ++c) ds.channel_labels.push_back(r.get_string());
  for (std::uint64_t n = 0; n < N; ++n) ds.subject_keys.push_back(r.get_string());
  if (N * C * T * sizeof(float) > r.remaining()) fail(Errc::ChecksumMismatch, "payload shorter than header claims");
  ds.x = Tensor3<float>(N, C, T);
  r.get_array(ds.x.values());
  ds.y.resize(N);
  for (auto& s : ds.y) {
    const auto v = r.get<std::uint8_t>();
    if (v > 4) fail(Errc::LabelOutOfRange, "stage byte " + std::to_string(v));
    s = static_cast<StageClass>(v);
  }
  if (r.remaining() != 0) fail(Errc::ChecksumMismatch, "trailing bytes in cache payload");
  return ds;
}

inline void write_cache(const EpochDataset& ds, const std::string& path) { write_file(path, encode_cache(ds)); }
inline EpochDataset read_cache(const std::string& path) { return decode_cache(read_file(path)); }

}  // namespace ulw
