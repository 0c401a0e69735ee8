#pragma once

// EDF / EDF+ reader for polysomnography recordings and hypnogram annotation
// files. Everything operates on in-memory byte buffers; the path-taking
// helpers at the bottom just load the file first.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ulw/bytes.hpp"
#include "ulw/error.hpp"

namespace ulw::edf {

inline constexpr std::size_t kFixedHeaderBytes = 256;
inline constexpr std::size_t kPerSignalHeaderBytes = 256;
inline constexpr std::string_view kAnnotationLabel = "EDF Annotations";

struct SignalHeader {
  std::string label;
  std::string transducer;
  std::string physical_dimension;
  double physical_min = 0.0;
  double physical_max = 0.0;
  std::int32_t digital_min = 0;
  std::int32_t digital_max = 0;
  std::string prefiltering;
  std::int32_t samples_per_record = 0;
  std::string reserved;

  friend bool operator==(const SignalHeader&, const SignalHeader&) = default;
};

struct EdfHeader {
  std::string version;
  std::string patient_info;
  std::string recording_info;
  std::string start_date;  // dd.mm.yy
  std::string start_time;  // hh.mm.ss
  std::int64_t header_bytes = 0;
  std::string reserved;  // "EDF+C" / "EDF+D" for EDF+
  std::int64_t n_data_records = 0;
  double record_duration_s = 0.0;
  std::int32_t n_signals = 0;
  std::vector<SignalHeader> signals;

  bool is_edf_plus() const { return reserved.starts_with("EDF+"); }

  /// Bytes occupied by one data record (all signals).
  std::size_t record_bytes() const {
    std::size_t total = 0;
    for (const auto& s : signals) total += static_cast<std::size_t>(s.samples_per_record) * 2;
    return total;
  }

  /// Byte offset of signal `index` inside a data record.
  std::size_t signal_offset(std::size_t index) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < index; ++i) off += static_cast<std::size_t>(signals[i].samples_per_record) * 2;
    return off;
  }

  std::optional<std::size_t> find_signal(std::string_view label) const {
    for (std::size_t i = 0; i < signals.size(); ++i)
      if (signals[i].label == label) return i;
    return std::nullopt;
  }

  friend bool operator==(const EdfHeader&, const EdfHeader&) = default;
};

struct SignalTrace {
  std::string label;
  double sample_rate_hz = 0.0;
  std::vector<float> samples;  // physical units

  double duration_s() const { return sample_rate_hz > 0 ? samples.size() / sample_rate_hz : 0.0; }
};

struct HypnogramEvent {
  double onset_s = 0.0;
  double duration_s = 0.0;
  std::string stage_text;

  friend bool operator==(const HypnogramEvent&, const HypnogramEvent&) = default;
};

struct RawRecord {
  std::string subject_key;
  int night = 0;
  std::map<std::string, SignalTrace> signals;
  std::vector<HypnogramEvent> events;
};

namespace detail {

inline std::string ascii_field(std::span<const std::uint8_t> raw) {
  std::string text(raw.begin(), raw.end());
  for (auto& ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 0x20 || u > 0x7e) ch = '?';
  }
  const auto end = text.find_last_not_of(' ');
  text.erase(end == std::string::npos ? 0 : end + 1);
  return text;
}

inline std::string_view trim(std::string_view text) {
  const auto b = text.find_first_not_of(' ');
  if (b == std::string_view::npos) return {};
  const auto e = text.find_last_not_of(' ');
  return text.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view text, std::string_view field) {
  const auto t = trim(text);
  T value{};
  const char* first = t.data();
  const char* last = t.data() + t.size();
  if (!t.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (t.empty() || ec != std::errc{} || ptr != last)
    fail(Errc::MalformedField, std::string(field) + " is not a number: '" + std::string(text) + "'");
  return value;
}

class FieldCursor {
 public:
  explicit FieldCursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> next(std::size_t width) {
    auto out = bytes_.subspan(pos_, width);
    pos_ += width;
    return out;
  }
  std::string text(std::size_t width) { return ascii_field(next(width)); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline EdfHeader parse_edf_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFixedHeaderBytes)
    fail(Errc::TruncatedHeader, "need 256 bytes, have " + std::to_string(bytes.size()));

  EdfHeader h;
  detail::FieldCursor cur(bytes.first(kFixedHeaderBytes));
  h.version = cur.text(8);
  h.patient_info = cur.text(80);
  h.recording_info = cur.text(80);
  h.start_date = cur.text(8);
  h.start_time = cur.text(8);
  h.header_bytes = detail::parse_number<std::int64_t>(cur.text(8), "header_bytes");
  h.reserved = cur.text(44);
  h.n_data_records = detail::parse_number<std::int64_t>(cur.text(8), "n_data_records");
  h.record_duration_s = detail::parse_number<double>(cur.text(8), "record_duration");
  h.n_signals = detail::parse_number<std::int32_t>(cur.text(4), "n_signals");

  if (h.n_signals < 0) fail(Errc::InvariantViolation, "negative signal count");
  const auto ns = static_cast<std::size_t>(h.n_signals);
  const auto expected = kFixedHeaderBytes * (ns + 1);
  if (h.header_bytes != static_cast<std::int64_t>(expected))
    fail(Errc::InvariantViolation, "header_bytes " + std::to_string(h.header_bytes) + " != 256*(ns+1) = " +
                                       std::to_string(expected));
  if (bytes.size() < expected)
    fail(Errc::TruncatedHeader, "declared " + std::to_string(expected) + " header bytes, have " +
                                    std::to_string(bytes.size()));
  if (h.n_data_records == -1) fail(Errc::InvariantViolation, "n_data_records == -1 (unfinalized streaming file)");
  if (h.n_data_records < 0) fail(Errc::InvariantViolation, "negative n_data_records");
  if (h.record_duration_s < 0.0) fail(Errc::InvariantViolation, "negative record duration");

  // Per-signal fields are stored column-wise: all labels, then all transducers...
  detail::FieldCursor sig(bytes.subspan(kFixedHeaderBytes, ns * kPerSignalHeaderBytes));
  h.signals.resize(ns);
  for (auto& s : h.signals) s.label = sig.text(16);
  for (auto& s : h.signals) s.transducer = sig.text(80);
  for (auto& s : h.signals) s.physical_dimension = sig.text(8);
  for (auto& s : h.signals) s.physical_min = detail::parse_number<double>(sig.text(8), "physical_min");
  for (auto& s : h.signals) s.physical_max = detail::parse_number<double>(sig.text(8), "physical_max");
  for (auto& s : h.signals) s.digital_min = detail::parse_number<std::int32_t>(sig.text(8), "digital_min");
  for (auto& s : h.signals) s.digital_max = detail::parse_number<std::int32_t>(sig.text(8), "digital_max");
  for (auto& s : h.signals) s.prefiltering = sig.text(80);
  for (auto& s : h.signals)
    s.samples_per_record = detail::parse_number<std::int32_t>(sig.text(8), "samples_per_record");
  for (auto& s : h.signals) s.reserved = sig.text(32);

  for (const auto& s : h.signals) {
    if (s.digital_min >= s.digital_max)
      fail(Errc::InvariantViolation, "signal '" + s.label + "': digital_min >= digital_max");
    if (s.physical_min == s.physical_max)
      fail(Errc::InvariantViolation, "signal '" + s.label + "': physical_min == physical_max");
    if (s.samples_per_record < 0)
      fail(Errc::InvariantViolation, "signal '" + s.label + "': negative samples_per_record");
  }
  return h;
}

/// Affine digital-to-physical map. Endpoints are returned exactly.
inline double digital_to_physical(std::int32_t d, const SignalHeader& s) {
  if (d == s.digital_min) return s.physical_min;
  if (d == s.digital_max) return s.physical_max;
  return static_cast<double>(d - s.digital_min) * (s.physical_max - s.physical_min) /
             static_cast<double>(s.digital_max - s.digital_min) +
         s.physical_min;
}

/// Raw 16-bit sample words of one signal, concatenated across data records.
inline std::vector<std::int16_t> read_digital(std::span<const std::uint8_t> file, const EdfHeader& header,
                                              std::size_t signal_index) {
  require(signal_index < header.signals.size(), Errc::InvariantViolation,
          "signal index " + std::to_string(signal_index) + " out of range");
  const auto records = static_cast<std::size_t>(header.n_data_records);
  const auto record_bytes = header.record_bytes();
  const auto data_begin = static_cast<std::size_t>(header.header_bytes);
  if (file.size() < data_begin + records * record_bytes)
    fail(Errc::TruncatedData, "expected " + std::to_string(records * record_bytes) + " data bytes, have " +
                                  std::to_string(file.size() > data_begin ? file.size() - data_begin : 0));

  const auto spr = static_cast<std::size_t>(header.signals[signal_index].samples_per_record);
  const auto offset = header.signal_offset(signal_index);
  std::vector<std::int16_t> out(records * spr);
  for (std::size_t r = 0; r < records; ++r) {
    const auto* src = file.data() + data_begin + r * record_bytes + offset;
    std::memcpy(out.data() + r * spr, src, spr * 2);
  }
  return out;
}

inline SignalTrace read_signal(std::span<const std::uint8_t> file, const EdfHeader& header,
                               std::size_t signal_index) {
  const auto digital = read_digital(file, header, signal_index);
  const auto& s = header.signals[signal_index];
  SignalTrace trace;
  trace.label = s.label;
  trace.sample_rate_hz =
      header.record_duration_s > 0 ? s.samples_per_record / header.record_duration_s : 0.0;
  trace.samples.resize(digital.size());
  for (std::size_t i = 0; i < digital.size(); ++i)
    trace.samples[i] = static_cast<float>(digital_to_physical(digital[i], s));
  return trace;
}

namespace detail {

inline constexpr std::uint8_t kTalDuration = 0x15;
inline constexpr std::uint8_t kTalSeparator = 0x14;

inline double parse_tal_number(std::string_view text) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = first + text.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (text.empty() || ec != std::errc{} || ptr != last)
    fail(Errc::MalformedTal, "bad TAL number '" + std::string(text) + "'");
  return value;
}

/// Parses the TALs in one record's annotation bytes, appending events with
/// non-empty text.
inline void parse_tal_block(std::span<const std::uint8_t> block, std::vector<HypnogramEvent>& out) {
  std::size_t i = 0;
  const auto n = block.size();
  auto read_until = [&](auto stop) {
    const auto start = i;
    while (i < n && !stop(block[i])) ++i;
    if (i >= n) fail(Errc::MalformedTal, "unterminated TAL field");
    return std::string_view(reinterpret_cast<const char*>(block.data() + start), i - start);
  };

  while (true) {
    while (i < n && block[i] == 0x00) ++i;
    if (i >= n) return;
    if (block[i] != '+' && block[i] != '-') fail(Errc::MalformedTal, "TAL onset must start with '+' or '-'");

    const auto onset_text =
        read_until([](std::uint8_t b) { return b == kTalDuration || b == kTalSeparator || b == 0x00; });
    if (block[i] == 0x00) fail(Errc::MalformedTal, "TAL ended before onset separator");
    const double onset = parse_tal_number(onset_text);
    double duration = 0.0;
    if (block[i] == kTalDuration) {
      ++i;
      const auto dur_text = read_until([](std::uint8_t b) { return b == kTalSeparator || b == 0x00; });
      if (block[i] == 0x00) fail(Errc::MalformedTal, "TAL ended before duration separator");
      duration = parse_tal_number(dur_text);
      if (duration < 0) fail(Errc::MalformedTal, "negative TAL duration");
    }
    ++i;  // past the 0x14 closing the timestamp

    while (true) {
      if (i >= n) fail(Errc::MalformedTal, "TAL missing terminating 0x00");
      if (block[i] == 0x00) {
        ++i;
        break;
      }
      const auto text = read_until([](std::uint8_t b) { return b == kTalSeparator || b == 0x00; });
      if (block[i] == 0x00) fail(Errc::MalformedTal, "annotation text not terminated by 0x14");
      ++i;
      if (!text.empty()) out.push_back({onset, duration, std::string(text)});
    }
  }
}

}  // namespace detail

/// Stage events from an EDF+ hypnogram file, in onset order.
inline std::vector<HypnogramEvent> parse_hypnogram(std::span<const std::uint8_t> file) {
  const auto header = parse_edf_header(file);
  const auto ann = header.find_signal(kAnnotationLabel);
  if (!ann) fail(Errc::MalformedTal, "no 'EDF Annotations' signal");

  const auto words = read_digital(file, header, *ann);
  const auto spr = static_cast<std::size_t>(header.signals[*ann].samples_per_record);
  const auto* raw = reinterpret_cast<const std::uint8_t*>(words.data());

  std::vector<HypnogramEvent> events;
  for (std::size_t r = 0; r < static_cast<std::size_t>(header.n_data_records); ++r)
    detail::parse_tal_block({raw + r * spr * 2, spr * 2}, events);

  for (std::size_t k = 1; k < events.size(); ++k) {
    const auto& prev = events[k - 1];
    const auto& cur = events[k];
    if (cur.onset_s < prev.onset_s || cur.onset_s < prev.onset_s + prev.duration_s - 1e-6)
      fail(Errc::NonMonotonicOnsets, "event at " + std::to_string(cur.onset_s) + " s starts before the previous "
                                     "event ends");
  }
  return events;
}

struct RecordName {
  std::string subject_key;
  int night = 1;
};

/// Sleep-EDF stems look like SC4ssNEx: "SC4" + two-digit subject + night digit.
/// Unrecognized stems are treated as a single-night subject named by the stem.
inline RecordName parse_record_name(std::string_view file_name) {
  auto stem = std::filesystem::path(file_name).filename().string();
  if (const auto dash = stem.find('-'); dash != std::string::npos) stem.erase(dash);
  if (const auto dot = stem.find('.'); dot != std::string::npos) stem.erase(dot);
  if (stem.size() >= 6 && stem[5] >= '0' && stem[5] <= '9') return {stem.substr(0, 5), stem[5] - '0'};
  return {stem, 1};
}

inline constexpr double kRequiredSampleRateHz = 100.0;

inline RawRecord load_record(std::span<const std::uint8_t> psg, std::span<const std::uint8_t> hypnogram,
                             const std::vector<std::string>& wanted_channels, const RecordName& name) {
  const auto header = parse_edf_header(psg);
  RawRecord rec;
  rec.subject_key = name.subject_key;
  rec.night = name.night;
  for (const auto& label : wanted_channels) {
    const auto index = header.find_signal(label);
    if (!index) fail(Errc::MissingChannel, "channel '" + label + "' not found");
    auto trace = read_signal(psg, header, *index);
    if (std::abs(trace.sample_rate_hz - kRequiredSampleRateHz) > 1e-9)
      fail(Errc::UnsupportedSampleRate,
           "channel '" + label + "' sampled at " + std::to_string(trace.sample_rate_hz) + " Hz, need 100 Hz");
    rec.signals.emplace(label, std::move(trace));
  }
  if (!rec.signals.empty()) {
    const double ref = rec.signals.begin()->second.duration_s();
    for (const auto& [label, trace] : rec.signals)
      if (std::abs(trace.duration_s() - ref) > header.record_duration_s + 1e-9)
        fail(Errc::DurationMismatch, "channel '" + label + "' duration differs by more than one record");
  }
  rec.events = parse_hypnogram(hypnogram);
  return rec;
}

inline RawRecord load_record(const std::filesystem::path& psg_path, const std::filesystem::path& hyp_path,
                             const std::vector<std::string>& wanted_channels) {
  const auto psg = read_file(psg_path.string());
  const auto hyp = read_file(hyp_path.string());
  return load_record(psg, hyp, wanted_channels, parse_record_name(psg_path.filename().string()));
}

}  // namespace ulw::edf
