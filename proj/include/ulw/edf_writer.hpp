#pragma once

// Minimal EDF/EDF+ encoder used to build test fixtures and synthetic
// recordings. Not a general-purpose writer: no streaming, no BDF.

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ulw/edf.hpp"

namespace ulw::edf {

namespace detail {

inline void put_field(Bytes& out, std::string_view text, std::size_t width) {
  if (text.size() > width)
    fail(Errc::MalformedField, "'" + std::string(text) + "' exceeds field width " + std::to_string(width));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), width - text.size(), ' ');
}

/// Shortest %g rendering that fits an 8-character EDF numeric field.
inline std::string format_number(double value) {
  char buf[32];
  for (int precision = 17; precision > 0; --precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, value);
    if (std::string_view(buf).size() <= 8 && std::strtod(buf, nullptr) == value) return buf;
  }
  for (int precision = 8; precision > 0; --precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, value);
    if (std::string_view(buf).size() <= 8) return buf;
  }
  fail(Errc::MalformedField, "number does not fit an EDF field");
}

}  // namespace detail

/// Serializes the header; header_bytes and n_signals are recomputed from
/// `header.signals`.
inline Bytes encode_header(const EdfHeader& header) {
  Bytes out;
  const auto ns = header.signals.size();
  detail::put_field(out, header.version, 8);
  detail::put_field(out, header.patient_info, 80);
  detail::put_field(out, header.recording_info, 80);
  detail::put_field(out, header.start_date, 8);
  detail::put_field(out, header.start_time, 8);
  detail::put_field(out, std::to_string(kFixedHeaderBytes * (ns + 1)), 8);
  detail::put_field(out, header.reserved, 44);
  detail::put_field(out, std::to_string(header.n_data_records), 8);
  detail::put_field(out, detail::format_number(header.record_duration_s), 8);
  detail::put_field(out, std::to_string(ns), 4);
  for (const auto& s : header.signals) detail::put_field(out, s.label, 16);
  for (const auto& s : header.signals) detail::put_field(out, s.transducer, 80);
  for (const auto& s : header.signals) detail::put_field(out, s.physical_dimension, 8);
  for (const auto& s : header.signals) detail::put_field(out, detail::format_number(s.physical_min), 8);
  for (const auto& s : header.signals) detail::put_field(out, detail::format_number(s.physical_max), 8);
  for (const auto& s : header.signals) detail::put_field(out, std::to_string(s.digital_min), 8);
  for (const auto& s : header.signals) detail::put_field(out, std::to_string(s.digital_max), 8);
  for (const auto& s : header.signals) detail::put_field(out, s.prefiltering, 80);
  for (const auto& s : header.signals) detail::put_field(out, std::to_string(s.samples_per_record), 8);
  for (const auto& s : header.signals) detail::put_field(out, s.reserved, 32);
  return out;
}

/// Header plus data records. `digital[i]` holds all samples of signal i,
/// n_data_records * samples_per_record words long.
inline Bytes encode_edf(const EdfHeader& header, const std::vector<std::vector<std::int16_t>>& digital) {
  require(digital.size() == header.signals.size(), Errc::InvariantViolation, "one sample vector per signal");
  const auto records = static_cast<std::size_t>(header.n_data_records);
  for (std::size_t i = 0; i < digital.size(); ++i)
    require(digital[i].size() == records * static_cast<std::size_t>(header.signals[i].samples_per_record),
            Errc::InvariantViolation, "signal " + std::to_string(i) + " has the wrong sample count");

  ByteWriter w;
  w.bytes() = encode_header(header);
  for (std::size_t r = 0; r < records; ++r) {
    for (std::size_t i = 0; i < digital.size(); ++i) {
      const auto spr = static_cast<std::size_t>(header.signals[i].samples_per_record);
      w.put_array(std::span<const std::int16_t>(digital[i].data() + r * spr, spr));
    }
  }
  return std::move(w.bytes());
}

/// One TAL: "+onset[0x15 duration]0x14 text 0x14 0x00".
inline std::string encode_tal(double onset_s, std::optional<double> duration_s, std::string_view text) {
  std::string tal = "+" + detail::format_number(onset_s);
  if (duration_s) {
    tal += '\x15';
    tal += detail::format_number(*duration_s);
  }
  tal += '\x14';
  tal += text;
  tal += '\x14';
  tal += '\0';
  return tal;
}

inline SignalHeader make_signal(std::string label, std::int32_t samples_per_record, double physical_min = -500.0,
                                double physical_max = 500.0, std::int32_t digital_min = -32768,
                                std::int32_t digital_max = 32767) {
  SignalHeader s;
  s.label = std::move(label);
  s.transducer = "Ag-AgCl electrodes";
  s.physical_dimension = "uV";
  s.physical_min = physical_min;
  s.physical_max = physical_max;
  s.digital_min = digital_min;
  s.digital_max = digital_max;
  s.prefiltering = "HP:0.5Hz LP:100Hz";
  s.samples_per_record = samples_per_record;
  return s;
}

inline EdfHeader make_header(std::vector<SignalHeader> signals, std::int64_t n_records, double record_duration_s,
                             bool edf_plus = false) {
  EdfHeader h;
  h.version = "0";
  h.patient_info = "X F X Fixture";
  h.recording_info = "Startdate 01-JAN-2000 X X X";
  h.start_date = "01.01.00";
  h.start_time = "22.00.00";
  h.reserved = edf_plus ? "EDF+C" : "";
  h.n_data_records = n_records;
  h.record_duration_s = record_duration_s;
  h.n_signals = static_cast<std::int32_t>(signals.size());
  h.header_bytes = static_cast<std::int64_t>(kFixedHeaderBytes * (signals.size() + 1));
  h.signals = std::move(signals);
  return h;
}

/// Single-record EDF+ file whose only signal is an annotation channel
/// carrying a timekeeping TAL followed by one TAL per event.
inline Bytes encode_hypnogram(const std::vector<HypnogramEvent>& events) {
  std::string payload = encode_tal(0.0, std::nullopt, "");
  for (const auto& e : events) payload += encode_tal(e.onset_s, e.duration_s, e.stage_text);
  if (payload.size() % 2) payload += '\0';
  const auto words = payload.size() / 2;

  auto ann = make_signal(std::string(kAnnotationLabel), static_cast<std::int32_t>(words), -1.0, 1.0);
  ann.transducer.clear();
  ann.physical_dimension.clear();
  ann.prefiltering.clear();
  auto header = make_header({ann}, 1, 0.0, true);

  std::vector<std::int16_t> data(words);
  std::memcpy(data.data(), payload.data(), payload.size());
  return encode_edf(header, {data});
}

}  // namespace ulw::edf
