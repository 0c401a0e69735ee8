#include <gtest/gtest.h>

#include <cstring>

#include "fixtures.hpp"

using namespace ulw;
using namespace ulw::edf;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected ulw::Error";
  return Errc::Io;
}

Bytes small_edf() {
  auto a = make_signal("EEG Fpz-Cz", 4, 0.0, 100.0, 0, 1000);
  auto b = make_signal("EOG horizontal", 2);
  const auto h = make_header({a, b}, 3, 1.0);
  return encode_edf(h, {{0, 250, 500, 1000, 1, 2, 3, 4, 5, 6, 7, 8}, {-32768, 32767, 0, -1, 100, -100}});
}

void overwrite(Bytes& bytes, std::size_t offset, std::string_view text) {
  std::memcpy(bytes.data() + offset, text.data(), text.size());
}

}  // namespace

TEST(EdfHeader, ParsesFixedAndSignalFields) {
  const auto bytes = small_edf();
  const auto h = parse_edf_header(bytes);
  EXPECT_EQ(h.version, "0");
  EXPECT_EQ(h.header_bytes, 768);
  EXPECT_EQ(h.n_data_records, 3);
  EXPECT_DOUBLE_EQ(h.record_duration_s, 1.0);
  ASSERT_EQ(h.n_signals, 2);
  EXPECT_EQ(h.signals[0].label, "EEG Fpz-Cz");
  EXPECT_EQ(h.signals[1].samples_per_record, 2);
  EXPECT_EQ(h.signals[1].digital_min, -32768);
  EXPECT_FALSE(h.is_edf_plus());
  EXPECT_EQ(h.record_bytes(), 12u);
  EXPECT_EQ(h.signal_offset(1), 8u);
}

TEST(EdfHeader, RoundTripIsBitExact) {
  const auto bytes = small_edf();
  const auto h = parse_edf_header(bytes);
  const auto reencoded = encode_header(h);
  ASSERT_EQ(reencoded.size(), h.header_bytes);
  EXPECT_TRUE(std::equal(reencoded.begin(), reencoded.end(), bytes.begin()));

  std::vector<std::vector<std::int16_t>> digital{read_digital(bytes, h, 0), read_digital(bytes, h, 1)};
  EXPECT_EQ(encode_edf(h, digital), bytes);
}

TEST(EdfHeader, TruncatedFixedHeader) {
  const auto bytes = small_edf();
  EXPECT_EQ(code_of([&] { parse_edf_header(std::span(bytes).first(100)); }), Errc::TruncatedHeader);
  EXPECT_EQ(code_of([&] { parse_edf_header(std::span(bytes).first(600)); }), Errc::TruncatedHeader);
}

TEST(EdfHeader, NonNumericFieldIsMalformed) {
  auto bytes = small_edf();
  overwrite(bytes, 236, "abc     ");  // n_data_records
  EXPECT_EQ(code_of([&] { parse_edf_header(bytes); }), Errc::MalformedField);
}

TEST(EdfHeader, HeaderBytesMustMatchSignalCount) {
  auto bytes = small_edf();
  overwrite(bytes, 184, "1024    ");
  EXPECT_EQ(code_of([&] { parse_edf_header(bytes); }), Errc::InvariantViolation);
}

TEST(EdfHeader, StreamingRecordCountRejected) {
  auto bytes = small_edf();
  overwrite(bytes, 236, "-1      ");
  EXPECT_EQ(code_of([&] { parse_edf_header(bytes); }), Errc::InvariantViolation);
}

TEST(EdfHeader, DigitalRangeMustBeOrdered) {
  auto a = make_signal("X", 1, 0.0, 1.0, 10, 10);
  const auto bytes = encode_edf(make_header({a}, 1, 1.0), {{10}});
  EXPECT_EQ(code_of([&] { parse_edf_header(bytes); }), Errc::InvariantViolation);
}

TEST(EdfHeader, NonAsciiReplaced) {
  auto bytes = small_edf();
  bytes[8] = 0xE9;
  EXPECT_EQ(parse_edf_header(bytes).patient_info.front(), '?');
}

TEST(EdfSignal, DigitalToPhysicalMatchesHandValues) {
  const auto h = parse_edf_header(small_edf());
  // [0, 1000] -> [0, 100]: 0.1 uV per step
  EXPECT_DOUBLE_EQ(digital_to_physical(250, h.signals[0]), 25.0);
  EXPECT_DOUBLE_EQ(digital_to_physical(0, h.signals[0]), 0.0);
  EXPECT_DOUBLE_EQ(digital_to_physical(1000, h.signals[0]), 100.0);
  // [-32768, 32767] -> [-500, 500]: (d + 32768) * 1000 / 65535 - 500
  EXPECT_DOUBLE_EQ(digital_to_physical(-32768, h.signals[1]), -500.0);
  EXPECT_DOUBLE_EQ(digital_to_physical(32767, h.signals[1]), 500.0);
  EXPECT_NEAR(digital_to_physical(0, h.signals[1]), 0.007629510948333973, 1e-12);
  EXPECT_NEAR(digital_to_physical(-1, h.signals[1]), -0.007629510948333973, 1e-12);
}

TEST(EdfSignal, SamplesConcatenateAcrossRecords) {
  const auto bytes = small_edf();
  const auto h = parse_edf_header(bytes);
  EXPECT_EQ(read_digital(bytes, h, 1), (std::vector<std::int16_t>{-32768, 32767, 0, -1, 100, -100}));
  const auto trace = read_signal(bytes, h, 0);
  EXPECT_DOUBLE_EQ(trace.sample_rate_hz, 4.0);
  ASSERT_EQ(trace.samples.size(), 12u);
  EXPECT_FLOAT_EQ(trace.samples[1], 25.0f);
  EXPECT_DOUBLE_EQ(trace.duration_s(), 3.0);
}

TEST(EdfSignal, TruncatedData) {
  auto bytes = small_edf();
  bytes.resize(bytes.size() - 3);
  const auto h = parse_edf_header(bytes);
  EXPECT_EQ(code_of([&] { read_digital(bytes, h, 0); }), Errc::TruncatedData);
}

TEST(Tal, ParsesOnsetDurationAndText) {
  std::string block = "+0\x14\x14";
  block += '\0';
  block += "+30\x15" "30\x14Sleep stage W\x14";
  block += '\0';
  block += "+60.5\x15" "90\x14Sleep stage 2\x14second\x14";
  block += '\0';
  block += std::string(5, '\0');
  std::vector<HypnogramEvent> events;
  edf::detail::parse_tal_block({reinterpret_cast<const std::uint8_t*>(block.data()), block.size()}, events);
  ASSERT_EQ(events.size(), 3u);
  EXPECT_EQ(events[0], (HypnogramEvent{30, 30, "Sleep stage W"}));
  EXPECT_EQ(events[1], (HypnogramEvent{60.5, 90, "Sleep stage 2"}));
  EXPECT_EQ(events[2].stage_text, "second");
}

TEST(Tal, MalformedInputs) {
  auto parse = [](std::string block) {
    std::vector<HypnogramEvent> events;
    edf::detail::parse_tal_block({reinterpret_cast<const std::uint8_t*>(block.data()), block.size()}, events);
  };
  EXPECT_EQ(code_of([&] { parse("30\x14x\x14"); }), Errc::MalformedTal);
  EXPECT_EQ(code_of([&] { parse("+3a\x14x\x14"); }), Errc::MalformedTal);
  EXPECT_EQ(code_of([&] { parse("+30\x15" "30\x14x\x14"); }), Errc::MalformedTal);  // no 0x00
}

TEST(Hypnogram, RoundTripThroughEncoder) {
  std::vector<HypnogramEvent> events{{0, 30, "Sleep stage W"}, {30, 60, "Sleep stage 1"}, {90, 30, "Sleep stage R"}};
  EXPECT_EQ(parse_hypnogram(encode_hypnogram(events)), events);
}

TEST(Hypnogram, DecreasingOnsetRejected) {
  std::vector<HypnogramEvent> events{{60, 30, "Sleep stage W"}, {30, 30, "Sleep stage 1"}};
  EXPECT_EQ(code_of([&] { parse_hypnogram(encode_hypnogram(events)); }), Errc::NonMonotonicOnsets);
}

TEST(Hypnogram, OverlapRejected) {
  std::vector<HypnogramEvent> events{{0, 60, "Sleep stage W"}, {30, 30, "Sleep stage 1"}};
  EXPECT_EQ(code_of([&] { parse_hypnogram(encode_hypnogram(events)); }), Errc::NonMonotonicOnsets);
}

TEST(RecordName, SleepEdfStems) {
  const auto a = parse_record_name("SC4001E0-PSG.edf");
  EXPECT_EQ(a.subject_key, "SC400");
  EXPECT_EQ(a.night, 1);
  const auto b = parse_record_name("/data/SC4012E0-PSG.edf");
  EXPECT_EQ(b.subject_key, "SC401");
  EXPECT_EQ(b.night, 2);
  EXPECT_EQ(parse_record_name("subjectA.edf").subject_key, "subjectA");
}

TEST(LoadRecord, ReadsWantedChannels) {
  const auto psg = fixtures::make_psg(4, fixtures::default_sample);
  const auto hyp = fixtures::make_hypnogram(fixtures::night_stages(1, 2, 1));
  const auto rec = load_record(psg, hyp, fixtures::kChannels, {"SC400", 1});
  EXPECT_EQ(rec.signals.size(), 4u);
  EXPECT_EQ(rec.signals.at("EMG submental").samples.size(), 12000u);
  EXPECT_EQ(rec.events.size(), 4u);
  EXPECT_NEAR(rec.signals.at("EEG Fpz-Cz").samples[25], fixtures::default_sample(0, 0.25), 0.02);
}

TEST(LoadRecord, MissingChannel) {
  const auto psg = fixtures::make_psg(2, fixtures::default_sample, {"EEG Fpz-Cz", "EEG Pz-Oz", "EOG horizontal"});
  const auto hyp = fixtures::make_hypnogram({"Sleep stage W", "Sleep stage 1"});
  EXPECT_EQ(code_of([&] { load_record(psg, hyp, fixtures::kChannels, {"SC400", 1}); }), Errc::MissingChannel);
}

TEST(LoadRecord, LowRateChannelRejected) {
  const auto psg = fixtures::make_psg(2, fixtures::default_sample, fixtures::kChannels, {100, 100, 100, 1});
  const auto hyp = fixtures::make_hypnogram({"Sleep stage W", "Sleep stage 1"});
  EXPECT_EQ(code_of([&] { load_record(psg, hyp, fixtures::kChannels, {"SC400", 1}); }), Errc::UnsupportedSampleRate);
}
