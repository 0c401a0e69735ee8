#include <gtest/gtest.h>

#include <cstdlib>

#include "ulw/config_json.hpp"

using namespace ulw;

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

}  // namespace

TEST(ConfigJson, RoundTrip) {
  ModelConfig m;
  m.filters = {4, 8, 16, 32};
  m.n_blocks = 4;
  m.conv_type = ConvType::Standard;
  m.kernel_size = 5;
  EXPECT_EQ(model_config_from_json(to_json(m)), m);

  TrainConfig t;
  t.seed = 99;
  t.epochs = 3;
  EXPECT_EQ(train_config_from_json(to_json(t)), t);
}

TEST(ConfigJson, BlocksInferredFromFilters) {
  const auto m = model_config_from_json(parse_json_text(R"({"filters": [16, 32]})", "inline"));
  EXPECT_EQ(m.n_blocks, 2u);
  EXPECT_EQ(m.kernel_size, 3u);
}

TEST(ConfigJson, Rejections) {
  EXPECT_EQ(code_of([] { model_config_from_json(parse_json_text(R"({"filterz": [1]})", "x")); }), Errc::BadConfig);
  EXPECT_EQ(code_of([] { model_config_from_json(parse_json_text(R"({"filters": [8, 4]})", "x")); }),
            Errc::BadConfig);
  EXPECT_EQ(code_of([] { model_config_from_json(parse_json_text(R"({"conv_type": "dense"})", "x")); }),
            Errc::BadConfig);
  EXPECT_EQ(code_of([] { train_config_from_json(parse_json_text(R"({"batch_size": "big"})", "x")); }),
            Errc::BadConfig);
  EXPECT_EQ(code_of([] { train_config_from_json(parse_json_text(R"([1, 2])", "x")); }), Errc::BadConfig);
}

TEST(ConfigJson, ParseErrorNamesLocation) {
  try {
    parse_json_text("{\n  \"filters\": [8, 16,\n}", "cfg.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BadConfig);
    const std::string what = e.what();
    EXPECT_NE(what.find("cfg.json"), std::string::npos) << what;
    EXPECT_NE(what.find("line 3"), std::string::npos) << what;
  }
}

TEST(ConfigJson, SeedOverride) {
  TrainConfig t;
  t.seed = 1;
  ::setenv("ULWS_SEED", "1234", 1);
  apply_seed_override(t);
  EXPECT_EQ(t.seed, 1234u);
  ::setenv("ULWS_SEED", "12x", 1);
  EXPECT_EQ(code_of([&] { apply_seed_override(t); }), Errc::BadConfig);
  ::unsetenv("ULWS_SEED");
  apply_seed_override(t);
  EXPECT_EQ(t.seed, 1234u);
}
