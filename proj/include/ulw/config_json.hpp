#pragma once

// JSON (de)serialization of ModelConfig / TrainConfig. Keys are the field
// names; missing keys keep their defaults, unknown keys are rejected.

#include <cstdlib>
#include <set>
#include <string>

#include <json.hpp>

#include "ulw/bytes.hpp"
#include "ulw/config.hpp"

namespace ulw {

using Json = nlohmann::ordered_json;

inline Json to_json(const ModelConfig& c) {
  return Json{{"n_blocks", c.n_blocks},
              {"kernel_size", c.kernel_size},
              {"pool_size", c.pool_size},
              {"pool_stride", c.pool_stride},
              {"filters", c.filters},
              {"conv_type", std::string(to_string(c.conv_type))},
              {"n_input_channels", c.n_input_channels},
              {"input_length", c.input_length},
              {"head_hidden", c.head_hidden},
              {"n_classes", c.n_classes},
              {"dropout_block", c.dropout_block},
              {"dropout_head", c.dropout_head},
              {"bn_epsilon", c.bn_epsilon},
              {"bn_momentum", c.bn_momentum}};
}

inline Json to_json(const TrainConfig& c) {
  return Json{{"base_lr", c.base_lr},       {"batch_size", c.batch_size}, {"epochs", c.epochs},
              {"l2_lambda", c.l2_lambda},   {"adam_beta1", c.adam_beta1}, {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},     {"seed", c.seed}};
}

namespace detail {

inline void reject_unknown_keys(const Json& j, const Json& defaults, const char* what) {
  if (!j.is_object()) fail(Errc::BadConfig, std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!defaults.contains(key)) fail(Errc::BadConfig, std::string("unknown ") + what + " key '" + key + "'");
}

template <typename T>
void read_key(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::BadConfig, std::string("key '") + key + "': " + e.what());
  }
}

}  // namespace detail

/// Absent n_blocks is inferred from filters (and vice versa via validate).
inline ModelConfig model_config_from_json(const Json& j) {
  ModelConfig c;
  detail::reject_unknown_keys(j, to_json(c), "model config");
  detail::read_key(j, "filters", c.filters);
  c.n_blocks = c.filters.size();
  detail::read_key(j, "n_blocks", c.n_blocks);
  detail::read_key(j, "kernel_size", c.kernel_size);
  detail::read_key(j, "pool_size", c.pool_size);
  detail::read_key(j, "pool_stride", c.pool_stride);
  std::string conv(to_string(c.conv_type));
  detail::read_key(j, "conv_type", conv);
  c.conv_type = parse_conv_type(conv);
  detail::read_key(j, "n_input_channels", c.n_input_channels);
  detail::read_key(j, "input_length", c.input_length);
  detail::read_key(j, "head_hidden", c.head_hidden);
  detail::read_key(j, "n_classes", c.n_classes);
  detail::read_key(j, "dropout_block", c.dropout_block);
  detail::read_key(j, "dropout_head", c.dropout_head);
  detail::read_key(j, "bn_epsilon", c.bn_epsilon);
  detail::read_key(j, "bn_momentum", c.bn_momentum);
  c.validate();
  return c;
}

inline TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  detail::reject_unknown_keys(j, to_json(c), "train config");
  detail::read_key(j, "base_lr", c.base_lr);
  detail::read_key(j, "batch_size", c.batch_size);
  detail::read_key(j, "epochs", c.epochs);
  detail::read_key(j, "l2_lambda", c.l2_lambda);
  detail::read_key(j, "adam_beta1", c.adam_beta1);
  detail::read_key(j, "adam_beta2", c.adam_beta2);
  detail::read_key(j, "adam_eps", c.adam_eps);
  detail::read_key(j, "seed", c.seed);
  c.validate();
  return c;
}

/// Parse errors carry nlohmann's byte position ("at line L, column C").
inline Json parse_json_text(std::string_view text, const std::string& origin) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(Errc::BadConfig, origin + ": " + e.what());
  }
}

inline Json read_json_file(const std::string& path) {
  const auto bytes = read_file(path);
  return parse_json_text(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), path);
}

/// ULWS_SEED, when set, replaces the configured seed.
inline void apply_seed_override(TrainConfig& c) {
  const char* env = std::getenv("ULWS_SEED");
  if (!env || !*env) return;
  char* end = nullptr;
  const auto v = std::strtoull(env, &end, 10);
  if (*end != '\0') fail(Errc::BadConfig, std::string("ULWS_SEED is not an unsigned integer: '") + env + "'");
  c.seed = v;
}

}  // namespace ulw
