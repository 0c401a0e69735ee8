#pragma once

// Model checkpoint: "ULWM", version byte, ModelConfig, every parameter array
// (param_views order, including BN running statistics) as little-endian
// float32, then CRC-32 of everything after the magic.

#include <string>
#include <string_view>

#include "ulw/bytes.hpp"
#include "ulw/model.hpp"

namespace ulw {

inline constexpr std::string_view kCheckpointMagic = "ULWM";
inline constexpr std::uint8_t kCheckpointVersion = 0x01;

inline void encode_config(ByteWriter& w, const ModelConfig& c) {
  w.put(static_cast<std::uint32_t>(c.n_blocks));
  w.put(static_cast<std::uint32_t>(c.kernel_size));
  w.put(static_cast<std::uint32_t>(c.pool_size));
  w.put(static_cast<std::uint32_t>(c.pool_stride));
  w.put(static_cast<std::uint8_t>(c.conv_type));
  w.put(static_cast<std::uint32_t>(c.n_input_channels));
  w.put(static_cast<std::uint32_t>(c.input_length));
  w.put(static_cast<std::uint32_t>(c.head_hidden));
  w.put(static_cast<std::uint32_t>(c.n_classes));
  w.put(c.dropout_block);
  w.put(c.dropout_head);
  w.put(c.bn_epsilon);
  w.put(c.bn_momentum);
  for (const auto f : c.filters) w.put(static_cast<std::uint32_t>(f));
}

inline ModelConfig decode_config(ByteReader& r) {
  ModelConfig c;
  c.n_blocks = r.get<std::uint32_t>();
  c.kernel_size = r.get<std::uint32_t>();
  c.pool_size = r.get<std::uint32_t>();
  c.pool_stride = r.get<std::uint32_t>();
  const auto conv = r.get<std::uint8_t>();
  if (conv > 1) fail(Errc::BadConfig, "unknown conv type in checkpoint");
  c.conv_type = static_cast<ConvType>(conv);
  c.n_input_channels = r.get<std::uint32_t>();
  c.input_length = r.get<std::uint32_t>();
  c.head_hidden = r.get<std::uint32_t>();
  c.n_classes = r.get<std::uint32_t>();
  c.dropout_block = r.get<double>();
  c.dropout_head = r.get<double>();
  c.bn_epsilon = r.get<double>();
  c.bn_momentum = r.get<double>();
  if (c.n_blocks > 64) fail(Errc::BadConfig, "implausible block count in checkpoint");
  c.filters.resize(c.n_blocks);
  for (auto& f : c.filters) f = r.get<std::uint32_t>();
  c.validate();
  return c;
}

template <typename Real>
Bytes encode_checkpoint(const ModelParams<Real>& params) {
  ByteWriter w;
  w.put_raw(kCheckpointMagic);
  w.put(kCheckpointVersion);
  encode_config(w, params.config);
  for (const auto& view : param_views(params))
    for (const Real v : view.values) w.put(static_cast<float>(v));
  const auto body = std::span<const std::uint8_t>(w.bytes()).subspan(kCheckpointMagic.size());
  w.put(crc32(body));
  return std::move(w.bytes());
}

template <typename Real = float>
ModelParams<Real> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kCheckpointMagic.size() ||
      std::string_view(reinterpret_cast<const char*>(bytes.data()), kCheckpointMagic.size()) != kCheckpointMagic)
    fail(Errc::BadMagic, "not a ULWM checkpoint");
  if (bytes.size() < kCheckpointMagic.size() + 5) fail(Errc::ChecksumMismatch, "checkpoint truncated");
  if (bytes[kCheckpointMagic.size()] != kCheckpointVersion)
    fail(Errc::VersionMismatch, "checkpoint version " + std::to_string(bytes[kCheckpointMagic.size()]));
  const auto body = bytes.subspan(kCheckpointMagic.size(), bytes.size() - kCheckpointMagic.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (crc32(body) != stored) fail(Errc::ChecksumMismatch, "checkpoint CRC mismatch");

  ByteReader r(body.subspan(1), Errc::ChecksumMismatch);
  auto params = allocate_params<Real>(decode_config(r));
  for (auto& view : param_views(params))
    for (auto& v : view.values) v = static_cast<Real>(r.get<float>());
  if (r.remaining() != 0) fail(Errc::ChecksumMismatch, "trailing bytes in checkpoint");
  return params;
}

template <typename Real>
void save_checkpoint(const ModelParams<Real>& params, const std::string& path) {
  write_file(path, encode_checkpoint(params));
}

template <typename Real = float>
ModelParams<Real> load_checkpoint(const std::string& path) {
  return decode_checkpoint<Real>(read_file(path));
}

}  // namespace ulw
