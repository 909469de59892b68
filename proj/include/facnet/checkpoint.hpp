#pragma once

// Checkpoint layout (little-endian):
//   "FACN" | u32 version
//   u32 num_classes | u32 feature_dim | u32 embed1 | u32 embed2 | u32 kernel_size
//   f64 delta | u32 n_temps | n_temps × f64 | u8 use_background | f64 dropout_rate
//   u32 n_tensors, then per tensor:
//     u32 name_len | name | u32 rank | rank × u32 dims | prod(dims) × f32

#include <array>
#include <filesystem>
#include <string>

#include "facnet/binary_io.hpp"
#include "facnet/model.hpp"

namespace facnet {

inline constexpr std::array<char, 4> kCheckpointMagic{'F', 'A', 'C', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
};

template <typename T>
binary::Writer encode_checkpoint(const ModelConfig& c, const ModelParams<T>& p) {
  p.validate(c);
  binary::Writer w;
  w.bytes(kCheckpointMagic.data(), 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.num_classes));
  w.u32(static_cast<std::uint32_t>(c.feature_dim));
  w.u32(static_cast<std::uint32_t>(c.embed_dims[0]));
  w.u32(static_cast<std::uint32_t>(c.embed_dims[1]));
  w.u32(static_cast<std::uint32_t>(c.kernel_size));
  w.f64(c.delta);
  w.u32(static_cast<std::uint32_t>(c.temperatures.size()));
  for (double t : c.temperatures) w.f64(t);
  w.u8(c.use_background ? 1 : 0);
  w.f64(c.dropout_rate);

  const auto ts = p.tensors();
  w.u32(static_cast<std::uint32_t>(ts.size()));
  for (std::size_t i = 0; i < ts.size(); ++i) {
    w.str(kParamNames[i]);
    w.u32(2);
    w.u32(static_cast<std::uint32_t>(ts[i]->rows()));
    w.u32(static_cast<std::uint32_t>(ts[i]->cols()));
    for (T v : ts[i]->storage()) w.f32(static_cast<float>(v));
  }
  return w;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& c, const ModelParams<T>& p) {
  encode_checkpoint(c, p).save(path);
}

inline Checkpoint decode_checkpoint(binary::Reader r) {
  if (r.magic() != kCheckpointMagic) throw FormatError(r.prefix() + "bad magic, expected FACN", 0);
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw FormatError(r.prefix() + "unsupported checkpoint version " + std::to_string(version), 4);

  Checkpoint ck;
  auto& c = ck.config;
  c.num_classes = r.u32();
  c.feature_dim = r.u32();
  c.embed_dims[0] = r.u32();
  c.embed_dims[1] = r.u32();
  c.kernel_size = r.u32();
  c.delta = r.f64();
  const auto n_temps = r.u32();
  if (n_temps > 64) throw FormatError(r.prefix() + "implausible temperature count", r.offset() - 4);
  c.temperatures.clear();
  for (std::uint32_t i = 0; i < n_temps; ++i) c.temperatures.push_back(r.f64());
  c.use_background = r.u8() != 0;
  c.dropout_rate = r.f64();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(r.prefix() + "invalid stored config: " + e.what(), r.offset());
  }

  const auto shapes = ModelParams<float>::expected_shapes(c);
  const auto n_tensors = r.u32();
  if (n_tensors != kParamNames.size()) throw FormatError(r.prefix() + "expected 6 tensors", r.offset() - 4);
  auto ts = ck.params.tensors();
  for (std::size_t i = 0; i < kParamNames.size(); ++i) {
    const std::size_t at = r.offset();
    const auto name = r.str();
    if (name != kParamNames[i]) throw FormatError(r.prefix() + "expected tensor " + kParamNames[i] + ", found " + name, at);
    const auto rank = r.u32();
    if (rank != 2) throw FormatError(r.prefix() + name + ": expected rank 2", r.offset() - 4);
    const std::size_t rows = r.u32();
    const std::size_t cols = r.u32();
    if (rows != shapes[i].first || cols != shapes[i].second) {
      throw FormatError(r.prefix() + name + ": shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                            " does not match config (" + std::to_string(shapes[i].first) + "x" +
                            std::to_string(shapes[i].second) + ")",
                        r.offset() - 8);
    }
    r.need(4 * rows * cols, "tensor payload");
    Matrix<float> m(rows, cols);
    for (auto& v : m.storage()) v = r.f32();
    *ts[i] = std::move(m);
  }
  if (r.remaining() != 0) throw FormatError(r.prefix() + "trailing bytes after last tensor", r.offset());
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(binary::Reader::from_file(path));
}

}  // namespace facnet
