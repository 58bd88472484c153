#pragma once

#include <map>

#include "skimo/dataset.hpp"

namespace skimo {

// Checkpoint container format: magic "SKCK" | u16 version=1 | u32 tensor
// count | per tensor (u16 name length, name bytes, u8 rank, rank * u32 dims,
// f32 little-endian payload) | u64 config hash. Tensors are written in name
// order, so identical state produces identical bytes.
inline constexpr char kCkptMagic[4] = {'S', 'K', 'C', 'K'};
inline constexpr uint16_t kCkptVersion = 1;

struct NamedTensor {
  std::vector<int> shape;
  std::vector<float> data;
};

using TensorMap = std::map<std::string, NamedTensor>;

inline void save_tensor_map(const TensorMap& tensors, uint64_t config_hash,
                            const std::string& path) {
  auto out = bin::open_out(path);
  out.write(kCkptMagic, 4);
  bin::write_pod(out, kCkptVersion);
  bin::write_pod(out, uint32_t(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff) throw UsageError("tensor name too long: " + name);
    bin::write_pod(out, uint16_t(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    bin::write_pod(out, uint8_t(t.shape.size()));
    size_t numel = 1;
    for (int d : t.shape) {
      bin::write_pod(out, uint32_t(d));
      numel *= size_t(d);
    }
    if (numel != t.data.size()) throw UsageError("tensor payload/shape mismatch: " + name);
    bin::write_f32s(out, t.data);
  }
  bin::write_pod(out, config_hash);
  if (!out) throw UsageError("write failed: " + path);
}

struct LoadedCheckpoint {
  TensorMap tensors;
  uint64_t config_hash = 0;
};

inline LoadedCheckpoint load_tensor_map(const std::string& path) {
  auto in = bin::open_in(path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw FormatError(FormatError::Kind::BadMagic, "not a checkpoint file: " + path);
  auto version = bin::read_pod<uint16_t>(in, "version");
  if (version != kCkptVersion)
    throw FormatError(FormatError::Kind::BadVersion,
                      "unsupported checkpoint version " + std::to_string(version));
  auto count = bin::read_pod<uint32_t>(in, "tensor count");
  LoadedCheckpoint ck;
  for (uint32_t i = 0; i < count; ++i) {
    auto name_len = bin::read_pod<uint16_t>(in, "name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (in.gcount() != std::streamsize(name_len))
      throw FormatError(FormatError::Kind::Truncated, "unexpected end of file reading name");
    NamedTensor t;
    auto rank = bin::read_pod<uint8_t>(in, "rank");
    size_t numel = 1;
    for (int r = 0; r < rank; ++r) {
      auto d = bin::read_pod<uint32_t>(in, "dim");
      if (d == 0 || numel * d > (1u << 30))
        throw FormatError(FormatError::Kind::Malformed, "implausible tensor dims in " + name);
      t.shape.push_back(int(d));
      numel *= d;
    }
    t.data.resize(numel);
    bin::read_f32s(in, t.data, name.c_str());
    if (!ck.tensors.emplace(name, std::move(t)).second)
      throw FormatError(FormatError::Kind::Malformed, "duplicate tensor name " + name);
  }
  ck.config_hash = bin::read_pod<uint64_t>(in, "config hash");
  return ck;
}

}  // namespace skimo
