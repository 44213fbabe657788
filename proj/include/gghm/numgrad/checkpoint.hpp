#pragma once

// Parameter checkpoints:
//   "GGHMCKPT" | version u32 | count u32 |
//   per parameter: name_len u32, UTF-8 name, rank u32, dims u64 x rank, f32 payload
// All integers and floats little-endian.

#include <string>
#include <vector>

#include "gghm/binary_io.hpp"
#include "gghm/numgrad/parameters.hpp"

namespace gghm::numgrad {

inline constexpr std::string_view kCheckpointMagic = "GGHMCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

inline std::vector<char> encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name);
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (const auto d : e.shape) w.u64(d);
    for (const float v : e.values) w.f32(v);
  }
  return w.buffer();
}

inline std::vector<CheckpointEntry> decode_checkpoint(std::vector<char> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect(kCheckpointMagic, "checkpoint header");
  const auto version_at = r.offset();
  if (r.u32("checkpoint version") != kCheckpointVersion) throw FormatError("unsupported checkpoint version", version_at);
  const auto count = r.u32("parameter count");
  std::vector<CheckpointEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = r.u32("name length");
    e.name = r.bytes(len, "parameter name");
    const auto rank = r.u32("rank");
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      e.shape.push_back(r.u64("dimension"));
      n *= e.shape.back();
    }
    r.need(n * 4, "parameter payload");
    e.values.resize(n);
    for (auto& v : e.values) v = r.f32("parameter payload");
    entries.push_back(std::move(e));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint", r.offset());
  return entries;
}

template <Real T>
std::vector<CheckpointEntry> to_checkpoint(const ParameterSet<T>& params) {
  std::vector<CheckpointEntry> out;
  for (const auto& p : params) {
    out.push_back({p.name, p.tensor.shape(), std::vector<float>(p.tensor.data().begin(), p.tensor.data().end())});
  }
  return out;
}

/// Copies checkpoint values into `params` by name. Every parameter must be
/// present with an identical shape.
template <Real T>
void load_into(ParameterSet<T>& params, const std::vector<CheckpointEntry>& entries) {
  std::vector<const CheckpointEntry*> matches;
  for (const auto& p : params) {
    const CheckpointEntry* match = nullptr;
    for (const auto& e : entries) {
      if (e.name == p.name) match = &e;
    }
    if (!match) throw ConfigError("checkpoint lacks parameter '" + p.name + "'");
    if (match->shape != p.tensor.shape()) {
      throw ConfigError("checkpoint parameter '" + p.name + "' has shape " + to_string(match->shape) +
                        ", model expects " + to_string(p.tensor.shape()));
    }
    matches.push_back(match);
  }
  for (const auto& e : entries) {
    if (!params.find(e.name)) throw ConfigError("checkpoint has unknown parameter '" + e.name + "'");
  }
  // Validated in full before any write, so a failed load leaves params intact.
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(matches[i]->values[k]);
  }
}

template <Real T>
void save_checkpoint(const ParameterSet<T>& params, const std::string& path) {
  io::write_file(path, encode_checkpoint(to_checkpoint(params)));
}

template <Real T>
void load_checkpoint(ParameterSet<T>& params, const std::string& path) {
  load_into(params, decode_checkpoint(io::read_file(path)));
}

}  // namespace gghm::numgrad
