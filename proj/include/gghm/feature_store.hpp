#pragma once

// Class-structured synthetic feature maps, the GGHMFEAT file format and
// TSN-style segment sampling.
//
// GGHMFEAT layout (little-endian):
//   "GGHMFEAT" | version u32 = 1 | n_records u32 | T_raw u32 | C u32 | H u32 | W u32 |
//   per record: class_id u32, video_id u32, f32 payload [T_raw, C, H, W]

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gghm/binary_io.hpp"
#include "gghm/errors.hpp"
#include "gghm/numgrad/tensor.hpp"

namespace gghm::features {

inline constexpr std::string_view kFeatureMagic = "GGHMFEAT";
inline constexpr std::uint32_t kFeatureVersion = 1;

struct FeatureDims {
  std::uint32_t t_raw = 0, c = 0, h = 0, w = 0;

  std::size_t frame_size() const { return std::size_t{c} * h * w; }
  std::size_t record_size() const { return t_raw * frame_size(); }
  friend bool operator==(const FeatureDims&, const FeatureDims&) = default;
};

struct FeatureRecord {
  std::uint32_t class_id = 0;
  std::uint32_t video_id = 0;
  std::vector<float> frames;  // [T_raw, C, H, W]
};

struct FeatureDataset {
  FeatureDims dims;
  std::vector<FeatureRecord> records;

  std::size_t class_count() const {
    std::size_t n = 0;
    for (const auto& r : records) n = std::max<std::size_t>(n, r.class_id + 1);
    return n;
  }

  /// Record indices grouped by class id.
  std::vector<std::vector<std::size_t>> by_class() const {
    std::vector<std::vector<std::size_t>> out(class_count());
    for (std::size_t i = 0; i < records.size(); ++i) out[records[i].class_id].push_back(i);
    return out;
  }
};

struct SyntheticSpec {
  std::uint32_t n_classes = 10;
  std::uint32_t videos_per_class = 20;
  FeatureDims dims{8, 64, 7, 7};
  double noise_sigma = 0.3;
  double order_pair_fraction = 0.4;
  std::uint64_t seed = 1;
  // Per-video offset on the upper half of the channels, with standard
  // deviation distractor_scale * noise_sigma and constant over frames and
  // positions. It carries no class information; a metric must learn to ignore
  // those channels.
  double distractor_scale = 10.0;

  std::uint32_t order_sensitive_classes() const {
    return static_cast<std::uint32_t>(std::llround(order_pair_fraction * n_classes));
  }

  void validate() const {
    if (n_classes == 0) throw ConfigError("synthetic spec: n_classes must be positive");
    if (videos_per_class == 0) throw ConfigError("synthetic spec: videos_per_class must be positive");
    if (dims.t_raw == 0 || dims.c == 0 || dims.h == 0 || dims.w == 0) {
      throw ConfigError("synthetic spec: every dimension must be positive");
    }
    if (!(noise_sigma >= 0.0)) throw ConfigError("synthetic spec: noise_sigma must be >= 0");
    if (!(distractor_scale >= 0.0)) throw ConfigError("synthetic spec: distractor_scale must be >= 0");
    if (!(order_pair_fraction >= 0.0 && order_pair_fraction <= 1.0)) {
      throw ConfigError("synthetic spec: order_pair_fraction must lie in [0,1]");
    }
    const double paired = order_pair_fraction * n_classes;
    if (std::abs(paired - std::round(paired)) > 1e-9 || order_sensitive_classes() % 2 != 0) {
      throw ConfigError("synthetic spec: order_pair_fraction * n_classes must be an even integer, got " +
                        std::to_string(paired));
    }
  }
};

/// Classes [0, 2p) form p order-sensitive pairs (2i, 2i+1): class 2i+1 replays
/// the frame prototypes of class 2i in reverse. Remaining classes draw their
/// own prototypes. Each prototype is a standard-normal channel vector with unit
/// L2 norm, broadcast over H x W. Every video adds i.i.d. N(0, sigma^2) noise
/// per element plus the distractor offset.
inline FeatureDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto& d = spec.dims;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::uint32_t paired = spec.order_sensitive_classes();
  std::vector<std::vector<std::vector<double>>> prototypes(spec.n_classes);  // [class][slot][channel]
  for (std::uint32_t k = 0; k < spec.n_classes; ++k) {
    if (k < paired && k % 2 == 1) {
      prototypes[k].assign(prototypes[k - 1].rbegin(), prototypes[k - 1].rend());
      continue;
    }
    prototypes[k].resize(d.t_raw);
    for (auto& slot : prototypes[k]) {
      slot.resize(d.c);
      double norm = 0.0;
      for (auto& v : slot) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (auto& v : slot) v /= norm;
    }
  }

  const std::uint32_t distractor_begin = d.c - d.c / 2;
  const std::size_t hw = std::size_t{d.h} * d.w;
  FeatureDataset ds;
  ds.dims = d;
  ds.records.reserve(std::size_t{spec.n_classes} * spec.videos_per_class);
  std::uint32_t video_id = 0;
  for (std::uint32_t k = 0; k < spec.n_classes; ++k) {
    for (std::uint32_t v = 0; v < spec.videos_per_class; ++v) {
      std::vector<double> offset(d.c, 0.0);
      for (std::uint32_t c = distractor_begin; c < d.c; ++c) {
        offset[c] = spec.distractor_scale * spec.noise_sigma * normal(rng);
      }
      FeatureRecord rec;
      rec.class_id = k;
      rec.video_id = video_id++;
      rec.frames.resize(d.record_size());
      std::size_t i = 0;
      for (std::uint32_t t = 0; t < d.t_raw; ++t) {
        for (std::uint32_t c = 0; c < d.c; ++c) {
          const double base = prototypes[k][t][c] + offset[c];
          for (std::size_t p = 0; p < hw; ++p) rec.frames[i++] = static_cast<float>(base + spec.noise_sigma * normal(rng));
        }
      }
      ds.records.push_back(std::move(rec));
    }
  }
  return ds;
}

inline std::vector<char> encode_features(const FeatureDataset& ds) {
  io::ByteWriter w;
  w.bytes(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(ds.records.size()));
  w.u32(ds.dims.t_raw);
  w.u32(ds.dims.c);
  w.u32(ds.dims.h);
  w.u32(ds.dims.w);
  for (const auto& r : ds.records) {
    if (r.frames.size() != ds.dims.record_size()) {
      throw DimensionError("feature record " + std::to_string(r.video_id) + " does not match dataset dims");
    }
    w.u32(r.class_id);
    w.u32(r.video_id);
    for (const float v : r.frames) w.f32(v);
  }
  return w.buffer();
}

inline FeatureDataset decode_features(std::vector<char> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect(kFeatureMagic, "feature file header");
  const auto version_at = r.offset();
  if (r.u32("feature version") != kFeatureVersion) throw FormatError("unsupported feature file version", version_at);
  FeatureDataset ds;
  const auto count = r.u32("record count");
  ds.dims.t_raw = r.u32("T_raw");
  ds.dims.c = r.u32("C");
  ds.dims.h = r.u32("H");
  ds.dims.w = r.u32("W");
  const std::size_t payload = ds.dims.record_size();
  r.need(std::uint64_t{count} * (8 + 4 * payload), "feature records");
  ds.records.resize(count);
  for (auto& rec : ds.records) {
    rec.class_id = r.u32("class id");
    rec.video_id = r.u32("video id");
    rec.frames.resize(payload);
    for (auto& v : rec.frames) v = r.f32("feature payload");
  }
  if (!r.at_end()) throw FormatError("trailing bytes after feature records", r.offset());
  return ds;
}

inline void write_features(const FeatureDataset& ds, const std::string& path) {
  io::write_file(path, encode_features(ds));
}

inline FeatureDataset read_features(const std::string& path) { return decode_features(io::read_file(path)); }

enum class SampleMode { train, eval };

/// TSN segment sampling. Segment s covers [s*T_raw/T, (s+1)*T_raw/T) with
/// integer division. Training draws one uniform index per segment; evaluation
/// takes start + (end - start) / 2.
inline std::vector<std::size_t> tsn_indices(std::size_t t_raw, std::size_t t, SampleMode mode, std::mt19937_64& rng) {
  if (t == 0) throw SamplingError("tsn_sample: T must be positive");
  if (t_raw < t) {
    throw SamplingError("tsn_sample: video has " + std::to_string(t_raw) + " frames, need at least " +
                        std::to_string(t));
  }
  std::vector<std::size_t> idx(t);
  for (std::size_t s = 0; s < t; ++s) {
    const std::size_t start = s * t_raw / t;
    const std::size_t end = (s + 1) * t_raw / t;
    if (mode == SampleMode::eval) {
      idx[s] = start + (end - start) / 2;
    } else {
      std::uniform_int_distribution<std::size_t> pick(start, end - 1);
      idx[s] = pick(rng);
    }
  }
  return idx;
}

/// Frames of `record` at the TSN indices, as a [T, C, H, W] tensor.
template <numgrad::Real T>
numgrad::Tensor<T> tsn_sample(const FeatureRecord& record, const FeatureDims& dims, std::size_t frames,
                              SampleMode mode, std::mt19937_64& rng) {
  const auto idx = tsn_indices(dims.t_raw, frames, mode, rng);
  const std::size_t fs = dims.frame_size();
  std::vector<T> out;
  out.reserve(frames * fs);
  for (const auto i : idx) {
    out.insert(out.end(), record.frames.begin() + static_cast<long>(i * fs),
               record.frames.begin() + static_cast<long>((i + 1) * fs));
  }
  return numgrad::Tensor<T>::from_data({frames, dims.c, dims.h, dims.w}, std::move(out));
}

/// Spatial mean of every frame: [T_raw, C] in double.
inline std::vector<std::vector<double>> pooled_frames(const FeatureRecord& record, const FeatureDims& dims) {
  const std::size_t hw = std::size_t{dims.h} * dims.w;
  std::vector<std::vector<double>> out(dims.t_raw, std::vector<double>(dims.c, 0.0));
  std::size_t i = 0;
  for (auto& frame : out) {
    for (auto& ch : frame) {
      double acc = 0.0;
      for (std::size_t p = 0; p < hw; ++p) acc += record.frames[i++];
      ch = acc / static_cast<double>(hw);
    }
  }
  return out;
}

}  // namespace gghm::features
