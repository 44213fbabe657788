#pragma once

// N-way K-shot episode sampling over a feature dataset.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gghm/feature_store.hpp"
#include "gghm/numgrad/ops.hpp"

namespace gghm::episode {

using numgrad::Real;
using numgrad::Tensor;

struct EpisodeConfig {
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t n_query = 5;
  std::size_t frames = 8;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_way < 2) throw ConfigError("episode.n_way must be >= 2");
    if (k_shot < 1) throw ConfigError("episode.k_shot must be >= 1");
    if (n_query < 1) throw ConfigError("episode query count must be >= 1");
    if (frames < 2) throw ConfigError("episode.frames must be >= 2");
  }
};

template <Real T>
struct Episode {
  Tensor<T> support;  // [N*K, T, C, H, W], class-major
  Tensor<T> query;    // [N_Q, T, C, H, W]
  std::vector<int> support_labels;
  std::vector<int> query_labels;
  std::vector<std::uint32_t> class_map;  // local label -> dataset class id
  std::vector<std::size_t> support_records;
  std::vector<std::size_t> query_records;
};

/// Per class, the number of queries: n_query / n_way each, plus one for
/// n_query % n_way randomly chosen classes.
inline std::vector<std::size_t> query_allocation(std::size_t n_way, std::size_t n_query, std::mt19937_64& rng) {
  std::vector<std::size_t> counts(n_way, n_query / n_way);
  std::vector<std::size_t> order(n_way);
  for (std::size_t i = 0; i < n_way; ++i) order[i] = i;
  for (std::size_t i = 0; i < n_query % n_way; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n_way - 1);
    std::swap(order[i], order[pick(rng)]);
    ++counts[order[i]];
  }
  return counts;
}

/// First `k` entries of a partial Fisher-Yates shuffle of `pool`.
inline std::vector<std::size_t> draw_without_replacement(std::vector<std::size_t> pool, std::size_t k,
                                                         std::mt19937_64& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

template <Real T>
Episode<T> sample_episode(const features::FeatureDataset& ds, const EpisodeConfig& cfg, features::SampleMode mode,
                          std::mt19937_64& rng) {
  cfg.validate();
  const auto by_class = ds.by_class();
  std::vector<std::size_t> populated;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    if (!by_class[k].empty()) populated.push_back(k);
  }
  if (populated.size() < cfg.n_way) {
    throw SamplingError("episode: dataset has " + std::to_string(populated.size()) + " classes, need " +
                        std::to_string(cfg.n_way));
  }
  Episode<T> ep;
  for (const auto k : draw_without_replacement(populated, cfg.n_way, rng)) {
    ep.class_map.push_back(static_cast<std::uint32_t>(k));
  }
  const auto queries = query_allocation(cfg.n_way, cfg.n_query, rng);

  std::vector<std::pair<int, std::size_t>> query_picks;
  for (std::size_t n = 0; n < cfg.n_way; ++n) {
    const auto& videos = by_class[ep.class_map[n]];
    const std::size_t need = cfg.k_shot + queries[n];
    if (videos.size() < need) {
      throw SamplingError("episode: class " + std::to_string(ep.class_map[n]) + " has " +
                          std::to_string(videos.size()) + " videos, need " + std::to_string(need));
    }
    const auto picked = draw_without_replacement(videos, need, rng);
    for (std::size_t i = 0; i < cfg.k_shot; ++i) {
      ep.support_records.push_back(picked[i]);
      ep.support_labels.push_back(static_cast<int>(n));
    }
    for (std::size_t i = cfg.k_shot; i < need; ++i) query_picks.emplace_back(static_cast<int>(n), picked[i]);
  }
  // Queries interleaved by a shuffle so their order carries no label.
  for (std::size_t i = 0; i + 1 < query_picks.size(); ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, query_picks.size() - 1);
    std::swap(query_picks[i], query_picks[pick(rng)]);
  }
  for (const auto& [label, record] : query_picks) {
    ep.query_labels.push_back(label);
    ep.query_records.push_back(record);
  }

  auto load = [&](const std::vector<std::size_t>& records) {
    std::vector<Tensor<T>> clips;
    clips.reserve(records.size());
    for (const auto r : records) clips.push_back(features::tsn_sample<T>(ds.records[r], ds.dims, cfg.frames, mode, rng));
    return numgrad::stack(clips, 0);
  };
  ep.support = load(ep.support_records);
  ep.query = load(ep.query_records);
  return ep;
}

}  // namespace gghm::episode
