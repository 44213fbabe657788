#pragma once

// The assembled matcher: dense temporal modeling, graph-guided prototypes and
// hybrid matching over one episode.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gghm/episode.hpp"
#include "gghm/ggpc.hpp"
#include "gghm/hpm.hpp"
#include "gghm/ldtm.hpp"

namespace gghm {

struct ModelConfig {
  ldtm::LdtmConfig ldtm;
  ggpc::GgpcConfig ggpc;
  hpm::HpmConfig hpm;
  double graph_loss_weight = 1.0;

  void validate() const {
    ldtm.validate();
    hpm.validate();
    if (ggpc.channels != ldtm.channels) {
      throw ConfigError("ggpc.channels (" + std::to_string(ggpc.channels) + ") must equal ldtm.channels (" +
                        std::to_string(ldtm.channels) + ")");
    }
    if (ggpc.layers < 1) throw ConfigError("ggpc.layers must be >= 1");
    if (!(graph_loss_weight >= 0.0)) throw ConfigError("train.lambda must be >= 0");
  }
};

template <numgrad::Real T>
struct EpisodeOutput {
  hpm::MatchResult<T> match;
  numgrad::Tensor<T> graph_loss;  // undefined when the graph module is off
  numgrad::Tensor<T> total_loss;
  ggpc::SimilarityCube<T> cube;
  numgrad::Tensor<T> aca_logits;
};

template <numgrad::Real T>
class GghmModel {
 public:
  static GghmModel create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    GghmModel m;
    m.config = cfg;
    std::mt19937_64 rng(seed);
    m.ldtm_params = ldtm::LdtmParams<T>::create(m.params, cfg.ldtm, rng);
    m.ggpc_params = ggpc::GgpcParams<T>::create(m.params, cfg.ggpc, rng);
    return m;
  }

  /// Runs one episode. Support features are class-pooled before the graph.
  EpisodeOutput<T> forward(const numgrad::Tensor<T>& support, const numgrad::Tensor<T>& query,
                           const std::vector<int>& query_labels, std::size_t n_way, std::size_t k_shot) const {
    using numgrad::narrow;
    const std::size_t n_s = n_way * k_shot, n_q = query.dim(0);
    if (support.rank() != 5 || support.dim(0) != n_s) {
      throw DimensionError("forward: support " + numgrad::to_string(support.shape()) + " for " +
                           std::to_string(n_way) + "-way " + std::to_string(k_shot) + "-shot");
    }
    const auto enhanced = ldtm::ldtm_forward(numgrad::concat<T>({support, query}, 0), config.ldtm, ldtm_params);
    const auto support_frames = ggpc::pool_support_shots(narrow(enhanced.per_frame, 0, 0, n_s), n_way, k_shot);
    const auto support_seed = ggpc::pool_support_shots(narrow(enhanced.node_seed, 0, 0, n_s), n_way, k_shot);
    const auto query_frames = narrow(enhanced.per_frame, 0, n_s, n_q);
    const auto query_seed = narrow(enhanced.node_seed, 0, n_s, n_q);

    EpisodeOutput<T> out;
    ggpc::TaskFeatures<T> task;
    if (config.ggpc.enabled) {
      std::vector<int> class_labels(n_way);
      for (std::size_t n = 0; n < n_way; ++n) class_labels[n] = static_cast<int>(n);
      auto g = ggpc::run_ggpc(support_frames, support_seed, query_frames, query_seed, class_labels, config.ggpc,
                              ggpc_params);
      task = std::move(g.task);
      out.cube = std::move(g.cube);
      out.aca_logits = g.aca_logits;
      out.graph_loss = numgrad::softmax_cross_entropy(g.aca_logits, query_labels);
    } else {
      task = {numgrad::expand(support_frames, 0, n_q), query_frames};
    }
    out.match = hpm::classify_and_loss(task, query_labels, config.hpm);
    out.total_loss = out.match.loss;
    if (out.graph_loss.defined() && config.graph_loss_weight != 0.0) {
      out.total_loss =
          numgrad::add(out.match.loss, numgrad::scale(out.graph_loss, static_cast<T>(config.graph_loss_weight)));
    }
    return out;
  }

  EpisodeOutput<T> forward(const episode::Episode<T>& ep, std::size_t n_way, std::size_t k_shot) const {
    return forward(ep.support, ep.query, ep.query_labels, n_way, k_shot);
  }

  ModelConfig config;
  numgrad::ParameterSet<T> params;
  ldtm::LdtmParams<T> ldtm_params;
  ggpc::GgpcParams<T> ggpc_params;
};

}  // namespace gghm
