#pragma once

#include <utility>
#include <vector>

#include "gghm/train.hpp"

namespace gghm {

inline const std::vector<double>& alpha_grid() {
  static const std::vector<double> grid{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  return grid;
}

/// Evaluates the same parameters under hybrid matching at each alpha, on the
/// same seeded episodes.
template <numgrad::Real T>
std::vector<std::pair<double, EvalReport>> sweep_alpha(const GghmModel<T>& model, const features::FeatureDataset& ds,
                                                       const episode::EpisodeConfig& episode_cfg,
                                                       std::size_t n_episodes,
                                                       const std::vector<double>& grid = alpha_grid()) {
  std::vector<std::pair<double, EvalReport>> rows;
  for (const double alpha : grid) {
    GghmModel<T> variant = model;  // shares parameter storage
    variant.config.hpm.alpha = alpha;
    variant.config.hpm.mode = hpm::MatchingMode::hybrid;
    variant.config.validate();
    rows.emplace_back(alpha, evaluate(variant, ds, episode_cfg, n_episodes));
  }
  return rows;
}

/// Same evaluation with only one distance term computed.
template <numgrad::Real T>
EvalReport evaluate_mode(const GghmModel<T>& model, const features::FeatureDataset& ds,
                         const episode::EpisodeConfig& episode_cfg, std::size_t n_episodes, hpm::MatchingMode mode) {
  GghmModel<T> variant = model;
  variant.config.hpm.mode = mode;
  return evaluate(variant, ds, episode_cfg, n_episodes);
}

}  // namespace gghm
