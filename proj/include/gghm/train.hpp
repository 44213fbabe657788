#pragma once

// Adam with a multi-step schedule, episodic training and evaluation.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gghm/model.hpp"

namespace gghm {

/// Non-finite loss or gradient during training. The model holds the
/// parameters from before the failing episode.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step, std::size_t iteration)
      : Error(what), step_(step), iteration_(iteration) {}

  std::size_t step() const noexcept { return step_; }
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t step_, iteration_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <numgrad::Real T>
class Adam {
 public:
  explicit Adam(const numgrad::ParameterSet<T>& params, AdamConfig cfg = {}) : cfg_(cfg) {
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  /// One bias-corrected update from the gradients currently stored on `params`.
  /// Parameters without a gradient buffer count as zero gradient.
  void step(numgrad::ParameterSet<T>& params, double lr) {
    if (params.size() != m_.size()) throw DimensionError("adam: parameter set changed size");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& tensor = params[i].tensor;
      auto value = tensor.mutable_data();
      if (value.size() != m_[i].size()) throw DimensionError("adam: state shape mismatch for " + params[i].name);
      const bool has = tensor.has_grad();
      const auto grad = tensor.grad();
      for (std::size_t k = 0; k < value.size(); ++k) {
        const double g = has ? static_cast<double>(grad[k]) : 0.0;
        m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * g;
        v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * g * g;
        const double m_hat = m_[i][k] / c1;
        const double v_hat = v_[i][k] / c2;
        value[k] = static_cast<T>(static_cast<double>(value[k]) - lr * m_hat / (std::sqrt(v_hat) + cfg_.eps));
      }
    }
  }

  std::uint64_t steps_taken() const noexcept { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t iterations_per_step = 200;
  std::vector<std::size_t> step_boundaries{0};
  std::vector<double> lr_factors{1.0};
  std::size_t total_steps = 5;
  std::size_t queries_per_class = 1;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train.lr must be positive");
    if (iterations_per_step == 0) throw ConfigError("train.iterations_per_step must be positive");
    if (total_steps == 0) throw ConfigError("train.total_steps must be positive");
    if (queries_per_class == 0) throw ConfigError("train.queries_per_class must be positive");
    if (step_boundaries.size() != lr_factors.size()) {
      throw ConfigError("train.steps and train.lr_factors differ in length");
    }
    for (std::size_t i = 0; i < lr_factors.size(); ++i) {
      if (!(lr_factors[i] > 0.0 && lr_factors[i] <= 1.0)) throw ConfigError("train.lr_factors must lie in (0,1]");
      if (i > 0 && step_boundaries[i] <= step_boundaries[i - 1]) {
        throw ConfigError("train.steps must be strictly increasing");
      }
    }
  }
};

/// Base rate times the factor of the last boundary at or before `step`.
inline double lr_at_step(const TrainConfig& cfg, std::size_t step) {
  double factor = 1.0;
  for (std::size_t i = 0; i < cfg.step_boundaries.size(); ++i) {
    if (step >= cfg.step_boundaries[i]) factor = cfg.lr_factors[i];
  }
  return cfg.learning_rate * factor;
}

struct StepMetrics {
  std::size_t step = 0;
  double mean_loss = 0.0;
  double mean_match_loss = 0.0;
  double mean_graph_loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
};

/// Sum by recursive halving.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double acc = 0.0;
    for (const double x : v) acc += x;
    return acc;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline double pairwise_mean(std::span<const double> v) {
  return v.empty() ? 0.0 : pairwise_sum(v) / static_cast<double>(v.size());
}

inline double fraction_correct(const std::vector<int>& predicted, const std::vector<int>& labels) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

namespace detail {

template <numgrad::Real T>
bool gradients_finite(const numgrad::ParameterSet<T>& params) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (const T g : p.tensor.grad()) {
      if (!std::isfinite(g)) return false;
    }
  }
  return true;
}

}  // namespace detail

/// total_steps x iterations_per_step episodes, one Adam update each. `on_step`
/// receives each step's metrics as soon as the step ends.
template <numgrad::Real T>
std::vector<StepMetrics> train(GghmModel<T>& model, const features::FeatureDataset& ds,
                               const episode::EpisodeConfig& episode_cfg, const TrainConfig& cfg, std::mt19937_64& rng,
                               const std::function<void(const StepMetrics&)>& on_step = {}) {
  cfg.validate();
  Adam<T> adam(model.params);
  std::vector<StepMetrics> log;
  for (std::size_t step = 0; step < cfg.total_steps; ++step) {
    const double lr = lr_at_step(cfg, step);
    std::vector<double> loss, match, graph, acc;
    for (std::size_t it = 0; it < cfg.iterations_per_step; ++it) {
      const auto ep = episode::sample_episode<T>(ds, episode_cfg, features::SampleMode::train, rng);
      model.params.zero_grad();
      EpisodeOutput<T> out;
      try {
        out = model.forward(ep, episode_cfg.n_way, episode_cfg.k_shot);
      } catch (const NumericError& e) {
        throw DivergenceError(e.what(), step, it);
      }
      const double total = static_cast<double>(out.total_loss.item());
      if (!std::isfinite(total)) throw DivergenceError("non-finite training loss", step, it);
      out.total_loss.backward();
      if (!detail::gradients_finite(model.params)) throw DivergenceError("non-finite gradient", step, it);
      adam.step(model.params, lr);
      loss.push_back(total);
      match.push_back(static_cast<double>(out.match.loss.item()));
      graph.push_back(out.graph_loss.defined() ? static_cast<double>(out.graph_loss.item()) : 0.0);
      acc.push_back(fraction_correct(out.match.predicted, ep.query_labels));
    }
    StepMetrics m{step, pairwise_mean(loss), pairwise_mean(match), pairwise_mean(graph), pairwise_mean(acc), lr};
    log.push_back(m);
    if (on_step) on_step(m);
  }
  model.params.zero_grad();
  return log;
}

struct EvalReport {
  double accuracy = 0.0;
  std::optional<double> ci95;  // half-width; absent for a single episode
  std::vector<double> per_episode;
};

/// Seed for episode `index` of a run seeded with `seed` (splitmix64 mix).
inline std::uint64_t episode_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Engine for the training episode stream of a run seeded with `seed`;
/// distinct from every evaluation episode seed.
inline std::mt19937_64 training_engine(std::uint64_t seed) { return std::mt19937_64(episode_seed(~seed, 0)); }

/// Mean per-episode accuracy over `n_episodes` eval-mode episodes, each drawn
/// from its own engine, so any subset of episodes can be recomputed alone.
template <numgrad::Real T>
EvalReport evaluate(const GghmModel<T>& model, const features::FeatureDataset& ds,
                    const episode::EpisodeConfig& episode_cfg, std::size_t n_episodes) {
  if (n_episodes == 0) throw ConfigError("eval.episodes must be positive");
  numgrad::NoGradGuard no_grad;
  EvalReport r;
  r.per_episode.reserve(n_episodes);
  for (std::size_t i = 0; i < n_episodes; ++i) {
    std::mt19937_64 rng(episode_seed(episode_cfg.seed, i));
    const auto ep = episode::sample_episode<T>(ds, episode_cfg, features::SampleMode::eval, rng);
    const auto out = model.forward(ep, episode_cfg.n_way, episode_cfg.k_shot);
    r.per_episode.push_back(fraction_correct(out.match.predicted, ep.query_labels));
  }
  r.accuracy = pairwise_mean(r.per_episode);
  if (n_episodes > 1) {
    std::vector<double> sq;
    sq.reserve(n_episodes);
    for (const double a : r.per_episode) sq.push_back((a - r.accuracy) * (a - r.accuracy));
    const double sd = std::sqrt(pairwise_sum(sq) / static_cast<double>(n_episodes - 1));
    r.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(n_episodes));
  }
  return r;
}

}  // namespace gghm
