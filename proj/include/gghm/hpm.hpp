#pragma once

// Hybrid prototype matching: bidirectional mean Hausdorff distances over
// single frames and over ordered, position-encoded frame pairs, blended by
// alpha.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gghm/ggpc.hpp"
#include "gghm/numgrad/ops.hpp"

namespace gghm::hpm {

using numgrad::Real;
using numgrad::Shape;
using numgrad::Tensor;

enum class BaseDistance { euclidean, one_minus_cosine };

/// Which distances enter the class score. `frame` and `tuple` evaluate only
/// one term; `hybrid` blends both by alpha.
enum class MatchingMode { hybrid, frame, tuple };

struct HpmConfig {
  double alpha = 0.4;
  BaseDistance distance = BaseDistance::euclidean;
  double temperature = 1.0;
  MatchingMode mode = MatchingMode::hybrid;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("hpm.alpha must lie in [0,1]");
    if (!(temperature > 0.0)) throw ConfigError("hpm.temperature must be positive");
  }
};

/// Standard sinusoidal encoding, [positions, dim]: sin on even channels and cos
/// on odd channels, angle pos / 10000^(2i/dim).
template <Real T>
std::vector<T> sinusoidal_encoding(std::size_t positions, std::size_t dim) {
  std::vector<T> pe(positions * dim);
  for (std::size_t pos = 0; pos < positions; ++pos) {
    for (std::size_t k = 0; k < dim; ++k) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * (k / 2)) / static_cast<double>(dim));
      pe[pos * dim + k] = static_cast<T>(k % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

inline std::size_t tuple_count(std::size_t frames) { return frames * (frames - 1) / 2; }

/// All (i1 < i2) frame pairs in lexicographic order, each [x[i1] + PE(i1), x[i2] + PE(i2)].
template <Real T>
Tensor<T> build_tuples(const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("build_tuples: expected [T, C], got " + numgrad::to_string(x.shape()));
  const std::size_t t = x.dim(0), c = x.dim(1);
  if (t < 2) throw ConfigError("build_tuples: need at least 2 frames, got " + std::to_string(t));
  Tensor<T> encoded = numgrad::add(x, Tensor<T>::from_data({t, c}, sinusoidal_encoding<T>(t, c)));
  const std::size_t l = tuple_count(t);
  std::vector<std::size_t> idx;
  idx.reserve(l * 2 * c);
  for (std::size_t i1 = 0; i1 < t; ++i1) {
    for (std::size_t i2 = i1 + 1; i2 < t; ++i2) {
      for (std::size_t k = 0; k < c; ++k) idx.push_back(i1 * c + k);
      for (std::size_t k = 0; k < c; ++k) idx.push_back(i2 * c + k);
    }
  }
  return numgrad::gather(encoded, {l, 2 * c}, std::move(idx), "build_tuples");
}

namespace detail {

template <Real T>
T euclidean(const T* a, const T* b, std::size_t d) {
  T acc{0};
  for (std::size_t k = 0; k < d; ++k) {
    const T diff = a[k] - b[k];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

template <Real T>
T one_minus_cosine(const T* a, const T* b, std::size_t d) {
  T dot{0}, na{0}, nb{0};
  for (std::size_t k = 0; k < d; ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == T{0} || nb == T{0}) return T{1};
  return T{1} - dot / (std::sqrt(na) * std::sqrt(nb));
}

// Accumulates d/d(a) and d/d(b) of the base distance, scaled by g.
template <Real T>
void distance_grad(BaseDistance metric, const T* a, const T* b, std::size_t d, T dist, T g, T* ga, T* gb) {
  if (metric == BaseDistance::euclidean) {
    if (dist == T{0}) return;
    for (std::size_t k = 0; k < d; ++k) {
      const T v = g * (a[k] - b[k]) / dist;
      if (ga) ga[k] += v;
      if (gb) gb[k] -= v;
    }
    return;
  }
  T dot{0}, na{0}, nb{0};
  for (std::size_t k = 0; k < d; ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == T{0} || nb == T{0}) return;
  const T la = std::sqrt(na), lb = std::sqrt(nb);
  for (std::size_t k = 0; k < d; ++k) {
    if (ga) ga[k] -= g * (b[k] / (la * lb) - dot * a[k] / (na * la * lb));
    if (gb) gb[k] -= g * (a[k] / (la * lb) - dot * b[k] / (nb * la * lb));
  }
}

template <Real T>
T ascending_sum(std::vector<T> values) {
  std::sort(values.begin(), values.end());
  T acc{0};
  for (const T v : values) acc += v;
  return acc;
}

}  // namespace detail

/// (1/n) [ sum_i min_j d(a_i, b_j) + sum_j min_i d(b_j, a_i) ] for two sets
/// of n row vectors. Each side's minima are summed in ascending order, so the
/// value is exactly invariant to row order and exactly symmetric.
template <Real T>
Tensor<T> mean_hausdorff(const Tensor<T>& a, const Tensor<T>& b, BaseDistance metric) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw DimensionError("mean_hausdorff: " + numgrad::to_string(a.shape()) + " vs " + numgrad::to_string(b.shape()));
  }
  const std::size_t n = a.dim(0), d = a.dim(1);
  if (n == 0) throw DimensionError("mean_hausdorff: empty sequence");
  const T* av = a.data().data();
  const T* bv = b.data().data();
  std::vector<T> dist(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      dist[i * n + j] = metric == BaseDistance::euclidean ? detail::euclidean(av + i * d, bv + j * d, d)
                                                          : detail::one_minus_cosine(av + i * d, bv + j * d, d);
    }
  }
  std::vector<std::size_t> row_arg(n, 0), col_arg(n, 0);
  std::vector<T> row_min(n), col_min(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 1; j < n; ++j) {
      if (dist[i * n + j] < dist[i * n + row_arg[i]]) row_arg[i] = j;
    }
    row_min[i] = dist[i * n + row_arg[i]];
  }
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 1; i < n; ++i) {
      if (dist[i * n + j] < dist[col_arg[j] * n + j]) col_arg[j] = i;
    }
    col_min[j] = dist[col_arg[j] * n + j];
  }
  const T value = (detail::ascending_sum(row_min) + detail::ascending_sum(col_min)) / static_cast<T>(n);

  return numgrad::make_result<T>(
      {}, {value}, "mean_hausdorff", {a, b},
      [n, d, metric, dist = std::move(dist), row_arg = std::move(row_arg), col_arg = std::move(col_arg)](
          numgrad::Node<T>& out) {
        const T g = out.grad[0] / static_cast<T>(n);
        const T* av = out.inputs[0]->value.data();
        const T* bv = out.inputs[1]->value.data();
        T* ga = numgrad::detail::input_grad(out, 0);
        T* gb = numgrad::detail::input_grad(out, 1);
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t j = row_arg[i];
          detail::distance_grad(metric, av + i * d, bv + j * d, d, dist[i * n + j], g, ga ? ga + i * d : nullptr,
                                gb ? gb + j * d : nullptr);
        }
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t i = col_arg[j];
          detail::distance_grad(metric, av + i * d, bv + j * d, d, dist[i * n + j], g, ga ? ga + i * d : nullptr,
                                gb ? gb + j * d : nullptr);
        }
      });
}

/// Frame-level distance between two [T, C] sequences.
template <Real T>
Tensor<T> frame_hausdorff(const Tensor<T>& s, const Tensor<T>& q, BaseDistance metric = BaseDistance::euclidean) {
  return mean_hausdorff(s, q, metric);
}

/// Tuple-level distance between two [L, 2C] tuple sets.
template <Real T>
Tensor<T> tuple_hausdorff(const Tensor<T>& ts, const Tensor<T>& tq, BaseDistance metric = BaseDistance::euclidean) {
  return mean_hausdorff(ts, tq, metric);
}

/// alpha * D_tuple + (1 - alpha) * D_frame. `query_tuples` may be passed in
/// precomputed.
template <Real T>
Tensor<T> hybrid_distance(const Tensor<T>& s, const Tensor<T>& q, const HpmConfig& cfg,
                          const Tensor<T>& query_tuples = {}) {
  auto tuple_term = [&] {
    return tuple_hausdorff(build_tuples(s), query_tuples.defined() ? query_tuples : build_tuples(q), cfg.distance);
  };
  switch (cfg.mode) {
    case MatchingMode::frame:
      return frame_hausdorff(s, q, cfg.distance);
    case MatchingMode::tuple:
      return tuple_term();
    case MatchingMode::hybrid:
      break;
  }
  return numgrad::blend(tuple_term(), frame_hausdorff(s, q, cfg.distance), static_cast<T>(cfg.alpha));
}

template <Real T>
struct MatchResult {
  Tensor<T> distances;  // [N_Q, N_S]
  std::vector<int> predicted;
  Tensor<T> loss;
};

/// Index of the smallest entry in each row; the first one on ties.
template <Real T>
std::vector<int> argmin_rows(const Tensor<T>& m) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = m.data().subspan(r * cols, cols);
    out[r] = static_cast<int>(std::min_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

/// Distances of every query to every class prototype, cross-entropy over
/// -distance / temperature, and the nearest-class prediction.
template <Real T>
MatchResult<T> classify_and_loss(const ggpc::TaskFeatures<T>& task, const std::vector<int>& query_labels,
                                 const HpmConfig& cfg) {
  const std::size_t n_q = task.query.dim(0), n_s = task.support.dim(1);
  if (task.support.rank() != 4 || task.support.dim(0) != n_q) {
    throw DimensionError("classify_and_loss: support " + numgrad::to_string(task.support.shape()) + " for " +
                         std::to_string(n_q) + " queries");
  }
  std::vector<Tensor<T>> rows;
  rows.reserve(n_q);
  for (std::size_t q = 0; q < n_q; ++q) {
    Tensor<T> query = ggpc::detail::take(task.query, 0, q);
    Tensor<T> query_tuples = cfg.mode == MatchingMode::frame ? Tensor<T>{} : build_tuples(query);
    Tensor<T> support = ggpc::detail::take(task.support, 0, q);
    std::vector<Tensor<T>> cells;
    cells.reserve(n_s);
    for (std::size_t n = 0; n < n_s; ++n) {
      cells.push_back(hybrid_distance(ggpc::detail::take(support, 0, n), query, cfg, query_tuples));
    }
    rows.push_back(numgrad::stack(cells, 0));
  }
  MatchResult<T> r;
  r.distances = numgrad::stack(rows, 0);
  r.predicted = argmin_rows(r.distances);
  r.loss = numgrad::softmax_cross_entropy(numgrad::scale(r.distances, static_cast<T>(-1.0 / cfg.temperature)),
                                          query_labels);
  return r;
}

/// Row-wise softmax of -distances / temperature, detached from the tape.
template <Real T>
Tensor<T> class_probabilities(const Tensor<T>& distances, double temperature) {
  numgrad::NoGradGuard no_grad;
  return numgrad::softmax(numgrad::scale(distances.detach(), static_cast<T>(-1.0 / temperature)));
}

}  // namespace gghm::hpm
