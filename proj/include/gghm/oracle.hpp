#pragma once

// Brute-force reference implementations on plain nested vectors, used to
// cross-check the differentiable kernels. They share no code with them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace gghm::oracle {

using Rows = std::vector<std::vector<double>>;

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(acc);
}

/// Bidirectional mean Hausdorff distance by double loop. Each direction's
/// minima are summed smallest first.
inline double mean_hausdorff(const Rows& a, const Rows& b) {
  if (a.empty() || a.size() != b.size()) throw std::invalid_argument("oracle::mean_hausdorff: bad sizes");
  const std::size_t n = a.size();
  std::vector<double> forward, backward;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) best = std::min(best, euclidean(a[i], b[j]));
    forward.push_back(best);
  }
  for (std::size_t j = 0; j < n; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) best = std::min(best, euclidean(a[i], b[j]));
    backward.push_back(best);
  }
  std::sort(forward.begin(), forward.end());
  std::sort(backward.begin(), backward.end());
  double fs = 0.0, bs = 0.0;
  for (const double v : forward) fs += v;
  for (const double v : backward) bs += v;
  return (fs + bs) / static_cast<double>(n);
}

inline double positional(std::size_t pos, std::size_t k, std::size_t dim) {
  const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(k - k % 2) / static_cast<double>(dim));
  return k % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

/// Every (i1 < i2) pair, each frame offset by its positional code.
inline Rows tuples(const Rows& x) {
  Rows out;
  for (std::size_t i1 = 0; i1 < x.size(); ++i1) {
    for (std::size_t i2 = i1 + 1; i2 < x.size(); ++i2) {
      std::vector<double> row;
      for (std::size_t k = 0; k < x[i1].size(); ++k) row.push_back(x[i1][k] + positional(i1, k, x[i1].size()));
      for (std::size_t k = 0; k < x[i2].size(); ++k) row.push_back(x[i2][k] + positional(i2, k, x[i2].size()));
      out.push_back(std::move(row));
    }
  }
  return out;
}

inline double frame_distance(const Rows& s, const Rows& q) { return mean_hausdorff(s, q); }

inline double tuple_distance(const Rows& s, const Rows& q) { return mean_hausdorff(tuples(s), tuples(q)); }

}  // namespace gghm::oracle
