#pragma once

// CSV output: class probabilities, distances, similarity cubes, alpha sweeps
// and per-episode accuracies. Reals are printed with six decimals.

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "gghm/train.hpp"

namespace gghm::exporting {

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  return out;
}

/// Rows: query index, true label, one column per class.
template <numgrad::Real T>
void write_query_matrix(const std::string& path, const numgrad::Tensor<T>& m, const std::vector<int>& labels) {
  auto out = open_csv(path);
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  out << "query,label";
  for (std::size_t c = 0; c < cols; ++c) out << ",class" << c;
  out << '\n';
  for (std::size_t r = 0; r < rows; ++r) {
    out << r << ',' << labels[r];
    for (std::size_t c = 0; c < cols; ++c) out << ',' << fixed6(static_cast<double>(m.data()[r * cols + c]));
    out << '\n';
  }
}

/// One block of N_S + 1 rows per query. Rows and columns 0..N_S-1 are the
/// support classes; index N_S is the query.
template <numgrad::Real T>
void write_similarity_cube(const std::string& path, const numgrad::Tensor<T>& m_siam) {
  auto out = open_csv(path);
  const std::size_t n_q = m_siam.dim(0), m = m_siam.dim(1);
  out << "query,row";
  for (std::size_t c = 0; c < m; ++c) out << ",col" << c;
  out << '\n';
  for (std::size_t q = 0; q < n_q; ++q) {
    for (std::size_t r = 0; r < m; ++r) {
      out << q << ',' << r;
      for (std::size_t c = 0; c < m; ++c) out << ',' << fixed6(static_cast<double>(m_siam.data()[(q * m + r) * m + c]));
      out << '\n';
    }
  }
}

/// Sidecar of the similarity cube: per query, which row holds the accuracy
/// calculation area, the graph's class guess from it and the true label.
template <numgrad::Real T>
void write_aca_sidecar(const std::string& path, const numgrad::Tensor<T>& aca_logits, const std::vector<int>& labels) {
  auto out = open_csv(path);
  const std::size_t n_q = aca_logits.dim(0), n_s = aca_logits.dim(1);
  out << "query,aca_row,aca_cols,graph_prediction,label\n";
  const auto guess = hpm::argmin_rows(numgrad::scale(aca_logits.detach(), T{-1}));
  for (std::size_t q = 0; q < n_q; ++q) {
    out << q << ',' << n_s << ",0-" << n_s - 1 << ',' << guess[q] << ',' << labels[q] << '\n';
  }
}

inline void write_alpha_sweep(const std::string& path, const std::vector<std::pair<double, EvalReport>>& rows) {
  auto out = open_csv(path);
  out << "alpha,accuracy\n";
  for (const auto& [alpha, r] : rows) out << fixed6(alpha) << ',' << fixed6(r.accuracy) << '\n';
}

inline void write_episode_accuracies(const std::string& path, const EvalReport& r) {
  auto out = open_csv(path);
  out << "episode,accuracy\n";
  for (std::size_t i = 0; i < r.per_episode.size(); ++i) out << i << ',' << fixed6(r.per_episode[i]) << '\n';
}

}  // namespace gghm::exporting
