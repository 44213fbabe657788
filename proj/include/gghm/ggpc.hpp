#pragma once

// Graph-guided prototype construction. Support and query videos become nodes
// of one graph whose 2-channel edges (intra-class, inter-class) start from the
// support labels and are refined by alternating node and edge aggregation.
// The final intra-class edges, cut into one similarity matrix per query, mix
// the node embeddings into task-oriented features.

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "gghm/ldtm.hpp"
#include "gghm/numgrad/layers.hpp"
#include "gghm/numgrad/ops.hpp"

namespace gghm::ggpc {

using numgrad::Real;
using numgrad::Shape;
using numgrad::Tensor;

struct GgpcConfig {
  std::size_t layers = 1;
  bool transductive = true;
  bool enabled = true;
  // Feed each node's own features to f_node next to the two aggregates. Off,
  // every query node with uniform initial edges receives the same update.
  bool node_self = true;
  std::size_t channels = 64;
};

/// Similarities are squeezed into [kSimilarityFloor, 1 - kSimilarityFloor] so
/// neither s nor 1 - s can round to zero.
inline constexpr double kSimilarityFloor = 1e-6;
inline constexpr double kLeakySlope = 0.01;

/// f_edge: four stages of (linear, batch norm, LeakyReLU) on |v_i - v_j|,
/// then a sigmoid. At initialisation the first three stages have nonnegative
/// weights and the last nonpositive ones, so the similarity decreases
/// monotonically in every coordinate of |v_i - v_j|.
template <Real T>
struct EdgeSimilarity {
  std::array<numgrad::Linear<T>, 4> stages;
  std::array<Tensor<T>, 4> bn_gamma, bn_beta;

  static EdgeSimilarity create(numgrad::ParameterSet<T>& params, const std::string& name, std::size_t c,
                               std::mt19937_64& rng) {
    EdgeSimilarity e;
    const std::array<std::size_t, 5> widths{c, c, std::max<std::size_t>(c / 2, 1), std::max<std::size_t>(c / 4, 1), 1};
    for (std::size_t s = 0; s < 4; ++s) {
      const std::string stage = name + "." + std::to_string(s);
      auto w = numgrad::init::fan_in_uniform<T>(widths[s] * widths[s + 1], widths[s], rng);
      for (auto& v : w) v = (s < 3) ? std::abs(v) : -std::abs(v);
      e.stages[s].weight = params.add(stage + ".weight", {widths[s], widths[s + 1]}, std::move(w));
      e.stages[s].bias = params.add(stage + ".bias", {widths[s + 1]},
                                    numgrad::init::fan_in_uniform<T>(widths[s + 1], widths[s], rng));
      e.bn_gamma[s] = params.add(stage + ".bn.gamma", {widths[s + 1]}, std::vector<T>(widths[s + 1], T{1}));
      e.bn_beta[s] = params.add(stage + ".bn.beta", {widths[s + 1]}, std::vector<T>(widths[s + 1], T{0}));
    }
    return e;
  }

  /// x [R, C] -> similarities [R] in (0, 1).
  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (std::size_t s = 0; s < 4; ++s) {
      h = numgrad::leaky_relu(numgrad::batch_norm(stages[s](h), bn_gamma[s], bn_beta[s]), T(kLeakySlope));
    }
    const T lo = T(kSimilarityFloor);
    Tensor<T> s = numgrad::sigmoid(numgrad::reshape(h, {x.dim(0)}));
    Tensor<T> squeezed = numgrad::scale(s, T{1} - T{2} * lo);
    return numgrad::add(squeezed, Tensor<T>::full(squeezed.shape(), lo));
  }
};

template <Real T>
struct NodeUpdate {
  numgrad::Linear<T> hidden;  // 2C -> C, or 3C -> C with the node's own features
  numgrad::Linear<T> out;     // C -> C
  bool self = false;

  Tensor<T> operator()(const Tensor<T>& x) const { return out(numgrad::leaky_relu(hidden(x), T(kLeakySlope))); }
};

template <Real T>
struct GgpcLayer {
  NodeUpdate<T> f_node;
  EdgeSimilarity<T> f_edge;
};

template <Real T>
struct GgpcParams {
  std::vector<GgpcLayer<T>> layers;
  numgrad::Linear<T> f_emb;   // C -> C
  numgrad::Linear<T> f_ffn;   // C -> C
  numgrad::Linear<T> f_fuse;  // 2C -> C

  static GgpcParams create(numgrad::ParameterSet<T>& params, const GgpcConfig& cfg, std::mt19937_64& rng) {
    using numgrad::Linear;
    const std::size_t c = cfg.channels;
    GgpcParams p;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string prefix = "ggpc.layer" + std::to_string(l);
      GgpcLayer<T> layer;
      layer.f_node.self = cfg.node_self;
      layer.f_node.hidden = Linear<T>::create(params, prefix + ".f_node.0", (cfg.node_self ? 3 : 2) * c, c, rng);
      layer.f_node.out = Linear<T>::create(params, prefix + ".f_node.1", c, c, rng);
      layer.f_edge = EdgeSimilarity<T>::create(params, prefix + ".f_edge", c, rng);
      p.layers.push_back(std::move(layer));
    }
    p.f_emb = Linear<T>::create(params, "ggpc.f_emb", c, c, rng);
    p.f_ffn = Linear<T>::create(params, "ggpc.f_ffn", c, c, rng);
    // The enhanced-feature half of f_fuse starts as the identity, so task
    // features begin as the enhanced features plus a graph term.
    auto fuse = numgrad::init::fan_in_uniform<T>(2 * c * c, 2 * c, rng);
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < c; ++j) fuse[i * c + j] = i == j ? T{1} : T{0};
    }
    p.f_fuse.weight = params.add("ggpc.f_fuse.weight", {2 * c, c}, std::move(fuse));
    p.f_fuse.bias = params.add("ggpc.f_fuse.bias", {c}, numgrad::init::fan_in_uniform<T>(c, 2 * c, rng));
    return p;
  }
};

template <Real T>
struct GraphState {
  Tensor<T> nodes;  // [B, C]
  Tensor<T> edges;  // [B, B, 2]; channel 0 intra-class, channel 1 inter-class
  std::size_t layer = 0;
};

template <Real T>
struct SimilarityCube {
  Tensor<T> m_siam;  // [N_Q, N_S + 1, N_S + 1]
};

template <Real T>
struct TaskFeatures {
  Tensor<T> support;  // [N_Q, N_S, T, C]
  Tensor<T> query;    // [N_Q, T, C]
};

namespace detail {

// x[..., index] along `axis`, with that axis removed.
template <Real T>
Tensor<T> take(const Tensor<T>& x, long axis, std::size_t index) {
  Shape s = x.shape();
  const auto a = static_cast<std::size_t>(axis < 0 ? axis + static_cast<long>(s.size()) : axis);
  s.erase(s.begin() + static_cast<long>(a));
  return numgrad::reshape(numgrad::narrow(x, static_cast<long>(a), index, 1), s);
}

// Rows of a square [B, B] matrix divided by their sums.
template <Real T>
Tensor<T> row_normalize(const Tensor<T>& m, const char* what) {
  const std::size_t b = m.dim(0);
  Tensor<T> sums = numgrad::sum(m, 1);
  for (std::size_t i = 0; i < b; ++i) {
    if (!(sums.data()[i] > T{0})) {
      throw NumericError(std::string("degenerate graph: ") + what + " row " + std::to_string(i) + " sums to zero");
    }
  }
  return numgrad::div(m, numgrad::expand(sums, 1, b));
}

}  // namespace detail

/// Nodes take the support-seeded features; edges start at [1,0] for support
/// pairs of one class, [0,1] for support pairs of different classes and
/// [0.5,0.5] for every pair that involves a query.
template <Real T>
GraphState<T> init_graph(const Tensor<T>& node_seed, const std::vector<int>& support_labels, std::size_t n_support,
                         std::size_t n_query) {
  if (support_labels.size() != n_support) {
    throw ConfigError("init_graph: " + std::to_string(support_labels.size()) + " labels for " +
                      std::to_string(n_support) + " support nodes");
  }
  if (n_query == 0) throw ConfigError("init_graph: at least one query node is required");
  const std::size_t b = n_support + n_query;
  if (node_seed.rank() != 2 || node_seed.dim(0) != b) {
    throw DimensionError("init_graph: node seeds " + numgrad::to_string(node_seed.shape()) + " for " +
                         std::to_string(b) + " nodes");
  }
  std::vector<T> edges(b * b * 2);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      T intra = T(0.5);
      if (i < n_support && j < n_support) intra = support_labels[i] == support_labels[j] ? T{1} : T{0};
      edges[(i * b + j) * 2] = intra;
      edges[(i * b + j) * 2 + 1] = T{1} - intra;
    }
  }
  return {node_seed, Tensor<T>::from_data({b, b, 2}, std::move(edges)), 0};
}

/// v_i <- f_node([sum_j a~_ij0 v_j ; sum_j a~_ij1 v_j]) with a~ the per-channel
/// row-normalised edges; v_i itself is appended when f_node takes it.
template <Real T>
Tensor<T> node_aggregation(const GraphState<T>& state, const NodeUpdate<T>& f_node) {
  Tensor<T> intra = detail::row_normalize(detail::take(state.edges, 2, 0), "intra-class channel");
  Tensor<T> inter = detail::row_normalize(detail::take(state.edges, 2, 1), "inter-class channel");
  std::vector<Tensor<T>> parts{numgrad::matmul(intra, state.nodes), numgrad::matmul(inter, state.nodes)};
  if (f_node.self) parts.push_back(state.nodes);
  return f_node(numgrad::concat(parts, 1));
}

template <Real T>
struct EdgeUpdate {
  Tensor<T> similarity;  // [B, B]
  Tensor<T> pre_norm;    // [B, B, 2], row sums equal to the previous layer's
  Tensor<T> edges;       // [B, B, 2], each edge L1-normalised
};

/// Reweights each edge channel by s (intra) or 1 - s (inter), rescales rows so
/// every node keeps its per-channel total, then L1-normalises each edge.
template <Real T>
EdgeUpdate<T> edge_aggregation(const Tensor<T>& nodes, const Tensor<T>& edges, const EdgeSimilarity<T>& f_edge) {
  const std::size_t b = nodes.dim(0), c = nodes.dim(1);
  if (edges.shape() != Shape{b, b, 2}) {
    throw DimensionError("edge_aggregation: edges " + numgrad::to_string(edges.shape()) + " for " +
                         std::to_string(b) + " nodes");
  }
  Tensor<T> diff = numgrad::abs(numgrad::sub(numgrad::expand(nodes, 1, b), numgrad::expand(nodes, 0, b)));
  Tensor<T> s = numgrad::reshape(f_edge(numgrad::reshape(diff, {b * b, c})), {b, b});
  for (const T v : s.data()) {
    if (!std::isfinite(v)) throw NumericError("edge_aggregation: non-finite edge similarity");
  }
  Tensor<T> dissimilarity = numgrad::sub(Tensor<T>::full({b, b}, T{1}), s);

  auto reweight = [b](const Tensor<T>& channel, const Tensor<T>& weight) {
    Tensor<T> weighted = numgrad::mul(weight, channel);
    Tensor<T> denom = numgrad::sum(weighted, 1);
    Tensor<T> total = numgrad::sum(channel, 1);
    for (std::size_t i = 0; i < b; ++i) {
      if (!(denom.data()[i] > T{0}) && total.data()[i] > T{0}) {
        throw NumericError("edge_aggregation: vanishing normaliser in row " + std::to_string(i));
      }
    }
    // Rows whose channel is empty stay empty.
    std::vector<T> safe(b);
    for (std::size_t i = 0; i < b; ++i) safe[i] = denom.data()[i] > T{0} ? T{0} : T{1};
    Tensor<T> safe_denom = numgrad::add(denom, Tensor<T>::from_data({b}, std::move(safe)));
    return numgrad::mul(numgrad::div(weighted, numgrad::expand(safe_denom, 1, b)), numgrad::expand(total, 1, b));
  };

  Tensor<T> intra = reweight(detail::take(edges, 2, 0), s);
  Tensor<T> inter = reweight(detail::take(edges, 2, 1), dissimilarity);
  Tensor<T> norm = numgrad::add(intra, inter);
  Tensor<T> out = numgrad::stack<T>({numgrad::div(intra, norm), numgrad::div(inter, norm)}, 2);
  return {s, numgrad::stack<T>({intra, inter}, 2), out};
}

/// Alternates node and edge aggregation for every configured layer.
template <Real T>
GraphState<T> propagate(GraphState<T> state, const GgpcParams<T>& params, std::size_t layers) {
  if (layers > params.layers.size()) {
    throw ConfigError("propagate: " + std::to_string(layers) + " layers requested, model has " +
                      std::to_string(params.layers.size()));
  }
  for (std::size_t l = 0; l < layers; ++l) {
    Tensor<T> nodes = node_aggregation(state, params.layers[l].f_node);
    state.edges = edge_aggregation(nodes, state.edges, params.layers[l].f_edge).edges;
    state.nodes = nodes;
    state.layer = l + 1;
  }
  return state;
}

/// One (N_S+1)x(N_S+1) matrix per query: the shared support block, the
/// query's edges to every support in the last row and column, and the query's
/// self-edge in the corner.
template <Real T>
SimilarityCube<T> select(const Tensor<T>& intra_edges, std::size_t n_support, std::size_t n_query) {
  const std::size_t b = n_support + n_query;
  if (intra_edges.shape() != Shape{b, b}) {
    throw IndexError("select: edges " + numgrad::to_string(intra_edges.shape()) + " for " + std::to_string(n_support) +
                     " supports and " + std::to_string(n_query) + " queries");
  }
  const std::size_t m = n_support + 1;
  std::vector<std::size_t> idx;
  idx.reserve(n_query * m * m);
  for (std::size_t q = 0; q < n_query; ++q) {
    auto node = [&](std::size_t r) { return r < n_support ? r : n_support + q; };
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t col = 0; col < m; ++col) idx.push_back(node(r) * b + node(col));
    }
  }
  return {numgrad::gather(intra_edges, {n_query, m, m}, std::move(idx), "select")};
}

/// Mean over the K shots of each class; inputs are ordered class-major.
template <Real T>
Tensor<T> pool_support_shots(const Tensor<T>& support, std::size_t n_way, std::size_t k_shot) {
  if (k_shot == 0 || n_way == 0 || support.rank() == 0 || support.dim(0) != n_way * k_shot) {
    throw ConfigError("pool_support_shots: " + std::to_string(support.rank() ? support.dim(0) : 0) +
                      " support rows do not split into " + std::to_string(n_way) + " classes x " +
                      std::to_string(k_shot) + " shots");
  }
  Shape grouped = support.shape();
  grouped[0] = k_shot;
  grouped.insert(grouped.begin(), n_way);
  return numgrad::mean(numgrad::reshape(support, grouped), 1);
}

/// Logits over classes for each query: its intra-class edge values to the
/// support nodes (the accuracy calculation area).
template <Real T>
Tensor<T> aca_logits(const GraphState<T>& state, std::size_t n_support) {
  const std::size_t b = state.edges.dim(0);
  Tensor<T> intra = detail::take(state.edges, 2, 0);
  return numgrad::narrow(numgrad::narrow(intra, 0, n_support, b - n_support), 1, 0, n_support);
}

template <Real T>
Tensor<T> graph_loss(const GraphState<T>& state, std::size_t n_support, const std::vector<int>& query_labels) {
  return numgrad::softmax_cross_entropy(aca_logits(state, n_support), query_labels);
}

/// Task-oriented support and query features from the similarity cube and
/// the enhanced per-frame features.
template <Real T>
TaskFeatures<T> build_task_features(const SimilarityCube<T>& cube, const Tensor<T>& support_frames,
                                    const Tensor<T>& support_seed, const Tensor<T>& query_frames,
                                    const Tensor<T>& query_seed, const GgpcParams<T>& p) {
  const std::size_t n_s = support_frames.dim(0), n_q = query_frames.dim(0);
  const std::size_t t = support_frames.dim(1), c = support_frames.dim(2);
  if (cube.m_siam.shape() != Shape{n_q, n_s + 1, n_s + 1}) {
    throw DimensionError("build_task_features: similarity cube " + numgrad::to_string(cube.m_siam.shape()) +
                         " for " + std::to_string(n_q) + " queries and " + std::to_string(n_s) + " supports");
  }
  if (query_frames.shape() != Shape{n_q, t, c} || support_seed.shape() != Shape{n_s, c} ||
      query_seed.shape() != Shape{n_q, c}) {
    throw DimensionError("build_task_features: enhanced features disagree on [T, C] = [" + std::to_string(t) + "," +
                         std::to_string(c) + "]");
  }
  Tensor<T> f_node = numgrad::concat<T>(
      {numgrad::expand(support_seed, 0, n_q), numgrad::reshape(query_seed, {n_q, 1, c})}, 1);  // [N_Q, N_S+1, C]
  Tensor<T> f_graph = p.f_ffn(numgrad::matmul(cube.m_siam, p.f_emb(f_node)));

  Tensor<T> graph_s = numgrad::expand(numgrad::narrow(f_graph, 1, 0, n_s), 2, t);                   // [N_Q, N_S, T, C]
  Tensor<T> graph_q = numgrad::expand(numgrad::reshape(numgrad::narrow(f_graph, 1, n_s, 1), {n_q, c}), 1, t);  // [N_Q, T, C]
  Tensor<T> hidden_s = numgrad::expand(support_frames, 0, n_q);

  return {p.f_fuse(numgrad::concat<T>({hidden_s, graph_s}, 3)), p.f_fuse(numgrad::concat<T>({query_frames, graph_q}, 2))};
}

template <Real T>
struct GgpcOutput {
  TaskFeatures<T> task;
  SimilarityCube<T> cube;
  Tensor<T> aca_logits;             // [N_Q, N_S]
  std::vector<GraphState<T>> graphs;  // one graph, or one per query when not transductive
};

/// Full module: graph over class-level supports and queries, propagation,
/// selection and feature fusion.
template <Real T>
GgpcOutput<T> run_ggpc(const Tensor<T>& support_frames, const Tensor<T>& support_seed, const Tensor<T>& query_frames,
                       const Tensor<T>& query_seed, const std::vector<int>& support_labels, const GgpcConfig& cfg,
                       const GgpcParams<T>& p) {
  const std::size_t n_s = support_frames.dim(0), n_q = query_frames.dim(0);
  if (n_q == 0) throw ConfigError("ggpc: at least one query is required");
  GgpcOutput<T> out;
  if (cfg.transductive) {
    auto state = propagate(init_graph(numgrad::concat<T>({support_seed, query_seed}, 0), support_labels, n_s, n_q), p,
                           cfg.layers);
    out.cube = select(detail::take(state.edges, 2, 0), n_s, n_q);
    out.aca_logits = aca_logits(state, n_s);
    out.graphs.push_back(std::move(state));
  } else {
    std::vector<Tensor<T>> cubes, logits;
    for (std::size_t q = 0; q < n_q; ++q) {
      auto seed = numgrad::concat<T>({support_seed, numgrad::narrow(query_seed, 0, q, 1)}, 0);
      auto state = propagate(init_graph(seed, support_labels, n_s, 1), p, cfg.layers);
      cubes.push_back(select(detail::take(state.edges, 2, 0), n_s, 1).m_siam);
      logits.push_back(aca_logits(state, n_s));
      out.graphs.push_back(std::move(state));
    }
    out.cube.m_siam = numgrad::concat(cubes, 0);
    out.aca_logits = numgrad::concat(logits, 0);
  }
  out.task = build_task_features(out.cube, support_frames, support_seed, query_frames, query_seed, p);
  return out;
}

}  // namespace gghm::ggpc
