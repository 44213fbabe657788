#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "gghm/ggpc.hpp"
#include "gghm/numgrad/grad_check.hpp"

using namespace gghm;
using namespace gghm::ggpc;
using Td = numgrad::Tensor<double>;

namespace {

Td random_tensor(numgrad::Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(numgrad::numel(shape));
  for (auto& x : v) x = normal(rng);
  return Td::from_data(std::move(shape), std::move(v));
}

double at(const Td& t, std::initializer_list<std::size_t> idx) {
  std::size_t flat = 0, k = 0;
  for (const auto i : idx) flat = flat * t.dim(k++) + i;
  return t.data()[flat];
}

std::vector<int> iota_labels(std::size_t n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

void expect_normalised(const Td& edges) {
  const std::size_t b = edges.dim(0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      const double a0 = at(edges, {i, j, 0}), a1 = at(edges, {i, j, 1});
      EXPECT_GE(a0, 0.0);
      EXPECT_GE(a1, 0.0);
      EXPECT_NEAR(a0 + a1, 1.0, 1e-6);
    }
  }
}

// f_node that returns the intra-channel weighted sum unchanged for
// nonnegative nodes: hidden = [I; 0], out = I, zero biases.
NodeUpdate<double> intra_passthrough(std::size_t c) {
  std::vector<double> hidden(2 * c * c, 0.0), out(c * c, 0.0);
  for (std::size_t i = 0; i < c; ++i) hidden[i * c + i] = out[i * c + i] = 1.0;
  NodeUpdate<double> f;
  f.hidden.weight = Td::from_data({2 * c, c}, hidden);
  f.hidden.bias = Td::zeros({c});
  f.out.weight = Td::from_data({c, c}, out);
  f.out.bias = Td::zeros({c});
  return f;
}

struct Fixture {
  GgpcConfig cfg;
  numgrad::ParameterSet<double> params;
  GgpcParams<double> p;
  std::mt19937_64 rng{31};

  explicit Fixture(std::size_t c = 8, std::size_t layers = 1) {
    cfg.channels = c;
    cfg.layers = layers;
    p = GgpcParams<double>::create(params, cfg, rng);
  }
};

}  // namespace

TEST(InitGraph, FiveWayOneQuery) {
  const auto g = init_graph(Td::zeros({6, 4}), iota_labels(5), 5, 1);
  ASSERT_EQ(g.edges.shape(), (numgrad::Shape{6, 6, 2}));
  std::size_t inter_pairs = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(at(g.edges, {i, i, 0}), 1.0);
    EXPECT_EQ(at(g.edges, {i, i, 1}), 0.0);
    for (std::size_t j = i + 1; j < 5; ++j) {
      inter_pairs += at(g.edges, {i, j, 0}) == 0.0 && at(g.edges, {i, j, 1}) == 1.0;
    }
    EXPECT_EQ(at(g.edges, {i, 5, 0}), 0.5);
    EXPECT_EQ(at(g.edges, {5, i, 1}), 0.5);
  }
  EXPECT_EQ(inter_pairs, 10u);
  EXPECT_EQ(at(g.edges, {5, 5, 0}), 0.5);
  expect_normalised(g.edges);
}

TEST(InitGraph, SameClassSupports) {
  const auto g = init_graph(Td::zeros({3, 2}), {0, 0}, 2, 1);
  EXPECT_EQ(at(g.edges, {0, 1, 0}), 1.0);
  EXPECT_EQ(at(g.edges, {0, 1, 1}), 0.0);
}

TEST(InitGraph, LabelCountMismatch) {
  EXPECT_THROW(init_graph(Td::zeros({3, 2}), {0}, 2, 1), ConfigError);
}

TEST(NodeAggregation, UniformEdgesGiveMean) {
  std::mt19937_64 rng(1);
  auto nodes = random_tensor({3, 4}, rng);
  for (auto& v : nodes.mutable_data()) v = std::abs(v);
  GraphState<double> s{nodes, Td::full({3, 3, 2}, 0.5)};
  const auto out = node_aggregation(s, intra_passthrough(4));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 4; ++c) {
      const double mean = (at(nodes, {0, c}) + at(nodes, {1, c}) + at(nodes, {2, c})) / 3.0;
      EXPECT_NEAR(at(out, {i, c}), mean, 1e-12);
    }
  }
}

TEST(NodeAggregation, ConcentratedChannelPicksNode) {
  std::mt19937_64 rng(2);
  auto nodes = random_tensor({3, 4}, rng);
  for (auto& v : nodes.mutable_data()) v = std::abs(v);
  std::vector<double> e(18, 0.5);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) e[(i * 3 + j) * 2] = j == 2 ? 1.0 : 0.0;
  }
  GraphState<double> s{nodes, Td::from_data({3, 3, 2}, e)};
  const auto out = node_aggregation(s, intra_passthrough(4));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(at(out, {i, c}), at(nodes, {2, c}));
  }
}

TEST(NodeAggregation, ZeroRowIsDegenerate) {
  GraphState<double> s{Td::zeros({2, 2}), Td::from_data({2, 2, 2}, {1, 0, 1, 0, 1, 0, 1, 0})};
  EXPECT_THROW(node_aggregation(s, intra_passthrough(2)), NumericError);
}

TEST(NodeAggregation, GradientCheck) {
  Fixture fx(4);
  auto nodes = random_tensor({4, 4}, fx.rng);
  nodes.set_requires_grad(true);
  const auto state = init_graph(nodes, {0, 1}, 2, 2);
  std::vector<numgrad::Parameter<double>> all(fx.params.begin(), fx.params.end());
  all.push_back({"nodes", nodes});
  const auto w = random_tensor({4, 4}, fx.rng);
  const auto r = numgrad::grad_check(
      [&] { return numgrad::sum_all(numgrad::mul(node_aggregation(state, fx.p.layers[0].f_node), w)); }, all);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_parameter;
}

TEST(EdgeAggregation, RowSumsConservedThenNormalised) {
  Fixture fx;
  const auto state = init_graph(random_tensor({10, 8}, fx.rng), iota_labels(5), 5, 5);
  const auto nodes = node_aggregation(state, fx.p.layers[0].f_node);
  const auto up = edge_aggregation(nodes, state.edges, fx.p.layers[0].f_edge);
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t b = 0; b < 2; ++b) {
      double before = 0.0, after = 0.0;
      for (std::size_t j = 0; j < 10; ++j) {
        before += at(state.edges, {i, j, b});
        after += at(up.pre_norm, {i, j, b});
      }
      EXPECT_NEAR(after, before, 1e-6);
    }
  }
  expect_normalised(up.edges);
  for (const double s : up.similarity.data()) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
}

TEST(EdgeAggregation, IdenticalPairBeatsDistantNode) {
  Fixture fx(4);
  const auto nodes = Td::from_data({3, 4}, {0.1, 0.2, 0.3, 0.4, 0.1, 0.2, 0.3, 0.4, 3.0, -2.0, 4.0, -1.0});
  const auto edges = Td::full({3, 3, 2}, 0.5);
  const auto up = edge_aggregation(nodes, edges, fx.p.layers[0].f_edge);
  EXPECT_GT(at(up.edges, {0, 1, 0}), at(up.edges, {0, 2, 0}));
  EXPECT_GT(at(up.similarity, {0, 1}), at(up.similarity, {0, 2}));
}

TEST(Propagate, ZeroLayersUnchanged) {
  Fixture fx;
  const auto s0 = init_graph(random_tensor({6, 8}, fx.rng), iota_labels(5), 5, 1);
  const auto s1 = propagate(s0, fx.p, 0);
  EXPECT_EQ(s1.layer, 0u);
  EXPECT_TRUE(std::equal(s0.edges.data().begin(), s0.edges.data().end(), s1.edges.data().begin()));
  EXPECT_THROW(propagate(s0, fx.p, 2), ConfigError);
}

TEST(Propagate, InvariantsHoldForThreeLayers) {
  Fixture fx(16, 3);
  auto state = init_graph(random_tensor({10, 16}, fx.rng), iota_labels(5), 5, 5);
  for (std::size_t l = 0; l < 3; ++l) {
    const auto nodes = node_aggregation(state, fx.p.layers[l].f_node);
    const auto up = edge_aggregation(nodes, state.edges, fx.p.layers[l].f_edge);
    for (std::size_t i = 0; i < 10; ++i) {
      for (std::size_t b = 0; b < 2; ++b) {
        double before = 0.0, after = 0.0;
        for (std::size_t j = 0; j < 10; ++j) {
          before += at(state.edges, {i, j, b});
          after += at(up.pre_norm, {i, j, b});
        }
        EXPECT_NEAR(after, before, 1e-6);
      }
    }
    expect_normalised(up.edges);
    state = {nodes, up.edges, l + 1};
  }
  const auto direct = propagate(init_graph(random_tensor({10, 16}, fx.rng), iota_labels(5), 5, 5), fx.p, 3);
  EXPECT_EQ(direct.layer, 3u);
  expect_normalised(direct.edges);
}

TEST(Select, SingleQueryIsCopy) {
  const auto e = Td::from_data({3, 3}, {1, 0, 0.6, 0, 1, 0.2, 0.6, 0.2, 1});
  const auto cube = select(e, 2, 1);
  ASSERT_EQ(cube.m_siam.shape(), (numgrad::Shape{1, 3, 3}));
  EXPECT_TRUE(std::equal(e.data().begin(), e.data().end(), cube.m_siam.data().begin()));
}

TEST(Select, SharedSupportBlock) {
  std::mt19937_64 rng(3);
  const auto e = random_tensor({4, 4}, rng);
  const auto cube = select(e, 2, 2);
  ASSERT_EQ(cube.m_siam.shape(), (numgrad::Shape{2, 3, 3}));
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(at(cube.m_siam, {0, r, c}), at(cube.m_siam, {1, r, c}));
  }
  EXPECT_EQ(at(cube.m_siam, {1, 2, 0}), at(e, {3, 0}));
  EXPECT_EQ(at(cube.m_siam, {1, 0, 2}), at(e, {0, 3}));
  EXPECT_EQ(at(cube.m_siam, {1, 2, 2}), at(e, {3, 3}));
  EXPECT_THROW(select(e, 2, 1), IndexError);
}

TEST(PoolShots, Cases) {
  std::mt19937_64 rng(4);
  const auto f = random_tensor({1, 3, 2}, rng);
  const auto k1 = pool_support_shots(f, 1, 1);
  EXPECT_TRUE(std::equal(f.data().begin(), f.data().end(), k1.data().begin()));
  const auto twin = pool_support_shots(numgrad::concat<double>({f, f}, 0), 1, 2);
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_DOUBLE_EQ(twin.data()[i], f.data()[i]);
  const auto opposite = pool_support_shots(numgrad::concat<double>({f, numgrad::scale(f, -1.0)}, 0), 1, 2);
  for (const double v : opposite.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(pool_support_shots(random_tensor({5, 2}, rng), 2, 2), ConfigError);
}

TEST(GraphLoss, UniformEdgesGiveLogFive) {
  GraphState<double> s{Td::zeros({7, 2}), Td::full({7, 7, 2}, 0.5)};
  EXPECT_NEAR(graph_loss(s, 5, {0, 3}).item(), std::log(5.0), 1e-12);
}

TEST(GraphLoss, ConfidentEdgesLowerLoss) {
  std::vector<double> e(6 * 6 * 2, 0.5);
  for (std::size_t j = 0; j < 5; ++j) {
    e[(5 * 6 + j) * 2] = j == 2 ? 0.999 : 0.001;
    e[(5 * 6 + j) * 2 + 1] = 1.0 - e[(5 * 6 + j) * 2];
  }
  GraphState<double> s{Td::zeros({6, 2}), Td::from_data({6, 6, 2}, e)};
  const double loss = graph_loss(s, 5, {2}).item();
  EXPECT_GT(loss, 0.0);
  EXPECT_LT(loss, std::log(5.0));
  const auto logits = aca_logits(s, 5);
  EXPECT_EQ(std::max_element(logits.data().begin(), logits.data().end()) - logits.data().begin(), 2);
}

TEST(TaskFeatures, ShapesAndIdentityMixing) {
  Fixture fx(4);
  const std::size_t n_s = 3, n_q = 2, t = 5;
  const auto sf = random_tensor({n_s, t, 4}, fx.rng), ss = random_tensor({n_s, 4}, fx.rng);
  const auto qf = random_tensor({n_q, t, 4}, fx.rng), qs = random_tensor({n_q, 4}, fx.rng);
  const auto out = run_ggpc(sf, ss, qf, qs, iota_labels(n_s), fx.cfg, fx.p);
  EXPECT_EQ(out.task.support.shape(), (numgrad::Shape{n_q, n_s, t, 4}));
  EXPECT_EQ(out.task.query.shape(), (numgrad::Shape{n_q, t, 4}));
  EXPECT_EQ(out.cube.m_siam.shape(), (numgrad::Shape{n_q, n_s + 1, n_s + 1}));
  for (const double v : out.cube.m_siam.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }

  // With an identity cube the graph term of row i is f_ffn(f_emb(node i)).
  std::vector<double> eye(n_q * (n_s + 1) * (n_s + 1), 0.0);
  for (std::size_t q = 0; q < n_q; ++q) {
    for (std::size_t i = 0; i <= n_s; ++i) eye[(q * (n_s + 1) + i) * (n_s + 1) + i] = 1.0;
  }
  const auto task = build_task_features(SimilarityCube<double>{Td::from_data({n_q, n_s + 1, n_s + 1}, eye)}, sf, ss,
                                        qf, qs, fx.p);
  const auto g = fx.p.f_ffn(fx.p.f_emb(numgrad::narrow(qs, 0, 1, 1)));
  const auto expected = fx.p.f_fuse(numgrad::concat<double>({numgrad::narrow(numgrad::narrow(qf, 0, 1, 1), 1, 0, 1),
                                                             numgrad::reshape(g, {1, 1, 4})},
                                                            2));
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(at(task.query, {1, 0, c}), expected.data()[c], 1e-12);
}

TEST(TaskFeatures, CubeShapeMismatch) {
  Fixture fx(4);
  const auto sf = Td::zeros({2, 3, 4}), ss = Td::zeros({2, 4}), qf = Td::zeros({1, 3, 4}), qs = Td::zeros({1, 4});
  EXPECT_THROW(build_task_features(SimilarityCube<double>{Td::zeros({1, 2, 2})}, sf, ss, qf, qs, fx.p), DimensionError);
}

TEST(Ggpc, QueryPermutationPermutesOutputs) {
  Fixture fx(6);
  const std::size_t n_s = 3, n_q = 3, t = 4;
  const auto sf = random_tensor({n_s, t, 6}, fx.rng), ss = random_tensor({n_s, 6}, fx.rng);
  const auto qf = random_tensor({n_q, t, 6}, fx.rng), qs = random_tensor({n_q, 6}, fx.rng);
  const std::vector<std::size_t> perm{2, 0, 1};
  const auto a = run_ggpc(sf, ss, qf, qs, iota_labels(n_s), fx.cfg, fx.p);
  const auto b = run_ggpc(sf, ss, numgrad::index_select(qf, 0, perm), numgrad::index_select(qs, 0, perm),
                          iota_labels(n_s), fx.cfg, fx.p);
  const std::size_t per_q = n_s * t * 6;
  for (std::size_t q = 0; q < n_q; ++q) {
    for (std::size_t k = 0; k < per_q; ++k) {
      EXPECT_NEAR(b.task.support.data()[q * per_q + k], a.task.support.data()[perm[q] * per_q + k], 1e-12);
    }
    for (std::size_t k = 0; k < t * 6; ++k) {
      EXPECT_NEAR(b.task.query.data()[q * t * 6 + k], a.task.query.data()[perm[q] * t * 6 + k], 1e-12);
    }
  }
}

TEST(Ggpc, NodeSelfSeparatesQueries) {
  Fixture fx(8);
  const auto seeds = random_tensor({7, 8}, fx.rng);
  const auto state = propagate(init_graph(seeds, iota_labels(5), 5, 2), fx.p, 1);
  const auto logits = aca_logits(state, 5);
  bool differ = false;
  for (std::size_t j = 0; j < 5; ++j) differ = differ || at(logits, {0, j}) != at(logits, {1, j});
  EXPECT_TRUE(differ);
}

TEST(Ggpc, PerQueryGraphs) {
  Fixture fx(4);
  fx.cfg.transductive = false;
  const auto sf = random_tensor({2, 3, 4}, fx.rng), ss = random_tensor({2, 4}, fx.rng);
  const auto qf = random_tensor({3, 3, 4}, fx.rng), qs = random_tensor({3, 4}, fx.rng);
  const auto out = run_ggpc(sf, ss, qf, qs, {0, 1}, fx.cfg, fx.p);
  EXPECT_EQ(out.graphs.size(), 3u);
  EXPECT_EQ(out.aca_logits.shape(), (numgrad::Shape{3, 2}));
  EXPECT_THROW(run_ggpc(sf, ss, Td::zeros({0, 3, 4}), Td::zeros({0, 4}), {0, 1}, fx.cfg, fx.p), ConfigError);
}

TEST(Ggpc, EndToEndGradientCheck) {
  Fixture fx(8);
  const std::size_t n_s = 2, n_q = 2, t = 3;
  auto sf = random_tensor({n_s, t, 8}, fx.rng), ss = random_tensor({n_s, 8}, fx.rng);
  auto qf = random_tensor({n_q, t, 8}, fx.rng), qs = random_tensor({n_q, 8}, fx.rng);
  std::vector<numgrad::Parameter<double>> all(fx.params.begin(), fx.params.end());
  for (auto* x : {&sf, &ss, &qf, &qs}) {
    x->set_requires_grad(true);
    all.push_back({"input", *x});
  }
  const auto ws = random_tensor({n_q, n_s, t, 8}, fx.rng), wq = random_tensor({n_q, t, 8}, fx.rng);
  const auto r = numgrad::grad_check(
      [&] {
        const auto out = run_ggpc(sf, ss, qf, qs, iota_labels(n_s), fx.cfg, fx.p);
        return numgrad::add(numgrad::add(numgrad::sum_all(numgrad::mul(out.task.support, ws)),
                                         numgrad::sum_all(numgrad::mul(out.task.query, wq))),
                            graph_loss(out.graphs[0], n_s, {0, 1}));
      },
      all);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_parameter;
}
