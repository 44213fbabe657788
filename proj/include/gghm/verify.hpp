#pragma once

// Property suites behind `gghm verify`: gradient checks, Hausdorff oracle
// equivalence, tuple counts, graph edge invariants and order sensitivity.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gghm/feature_store.hpp"
#include "gghm/model.hpp"
#include "gghm/numgrad/grad_check.hpp"
#include "gghm/oracle.hpp"

namespace gghm::verify {

using numgrad::Tensor;
using Td = Tensor<double>;

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct Suite {
  std::string name;
  std::vector<Check> checks;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  }
  void add(std::string check_name, bool ok, std::string detail = {}) {
    checks.push_back({std::move(check_name), ok, std::move(detail)});
  }
};

using DistanceFn = std::function<double(const Td&, const Td&)>;

struct Options {
  std::uint64_t seed = 1;
  double grad_tolerance = 1e-4;
  std::size_t oracle_instances = 100;
  std::size_t permutation_trials = 1000;
  // The frame-level distance under test; replaceable to confirm that the
  // oracle suite catches a broken kernel.
  DistanceFn frame_distance = [](const Td& s, const Td& q) { return hpm::frame_hausdorff(s, q).item(); };
};

inline Td random_tensor(numgrad::Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  std::vector<double> v(numgrad::numel(shape));
  for (auto& x : v) x = normal(rng);
  return Td::from_data(std::move(shape), std::move(v));
}

inline oracle::Rows to_rows(const Td& x) {
  oracle::Rows rows(x.dim(0), std::vector<double>(x.dim(1)));
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    for (std::size_t k = 0; k < x.dim(1); ++k) rows[i][k] = x.data()[i * x.dim(1) + k];
  }
  return rows;
}

inline std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct ToyEpisode {
  ModelConfig config;
  Td support, query;
  std::vector<int> query_labels;
};

/// 2-way 1-shot, one query, T=4, C=8, H=W=3.
inline ToyEpisode toy_episode(std::mt19937_64& rng) {
  ToyEpisode t;
  t.config.ldtm.channels = t.config.ggpc.channels = 8;
  t.config.ldtm.frames = 4;
  t.config.ldtm.height = t.config.ldtm.width = 3;
  t.config.ldtm.gamma = 0.5;
  t.config.ldtm.beta = 0.5;
  t.config.hpm.alpha = 0.5;
  t.support = random_tensor({2, 4, 8, 3, 3}, rng);
  t.query = random_tensor({1, 4, 8, 3, 3}, rng);
  t.query_labels = {1};
  return t;
}

/// Finite-difference check of the full episode loss on the toy episode.
inline numgrad::GradCheckReport end_to_end_grad_check(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto toy = toy_episode(rng);
  const auto model = GghmModel<double>::create(toy.config, seed);
  return numgrad::grad_check([&] { return model.forward(toy.support, toy.query, toy.query_labels, 2, 1).total_loss; },
                             model.params);
}

inline Suite gradient_suite(const Options& opt) {
  using namespace numgrad;
  Suite suite{"gradients", {}};
  std::mt19937_64 rng(opt.seed);
  auto record = [&](const std::string& name, const GradCheckReport& r) {
    suite.add(name, r.max_relative_error < opt.grad_tolerance,
              "max rel err " + fmt(r.max_relative_error) + " at " + r.worst_parameter);
  };
  auto as_param = [](const std::string& n, const Td& t) {
    Td p = t;
    p.set_requires_grad(true);
    return Parameter<double>{n, p};
  };

  {
    auto a = as_param("a", random_tensor({3, 4}, rng)), b = as_param("b", random_tensor({4, 2}, rng));
    record("matmul 3x4 by 4x2", grad_check([&] { return sum_all(matmul(a.tensor, b.tensor)); }, {a, b}));
  }
  {
    auto x = as_param("x", random_tensor({2, 5}, rng));
    auto w = random_tensor({2, 5}, rng);
    record("relu", grad_check([&] { return sum_all(mul(relu(x.tensor), w)); }, {x}));
  }
  {
    ParameterSet<double> ps;
    std::mt19937_64 init_rng(opt.seed);
    const auto attn = SelfAttention<double>::create(ps, "attn", 4, init_rng);
    auto x = as_param("x", random_tensor({2, 3, 4}, rng));
    auto w = random_tensor({2, 3, 4}, rng);
    std::vector<Parameter<double>> all(ps.begin(), ps.end());
    all.push_back(x);
    record("scaled_dot_attention [2,3,4]", grad_check([&] { return sum_all(mul(attn(x.tensor), w)); }, all));
  }
  {
    auto x = as_param("x", random_tensor({2, 3, 5}, rng)), k = as_param("k", random_tensor({3, 3}, rng));
    auto w = random_tensor({2, 3, 5}, rng);
    record("depthwise_conv1d [2,3,5]",
           grad_check([&] { return sum_all(mul(depthwise_conv1d(x.tensor, k.tensor), w)); }, {x, k}));
  }
  {
    auto l = as_param("logits", random_tensor({3, 5}, rng));
    record("softmax_cross_entropy", grad_check([&] { return softmax_cross_entropy(l.tensor, {0, 3, 4}); }, {l}));
  }
  {
    auto x = as_param("x", random_tensor({6, 3}, rng)), g = as_param("gamma", random_tensor({3}, rng)),
         b = as_param("beta", random_tensor({3}, rng));
    auto w = random_tensor({6, 3}, rng);
    record("batch_norm", grad_check([&] { return sum_all(mul(batch_norm(x.tensor, g.tensor, b.tensor), w)); }, {x, g, b}));
  }
  {
    auto s = as_param("s", random_tensor({5, 4}, rng)), q = as_param("q", random_tensor({5, 4}, rng));
    record("frame_hausdorff", grad_check([&] { return hpm::frame_hausdorff(s.tensor, q.tensor); }, {s, q}));
    record("tuple_hausdorff", grad_check([&] {
             return hpm::tuple_hausdorff(hpm::build_tuples(s.tensor), hpm::build_tuples(q.tensor));
           }, {s, q}));
    record("one_minus_cosine hausdorff", grad_check([&] {
             return hpm::frame_hausdorff(s.tensor, q.tensor, hpm::BaseDistance::one_minus_cosine);
           }, {s, q}));
  }
  record("end-to-end episode loss (2-way 1-shot, T=4, C=8, H=W=3)", end_to_end_grad_check(opt.seed));
  return suite;
}

inline Suite oracle_suite(const Options& opt) {
  Suite suite{"hausdorff oracle", {}};
  std::mt19937_64 rng(opt.seed + 1);
  std::uniform_int_distribution<std::size_t> frames(2, 8), channels(1, 16);
  std::size_t frame_ok = 0, tuple_ok = 0;
  std::string frame_fail, tuple_fail;
  for (std::size_t i = 0; i < opt.oracle_instances; ++i) {
    const std::size_t t = frames(rng), c = channels(rng);
    const Td s = random_tensor({t, c}, rng), q = random_tensor({t, c}, rng);
    const double f = opt.frame_distance(s, q), f_ref = oracle::frame_distance(to_rows(s), to_rows(q));
    if (f == f_ref) ++frame_ok;
    else if (frame_fail.empty()) frame_fail = "instance " + std::to_string(i) + ": " + fmt(f) + " vs " + fmt(f_ref);
    const double u = hpm::tuple_hausdorff(hpm::build_tuples(s), hpm::build_tuples(q)).item();
    const double u_ref = oracle::tuple_distance(to_rows(s), to_rows(q));
    if (u == u_ref) ++tuple_ok;
    else if (tuple_fail.empty()) tuple_fail = "instance " + std::to_string(i) + ": " + fmt(u) + " vs " + fmt(u_ref);
  }
  const auto n = std::to_string(opt.oracle_instances);
  suite.add("frame_hausdorff equals brute-force oracle bitwise", frame_ok == opt.oracle_instances,
            std::to_string(frame_ok) + "/" + n + " exact" + (frame_fail.empty() ? "" : "; first mismatch " + frame_fail));
  suite.add("tuple_hausdorff equals brute-force oracle bitwise", tuple_ok == opt.oracle_instances,
            std::to_string(tuple_ok) + "/" + n + " exact" + (tuple_fail.empty() ? "" : "; first mismatch " + tuple_fail));
  return suite;
}

inline Suite tuple_suite(const Options& opt) {
  Suite suite{"tuple counts", {}};
  std::mt19937_64 rng(opt.seed + 2);
  bool all = true;
  std::string detail;
  for (std::size_t t = 2; t <= 8; ++t) {
    const auto tuples = hpm::build_tuples(random_tensor({t, 3}, rng));
    const bool ok = tuples.dim(0) == t * (t - 1) / 2 && tuples.dim(1) == 6;
    all = all && ok;
    detail += (detail.empty() ? "" : " ") + std::to_string(t) + ":" + std::to_string(tuples.dim(0));
  }
  suite.add("L = T(T-1)/2 for T in 2..8", all, detail);
  const auto eight = hpm::build_tuples(random_tensor({8, 4}, rng));
  suite.add("build_tuples yields L=28 at T=8", eight.dim(0) == 28, "L=" + std::to_string(eight.dim(0)));
  bool threw = false;
  try {
    hpm::build_tuples(random_tensor({1, 4}, rng));
  } catch (const ConfigError&) {
    threw = true;
  }
  suite.add("T=1 is rejected", threw);
  return suite;
}

inline Suite graph_suite(const Options& opt) {
  Suite suite{"graph invariants", {}};
  std::mt19937_64 rng(opt.seed + 3);
  const std::size_t c = 16, n_way = 5, n_query = 5, b = n_way + n_query;
  ggpc::GgpcConfig cfg;
  cfg.channels = c;
  cfg.layers = 3;
  numgrad::ParameterSet<double> ps;
  const auto params = ggpc::GgpcParams<double>::create(ps, cfg, rng);
  std::vector<int> labels(n_way);
  std::iota(labels.begin(), labels.end(), 0);

  double worst_neg = 0.0, worst_sum = 0.0, worst_conserve = 0.0;
  bool blocks_equal = true;
  const std::size_t episodes = 5;
  for (std::size_t layers = 1; layers <= 3; ++layers) {
    for (std::size_t e = 0; e < episodes; ++e) {
      numgrad::NoGradGuard no_grad;
      auto state = ggpc::init_graph(random_tensor({b, c}, rng), labels, n_way, n_query);
      auto inspect = [&](const Td& edges) {
        for (std::size_t k = 0; k < b * b; ++k) {
          const double a0 = edges.data()[2 * k], a1 = edges.data()[2 * k + 1];
          worst_neg = std::max({worst_neg, -a0, -a1});
          worst_sum = std::max(worst_sum, std::abs(a0 + a1 - 1.0));
        }
      };
      inspect(state.edges);
      for (std::size_t l = 0; l < layers; ++l) {
        const auto nodes = ggpc::node_aggregation(state, params.layers[l].f_node);
        const auto update = ggpc::edge_aggregation(nodes, state.edges, params.layers[l].f_edge);
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t ch = 0; ch < 2; ++ch) {
            double before = 0.0, after = 0.0;
            for (std::size_t j = 0; j < b; ++j) {
              before += state.edges.data()[(i * b + j) * 2 + ch];
              after += update.pre_norm.data()[(i * b + j) * 2 + ch];
            }
            worst_conserve = std::max(worst_conserve, std::abs(before - after));
          }
        }
        state.nodes = nodes;
        state.edges = update.edges;
        inspect(state.edges);
      }
      const auto cube = ggpc::select(ggpc::detail::take(state.edges, 2, 0), n_way, n_query);
      const std::size_t m = n_way + 1;
      for (std::size_t q = 1; q < n_query; ++q) {
        for (std::size_t r = 0; r < n_way; ++r) {
          for (std::size_t col = 0; col < n_way; ++col) {
            blocks_equal = blocks_equal && cube.m_siam.data()[(q * m + r) * m + col] == cube.m_siam.data()[r * m + col];
          }
        }
      }
    }
  }
  suite.add("edge features nonnegative", worst_neg <= 0.0, "most negative " + fmt(-worst_neg));
  suite.add("each edge sums to 1 within 1e-6", worst_sum <= 1e-6, "worst deviation " + fmt(worst_sum));
  suite.add("pre-normalisation row sums conserved within 1e-6", worst_conserve <= 1e-6,
            "worst drift " + fmt(worst_conserve));
  suite.add("m_siam support blocks identical across queries", blocks_equal);
  return suite;
}

inline Td pooled_tensor(const features::FeatureRecord& r, const features::FeatureDims& d) {
  const auto frames = features::pooled_frames(r, d);
  std::vector<double> flat;
  for (const auto& f : frames) flat.insert(flat.end(), f.begin(), f.end());
  return Td::from_data({frames.size(), d.c}, std::move(flat));
}

inline Td permute_rows(const Td& x, const std::vector<std::size_t>& order) {
  return numgrad::index_select(x, 0, order);
}

inline Suite order_suite(const Options& opt) {
  Suite suite{"order sensitivity", {}};
  features::SyntheticSpec spec;
  spec.n_classes = 4;
  spec.videos_per_class = 1;
  spec.dims = {8, 16, 2, 2};
  spec.noise_sigma = 0.0;
  spec.order_pair_fraction = 0.5;
  spec.seed = opt.seed;
  const auto ds = features::generate_synthetic(spec);
  const Td forward = pooled_tensor(ds.records[0], ds.dims), reversed = pooled_tensor(ds.records[1], ds.dims);
  const double d_frame = opt.frame_distance(forward, reversed);
  const double d_tuple = hpm::tuple_hausdorff(hpm::build_tuples(forward), hpm::build_tuples(reversed)).item();
  suite.add("reversed pair: D_frame == 0 exactly", d_frame == 0.0, "D_frame=" + fmt(d_frame));
  suite.add("reversed pair: D_tuple > 0", d_tuple > 0.0, "D_tuple=" + fmt(d_tuple));

  std::mt19937_64 rng(opt.seed + 4);
  const Td other = pooled_tensor(ds.records[2], ds.dims);
  const double base = opt.frame_distance(forward, other);
  std::vector<std::size_t> order(ds.dims.t_raw);
  std::iota(order.begin(), order.end(), 0);
  std::size_t equal = 0;
  for (std::size_t trial = 0; trial < opt.permutation_trials; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    const bool left = trial % 2 == 0;
    const double d = left ? opt.frame_distance(permute_rows(forward, order), other)
                          : opt.frame_distance(forward, permute_rows(other, order));
    equal += d == base;
  }
  suite.add("D_frame invariant under frame permutations", equal == opt.permutation_trials,
            std::to_string(equal) + "/" + std::to_string(opt.permutation_trials) + " exact");
  return suite;
}

inline std::vector<Suite> run_all(const Options& opt = {}) {
  return {gradient_suite(opt), oracle_suite(opt), tuple_suite(opt), graph_suite(opt), order_suite(opt)};
}

}  // namespace gghm::verify
