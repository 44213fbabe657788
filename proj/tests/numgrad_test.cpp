#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gghm/numgrad/checkpoint.hpp"
#include "gghm/numgrad/grad_check.hpp"
#include "gghm/numgrad/layers.hpp"
#include "gghm/numgrad/ops.hpp"

using namespace gghm;
using namespace gghm::numgrad;
using Td = Tensor<double>;

namespace {

Td random_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(numgrad::numel(shape));
  for (auto& x : v) x = normal(rng);
  return Td::from_data(std::move(shape), std::move(v));
}

Parameter<double> param(const std::string& name, Td t) {
  t.set_requires_grad(true);
  return {name, t};
}

std::vector<double> values(const Td& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Td::from_data({2, 2}, {1, 2, 3}), DimensionError);
  const auto t = Td::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, BackwardNeedsScalar) {
  auto x = Td::from_data({2}, {1, 2});
  x.set_requires_grad(true);
  EXPECT_THROW(scale(x, 2.0).backward(), DimensionError);
}

TEST(Tensor, GradientAccumulatesAcrossUses) {
  auto x = Td::from_data({2}, {1, 2});
  x.set_requires_grad(true);
  sum_all(add(x, mul(x, x))).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{3, 5}));
}

TEST(Tensor, FiniteCheckNamesOp) {
  FiniteCheckGuard guard;
  const auto x = Td::from_data({1}, {0.0});
  try {
    div(Td::from_data({1}, {1.0}), x);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("div"), std::string::npos);
  }
}

TEST(Matmul, Identity) {
  const auto i = Td::from_data({2, 2}, {1, 0, 0, 1});
  const auto b = Td::from_data({2, 2}, {2, 3, 4, 5});
  EXPECT_EQ(values(matmul(i, b)), (std::vector<double>{2, 3, 4, 5}));
}

TEST(Matmul, RowByColumn) {
  EXPECT_EQ(matmul(Td::from_data({1, 2}, {1, 2}), Td::from_data({2, 1}, {3, 4})).item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Td::zeros({2, 3}), Td::zeros({2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
  }
}

TEST(Matmul, BatchedSharesRightOperand) {
  std::mt19937_64 rng(3);
  const auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({4, 2}, rng);
  const auto c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 2}));
  const auto second = matmul(reshape(narrow(a, 0, 1, 1), {3, 4}), b);
  for (std::size_t k = 0; k < 6; ++k) EXPECT_DOUBLE_EQ(c.data()[6 + k], second.data()[k]);
}

TEST(Matmul, AssociativeWithIdentity) {
  std::mt19937_64 rng(4);
  const auto a = random_tensor({3, 3}, rng), b = random_tensor({3, 3}, rng);
  const auto i = Td::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const auto left = matmul(matmul(a, i), b), right = matmul(a, matmul(i, b));
  for (std::size_t k = 0; k < 9; ++k) EXPECT_NEAR(left.data()[k], right.data()[k], 1e-6);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto a = param("a", random_tensor({3, 4}, rng)), b = param("b", random_tensor({4, 2}, rng));
  EXPECT_LT(grad_check([&] { return sum_all(matmul(a.tensor, b.tensor)); }, {a, b}).max_relative_error, 1e-4);
}

TEST(Relu, Values) {
  EXPECT_EQ(values(relu(Td::from_data({3}, {-1, 0, 2}))), (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(values(relu(Td::from_data({2}, {-3, -0.5}))), (std::vector<double>{0, 0}));
}

TEST(Relu, GradientIsIndicatorOfPositive) {
  auto x = Td::from_data({4}, {-1, 0, 2, 3});
  x.set_requires_grad(true);
  sum_all(relu(x)).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 0, 1, 1}));
}

TEST(Attention, SingleTokenIsOutputOfValue) {
  ParameterSet<double> ps;
  std::mt19937_64 rng(6);
  const auto attn = SelfAttention<double>::create(ps, "attn", 4, rng);
  const auto x = random_tensor({2, 1, 4}, rng);
  const auto expected = attn.output(attn.value(x));
  const auto got = attn(x);
  for (std::size_t k = 0; k < got.numel(); ++k) EXPECT_NEAR(got.data()[k], expected.data()[k], 1e-12);
}

TEST(Attention, RowsSumToOne) {
  ParameterSet<double> ps;
  std::mt19937_64 rng(7);
  const auto attn = SelfAttention<double>::create(ps, "attn", 4, rng);
  const auto w = attn.weights(random_tensor({2, 5, 4}, rng));
  for (std::size_t r = 0; r < 10; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) s += w.data()[r * 5 + c];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Attention, RejectsWrongWidth) {
  ParameterSet<double> ps;
  std::mt19937_64 rng(8);
  const auto attn = SelfAttention<double>::create(ps, "attn", 4, rng);
  EXPECT_THROW(attn(Td::zeros({1, 2, 3})), DimensionError);
}

TEST(Attention, GradientCheck) {
  ParameterSet<double> ps;
  std::mt19937_64 rng(9);
  const auto attn = SelfAttention<double>::create(ps, "attn", 4, rng);
  auto x = param("x", random_tensor({2, 3, 4}, rng));
  const auto w = random_tensor({2, 3, 4}, rng);
  std::vector<Parameter<double>> all(ps.begin(), ps.end());
  all.push_back(x);
  EXPECT_LT(grad_check([&] { return sum_all(mul(scaled_dot_attention(x.tensor, attn), w)); }, all).max_relative_error,
            1e-4);
}

TEST(DepthwiseConv, ImpulseIsIdentity) {
  const auto x = Td::from_data({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  const auto k = Td::from_data({2, 3}, {0, 1, 0, 0, 1, 0});
  EXPECT_EQ(values(depthwise_conv1d(x, k)), values(x));
}

TEST(DepthwiseConv, LeadingTapShifts) {
  const auto x = Td::from_data({1, 1, 3}, {1, 2, 3});
  EXPECT_EQ(values(depthwise_conv1d(x, Td::from_data({1, 3}, {1, 0, 0}))), (std::vector<double>{0, 1, 2}));
}

TEST(DepthwiseConv, EvenKernelRejected) {
  EXPECT_THROW(depthwise_conv1d(Td::zeros({1, 1, 3}), Td::zeros({1, 2})), ConfigError);
}

TEST(DepthwiseConv, GradientCheck) {
  std::mt19937_64 rng(10);
  auto x = param("x", random_tensor({2, 3, 5}, rng)), k = param("k", random_tensor({3, 3}, rng));
  const auto w = random_tensor({2, 3, 5}, rng);
  EXPECT_LT(grad_check([&] { return sum_all(mul(depthwise_conv1d(x.tensor, k.tensor), w)); }, {x, k}).max_relative_error,
            1e-4);
}

TEST(CrossEntropy, UniformLogitsGiveLogN) {
  EXPECT_NEAR(softmax_cross_entropy(Td::zeros({1, 5}), {2}).item(), std::log(5.0), 1e-12);
}

TEST(CrossEntropy, ConfidentCorrect) {
  const double loss = softmax_cross_entropy(Td::from_data({1, 2}, {10, -10}), {0}).item();
  EXPECT_NEAR(loss, 2.06e-9, 1e-11);
  EXPECT_GT(loss, 0.0);
}

TEST(CrossEntropy, OutOfRangeTarget) {
  EXPECT_THROW(softmax_cross_entropy(Td::zeros({1, 3}), {3}), IndexError);
  EXPECT_THROW(softmax_cross_entropy(Td::zeros({1, 3}), {-1}), IndexError);
}

TEST(CrossEntropy, GradientCheck) {
  std::mt19937_64 rng(11);
  auto l = param("l", random_tensor({3, 4}, rng));
  EXPECT_LT(grad_check([&] { return softmax_cross_entropy(l.tensor, {0, 1, 3}); }, {l}).max_relative_error, 1e-4);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(12);
  const auto s = softmax(random_tensor({4, 6}, rng));
  for (std::size_t r = 0; r < 4; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < 6; ++c) acc += s.data()[r * 6 + c];
    EXPECT_NEAR(acc, 1.0, 1e-6);
  }
}

TEST(BatchNorm, NormalisesColumns) {
  const auto x = Td::from_data({4, 1}, {1, 2, 3, 4});
  const auto y = batch_norm(x, Td::from_data({1}, {1}), Td::from_data({1}, {0}));
  double mean = 0.0, var = 0.0;
  for (const double v : y.data()) mean += v / 4;
  for (const double v : y.data()) var += (v - mean) * (v - mean) / 4;
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(var, 1.0, 1e-4);
}

TEST(Blend, ConvexCombination) {
  const auto a = Td::from_data({2}, {1, 3}), b = Td::from_data({2}, {5, 7});
  EXPECT_EQ(values(blend(a, b, 0.0)), values(b));
  EXPECT_EQ(values(blend(a, b, 1.0)), values(a));
  EXPECT_EQ(values(blend(a, b, 0.5)), (std::vector<double>{3, 5}));
}

TEST(ShapeOps, PermuteAndConcat) {
  const auto x = Td::from_data({2, 3}, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(values(permute(x, {1, 0})), (std::vector<double>{0, 3, 1, 4, 2, 5}));
  EXPECT_EQ(values(concat<double>({x, x}, 1)), (std::vector<double>{0, 1, 2, 0, 1, 2, 3, 4, 5, 3, 4, 5}));
  EXPECT_EQ(expand(Td::from_data({2}, {1, 2}), 0, 3).shape(), (Shape{3, 2}));
}

TEST(GradCheck, DetectsWrongGradient) {
  // A hand-built op whose backward is off by a factor of two.
  auto x = param("x", Td::from_data({2}, {0.3, -0.7}));
  auto broken = [&] {
    auto y = mul(x.tensor, x.tensor);
    return make_result<double>({}, {y.data()[0] + y.data()[1]}, "broken", {x.tensor}, [](Node<double>& out) {
      const auto& in = out.inputs[0]->value;
      double* g = detail::input_grad(out, 0);
      for (std::size_t i = 0; i < in.size(); ++i) g[i] += 4.0 * in[i] * out.grad[0];
    });
  };
  EXPECT_GT(grad_check(broken, {x}).max_relative_error, 0.1);
}

TEST(Parameters, NamesUnique) {
  ParameterSet<double> ps;
  ps.add("a", {1}, {0.0});
  EXPECT_THROW(ps.add("a", {1}, {0.0}), ConfigError);
}

TEST(Parameters, NearIdentityInit) {
  std::mt19937_64 rng(13);
  const auto w = init::near_identity<double>(4, 0.01, rng);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(w[i * 4 + j], i == j ? 1.0 : 0.0, 0.06);
  }
  EXPECT_EQ(init::impulse<double>(2, 3), (std::vector<double>{0, 1, 0, 0, 1, 0}));
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  ParameterSet<float> ps;
  std::mt19937_64 rng(14);
  numgrad::Linear<float>::create(ps, "lin", 3, 2, rng);
  const auto bytes = encode_checkpoint(to_checkpoint(ps));
  const auto decoded = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(decoded), bytes);
  ParameterSet<float> other;
  std::mt19937_64 rng2(99);
  numgrad::Linear<float>::create(other, "lin", 3, 2, rng2);
  load_into(other, decoded);
  EXPECT_EQ(other.snapshot(), ps.snapshot());
}

TEST(Checkpoint, ShapeMismatchNamesParameter) {
  ParameterSet<float> ps, other;
  std::mt19937_64 rng(15);
  numgrad::Linear<float>::create(ps, "lin", 3, 2, rng);
  numgrad::Linear<float>::create(other, "lin", 4, 2, rng);
  const auto before = other.snapshot();
  try {
    load_into(other, to_checkpoint(ps));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("lin.weight"), std::string::npos);
  }
  EXPECT_EQ(other.snapshot(), before);
}

TEST(Checkpoint, TruncatedFileReportsOffset) {
  ParameterSet<float> ps;
  ps.add("p", {4}, {1, 2, 3, 4});
  auto bytes = encode_checkpoint(to_checkpoint(ps));
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
  bytes[0] = 'X';
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(Determinism, SameInputsSameBits) {
  std::mt19937_64 a(16), b(16);
  ParameterSet<double> pa, pb;
  const auto la = SelfAttention<double>::create(pa, "attn", 4, a);
  const auto lb = SelfAttention<double>::create(pb, "attn", 4, b);
  const auto x = random_tensor({1, 3, 4}, a);
  const auto y = random_tensor({1, 3, 4}, b);
  EXPECT_EQ(values(la(x)), values(lb(y)));
}
