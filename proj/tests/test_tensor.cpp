#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dams/ops.hpp"
#include "dams/optim.hpp"
#include "gradcheck.hpp"

using namespace dams;
using dams::testing::grad_check;
using T = double;

namespace {

Tensor<T> random_param(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  std::vector<T> v(shape_size(shape));
  for (auto& x : v) x = nd(rng);
  return Tensor<T>::parameter(std::move(shape), std::move(v));
}

// Fixed random projection so every check reduces a matrix output to a scalar
// with non-uniform weights.
Tensor<T> probe_sum(const Tensor<T>& x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<T> w(x.size());
  for (auto& v : w) v = nd(rng);
  return sum(mul(x, Tensor<T>::constant(x.shape(), std::move(w))));
}

}  // namespace

TEST(Softmax, SymmetricPair) {
  std::vector<T> x{0, 0};
  auto p = softmax<T>(x);
  EXPECT_NEAR(p[0], 0.5, 1e-12);
  EXPECT_NEAR(p[1], 0.5, 1e-12);
}

TEST(Softmax, ShiftInvariantRatio) {
  for (double c : {-50.0, 0.0, 3.25, 700.0}) {
    std::vector<T> x{c, c + std::log(2.0)};
    auto p = softmax<T>(x);
    EXPECT_NEAR(p[0], 1.0 / 3.0, 1e-12) << c;
    EXPECT_NEAR(p[1], 2.0 / 3.0, 1e-12) << c;
  }
}

TEST(Softmax, LogInputs) {
  std::vector<T> x{std::log(1.0), std::log(2.0), std::log(3.0)};
  auto p = softmax<T>(x);
  EXPECT_NEAR(p[0], 1.0 / 6, 1e-12);
  EXPECT_NEAR(p[1], 2.0 / 6, 1e-12);
  EXPECT_NEAR(p[2], 3.0 / 6, 1e-12);
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-9);
}

TEST(Softmax, RejectsNonFinite) {
  std::vector<T> x{1.0, std::nan("")};
  EXPECT_THROW(softmax<T>(x), Error);
  std::vector<T> inf{1.0, INFINITY};
  EXPECT_THROW(softmax<T>(inf), Error);
}

TEST(CrossEntropy, PeakedLogitsNearZero) {
  std::vector<T> logits(3 * 5, 0.0);
  std::vector<int> targets{1, 4, 0};
  for (int r = 0; r < 3; ++r) logits[r * 5 + targets[r]] = 40.0;
  std::vector<std::uint8_t> pad(3, 0);
  auto loss = cross_entropy(Tensor<T>::constant({3, 5}, logits), targets, pad);
  EXPECT_LT(loss.item(), 1e-3);
}

TEST(CrossEntropy, UniformIsLogV) {
  std::vector<int> targets{0, 3, 7, 2};
  std::vector<std::uint8_t> pad(4, 0);
  auto loss = cross_entropy(Tensor<T>::zeros({4, 8}), targets, pad);
  EXPECT_NEAR(loss.item(), std::log(8.0), 1e-12);
}

TEST(CrossEntropy, MatchesScalarOracle) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd(0.0, 2.0);
  std::vector<T> logits(4 * 5);
  for (auto& v : logits) v = nd(rng);
  std::vector<int> targets{2, 0, 4, 1};
  std::vector<std::uint8_t> pad{0, 0, 1, 0};
  // Oracle: direct −log(exp(z_t)/Σ exp z) per live row, averaged.
  double total = 0;
  int live = 0;
  for (int r = 0; r < 4; ++r) {
    if (pad[r]) continue;
    double z = 0;
    for (int c = 0; c < 5; ++c) z += std::exp(logits[r * 5 + c]);
    total += -std::log(std::exp(logits[r * 5 + targets[r]]) / z);
    ++live;
  }
  auto loss = cross_entropy(Tensor<T>::constant({4, 5}, logits), targets, pad);
  EXPECT_NEAR(loss.item(), total / live, 1e-12);
  EXPECT_GE(loss.item(), 0.0);
}

TEST(CrossEntropy, AllPaddedIsInvalidBatch) {
  std::vector<int> targets{1, 2};
  std::vector<std::uint8_t> pad{1, 1};
  try {
    cross_entropy(Tensor<T>::zeros({2, 4}), targets, pad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_batch);
  }
}

TEST(Backward, LinearSum) {
  auto p = Tensor<T>::parameter({2, 3}, {1, 2, 3, 4, 5, 6});
  Tape<T> tape;
  TapeScope<T> scope(tape);
  backward(sum(scale(p, 3.0)));
  for (T g : p.grad()) EXPECT_DOUBLE_EQ(g, 3.0);
}

TEST(Backward, Square) {
  auto p = Tensor<T>::parameter({2}, {1, -2});
  Tape<T> tape;
  TapeScope<T> scope(tape);
  backward(sum(mul(p, p)));
  EXPECT_DOUBLE_EQ(p.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(p.grad()[1], -4.0);
}

TEST(Backward, UnreachableParamGetsZero) {
  auto p = Tensor<T>::parameter({2}, {1, 2});
  auto q = Tensor<T>::parameter({2}, {3, 4});
  Tape<T> tape;
  TapeScope<T> scope(tape);
  backward(sum(p));
  EXPECT_EQ(q.grad()[0], 0.0);
  EXPECT_EQ(q.grad()[1], 0.0);
}

TEST(Backward, ConstantHasNoNode) {
  Tape<T> tape;
  TapeScope<T> scope(tape);
  auto c = Tensor<T>::constant({2}, {1, 2});
  auto s = sum(scale(c, 2.0));
  EXPECT_FALSE(c.node().has_value());
  EXPECT_FALSE(s.node().has_value());
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_THROW(backward(s), Error);
}

TEST(Backward, LossNotOnTapeIsUsageError) {
  auto p = Tensor<T>::parameter({2}, {1, 2});
  Tensor<T> s = sum(p);  // no active tape
  try {
    backward(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::usage);
  }
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
  auto p = Tensor<T>::parameter({1}, {3});
  Tape<T> tape;
  TapeScope<T> scope(tape);
  auto y = mul(p, p);           // p²
  auto z = add(y, y);           // 2p²
  backward(sum(z));
  EXPECT_DOUBLE_EQ(p.grad()[0], 12.0);
}

TEST(GradReverse, ForwardIsIdentity) {
  auto x = Tensor<T>::constant({2}, {1.5, -2});
  auto y = grad_reverse(x);
  EXPECT_EQ(y[0], 1.5);
  EXPECT_EQ(y[1], -2.0);
}

TEST(GradReverse, NegatesGradient) {
  auto p = Tensor<T>::parameter({3}, {1, 2, 3});
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    backward(sum(grad_reverse(p)));
  }
  for (T g : p.grad()) EXPECT_EQ(g, -1.0);
  p.zero_grad();
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    backward(sum(scale(grad_reverse(p), 2.0)));
  }
  for (T g : p.grad()) EXPECT_EQ(g, -2.0);
}

TEST(GradReverse, TwiceIsIdentity) {
  auto p = Tensor<T>::parameter({3}, {1, 2, 3});
  Tape<T> tape;
  TapeScope<T> scope(tape);
  backward(sum(grad_reverse(grad_reverse(p))));
  for (T g : p.grad()) EXPECT_EQ(g, 1.0);
}

// Every differentiable primitive against central differences.
class PrimitiveGradients : public ::testing::Test {
 protected:
  std::mt19937_64 rng{2024};
  static constexpr double kTol = 1e-4;
};

TEST_F(PrimitiveGradients, Matmul) {
  auto a = random_param({3, 4}, rng), b = random_param({4, 5}, rng);
  auto r = grad_check<T>([&] { return probe_sum(matmul(a, b)); }, {a, b});
  EXPECT_LT(r.worst_relative_error, kTol) << r.worst_param;
}

TEST_F(PrimitiveGradients, MatmulTransposed) {
  auto a = random_param({3, 4}, rng), b = random_param({6, 4}, rng);
  auto r = grad_check<T>([&] { return probe_sum(matmul_nt(a, b)); }, {a, b});
  EXPECT_LT(r.worst_relative_error, kTol) << r.worst_param;
}

TEST_F(PrimitiveGradients, AddSubMulBias) {
  auto a = random_param({3, 4}, rng), b = random_param({3, 4}, rng), c = random_param({4}, rng);
  auto r = grad_check<T>([&] { return probe_sum(add_bias(mul(add(a, b), sub(a, b)), c)); }, {a, b, c});
  EXPECT_LT(r.worst_relative_error, kTol) << r.worst_param;
}

TEST_F(PrimitiveGradients, Activations) {
  auto a = random_param({4, 5}, rng);
  for (auto f : {+[](const Tensor<T>& x) { return sigmoid(x); }, +[](const Tensor<T>& x) { return tanh(x); },
                 +[](const Tensor<T>& x) { return gelu(x); }}) {
    a.zero_grad();
    auto r = grad_check<T>([&] { return probe_sum(f(a)); }, {a});
    EXPECT_LT(r.worst_relative_error, kTol);
  }
}

TEST_F(PrimitiveGradients, SoftmaxRows) {
  auto a = random_param({3, 6}, rng);
  auto r = grad_check<T>([&] { return probe_sum(softmax_rows(a)); }, {a});
  EXPECT_LT(r.worst_relative_error, kTol);
}

TEST_F(PrimitiveGradients, LayerNorm) {
  auto x = random_param({4, 6}, rng), g = random_param({6}, rng), b = random_param({6}, rng);
  auto r = grad_check<T>([&] { return probe_sum(layer_norm(x, g, b)); }, {x, g, b});
  EXPECT_LT(r.worst_relative_error, kTol) << r.worst_param;
}

TEST_F(PrimitiveGradients, EmbeddingAndGather) {
  auto table = random_param({7, 3}, rng);
  std::vector<int> ids{1, 4, 4, 6, 0};
  auto r = grad_check<T>(
      [&] { return probe_sum(gather_rows(embedding(table, std::span<const int>(ids)), {4, 0, 2, 2})); }, {table});
  EXPECT_LT(r.worst_relative_error, kTol);
}

TEST_F(PrimitiveGradients, ConcatReshape) {
  auto a = random_param({2, 3}, rng), b = random_param({3, 3}, rng);
  auto r = grad_check<T>([&] { return probe_sum(reshape(concat_rows<T>({a, b}), {5, 3, 1})); }, {a, b});
  EXPECT_LT(r.worst_relative_error, kTol) << r.worst_param;
}

TEST_F(PrimitiveGradients, AttentionPackedCausalAndMasked) {
  auto q = random_param({7, 8}, rng), k = random_param({7, 8}, rng), v = random_param({7, 8}, rng);
  AttnLayout causal;
  causal.causal = true;
  causal.segments = {{0, 3, 0, 3}, {3, 4, 3, 4}};
  AttnLayout masked;
  masked.segments = {{0, 4, 0, 4}, {4, 3, 4, 3}};
  masked.key_valid = {1, 1, 0, 1, 1, 1, 0};
  for (const auto* layout : {&causal, &masked}) {
    auto r = grad_check<T>([&] { return probe_sum(attention(q, k, v, *layout, 2)); }, {q, k, v});
    EXPECT_LT(r.worst_relative_error, kTol) << r.worst_param;
  }
}

TEST_F(PrimitiveGradients, AttentionCross) {
  auto q = random_param({5, 4}, rng), m = random_param({3, 4}, rng);
  AttnLayout cross;
  cross.segments = {{0, 2, 0, 1}, {2, 3, 1, 2}};
  auto r = grad_check<T>([&] { return probe_sum(attention(q, m, m, cross, 2)); }, {q, m});
  EXPECT_LT(r.worst_relative_error, kTol) << r.worst_param;
}

TEST_F(PrimitiveGradients, CrossEntropy) {
  auto logits = random_param({4, 5}, rng);
  std::vector<int> targets{1, 0, 3, 4};
  std::vector<std::uint8_t> pad{0, 1, 0, 0};
  auto r = grad_check<T>([&] { return cross_entropy(logits, targets, pad); }, {logits});
  EXPECT_LT(r.worst_relative_error, kTol);
}

TEST_F(PrimitiveGradients, BinaryLogistic) {
  auto logits = random_param({5, 1}, rng, 2.0);
  std::vector<int> labels{0, 1, 1, 0, 1};
  std::vector<T> w{0.1, 0.2, 0.2, 0.3, 0.2};
  auto r = grad_check<T>([&] { return weighted_bce_with_logits<T>(logits, labels, w); }, {logits});
  EXPECT_LT(r.worst_relative_error, kTol);
}

TEST_F(PrimitiveGradients, GradReverse) {
  auto a = random_param({3, 3}, rng);
  // Finite differences see the forward identity; the analytic gradient is negated.
  auto r = grad_check<T>([&] { return probe_sum(scale(grad_reverse(grad_reverse(a)), 1.0)); }, {a});
  EXPECT_LT(r.worst_relative_error, kTol);
  a.zero_grad();
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    backward(probe_sum(grad_reverse(a)));
  }
  std::vector<T> reversed(a.grad().begin(), a.grad().end());
  a.zero_grad();
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    backward(probe_sum(a));
  }
  for (std::size_t i = 0; i < reversed.size(); ++i) EXPECT_EQ(reversed[i], -a.grad()[i]);
}

TEST(Determinism, RepeatedForwardBackwardBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(5);
    auto a = random_param({6, 8}, rng), b = random_param({8, 8}, rng);
    AttnLayout l;
    l.segments = {{0, 6, 0, 6}};
    l.causal = true;
    Tape<T> tape;
    TapeScope<T> scope(tape);
    auto h = matmul(a, b);
    auto loss = probe_sum(attention(h, h, h, l, 4));
    backward(loss);
    std::vector<T> out{loss.item()};
    out.insert(out.end(), a.grad().begin(), a.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ZeroGradIsNoOp) {
  auto p = Tensor<T>::parameter({3}, {0.5, -1, 2});
  Adam<T> opt({{"g", {p}, {10, 1e-2}}});
  for (int i = 0; i < 25; ++i) opt.step();
  EXPECT_EQ(p[0], 0.5);
  EXPECT_EQ(p[1], -1.0);
  EXPECT_EQ(p[2], 2.0);
  EXPECT_EQ(opt.step_count(), 25u);
}

TEST(Adam, FirstStepHandEvaluated) {
  auto p = Tensor<T>::parameter({1}, {0});
  p.mutable_grad()[0] = 1;
  Adam<T> opt({{"g", {p}, {1, 0.1}}});
  opt.step();
  // m̂ = 1, v̂ = 1 → Δ = −0.1 / (1 + 1e-8)
  EXPECT_NEAR(p[0], -0.1 / (1 + 1e-8), 1e-15);
  EXPECT_NEAR(p[0], -0.0999999, 1e-7);
  EXPECT_EQ(p.grad()[0], 1.0);  // grads untouched
}

TEST(Adam, GroupLearningRatesScaleUpdates) {
  auto a = Tensor<T>::parameter({2}, {0, 0});
  auto b = Tensor<T>::parameter({2}, {0, 0});
  for (auto* t : {&a, &b}) {
    t->mutable_grad()[0] = 0.3;
    t->mutable_grad()[1] = -2.0;
  }
  Adam<T> opt({{"slow", {a}, {1, 1e-3}}, {"fast", {b}, {1, 1e-2}}});
  opt.step();
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(b[i] / a[i], 10.0, 1e-9);
}

TEST(Adam, MissingGradientIsUsageError) {
  auto p = Tensor<T>::constant({1}, {0});  // not a parameter: no grad buffer
  Adam<T> opt({{"g", {p}, {1, 0.1}}});
  EXPECT_THROW(opt.step(), Error);
}

TEST(Schedule, WarmupPeakAndDecay) {
  LrSchedule s{100, 2e-3};
  EXPECT_DOUBLE_EQ(lr_at(100, s), 2e-3);
  EXPECT_DOUBLE_EQ(lr_at(50, s), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(400, s), 1e-3);
  for (std::size_t step = 1; step < 1000; ++step) {
    EXPECT_GE(lr_at(step, s), 0.0);
    EXPECT_LE(lr_at(step, s), lr_at(100, s));
  }
  // continuity at the peak
  EXPECT_NEAR(lr_at(101, s), lr_at(100, s), 2e-5);
}

TEST(Clip, RescalesToMaxNorm) {
  auto p = Tensor<T>::parameter({2}, {0, 0});
  p.mutable_grad()[0] = 3;
  p.mutable_grad()[1] = 4;
  std::vector<ParamGroup<T>> groups{{"g", {p}, {}}};
  EXPECT_NEAR(clip_grad_norm(groups, 1.0), 5.0, 1e-12);
  EXPECT_NEAR(p.grad()[0], 0.6, 1e-9);
  EXPECT_NEAR(p.grad()[1], 0.8, 1e-9);
}
