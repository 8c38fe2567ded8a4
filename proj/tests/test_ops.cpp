#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "fusecap/errors.hpp"
#include "fusecap/grad_check.hpp"
#include "fusecap/ops.hpp"
#include "fusecap/optim.hpp"

namespace fusecap {
namespace {

constexpr double kPrimitiveTol = 1e-6;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), true);
}

// Fixed random weights make a non-symmetric scalar of any tensor.
Tensor weighted_sum(const Tensor& x, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(x.size());
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return nn::sum(nn::hadamard(x, Tensor(x.shape(), w)));
}

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor({0, 3}, {}), DimensionError);
}

TEST(Ops, MatmulValuesAndShapeErrors) {
  auto a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  auto b = Tensor::matrix(3, 2, {7, 8, 9, 10, 11, 12});
  auto c = nn::matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 2}));
  EXPECT_EQ(std::vector<double>(c.values().begin(), c.values().end()),
            (std::vector<double>{58, 64, 139, 154}));
  EXPECT_THROW(nn::matmul(a, a), DimensionError);
}

TEST(Ops, MatmulIdentity) {
  Rng rng(3);
  auto a = random_tensor({3, 3}, rng);
  auto eye = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto c = nn::matmul(a, eye);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(c[i], a[i]);
}

TEST(Ops, GradMatmul) {
  Rng rng(1);
  std::vector<Tensor> in{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
  EXPECT_LE(grad_check([&] { return weighted_sum(nn::matmul(in[0], in[1]), 11); }, in),
            kPrimitiveTol);
}

TEST(Ops, GradAffineRank1AndRank2) {
  Rng rng(2);
  std::vector<Tensor> in{random_tensor({3}, rng), random_tensor({3, 4}, rng),
                         random_tensor({4}, rng)};
  EXPECT_LE(grad_check([&] { return weighted_sum(nn::affine(in[0], in[1], in[2]), 12); }, in),
            kPrimitiveTol);
  std::vector<Tensor> in2{random_tensor({2, 3}, rng), in[1], in[2]};
  EXPECT_LE(grad_check([&] { return weighted_sum(nn::affine(in2[0], in2[1], in2[2]), 13); }, in2),
            kPrimitiveTol);
}

TEST(Ops, ConcatAndSliceRoundTrip) {
  auto a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  auto b = Tensor::matrix(2, 1, {5, 6});
  auto c = nn::concat_last(a, b);
  EXPECT_EQ(std::vector<double>(c.values().begin(), c.values().end()),
            (std::vector<double>{1, 2, 5, 3, 4, 6}));
  auto s = nn::slice_last(c, 2, 1);
  EXPECT_EQ(s[0], 5);
  EXPECT_EQ(s[1], 6);
  EXPECT_THROW(nn::concat_last(a, Tensor::vector({1, 2})), DimensionError);
}

TEST(Ops, GradConcatSliceHadamardAddScale) {
  Rng rng(4);
  std::vector<Tensor> in{random_tensor({2, 3}, rng), random_tensor({2, 2}, rng)};
  auto f = [&] {
    auto c = nn::concat_last(in[0], in[1]);
    auto s = nn::slice_last(c, 1, 3);
    return weighted_sum(nn::add(nn::hadamard(s, s), nn::scale(s, -0.7)), 14);
  };
  EXPECT_LE(grad_check(f, in), kPrimitiveTol);
}

TEST(Ops, GradElementwiseNonlinearities) {
  Rng rng(5);
  std::vector<Tensor> in{random_tensor({2, 5}, rng)};
  EXPECT_LE(grad_check([&] { return weighted_sum(nn::tanh(in[0]), 15); }, in), kPrimitiveTol);
  EXPECT_LE(grad_check([&] { return weighted_sum(nn::sigmoid(in[0]), 16); }, in), kPrimitiveTol);
  // Keep relu probes away from the kink.
  std::vector<double> v(10);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (i % 2 ? 1.0 : -1.0) * (0.3 + 0.1 * i);
  std::vector<Tensor> r{Tensor({2, 5}, v, true)};
  EXPECT_LE(grad_check([&] { return weighted_sum(nn::relu(r[0]), 17); }, r), kPrimitiveTol);
}

TEST(Ops, GluHalvesAndGradient) {
  auto x = Tensor::vector({1.0, 2.0, 0.0, 100.0});
  auto y = nn::glu(x);
  ASSERT_EQ(y.size(), 2u);
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_NEAR(y[1], 2.0, 1e-12);
  EXPECT_THROW(nn::glu(Tensor::vector({1, 2, 3})), DimensionError);
  Rng rng(6);
  std::vector<Tensor> in{random_tensor({3, 6}, rng)};
  EXPECT_LE(grad_check([&] { return weighted_sum(nn::glu(in[0]), 18); }, in), kPrimitiveTol);
}

TEST(Ops, SoftmaxXentUniformAndGradient) {
  auto logits = Tensor::vector({0.3, 0.3, 0.3, 0.3});
  EXPECT_NEAR(nn::softmax_xent(logits, 2).item(), std::log(4.0), 1e-12);
  Rng rng(7);
  std::vector<Tensor> in{random_tensor({3, 5}, rng)};
  std::vector<TokenId> targets{1, nn::kIgnoreTarget, 4};
  EXPECT_LE(grad_check([&] { return nn::softmax_xent(in[0], targets); }, in), kPrimitiveTol);
  // Analytic gradient: softmax - onehot on live rows, zero on ignored rows.
  in[0].clear_grad();
  nn::softmax_xent(in[0], targets).backward();
  auto p = nn::softmax_rows(in[0]);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 5; ++c) {
      double want = r == 1 ? 0.0 : p[r * 5 + c] - (static_cast<TokenId>(c) == targets[r] ? 1 : 0);
      EXPECT_NEAR(in[0].grad()[r * 5 + c], want, 1e-12);
    }
  }
  EXPECT_THROW(nn::softmax_xent(in[0], std::vector<TokenId>{0, 9, 1}), IndexError);
}

TEST(Ops, LogSoftmaxStableForLargeLogits) {
  std::vector<double> row{1000.0, 1000.0};
  auto ls = nn::log_softmax(row);
  EXPECT_NEAR(ls[0], -std::log(2.0), 1e-12);
}

TEST(Ops, GradEmbeddingAndPickRows) {
  Rng rng(8);
  std::vector<Tensor> in{random_tensor({4, 3}, rng), random_tensor({2, 3}, rng)};
  std::vector<TokenId> ids{2, 0, 2};
  EXPECT_LE(grad_check([&] { return weighted_sum(nn::embedding(in[0], ids), 19); }, in),
            kPrimitiveTol);
  std::vector<Tensor> sources{in[1], nn::scale(in[1], 2.0)};
  std::vector<std::size_t> which{1, 0};
  auto picked = nn::pick_rows(sources, which);
  EXPECT_DOUBLE_EQ(picked[0], 2 * in[1][0]);
  EXPECT_DOUBLE_EQ(picked[3], in[1][3]);
  EXPECT_THROW(nn::embedding(in[0], std::vector<TokenId>{4}), IndexError);
}

TEST(Ops, LstmCellMatchesComposedGraph) {
  Rng rng(9);
  const std::size_t B = 2, D = 3, H = 4;
  std::vector<Tensor> in{random_tensor({B, D}, rng, -1, 1), random_tensor({B, H}, rng, -1, 1),
                         random_tensor({B, H}, rng, -1, 1), random_tensor({D + H, 4 * H}, rng, -1, 1),
                         random_tensor({4 * H}, rng, -1, 1)};
  auto composed = [&] {
    auto z = nn::affine(nn::concat_last(in[0], in[1]), in[3], in[4]);
    auto i = nn::sigmoid(nn::slice_last(z, 0, H));
    auto f = nn::sigmoid(nn::slice_last(z, H, H));
    auto g = nn::tanh(nn::slice_last(z, 2 * H, H));
    auto o = nn::sigmoid(nn::slice_last(z, 3 * H, H));
    auto c = nn::add(nn::hadamard(f, in[2]), nn::hadamard(i, g));
    return nn::concat_last(nn::hadamard(o, nn::tanh(c)), c);
  };
  auto fused = nn::lstm_cell(in[0], in[1], in[2], in[3], in[4]);
  auto ref = composed();
  ASSERT_EQ(fused.shape(), ref.shape());
  for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_NEAR(fused[k], ref[k], 1e-14);
  EXPECT_LE(grad_check([&] { return weighted_sum(nn::lstm_cell(in[0], in[1], in[2], in[3], in[4]), 20); },
                       in),
            kPrimitiveTol);
  EXPECT_THROW(nn::lstm_cell(in[0], in[1], in[2], in[3], Tensor::zeros({3})), DimensionError);
}

TEST(Ops, DropoutIdentityAtEvalAndUnbiasedInTraining) {
  Rng rng(10);
  auto x = Tensor::full({1, 20000}, 1.0);
  auto eval = nn::dropout(x, 0.5, false, rng);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(eval[i], 1.0);
  auto train = nn::dropout(x, 0.5, true, rng);
  double mean = 0.0;
  std::size_t zeros = 0;
  for (double v : train.values()) {
    mean += v;
    zeros += v == 0.0;
    EXPECT_TRUE(v == 0.0 || v == 2.0);
  }
  mean /= 20000.0;
  EXPECT_NEAR(mean, 1.0, 0.03);
  EXPECT_NEAR(static_cast<double>(zeros) / 20000.0, 0.5, 0.015);
}

TEST(Ops, NoGradGuardSkipsRecording) {
  auto w = Tensor::vector({1.0, 2.0}, true);
  {
    nn::NoGradGuard guard;
    EXPECT_FALSE(nn::recording());
    auto y = nn::sum(nn::scale(w, 3.0));
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(nn::recording());
  EXPECT_TRUE(nn::sum(w).requires_grad());
}

TEST(GradCheck, RejectsNonFinite) {
  std::vector<Tensor> in{Tensor::vector({1.0}, true)};
  EXPECT_THROW(grad_check([&] { return nn::scale(in[0], INFINITY); }, in), NumericError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterStore store;
  auto& p = store.add("w", {3}, {1.0, -2.0, 0.5});
  auto& frozen = store.add("f", {1}, {4.0});
  frozen.freeze();
  p.tensor.mutable_grad()[0] = 0.3;
  p.tensor.mutable_grad()[1] = -5.0;
  p.tensor.mutable_grad()[2] = 1e-3;
  AdamState state(AdamConfig{0.01});
  auto params = store.all();
  adam_step(params, state);
  // At t=1 the bias-corrected step is lr * g / (|g| + eps) ~ lr * sign(g).
  EXPECT_NEAR(p.tensor[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p.tensor[1], -2.0 + 0.01, 1e-9);
  EXPECT_NEAR(p.tensor[2], 0.5 - 0.01, 1e-7);
  EXPECT_EQ(frozen.tensor[0], 4.0);
  EXPECT_FALSE(p.tensor.has_grad() && p.tensor.grad()[0] != 0.0);
}

TEST(Adam, MissingGradientIsStateError) {
  ParameterStore store;
  store.add("w", {2}, {1.0, 1.0});
  AdamState state;
  auto params = store.all();
  EXPECT_THROW(adam_step(params, state), StateError);
}

TEST(Adam, ClipGradNorm) {
  ParameterStore store;
  auto& p = store.add("w", {2}, {0.0, 0.0});
  p.tensor.mutable_grad()[0] = 3.0;
  p.tensor.mutable_grad()[1] = 4.0;
  auto params = store.all();
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
  EXPECT_NEAR(p.tensor.grad()[0], 0.6, 1e-12);
  EXPECT_NEAR(p.tensor.grad()[1], 0.8, 1e-12);
}

}  // namespace
}  // namespace fusecap
