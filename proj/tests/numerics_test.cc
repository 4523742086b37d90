#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "gradcheck.h"
#include "mnm/common/error.h"
#include "mnm/numerics/layers.h"
#include "mnm/numerics/ops.h"
#include "mnm/numerics/params.h"
#include "mnm/numerics/tensor.h"

namespace mnm {
namespace {

using testing::CheckGradients;

Tensor RandomTensor(const Shape& shape, std::mt19937_64& rng,
                    double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> values(NumElements(shape));
  for (double& v : values) v = dist(rng);
  return Tensor::FromVector(shape, std::move(values), true);
}

void SetIdentity(Dense& dense) {
  auto w = dense.weight().mutable_data();
  const std::size_t n = dense.in_features();
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) w[i * n + i] = 1.0;
  auto b = dense.bias().mutable_data();
  std::fill(b.begin(), b.end(), 0.0);
}

TEST(TensorTest, RejectsMismatchedValueCount) {
  EXPECT_THROW(Tensor::FromVector({2, 3}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor::FromVector({0}, {}), ShapeError);
}

TEST(ElementwiseTest, ClosedForms) {
  EXPECT_DOUBLE_EQ(ops::Sigmoid(Tensor::Scalar(0)).item(), 0.5);
  EXPECT_NEAR(ops::Softplus(Tensor::Scalar(0)).item(), 0.6931472, 1e-7);
  for (double x : {-20.0, -1.0, 0.0, 1.0, 20.0}) {
    EXPECT_GT(ops::Softplus(Tensor::Scalar(x)).item(), 0.0) << x;
  }
  // Large inputs saturate without overflow.
  EXPECT_DOUBLE_EQ(ops::Softplus(Tensor::Scalar(800)).item(), 800.0);
  EXPECT_TRUE(std::isfinite(ops::Sigmoid(Tensor::Scalar(-800)).item()));
}

TEST(ElementwiseTest, ShapeMismatchNamesBothShapes) {
  const Tensor a = Tensor::Zeros({2, 3});
  const Tensor b = Tensor::Zeros({3, 2});
  try {
    ops::Add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos);
    EXPECT_NE(msg.find("[3, 2]"), std::string::npos);
  }
}

TEST(ElementwiseTest, ScalarBroadcast) {
  const Tensor a = Tensor::FromVector({3}, {1, 2, 3});
  const Tensor out = ops::Mul(a, Tensor::Scalar(2));
  EXPECT_EQ(out.shape(), Shape({3}));
  EXPECT_DOUBLE_EQ(out[2], 6);
  const Tensor left = ops::Sub(Tensor::Scalar(1), a);
  EXPECT_DOUBLE_EQ(left[0], 0);
  EXPECT_DOUBLE_EQ(left[2], -2);
}

TEST(ElementwiseTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(1);
  Tensor a = RandomTensor({4, 3}, rng);
  Tensor b = RandomTensor({4, 3}, rng);
  Tensor s = RandomTensor({}, rng);
  auto loss = [&] {
    Tensor x = ops::Mul(ops::Sigmoid(a), ops::Softplus(b));
    x = ops::Add(x, ops::Scale(ops::Relu(a), 0.7));
    x = ops::Sub(x, ops::Mul(s, b));
    return ops::Sum(ops::AddScalar(x, 0.3));
  };
  EXPECT_LE(CheckGradients(loss, {a, b, s}).max_rel_error, 1e-4);
}

TEST(LinearTest, IdentityAndHandArithmetic) {
  const Tensor x = Tensor::FromVector({1, 2}, {1, 2});
  const Tensor eye = Tensor::FromVector({2, 2}, {1, 0, 0, 1});
  const Tensor y0 = ops::Linear(x, eye, Tensor::Zeros({2}));
  EXPECT_DOUBLE_EQ(y0[0], 1);
  EXPECT_DOUBLE_EQ(y0[1], 2);
  const Tensor y = ops::Linear(x, eye, Tensor::FromVector({2}, {3, 3}));
  EXPECT_DOUBLE_EQ(y[0], 4);
  EXPECT_DOUBLE_EQ(y[1], 5);
}

TEST(LinearTest, DimensionMismatchThrows) {
  EXPECT_THROW(ops::Linear(Tensor::Zeros({2, 3}), Tensor::Zeros({2, 2}),
                           Tensor::Zeros({2})),
               ShapeError);
}

TEST(LinearTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  Tensor x = RandomTensor({5, 4}, rng);
  Tensor w = RandomTensor({4, 3}, rng);
  Tensor b = RandomTensor({3}, rng);
  Tensor target = RandomTensor({5, 3}, rng).Detach();
  auto loss = [&] {
    Tensor diff = ops::Sub(ops::Linear(x, w, b), target);
    return ops::Sum(ops::Mul(diff, diff));
  };
  const auto result = CheckGradients(loss, {x, w, b});
  EXPECT_LE(result.max_rel_error, 1e-4) << result.worst;
}

TEST(MatrixOpsTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  Tensor a = RandomTensor({3, 4}, rng);
  Tensor b = RandomTensor({4, 2}, rng);
  Tensor p = RandomTensor({2, 3, 4}, rng);
  Tensor q = RandomTensor({2, 4, 2}, rng);
  Tensor weights = RandomTensor({6, 2}, rng).Detach();
  auto loss = [&] {
    Tensor m = ops::MatMul(a, b);                      // [3,2]
    Tensor bm = ops::Reshape(ops::BatchMatMul(p, q), {6, 2});
    Tensor t = ops::Transpose(ops::ConcatColumns(
        {ops::SliceColumns(ops::Transpose(bm), 0, 3), ops::Transpose(m)}));
    return ops::Sum(ops::Mul(ops::Sigmoid(t), weights));
  };
  const auto result = CheckGradients(loss, {a, b, p, q});
  EXPECT_LE(result.max_rel_error, 1e-4) << result.worst;
}

TEST(SoftmaxTest, ConstantRowIsUniform) {
  for (double c : {-5.0, 0.0, 123.0}) {
    const Tensor y = ops::Softmax(Tensor::Full({3}, c));
    for (double v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  }
}

TEST(SoftmaxTest, HandEvaluation) {
  // exp(0) = 1, exp(ln 3) = 3 -> [1/4, 3/4]
  const Tensor y = ops::Softmax(Tensor::FromVector({2}, {0, std::log(3.0)}));
  EXPECT_NEAR(y[0], 0.25, 1e-15);
  EXPECT_NEAR(y[1], 0.75, 1e-15);
}

TEST(SoftmaxTest, RowsAreDistributions) {
  std::mt19937_64 rng(4);
  const Tensor y = ops::Softmax(RandomTensor({20, 7}, rng, 10.0));
  for (std::size_t r = 0; r < 20; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_GE(y[r * 7 + c], 0.0);
      total += y[r * 7 + c];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(LayerNormTest, ConstantRowMapsToZero) {
  const Tensor y = ops::LayerNorm(Tensor::Full({2, 5}, 3.5), Tensor::Full({5}, 1),
                                  Tensor::Zeros({5}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LayerNormTest, StandardizesRows) {
  std::mt19937_64 rng(5);
  const Tensor y = ops::LayerNorm(RandomTensor({6, 16}, rng, 4.0),
                                  Tensor::Full({16}, 1), Tensor::Zeros({16}));
  for (std::size_t r = 0; r < 6; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < 16; ++c) mean += y[r * 16 + c];
    mean /= 16;
    for (std::size_t c = 0; c < 16; ++c) var += std::pow(y[r * 16 + c] - mean, 2);
    var /= 16;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-5);
  }
}

TEST(LayerNormTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  Tensor x = RandomTensor({3, 5}, rng);
  Tensor gain = RandomTensor({5}, rng);
  Tensor bias = RandomTensor({5}, rng);
  Tensor w = RandomTensor({3, 5}, rng).Detach();
  auto loss = [&] {
    return ops::Sum(ops::Mul(ops::Softmax(ops::LayerNorm(x, gain, bias)), w));
  };
  const auto result = CheckGradients(loss, {x, gain, bias});
  EXPECT_LE(result.max_rel_error, 1e-4) << result.worst;
}

TEST(ReductionTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  Tensor x = RandomTensor({4, 3}, rng);
  auto loss = [&] {
    Tensor rows = ops::MeanRows(x);
    return ops::Add(ops::Mul(ops::Max(rows), ops::Mean(x)),
                    ops::Sum(ops::Sigmoid(rows)));
  };
  EXPECT_LE(CheckGradients(loss, {x}).max_rel_error, 1e-4);
}

TEST(Conv2dTest, ShapesAndZeroInput) {
  std::mt19937_64 rng(8);
  Tensor w = RandomTensor({3, 3, 2, 4}, rng);
  const Tensor y = ops::Conv2d(Tensor::Zeros({8, 8, 2}), w, Tensor::Zeros({4}), 2, 1);
  EXPECT_EQ(y.shape(), Shape({4, 4, 4}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dTest, MatchesDirectSum) {
  std::mt19937_64 rng(9);
  Tensor x = RandomTensor({5, 6, 2}, rng);
  Tensor w = RandomTensor({3, 3, 2, 3}, rng);
  Tensor b = RandomTensor({3}, rng);
  const Tensor y = ops::Conv2d(x, w, b, 2, 1);
  ASSERT_EQ(y.shape(), Shape({3, 3, 3}));
  for (std::size_t oy = 0; oy < 3; ++oy) {
    for (std::size_t ox = 0; ox < 3; ++ox) {
      for (std::size_t co = 0; co < 3; ++co) {
        double expected = b[co];
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = static_cast<int>(oy) * 2 + ky - 1;
            const int ix = static_cast<int>(ox) * 2 + kx - 1;
            if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
            for (int c = 0; c < 2; ++c) {
              expected += x[(iy * 6 + ix) * 2 + c] * w[((ky * 3 + kx) * 2 + c) * 3 + co];
            }
          }
        }
        EXPECT_NEAR(y[(oy * 3 + ox) * 3 + co], expected, 1e-12);
      }
    }
  }
}

TEST(Conv2dTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(10);
  Tensor x = RandomTensor({6, 6, 2}, rng);
  Tensor w = RandomTensor({3, 3, 2, 3}, rng);
  Tensor b = RandomTensor({3}, rng);
  auto loss = [&] { return ops::Sum(ops::Sigmoid(ops::Conv2d(x, w, b, 2, 1))); };
  const auto result = CheckGradients(loss, {x, w, b});
  EXPECT_LE(result.max_rel_error, 1e-4) << result.worst;
}

TEST(DropoutTest, ZeroRateIsIdentityAndSeeded) {
  std::mt19937_64 rng(11);
  const Tensor x = RandomTensor({10, 10}, rng);
  std::mt19937_64 drop_rng(3);
  const Tensor same = ops::Dropout(x, 0.0, &drop_rng);
  EXPECT_EQ(same.node(), x.node());

  std::mt19937_64 r1(5), r2(5);
  const Tensor a = ops::Dropout(x, 0.1, &r1);
  const Tensor b = ops::Dropout(x, 0.1, &r2);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  const auto zeros = std::count(a.data().begin(), a.data().end(), 0.0);
  EXPECT_GT(zeros, 0);
  EXPECT_LT(zeros, 30);
}

TEST(BackwardTest, PolynomialAndSigmoid) {
  Tensor x = Tensor::Scalar(3, true);
  Backward(ops::Mul(x, x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6);

  Tensor z = Tensor::Scalar(0, true);
  Backward(ops::Sigmoid(z));
  EXPECT_DOUBLE_EQ(z.grad()[0], 0.25);
}

TEST(BackwardTest, RejectsNonScalarLoss) {
  Tensor x = Tensor::Zeros({3}, true);
  EXPECT_THROW(Backward(ops::Relu(x)), ShapeError);
}

TEST(BackwardTest, SharedSubgraphVisitedOnce) {
  // y = s + s with s = x*x; dy/dx = 4x.
  Tensor x = Tensor::Scalar(2, true);
  Tensor s = ops::Mul(x, x);
  Backward(ops::Add(s, s));
  EXPECT_DOUBLE_EQ(x.grad()[0], 8);
}

TEST(BackwardTest, UnreachableParametersGetZero) {
  ParamStore store;
  Tensor used = store.AddConstant("used", {2}, 1.0);
  store.AddConstant("unused", {2}, 1.0);
  store.ZeroGrad();
  Backward(ops::Sum(ops::Mul(used, used)));
  EXPECT_DOUBLE_EQ(store.at(0).grad()[0], 2.0);
  const auto g = store.at(1).grad();
  EXPECT_TRUE(g.empty() || std::all_of(g.begin(), g.end(),
                                       [](double v) { return v == 0.0; }));
}

TEST(NoGradGuardTest, SuppressesRecording) {
  Tensor x = Tensor::Scalar(1, true);
  NoGradGuard guard;
  EXPECT_FALSE(ops::Mul(x, x).requires_grad());
}

TEST(AttentionTest, RejectsIndivisibleHeads) {
  ParamStore store;
  std::mt19937_64 rng(0);
  EXPECT_THROW(MultiHeadAttention(store, "mha", 6, 4, rng), ConfigError);
}

TEST(AttentionTest, IdenticalValuesGiveConstantOutput) {
  ParamStore store;
  std::mt19937_64 rng(12);
  MultiHeadAttention mha(store, "mha", 4, 2, rng);
  SetIdentity(mha.value_proj());
  const Tensor q = RandomTensor({3, 4}, rng);
  const Tensor k = RandomTensor({5, 4}, rng);
  std::vector<double> rows;
  const std::vector<double> row = {0.3, -1.2, 2.0, 0.5};
  for (int i = 0; i < 5; ++i) rows.insert(rows.end(), row.begin(), row.end());
  const Tensor v = Tensor::FromVector({5, 4}, rows);
  const Tensor out = mha(q, k, v);
  const Tensor expected = mha.output_proj()(Tensor::FromVector({1, 4}, row));
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_NEAR(out[r * 4 + c], expected[c], 1e-12);
    }
  }
}

TEST(AttentionTest, KeyValuePermutationInvariance) {
  ParamStore store;
  std::mt19937_64 rng(13);
  MultiHeadAttention mha(store, "mha", 8, 4, rng);
  const Tensor q = RandomTensor({3, 8}, rng);
  const Tensor k = RandomTensor({6, 8}, rng);
  const Tensor v = RandomTensor({6, 8}, rng);
  std::vector<std::size_t> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> kp, vp;
  for (std::size_t i : perm) {
    kp.insert(kp.end(), k.data().begin() + i * 8, k.data().begin() + i * 8 + 8);
    vp.insert(vp.end(), v.data().begin() + i * 8, v.data().begin() + i * 8 + 8);
  }
  const Tensor a = mha(q, k, v);
  const Tensor b = mha(q, Tensor::FromVector({6, 8}, kp), Tensor::FromVector({6, 8}, vp));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(AttentionTest, HandEvaluatedSingleHead) {
  ParamStore store;
  std::mt19937_64 rng(14);
  MultiHeadAttention mha(store, "mha", 2, 1, rng);
  SetIdentity(mha.query_proj());
  SetIdentity(mha.key_proj());
  SetIdentity(mha.value_proj());
  SetIdentity(mha.output_proj());
  const Tensor q = Tensor::FromVector({1, 2}, {1, 0});
  const Tensor kv = Tensor::FromVector({2, 2}, {1, 0, 0, 1});
  // scores = [1/sqrt(2), 0]; weights = softmax(scores); output = weights.
  const double e = std::exp(1.0 / std::sqrt(2.0));
  const double w0 = e / (e + 1.0);
  const Tensor out = mha(q, kv, kv);
  EXPECT_NEAR(out[0], w0, 1e-15);
  EXPECT_NEAR(out[1], 1.0 - w0, 1e-15);
}

TEST(AttentionTest, GradientsMatchFiniteDifferences) {
  ParamStore store;
  std::mt19937_64 rng(15);
  MultiHeadAttention mha(store, "mha", 6, 3, rng);
  Tensor q = RandomTensor({3, 6}, rng);
  Tensor kv = RandomTensor({4, 6}, rng);
  Tensor w = RandomTensor({3, 6}, rng).Detach();
  std::vector<Tensor> inputs = {q, kv};
  for (std::size_t i = 0; i < store.size(); ++i) inputs.push_back(store.at(i));
  auto loss = [&] { return ops::Sum(ops::Mul(mha(q, kv, kv), w)); };
  const auto result = CheckGradients(loss, inputs);
  EXPECT_LE(result.max_rel_error, 1e-4) << result.worst;
}

TEST(ParamStoreTest, BlobRoundTripAndIndex) {
  std::mt19937_64 rng(16);
  ParamStore a;
  a.AddNormal("x", {2, 3}, 1.0, rng);
  a.AddNormal("y", {4}, 1.0, rng);
  const auto blob = a.SerializeBlob();
  EXPECT_EQ(blob.size(), 10u * 8u);
  const auto index = a.Index();
  EXPECT_EQ(index["y"]["offset"].get<std::size_t>(), 48u);
  // Little-endian float64 on disk.
  EXPECT_DOUBLE_EQ(ReadLittleEndian(blob.data() + 8), a.at(0)[1]);

  ParamStore b;
  b.AddZeros("x", {2, 3});
  b.AddZeros("y", {4});
  b.Deserialize(blob, index);
  EXPECT_EQ(a.Values(), b.Values());

  ParamStore wrong;
  wrong.AddZeros("x", {3, 2});
  wrong.AddZeros("y", {4});
  EXPECT_THROW(wrong.Deserialize(blob, index), FormatError);

  auto truncated = blob;
  truncated.resize(40);
  EXPECT_THROW(b.Deserialize(truncated, index), FormatError);
}

}  // namespace
}  // namespace mnm
