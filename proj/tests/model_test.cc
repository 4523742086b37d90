#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gradcheck.h"
#include "mnm/common/error.h"
#include "mnm/model/config.h"
#include "mnm/model/model.h"
#include "mnm/numerics/ops.h"
#include "mnm/synthdata/generator.h"

namespace mnm::model {
namespace {

Tensor RandomTensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0,
                    bool requires_grad = false) {
  std::normal_distribution<double> nd(0, scale);
  std::vector<double> v(NumElements(shape));
  for (double& x : v) x = nd(rng);
  return Tensor::FromVector(shape, std::move(v), requires_grad);
}

ModelConfig Micro() {
  ModelConfig c;
  c.num_proposals = 3;
  c.dim = 8;
  c.heads = 2;
  c.stages = 2;
  c.roi_size = 3;
  c.dynamic_dim = 4;
  c.init_seed = 11;
  return c;
}

synth::Image RandomImage(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  synth::Image img{h, w, std::vector<float>(h * w)};
  for (float& p : img.pixels) p = u(rng);
  return img;
}

TEST(ConfigTest, ValidationAndJson) {
  ModelConfig c;
  EXPECT_NO_THROW(c.Validate());
  EXPECT_EQ(ModelConfigFromJson(nlohmann::json::parse(ToJson(c).dump())), c);
  c.stages = 2;
  EXPECT_THROW(c.Validate(), ConfigError);
  EXPECT_NO_THROW(c.ValidateShapes());
  c = ModelConfig{};
  c.heads = 6;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = ModelConfig{};
  c.num_proposals = 0;
  EXPECT_THROW(c.Validate(), ConfigError);
  EXPECT_THROW(ModelConfigFromJson({{"stages", 2}}), ConfigError);
  EXPECT_THROW(ModelConfigFromJson({{"mil_scheme", "cls"}}), ConfigError);
  EXPECT_THROW(ModelConfigFromJson({{"proposals", 4}}), ConfigError);
  EXPECT_EQ(ModelConfigFromJson({{"mil_scheme", "gap"}}).mil_scheme, MilScheme::kGap);
}

TEST(BackboneTest, OutputShape) {
  ParamStore store;
  std::mt19937_64 rng(1);
  Backbone backbone(store, "bb", 16, rng);
  const Tensor out = backbone(Tensor::Zeros({128, 128, 1}));
  EXPECT_EQ(out.shape(), (Shape{16, 16, 16}));
  EXPECT_THROW(backbone(Tensor::Zeros({100, 128, 1})), ShapeError);
}

TEST(BackboneTest, ZeroImageGivesZero) {
  ParamStore store;
  std::mt19937_64 rng(2);
  Backbone backbone(store, "bb", 8, rng);
  const Tensor out = backbone(Tensor::Zeros({32, 32, 1}));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(BackboneTest, BrightnessAndContrastDoNotMatter) {
  // Each channel is normalized over the map, so an affine change of the
  // input intensities leaves the features unchanged (up to eps).
  ParamStore store;
  std::mt19937_64 rng(4);
  Backbone backbone(store, "bb", 8, rng);
  const Tensor image = RandomTensor({32, 32, 1}, rng);
  const Tensor a = backbone(image);
  const Tensor b = backbone(ops::Scale(image, 3.0));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-4);
}

TEST(BackboneTest, KeepsWhereAFeatureFires) {
  // A bright spot in the top-left corner shows up in the top-left feature.
  ParamStore store;
  std::mt19937_64 rng(5);
  Backbone backbone(store, "bb", 8, rng);
  std::vector<double> spot(32 * 32, 0.0), flat(32 * 32, 0.0);
  for (std::size_t i = 0; i < flat.size(); ++i) {
    flat[i] = spot[i] = 0.01 * static_cast<double>(i % 7);
  }
  for (std::size_t y = 4; y < 9; ++y) {
    for (std::size_t x = 4; x < 9; ++x) spot[y * 32 + x] += 1.0;
  }
  const Tensor a = backbone(Tensor::FromVector({32, 32, 1}, spot));
  const Tensor b = backbone(Tensor::FromVector({32, 32, 1}, flat));
  double near = 0;
  for (std::size_t c = 0; c < 8; ++c) near += std::abs(a[c] - b[c]);
  EXPECT_GT(near, 1e-3);
}

TEST(BackboneTest, GradientsMatchFiniteDifferences) {
  ParamStore store;
  std::mt19937_64 rng(3);
  Backbone backbone(store, "bb", 8, rng);
  const Tensor image = RandomTensor({16, 16, 1}, rng);
  const Tensor probe = RandomTensor({2, 2, 8}, rng);
  std::vector<Tensor> params;
  for (std::size_t i = 0; i < store.size(); ++i) params.push_back(store.at(i));
  auto loss = [&] { return ops::Sum(ops::Mul(backbone(image), probe)); };
  const auto result = testing::CheckGradients(loss, params, 1e-6);
  EXPECT_LE(result.max_rel_error, 1e-4) << result.worst;
}

TEST(RoiAlignTest, ConstantMapGivesConstant) {
  const Tensor features = Tensor::Full({4, 4, 3}, 2.5);
  const Tensor out = RoiAlign(features, {BBox::Make(3, 5, 20.5, 29)}, 5);
  EXPECT_EQ(out.shape(), (Shape{1, 25, 3}));
  for (double v : out.data()) EXPECT_NEAR(v, 2.5, 1e-12);
}

TEST(RoiAlignTest, AlignedBoxReturnsCells) {
  std::mt19937_64 rng(4);
  const Tensor features = RandomTensor({4, 4, 2}, rng);
  // Cells (1..2, 1..2) span pixels [8, 24); sample centers land on cell
  // centers.
  const Tensor out = RoiAlign(features, {BBox::Make(8, 8, 24, 24)}, 2);
  for (std::size_t sy = 0; sy < 2; ++sy) {
    for (std::size_t sx = 0; sx < 2; ++sx) {
      for (std::size_t c = 0; c < 2; ++c) {
        EXPECT_NEAR(out[(sy * 2 + sx) * 2 + c],
                    features[((1 + sy) * 4 + 1 + sx) * 2 + c], 1e-12);
      }
    }
  }
}

TEST(RoiAlignTest, HandBilinear) {
  // Values a b / c d with one channel.
  const Tensor features = Tensor::FromVector({2, 2, 1}, {1, 2, 3, 5});
  // One sample at the box center (7, 9): u = 7/8 - 0.5 = 0.375,
  // v = 9/8 - 0.5 = 0.625.
  const Tensor out = RoiAlign(features, {BBox::Make(6, 8, 8, 10)}, 1);
  const double u = 0.375, v = 0.625;
  const double expected = (1 - v) * ((1 - u) * 1 + u * 2) + v * ((1 - u) * 3 + u * 5);
  EXPECT_NEAR(out[0], expected, 1e-12);
  // Samples outside the map clamp to the border.
  EXPECT_NEAR(RoiAlign(features, {BBox::Make(-10, -10, -8, -8)}, 1)[0], 1.0, 1e-12);
}

TEST(RoiAlignTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  Tensor features = RandomTensor({3, 4, 2}, rng, 1.0, true);
  const Tensor probe = RandomTensor({2, 9, 2}, rng);
  const std::vector<BBox> boxes = {BBox::Make(1, 2, 20, 17), BBox::Make(9.5, 0.5, 30, 23)};
  auto loss = [&] { return ops::Sum(ops::Mul(RoiAlign(features, boxes, 3), probe)); };
  const auto result = testing::CheckGradients(loss, {features});
  EXPECT_LE(result.max_rel_error, 1e-6) << result.worst;
}

class CrossViewTest : public ::testing::Test {
 protected:
  ParamStore store_;
  std::mt19937_64 rng_{6};
};

TEST_F(CrossViewTest, SwappingInputsSwapsOutputs) {
  CrossViewAttention cross(store_, "x", 8, 2, rng_);
  const Tensor a = RandomTensor({4, 8}, rng_), b = RandomTensor({4, 8}, rng_);
  const auto [ab_cc, ab_mlo] = cross(a, b, 0.0, nullptr);
  const auto [ba_cc, ba_mlo] = cross(b, a, 0.0, nullptr);
  for (std::size_t i = 0; i < ab_cc.numel(); ++i) {
    EXPECT_DOUBLE_EQ(ab_cc[i], ba_mlo[i]);
    EXPECT_DOUBLE_EQ(ab_mlo[i], ba_cc[i]);
  }
  EXPECT_THROW(cross(a, RandomTensor({3, 8}, rng_), 0.0, nullptr), ShapeError);
}

TEST_F(CrossViewTest, PermutingMloLeavesCcUnchanged) {
  CrossViewAttention cross(store_, "x", 8, 2, rng_);
  const Tensor cc = RandomTensor({3, 8}, rng_);
  const Tensor mlo = RandomTensor({3, 8}, rng_);
  std::vector<double> permuted;
  for (std::size_t r : {2, 0, 1}) {
    permuted.insert(permuted.end(), mlo.data().begin() + r * 8, mlo.data().begin() + r * 8 + 8);
  }
  const Tensor out = cross(cc, mlo, 0.0, nullptr).first;
  const Tensor out_p = cross(cc, Tensor::FromVector({3, 8}, permuted), 0.0, nullptr).first;
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out[i], out_p[i], 1e-12);
}

TEST_F(CrossViewTest, HandComputedTwoDimensional) {
  CrossViewAttention cross(store_, "x", 2, 1, rng_);
  auto& mha = cross.attention();
  for (Dense* d : {&mha.query_proj(), &mha.key_proj(), &mha.value_proj(), &mha.output_proj()}) {
    auto w = d->weight().mutable_data();
    w[0] = 1, w[1] = 0, w[2] = 0, w[3] = 1;
    for (double& b : d->bias().mutable_data()) b = 0;
  }
  const Tensor cc = Tensor::FromVector({2, 2}, {1, 0, 1, 0});
  const Tensor mlo = Tensor::FromVector({2, 2}, {0, 1, 1, 1});
  const Tensor out = cross(cc, mlo, 0.0, nullptr).first;
  // Scores q.k / sqrt(2) = (0, 1/sqrt2); attended value (w1, 1).
  const double e = std::exp(1 / std::sqrt(2.0));
  const double w1 = e / (1 + e);
  const double r0 = 1 + w1, r1 = 1;
  const double mean = 0.5 * (r0 + r1);
  const double var = 0.25 * (r0 - r1) * (r0 - r1);
  EXPECT_NEAR(out[0], (r0 - mean) / std::sqrt(var + 1e-5), 1e-12);
  EXPECT_NEAR(out[1], (r1 - mean) / std::sqrt(var + 1e-5), 1e-12);
}

TEST(DynamicConvTest, ZeroProposalTracesToProjectionBias) {
  ParamStore store;
  std::mt19937_64 rng(7);
  DynamicConv dc(store, "dc", 8, 4, 9, rng);
  for (double& b : dc.generator().bias().mutable_data()) b = 0;
  const Tensor out = dc(Tensor::Zeros({2, 8}), RandomTensor({2, 9, 8}, rng));
  // Projection input is zero, so each row is relu(LN(projection bias)).
  const auto bias = dc.projection().bias().data();
  const double mean = std::accumulate(bias.begin(), bias.end(), 0.0) / 8;
  double var = 0;
  for (double b : bias) var += (b - mean) * (b - mean) / 8;
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 8; ++c) {
      const double expected = std::max(0.0, (bias[c] - mean) / std::sqrt(var + 1e-5));
      EXPECT_NEAR(out[r * 8 + c], expected, 1e-12);
    }
  }
}

TEST(DynamicConvTest, OutputShapeIndependentOfRoiSize) {
  std::mt19937_64 rng(8);
  for (std::size_t s : {1, 3, 7}) {
    ParamStore store;
    DynamicConv dc(store, "dc", 8, 2, s * s, rng);
    EXPECT_EQ(dc(RandomTensor({5, 8}, rng), RandomTensor({5, s * s, 8}, rng)).shape(),
              (Shape{5, 8}));
  }
}

TEST(DynamicConvTest, GradientsMatchFiniteDifferences) {
  ParamStore store;
  std::mt19937_64 rng(9);
  DynamicConv dc(store, "dc", 4, 2, 4, rng);
  Tensor proposals = RandomTensor({2, 4}, rng, 1.0, true);
  Tensor rois = RandomTensor({2, 4, 4}, rng, 1.0, true);
  const Tensor probe = RandomTensor({2, 4}, rng);
  auto loss = [&] { return ops::Sum(ops::Mul(dc(proposals, rois), probe)); };
  std::vector<Tensor> inputs = {proposals, rois};
  for (std::size_t i = 0; i < store.size(); ++i) inputs.push_back(store.at(i));
  const auto result = testing::CheckGradients(loss, inputs);
  EXPECT_LE(result.max_rel_error, 1e-4) << result.worst;
}

TEST(DualHeadTest, ZeroMalignancyPreactivation) {
  ParamStore store;
  std::mt19937_64 rng(10);
  DualHead head(store, "h", 6, rng);
  for (double& w : head.malignancy().weight().mutable_data()) w = 0;
  head.malignancy().bias().mutable_data()[0] = 0;
  const auto [o, m] = head(RandomTensor({4, 6}, rng));
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_NEAR(m[k], o[k] - std::log(2.0), 1e-12);
    EXPECT_LT(ops::SigmoidValue(m[k]), ops::SigmoidValue(o[k]));
  }
}

TEST(DualHeadTest, CouplingGradient) {
  ParamStore store;
  std::mt19937_64 rng(11);
  DualHead head(store, "h", 5, rng);
  const Tensor h = RandomTensor({3, 5}, rng);
  auto loss = [&] { return ops::Sum(head(h).second); };
  const auto result = testing::CheckGradients(
      loss, {head.malignancy().weight(), head.malignancy().bias(),
             head.objectness().weight(), head.objectness().bias()});
  EXPECT_LE(result.max_rel_error, 1e-6) << result.worst;
  // d(sum m)/dW_m[i] = -sum_k sigmoid(z_k) h[k, i].
  store.ZeroGrad();
  Backward(loss());
  const Tensor z = head.malignancy()(h);
  for (std::size_t i = 0; i < 5; ++i) {
    double expected = 0;
    for (std::size_t k = 0; k < 3; ++k) expected -= ops::SigmoidValue(z[k]) * h[k * 5 + i];
    EXPECT_NEAR(head.malignancy().weight().grad()[i], expected, 1e-12);
  }
}

TEST(DualHeadTest, ObjectnessShiftMovesMalignancyEqually) {
  ParamStore store;
  std::mt19937_64 rng(12);
  DualHead head(store, "h", 4, rng);
  const Tensor h = RandomTensor({5, 4}, rng);
  const auto [o, m] = head(h);
  head.objectness().bias().mutable_data()[0] += 0.75;
  const auto [o2, m2] = head(h);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_NEAR(o2[k] - o[k], 0.75, 1e-12);
    EXPECT_NEAR(m2[k] - m[k], 0.75, 1e-12);
  }
}

TEST(MilPoolTest, NoisyOrIdentities) {
  EXPECT_EQ(NoisyOr(Tensor::FromVector({3}, {0, 0, 0})).item(), 0.0);
  EXPECT_EQ(NoisyOr(Tensor::FromVector({3}, {0.2, 1, 0.4})).item(), 1.0);
  EXPECT_NEAR(NoisyOr(Tensor::FromVector({2}, {0.5, 0.5})).item(), 0.75, 1e-12);
  EXPECT_THROW(NoisyOr(Tensor::Zeros({2, 2})), ShapeError);
}

TEST(MilPoolTest, OrderingAndBounds) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> len(1, 12);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> p(static_cast<std::size_t>(len(rng)));
    for (double& v : p) v = u(rng);
    const Tensor probs = Tensor::FromVector({p.size()}, p);
    const double nor = MilPool(probs, MilScheme::kNoisyOr).item();
    const double mx = MilPool(probs, MilScheme::kMax).item();
    const double mean = MilPool(probs, MilScheme::kMean).item();
    EXPECT_GE(nor, mx - 1e-15);
    EXPECT_GE(mx, mean - 1e-15);
    EXPECT_LE(nor, 1.0);
    EXPECT_GE(mean, 0.0);
  }
  EXPECT_NEAR(MilPool(Tensor::FromVector({1}, {0.3}), MilScheme::kGap, Tensor::Scalar(0)).item(),
              0.5, 1e-15);
  EXPECT_THROW(MilPool(Tensor::FromVector({1}, {0.3}), MilScheme::kGap), ConfigError);
}

TEST(MilPoolTest, MonotoneInEachProbability) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(0, 0.9);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> p(5);
    for (double& v : p) v = u(rng);
    for (auto scheme : {MilScheme::kNoisyOr, MilScheme::kMax, MilScheme::kMean}) {
      const double base = MilPool(Tensor::FromVector({5}, p), scheme).item();
      auto q = p;
      q[static_cast<std::size_t>(t % 5)] += 0.1;
      EXPECT_GE(MilPool(Tensor::FromVector({5}, q), scheme).item(), base);
    }
  }
}

TEST(MilPoolTest, NoisyOrGradient) {
  Tensor p = Tensor::FromVector({4}, {0.1, 0.7, 0.3, 0.95}, true);
  const auto result = testing::CheckGradients([&] { return NoisyOr(p); }, {p});
  EXPECT_LE(result.max_rel_error, 1e-7) << result.worst;
}

TEST(ScoreTest, BreastAndExam) {
  EXPECT_DOUBLE_EQ(BreastScore(0.3, 0.3), 0.3);
  EXPECT_DOUBLE_EQ(BreastScore(0.4, 0.8), 0.6);
  EXPECT_DOUBLE_EQ(ExamScore(0.2, 0.9), 0.9);
}

class ForwardTest : public ::testing::Test {
 protected:
  ModelConfig config_ = [] {
    ModelConfig c;
    c.num_proposals = 6;
    c.dim = 16;
    c.heads = 4;
    c.roi_size = 3;
    c.dynamic_dim = 4;
    c.init_seed = 5;
    return c;
  }();
  synth::Image cc_ = RandomImage(32, 32, 1);
  synth::Image mlo_ = RandomImage(32, 32, 2);
};

TEST_F(ForwardTest, ShapeContractAndCoupling) {
  Model model(config_);
  const BreastForward f = model.Forward(cc_, mlo_);
  for (const ViewForward* v : {&f.cc, &f.mlo}) {
    ASSERT_EQ(v->stages.size(), kStages);
    for (const HeadOutput& head : v->stages) {
      EXPECT_EQ(head.boxes.shape(), (Shape{6, 4}));
      EXPECT_EQ(head.objectness.shape(), (Shape{6}));
      for (std::size_t k = 0; k < 6; ++k) EXPECT_LT(head.malignancy[k], head.objectness[k]);
      for (const BBox& b : head.ClippedBoxes(32, 32)) {
        EXPECT_NO_THROW(BBox::Make(b.x1, b.y1, b.x2, b.y2));
        EXPECT_GE(b.x1, 0);
        EXPECT_LE(b.y2, 32);
      }
    }
    EXPECT_GT(v->image_score.item(), 0.0);
    EXPECT_LT(v->image_score.item(), 1.0);
  }
  EXPECT_DOUBLE_EQ(f.breast_score.item(),
                   BreastScore(f.cc.image_score.item(), f.mlo.image_score.item()));
}

TEST_F(ForwardTest, DeterministicAtZeroDropout) {
  Model a(config_), b(config_);
  const BreastForward fa = a.Forward(cc_, mlo_), fb = b.Forward(cc_, mlo_);
  for (std::size_t s = 0; s < kStages; ++s) {
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_EQ(fa.mlo.stages[s].malignancy[i], fb.mlo.stages[s].malignancy[i]);
    }
  }
}

TEST_F(ForwardTest, ZeroedCrossProjectionDecouplesViews) {
  // The cross-view output projection starts at zero, so a fresh model keeps
  // the views independent.
  Model model(config_);
  for (auto& stage : model.stages()) {
    auto& out = stage.cross_view.attention().output_proj();
    for (double w : out.weight().data()) EXPECT_EQ(w, 0.0);
  }
  const BreastForward a = model.Forward(cc_, mlo_);
  const BreastForward b = model.Forward(cc_, RandomImage(32, 32, 99));
  for (std::size_t s = 0; s < kStages; ++s) {
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_EQ(a.cc.stages[s].objectness[i], b.cc.stages[s].objectness[i]);
      EXPECT_EQ(a.cc.stages[s].malignancy[i], b.cc.stages[s].malignancy[i]);
    }
  }
  // Once the projection is nonzero the MLO image reaches CC.
  std::mt19937_64 rng(12);
  std::normal_distribution<double> normal(0.0, 0.3);
  for (auto& stage : model.stages()) {
    for (double& w : stage.cross_view.attention().output_proj().weight().mutable_data()) {
      w = normal(rng);
    }
  }
  const BreastForward c = model.Forward(cc_, mlo_);
  const BreastForward d = model.Forward(cc_, RandomImage(32, 32, 99));
  EXPECT_NE(c.cc.stages.back().objectness[0], d.cc.stages.back().objectness[0]);
}

TEST_F(ForwardTest, SingleViewModeIgnoresOtherView) {
  Model model(config_);
  ForwardOptions options;
  options.multi_view = false;
  const BreastForward a = model.Forward(cc_, mlo_, options);
  const BreastForward b = model.Forward(cc_, RandomImage(32, 32, 7), options);
  EXPECT_EQ(a.cc.image_score.item(), b.cc.image_score.item());
}

TEST_F(ForwardTest, AllMilSchemesProduceProbabilities) {
  for (auto scheme : {MilScheme::kNoisyOr, MilScheme::kMax, MilScheme::kMean, MilScheme::kGap}) {
    ModelConfig c = config_;
    c.mil_scheme = scheme;
    Model model(c);
    ForwardOptions options;
    options.all_stage_scores = true;
    const BreastForward f = model.Forward(cc_, mlo_, options);
    EXPECT_EQ(f.cc.stage_image_scores.size(), kStages);
    EXPECT_GE(f.breast_score.item(), 0.0);
    EXPECT_LE(f.breast_score.item(), 1.0);
  }
}

TEST_F(ForwardTest, DropoutChangesOutputOnlyWithRng) {
  ModelConfig c = config_;
  c.dropout = 0.3;
  Model model(c);
  std::mt19937_64 rng(1);
  ForwardOptions train;
  train.dropout_rng = &rng;
  const double eval1 = model.Forward(cc_, mlo_).breast_score.item();
  const double eval2 = model.Forward(cc_, mlo_).breast_score.item();
  EXPECT_EQ(eval1, eval2);
  EXPECT_NE(model.Forward(cc_, mlo_, train).breast_score.item(), eval1);
}

TEST(ModelTest, MicroForwardGradientThroughScores) {
  Model model(Micro());
  const synth::Image cc = RandomImage(16, 16, 3), mlo = RandomImage(16, 16, 4);
  std::vector<std::vector<BBox>> crops;
  auto loss = [&] {
    ForwardOptions options;
    options.crops = &crops;
    options.replay_crops = !crops.empty();
    const BreastForward f = model.Forward(cc, mlo, options);
    Tensor total = f.breast_score;
    for (const auto* v : {&f.cc, &f.mlo}) {
      for (const auto& head : v->stages) {
        total = ops::Add(total, ops::Scale(ops::Sum(head.boxes), 1e-3));
        total = ops::Add(total, ops::Mean(head.objectness));
      }
    }
    return total;
  };
  std::vector<Tensor> params;
  for (std::size_t i = 0; i < model.params().size(); ++i) params.push_back(model.params().at(i));
  const auto result = testing::CheckGradients(loss, params);
  EXPECT_LE(result.max_rel_error, 1e-4) << result.worst;
}

}  // namespace
}  // namespace mnm::model
