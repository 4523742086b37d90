#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "mnm/common/error.h"
#include "mnm/synthdata/generator.h"
#include "mnm/trainer/trainer.h"

namespace mnm::train {
namespace {

namespace fs = std::filesystem;

model::ModelConfig Tiny() {
  model::ModelConfig c;
  c.num_proposals = 4;
  c.dim = 8;
  c.heads = 2;
  c.roi_size = 3;
  c.dynamic_dim = 4;
  c.init_seed = 3;
  return c;
}

synth::Dataset TinyData(std::size_t malignant = 3, std::size_t benign = 1,
                        std::size_t negative = 4) {
  synth::DatasetConfig dc;
  dc.malignant = malignant;
  dc.benign = benign;
  dc.negative = negative;
  dc.annotated_malignant = 0.67;
  dc.annotated_benign = 1.0;
  dc.image_height = dc.image_width = 32;
  dc.seed = 9;
  return synth::GenerateDataset(dc);
}

TrainConfig Quick(std::size_t iterations) {
  TrainConfig t;
  t.iterations = iterations;
  t.base_lr = 1e-3;
  t.batch_breasts = 2;
  t.seed = 4;
  return t;
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::vector<unsigned char> Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(LrTest, StepSchedule) {
  TrainConfig c;
  EXPECT_EQ(LrAt(0, c), 5e-5);
  EXPECT_NEAR(LrAt(1200, c), 5e-6, 1e-20);  // 0.8 of 1500
  EXPECT_NEAR(LrAt(1425, c), 5e-7, 1e-20);  // 0.95 of 1500
  EXPECT_EQ(LrAt(1124, c), 5e-5);
  EXPECT_NEAR(LrAt(1125, c), 5e-6, 1e-20);
}

TEST(AdamWTest, ZeroGradientZeroDecayIsIdentity) {
  ParamStore store;
  Tensor p = store.Add("p", Tensor::FromVector({3}, {1, -2, 3}, true));
  AdamW opt(store);
  p.mutable_grad();
  opt.Step(store, 0.1, 0.0);
  EXPECT_EQ(std::vector<double>(p.data().begin(), p.data().end()), (std::vector<double>{1, -2, 3}));
}

TEST(AdamWTest, FirstStepHandComputed) {
  ParamStore store;
  Tensor p = store.Add("p", Tensor::FromVector({1}, {2.0}, true));
  AdamW opt(store);
  p.mutable_grad()[0] = 0.5;
  const double lr = 1e-3, wd = 1e-2;
  opt.Step(store, lr, wd);
  // m = 0.05, v = 2.5e-4; bias corrected 0.5 and 0.25.
  const double expected = 2.0 - lr * (0.5 / (0.5 + 1e-8) + wd * 2.0);
  EXPECT_NEAR(p[0], expected, 1e-15);
  EXPECT_NEAR(p[0], 2.0 - lr - lr * wd * 2.0, 1e-10);
}

TEST(AdamWTest, DecayOnly) {
  ParamStore store;
  Tensor p = store.Add("p", Tensor::FromVector({2}, {4.0, -1.0}, true));
  AdamW opt(store);
  opt.Step(store, 0.01, 0.5);
  EXPECT_NEAR(p[0], 4.0 * (1 - 0.01 * 0.5), 1e-15);
  EXPECT_NEAR(p[1], -1.0 * (1 - 0.01 * 0.5), 1e-15);
}

TEST(AdamWTest, StateRoundTrip) {
  ParamStore store;
  Tensor p = store.Add("p", Tensor::FromVector({2}, {1.0, 2.0}, true));
  AdamW a(store);
  p.mutable_grad()[0] = 0.3;
  a.Step(store, 0.1, 0);
  AdamW b(store);
  b.Deserialize(a.Serialize(), a.steps());
  EXPECT_EQ(b.Serialize(), a.Serialize());
  EXPECT_EQ(b.steps(), 1u);
  EXPECT_THROW(b.Deserialize({1, 2, 3}, 1), FormatError);
}

TEST(GradTest, NormAndScale) {
  ParamStore store;
  Tensor a = store.Add("a", Tensor::FromVector({2}, {0, 0}, true));
  Tensor b = store.Add("b", Tensor::FromVector({1}, {0}, true));
  a.mutable_grad()[0] = 3;
  b.mutable_grad()[0] = 4;
  EXPECT_EQ(GradNorm(store), 5.0);
  ScaleGrads(store, 0.2);
  EXPECT_NEAR(GradNorm(store), 1.0, 1e-15);
}

TEST(SamplerTest, RatioAndDeterminism) {
  const synth::Dataset data = TinyData();
  std::mt19937_64 rng(1);
  const auto batch = SampleBatch(data, 4, rng);
  ASSERT_EQ(batch.indices.size(), 4u);
  EXPECT_TRUE(data.breasts[batch.indices[0]].annotated);
  EXPECT_TRUE(data.breasts[batch.indices[1]].annotated);
  EXPECT_FALSE(data.breasts[batch.indices[2]].annotated);
  EXPECT_FALSE(data.breasts[batch.indices[3]].annotated);

  std::mt19937_64 a(5), b(5);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(SampleBatch(data, 4, a).indices, SampleBatch(data, 4, b).indices);

  std::mt19937_64 counter(6);
  std::size_t annotated = 0, total = 0;
  while (total < 10000) {
    for (std::size_t i : SampleBatch(data, 4, counter).indices) {
      annotated += data.breasts[i].annotated;
      ++total;
    }
  }
  EXPECT_EQ(annotated * 2, total);
}

TEST(SamplerTest, FallbackAndAnnotatedOnly) {
  synth::Dataset data = TinyData();
  std::mt19937_64 rng(2);
  for (std::size_t i : SampleBatch(data, 6, rng, true).indices) {
    EXPECT_TRUE(data.breasts[i].annotated);
  }
  for (auto& b : data.breasts) b.annotated = false;
  const auto r = SampleBatch(data, 4, rng);
  EXPECT_TRUE(r.fell_back);
  EXPECT_EQ(r.indices.size(), 4u);
  EXPECT_THROW(SampleBatch(data, 4, rng, true), ConfigError);
}

TEST(TrainConfigTest, JsonAndOverrides) {
  TrainConfig c = Quick(7);
  c.mil = false;
  EXPECT_EQ(TrainConfigFromJson(ToJson(c)), c);
  EXPECT_THROW(TrainConfigFromJson({{"bogus", 1}}), ConfigError);
  EXPECT_THROW(TrainConfigFromJson({{"iterations", -3}}), ConfigError);
  EXPECT_THROW(TrainConfigFromJson({{"iterations", 2.5}}), ConfigError);
  EXPECT_THROW(TrainConfigFromJson({{"mil", 1}}), ConfigError);
  EXPECT_THROW(TrainConfigFromJson({{"lr_drop_fractions", {0.9, 0.5}}}), ConfigError);
  EXPECT_THROW(TrainConfigFromJson({{"lr_drop_fractions", {0.5, 1.0}}}), ConfigError);
  auto j = ToJson(TrainConfig{});
  ApplyOverride(j, "mil=false");
  ApplyOverride(j, "base_lr=0.001");
  EXPECT_FALSE(TrainConfigFromJson(j).mil);
  EXPECT_EQ(TrainConfigFromJson(j).base_lr, 0.001);
  EXPECT_THROW(ApplyOverride(j, "nope=1"), ConfigError);
  EXPECT_THROW(ApplyOverride(j, "mil"), ConfigError);
}

TEST(FlipTest, InvolutionAndBoxes) {
  const synth::Dataset data = TinyData();
  const auto& b = data.breasts.front();
  EXPECT_EQ(FlipBreast(FlipBreast(b)), b);
  const auto f = FlipBreast(b);
  for (std::size_t i = 0; i < b.findings.size(); ++i) {
    EXPECT_DOUBLE_EQ(f.findings[i].box_cc.x1, 32 - b.findings[i].box_cc.x2);
  }
  EXPECT_EQ(f.image_cc.at(3, 0), b.image_cc.at(3, 31));
}

TEST(TrainerTest, RejectsIncompatibleData) {
  synth::Dataset data = TinyData();
  TrainConfig c = Quick(2);
  c.mil = false;
  for (auto& b : data.breasts) b.annotated = false;
  EXPECT_THROW(Trainer(Tiny(), c, data), ConfigError);
  EXPECT_THROW(Trainer(Tiny(), Quick(2), synth::Dataset{}), ConfigError);
}

TEST(TrainerTest, DeterministicCheckpoints) {
  const synth::Dataset data = TinyData();
  TempDir dir("mnm_trainer_det");
  for (const char* name : {"a", "b"}) {
    Trainer t(Tiny(), Quick(4), data);
    t.Run();
    t.SaveCheckpoint(dir.path() / name);
  }
  for (const char* file : {"params.bin", "params.json", "optimizer.bin", "state.json"}) {
    EXPECT_EQ(Slurp(dir.path() / "a" / file), Slurp(dir.path() / "b" / file)) << file;
  }
}

TEST(TrainerTest, ResumeMatchesUninterruptedRun) {
  const synth::Dataset data = TinyData();
  TempDir dir("mnm_trainer_resume");
  Trainer full(Tiny(), Quick(6), data);
  full.Run();
  full.SaveCheckpoint(dir.path() / "full");

  Trainer half(Tiny(), Quick(6), data);
  for (int i = 0; i < 3; ++i) half.Step();
  half.SaveCheckpoint(dir.path() / "half");
  auto resumed = Trainer::Resume(dir.path() / "half", data);
  EXPECT_EQ(resumed->iteration(), 3u);
  resumed->Run();
  resumed->SaveCheckpoint(dir.path() / "resumed");
  for (const char* file : {"params.bin", "optimizer.bin", "state.json"}) {
    EXPECT_EQ(Slurp(dir.path() / "full" / file), Slurp(dir.path() / "resumed" / file)) << file;
  }
}

TEST(TrainerTest, FlagsOffNeverUseMalignancyOrBags) {
  const synth::Dataset data = TinyData();
  TrainConfig c = Quick(3);
  c.dual_heads = c.multi_view = c.mil = false;
  Trainer t(Tiny(), c, data);
  for (int i = 0; i < 3; ++i) {
    const IterationLog log = t.Step();
    EXPECT_EQ(log.mean.malignant, 0.0);
    EXPECT_EQ(log.mean.image, 0.0);
    EXPECT_EQ(log.mean.breast, 0.0);
    EXPECT_GT(log.mean.objectness, 0.0);
  }
}

TEST(TrainerTest, NonFiniteStepsAreSkippedThenAbort) {
  const synth::Dataset data = TinyData();
  TrainConfig c = Quick(50);
  c.max_consecutive_skips = 3;
  Trainer t(Tiny(), c, data);
  t.model().proposal_features().mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_TRUE(t.Step().skipped);
  EXPECT_TRUE(t.Step().skipped);
  EXPECT_EQ(t.optimizer().steps(), 0u);
  EXPECT_THROW(t.Step(), NumericError);
}

TEST(TrainerTest, LossLogIsFiniteAndWritten) {
  const synth::Dataset data = TinyData();
  Trainer t(Tiny(), Quick(5), data);
  std::vector<IterationLog> log;
  t.Run([&](const IterationLog& l) { log.push_back(l); });
  ASSERT_EQ(log.size(), 5u);
  for (const auto& l : log) EXPECT_TRUE(std::isfinite(l.mean.total));
  TempDir dir("mnm_trainer_log");
  WriteLossCsv(dir.path() / "loss.csv", log);
  std::ifstream in(dir.path() / "loss.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "iteration,malignant,objectness,giou,l1,image,breast,total");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 5u);
}

TEST(CheckpointTest, MismatchAndMissing) {
  const synth::Dataset data = TinyData();
  TempDir dir("mnm_trainer_ckpt");
  Trainer t(Tiny(), Quick(1), data);
  t.Run();
  t.SaveCheckpoint(dir.path() / "c");
  model::ModelConfig other = Tiny();
  other.dim = 16;
  EXPECT_THROW(LoadCheckpoint(dir.path() / "c", &other), MismatchError);
  model::ModelConfig same = Tiny();
  EXPECT_EQ(LoadCheckpoint(dir.path() / "c", &same).iteration, 1u);
  EXPECT_THROW(LoadCheckpoint(dir.path() / "nothing"), IoError);
  // Parameters from a different architecture under this config.
  Trainer wide(other, Quick(1), data);
  wide.SaveCheckpoint(dir.path() / "wide");
  fs::copy_file(dir.path() / "wide" / "params.bin", dir.path() / "c" / "params.bin",
                fs::copy_options::overwrite_existing);
  fs::copy_file(dir.path() / "wide" / "params.json", dir.path() / "c" / "params.json",
                fs::copy_options::overwrite_existing);
  EXPECT_THROW(LoadCheckpoint(dir.path() / "c"), MismatchError);
}

TEST(PredictTest, DetectionsAndScores) {
  const synth::Dataset data = TinyData();
  model::Model m(Tiny());
  const auto in = Predict(m, data, {});
  EXPECT_EQ(in.all_images.size(), 2 * data.breasts.size());
  EXPECT_EQ(in.detections.size(), 4 * in.all_images.size());
  EXPECT_EQ(in.breast_scores.size(), data.breasts.size());
  EXPECT_EQ(in.exam_scores.size(), data.breasts.size() / 2);
  for (const auto& d : in.detections) {
    EXPECT_GE(d.score, 0.0);
    EXPECT_LE(d.score, 1.0);
    EXPECT_GE(d.box.x1, 0.0);
    EXPECT_LE(d.box.x2, 32.0);
  }
  std::size_t with_findings = 0;
  for (const auto& b : data.breasts) with_findings += !b.findings.empty();
  EXPECT_EQ(in.finding_images.size(), 2 * with_findings);
  const metrics::EvalReport r = metrics::Evaluate(in);
  EXPECT_TRUE(r.breast_auc.has_value());
}

// Small and fast. The 10% memorization bar at 64 px runs in the acceptance
// binary; at 32 px a lesion is under one feature cell and boxes stall sooner.
TEST(TrainerTest, HalvesLossOnEightBreasts) {
  const synth::Dataset data = TinyData(4, 2, 2);
  synth::Dataset annotated = data;
  for (auto& b : annotated.breasts) b.annotated = true;
  model::ModelConfig mc = Tiny();
  mc.dim = 16;
  mc.num_proposals = 6;
  TrainConfig c = Quick(300);
  c.batch_breasts = 4;
  c.base_lr = 3e-3;
  c.lr_drop_fractions = {};
  auto dataset_loss = [&](const model::Model& m) {
    NoGradGuard no_grad;
    double total = 0;
    for (const auto& b : annotated.breasts) {
      total += loss::TotalLoss(m.Forward(b.image_cc, b.image_mlo, ForwardOptionsFor(c)), b,
                               LossConfigFor(c))
                   .breakdown.total;
    }
    return total;
  };
  Trainer t(mc, c, annotated);
  const double initial = dataset_loss(t.model());
  t.Run();
  const double final_loss = dataset_loss(t.model());
  EXPECT_LT(final_loss, 0.5 * initial) << initial << " -> " << final_loss;
}

}  // namespace
}  // namespace mnm::train
