#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include <json.hpp>

#include "mnm/matchloss/loss.h"
#include "mnm/metrics/metrics.h"
#include "mnm/model/config.h"
#include "mnm/model/model.h"
#include "mnm/numerics/params.h"
#include "mnm/synthdata/dataset.h"

namespace mnm::train {

struct TrainConfig {
  std::size_t iterations = 1500;
  double base_lr = 5e-5;
  double weight_decay = 1e-4;
  std::size_t batch_breasts = 4;
  // LR is scaled by 0.1 after each fraction of `iterations`.
  std::vector<double> lr_drop_fractions = {6750.0 / 9000.0, 8250.0 / 9000.0};
  std::uint64_t seed = 0;
  bool dual_heads = true;
  bool multi_view = true;
  bool mil = true;
  double grad_clip = 1.0;  // global norm; 0 disables
  // Horizontal flip of both views and their boxes with probability 0.5.
  bool flip_augment = false;
  // Loss variants, all off by default.
  bool rematch_per_stage = false;
  bool malignancy_matched_only = false;
  bool mil_deep_supervision = false;
  // Training aborts after this many consecutive non-finite steps.
  std::size_t max_consecutive_skips = 10;

  // Throws ConfigError.
  void Validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::ordered_json ToJson(const TrainConfig& config);
// Unknown keys and wrongly typed values raise ConfigError; missing keys keep
// their defaults.
TrainConfig TrainConfigFromJson(const nlohmann::json& j);
// Applies "key=value" with the value parsed as JSON (bare words fall back to
// strings). Throws ConfigError for unknown keys.
void ApplyOverride(nlohmann::ordered_json& config_json, const std::string& assignment);

loss::LossConfig LossConfigFor(const TrainConfig& config);
model::ForwardOptions ForwardOptionsFor(const TrainConfig& config);

double LrAt(std::size_t iteration, const TrainConfig& config);

// Decoupled-weight-decay Adam over every tensor of a ParamStore.
class AdamW {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  explicit AdamW(const ParamStore& params);

  // Uses each parameter's current gradient; missing gradients count as zero.
  void Step(ParamStore& params, double lr, double weight_decay);

  std::size_t steps() const { return steps_; }
  // Little-endian float64: first moments then second moments, parameter
  // order.
  std::vector<unsigned char> Serialize() const;
  void Deserialize(const std::vector<unsigned char>& blob, std::size_t steps);

 private:
  std::vector<std::vector<double>> m_, v_;
  std::size_t steps_ = 0;
};

// Global L2 norm of all gradients; NaN propagates.
double GradNorm(const ParamStore& params);
void ScaleGrads(ParamStore& params, double factor);

// Indices into dataset.breasts: ceil(B/2) annotated and floor(B/2)
// unannotated, each drawn uniformly with replacement. An empty pool hands
// its share to the other one. With `annotated_only` every draw comes from
// the annotated pool.
struct SampleResult {
  std::vector<std::size_t> indices;
  bool fell_back = false;
};
SampleResult SampleBatch(const synth::Dataset& dataset, std::size_t batch,
                         std::mt19937_64& rng, bool annotated_only = false);

// Mirror of both views and every finding box.
synth::BreastSample FlipBreast(const synth::BreastSample& breast);

struct IterationLog {
  std::size_t iteration = 0;
  loss::LossBreakdown mean;  // batch mean
  double lr = 0;
  double grad_norm = 0;
  bool skipped = false;
};

class Trainer {
 public:
  Trainer(const model::ModelConfig& model_config, const TrainConfig& train_config,
          const synth::Dataset& train_set);
  // Resumes from a checkpoint directory; configs come from the checkpoint.
  // The dataset must be the one it was trained on.
  static std::unique_ptr<Trainer> Resume(const std::filesystem::path& checkpoint,
                                         const synth::Dataset& train_set);

  // Runs one iteration; throws NumericError once the skip budget is spent.
  IterationLog Step();
  // Steps until iteration() == config.iterations.
  void Run(const std::function<void(const IterationLog&)>& on_iteration = {});

  std::size_t iteration() const { return iteration_; }
  const model::Model& model() const { return *model_; }
  model::Model& model() { return *model_; }
  const TrainConfig& config() const { return config_; }
  const AdamW& optimizer() const { return optimizer_; }

  // Layout: params.bin + params.json (values), optimizer.bin (moments),
  // state.json (format, iteration, optimizer step count, configs).
  void SaveCheckpoint(const std::filesystem::path& dir) const;

 private:
  Trainer(std::unique_ptr<model::Model> model, const TrainConfig& config,
          const synth::Dataset& train_set);

  std::unique_ptr<model::Model> model_;
  TrainConfig config_;
  const synth::Dataset& data_;
  AdamW optimizer_;
  std::size_t iteration_ = 0;
  std::size_t consecutive_skips_ = 0;
};

inline constexpr const char* kCheckpointFormat = "mnm-ckpt-v1";

struct LoadedCheckpoint {
  model::ModelConfig model_config;
  TrainConfig train_config;
  std::size_t iteration = 0;
  std::unique_ptr<model::Model> model;
};
// Throws IoError/FormatError for unreadable checkpoints and MismatchError
// when `expected` is given and differs from the stored model config or the
// stored parameters do not fit it.
LoadedCheckpoint LoadCheckpoint(const std::filesystem::path& dir,
                                const model::ModelConfig* expected = nullptr);

// `iteration,malignant,objectness,giou,l1,image,breast,total`
void WriteLossCsv(const std::filesystem::path& path, const std::vector<IterationLog>& log);

// Inference over a dataset: final-stage boxes clipped to the image, scored by
// sigmoid(malignancy), or sigmoid(objectness) without dual heads. Image ids
// are <breast_id>_cc / _mlo. Exam score is the max over its breasts.
metrics::EvalInput Predict(const model::Model& model, const synth::Dataset& dataset,
                           const model::ForwardOptions& options);

}  // namespace mnm::train
