#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "mnm/geometry/bbox.h"
#include "mnm/model/config.h"
#include "mnm/numerics/layers.h"
#include "mnm/numerics/params.h"
#include "mnm/numerics/tensor.h"
#include "mnm/synthdata/dataset.h"

namespace mnm::model {

// Single-channel image as an [H, W, 1] constant tensor.
Tensor ImageTensor(const synth::Image& image);

// Three blocks of 3x3 stride-2 convolution, per-channel spatial
// normalization and ReLU.
// Channels grow 1 -> D/4 -> D/2 -> D.
class Backbone {
 public:
  Backbone() = default;
  Backbone(ParamStore& store, const std::string& prefix, std::size_t dim,
           std::mt19937_64& rng);

  // [H, W, 1] -> [H/8, W/8, D]. Throws ShapeError unless H and W are
  // divisible by 8.
  Tensor operator()(const Tensor& image) const;

  struct Block {
    Tensor weight;
  };
  std::vector<Block>& blocks() { return blocks_; }

 private:
  std::vector<Block> blocks_;
};

// Bilinear crops: for each box an S x S grid of samples at cell centers,
// mapped into feature coordinates u = x / stride - 0.5 and clamped to the
// map. features: [Hf, Wf, D] -> [N, S*S, D]. Boxes are constants.
Tensor RoiAlign(const Tensor& features, const std::vector<BBox>& boxes,
                std::size_t size, std::size_t stride = kFeatureStride);

// Shared attention module applied in both directions:
//   cc'  = LN(cc  + Dropout(MHA(cc, mlo, mlo)))
//   mlo' = LN(mlo + Dropout(MHA(mlo, cc, cc)))
class CrossViewAttention {
 public:
  CrossViewAttention() = default;
  CrossViewAttention(ParamStore& store, const std::string& prefix,
                     std::size_t dim, std::size_t heads, std::mt19937_64& rng);

  std::pair<Tensor, Tensor> operator()(const Tensor& cc, const Tensor& mlo,
                                       double dropout,
                                       std::mt19937_64* rng) const;

  MultiHeadAttention& attention() { return attention_; }

 private:
  MultiHeadAttention attention_;
  Norm norm_;
};

// Proposal-conditioned interaction with RoI features. Each proposal feature
// generates a [D, r] and an [r, D] matrix; RoI features pass through both
// (each followed by LN and ReLU), are flattened and projected back to D.
class DynamicConv {
 public:
  DynamicConv() = default;
  DynamicConv(ParamStore& store, const std::string& prefix, std::size_t dim,
              std::size_t bottleneck, std::size_t roi_cells,
              std::mt19937_64& rng);

  // proposals: [N, D]; rois: [N, S*S, D] -> [N, D]
  Tensor operator()(const Tensor& proposals, const Tensor& rois) const;

  Dense& generator() { return generator_; }
  Dense& projection() { return projection_; }

 private:
  std::size_t dim_ = 0;
  std::size_t bottleneck_ = 0;
  Dense generator_;
  Norm norm1_, norm2_;
  Dense projection_;
  Norm norm3_;
};

// Objectness o = W_o h + b_o; malignancy m = o - softplus(W_m h + b_m).
class DualHead {
 public:
  DualHead() = default;
  DualHead(ParamStore& store, const std::string& prefix, std::size_t dim,
           std::mt19937_64& rng);

  // h: [N, D] -> o, m: [N]
  std::pair<Tensor, Tensor> operator()(const Tensor& h) const;

  Dense& objectness() { return objectness_; }
  Dense& malignancy() { return malignancy_; }

 private:
  Dense objectness_;
  Dense malignancy_;
};

struct HeadOutput {
  Tensor boxes;        // [N, 4], differentiable w.r.t. this stage's deltas
  Tensor objectness;   // [N]
  Tensor malignancy;   // [N]
  Tensor features;     // [N, D]

  // Box values clipped to the image.
  std::vector<BBox> ClippedBoxes(double width, double height) const;
};

struct ViewForward {
  std::vector<HeadOutput> stages;
  Tensor image_score;  // scalar in [0, 1]
  // Per-stage image scores; only filled when requested.
  std::vector<Tensor> stage_image_scores;
};

struct BreastForward {
  ViewForward cc;
  ViewForward mlo;
  Tensor breast_score;  // mean of the two image scores

  const ViewForward& view(synth::View v) const {
    return v == synth::View::kCC ? cc : mlo;
  }
};

struct ForwardOptions {
  bool multi_view = true;
  // Off: the objectness logit doubles as the lesion score.
  bool dual_heads = true;
  // Compute image scores for every stage, not just the last.
  bool all_stage_scores = false;
  // Dropout source; null disables dropout regardless of config.
  std::mt19937_64* dropout_rng = nullptr;
  // Crop boxes are constants of the graph. When `crops` is set, the boxes
  // used at every (stage, view) are appended to it, or read back from it
  // when `replay_crops` is true. Gradient checks use this to hold the
  // detached inputs fixed. Index: 2 * stage + (0 for CC, 1 for MLO).
  std::vector<std::vector<BBox>>* crops = nullptr;
  bool replay_crops = false;
};

class Model {
 public:
  // Registers every parameter in `store_`; initialization depends only on
  // config.init_seed.
  explicit Model(const ModelConfig& config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  BreastForward Forward(const synth::Image& cc, const synth::Image& mlo,
                        const ForwardOptions& options = {}) const;

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  struct Stage {
    MultiHeadAttention self_attention;
    Norm self_norm;
    CrossViewAttention cross_view;
    DynamicConv dynamic_conv;
    Norm dynamic_norm;
    Dense ffn_in, ffn_out;
    Norm ffn_norm;
    DualHead dual_head;
    Dense regression_hidden;
    Norm regression_norm;
    Dense regression_out;
  };
  std::vector<Stage>& stages() { return stages_; }
  Backbone& backbone() { return backbone_; }
  Tensor& proposal_boxes() { return proposal_boxes_; }
  Tensor& proposal_features() { return proposal_features_; }

 private:
  // Runs one stage for one view up to (and excluding) cross-view attention.
  Tensor SelfAttend(const Stage& stage, const Tensor& h,
                    std::mt19937_64* rng) const;
  HeadOutput Finish(const Stage& stage, const Tensor& h, const Tensor& features,
                    const Tensor& anchors, const std::vector<BBox>& crop_boxes,
                    std::mt19937_64* rng) const;
  Tensor ImageScore(const HeadOutput& head, bool dual_heads) const;

  ModelConfig config_;
  ParamStore store_;
  Backbone backbone_;
  Tensor proposal_boxes_;     // [N, 4] normalized (cx, cy, w, h)
  Tensor proposal_features_;  // [N, D]
  std::vector<Stage> stages_;
  Dense gap_;                 // only used by the gap scheme
};

// Scalar pooling of per-proposal probabilities.
Tensor NoisyOr(const Tensor& probs);
// gap_logit is consulted only by the gap scheme.
Tensor MilPool(const Tensor& probs, MilScheme scheme,
               const Tensor& gap_logit = Tensor());

double BreastScore(double cc, double mlo);
double ExamScore(double left, double right);

}  // namespace mnm::model
