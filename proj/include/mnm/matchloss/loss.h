#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "mnm/matchloss/hungarian.h"
#include "mnm/model/model.h"
#include "mnm/numerics/tensor.h"
#include "mnm/synthdata/dataset.h"

namespace mnm::loss {

struct LossConfig {
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double giou_weight = 2.0;
  double l1_weight = 5.0;
  double image_weight = 0.5;
  double breast_weight = 0.5;
  // Component flags.
  bool dual_heads = true;
  bool mil = true;
  // Match each stage against its own predictions instead of reusing the
  // final-stage assignment.
  bool rematch_per_stage = false;
  // Malignancy focal loss only on proposals matched to a finding.
  bool malignancy_matched_only = false;
  // Image/breast losses on every stage rather than the last.
  bool mil_deep_supervision = false;

  bool operator==(const LossConfig&) const = default;
};

// Per-entry focal loss, stable for large |logit|:
//   -alpha_t (1 - p_t)^gamma log p_t
double FocalLoss(double logit, bool target, double alpha, double gamma);
// Matching cost of labelling a proposal positive: positive minus negative
// focal terms.
double FocalMatchCost(double logit, double alpha, double gamma);

// Sum over entries of FocalLoss(logits[i], targets[i]); logits is [N].
// Entries with include[i] == false are skipped.
Tensor FocalLossSum(const Tensor& logits, const std::vector<bool>& targets,
                    double alpha, double gamma,
                    const std::vector<bool>* include = nullptr);
// -(y log s + (1 - y) log(1 - s)) on a scalar probability, clamped to
// [eps, 1 - eps]. The gradient is evaluated at the clamped value.
Tensor BinaryCrossEntropy(const Tensor& probability, bool label,
                          double eps = 1e-7);

// Ground truths of one view, in finding order.
struct ViewTargets {
  std::vector<BBox> boxes;
  std::vector<bool> malignant;
  std::size_t size() const { return boxes.size(); }
};
ViewTargets TargetsFor(const synth::BreastSample& breast, synth::View view);

// cost(g, k) = focal cost on o_k [+ focal cost on m_k if g is malignant and
// dual heads are on] + l1_weight * normalized L1 + giou_weight * (1 - giou).
Eigen::MatrixXd MatchCost(const model::HeadOutput& head, const ViewTargets& gts,
                          double image_width, double image_height,
                          const LossConfig& config);

struct LesionTerms {
  Tensor malignant, objectness, giou, l1;  // scalars, unweighted
};

// One assignment per stage: the final stage's assignment repeated, or each
// stage matched on its own predictions when rematch_per_stage is set.
std::vector<MatchResult> MatchStages(const std::vector<model::HeadOutput>& stages,
                                     const ViewTargets& gts, double image_width,
                                     double image_height, const LossConfig& config);

// Summed over stages, each normalized by max(G, 1).
LesionTerms LesionLoss(const std::vector<model::HeadOutput>& stages,
                       const ViewTargets& gts,
                       const std::vector<MatchResult>& matches,
                       double image_width, double image_height,
                       const LossConfig& config);

struct LossBreakdown {
  double malignant = 0, objectness = 0, giou = 0, l1 = 0, image = 0, breast = 0;
  double total = 0;

  // total recomputed from the components.
  double Combine(bool annotated, const LossConfig& config) const;
};

struct BreastLoss {
  Tensor total;  // scalar, differentiable
  LossBreakdown breakdown;
  // [view][stage] assignments, CC first; empty when the breast is
  // unannotated.
  std::vector<std::vector<MatchResult>> matches;
};

// Matches are computed from the forward unless `fixed_matches` is supplied
// (gradient checks hold the discrete assignment fixed).
BreastLoss TotalLoss(
    const model::BreastForward& forward, const synth::BreastSample& breast,
    const LossConfig& config,
    const std::vector<std::vector<MatchResult>>* fixed_matches = nullptr);

}  // namespace mnm::loss
