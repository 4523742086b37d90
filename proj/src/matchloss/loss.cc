#include "mnm/matchloss/loss.h"

#include <algorithm>
#include <cmath>

#include "mnm/common/error.h"
#include "mnm/geometry/box_ops.h"
#include "mnm/numerics/ops.h"

namespace mnm::loss {
namespace {

using ops::SigmoidValue;
using ops::SoftplusValue;

BBox RowBox(const Tensor& boxes, std::size_t k) {
  return BBox{boxes[k * 4], boxes[k * 4 + 1], boxes[k * 4 + 2], boxes[k * 4 + 3]};
}

double Normalizer(std::size_t gts) {
  return 1.0 / static_cast<double>(std::max<std::size_t>(gts, 1));
}

Tensor Zero() { return Tensor::Scalar(0.0); }

}  // namespace

double FocalLoss(double logit, bool target, double alpha, double gamma) {
  if (target) {
    // p_t = sigmoid(x), -log p_t = softplus(-x)
    return alpha * std::pow(SigmoidValue(-logit), gamma) * SoftplusValue(-logit);
  }
  return (1 - alpha) * std::pow(SigmoidValue(logit), gamma) * SoftplusValue(logit);
}

double FocalMatchCost(double logit, double alpha, double gamma) {
  return FocalLoss(logit, true, alpha, gamma) - FocalLoss(logit, false, alpha, gamma);
}

Tensor FocalLossSum(const Tensor& logits, const std::vector<bool>& targets,
                    double alpha, double gamma, const std::vector<bool>* include) {
  if (logits.rank() != 1 || logits.numel() != targets.size()) {
    throw ShapeError("focal loss: logits " + ShapeToString(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  std::vector<bool> mask = include != nullptr ? *include : std::vector<bool>(targets.size(), true);
  if (mask.size() != targets.size()) throw ShapeError("focal loss: mask size mismatch");
  double total = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (mask[i]) total += FocalLoss(logits[i], targets[i], alpha, gamma);
  }
  return MakeResult(
      {}, {total}, {logits},
      [targets, mask = std::move(mask), alpha, gamma](Node& self) {
        Node& x = *self.parents[0];
        auto& g = x.EnsureGrad();
        for (std::size_t i = 0; i < targets.size(); ++i) {
          if (!mask[i]) continue;
          const double v = x.value[i];
          const double p = SigmoidValue(v), q = SigmoidValue(-v);
          double d;
          if (targets[i]) {
            // d/dx alpha q^gamma softplus(-x)
            d = -alpha * std::pow(q, gamma) * (gamma * p * SoftplusValue(-v) + q);
          } else {
            d = (1 - alpha) * std::pow(p, gamma) * (gamma * q * SoftplusValue(v) + p);
          }
          g[i] += self.grad[0] * d;
        }
      },
      "focal_loss");
}

Tensor BinaryCrossEntropy(const Tensor& probability, bool label, double eps) {
  if (probability.numel() != 1) {
    throw ShapeError("bce expects a scalar, got " + ShapeToString(probability.shape()));
  }
  const double raw = probability[0];
  const double s = std::clamp(raw, eps, 1 - eps);
  const double value = label ? -std::log(s) : -std::log(1 - s);
  // Saturated scores keep the gradient evaluated at the clamp so a confident
  // wrong bag score can still be pulled back.
  return MakeResult(
      {}, {value}, {probability},
      [label, s](Node& self) {
        const double d = label ? -1 / s : 1 / (1 - s);
        self.parents[0]->EnsureGrad()[0] += self.grad[0] * d;
      },
      "bce");
}

ViewTargets TargetsFor(const synth::BreastSample& breast, synth::View view) {
  ViewTargets t;
  for (const synth::Finding& f : breast.findings) {
    t.boxes.push_back(f.box(view));
    t.malignant.push_back(f.label == synth::Label::kMalignant);
  }
  return t;
}

Eigen::MatrixXd MatchCost(const model::HeadOutput& head, const ViewTargets& gts,
                          double image_width, double image_height,
                          const LossConfig& config) {
  const std::size_t n = head.boxes.dim(0);
  Eigen::MatrixXd cost(static_cast<Eigen::Index>(gts.size()), static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) {
    const BBox box = RowBox(head.boxes, k);
    const double obj = FocalMatchCost(head.objectness[k], config.focal_alpha, config.focal_gamma);
    const double mal = FocalMatchCost(head.malignancy[k], config.focal_alpha, config.focal_gamma);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      double c = obj;
      if (config.dual_heads && gts.malignant[g]) c += mal;
      c += config.l1_weight * NormalizedL1(box, gts.boxes[g], image_width, image_height);
      c += config.giou_weight * (1 - Giou(box, gts.boxes[g]));
      cost(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(k)) = c;
    }
  }
  return cost;
}

std::vector<MatchResult> MatchStages(const std::vector<model::HeadOutput>& stages,
                                     const ViewTargets& gts, double image_width,
                                     double image_height, const LossConfig& config) {
  if (stages.empty()) throw ShapeError("no stages to match");
  std::vector<MatchResult> out;
  if (config.rematch_per_stage) {
    for (const auto& head : stages) {
      out.push_back(Hungarian(MatchCost(head, gts, image_width, image_height, config)));
    }
  } else {
    const MatchResult final_match =
        Hungarian(MatchCost(stages.back(), gts, image_width, image_height, config));
    out.assign(stages.size(), final_match);
  }
  return out;
}

LesionTerms LesionLoss(const std::vector<model::HeadOutput>& stages,
                       const ViewTargets& gts,
                       const std::vector<MatchResult>& matches,
                       double image_width, double image_height,
                       const LossConfig& config) {
  if (matches.size() != stages.size()) {
    throw ShapeError("lesion loss: " + std::to_string(matches.size()) + " matches for " +
                     std::to_string(stages.size()) + " stages");
  }
  const double norm = Normalizer(gts.size());
  LesionTerms terms{Zero(), Zero(), Zero(), Zero()};
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const model::HeadOutput& head = stages[s];
    const MatchResult& match = matches[s];
    const std::size_t n = head.objectness.numel();
    if (match.proposal_to_gt.size() != n || match.assignment.size() != gts.size()) {
      throw ShapeError("lesion loss: assignment does not fit the stage output");
    }
    std::vector<bool> any(n), malignant(n);
    for (std::size_t k = 0; k < n; ++k) {
      const int g = match.proposal_to_gt[k];
      any[k] = g != kBackground;
      malignant[k] = any[k] && gts.malignant[static_cast<std::size_t>(g)];
    }
    terms.objectness = ops::Add(
        terms.objectness,
        ops::Scale(FocalLossSum(head.objectness, any, config.focal_alpha, config.focal_gamma), norm));
    if (config.dual_heads) {
      const Tensor focal = FocalLossSum(head.malignancy, malignant, config.focal_alpha,
                                        config.focal_gamma,
                                        config.malignancy_matched_only ? &any : nullptr);
      terms.malignant = ops::Add(terms.malignant, ops::Scale(focal, norm));
    }
    if (!gts.boxes.empty()) {
      terms.giou = ops::Add(terms.giou,
                            ops::Scale(box_ops::GiouLoss(head.boxes, match.assignment, gts.boxes), norm));
      terms.l1 = ops::Add(terms.l1, ops::Scale(box_ops::L1Loss(head.boxes, match.assignment, gts.boxes,
                                                               image_width, image_height),
                                               norm));
    }
  }
  return terms;
}

double LossBreakdown::Combine(bool annotated, const LossConfig& config) const {
  const double lesion = annotated ? malignant + objectness + config.giou_weight * giou +
                                        config.l1_weight * l1
                                  : 0.0;
  return lesion + config.image_weight * image + config.breast_weight * breast;
}

BreastLoss TotalLoss(const model::BreastForward& forward,
                     const synth::BreastSample& breast, const LossConfig& config,
                     const std::vector<std::vector<MatchResult>>* fixed_matches) {
  const double width = static_cast<double>(breast.image_cc.width);
  const double height = static_cast<double>(breast.image_cc.height);
  BreastLoss out;
  Tensor total = Zero();

  if (breast.annotated) {
    for (synth::View view : {synth::View::kCC, synth::View::kMLO}) {
      const std::size_t vi = view == synth::View::kCC ? 0 : 1;
      const auto& stages = forward.view(view).stages;
      const ViewTargets gts = TargetsFor(breast, view);
      std::vector<MatchResult> matches =
          fixed_matches != nullptr ? fixed_matches->at(vi)
                                   : MatchStages(stages, gts, width, height, config);
      const LesionTerms t = LesionLoss(stages, gts, matches, width, height, config);
      out.breakdown.malignant += t.malignant.item();
      out.breakdown.objectness += t.objectness.item();
      out.breakdown.giou += t.giou.item();
      out.breakdown.l1 += t.l1.item();
      total = ops::Add(total, ops::Add(ops::Add(t.malignant, t.objectness),
                                       ops::Add(ops::Scale(t.giou, config.giou_weight),
                                                ops::Scale(t.l1, config.l1_weight))));
      out.matches.push_back(std::move(matches));
    }
  }

  if (config.mil) {
    const bool label = breast.malignant();
    auto image_scores = [&](const model::ViewForward& v) {
      if (!config.mil_deep_supervision) return std::vector<Tensor>{v.image_score};
      if (v.stage_image_scores.empty()) {
        throw ConfigError("mil_deep_supervision needs per-stage image scores");
      }
      return v.stage_image_scores;
    };
    const auto cc = image_scores(forward.cc), mlo = image_scores(forward.mlo);
    Tensor image = Zero(), breast_term = Zero();
    for (std::size_t s = 0; s < cc.size(); ++s) {
      image = ops::Add(image, ops::Scale(ops::Add(BinaryCrossEntropy(cc[s], label),
                                                  BinaryCrossEntropy(mlo[s], label)),
                                         0.5));
      const Tensor breast_score =
          config.mil_deep_supervision ? ops::Scale(ops::Add(cc[s], mlo[s]), 0.5)
                                      : forward.breast_score;
      breast_term = ops::Add(breast_term, BinaryCrossEntropy(breast_score, label));
    }
    out.breakdown.image = image.item();
    out.breakdown.breast = breast_term.item();
    total = ops::Add(total, ops::Add(ops::Scale(image, config.image_weight),
                                     ops::Scale(breast_term, config.breast_weight)));
  }
  out.breakdown.total = total.item();
  out.total = total;
  return out;
}

}  // namespace mnm::loss
