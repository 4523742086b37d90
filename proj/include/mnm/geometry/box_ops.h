#pragma once

#include <cstddef>
#include <vector>

#include "mnm/geometry/bbox.h"
#include "mnm/numerics/tensor.h"

// Differentiable counterparts of the box algebra. Box tensors are [N, 4] in
// (x1, y1, x2, y2) order.
namespace mnm::box_ops {

Tensor FromBoxes(const std::vector<BBox>& boxes);
std::vector<BBox> ToBoxes(const Tensor& boxes);

// Row-wise ApplyDelta; differentiable w.r.t. both anchors and deltas. The
// log-scale clamp has zero gradient outside [-kMaxLogScale, kMaxLogScale].
Tensor ApplyDeltas(const Tensor& anchors, const Tensor& deltas);

// Sum over pairs k of (1 - giou(pred[rows[k]], targets[k])).
Tensor GiouLoss(const Tensor& pred, const std::vector<std::size_t>& rows,
                const std::vector<BBox>& targets);

// Sum over pairs of NormalizedL1(pred[rows[k]], targets[k]).
Tensor L1Loss(const Tensor& pred, const std::vector<std::size_t>& rows,
              const std::vector<BBox>& targets, double image_width,
              double image_height);

// Learnable proposal parameterization: [N, 4] rows (cx, cy, w, h) in units
// of the image size -> absolute (x1, y1, x2, y2). Extents below 1e-3 are
// clamped (zero gradient there).
Tensor NormalizedCxcywhToBoxes(const Tensor& params, double image_width,
                               double image_height);

}  // namespace mnm::box_ops
