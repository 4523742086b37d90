#include "mnm/geometry/box_ops.h"

#include <algorithm>
#include <cmath>

#include "mnm/common/error.h"

namespace mnm::box_ops {
namespace {

void RequireBoxTensor(const Tensor& t, const char* what) {
  if (t.rank() != 2 || t.dim(1) != 4) {
    throw ShapeError(std::string(what) + ": expected [N, 4], got " +
                     ShapeToString(t.shape()));
  }
}

void RequirePairs(const Tensor& pred, const std::vector<std::size_t>& rows,
                  const std::vector<BBox>& targets) {
  RequireBoxTensor(pred, "box loss");
  if (rows.size() != targets.size()) {
    throw ShapeError("box loss: " + std::to_string(rows.size()) + " rows vs " +
                     std::to_string(targets.size()) + " targets");
  }
  for (std::size_t r : rows) {
    if (r >= pred.dim(0)) throw ShapeError("box loss: row index out of range");
  }
}

BBox Row(std::span<const double> data, std::size_t r) {
  return BBox{data[r * 4], data[r * 4 + 1], data[r * 4 + 2], data[r * 4 + 3]};
}

// d(giou)/d(pred coordinates) for one pair.
std::array<double, 4> GiouGradient(const BBox& p, const BBox& t) {
  const double iw = std::min(p.x2, t.x2) - std::max(p.x1, t.x1);
  const double ih = std::min(p.y2, t.y2) - std::max(p.y1, t.y1);
  const bool overlap = iw > 0 && ih > 0;
  const double inter = overlap ? iw * ih : 0.0;
  const double uni = p.area() + t.area() - inter;
  const double cw = std::max(p.x2, t.x2) - std::min(p.x1, t.x1);
  const double ch = std::max(p.y2, t.y2) - std::min(p.y1, t.y1);
  const double enclosing = cw * ch;

  const double pw = p.width(), ph = p.height();
  const std::array<double, 4> d_area = {-ph, -pw, ph, pw};
  std::array<double, 4> d_inter = {0, 0, 0, 0};
  if (overlap) {
    d_inter = {p.x1 > t.x1 ? -ih : 0.0, p.y1 > t.y1 ? -iw : 0.0,
               p.x2 < t.x2 ? ih : 0.0, p.y2 < t.y2 ? iw : 0.0};
  }
  const std::array<double, 4> d_enclosing = {
      p.x1 < t.x1 ? -ch : 0.0, p.y1 < t.y1 ? -cw : 0.0,
      p.x2 > t.x2 ? ch : 0.0, p.y2 > t.y2 ? cw : 0.0};

  std::array<double, 4> grad;
  for (int i = 0; i < 4; ++i) {
    const double d_union = d_area[i] - d_inter[i];
    grad[i] = d_inter[i] / uni - inter * d_union / (uni * uni) +
              d_union / enclosing -
              uni * d_enclosing[i] / (enclosing * enclosing);
  }
  return grad;
}

}  // namespace

Tensor FromBoxes(const std::vector<BBox>& boxes) {
  std::vector<double> values;
  values.reserve(boxes.size() * 4);
  for (const BBox& b : boxes) values.insert(values.end(), {b.x1, b.y1, b.x2, b.y2});
  return Tensor::FromVector({boxes.size(), 4}, std::move(values));
}

std::vector<BBox> ToBoxes(const Tensor& boxes) {
  RequireBoxTensor(boxes, "to_boxes");
  std::vector<BBox> out;
  out.reserve(boxes.dim(0));
  for (std::size_t r = 0; r < boxes.dim(0); ++r) out.push_back(Row(boxes.data(), r));
  return out;
}

Tensor ApplyDeltas(const Tensor& anchors, const Tensor& deltas) {
  RequireBoxTensor(anchors, "apply_deltas");
  RequireBoxTensor(deltas, "apply_deltas");
  if (anchors.dim(0) != deltas.dim(0)) {
    throw ShapeError("apply_deltas: anchors " + ShapeToString(anchors.shape()) +
                     " vs deltas " + ShapeToString(deltas.shape()));
  }
  const std::size_t n = anchors.dim(0);
  std::vector<double> out(n * 4);
  for (std::size_t r = 0; r < n; ++r) {
    const BoxDelta d = {deltas[r * 4], deltas[r * 4 + 1], deltas[r * 4 + 2],
                        deltas[r * 4 + 3]};
    const BBox b = ApplyDelta(Row(anchors.data(), r), d);
    out[r * 4] = b.x1;
    out[r * 4 + 1] = b.y1;
    out[r * 4 + 2] = b.x2;
    out[r * 4 + 3] = b.y2;
  }
  return MakeResult(
      {n, 4}, std::move(out), {anchors, deltas},
      [n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pd = *self.parents[1];
        for (std::size_t r = 0; r < n; ++r) {
          const double* a = pa.value.data() + r * 4;
          const double* d = pd.value.data() + r * 4;
          const double* g = self.grad.data() + r * 4;
          // Axis 0 is x (coords 0 and 2), axis 1 is y (coords 1 and 3).
          for (int axis = 0; axis < 2; ++axis) {
            const double lo = a[axis], hi = a[axis + 2];
            const double extent = hi - lo;
            const double shift = d[axis];
            const double log_scale = d[axis + 2];
            const bool clamped = std::abs(log_scale) > kMaxLogScale;
            const double e = std::exp(std::clamp(log_scale, -kMaxLogScale, kMaxLogScale));
            const double g_lo = g[axis], g_hi = g[axis + 2];
            if (pd.requires_grad) {
              auto& gd = pd.EnsureGrad();
              gd[r * 4 + axis] += (g_lo + g_hi) * extent;
              if (!clamped) {
                const double half_w = 0.5 * extent * e;
                gd[r * 4 + axis + 2] += (g_hi - g_lo) * half_w;
              }
            }
            if (pa.requires_grad) {
              auto& ga = pa.EnsureGrad();
              ga[r * 4 + axis] += g_lo * (0.5 - shift + 0.5 * e) +
                                  g_hi * (0.5 - shift - 0.5 * e);
              ga[r * 4 + axis + 2] += g_lo * (0.5 + shift - 0.5 * e) +
                                      g_hi * (0.5 + shift + 0.5 * e);
            }
          }
        }
      },
      "apply_deltas");
}

Tensor GiouLoss(const Tensor& pred, const std::vector<std::size_t>& rows,
                const std::vector<BBox>& targets) {
  RequirePairs(pred, rows, targets);
  double total = 0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    total += 1.0 - Giou(Row(pred.data(), rows[k]), targets[k]);
  }
  return MakeResult(
      {}, {total}, {pred},
      [rows, targets](Node& self) {
        Node& p = *self.parents[0];
        auto& g = p.EnsureGrad();
        for (std::size_t k = 0; k < rows.size(); ++k) {
          const auto d = GiouGradient(Row(p.value, rows[k]), targets[k]);
          for (int i = 0; i < 4; ++i) g[rows[k] * 4 + i] -= self.grad[0] * d[i];
        }
      },
      "giou_loss");
}

Tensor L1Loss(const Tensor& pred, const std::vector<std::size_t>& rows,
              const std::vector<BBox>& targets, double image_width,
              double image_height) {
  RequirePairs(pred, rows, targets);
  double total = 0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    total += NormalizedL1(Row(pred.data(), rows[k]), targets[k], image_width,
                          image_height);
  }
  return MakeResult(
      {}, {total}, {pred},
      [rows, targets, image_width, image_height](Node& self) {
        Node& p = *self.parents[0];
        auto& g = p.EnsureGrad();
        const double scale[4] = {1 / image_width, 1 / image_height,
                                 1 / image_width, 1 / image_height};
        for (std::size_t k = 0; k < rows.size(); ++k) {
          const BBox& t = targets[k];
          const double tv[4] = {t.x1, t.y1, t.x2, t.y2};
          for (int i = 0; i < 4; ++i) {
            const double diff = p.value[rows[k] * 4 + i] - tv[i];
            const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
            g[rows[k] * 4 + i] += self.grad[0] * sign * scale[i];
          }
        }
      },
      "l1_loss");
}

Tensor NormalizedCxcywhToBoxes(const Tensor& params, double image_width,
                               double image_height) {
  RequireBoxTensor(params, "proposal boxes");
  constexpr double kMinExtent = 1e-3;
  const std::size_t n = params.dim(0);
  std::vector<double> out(n * 4);
  for (std::size_t r = 0; r < n; ++r) {
    const double* p = params.data().data() + r * 4;
    const double w = std::max(p[2], kMinExtent) * image_width;
    const double h = std::max(p[3], kMinExtent) * image_height;
    const double cx = p[0] * image_width, cy = p[1] * image_height;
    out[r * 4] = cx - 0.5 * w;
    out[r * 4 + 1] = cy - 0.5 * h;
    out[r * 4 + 2] = cx + 0.5 * w;
    out[r * 4 + 3] = cy + 0.5 * h;
  }
  return MakeResult(
      {n, 4}, std::move(out), {params},
      [n, image_width, image_height](Node& self) {
        Node& p = *self.parents[0];
        auto& g = p.EnsureGrad();
        for (std::size_t r = 0; r < n; ++r) {
          const double* gy = self.grad.data() + r * 4;
          const double* v = p.value.data() + r * 4;
          g[r * 4] += (gy[0] + gy[2]) * image_width;
          g[r * 4 + 1] += (gy[1] + gy[3]) * image_height;
          if (v[2] > kMinExtent) g[r * 4 + 2] += 0.5 * (gy[2] - gy[0]) * image_width;
          if (v[3] > kMinExtent) g[r * 4 + 3] += 0.5 * (gy[3] - gy[1]) * image_height;
        }
      },
      "cxcywh_to_boxes");
}

}  // namespace mnm::box_ops
