#include "mnm/geometry/bbox.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mnm/common/error.h"

namespace mnm {

BBox BBox::Make(double x1, double y1, double x2, double y2) {
  if (!(std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
        std::isfinite(y2)) ||
      !(x1 < x2) || !(y1 < y2)) {
    std::ostringstream msg;
    msg << "invalid box (" << x1 << ", " << y1 << ", " << x2 << ", " << y2
        << "): need x1 < x2 and y1 < y2";
    throw ShapeError(msg.str());
  }
  return BBox{x1, y1, x2, y2};
}

namespace {

double IntersectionArea(const BBox& a, const BBox& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

}  // namespace

double Iou(const BBox& a, const BBox& b) {
  const double inter = IntersectionArea(a, b);
  return inter / (a.area() + b.area() - inter);
}

double Giou(const BBox& a, const BBox& b) {
  const double inter = IntersectionArea(a, b);
  const double uni = a.area() + b.area() - inter;
  const double enclosing = (std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) *
                           (std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
  return inter / uni - (enclosing - uni) / enclosing;
}

bool CenterHit(const BBox& pred, const BBox& gt) {
  const double cx = pred.center_x();
  const double cy = pred.center_y();
  return cx >= gt.x1 && cx <= gt.x2 && cy >= gt.y1 && cy <= gt.y2;
}

BoxDelta EncodeDelta(const BBox& anchor, const BBox& target) {
  const double aw = anchor.width(), ah = anchor.height();
  return {(target.center_x() - anchor.center_x()) / aw,
          (target.center_y() - anchor.center_y()) / ah,
          std::log(target.width() / aw), std::log(target.height() / ah)};
}

BBox ApplyDelta(const BBox& anchor, const BoxDelta& delta) {
  const double aw = anchor.width(), ah = anchor.height();
  const double cx = anchor.center_x() + delta[0] * aw;
  const double cy = anchor.center_y() + delta[1] * ah;
  const double w = aw * std::exp(std::clamp(delta[2], -kMaxLogScale, kMaxLogScale));
  const double h = ah * std::exp(std::clamp(delta[3], -kMaxLogScale, kMaxLogScale));
  return BBox{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

double NormalizedL1(const BBox& a, const BBox& b, double image_width,
                    double image_height) {
  return std::abs(a.x1 - b.x1) / image_width +
         std::abs(a.y1 - b.y1) / image_height +
         std::abs(a.x2 - b.x2) / image_width +
         std::abs(a.y2 - b.y2) / image_height;
}

BBox ClipToImage(const BBox& box, double width, double height,
                 double min_size) {
  BBox out;
  out.x1 = std::clamp(box.x1, 0.0, width - min_size);
  out.y1 = std::clamp(box.y1, 0.0, height - min_size);
  out.x2 = std::clamp(box.x2, out.x1 + min_size, width);
  out.y2 = std::clamp(box.y2, out.y1 + min_size, height);
  return out;
}

BBox FlipHorizontal(const BBox& box, double image_width) {
  return BBox{image_width - box.x2, box.y1, image_width - box.x1, box.y2};
}

}  // namespace mnm
