#pragma once

#include <array>

namespace mnm {

// Axis-aligned box in continuous image coordinates (pixels).
struct BBox {
  double x1 = 0, y1 = 0, x2 = 1, y2 = 1;

  // Throws ShapeError unless x1 < x2 and y1 < y2 and all coordinates finite.
  static BBox Make(double x1, double y1, double x2, double y2);

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }

  bool operator==(const BBox&) const = default;
};

using BoxDelta = std::array<double, 4>;  // (dx, dy, dw, dh)

// Largest |dw|, |dh| accepted by ApplyDelta; extents grow or shrink by at
// most e^4 per application.
inline constexpr double kMaxLogScale = 4.0;

double Iou(const BBox& a, const BBox& b);
// IoU minus the fraction of the enclosing box not covered by the union.
double Giou(const BBox& a, const BBox& b);
// True when the center of `pred` lies inside `gt`, boundary included.
bool CenterHit(const BBox& pred, const BBox& gt);

// Center offsets relative to anchor size, log-ratio extents.
BoxDelta EncodeDelta(const BBox& anchor, const BBox& target);
BBox ApplyDelta(const BBox& anchor, const BoxDelta& delta);

// Sum of |a - b| over the four coordinates after dividing x by width and y
// by height of the image.
double NormalizedL1(const BBox& a, const BBox& b, double image_width,
                    double image_height);

// Clamps to [0, width] x [0, height], keeping at least `min_size` extent.
BBox ClipToImage(const BBox& box, double width, double height,
                 double min_size = 1e-3);

BBox FlipHorizontal(const BBox& box, double image_width);

}  // namespace mnm
