#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace degpr {

// Axis-aligned box in pixel coordinates, origin top-left. (w_l, h_l) is the
// top-left corner, (w_r, h_r) the bottom-right; w runs along image width,
// h along image height. Coordinates live in "edge" space: a box covering a
// full WxH image is (0,0)-(W,H).
struct BoundingBox {
  double w_l = 0.0;
  double h_l = 0.0;
  double w_r = 0.0;
  double h_r = 0.0;

  double width() const { return w_r - w_l; }
  double height() const { return h_r - h_l; }
  double area() const { return width() * height(); }
};

inline bool box_valid(const BoundingBox& b) {
  return std::isfinite(b.w_l) && std::isfinite(b.h_l) && std::isfinite(b.w_r) &&
         std::isfinite(b.h_r) && b.w_l <= b.w_r && b.h_l <= b.h_r;
}

inline void require_valid_box(const BoundingBox& b) {
  if (!box_valid(b)) throw std::invalid_argument("invalid bounding box");
}

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double w = std::min(a.w_r, b.w_r) - std::max(a.w_l, b.w_l);
  const double h = std::min(a.h_r, b.h_r) - std::max(a.h_l, b.h_l);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

// Intersection over union; 0 when the union has zero area.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

inline BoundingBox clamp_box(const BoundingBox& b, double width, double height) {
  BoundingBox out;
  out.w_l = std::clamp(b.w_l, 0.0, width);
  out.w_r = std::clamp(b.w_r, 0.0, width);
  out.h_l = std::clamp(b.h_l, 0.0, height);
  out.h_r = std::clamp(b.h_r, 0.0, height);
  return out;
}

// Detector output: box, cell-class index and confidence in [0,1].
struct Detection {
  BoundingBox box;
  int class_id = 0;
  double confidence = 0.0;
};

}  // namespace degpr
