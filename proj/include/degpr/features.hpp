#pragma once

#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "degpr/geometry.hpp"
#include "degpr/image.hpp"

namespace degpr {

// Hand-crafted per-box features and the per-image discriminative difference
// vectors built from them. The explicit vector for a class pair is ordered
// [intensity_diff, size_diff]; the ordering is fixed so serialized GMM fits
// stay comparable across runs.

inline double size_feature(const BoundingBox& b) {
  require_valid_box(b);
  return b.area();
}

// Mean pixel intensity over the integer pixel coordinates
// [ceil(w_l), floor(w_r)] x [ceil(h_l), floor(h_r)], after clamping the box
// to the image. Fractional boundary pixels are truncated rather than
// weighted.
inline double intensity_feature(const GrayImage& img, const BoundingBox& box) {
  require_valid_box(box);
  const BoundingBox c = clamp_box(box, img.width, img.height);
  const int x_lo = std::max(static_cast<int>(std::ceil(c.w_l)), 0);
  const int x_hi = std::min(static_cast<int>(std::floor(c.w_r)), img.width - 1);
  const int y_lo = std::max(static_cast<int>(std::ceil(c.h_l)), 0);
  const int y_hi = std::min(static_cast<int>(std::floor(c.h_r)), img.height - 1);
  if (x_lo > x_hi || y_lo > y_hi)
    throw std::invalid_argument("intensity_feature: degenerate box (no pixel coverage)");
  double sum = 0.0;
  for (int y = y_lo; y <= y_hi; ++y)
    for (int x = x_lo; x <= x_hi; ++x) sum += img.at(x, y);
  return sum / (static_cast<double>(x_hi - x_lo + 1) * (y_hi - y_lo + 1));
}

inline double class_average(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("class_average: empty feature list");
  const double sum = std::accumulate(values.begin(), values.end(), 0.0);
  return sum / static_cast<double>(values.size());
}

inline double discriminative_diff(double avg_i, double avg_k) { return avg_i - avg_k; }

using BoxesByClass = std::vector<std::vector<BoundingBox>>;

// Per-image, per-class-pair concatenated feature-difference vector.
struct DiscriminativeVector {
  int class_i = 0;
  int class_k = 0;
  std::vector<double> values;
};

// Explicit discriminative vector [intensity_diff, size_diff] for pair (i,k).
// Returns nullopt when either class has no boxes in the image (missing-class
// signal; the regularizer decides what to do with it).
inline std::optional<std::array<double, 2>> explicit_vector(const GrayImage& img,
                                                            const BoxesByClass& boxes,
                                                            int class_i, int class_k) {
  if (class_i >= class_k) throw std::invalid_argument("explicit_vector: requires i < k");
  if (class_k >= static_cast<int>(boxes.size()) || class_i < 0)
    throw std::invalid_argument("explicit_vector: class index out of range");
  const auto& bi = boxes[class_i];
  const auto& bk = boxes[class_k];
  if (bi.empty() || bk.empty()) return std::nullopt;

  double int_i = 0, int_k = 0, size_i = 0, size_k = 0;
  for (const auto& b : bi) {
    int_i += intensity_feature(img, b);
    size_i += size_feature(b);
  }
  for (const auto& b : bk) {
    int_k += intensity_feature(img, b);
    size_k += size_feature(b);
  }
  const double ni = static_cast<double>(bi.size());
  const double nk = static_cast<double>(bk.size());
  return std::array<double, 2>{int_i / ni - int_k / nk, size_i / ni - size_k / nk};
}

// d/d(coordinate) of one box, for one vector component.
struct BoxCoordGrad {
  double w_l = 0, h_l = 0, w_r = 0, h_r = 0;

  BoxCoordGrad& operator+=(const BoxCoordGrad& o) {
    w_l += o.w_l;
    h_l += o.h_l;
    w_r += o.w_r;
    h_r += o.h_r;
    return *this;
  }
  BoxCoordGrad scaled(double s) const { return {w_l * s, h_l * s, w_r * s, h_r * s}; }
};

// Gradient of the explicit vector w.r.t. every contributing box coordinate.
// grads_i[b][c] is d(component c)/d(coords of class-i box b); component 0 is
// the intensity diff, component 1 the size diff.
struct ExplicitVectorGrad {
  std::vector<std::array<BoxCoordGrad, 2>> grads_i;
  std::vector<std::array<BoxCoordGrad, 2>> grads_k;
};

namespace detail {

// Central finite difference of the intensity feature w.r.t. one coordinate,
// step 0.5 px. The pixel-boundary truncation makes the exact derivative
// piecewise constant, so a fixed-step difference is the defined gradient
// here, not an approximation of something smoother. Falls back to one-sided
// differences when a shifted evaluation degenerates.
template <typename Shift>
double intensity_fd(const GrayImage& img, const BoundingBox& box, Shift shift) {
  constexpr double h = 0.5;
  const BoundingBox plus = shift(box, +h);
  const BoundingBox minus = shift(box, -h);
  const auto eval = [&](const BoundingBox& b) -> std::optional<double> {
    if (!box_valid(b)) return std::nullopt;
    try {
      return intensity_feature(img, b);
    } catch (const std::invalid_argument&) {
      return std::nullopt;
    }
  };
  const auto fp = eval(plus);
  const auto fm = eval(minus);
  if (fp && fm) return (*fp - *fm) / (2.0 * h);
  const auto f0 = eval(box);
  if (fp && f0) return (*fp - *f0) / h;
  if (f0 && fm) return (*f0 - *fm) / h;
  return 0.0;
}

inline std::array<BoxCoordGrad, 2> per_box_grads(const GrayImage& img, const BoundingBox& b,
                                                 double scale) {
  std::array<BoxCoordGrad, 2> g{};
  // intensity component: finite differences on each coordinate
  g[0].w_l = scale * intensity_fd(img, b, [](BoundingBox x, double d) { x.w_l += d; return x; });
  g[0].h_l = scale * intensity_fd(img, b, [](BoundingBox x, double d) { x.h_l += d; return x; });
  g[0].w_r = scale * intensity_fd(img, b, [](BoundingBox x, double d) { x.w_r += d; return x; });
  g[0].h_r = scale * intensity_fd(img, b, [](BoundingBox x, double d) { x.h_r += d; return x; });
  // size component: analytic product rule
  g[1].w_l = scale * -(b.h_r - b.h_l);
  g[1].w_r = scale * (b.h_r - b.h_l);
  g[1].h_l = scale * -(b.w_r - b.w_l);
  g[1].h_r = scale * (b.w_r - b.w_l);
  return g;
}

}  // namespace detail

inline ExplicitVectorGrad explicit_vector_grad(const GrayImage& img, const BoxesByClass& boxes,
                                               int class_i, int class_k) {
  if (class_i >= class_k) throw std::invalid_argument("explicit_vector_grad: requires i < k");
  const auto& bi = boxes.at(class_i);
  const auto& bk = boxes.at(class_k);
  if (bi.empty() || bk.empty())
    throw std::invalid_argument("explicit_vector_grad: missing class in image");
  ExplicitVectorGrad out;
  out.grads_i.reserve(bi.size());
  out.grads_k.reserve(bk.size());
  const double si = 1.0 / static_cast<double>(bi.size());
  const double sk = -1.0 / static_cast<double>(bk.size());
  for (const auto& b : bi) out.grads_i.push_back(detail::per_box_grads(img, b, si));
  for (const auto& b : bk) out.grads_k.push_back(detail::per_box_grads(img, b, sk));
  return out;
}

}  // namespace degpr
