#pragma once

// Test-only oracles: independent reference computations the implementation is
// checked against. Nothing here may call the code path under test.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "degpr/geometry.hpp"
#include "degpr/image.hpp"
#include "degpr/rng.hpp"

namespace oracle {

// Kahan-compensated mean.
inline double kahan_mean(const std::vector<double>& values) {
  double sum = 0.0, comp = 0.0;
  for (double v : values) {
    const double y = v - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  return sum / static_cast<double>(values.size());
}

// Exhaustive pixel mean over the truncated integer bounds.
inline double brute_force_intensity(const degpr::GrayImage& img, const degpr::BoundingBox& box) {
  const auto c = degpr::clamp_box(box, img.width, img.height);
  const int x_lo = std::max(static_cast<int>(std::ceil(c.w_l)), 0);
  const int x_hi = std::min(static_cast<int>(std::floor(c.w_r)), img.width - 1);
  const int y_lo = std::max(static_cast<int>(std::ceil(c.h_l)), 0);
  const int y_hi = std::min(static_cast<int>(std::floor(c.h_r)), img.height - 1);
  double sum = 0.0;
  int n = 0;
  for (int y = y_lo; y <= y_hi; ++y)
    for (int x = x_lo; x <= x_hi; ++x) {
      sum += img.at(x, y);
      ++n;
    }
  return sum / n;
}

// Relative infinity-norm disagreement between two gradients.
inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  if (scale < 1e-12) return 0.0;
  return diff / scale;
}

// Central finite differences of a scalar function of a flat parameter vector.
inline std::vector<double> finite_difference(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
    double step) {
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = f(x);
    x[i] = orig - step;
    const double fm = f(x);
    x[i] = orig;
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

inline degpr::GrayImage random_image(int w, int h, degpr::Rng& rng) {
  degpr::GrayImage img(w, h);
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform(0.0, 255.0));
  return img;
}

}  // namespace oracle
