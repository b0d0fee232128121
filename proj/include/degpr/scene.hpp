#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "degpr/geometry.hpp"
#include "degpr/image.hpp"
#include "degpr/rng.hpp"

namespace degpr {

// Synthetic multi-class cell scenes: ellipses with class-specific size and
// intensity distributions over a noisy background. Gold boxes are the exact
// ellipse bounding boxes.

struct ClassSpec {
  double count_mean = 6.0;        // Poisson mean of cells per scene
  double radius_mean = 5.0;       // px
  double radius_sigma = 1.0;
  double intensity_mean = 60.0;   // [0,255]
  double intensity_sigma = 10.0;
  double aspect_min = 1.0;        // 1.0 = circular; >1 elongated
  double aspect_max = 1.0;
};

struct SceneSpec {
  int width = 128;
  int height = 128;
  std::vector<ClassSpec> classes;
  double background = 230.0;
  double noise_sigma = 8.0;
  double max_overlap_iou = 0.1;  // rejection threshold between cell boxes
  std::uint64_t seed = 1;
};

// Expected bounding-box area of a cell: the box is 2a x 2b with a*b = r^2,
// so E[area] = 4 E[r^2] independent of the aspect draw.
inline double expected_box_area(const ClassSpec& c) {
  return 4.0 * (c.radius_mean * c.radius_mean + c.radius_sigma * c.radius_sigma);
}

inline void validate(const SceneSpec& spec) {
  if (spec.width < 8 || spec.height < 8)
    throw std::invalid_argument("scene: image must be at least 8x8");
  if (spec.classes.empty()) throw std::invalid_argument("scene: needs at least one class");
  for (const auto& c : spec.classes) {
    if (c.count_mean < 0) throw std::invalid_argument("scene: negative count mean");
    if (c.radius_mean <= 0 || c.radius_sigma < 0)
      throw std::invalid_argument("scene: bad radius distribution");
    if (c.aspect_min < 1.0 || c.aspect_max < c.aspect_min)
      throw std::invalid_argument("scene: bad aspect range");
  }
  // class parameters must be distinguishable through both explicit features
  for (std::size_t i = 0; i < spec.classes.size(); ++i) {
    for (std::size_t k = i + 1; k < spec.classes.size(); ++k) {
      const double si = expected_box_area(spec.classes[i]);
      const double sk = expected_box_area(spec.classes[k]);
      if (std::abs(si - sk) < 0.01 * std::max(si, sk))
        throw std::invalid_argument("scene: classes " + std::to_string(i) + "/" +
                                    std::to_string(k) + " have indistinct size means");
      const double di = spec.classes[i].intensity_mean;
      const double dk = spec.classes[k].intensity_mean;
      if (std::abs(di - dk) < 0.01 * std::max({di, dk, 1.0}))
        throw std::invalid_argument("scene: classes " + std::to_string(i) + "/" +
                                    std::to_string(k) + " have indistinct intensity means");
    }
  }
}

struct CellInstance {
  int class_id = 0;
  double cx = 0, cy = 0;  // center, edge-space coordinates
  double a = 0, b = 0;    // semi-axes along w and h
  double intensity = 0;

  BoundingBox box() const { return {cx - a, cy - b, cx + a, cy + b}; }
};

// Samples cell placements for a scene; overlap beyond max_overlap_iou is
// rejected with retries and a cell is dropped when no spot is found.
inline std::vector<CellInstance> sample_cells(const SceneSpec& spec, Rng& rng) {
  std::vector<CellInstance> cells;
  for (std::size_t cls = 0; cls < spec.classes.size(); ++cls) {
    const ClassSpec& cs = spec.classes[cls];
    const int count = rng.poisson(cs.count_mean);
    for (int i = 0; i < count; ++i) {
      CellInstance cell;
      cell.class_id = static_cast<int>(cls);
      bool placed = false;
      for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
        const double r = std::max(1.0, rng.normal(cs.radius_mean, cs.radius_sigma));
        const double aspect = rng.uniform(cs.aspect_min, cs.aspect_max);
        const double s = std::sqrt(aspect);
        cell.a = r * s;
        cell.b = r / s;
        if (2 * cell.a >= spec.width - 2 || 2 * cell.b >= spec.height - 2) continue;
        cell.cx = rng.uniform(cell.a + 1, spec.width - cell.a - 1);
        cell.cy = rng.uniform(cell.b + 1, spec.height - cell.b - 1);
        cell.intensity = std::clamp(rng.normal(cs.intensity_mean, cs.intensity_sigma), 0.0, 255.0);
        placed = true;
        for (const auto& other : cells) {
          if (iou(cell.box(), other.box()) > spec.max_overlap_iou) {
            placed = false;
            break;
          }
        }
      }
      if (placed) cells.push_back(cell);
    }
  }
  return cells;
}

inline ImageRecord render_cells(const SceneSpec& spec, const std::vector<CellInstance>& cells,
                                Rng& rng) {
  ImageRecord rec;
  rec.image = GrayImage(spec.width, spec.height);
  for (auto& p : rec.image.pixels)
    p = static_cast<float>(std::clamp(spec.background + spec.noise_sigma * rng.normal(),
                                      0.0, 255.0));
  for (const auto& cell : cells) {
    const BoundingBox b = cell.box();
    const int x0 = std::max(0, static_cast<int>(std::floor(b.w_l)));
    const int x1 = std::min(spec.width - 1, static_cast<int>(std::ceil(b.w_r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(b.h_l)));
    const int y1 = std::min(spec.height - 1, static_cast<int>(std::ceil(b.h_r)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = (x + 0.5 - cell.cx) / cell.a;
        const double dy = (y + 0.5 - cell.cy) / cell.b;
        if (dx * dx + dy * dy <= 1.0) {
          rec.image.at(x, y) = static_cast<float>(
              std::clamp(cell.intensity + spec.noise_sigma * rng.normal(), 0.0, 255.0));
        }
      }
    }
    rec.gold.emplace_back(cell.class_id, b);
  }
  return rec;
}

/// Deterministic per spec.seed.
inline ImageRecord render_scene(const SceneSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  const auto cells = sample_cells(spec, rng);
  return render_cells(spec, cells, rng);
}

// The standard two-class benchmark: class 0 small/dark, class 1 big/light,
// mirroring the IEL vs EN contrast at desk scale.
inline SceneSpec default_benchmark_spec() {
  SceneSpec spec;
  spec.width = 128;
  spec.height = 128;
  spec.background = 230.0;
  spec.noise_sigma = 8.0;
  spec.max_overlap_iou = 0.1;
  ClassSpec small_dark;
  small_dark.count_mean = 8.0;
  small_dark.radius_mean = 5.0;
  small_dark.radius_sigma = 1.0;
  small_dark.intensity_mean = 60.0;
  small_dark.intensity_sigma = 10.0;
  ClassSpec big_light;
  big_light.count_mean = 8.0;
  big_light.radius_mean = 9.0;
  big_light.radius_sigma = 1.5;
  big_light.intensity_mean = 170.0;
  big_light.intensity_sigma = 10.0;
  big_light.aspect_min = 1.2;
  big_light.aspect_max = 1.8;
  spec.classes = {small_dark, big_light};
  return spec;
}

}  // namespace degpr
