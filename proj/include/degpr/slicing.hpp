#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "degpr/geometry.hpp"
#include "degpr/image.hpp"

namespace degpr {

struct SliceOptions {
  int grid = 3;            // grid x grid tiles
  int target_w = 640;      // each tile is rescaled to this size
  int target_h = 640;
  double min_area_frac = 0.25;  // drop clipped boxes below this fraction of original area
};

// A tile with enough provenance to recompose per-full-image counts.
struct TileRecord {
  ImageRecord record;
  int source_index = 0;  // caller-supplied id of the source image
  int tile_row = 0;
  int tile_col = 0;
};

// Splits a record into grid x grid non-overlapping tiles covering every source
// pixel exactly once, rescales each tile to the target size, and carries the
// gold boxes along: boxes are clipped to the tile, rescaled, and dropped when
// the clipped area falls below min_area_frac of the original box area.
inline std::vector<TileRecord> slice_image(const ImageRecord& src, const SliceOptions& opt = {},
                                           int source_index = 0) {
  const int g = opt.grid;
  if (g < 1) throw std::invalid_argument("slice_image: grid must be >= 1");
  if (src.image.width < g || src.image.height < g)
    throw std::invalid_argument("slice_image: image smaller than the grid");
  if (src.mask && (src.mask->width != src.image.width || src.mask->height != src.image.height))
    throw std::invalid_argument("slice_image: mask dimensions do not match image");

  const int W = src.image.width;
  const int H = src.image.height;
  std::vector<TileRecord> tiles;
  tiles.reserve(static_cast<std::size_t>(g) * g);

  for (int r = 0; r < g; ++r) {
    const int y0 = static_cast<int>(static_cast<long long>(H) * r / g);
    const int y1 = static_cast<int>(static_cast<long long>(H) * (r + 1) / g);
    for (int c = 0; c < g; ++c) {
      const int x0 = static_cast<int>(static_cast<long long>(W) * c / g);
      const int x1 = static_cast<int>(static_cast<long long>(W) * (c + 1) / g);
      const int tw = x1 - x0;
      const int th = y1 - y0;

      GrayImage tile(tw, th);
      for (int y = 0; y < th; ++y)
        for (int x = 0; x < tw; ++x) tile.at(x, y) = src.image.at(x0 + x, y0 + y);

      TileRecord out;
      out.source_index = source_index;
      out.tile_row = r;
      out.tile_col = c;
      out.record.image = resize_bilinear(tile, opt.target_w, opt.target_h);

      const double sx = static_cast<double>(opt.target_w) / tw;
      const double sy = static_cast<double>(opt.target_h) / th;
      const BoundingBox tile_rect{static_cast<double>(x0), static_cast<double>(y0),
                                  static_cast<double>(x1), static_cast<double>(y1)};
      for (const auto& [cls, box] : src.gold) {
        const double inter = intersection_area(box, tile_rect);
        if (inter <= 0.0) continue;
        if (box.area() > 0.0 && inter / box.area() < opt.min_area_frac) continue;
        BoundingBox clipped;
        clipped.w_l = (std::max(box.w_l, tile_rect.w_l) - x0) * sx;
        clipped.w_r = (std::min(box.w_r, tile_rect.w_r) - x0) * sx;
        clipped.h_l = (std::max(box.h_l, tile_rect.h_l) - y0) * sy;
        clipped.h_r = (std::min(box.h_r, tile_rect.h_r) - y0) * sy;
        out.record.gold.emplace_back(cls, clipped);
      }

      if (src.mask) {
        GrayImage msk(tw, th);
        for (int y = 0; y < th; ++y)
          for (int x = 0; x < tw; ++x) msk.at(x, y) = src.mask->at(x0 + x, y0 + y);
        GrayImage scaled = resize_bilinear(msk, opt.target_w, opt.target_h);
        for (auto& p : scaled.pixels) p = p >= 127.5f ? 255.0f : 0.0f;
        out.record.mask = std::move(scaled);
      }

      tiles.push_back(std::move(out));
    }
  }
  return tiles;
}

}  // namespace degpr
