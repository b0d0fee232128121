#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "degpr/geometry.hpp"

namespace degpr {

// 8-bit-range grayscale image; intensities are stored as floats in [0,255]
// so resampled images keep fractional values.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;  // row-major, height*width

  GrayImage() = default;
  GrayImage(int w, int h, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool empty() const { return width == 0 || height == 0; }
};

// Bilinear sample at pixel-center coordinates (pixel (i,j) sits at (i,j)).
// Coordinates are clamped to the image border.
inline double sample_bilinear(const GrayImage& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = (1.0 - fx) * img.at(x0, y0) + fx * img.at(x1, y0);
  const double bot = (1.0 - fx) * img.at(x0, y1) + fx * img.at(x1, y1);
  return (1.0 - fy) * top + fy * bot;
}

// Bilinear resize with the half-pixel-center convention.
inline GrayImage resize_bilinear(const GrayImage& src, int out_w, int out_h) {
  if (src.empty() || out_w <= 0 || out_h <= 0)
    throw std::invalid_argument("resize_bilinear: empty image or non-positive target");
  GrayImage out(out_w, out_h);
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  for (int j = 0; j < out_h; ++j) {
    const double srcy = (j + 0.5) * sy - 0.5;
    for (int i = 0; i < out_w; ++i) {
      const double srcx = (i + 0.5) * sx - 0.5;
      out.at(i, j) = static_cast<float>(sample_bilinear(src, srcx, srcy));
    }
  }
  return out;
}

// Crop the (real-valued) box region and resample it to out_size x out_size.
// The box is clamped to the image first; a zero-area clamped box is an error.
inline GrayImage crop_patch(const GrayImage& img, const BoundingBox& box, int out_size = 224) {
  require_valid_box(box);
  if (out_size <= 0) throw std::invalid_argument("crop_patch: out_size must be positive");
  const BoundingBox c = clamp_box(box, img.width, img.height);
  const double bw = c.width();
  const double bh = c.height();
  if (bw <= 0.0 || bh <= 0.0)
    throw std::invalid_argument("crop_patch: degenerate box after clamping");
  GrayImage out(out_size, out_size);
  for (int j = 0; j < out_size; ++j) {
    const double srcy = c.h_l + (j + 0.5) * bh / out_size - 0.5;
    for (int i = 0; i < out_size; ++i) {
      const double srcx = c.w_l + (i + 0.5) * bw / out_size - 0.5;
      out.at(i, j) = static_cast<float>(sample_bilinear(img, srcx, srcy));
    }
  }
  return out;
}

// Image with its gold boxes and an optional region-of-interest mask
// (mask pixel >= 128 means "keep").
struct ImageRecord {
  GrayImage image;
  std::vector<std::pair<int, BoundingBox>> gold;  // (class_id, box)
  std::optional<GrayImage> mask;
};

// Fill everything outside the mask; boxes are left untouched (annotations are
// expected to lie inside the region of interest already).
inline void apply_mask(ImageRecord& record, float fill = 255.0f) {
  if (!record.mask) return;
  const GrayImage& m = *record.mask;
  if (m.width != record.image.width || m.height != record.image.height)
    throw std::invalid_argument("apply_mask: mask dimensions do not match image");
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(x, y) < 128.0f) record.image.at(x, y) = fill;
}

namespace detail {

inline int pnm_next_int(std::istream& in) {
  // skips whitespace and '#' comments
  while (true) {
    const int c = in.peek();
    if (c == EOF) throw std::runtime_error("pgm: unexpected end of header");
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (std::isspace(c)) {
      in.get();
      continue;
    }
    break;
  }
  int value = 0;
  if (!(in >> value)) throw std::runtime_error("pgm: malformed header integer");
  return value;
}

}  // namespace detail

// Reads binary PGM (P5). Binary PPM (P6) is accepted and converted to luma
// (0.299 R + 0.587 G + 0.114 B).
inline GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("pgm: cannot open " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || (m1 != '5' && m1 != '6'))
    throw std::runtime_error("pgm: unsupported magic in " + path);
  const bool color = (m1 == '6');
  const int w = detail::pnm_next_int(in);
  const int h = detail::pnm_next_int(in);
  const int maxval = detail::pnm_next_int(in);
  if (w <= 0 || h <= 0) throw std::runtime_error("pgm: bad dimensions in " + path);
  if (maxval <= 0 || maxval > 255)
    throw std::runtime_error("pgm: only 8-bit images supported: " + path);
  in.get();  // single whitespace after maxval
  const std::size_t n = static_cast<std::size_t>(w) * h * (color ? 3 : 1);
  std::vector<unsigned char> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw std::runtime_error("pgm: truncated pixel data in " + path);
  GrayImage img(w, h);
  if (color) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i) {
      const double r = raw[3 * i], g = raw[3 * i + 1], b = raw[3 * i + 2];
      img.pixels[i] = static_cast<float>(0.299 * r + 0.587 * g + 0.114 * b);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = raw[i];
  }
  return img;
}

inline void write_pgm(const GrayImage& img, const std::string& path) {
  if (img.empty()) throw std::invalid_argument("pgm: refusing to write empty image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("pgm: cannot write " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const float v = std::clamp(img.pixels[i], 0.0f, 255.0f);
    raw[i] = static_cast<unsigned char>(std::lround(v));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error("pgm: write failed for " + path);
}

}  // namespace degpr
