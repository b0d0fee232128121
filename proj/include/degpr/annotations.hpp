#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "degpr/geometry.hpp"
#include "degpr/image.hpp"

namespace degpr {

// Annotation text format: one box per line, `class_id cx cy w h`, all four
// coordinates normalized to [0,1] relative to the image size.

inline std::vector<std::pair<int, BoundingBox>> load_annotations(
    const std::string& path, double image_width, double image_height, int class_count = -1) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("annotations: cannot open " + path);
  std::vector<std::pair<int, BoundingBox>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream ls(line);
    int cls = 0;
    double cx = 0, cy = 0, bw = 0, bh = 0;
    std::string extra;
    if (!(ls >> cls >> cx >> cy >> bw >> bh) || (ls >> extra)) {
      throw std::runtime_error("annotations: parse error at " + path + ":" +
                               std::to_string(line_no));
    }
    if (cls < 0 || (class_count >= 0 && cls >= class_count)) {
      throw std::runtime_error("annotations: class id out of range at " + path + ":" +
                               std::to_string(line_no));
    }
    if (cx < 0 || cx > 1 || cy < 0 || cy > 1 || bw < 0 || bw > 1 || bh < 0 || bh > 1) {
      throw std::runtime_error("annotations: coordinate out of [0,1] at " + path + ":" +
                               std::to_string(line_no));
    }
    BoundingBox box;
    box.w_l = (cx - bw / 2.0) * image_width;
    box.w_r = (cx + bw / 2.0) * image_width;
    box.h_l = (cy - bh / 2.0) * image_height;
    box.h_r = (cy + bh / 2.0) * image_height;
    out.emplace_back(cls, box);
  }
  return out;
}

inline void save_annotations(const std::string& path,
                             const std::vector<std::pair<int, BoundingBox>>& entries,
                             double image_width, double image_height) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("annotations: cannot write " + path);
  char buf[160];
  for (const auto& [cls, box] : entries) {
    require_valid_box(box);
    const double cx = (box.w_l + box.w_r) / 2.0 / image_width;
    const double cy = (box.h_l + box.h_r) / 2.0 / image_height;
    const double bw = box.width() / image_width;
    const double bh = box.height() / image_height;
    std::snprintf(buf, sizeof(buf), "%d %.6f %.6f %.6f %.6f\n", cls, cx, cy, bw, bh);
    out << buf;
  }
  if (!out) throw std::runtime_error("annotations: write failed for " + path);
}

// One dataset record: an image path, its label path, and optionally the id of
// the full image a tile was sliced from (used to recompose counts).
struct ManifestRecord {
  std::string image;
  std::string labels;
  std::string source;  // empty: the record is its own full image
};

struct DatasetManifest {
  std::vector<std::string> class_names;
  double iou_threshold = 0.5;
  std::vector<ManifestRecord> records;

  int class_count() const { return static_cast<int>(class_names.size()); }
};

inline void validate(const DatasetManifest& m) {
  if (m.class_names.empty()) throw std::runtime_error("manifest: class_names must be non-empty");
  if (!(m.iou_threshold > 0.0 && m.iou_threshold < 1.0))
    throw std::runtime_error("manifest: iou_threshold must lie in (0,1)");
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> keys,
                                const std::string& where) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : keys)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known) throw std::runtime_error(where + ": unknown key '" + item.key() + "'");
  }
}

}  // namespace detail

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("manifest: invalid JSON in " + path + ": " + e.what());
  }
  detail::reject_unknown_keys(j, {"class_names", "iou_threshold", "records"}, "manifest");
  DatasetManifest m;
  m.class_names = j.at("class_names").get<std::vector<std::string>>();
  m.iou_threshold = j.at("iou_threshold").get<double>();
  for (const auto& r : j.at("records")) {
    detail::reject_unknown_keys(r, {"image", "labels", "source"}, "manifest record");
    ManifestRecord rec;
    rec.image = r.at("image").get<std::string>();
    rec.labels = r.at("labels").get<std::string>();
    if (r.contains("source")) rec.source = r.at("source").get<std::string>();
    m.records.push_back(std::move(rec));
  }
  validate(m);
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  validate(m);
  nlohmann::json j;
  j["class_names"] = m.class_names;
  j["iou_threshold"] = m.iou_threshold;
  j["records"] = nlohmann::json::array();
  for (const auto& r : m.records) {
    nlohmann::json jr;
    jr["image"] = r.image;
    jr["labels"] = r.labels;
    if (!r.source.empty()) jr["source"] = r.source;
    j["records"].push_back(jr);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("manifest: cannot write " + path);
  out << j.dump(2) << "\n";
}

// Loads one manifest record. Paths are resolved relative to the manifest
// location; gold boxes are clamped to the image bounds.
inline ImageRecord load_image_record(const DatasetManifest& m, std::size_t index,
                                     const std::string& manifest_dir) {
  if (index >= m.records.size()) throw std::out_of_range("manifest: record index out of range");
  const auto& rec = m.records[index];
  const auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    if (fp.is_absolute() || manifest_dir.empty()) return p;
    return (std::filesystem::path(manifest_dir) / fp).string();
  };
  ImageRecord out;
  out.image = read_pgm(resolve(rec.image));
  auto raw = load_annotations(resolve(rec.labels), out.image.width, out.image.height,
                              m.class_count());
  out.gold.reserve(raw.size());
  for (auto& [cls, box] : raw)
    out.gold.emplace_back(cls, clamp_box(box, out.image.width, out.image.height));
  return out;
}

}  // namespace degpr
