#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "degpr/annotations.hpp"
#include "degpr/detector.hpp"
#include "degpr/encoder.hpp"
#include "degpr/gmm.hpp"
#include "degpr/pca.hpp"
#include "degpr/scene.hpp"

namespace degpr {

// JSON persistence for trained artifacts and configs. Every document carries
// a format_version field; loads are strict about keys and versions.

inline constexpr int kFormatVersion = 1;

namespace detail {

inline nlohmann::json load_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(std::string(what) + ": cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string(what) + ": invalid JSON in " + path + ": " + e.what());
  }
  return j;
}

inline void save_json_file(const nlohmann::json& j, const std::string& path, const char* what) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(std::string(what) + ": cannot write " + path);
  out << j.dump(2) << "\n";
}

inline void check_version(const nlohmann::json& j, const char* what) {
  if (!j.contains("format_version") || j.at("format_version").get<int>() != kFormatVersion)
    throw std::runtime_error(std::string(what) + ": unsupported format_version");
}

}  // namespace detail

// ---- Gmm ----

inline nlohmann::json to_json(const Gmm& g) {
  return {{"format_version", kFormatVersion},
          {"dimension", g.dim},
          {"components", g.components()},
          {"weights", g.weights},
          {"means", g.means},
          {"covariances", g.variances}};
}

inline Gmm gmm_from_json(const nlohmann::json& j) {
  detail::check_version(j, "gmm");
  detail::reject_unknown_keys(
      j, {"format_version", "dimension", "components", "weights", "means", "covariances"},
      "gmm");
  Gmm g;
  g.dim = j.at("dimension").get<int>();
  g.weights = j.at("weights").get<std::vector<double>>();
  g.means = j.at("means").get<std::vector<std::vector<double>>>();
  g.variances = j.at("covariances").get<std::vector<std::vector<double>>>();
  if (j.at("components").get<int>() != g.components())
    throw std::runtime_error("gmm: component count mismatch");
  validate(g);
  return g;
}

inline void save_gmm(const Gmm& g, const std::string& path) {
  detail::save_json_file(to_json(g), path, "gmm");
}

inline Gmm load_gmm(const std::string& path) {
  return gmm_from_json(detail::load_json_file(path, "gmm"));
}

// ---- EncoderParams + PcaProjection ----

inline nlohmann::json to_json(const EncoderParams& p) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : p.layers)
    layers.push_back({{"in", l.in}, {"out", l.out}, {"w", l.w}, {"b", l.b}});
  return {{"format_version", kFormatVersion}, {"input_side", p.input_side}, {"layers", layers}};
}

inline EncoderParams encoder_from_json(const nlohmann::json& j) {
  detail::check_version(j, "encoder");
  detail::reject_unknown_keys(j, {"format_version", "input_side", "layers"}, "encoder");
  EncoderParams p;
  p.input_side = j.at("input_side").get<int>();
  for (const auto& jl : j.at("layers")) {
    detail::reject_unknown_keys(jl, {"in", "out", "w", "b"}, "encoder layer");
    DenseLayer l;
    l.in = jl.at("in").get<int>();
    l.out = jl.at("out").get<int>();
    l.w = jl.at("w").get<std::vector<double>>();
    l.b = jl.at("b").get<std::vector<double>>();
    if (l.w.size() != static_cast<std::size_t>(l.in) * l.out ||
        l.b.size() != static_cast<std::size_t>(l.out))
      throw std::runtime_error("encoder: layer shape mismatch");
    p.layers.push_back(std::move(l));
  }
  if (p.layers.empty()) throw std::runtime_error("encoder: no layers");
  return p;
}

inline nlohmann::json to_json(const PcaProjection& p) {
  return {{"format_version", kFormatVersion},
          {"mean", p.mean},
          {"components", p.components},
          {"eigenvalues", p.eigenvalues},
          {"explained_variance", p.explained_variance},
          {"input_dim", p.input_dim}};
}

inline PcaProjection pca_from_json(const nlohmann::json& j) {
  detail::check_version(j, "pca");
  detail::reject_unknown_keys(j,
                              {"format_version", "mean", "components", "eigenvalues",
                               "explained_variance", "input_dim"},
                              "pca");
  PcaProjection p;
  p.mean = j.at("mean").get<std::vector<double>>();
  p.components = j.at("components").get<std::vector<std::vector<double>>>();
  p.eigenvalues = j.at("eigenvalues").get<std::vector<double>>();
  p.explained_variance = j.at("explained_variance").get<double>();
  p.input_dim = j.at("input_dim").get<int>();
  for (const auto& c : p.components)
    if (static_cast<int>(c.size()) != p.input_dim)
      throw std::runtime_error("pca: component dimension mismatch");
  return p;
}

// Combined feature-extractor document written by encoder pretraining.
inline void save_feature_extractor(const EncoderParams& enc, const PcaProjection& pca,
                                   const std::string& path) {
  nlohmann::json j{{"format_version", kFormatVersion},
                   {"encoder", to_json(enc)},
                   {"pca", to_json(pca)}};
  detail::save_json_file(j, path, "feature extractor");
}

inline std::pair<EncoderParams, PcaProjection> load_feature_extractor(const std::string& path) {
  const nlohmann::json j = detail::load_json_file(path, "feature extractor");
  detail::check_version(j, "feature extractor");
  detail::reject_unknown_keys(j, {"format_version", "encoder", "pca"}, "feature extractor");
  return {encoder_from_json(j.at("encoder")), pca_from_json(j.at("pca"))};
}

// ---- SceneSpec ----

inline nlohmann::json to_json(const SceneSpec& s) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : s.classes) {
    classes.push_back({{"count_mean", c.count_mean},
                       {"radius_mean", c.radius_mean},
                       {"radius_sigma", c.radius_sigma},
                       {"intensity_mean", c.intensity_mean},
                       {"intensity_sigma", c.intensity_sigma},
                       {"aspect_min", c.aspect_min},
                       {"aspect_max", c.aspect_max}});
  }
  return {{"format_version", kFormatVersion},
          {"width", s.width},
          {"height", s.height},
          {"classes", classes},
          {"background", s.background},
          {"noise_sigma", s.noise_sigma},
          {"max_overlap_iou", s.max_overlap_iou},
          {"seed", s.seed}};
}

inline SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  detail::check_version(j, "scene spec");
  detail::reject_unknown_keys(j,
                              {"format_version", "width", "height", "classes", "background",
                               "noise_sigma", "max_overlap_iou", "seed"},
                              "scene spec");
  SceneSpec s;
  s.width = j.at("width").get<int>();
  s.height = j.at("height").get<int>();
  s.background = j.at("background").get<double>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.max_overlap_iou = j.at("max_overlap_iou").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& jc : j.at("classes")) {
    detail::reject_unknown_keys(jc,
                                {"count_mean", "radius_mean", "radius_sigma", "intensity_mean",
                                 "intensity_sigma", "aspect_min", "aspect_max"},
                                "scene class");
    ClassSpec c;
    c.count_mean = jc.at("count_mean").get<double>();
    c.radius_mean = jc.at("radius_mean").get<double>();
    c.radius_sigma = jc.at("radius_sigma").get<double>();
    c.intensity_mean = jc.at("intensity_mean").get<double>();
    c.intensity_sigma = jc.at("intensity_sigma").get<double>();
    c.aspect_min = jc.at("aspect_min").get<double>();
    c.aspect_max = jc.at("aspect_max").get<double>();
    s.classes.push_back(c);
  }
  validate(s);
  return s;
}

inline SceneSpec load_scene_spec(const std::string& path) {
  return scene_spec_from_json(detail::load_json_file(path, "scene spec"));
}

inline void save_scene_spec(const SceneSpec& s, const std::string& path) {
  detail::save_json_file(to_json(s), path, "scene spec");
}

// ---- GridDetectorParams ----

inline nlohmann::json to_json(const GridDetectorParams& p) {
  return {{"format_version", kFormatVersion},
          {"grid", p.config.grid},
          {"class_count", p.config.class_count},
          {"conf_threshold", p.config.conf_threshold},
          {"nms_iou", p.config.nms_iou},
          {"weights", p.w}};
}

inline GridDetectorParams detector_from_json(const nlohmann::json& j) {
  detail::check_version(j, "detector");
  detail::reject_unknown_keys(
      j, {"format_version", "grid", "class_count", "conf_threshold", "nms_iou", "weights"},
      "detector");
  GridDetectorParams p;
  p.config.grid = j.at("grid").get<int>();
  p.config.class_count = j.at("class_count").get<int>();
  p.config.conf_threshold = j.at("conf_threshold").get<double>();
  p.config.nms_iou = j.at("nms_iou").get<double>();
  p.w = j.at("weights").get<std::vector<double>>();
  if (p.w.size() != static_cast<std::size_t>(p.rows()) * GridDetectorParams::kFeatureDim)
    throw std::runtime_error("detector: weight size mismatch");
  return p;
}

inline void save_detector(const GridDetectorParams& p, const std::string& path) {
  detail::save_json_file(to_json(p), path, "detector");
}

inline GridDetectorParams load_detector(const std::string& path) {
  return detector_from_json(detail::load_json_file(path, "detector"));
}

}  // namespace degpr
