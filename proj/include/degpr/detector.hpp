#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "degpr/geometry.hpp"
#include "degpr/image.hpp"
#include "degpr/regularizer.hpp"
#include "degpr/rng.hpp"

namespace degpr {

// Minimal trainable detector: a GxG grid over the image with a shared linear
// scorer on pooled block features (mean/variance/min/max of the block plus
// its normalized coordinates). Analytic gradients end-to-end, which keeps the
// whole regularizer chain testable without autodiff.

struct DetectorConfig {
  int grid = 8;
  int class_count = 2;
  double conf_threshold = 0.7;
  double nms_iou = 0.5;
};

struct GridDetectorParams {
  static constexpr int kFeatureDim = 7;

  DetectorConfig config;
  std::vector<double> w;  // rows x kFeatureDim; rows = 1 objectness + classes + 4 box

  int rows() const { return 1 + config.class_count + 4; }
  int box_row(int j) const { return 1 + config.class_count + j; }  // j in [0,4): tx,ty,tw,th
};

inline GridDetectorParams make_detector(const DetectorConfig& cfg, Rng& rng,
                                        double init_scale = 0.01) {
  GridDetectorParams p;
  p.config = cfg;
  p.w.resize(static_cast<std::size_t>(p.rows()) * GridDetectorParams::kFeatureDim);
  for (auto& v : p.w) v = rng.normal(0.0, init_scale);
  return p;
}

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct CellRange {
  int x0, x1, y0, y1;  // pixel block [x0,x1) x [y0,y1)
};

inline CellRange cell_range(int row, int col, int grid, int width, int height) {
  CellRange r;
  r.x0 = static_cast<int>(static_cast<long long>(width) * col / grid);
  r.x1 = static_cast<int>(static_cast<long long>(width) * (col + 1) / grid);
  r.y0 = static_cast<int>(static_cast<long long>(height) * row / grid);
  r.y1 = static_cast<int>(static_cast<long long>(height) * (row + 1) / grid);
  return r;
}

inline std::array<double, GridDetectorParams::kFeatureDim> cell_features(
    const GrayImage& img, int row, int col, int grid) {
  const CellRange r = cell_range(row, col, grid, img.width, img.height);
  double sum = 0.0, sum_sq = 0.0;
  double mn = 255.0, mx = 0.0;
  for (int y = r.y0; y < r.y1; ++y) {
    for (int x = r.x0; x < r.x1; ++x) {
      const double v = img.at(x, y);
      sum += v;
      sum_sq += v * v;
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
  }
  const double n = static_cast<double>((r.x1 - r.x0) * (r.y1 - r.y0));
  const double mean = sum / n;
  const double var = std::max(0.0, sum_sq / n - mean * mean);
  return {mean / 255.0, var / 65025.0, mn / 255.0, mx / 255.0,
          (col + 0.5) / grid, (row + 0.5) / grid, 1.0};
}

}  // namespace detail

// Box targets in regression space: sigmoid offsets of the center within the
// cell, log-scale width/height relative to the cell size.
inline std::array<double, 4> encode_box(const BoundingBox& box, int row, int col,
                                        const DetectorConfig& cfg, int width, int height) {
  // Offsets clamp away from the cell border: logit targets stay bounded and
  // the decode error stays below 0.02 * cell size.
  constexpr double kEps = 0.02;
  const double cw = static_cast<double>(width) / cfg.grid;
  const double ch = static_cast<double>(height) / cfg.grid;
  const double cx = (box.w_l + box.w_r) / 2.0;
  const double cy = (box.h_l + box.h_r) / 2.0;
  const double fx = std::clamp((cx - col * cw) / cw, kEps, 1.0 - kEps);
  const double fy = std::clamp((cy - row * ch) / ch, kEps, 1.0 - kEps);
  return {std::log(fx / (1.0 - fx)), std::log(fy / (1.0 - fy)),
          std::log(std::max(box.width(), 1e-6) / cw),
          std::log(std::max(box.height(), 1e-6) / ch)};
}

inline BoundingBox decode_box(const std::array<double, 4>& t, int row, int col,
                              const DetectorConfig& cfg, int width, int height) {
  const double cw = static_cast<double>(width) / cfg.grid;
  const double ch = static_cast<double>(height) / cfg.grid;
  const double cx = (col + detail::sigmoid(t[0])) * cw;
  const double cy = (row + detail::sigmoid(t[1])) * ch;
  const double bw = cw * std::exp(t[2]);
  const double bh = ch * std::exp(t[3]);
  return {cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0};
}

struct RawDetection {
  Detection det;                       // clamped box
  int row = 0, col = 0;
  std::array<double, 4> t_box{};       // regression outputs that produced it
  std::array<bool, 4> corner_clamped{};  // w_l, h_l, w_r, h_r hit the image border
};

// Greedy per-class non-maximum suppression: candidates are visited in
// descending confidence (stable, so grid order breaks ties) and dropped when
// they overlap an already-kept box of the same class beyond nms_iou.
inline std::vector<RawDetection> nms_filter(std::vector<RawDetection> candidates,
                                            double nms_iou) {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return candidates[a].det.confidence > candidates[b].det.confidence;
  });
  std::vector<RawDetection> kept;
  for (std::size_t idx : order) {
    const RawDetection& cand = candidates[idx];
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.det.class_id == cand.det.class_id && iou(k.det.box, cand.det.box) > nms_iou) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

/// Thresholded, per-class greedy-NMS detections with their grid provenance.
inline std::vector<RawDetection> detect_verbose(const GridDetectorParams& p,
                                                const GrayImage& img, double conf_threshold,
                                                double nms_iou = 0.5) {
  const int G = p.config.grid;
  const int C = p.config.class_count;
  std::vector<RawDetection> candidates;
  for (int r = 0; r < G; ++r) {
    for (int c = 0; c < G; ++c) {
      const auto f = detail::cell_features(img, r, c, G);
      std::vector<double> t(p.rows());
      for (int row = 0; row < p.rows(); ++row) {
        const double* wr = p.w.data() + static_cast<std::size_t>(row) * f.size();
        double acc = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) acc += wr[i] * f[i];
        t[row] = acc;
      }
      const double obj = detail::sigmoid(t[0]);
      double max_logit = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < C; ++k) max_logit = std::max(max_logit, t[1 + k]);
      double denom = 0.0;
      for (int k = 0; k < C; ++k) denom += std::exp(t[1 + k] - max_logit);
      int best = 0;
      double best_p = -1.0;
      for (int k = 0; k < C; ++k) {
        const double pk = std::exp(t[1 + k] - max_logit) / denom;
        if (pk > best_p) {
          best_p = pk;
          best = k;
        }
      }
      const double conf = obj * best_p;
      if (conf < conf_threshold) continue;

      RawDetection rd;
      rd.row = r;
      rd.col = c;
      for (int j = 0; j < 4; ++j) rd.t_box[j] = t[p.box_row(j)];
      const BoundingBox raw = decode_box(rd.t_box, r, c, p.config, img.width, img.height);
      const BoundingBox clamped = clamp_box(raw, img.width, img.height);
      rd.corner_clamped = {clamped.w_l != raw.w_l, clamped.h_l != raw.h_l,
                           clamped.w_r != raw.w_r, clamped.h_r != raw.h_r};
      rd.det = Detection{clamped, best, conf};
      candidates.push_back(rd);
    }
  }

  return nms_filter(std::move(candidates), nms_iou);
}

inline std::vector<Detection> detect(const GridDetectorParams& p, const GrayImage& img,
                                     double conf_threshold, double nms_iou = 0.5) {
  std::vector<Detection> out;
  for (const auto& rd : detect_verbose(p, img, conf_threshold, nms_iou)) out.push_back(rd.det);
  return out;
}

struct DetectionLoss {
  double value = 0.0;
  double l_obj = 0.0, l_cls = 0.0, l_loc = 0.0;
  std::vector<double> grad;  // same layout as GridDetectorParams::w
};

// L_det = L_obj + L_cls + L_loc: binary cross-entropy on objectness against
// the gold cell assignment, cross-entropy on the class of assigned cells,
// squared error on box regression targets. Cells with several gold centers
// keep the largest box.
inline DetectionLoss detection_loss(const GridDetectorParams& p, const ImageRecord& record) {
  const int G = p.config.grid;
  const int C = p.config.class_count;
  const GrayImage& img = record.image;
  DetectionLoss out;
  out.grad.assign(p.w.size(), 0.0);

  // gold assignment: the cell holding the box center; collisions keep the
  // larger box
  struct Target {
    bool assigned = false;
    int class_id = 0;
    double area = -1.0;
    std::array<double, 4> t{};
  };
  std::vector<Target> targets(static_cast<std::size_t>(G) * G);
  const double cw = static_cast<double>(img.width) / G;
  const double ch = static_cast<double>(img.height) / G;
  for (const auto& [cls, box] : record.gold) {
    const double cx = (box.w_l + box.w_r) / 2.0;
    const double cy = (box.h_l + box.h_r) / 2.0;
    const int col = std::clamp(static_cast<int>(cx / cw), 0, G - 1);
    const int row = std::clamp(static_cast<int>(cy / ch), 0, G - 1);
    Target& tg = targets[static_cast<std::size_t>(row) * G + col];
    if (tg.assigned && tg.area >= box.area()) continue;
    tg.assigned = true;
    tg.class_id = cls;
    tg.area = box.area();
    tg.t = encode_box(box, row, col, p.config, img.width, img.height);
  }
  int assigned = 0;
  for (const auto& tg : targets)
    if (tg.assigned) ++assigned;

  // objectness BCE balanced between object and background cells, so sparse
  // positives are not swamped by the empty majority
  const double pos_norm = assigned > 0 ? 0.5 / assigned : 0.0;
  const double neg_cells = static_cast<double>(G) * G - assigned;
  const double neg_norm = neg_cells > 0 ? (assigned > 0 ? 0.5 : 1.0) / neg_cells : 0.0;
  const double cls_norm = assigned > 0 ? 1.0 / assigned : 0.0;

  std::vector<double> t(p.rows());
  std::vector<double> dt(p.rows());
  for (int r = 0; r < G; ++r) {
    for (int c = 0; c < G; ++c) {
      const auto f = detail::cell_features(img, r, c, G);
      for (int row = 0; row < p.rows(); ++row) {
        const double* wr = p.w.data() + static_cast<std::size_t>(row) * f.size();
        double acc = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) acc += wr[i] * f[i];
        t[row] = acc;
      }
      std::fill(dt.begin(), dt.end(), 0.0);
      const Target& tg = targets[static_cast<std::size_t>(r) * G + c];

      // objectness BCE (numerically via softplus)
      const double y = tg.assigned ? 1.0 : 0.0;
      const double obj_norm = tg.assigned ? pos_norm : neg_norm;
      const double z = t[0];
      const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
      out.l_obj += (softplus - y * z) * obj_norm;
      dt[0] = (detail::sigmoid(z) - y) * obj_norm;

      if (tg.assigned) {
        // class cross-entropy
        double max_logit = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < C; ++k) max_logit = std::max(max_logit, t[1 + k]);
        double denom = 0.0;
        for (int k = 0; k < C; ++k) denom += std::exp(t[1 + k] - max_logit);
        out.l_cls += (std::log(denom) + max_logit - t[1 + tg.class_id]) * cls_norm;
        for (int k = 0; k < C; ++k) {
          const double pk = std::exp(t[1 + k] - max_logit) / denom;
          dt[1 + k] = (pk - (k == tg.class_id ? 1.0 : 0.0)) * cls_norm;
        }
        // box regression squared error
        for (int j = 0; j < 4; ++j) {
          const double diff = t[p.box_row(j)] - tg.t[j];
          out.l_loc += diff * diff * cls_norm;
          dt[p.box_row(j)] = 2.0 * diff * cls_norm;
        }
      }

      for (int row = 0; row < p.rows(); ++row) {
        if (dt[row] == 0.0) continue;
        double* gr = out.grad.data() + static_cast<std::size_t>(row) * f.size();
        for (std::size_t i = 0; i < f.size(); ++i) gr[i] += dt[row] * f[i];
      }
    }
  }
  out.value = out.l_obj + out.l_cls + out.l_loc;
  return out;
}

struct RegularizerSetup {
  RegularizerConfig config;
  const EncoderParams* encoder = nullptr;  // required when implicit_weight > 0
  const PcaProjection* pca = nullptr;
  int patch_size = 224;
  // Confidence cut for the predictions the regularizer sees during training.
  // Lower than the evaluation threshold so the distribution alignment starts
  // while the detector is still uncertain.
  double train_conf_threshold = 0.25;
};

struct TrainDetectorConfig {
  int epochs = 150;
  int batch_size = 8;
  double learning_rate = 0.3;
  double momentum = 0.9;
  double init_scale = 0.01;
  // learning rate decays linearly to learning_rate * final_lr_fraction
  double final_lr_fraction = 1.0;
  std::uint64_t seed = 1;
  DetectorConfig detector;
};

struct TrainDetectorResult {
  GridDetectorParams params;
  std::vector<LossReport> epoch_trace;  // per-epoch batch means
};

// Minibatch SGD with momentum on the total loss. With lambda_reg = 0 (or no
// regularizer) the run is bit-identical to plain detection training: the
// regularizer branch is never entered and consumes no randomness.
inline TrainDetectorResult train_detector(const std::vector<ImageRecord>& scenes,
                                          const TrainDetectorConfig& cfg,
                                          const RegularizerSetup* reg = nullptr) {
  if (scenes.empty()) throw std::invalid_argument("train_detector: no training scenes");
  const bool use_reg = reg != nullptr && reg->config.lambda_reg > 0.0 &&
                       (reg->config.explicit_weight > 0.0 || reg->config.implicit_weight > 0.0);
  const bool use_implicit = use_reg && reg->config.implicit_weight > 0.0;
  if (use_implicit && (reg->encoder == nullptr || reg->pca == nullptr))
    throw std::invalid_argument("train_detector: implicit loss requires encoder and pca");

  Rng init_rng(derive_seed(cfg.seed, 7));
  GridDetectorParams params = make_detector(cfg.detector, init_rng, cfg.init_scale);
  std::vector<double> velocity(params.w.size(), 0.0);

  TrainDetectorResult result;
  const int n = static_cast<int>(scenes.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  ImplicitExtractor extractor;
  std::vector<ClassEmbeddingMeans> gold_means;  // per scene, frozen encoder
  if (use_implicit) {
    extractor.encoder = reg->encoder;
    extractor.pca = reg->pca;
    extractor.patch_size = reg->patch_size;
    gold_means.reserve(scenes.size());
    for (const auto& scene : scenes)
      gold_means.push_back(gold_embedding_means(scene, cfg.detector.class_count, extractor));
  }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(epoch)));
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[rng.index(static_cast<std::size_t>(i) + 1)]);
    const double lr_frac =
        cfg.epochs > 1 ? 1.0 - (1.0 - cfg.final_lr_fraction) * epoch / (cfg.epochs - 1.0) : 1.0;
    const double lr = cfg.learning_rate * lr_frac;

    double ep_det = 0, ep_exp = 0, ep_imp = 0;
    int ep_skipped = 0;
    int batches = 0;

    for (int start = 0; start < n; start += cfg.batch_size) {
      const int end = std::min(n, start + cfg.batch_size);
      const int bn = end - start;
      std::vector<double> grad(params.w.size(), 0.0);
      double l_det = 0.0;

      std::vector<ImageRecord> batch_records;
      std::vector<ClassEmbeddingMeans> batch_gold_means;
      batch_records.reserve(bn);
      for (int bi = start; bi < end; ++bi) {
        batch_records.push_back(scenes[order[bi]]);
        if (use_implicit) batch_gold_means.push_back(gold_means[order[bi]]);
      }

      for (const auto& rec : batch_records) {
        const DetectionLoss dl = detection_loss(params, rec);
        l_det += dl.value / bn;
        for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += dl.grad[j] / bn;
      }

      double l_exp = 0.0, l_imp = 0.0;
      int skipped = 0;
      if (use_reg) {
        // current predictions for the whole minibatch
        std::vector<std::vector<RawDetection>> raw(bn);
        std::vector<std::vector<Detection>> dets(bn);
        for (int bi = 0; bi < bn; ++bi) {
          raw[bi] = detect_verbose(params, batch_records[bi].image,
                                   reg->train_conf_threshold, cfg.detector.nms_iou);
          for (const auto& rd : raw[bi]) dets[bi].push_back(rd.det);
        }

        if (reg->config.explicit_weight > 0.0) {
          const RegLossResult exp_loss = explicit_loss(batch_records, dets,
                                                       cfg.detector.class_count, reg->config);
          l_exp = exp_loss.value();
          skipped += exp_loss.pair.skipped_pairs;
          const auto box_grads =
              explicit_box_grads(batch_records, dets, cfg.detector.class_count,
                                 exp_loss.samples, exp_loss.fits, reg->config);
          const double scale = reg->config.lambda_reg * reg->config.explicit_weight;
          for (int bi = 0; bi < bn; ++bi) {
            const GrayImage& img = batch_records[bi].image;
            const double cw = static_cast<double>(img.width) / cfg.detector.grid;
            const double ch = static_cast<double>(img.height) / cfg.detector.grid;
            for (std::size_t d = 0; d < raw[bi].size(); ++d) {
              const BoxCoordGrad& bg = box_grads[bi][d];
              const RawDetection& rd = raw[bi][d];
              const double sx = detail::sigmoid(rd.t_box[0]);
              const double sy = detail::sigmoid(rd.t_box[1]);
              const double bw = cw * std::exp(rd.t_box[2]);
              const double bh = ch * std::exp(rd.t_box[3]);
              const double g_wl = rd.corner_clamped[0] ? 0.0 : bg.w_l;
              const double g_hl = rd.corner_clamped[1] ? 0.0 : bg.h_l;
              const double g_wr = rd.corner_clamped[2] ? 0.0 : bg.w_r;
              const double g_hr = rd.corner_clamped[3] ? 0.0 : bg.h_r;
              std::array<double, 4> dt{};
              dt[0] = (g_wl + g_wr) * cw * sx * (1.0 - sx);
              dt[1] = (g_hl + g_hr) * ch * sy * (1.0 - sy);
              dt[2] = (g_wr - g_wl) * bw / 2.0;
              dt[3] = (g_hr - g_hl) * bh / 2.0;
              const auto f = detail::cell_features(img, rd.row, rd.col, cfg.detector.grid);
              for (int j = 0; j < 4; ++j) {
                if (dt[j] == 0.0) continue;
                double* gr = grad.data() +
                             static_cast<std::size_t>(params.box_row(j)) * f.size();
                for (std::size_t fi = 0; fi < f.size(); ++fi)
                  gr[fi] += scale * dt[j] * f[fi];
              }
            }
          }
        }
        if (use_implicit) {
          const RegLossResult imp_loss =
              implicit_loss(batch_records, dets, cfg.detector.class_count, reg->config,
                            extractor, &batch_gold_means);
          l_imp = imp_loss.value();
          skipped += imp_loss.pair.skipped_pairs;
        }
      }

      const LossReport report =
          use_reg ? total_loss(l_det, l_exp, l_imp, reg->config)
                  : LossReport{l_det, 0.0, 0.0, l_det, 0, false};
      if (!std::isfinite(report.l_total))
        throw std::runtime_error("train_detector: loss diverged at epoch " +
                                 std::to_string(epoch));
      ep_det += report.l_det;
      ep_exp += report.l_exp;
      ep_imp += report.l_imp;
      ep_skipped += skipped;
      ++batches;

      for (std::size_t j = 0; j < params.w.size(); ++j) {
        velocity[j] = cfg.momentum * velocity[j] - lr * grad[j];
        params.w[j] += velocity[j];
      }
    }

    LossReport epoch_report;
    epoch_report.l_det = ep_det / batches;
    epoch_report.l_exp = ep_exp / batches;
    epoch_report.l_imp = ep_imp / batches;
    if (use_reg) {
      epoch_report.l_total =
          epoch_report.l_det + reg->config.lambda_reg *
                                   (reg->config.explicit_weight * epoch_report.l_exp +
                                    reg->config.implicit_weight * epoch_report.l_imp);
    } else {
      epoch_report.l_total = epoch_report.l_det;
    }
    epoch_report.skipped_pairs = ep_skipped;
    result.epoch_trace.push_back(epoch_report);
  }

  result.params = std::move(params);
  return result;
}

}  // namespace degpr
