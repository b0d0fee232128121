#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "degpr/geometry.hpp"

namespace degpr {

// Greedy confidence-ordered matching and the detection/counting metrics built
// on it. Matching respects class equality; each gold box and each prediction
// is used at most once.

struct MatchResult {
  std::vector<std::pair<int, int>> matches;  // (prediction index, gold index)
  std::vector<int> unmatched_preds;          // false positives
  std::vector<int> unmatched_golds;          // false negatives
};

inline MatchResult match_detections(const std::vector<Detection>& preds,
                                    const std::vector<std::pair<int, BoundingBox>>& golds,
                                    double iou_threshold) {
  MatchResult out;
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return preds[a].confidence > preds[b].confidence;
  });
  std::vector<bool> gold_used(golds.size(), false);
  std::vector<bool> pred_matched(preds.size(), false);
  for (std::size_t oi : order) {
    const Detection& p = preds[oi];
    double best_iou = 0.0;
    int best_gold = -1;
    for (std::size_t g = 0; g < golds.size(); ++g) {
      if (gold_used[g] || golds[g].first != p.class_id) continue;
      const double v = iou(p.box, golds[g].second);
      if (v >= iou_threshold && v > best_iou) {
        best_iou = v;
        best_gold = static_cast<int>(g);
      }
    }
    if (best_gold >= 0) {
      gold_used[best_gold] = true;
      pred_matched[oi] = true;
      out.matches.emplace_back(static_cast<int>(oi), best_gold);
    }
  }
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (!pred_matched[i]) out.unmatched_preds.push_back(static_cast<int>(i));
  for (std::size_t g = 0; g < golds.size(); ++g)
    if (!gold_used[g]) out.unmatched_golds.push_back(static_cast<int>(g));
  return out;
}

// All-points-interpolated average precision from (confidence, is_tp) pairs.
// gold_count is the number of gold boxes of the class across the dataset.
inline double average_precision(std::vector<std::pair<double, bool>> scored, int gold_count) {
  if (gold_count <= 0) throw std::invalid_argument("average_precision: no gold boxes");
  if (scored.empty()) return 0.0;
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const auto& [conf, is_tp] : scored) {
    (is_tp ? tp : fp)++;
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / gold_count);
  }
  // precision envelope: max precision at recall >= r
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

struct ClassMetrics {
  int gold = 0;
  int tp = 0;
  int fp = 0;
  double ap = 0.0;
  double precision() const { return tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0; }
  double recall() const { return gold > 0 ? static_cast<double>(tp) / gold : 0.0; }
};

struct DetectionMetrics {
  std::vector<ClassMetrics> per_class;
  double map = 0.0;        // mean AP over classes with gold boxes
  double precision = 0.0;  // micro-averaged
  double recall = 0.0;
  std::vector<int> classes_without_gold;  // excluded from mAP
};

// Dataset-level detection metrics at a single IoU threshold.
inline DetectionMetrics evaluate_detections(
    const std::vector<std::vector<Detection>>& preds,
    const std::vector<std::vector<std::pair<int, BoundingBox>>>& golds, double iou_threshold,
    int class_count) {
  if (preds.size() != golds.size())
    throw std::invalid_argument("evaluate_detections: image count mismatch");
  DetectionMetrics out;
  out.per_class.resize(class_count);
  std::vector<std::vector<std::pair<double, bool>>> scored(class_count);

  for (std::size_t im = 0; im < preds.size(); ++im) {
    const MatchResult m = match_detections(preds[im], golds[im], iou_threshold);
    std::vector<bool> matched(preds[im].size(), false);
    for (const auto& [pi, gi] : m.matches) matched[pi] = true;
    for (std::size_t pi = 0; pi < preds[im].size(); ++pi) {
      const int c = preds[im][pi].class_id;
      if (c < 0 || c >= class_count) continue;
      scored[c].emplace_back(preds[im][pi].confidence, matched[pi]);
      matched[pi] ? ++out.per_class[c].tp : ++out.per_class[c].fp;
    }
    for (const auto& [cls, box] : golds[im])
      if (cls >= 0 && cls < class_count) ++out.per_class[cls].gold;
  }

  double ap_sum = 0.0;
  int ap_classes = 0;
  long total_tp = 0, total_fp = 0, total_gold = 0;
  for (int c = 0; c < class_count; ++c) {
    ClassMetrics& cm = out.per_class[c];
    total_tp += cm.tp;
    total_fp += cm.fp;
    total_gold += cm.gold;
    if (cm.gold == 0) {
      out.classes_without_gold.push_back(c);
      continue;
    }
    cm.ap = average_precision(scored[c], cm.gold);
    ap_sum += cm.ap;
    ++ap_classes;
  }
  out.map = ap_classes > 0 ? ap_sum / ap_classes : 0.0;
  out.precision = (total_tp + total_fp) > 0 ? static_cast<double>(total_tp) / (total_tp + total_fp)
                                            : 0.0;
  out.recall = total_gold > 0 ? static_cast<double>(total_tp) / total_gold : 0.0;
  return out;
}

// A subimage's detections and golds, keyed by the full image it came from.
struct TileCounts {
  std::string source;
  std::vector<Detection> preds;
  std::vector<std::pair<int, BoundingBox>> golds;
};

struct CountReport {
  struct PerImage {
    std::string source;
    std::vector<long> pred;  // per class
    std::vector<long> gold;
  };
  std::vector<PerImage> images;         // sorted by source id
  std::vector<double> mae_per_class;
  std::vector<double> mre_per_class;    // percent; images with gold=0 excluded
  double mae_avg = 0.0;                 // mean of per-class MAEs
  double mre_avg = 0.0;
};

// Counting metrics on recomposed full images: per-subimage counts are summed
// by source before any error is computed.
inline CountReport counting_report(const std::vector<TileCounts>& tiles, int class_count) {
  std::map<std::string, std::pair<std::vector<long>, std::vector<long>>> by_source;
  for (const auto& t : tiles) {
    auto& entry = by_source[t.source];
    if (entry.first.empty()) {
      entry.first.assign(class_count, 0);
      entry.second.assign(class_count, 0);
    }
    for (const auto& d : t.preds)
      if (d.class_id >= 0 && d.class_id < class_count) ++entry.first[d.class_id];
    for (const auto& [cls, box] : t.golds)
      if (cls >= 0 && cls < class_count) ++entry.second[cls];
  }

  CountReport out;
  for (const auto& [source, counts] : by_source)
    out.images.push_back({source, counts.first, counts.second});

  out.mae_per_class.assign(class_count, 0.0);
  out.mre_per_class.assign(class_count, 0.0);
  for (int c = 0; c < class_count; ++c) {
    double abs_sum = 0.0, rel_sum = 0.0;
    int rel_n = 0;
    for (const auto& im : out.images) {
      const double err = std::abs(static_cast<double>(im.pred[c] - im.gold[c]));
      abs_sum += err;
      if (im.gold[c] > 0) {
        rel_sum += err / im.gold[c] * 100.0;
        ++rel_n;
      }
    }
    out.mae_per_class[c] = out.images.empty() ? 0.0 : abs_sum / out.images.size();
    out.mre_per_class[c] = rel_n > 0 ? rel_sum / rel_n : 0.0;
  }
  out.mae_avg = class_count > 0
                    ? std::accumulate(out.mae_per_class.begin(), out.mae_per_class.end(), 0.0) /
                          class_count
                    : 0.0;
  out.mre_avg = class_count > 0
                    ? std::accumulate(out.mre_per_class.begin(), out.mre_per_class.end(), 0.0) /
                          class_count
                    : 0.0;
  return out;
}

/// IELs per 100 ENs.
inline double q_ratio(long iel_count, long en_count) {
  if (en_count <= 0) throw std::invalid_argument("q_ratio: undefined for en_count <= 0");
  return 100.0 * static_cast<double>(iel_count) / static_cast<double>(en_count);
}

/// Celiac iff the Q-histology ratio reaches 25 (boundary inclusive).
inline bool classify_celiac(double ratio) { return ratio >= 25.0; }

struct ClassificationMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  int tp = 0, fp = 0, tn = 0, fn = 0;
};

// Binary metrics with "celiac" (true) as the positive class.
inline ClassificationMetrics classification_metrics(const std::vector<bool>& predicted,
                                                    const std::vector<bool>& gold) {
  if (predicted.size() != gold.size())
    throw std::invalid_argument("classification_metrics: label list size mismatch");
  ClassificationMetrics m;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] && gold[i]) ++m.tp;
    else if (predicted[i] && !gold[i]) ++m.fp;
    else if (!predicted[i] && gold[i]) ++m.fn;
    else ++m.tn;
  }
  m.precision = (m.tp + m.fp) > 0 ? static_cast<double>(m.tp) / (m.tp + m.fp) : 0.0;
  m.recall = (m.tp + m.fn) > 0 ? static_cast<double>(m.tp) / (m.tp + m.fn) : 0.0;
  m.f1 = (m.precision + m.recall) > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                      : 0.0;
  const int n = m.tp + m.fp + m.tn + m.fn;
  m.accuracy = n > 0 ? static_cast<double>(m.tp + m.tn) / n : 0.0;
  return m;
}

}  // namespace degpr
