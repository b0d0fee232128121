#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "degpr/encoder.hpp"
#include "degpr/features.hpp"
#include "degpr/geometry.hpp"
#include "degpr/gmm.hpp"
#include "degpr/image.hpp"
#include "degpr/pca.hpp"
#include "degpr/rng.hpp"

namespace degpr {

// Posterior-regularization losses: per class pair, a GMM is fit on the gold
// discriminative vectors of the minibatch and another on the predicted ones,
// and the divergence between the two fits is averaged over pairs.

enum class McMode { kPaired, kStandard };
enum class MissingClassPolicy { kSkipPair, kZeroContribution };

struct RegularizerConfig {
  double lambda_reg = 0.01;
  double explicit_weight = 1.0;
  double implicit_weight = 1.0;
  int gmm_components = 1;
  McMode mc_mode = McMode::kPaired;
  MissingClassPolicy missing_class = MissingClassPolicy::kSkipPair;
  // The paper's pair average divides by C(n,2) even when pairs are missing;
  // the default divides by the number of evaluated pairs instead.
  bool strict_pair_denominator = false;
  int mc_samples = 100000;
  std::uint64_t seed = 1;
};

// Discriminative vectors for one class pair across a minibatch. An item holds
// the per-image gold and predicted vectors when they exist; a side is absent
// when the image lacks one of the two classes under the skip-pair policy.
struct PairSamples {
  int class_i = 0;
  int class_k = 0;
  struct Item {
    int image = 0;
    std::optional<std::vector<double>> gold;
    std::optional<std::vector<double>> pred;
  };
  std::vector<Item> items;

  std::vector<std::vector<double>> gold_list() const {
    std::vector<std::vector<double>> out;
    for (const auto& it : items)
      if (it.gold) out.push_back(*it.gold);
    return out;
  }
  std::vector<std::vector<double>> pred_list() const {
    std::vector<std::vector<double>> out;
    for (const auto& it : items)
      if (it.pred) out.push_back(*it.pred);
    return out;
  }
};

namespace detail {

inline bool has_pixel_coverage(const GrayImage& img, const BoundingBox& box) {
  const BoundingBox c = clamp_box(box, img.width, img.height);
  const int x_lo = std::max(static_cast<int>(std::ceil(c.w_l)), 0);
  const int x_hi = std::min(static_cast<int>(std::floor(c.w_r)), img.width - 1);
  const int y_lo = std::max(static_cast<int>(std::ceil(c.h_l)), 0);
  const int y_hi = std::min(static_cast<int>(std::floor(c.h_r)), img.height - 1);
  return x_lo <= x_hi && y_lo <= y_hi;
}

struct ClassGroups {
  BoxesByClass boxes;
  std::vector<std::vector<int>> det_indices;  // detection index per kept box
};

inline ClassGroups group_gold(const GrayImage& img,
                              const std::vector<std::pair<int, BoundingBox>>& gold,
                              int class_count) {
  ClassGroups g;
  g.boxes.resize(class_count);
  g.det_indices.resize(class_count);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto& [cls, box] = gold[i];
    if (cls < 0 || cls >= class_count) continue;
    if (!has_pixel_coverage(img, box)) continue;
    g.boxes[cls].push_back(box);
    g.det_indices[cls].push_back(static_cast<int>(i));
  }
  return g;
}

inline ClassGroups group_predictions(const GrayImage& img, const std::vector<Detection>& dets,
                                     int class_count) {
  ClassGroups g;
  g.boxes.resize(class_count);
  g.det_indices.resize(class_count);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const Detection& d = dets[i];
    if (d.class_id < 0 || d.class_id >= class_count) continue;
    if (!has_pixel_coverage(img, d.box)) continue;
    g.boxes[d.class_id].push_back(d.box);
    g.det_indices[d.class_id].push_back(static_cast<int>(i));
  }
  return g;
}

// Per-class averages of [intensity, size] with the zero-contribution rule:
// a missing class averages to zero.
inline std::optional<std::array<double, 2>> pair_vector_from_groups(
    const GrayImage& img, const ClassGroups& g, int ci, int ck, MissingClassPolicy policy) {
  const auto& bi = g.boxes[ci];
  const auto& bk = g.boxes[ck];
  if (policy == MissingClassPolicy::kSkipPair && (bi.empty() || bk.empty())) return std::nullopt;
  if (bi.empty() && bk.empty()) return std::nullopt;
  const auto avg = [&](const std::vector<BoundingBox>& bs) -> std::array<double, 2> {
    if (bs.empty()) return {0.0, 0.0};
    double isum = 0, ssum = 0;
    for (const auto& b : bs) {
      isum += intensity_feature(img, b);
      ssum += size_feature(b);
    }
    const double n = static_cast<double>(bs.size());
    return {isum / n, ssum / n};
  };
  const auto ai = avg(bi);
  const auto ak = avg(bk);
  return std::array<double, 2>{ai[0] - ak[0], ai[1] - ak[1]};
}

}  // namespace detail

inline std::vector<PairSamples> explicit_pair_samples(
    std::span<const ImageRecord> records, std::span<const std::vector<Detection>> detections,
    int class_count, const RegularizerConfig& cfg) {
  if (records.size() != detections.size())
    throw std::invalid_argument("explicit_pair_samples: records/detections size mismatch");
  std::vector<PairSamples> out;
  for (int i = 0; i < class_count - 1; ++i)
    for (int k = i + 1; k < class_count; ++k) out.push_back({i, k, {}});

  for (std::size_t im = 0; im < records.size(); ++im) {
    const GrayImage& img = records[im].image;
    const auto gold = detail::group_gold(img, records[im].gold, class_count);
    const auto pred = detail::group_predictions(img, detections[im], class_count);
    std::size_t pair_idx = 0;
    for (int i = 0; i < class_count - 1; ++i) {
      for (int k = i + 1; k < class_count; ++k, ++pair_idx) {
        const auto gv = detail::pair_vector_from_groups(img, gold, i, k, cfg.missing_class);
        const auto pv = detail::pair_vector_from_groups(img, pred, i, k, cfg.missing_class);
        if (!gv && !pv) continue;
        PairSamples::Item item;
        item.image = static_cast<int>(im);
        if (gv) item.gold = std::vector<double>(gv->begin(), gv->end());
        if (pv) item.pred = std::vector<double>(pv->begin(), pv->end());
        out[pair_idx].items.push_back(std::move(item));
      }
    }
  }
  return out;
}

// Frozen implicit feature extractor: encoder embedding followed by the PCA
// projection fit on gold patches after pretraining.
struct ImplicitExtractor {
  const EncoderParams* encoder = nullptr;
  const PcaProjection* pca = nullptr;
  int patch_size = 224;

  std::vector<double> extract(const GrayImage& img, const BoundingBox& box) const {
    const GrayImage patch = crop_patch(img, box, patch_size);
    return pca_project(*pca, encode(*encoder, patch));
  }
};

// Per-image, per-class mean of projected gold-patch embeddings. The encoder
// and PCA are frozen during detector training, so these can be computed once
// per scene and reused across steps.
using ClassEmbeddingMeans = std::vector<std::optional<std::vector<double>>>;

inline ClassEmbeddingMeans gold_embedding_means(const ImageRecord& record, int class_count,
                                                const ImplicitExtractor& ext) {
  const auto gold = detail::group_gold(record.image, record.gold, class_count);
  const int dim = ext.pca->retained_dim();
  ClassEmbeddingMeans means(class_count);
  for (int c = 0; c < class_count; ++c) {
    if (gold.boxes[c].empty()) continue;
    std::vector<double> acc(dim, 0.0);
    for (const auto& b : gold.boxes[c]) {
      const auto z = ext.extract(record.image, b);
      for (int d = 0; d < dim; ++d) acc[d] += z[d];
    }
    for (auto& v : acc) v /= static_cast<double>(gold.boxes[c].size());
    means[c] = std::move(acc);
  }
  return means;
}

inline std::vector<PairSamples> implicit_pair_samples(
    std::span<const ImageRecord> records, std::span<const std::vector<Detection>> detections,
    int class_count, const RegularizerConfig& cfg, const ImplicitExtractor& ext,
    const std::vector<ClassEmbeddingMeans>* cached_gold_means = nullptr) {
  if (!ext.encoder || !ext.pca)
    throw std::invalid_argument("implicit_pair_samples: extractor not initialized");
  if (records.size() != detections.size())
    throw std::invalid_argument("implicit_pair_samples: records/detections size mismatch");
  if (cached_gold_means && cached_gold_means->size() != records.size())
    throw std::invalid_argument("implicit_pair_samples: cache size mismatch");
  std::vector<PairSamples> out;
  for (int i = 0; i < class_count - 1; ++i)
    for (int k = i + 1; k < class_count; ++k) out.push_back({i, k, {}});

  const int dim = ext.pca->retained_dim();
  for (std::size_t im = 0; im < records.size(); ++im) {
    const GrayImage& img = records[im].image;
    const auto pred = detail::group_predictions(img, detections[im], class_count);

    const auto class_means = [&](const detail::ClassGroups& g) {
      ClassEmbeddingMeans means(class_count);
      for (int c = 0; c < class_count; ++c) {
        if (g.boxes[c].empty()) continue;
        std::vector<double> acc(dim, 0.0);
        for (const auto& b : g.boxes[c]) {
          const auto z = ext.extract(img, b);
          for (int d = 0; d < dim; ++d) acc[d] += z[d];
        }
        for (auto& v : acc) v /= static_cast<double>(g.boxes[c].size());
        means[c] = std::move(acc);
      }
      return means;
    };
    const ClassEmbeddingMeans gold_means =
        cached_gold_means ? (*cached_gold_means)[im]
                          : gold_embedding_means(records[im], class_count, ext);
    const auto pred_means = class_means(pred);

    const auto pair_vec = [&](const ClassEmbeddingMeans& means, int i,
                              int k) -> std::optional<std::vector<double>> {
      const bool have_i = means[i].has_value();
      const bool have_k = means[k].has_value();
      if (cfg.missing_class == MissingClassPolicy::kSkipPair && (!have_i || !have_k))
        return std::nullopt;
      if (!have_i && !have_k) return std::nullopt;
      std::vector<double> v(dim, 0.0);
      if (have_i)
        for (int d = 0; d < dim; ++d) v[d] += (*means[i])[d];
      if (have_k)
        for (int d = 0; d < dim; ++d) v[d] -= (*means[k])[d];
      return v;
    };

    std::size_t pair_idx = 0;
    for (int i = 0; i < class_count - 1; ++i) {
      for (int k = i + 1; k < class_count; ++k, ++pair_idx) {
        auto gv = pair_vec(gold_means, i, k);
        auto pv = pair_vec(pred_means, i, k);
        if (!gv && !pv) continue;
        PairSamples::Item item;
        item.image = static_cast<int>(im);
        item.gold = std::move(gv);
        item.pred = std::move(pv);
        out[pair_idx].items.push_back(std::move(item));
      }
    }
  }
  return out;
}

// Per-pair GMM fits. Both sides of a pair share the same EM seed so that
// identical gold and predicted vectors produce bit-identical fits (this is
// what makes the loss exactly zero at detections == gold).
struct PairFit {
  int class_i = 0;
  int class_k = 0;
  bool skipped = true;
  Gmm gold_fit;
  Gmm pred_fit;
};

inline std::vector<PairFit> fit_pair_gmms(const std::vector<PairSamples>& samples,
                                          const RegularizerConfig& cfg) {
  std::vector<PairFit> fits;
  fits.reserve(samples.size());
  const int need = std::max(1, cfg.gmm_components);
  for (std::size_t p = 0; p < samples.size(); ++p) {
    PairFit fit;
    fit.class_i = samples[p].class_i;
    fit.class_k = samples[p].class_k;
    const auto gold = samples[p].gold_list();
    const auto pred = samples[p].pred_list();
    if (static_cast<int>(gold.size()) >= need && static_cast<int>(pred.size()) >= need) {
      const std::uint64_t fit_seed = derive_seed(cfg.seed, p);
      fit.gold_fit = em_fit(gold, cfg.gmm_components, fit_seed).gmm;
      fit.pred_fit = em_fit(pred, cfg.gmm_components, fit_seed).gmm;
      fit.skipped = false;
    }
    fits.push_back(std::move(fit));
  }
  return fits;
}

struct PairwiseResult {
  double loss = 0.0;
  int evaluated_pairs = 0;
  int skipped_pairs = 0;
  bool all_pairs_skipped = false;
  std::vector<double> per_pair;  // raw divergence per pair, 0 for skipped
};

inline PairwiseResult pairwise_loss_with_fits(const std::vector<PairSamples>& samples,
                                              const std::vector<PairFit>& fits,
                                              const RegularizerConfig& cfg) {
  if (samples.size() != fits.size())
    throw std::invalid_argument("pairwise_loss_with_fits: samples/fits size mismatch");
  PairwiseResult out;
  out.per_pair.assign(samples.size(), 0.0);
  double total = 0.0;
  for (std::size_t p = 0; p < samples.size(); ++p) {
    if (fits[p].skipped) {
      ++out.skipped_pairs;
      continue;
    }
    double kl = 0.0;
    if (cfg.mc_mode == McMode::kPaired) {
      kl = kl_mc_paired(fits[p].gold_fit, fits[p].pred_fit, samples[p].gold_list(),
                        samples[p].pred_list());
    } else {
      kl = kl_mc_standard(fits[p].gold_fit, fits[p].pred_fit, cfg.mc_samples,
                          derive_seed(cfg.seed, 0x4b1dULL + p))
               .value;
    }
    out.per_pair[p] = kl;
    total += kl;
    ++out.evaluated_pairs;
  }
  const int denom = cfg.strict_pair_denominator ? static_cast<int>(samples.size())
                                                : out.evaluated_pairs;
  out.all_pairs_skipped = (out.evaluated_pairs == 0);
  out.loss = out.all_pairs_skipped ? 0.0 : total / denom;
  return out;
}

inline PairwiseResult pairwise_loss(const std::vector<PairSamples>& samples,
                                    const RegularizerConfig& cfg) {
  return pairwise_loss_with_fits(samples, fit_pair_gmms(samples, cfg), cfg);
}

struct RegLossResult {
  PairwiseResult pair;
  std::vector<PairSamples> samples;
  std::vector<PairFit> fits;
  double value() const { return pair.loss; }
};

inline RegLossResult explicit_loss(std::span<const ImageRecord> records,
                                   std::span<const std::vector<Detection>> detections,
                                   int class_count, const RegularizerConfig& cfg) {
  RegLossResult out;
  out.samples = explicit_pair_samples(records, detections, class_count, cfg);
  out.fits = fit_pair_gmms(out.samples, cfg);
  out.pair = pairwise_loss_with_fits(out.samples, out.fits, cfg);
  return out;
}

inline RegLossResult implicit_loss(std::span<const ImageRecord> records,
                                   std::span<const std::vector<Detection>> detections,
                                   int class_count, const RegularizerConfig& cfg,
                                   const ImplicitExtractor& ext,
                                   const std::vector<ClassEmbeddingMeans>* cached_gold_means =
                                       nullptr) {
  RegLossResult out;
  out.samples =
      implicit_pair_samples(records, detections, class_count, cfg, ext, cached_gold_means);
  out.fits = fit_pair_gmms(out.samples, cfg);
  out.pair = pairwise_loss_with_fits(out.samples, out.fits, cfg);
  return out;
}

// One training-step loss breakdown. The total always satisfies
// l_total = l_det + lambda * (w_exp * l_exp + w_imp * l_imp).
struct LossReport {
  double l_det = 0.0;
  double l_exp = 0.0;
  double l_imp = 0.0;
  double l_total = 0.0;
  int skipped_pairs = 0;
  bool regularizer_empty = false;  // every pair was skipped
};

inline LossReport total_loss(double l_det, double l_exp, double l_imp,
                             const RegularizerConfig& cfg) {
  if (!std::isfinite(l_det) || !std::isfinite(l_exp) || !std::isfinite(l_imp))
    throw std::invalid_argument("total_loss: non-finite input");
  LossReport r;
  r.l_det = l_det;
  r.l_exp = l_exp;
  r.l_imp = l_imp;
  r.l_total = l_det + cfg.lambda_reg * (cfg.explicit_weight * l_exp + cfg.implicit_weight * l_imp);
  return r;
}

// Gradients of the pair losses w.r.t. the predicted feature vectors. GMM
// parameters are stop-gradients: only the log Q(x_p) evaluations
// differentiate, so each present prediction vector receives
// -grad log Q(x_p) / denom regardless of the MC mode used for the value.
struct FeatureVectorGrads {
  // aligned with PairSamples: grads[pair][item] (nullopt when no pred vector)
  std::vector<std::vector<std::optional<std::vector<double>>>> grads;
};

inline FeatureVectorGrads pred_feature_grads(const std::vector<PairSamples>& samples,
                                             const std::vector<PairFit>& fits,
                                             const RegularizerConfig& cfg) {
  FeatureVectorGrads out;
  out.grads.resize(samples.size());
  int evaluated = 0;
  for (const auto& f : fits)
    if (!f.skipped) ++evaluated;
  const int denom =
      cfg.strict_pair_denominator ? static_cast<int>(samples.size()) : std::max(1, evaluated);
  for (std::size_t p = 0; p < samples.size(); ++p) {
    out.grads[p].resize(samples[p].items.size());
    if (fits[p].skipped) continue;
    for (std::size_t it = 0; it < samples[p].items.size(); ++it) {
      const auto& item = samples[p].items[it];
      if (!item.pred) continue;
      auto g = grad_log_density(fits[p].pred_fit, *item.pred);
      for (auto& v : g) v = -v / denom;
      out.grads[p][it] = std::move(g);
    }
  }
  return out;
}

// Chains the explicit-pair feature gradients into predicted box coordinates
// through the size/intensity feature derivatives. Returns, per image, one
// coordinate gradient per detection (zero for detections that contributed to
// no evaluated pair).
inline std::vector<std::vector<BoxCoordGrad>> explicit_box_grads(
    std::span<const ImageRecord> records, std::span<const std::vector<Detection>> detections,
    int class_count, const std::vector<PairSamples>& samples, const std::vector<PairFit>& fits,
    const RegularizerConfig& cfg) {
  std::vector<std::vector<BoxCoordGrad>> out(records.size());
  for (std::size_t im = 0; im < records.size(); ++im)
    out[im].assign(detections[im].size(), BoxCoordGrad{});

  const FeatureVectorGrads fgrads = pred_feature_grads(samples, fits, cfg);

  // cached per-image prediction groups
  std::vector<detail::ClassGroups> groups(records.size());
  for (std::size_t im = 0; im < records.size(); ++im)
    groups[im] = detail::group_predictions(records[im].image, detections[im], class_count);

  for (std::size_t p = 0; p < samples.size(); ++p) {
    if (fits[p].skipped) continue;
    const int ci = samples[p].class_i;
    const int ck = samples[p].class_k;
    for (std::size_t it = 0; it < samples[p].items.size(); ++it) {
      if (!fgrads.grads[p][it]) continue;
      const auto& vec_grad = *fgrads.grads[p][it];  // d(loss)/d(vector component)
      const int im = samples[p].items[it].image;
      const GrayImage& img = records[im].image;
      const auto& g = groups[im];
      const auto add_class = [&](int cls, double sign) {
        const auto& boxes = g.boxes[cls];
        if (boxes.empty()) return;
        const double scale = sign / static_cast<double>(boxes.size());
        for (std::size_t b = 0; b < boxes.size(); ++b) {
          const auto per_comp = detail::per_box_grads(img, boxes[b], scale);
          BoxCoordGrad acc;
          for (int comp = 0; comp < 2; ++comp)
            acc += per_comp[comp].scaled(vec_grad[comp]);
          out[im][g.det_indices[cls][b]] += acc;
        }
      };
      add_class(ci, +1.0);
      add_class(ck, -1.0);
    }
  }
  return out;
}

}  // namespace degpr
