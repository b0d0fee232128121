#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "degpr/geometry.hpp"
#include "degpr/image.hpp"
#include "degpr/rng.hpp"

namespace degpr {

// Small feed-forward patch encoder trained with a supervised contrastive
// loss. Input patches (224x224 crops) are downsampled to input_side x
// input_side, scaled to [0,1] and flattened; the final embedding is
// L2-normalized.

struct DenseLayer {
  int in = 0;
  int out = 0;
  std::vector<double> w;  // out x in, row-major
  std::vector<double> b;  // out
};

struct EncoderParams {
  int input_side = 32;
  std::vector<DenseLayer> layers;  // hidden layers with ReLU, last layer linear

  int input_dim() const { return input_side * input_side; }
  int embedding_dim() const { return layers.empty() ? 0 : layers.back().out; }
};

inline EncoderParams make_encoder(Rng& rng, int input_side = 32,
                                  const std::vector<int>& hidden = {256, 128},
                                  int embedding_dim = 64) {
  EncoderParams p;
  p.input_side = input_side;
  int prev = input_side * input_side;
  std::vector<int> sizes = hidden;
  sizes.push_back(embedding_dim);
  for (int sz : sizes) {
    DenseLayer layer;
    layer.in = prev;
    layer.out = sz;
    layer.w.resize(static_cast<std::size_t>(sz) * prev);
    layer.b.assign(sz, 0.0);
    const double std_dev = std::sqrt(2.0 / prev);  // He init
    for (auto& v : layer.w) v = rng.normal(0.0, std_dev);
    p.layers.push_back(std::move(layer));
    prev = sz;
  }
  return p;
}

namespace detail {

inline std::vector<double> patch_to_input(const EncoderParams& p, const GrayImage& patch) {
  const GrayImage small = (patch.width == p.input_side && patch.height == p.input_side)
                              ? patch
                              : resize_bilinear(patch, p.input_side, p.input_side);
  std::vector<double> x(small.pixels.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = small.pixels[i] / 255.0;
  return x;
}

struct ForwardCache {
  std::vector<std::vector<double>> inputs;   // input to each layer
  std::vector<double> raw;                   // pre-normalization embedding
  double raw_norm = 0.0;
  std::vector<double> embedding;             // unit-norm output
};

inline ForwardCache forward(const EncoderParams& p, std::vector<double> x) {
  ForwardCache cache;
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const DenseLayer& layer = p.layers[li];
    if (static_cast<int>(x.size()) != layer.in)
      throw std::invalid_argument("encoder: input dimension mismatch");
    cache.inputs.push_back(x);
    std::vector<double> y(layer.out);
    for (int o = 0; o < layer.out; ++o) {
      const double* wr = layer.w.data() + static_cast<std::size_t>(o) * layer.in;
      double acc = layer.b[o];
      for (int i = 0; i < layer.in; ++i) acc += wr[i] * x[i];
      y[o] = acc;
    }
    if (li + 1 < p.layers.size())
      for (auto& v : y) v = std::max(v, 0.0);  // ReLU on hidden layers
    x = std::move(y);
  }
  for (double v : x)
    if (!std::isfinite(v)) throw std::runtime_error("encoder: non-finite activation");
  cache.raw = x;
  double norm_sq = 0.0;
  for (double v : x) norm_sq += v * v;
  cache.raw_norm = std::sqrt(norm_sq);
  cache.embedding.assign(x.size(), 0.0);
  if (cache.raw_norm < 1e-12) {
    cache.embedding[0] = 1.0;  // degenerate-norm fallback: first basis vector
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) cache.embedding[i] = x[i] / cache.raw_norm;
  }
  return cache;
}

struct LayerGrads {
  std::vector<std::vector<double>> w;
  std::vector<std::vector<double>> b;
};

inline LayerGrads zero_grads(const EncoderParams& p) {
  LayerGrads g;
  for (const auto& layer : p.layers) {
    g.w.emplace_back(layer.w.size(), 0.0);
    g.b.emplace_back(layer.b.size(), 0.0);
  }
  return g;
}

// dL/d(embedding) -> accumulate parameter gradients for one sample.
inline void backward(const EncoderParams& p, const ForwardCache& cache,
                     std::span<const double> grad_embedding, LayerGrads& grads) {
  std::vector<double> g(grad_embedding.begin(), grad_embedding.end());
  // through L2 normalization: d(u/|u|) = (I - z z^T)/|u|
  if (cache.raw_norm < 1e-12) {
    return;  // fallback vector is constant; no gradient flows
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * cache.embedding[i];
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = (g[i] - dot * cache.embedding[i]) / cache.raw_norm;

  for (int li = static_cast<int>(p.layers.size()) - 1; li >= 0; --li) {
    const DenseLayer& layer = p.layers[li];
    const auto& x = cache.inputs[li];
    // ReLU mask for hidden layers: recompute activation sign from the next input
    if (li + 1 < static_cast<int>(p.layers.size())) {
      const auto& activated = cache.inputs[li + 1];
      for (int o = 0; o < layer.out; ++o)
        if (activated[o] <= 0.0) g[o] = 0.0;
    }
    auto& gw = grads.w[li];
    auto& gb = grads.b[li];
    std::vector<double> gx(layer.in, 0.0);
    for (int o = 0; o < layer.out; ++o) {
      const double go = g[o];
      if (go == 0.0) continue;
      gb[o] += go;
      double* gwr = gw.data() + static_cast<std::size_t>(o) * layer.in;
      const double* wr = layer.w.data() + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) {
        gwr[i] += go * x[i];
        gx[i] += go * wr[i];
      }
    }
    g = std::move(gx);
  }
}

}  // namespace detail

/// Deterministic unit-norm embedding of a patch.
inline std::vector<double> encode(const EncoderParams& p, const GrayImage& patch) {
  return detail::forward(p, detail::patch_to_input(p, patch)).embedding;
}

// Supervised contrastive loss, summed over anchors:
//   L = sum_v -log[ (1/|P(v)|) sum_{p in P(v)} exp(z_v.z_p / tau)
//                   / sum_{a != v} exp(z_v.z_a / tau) ]
// Anchors without positives are skipped and counted; an empty anchor set is
// an error. Log-sum-exp keeps both sums stable.
inline double supcon_loss(const std::vector<std::vector<double>>& embeddings,
                          const std::vector<int>& labels, double tau,
                          int* skipped_anchors = nullptr) {
  const std::size_t n = embeddings.size();
  if (n != labels.size()) throw std::invalid_argument("supcon_loss: size mismatch");
  if (n < 2) throw std::invalid_argument("supcon_loss: need at least 2 samples");
  if (!(tau > 0.0)) throw std::invalid_argument("supcon_loss: tau must be positive");

  double loss = 0.0;
  int skipped = 0;
  int used = 0;
  std::vector<double> scores(n);
  for (std::size_t v = 0; v < n; ++v) {
    std::size_t positives = 0;
    double max_score = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < n; ++a) {
      if (a == v) continue;
      double dot = 0.0;
      for (std::size_t i = 0; i < embeddings[v].size(); ++i)
        dot += embeddings[v][i] * embeddings[a][i];
      scores[a] = dot / tau;
      max_score = std::max(max_score, scores[a]);
      if (labels[a] == labels[v]) ++positives;
    }
    if (positives == 0) {
      ++skipped;
      continue;
    }
    double denom = 0.0, numer = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      if (a == v) continue;
      const double e = std::exp(scores[a] - max_score);
      denom += e;
      if (labels[a] == labels[v]) numer += e;
    }
    // -log[(numer/|P|)/denom]; the max_score shift cancels
    loss += std::log(static_cast<double>(positives)) - std::log(numer) + std::log(denom);
    ++used;
  }
  if (skipped_anchors) *skipped_anchors = skipped;
  if (used == 0) throw std::runtime_error("supcon_loss: no anchor has a positive");
  return loss;
}

/// Gradient of supcon_loss w.r.t. each embedding vector.
inline std::vector<std::vector<double>> supcon_grad(
    const std::vector<std::vector<double>>& embeddings, const std::vector<int>& labels,
    double tau) {
  const std::size_t n = embeddings.size();
  if (n != labels.size()) throw std::invalid_argument("supcon_grad: size mismatch");
  const std::size_t d = embeddings.empty() ? 0 : embeddings[0].size();
  std::vector<std::vector<double>> grad(n, std::vector<double>(d, 0.0));
  std::vector<double> scores(n), alpha(n), beta(n);
  int used = 0;
  for (std::size_t v = 0; v < n; ++v) {
    std::size_t positives = 0;
    double max_score = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < n; ++a) {
      if (a == v) continue;
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += embeddings[v][i] * embeddings[a][i];
      scores[a] = dot / tau;
      max_score = std::max(max_score, scores[a]);
      if (labels[a] == labels[v]) ++positives;
    }
    if (positives == 0) continue;
    ++used;
    double denom = 0.0, numer = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      if (a == v) continue;
      const double e = std::exp(scores[a] - max_score);
      denom += e;
      if (labels[a] == labels[v]) numer += e;
    }
    for (std::size_t a = 0; a < n; ++a) {
      if (a == v) continue;
      const double e = std::exp(scores[a] - max_score);
      alpha[a] = e / denom;
      beta[a] = (labels[a] == labels[v]) ? e / numer : 0.0;
    }
    // dL_v/dz_v = (1/tau) [ sum_a alpha_a z_a - sum_p beta_p z_p ]
    // dL_v/dz_u = (1/tau) [ alpha_u - beta_u ] z_v      (u != v)
    for (std::size_t a = 0; a < n; ++a) {
      if (a == v) continue;
      const double coeff = (alpha[a] - beta[a]) / tau;
      for (std::size_t i = 0; i < d; ++i) {
        grad[v][i] += coeff * embeddings[a][i];
        grad[a][i] += coeff * embeddings[v][i];
      }
    }
  }
  if (used == 0) throw std::runtime_error("supcon_grad: no anchor has a positive");
  return grad;
}

// Box jitter used to harden the encoder against imperfect predicted boxes:
// the center shifts by a uniform fraction of the box extent and width/height
// scale independently; the result is clamped to the image.
inline BoundingBox augment_box(const BoundingBox& box, Rng& rng, double max_shift_frac = 0.15,
                               double scale_lo = 0.85, double scale_hi = 1.15,
                               double image_w = std::numeric_limits<double>::infinity(),
                               double image_h = std::numeric_limits<double>::infinity()) {
  require_valid_box(box);
  const double w = box.width();
  const double h = box.height();
  const double dx = rng.uniform(-max_shift_frac, max_shift_frac) * w;
  const double dy = rng.uniform(-max_shift_frac, max_shift_frac) * h;
  const double sw = rng.uniform(scale_lo, scale_hi);
  const double sh = rng.uniform(scale_lo, scale_hi);
  const double cx = (box.w_l + box.w_r) / 2.0 + dx;
  const double cy = (box.h_l + box.h_r) / 2.0 + dy;
  BoundingBox out{cx - w * sw / 2.0, cy - h * sh / 2.0, cx + w * sw / 2.0, cy + h * sh / 2.0};
  return clamp_box(out, image_w, image_h);
}

struct TrainConfig {
  double tau = 0.1;
  double learning_rate = 0.001;
  double momentum = 0.9;
  int epochs = 40;
  int batch_size = 32;
  double augment_max_frac = 0.5;  // annealed linearly from 0 over the first half of training
  double augment_shift_frac = 0.15;
  double augment_scale_lo = 0.85;
  double augment_scale_hi = 1.15;
  bool balanced_sampling = true;
  int input_side = 32;
  std::vector<int> hidden = {256, 128};
  int embedding_dim = 64;
  int patch_size = 224;
  std::uint64_t seed = 1;
};

// Gold patches, referenced by record so augmentation can re-crop jittered
// boxes from the source image.
struct PatchDataset {
  struct Entry {
    int record = 0;
    int class_id = 0;
    BoundingBox box;
  };
  const std::vector<ImageRecord>* records = nullptr;
  std::vector<Entry> entries;
  int class_count = 0;
};

inline PatchDataset make_patch_dataset(const std::vector<ImageRecord>& records, int class_count) {
  PatchDataset ds;
  ds.records = &records;
  ds.class_count = class_count;
  for (std::size_t r = 0; r < records.size(); ++r)
    for (const auto& [cls, box] : records[r].gold)
      ds.entries.push_back({static_cast<int>(r), cls, box});
  return ds;
}

struct EncoderTrainResult {
  EncoderParams params;
  std::vector<double> epoch_loss;  // mean per-anchor loss per epoch
};

namespace detail {

// Balanced batch: batch_size/class_count patches per class (remainder spread
// over the lowest class ids), sampled without replacement when a class has
// enough patches and with replacement otherwise.
inline std::vector<std::size_t> balanced_batch(const std::vector<std::vector<std::size_t>>& by_class,
                                               int batch_size, Rng& rng) {
  const int n_class = static_cast<int>(by_class.size());
  std::vector<std::size_t> batch;
  batch.reserve(batch_size);
  const int base = batch_size / n_class;
  const int remainder = batch_size % n_class;
  for (int c = 0; c < n_class; ++c) {
    const int quota = base + (c < remainder ? 1 : 0);
    const auto& pool = by_class[c];
    if (quota <= 0) continue;
    if (static_cast<int>(pool.size()) >= quota) {
      std::vector<std::size_t> idx(pool.size());
      std::iota(idx.begin(), idx.end(), 0);
      for (int k = 0; k < quota; ++k) {  // partial Fisher-Yates
        std::swap(idx[k], idx[k + rng.index(idx.size() - k)]);
        batch.push_back(pool[idx[k]]);
      }
    } else {
      for (int k = 0; k < quota; ++k) batch.push_back(pool[rng.index(pool.size())]);
    }
  }
  return batch;
}

}  // namespace detail

// Pretrains the patch encoder with mini-batch SGD + momentum on the SupCon
// loss. Single-threaded by contract; bit-reproducible for a fixed seed.
inline EncoderTrainResult train_encoder(const TrainConfig& cfg, const PatchDataset& ds) {
  if (!ds.records) throw std::invalid_argument("train_encoder: dataset has no records");
  if (ds.class_count < 2) throw std::invalid_argument("train_encoder: need >= 2 classes");
  if (cfg.batch_size < 2 * ds.class_count)
    throw std::invalid_argument("train_encoder: batch too small for >=2 patches of >=2 classes");

  std::vector<std::vector<std::size_t>> by_class(ds.class_count);
  for (std::size_t i = 0; i < ds.entries.size(); ++i) {
    const auto& e = ds.entries[i];
    if (e.class_id < 0 || e.class_id >= ds.class_count)
      throw std::invalid_argument("train_encoder: entry class id out of range");
    by_class[e.class_id].push_back(i);
  }
  for (int c = 0; c < ds.class_count; ++c)
    if (by_class[c].empty())
      throw std::invalid_argument("train_encoder: class " + std::to_string(c) +
                                  " has no patches");

  Rng init_rng(derive_seed(cfg.seed, 0));
  EncoderParams params = make_encoder(init_rng, cfg.input_side, cfg.hidden, cfg.embedding_dim);

  // cache the downsampled input vector of every unaugmented patch
  std::vector<std::vector<double>> cached_inputs(ds.entries.size());
  for (std::size_t i = 0; i < ds.entries.size(); ++i) {
    const auto& e = ds.entries[i];
    const GrayImage patch =
        crop_patch((*ds.records)[e.record].image, e.box, cfg.patch_size);
    cached_inputs[i] = detail::patch_to_input(params, patch);
  }

  std::vector<std::size_t> all_indices(ds.entries.size());
  std::iota(all_indices.begin(), all_indices.end(), 0);

  detail::LayerGrads velocity = detail::zero_grads(params);
  EncoderTrainResult result;
  const int steps_per_epoch =
      std::max<int>(1, static_cast<int>(ds.entries.size()) / cfg.batch_size);
  const double half = std::max(1.0, cfg.epochs / 2.0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    const double aug_frac = cfg.augment_max_frac * std::min(1.0, epoch / half);
    double epoch_loss = 0.0;
    long anchor_count = 0;

    for (int step = 0; step < steps_per_epoch; ++step) {
      std::vector<std::size_t> batch;
      if (cfg.balanced_sampling) {
        batch = detail::balanced_batch(by_class, cfg.batch_size, rng);
      } else {
        for (int k = 0; k < cfg.batch_size; ++k)
          batch.push_back(all_indices[rng.index(all_indices.size())]);
      }

      std::vector<detail::ForwardCache> caches(batch.size());
      std::vector<std::vector<double>> embeddings(batch.size());
      std::vector<int> labels(batch.size());
      for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        const auto& e = ds.entries[batch[bi]];
        labels[bi] = e.class_id;
        std::vector<double> input;
        if (aug_frac > 0.0 && rng.uniform() < aug_frac) {
          const ImageRecord& rec = (*ds.records)[e.record];
          const BoundingBox jittered =
              augment_box(e.box, rng, cfg.augment_shift_frac, cfg.augment_scale_lo,
                          cfg.augment_scale_hi, rec.image.width, rec.image.height);
          if (clamp_box(jittered, rec.image.width, rec.image.height).area() > 0.0) {
            input = detail::patch_to_input(params, crop_patch(rec.image, jittered,
                                                              cfg.patch_size));
          }
        }
        if (input.empty()) input = cached_inputs[batch[bi]];
        caches[bi] = detail::forward(params, std::move(input));
        embeddings[bi] = caches[bi].embedding;
      }

      int skipped = 0;
      double batch_loss = 0.0;
      std::vector<std::vector<double>> z_grads;
      try {
        batch_loss = supcon_loss(embeddings, labels, cfg.tau, &skipped);
        z_grads = supcon_grad(embeddings, labels, cfg.tau);
      } catch (const std::runtime_error&) {
        continue;  // batch degenerated to a single labeled class; skip
      }
      const int anchors = static_cast<int>(batch.size()) - skipped;
      epoch_loss += batch_loss;
      anchor_count += anchors;

      detail::LayerGrads grads = detail::zero_grads(params);
      for (std::size_t bi = 0; bi < batch.size(); ++bi)
        detail::backward(params, caches[bi], z_grads[bi], grads);

      const double scale = 1.0 / std::max(1, anchors);
      for (std::size_t li = 0; li < params.layers.size(); ++li) {
        auto& layer = params.layers[li];
        for (std::size_t j = 0; j < layer.w.size(); ++j) {
          velocity.w[li][j] =
              cfg.momentum * velocity.w[li][j] - cfg.learning_rate * grads.w[li][j] * scale;
          layer.w[j] += velocity.w[li][j];
        }
        for (std::size_t j = 0; j < layer.b.size(); ++j) {
          velocity.b[li][j] =
              cfg.momentum * velocity.b[li][j] - cfg.learning_rate * grads.b[li][j] * scale;
          layer.b[j] += velocity.b[li][j];
        }
      }
    }
    result.epoch_loss.push_back(anchor_count > 0 ? epoch_loss / anchor_count : 0.0);
  }

  result.params = std::move(params);
  return result;
}

}  // namespace degpr
