#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

#include "degpr/rng.hpp"

namespace degpr {

// Diagonal-covariance Gaussian mixture. Minibatch sample counts are tiny
// (one discriminative vector per image), so diagonal covariances with a
// floor are the only structure the data can support.
struct Gmm {
  static constexpr double kVarFloor = 1e-4;

  int dim = 0;
  std::vector<double> weights;                // simplex
  std::vector<std::vector<double>> means;     // K x dim
  std::vector<std::vector<double>> variances; // K x dim, entries >= kVarFloor

  int components() const { return static_cast<int>(weights.size()); }
};

inline void validate(const Gmm& g) {
  if (g.dim < 1) throw std::invalid_argument("gmm: dimension must be >= 1");
  if (g.weights.empty() || g.means.size() != g.weights.size() ||
      g.variances.size() != g.weights.size())
    throw std::invalid_argument("gmm: inconsistent component count");
  double wsum = 0.0;
  for (double w : g.weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("gmm: negative weight");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw std::invalid_argument("gmm: weights must sum to 1");
  for (int k = 0; k < g.components(); ++k) {
    if (static_cast<int>(g.means[k].size()) != g.dim ||
        static_cast<int>(g.variances[k].size()) != g.dim)
      throw std::invalid_argument("gmm: component dimension mismatch");
    for (double v : g.variances[k])
      if (!(v >= Gmm::kVarFloor)) throw std::invalid_argument("gmm: variance below floor");
  }
}

namespace detail {

inline double log_component_density(const Gmm& g, int k, std::span<const double> x) {
  constexpr double kLog2Pi = 1.8378770664093454836;
  double acc = 0.0;
  for (int d = 0; d < g.dim; ++d) {
    const double v = g.variances[k][d];
    const double diff = x[d] - g.means[k][d];
    acc += -0.5 * (kLog2Pi + std::log(v)) - diff * diff / (2.0 * v);
  }
  return acc;
}

}  // namespace detail

/// log of the mixture density at x, via log-sum-exp over components.
inline double log_density(const Gmm& g, std::span<const double> x) {
  if (static_cast<int>(x.size()) != g.dim)
    throw std::invalid_argument("log_density: dimension mismatch");
  double max_term = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(g.components(), -std::numeric_limits<double>::infinity());
  for (int k = 0; k < g.components(); ++k) {
    if (g.weights[k] <= 0.0) continue;
    terms[k] = std::log(g.weights[k]) + detail::log_component_density(g, k, x);
    max_term = std::max(max_term, terms[k]);
  }
  double sum = 0.0;
  for (double t : terms)
    if (std::isfinite(t)) sum += std::exp(t - max_term);
  return max_term + std::log(sum);
}

/// Analytic gradient of log_density w.r.t. x:
/// sum_k gamma_k(x) * (mu_k - x) / var_k  (per dimension).
inline std::vector<double> grad_log_density(const Gmm& g, std::span<const double> x) {
  if (static_cast<int>(x.size()) != g.dim)
    throw std::invalid_argument("grad_log_density: dimension mismatch");
  std::vector<double> terms(g.components(), -std::numeric_limits<double>::infinity());
  double max_term = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < g.components(); ++k) {
    if (g.weights[k] <= 0.0) continue;
    terms[k] = std::log(g.weights[k]) + detail::log_component_density(g, k, x);
    max_term = std::max(max_term, terms[k]);
  }
  double norm = 0.0;
  for (double t : terms)
    if (std::isfinite(t)) norm += std::exp(t - max_term);
  std::vector<double> grad(g.dim, 0.0);
  for (int k = 0; k < g.components(); ++k) {
    if (!std::isfinite(terms[k])) continue;
    const double gamma = std::exp(terms[k] - max_term) / norm;
    for (int d = 0; d < g.dim; ++d)
      grad[d] += gamma * (g.means[k][d] - x[d]) / g.variances[k][d];
  }
  return grad;
}

/// Draws n samples; component by weight, then a diagonal Gaussian draw.
inline std::vector<std::vector<double>> sample(const Gmm& g, int n, Rng& rng) {
  std::vector<std::vector<double>> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    double cum = 0.0;
    int k = g.components() - 1;
    for (int c = 0; c < g.components(); ++c) {
      cum += g.weights[c];
      if (u < cum) {
        k = c;
        break;
      }
    }
    std::vector<double> x(g.dim);
    for (int d = 0; d < g.dim; ++d)
      x[d] = g.means[k][d] + std::sqrt(g.variances[k][d]) * rng.normal();
    out.push_back(std::move(x));
  }
  return out;
}

inline std::vector<std::vector<double>> sample(const Gmm& g, int n, std::uint64_t seed) {
  Rng rng(seed);
  return sample(g, n, rng);
}

struct EmResult {
  Gmm gmm;
  std::vector<double> log_likelihood;  // one entry per EM iteration
  bool converged = false;
};

// EM with k-means++ initialization. The per-iteration log-likelihood trace is
// non-decreasing (within 1e-9) unless an empty component had to be re-seeded.
inline EmResult em_fit(const std::vector<std::vector<double>>& samples, int K,
                       std::uint64_t seed, int max_iter = 200, double tol = 1e-6) {
  const int n = static_cast<int>(samples.size());
  if (K < 1) throw std::invalid_argument("em_fit: K must be >= 1");
  if (n < K) throw std::invalid_argument("em_fit: need at least K samples");
  const int dim = static_cast<int>(samples[0].size());
  if (dim < 1) throw std::invalid_argument("em_fit: dimension must be >= 1");
  for (const auto& s : samples)
    if (static_cast<int>(s.size()) != dim)
      throw std::invalid_argument("em_fit: inconsistent sample dimension");

  const auto sq_dist = [dim](std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (int d = 0; d < dim; ++d) {
      const double diff = a[d] - b[d];
      acc += diff * diff;
    }
    return acc;
  };

  // k-means++ seeding
  Rng rng(seed);
  std::vector<std::vector<double>> centers;
  centers.push_back(samples[rng.index(n)]);
  std::vector<double> d2(n);
  while (static_cast<int>(centers.size()) < K) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, sq_dist(samples[i], c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(samples[rng.index(n)]);
      continue;
    }
    const double u = rng.uniform() * total;
    double cum = 0.0;
    int pick = n - 1;
    for (int i = 0; i < n; ++i) {
      cum += d2[i];
      if (u < cum) {
        pick = i;
        break;
      }
    }
    centers.push_back(samples[pick]);
  }

  // global variance as the starting spread
  std::vector<double> gmean(dim, 0.0), gvar(dim, 0.0);
  for (const auto& s : samples)
    for (int d = 0; d < dim; ++d) gmean[d] += s[d];
  for (auto& m : gmean) m /= n;
  for (const auto& s : samples)
    for (int d = 0; d < dim; ++d) {
      const double diff = s[d] - gmean[d];
      gvar[d] += diff * diff;
    }
  for (auto& v : gvar) v = std::max(v / n, Gmm::kVarFloor);

  EmResult result;
  Gmm& g = result.gmm;
  g.dim = dim;
  g.weights.assign(K, 1.0 / K);
  g.means = centers;
  g.variances.assign(K, gvar);

  std::vector<std::vector<double>> resp(n, std::vector<double>(K));
  double prev_ll = -std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < max_iter; ++iter) {
    // E-step
    double ll = 0.0;
    for (int i = 0; i < n; ++i) {
      double max_term = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < K; ++k) {
        resp[i][k] = (g.weights[k] > 0.0)
                         ? std::log(g.weights[k]) + detail::log_component_density(g, k, samples[i])
                         : -std::numeric_limits<double>::infinity();
        max_term = std::max(max_term, resp[i][k]);
      }
      double sum = 0.0;
      for (int k = 0; k < K; ++k)
        if (std::isfinite(resp[i][k])) sum += std::exp(resp[i][k] - max_term);
      const double lse = max_term + std::log(sum);
      ll += lse;
      for (int k = 0; k < K; ++k)
        resp[i][k] = std::isfinite(resp[i][k]) ? std::exp(resp[i][k] - lse) : 0.0;
    }
    result.log_likelihood.push_back(ll);
    if (ll - prev_ll < tol && iter > 0) {
      result.converged = true;
      break;
    }
    prev_ll = ll;

    // M-step
    for (int k = 0; k < K; ++k) {
      double nk = 0.0;
      for (int i = 0; i < n; ++i) nk += resp[i][k];
      if (nk < 1e-10) {
        // empty component: re-seed at the sample farthest from its nearest mean
        int far = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          double best = std::numeric_limits<double>::infinity();
          for (int c = 0; c < K; ++c) best = std::min(best, sq_dist(samples[i], g.means[c]));
          if (best > far_d) {
            far_d = best;
            far = i;
          }
        }
        g.means[k] = samples[far];
        g.variances[k] = gvar;
        g.weights[k] = 1.0 / n;
        double wsum = 0.0;
        for (double w : g.weights) wsum += w;
        for (double& w : g.weights) w /= wsum;
        continue;
      }
      g.weights[k] = nk / n;
      for (int d = 0; d < dim; ++d) {
        double m = 0.0;
        for (int i = 0; i < n; ++i) m += resp[i][k] * samples[i][d];
        g.means[k][d] = m / nk;
      }
      for (int d = 0; d < dim; ++d) {
        double v = 0.0;
        for (int i = 0; i < n; ++i) {
          const double diff = samples[i][d] - g.means[k][d];
          v += resp[i][k] * diff * diff;
        }
        g.variances[k][d] = std::max(v / nk, Gmm::kVarFloor);
      }
    }
  }
  return result;
}

struct KlEstimate {
  double value = 0.0;
  double std_error = 0.0;
  int samples = 0;
};

// Textbook Monte-Carlo estimate of KL(p||q): mean of log p(x) - log q(x) over
// x ~ p, with its standard error. Sharding is deterministic: shard s draws
// from a seed derived from (seed, s) and partial sums merge in shard order,
// so the result depends only on the shard partition, not the thread count.
inline KlEstimate kl_mc_standard(const Gmm& p, const Gmm& q, int n = 100000,
                                 std::uint64_t seed = 1, int shards = 1) {
  if (p.dim != q.dim) throw std::invalid_argument("kl_mc_standard: dimension mismatch");
  if (n < 2) throw std::invalid_argument("kl_mc_standard: need n >= 2");
  shards = std::clamp(shards, 1, n);

  std::vector<double> shard_sum(shards, 0.0), shard_sum_sq(shards, 0.0);
  std::vector<int> shard_n(shards, 0);
  const auto run_shard = [&](int s) {
    const int lo = static_cast<int>(static_cast<long long>(n) * s / shards);
    const int hi = static_cast<int>(static_cast<long long>(n) * (s + 1) / shards);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    std::vector<double> x(p.dim);
    double sum = 0.0, sum_sq = 0.0;
    for (int i = lo; i < hi; ++i) {
      const double u = rng.uniform();
      double cum = 0.0;
      int k = p.components() - 1;
      for (int c = 0; c < p.components(); ++c) {
        cum += p.weights[c];
        if (u < cum) {
          k = c;
          break;
        }
      }
      for (int d = 0; d < p.dim; ++d)
        x[d] = p.means[k][d] + std::sqrt(p.variances[k][d]) * rng.normal();
      const double t = log_density(p, x) - log_density(q, x);
      sum += t;
      sum_sq += t * t;
    }
    shard_sum[s] = sum;
    shard_sum_sq[s] = sum_sq;
    shard_n[s] = hi - lo;
  };

  if (shards == 1) {
    run_shard(0);
  } else {
    std::vector<std::thread> workers;
    workers.reserve(shards);
    for (int s = 0; s < shards; ++s) workers.emplace_back(run_shard, s);
    for (auto& w : workers) w.join();
  }

  double sum = 0.0, sum_sq = 0.0;
  for (int s = 0; s < shards; ++s) {  // fixed merge order
    sum += shard_sum[s];
    sum_sq += shard_sum_sq[s];
  }
  KlEstimate est;
  est.samples = n;
  est.value = sum / n;
  const double var = std::max(0.0, (sum_sq - sum * sum / n) / (n - 1));
  est.std_error = std::sqrt(var / n);
  return est;
}

// Paper-style paired estimate: the gold and predicted feature vectors are
// treated as the samples themselves and the result is a *sum* over them,
// not a mean.
inline double kl_mc_paired(const Gmm& p, const Gmm& q,
                           const std::vector<std::vector<double>>& gold_vectors,
                           const std::vector<std::vector<double>>& pred_vectors) {
  if (p.dim != q.dim) throw std::invalid_argument("kl_mc_paired: dimension mismatch");
  double gold_term = 0.0, pred_term = 0.0;
  for (const auto& x : gold_vectors) gold_term += log_density(p, x);
  for (const auto& x : pred_vectors) pred_term += log_density(q, x);
  return gold_term - pred_term;
}

/// Closed-form KL between two single-component diagonal Gaussians.
inline double kl_closed_form_gaussian(const Gmm& p, const Gmm& q) {
  if (p.components() != 1 || q.components() != 1)
    throw std::invalid_argument("kl_closed_form_gaussian: both sides must have K=1");
  if (p.dim != q.dim) throw std::invalid_argument("kl_closed_form_gaussian: dimension mismatch");
  double acc = 0.0;
  for (int d = 0; d < p.dim; ++d) {
    const double v1 = p.variances[0][d];
    const double v2 = q.variances[0][d];
    const double dm = p.means[0][d] - q.means[0][d];
    acc += std::log(v2 / v1) + v1 / v2 + dm * dm / v2 - 1.0;
  }
  return 0.5 * acc;
}

// BIC-based component selection, provided as an optional utility; the
// regularizer defaults to K=1 either way.
inline int select_k_bic(const std::vector<std::vector<double>>& samples, int k_max,
                        std::uint64_t seed) {
  const int n = static_cast<int>(samples.size());
  if (n < 1) throw std::invalid_argument("select_k_bic: empty sample set");
  int best_k = 1;
  double best_bic = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= k_max && k <= n; ++k) {
    const EmResult fit = em_fit(samples, k, derive_seed(seed, static_cast<std::uint64_t>(k)));
    const double ll = fit.log_likelihood.back();
    const int dim = fit.gmm.dim;
    const double params = (k - 1) + 2.0 * k * dim;
    const double bic = -2.0 * ll + params * std::log(static_cast<double>(n));
    if (bic < best_bic) {
      best_bic = bic;
      best_k = k;
    }
  }
  return best_k;
}

}  // namespace degpr
