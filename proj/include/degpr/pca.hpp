#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace degpr {

// Symmetric eigendecomposition by cyclic Jacobi rotations. Small dense
// matrices only (PCA covariances are at most embedding-dim sized).
// Returns eigenvalues in descending order with matching eigenvectors as rows.
struct EigenDecomposition {
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;  // vectors[i] pairs with values[i]
};

inline EigenDecomposition jacobi_eigen_symmetric(std::vector<std::vector<double>> a,
                                                 int max_sweeps = 100) {
  const std::size_t n = a.size();
  for (const auto& row : a)
    if (row.size() != n) throw std::invalid_argument("jacobi: matrix must be square");

  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;

  const auto off_diag_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += a[i][j] * a[i][j];
    return std::sqrt(2.0 * s);
  };

  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) scale = std::max(scale, std::abs(a[i][j]));
  const double tol = 1e-14 * std::max(scale, 1.0);

  for (int sweep = 0; sweep < max_sweeps && off_diag_norm() > tol; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) <= tol * 1e-2) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < n; ++i) {
          const double aip = a[i][p], aiq = a[i][q];
          a[i][p] = c * aip - s * aiq;
          a[i][q] = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double api = a[p][i], aqi = a[q][i];
          a[p][i] = c * api - s * aqi;
          a[q][i] = s * api + c * aqi;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vpi = v[p][i], vqi = v[q][i];
          v[p][i] = c * vpi - s * vqi;
          v[q][i] = s * vpi + c * vqi;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a[x][x] > a[y][y]; });

  EigenDecomposition out;
  out.values.reserve(n);
  out.vectors.reserve(n);
  for (std::size_t idx : order) {
    out.values.push_back(a[idx][idx]);
    out.vectors.push_back(v[idx]);
  }
  return out;
}

// Mean-centering projection onto the leading principal components; the
// retained dimension is the smallest one reaching the explained-variance
// target.
struct PcaProjection {
  std::vector<double> mean;
  std::vector<std::vector<double>> components;  // r rows, each of input dim
  std::vector<double> eigenvalues;              // of the retained components
  double explained_variance = 0.0;              // fraction covered by the retained set
  int input_dim = 0;

  int retained_dim() const { return static_cast<int>(components.size()); }
};

inline PcaProjection pca_fit(const std::vector<std::vector<double>>& samples,
                             double variance_target = 0.9) {
  const std::size_t n = samples.size();
  if (n < 2) throw std::invalid_argument("pca_fit: need at least 2 samples");
  const std::size_t d = samples[0].size();
  for (const auto& s : samples)
    if (s.size() != d) throw std::invalid_argument("pca_fit: inconsistent sample dimension");

  PcaProjection out;
  out.input_dim = static_cast<int>(d);
  out.mean.assign(d, 0.0);
  for (const auto& s : samples)
    for (std::size_t j = 0; j < d; ++j) out.mean[j] += s[j];
  for (auto& m : out.mean) m /= static_cast<double>(n);

  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < d; ++i) {
      const double di = s[i] - out.mean[i];
      for (std::size_t j = i; j < d; ++j) cov[i][j] += di * (s[j] - out.mean[j]);
    }
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      cov[i][j] /= static_cast<double>(n - 1);
      cov[j][i] = cov[i][j];
    }

  EigenDecomposition eig = jacobi_eigen_symmetric(std::move(cov));

  double total = 0.0;
  for (double& lam : eig.values) {
    if (lam < 0.0) lam = 0.0;  // clamp numerical negatives
    total += lam;
  }
  if (total <= 0.0) {
    // all variance vanished; keep the single leading direction
    out.components.push_back(eig.vectors[0]);
    out.eigenvalues.push_back(0.0);
    out.explained_variance = 1.0;
    return out;
  }

  const double drop_below = 1e-12 * total;
  double cum = 0.0;
  for (std::size_t i = 0; i < eig.values.size(); ++i) {
    if (eig.values[i] <= drop_below) break;  // rank-deficient tail
    if (static_cast<std::size_t>(out.retained_dim()) >= n) break;
    out.components.push_back(eig.vectors[i]);
    out.eigenvalues.push_back(eig.values[i]);
    cum += eig.values[i];
    if (cum / total >= variance_target) break;
  }
  if (out.components.empty()) {
    out.components.push_back(eig.vectors[0]);
    out.eigenvalues.push_back(eig.values[0]);
    cum = eig.values[0];
  }
  out.explained_variance = cum / total;
  return out;
}

inline std::vector<double> pca_project(const PcaProjection& proj, std::span<const double> x) {
  if (static_cast<int>(x.size()) != proj.input_dim)
    throw std::invalid_argument("pca_project: dimension mismatch");
  std::vector<double> out(proj.components.size(), 0.0);
  for (std::size_t r = 0; r < proj.components.size(); ++r) {
    double acc = 0.0;
    const auto& comp = proj.components[r];
    for (int j = 0; j < proj.input_dim; ++j) acc += comp[j] * (x[j] - proj.mean[j]);
    out[r] = acc;
  }
  return out;
}

}  // namespace degpr
