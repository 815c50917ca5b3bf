#pragma once

// Reference computations for the tests. These take different routes from the
// library code they check: forward B-updates plus an explicit inverse instead
// of the H recursion, naive loss formulas, finite differences.

#include "csqn/common.hpp"
#include "csqn/objectives.hpp"
#include "csqn/quasi_newton.hpp"
#include "csqn/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace oracle {

using csqn::Index;
using csqn::Matrix;
using csqn::Vector;

inline Vector gaussian(csqn::RngStream& rng, Index d, double scale = 1.0) {
  Vector v(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scale * rng.normal();
  return v;
}

/// Symmetric matrix with spectrum uniform in [lo, hi].
inline Matrix symmetric_with_spectrum(csqn::RngStream& rng, Index d, double lo, double hi) {
  const auto n = static_cast<Eigen::Index>(d);
  Matrix a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = rng.normal();
  const Matrix q = Eigen::HouseholderQR<Matrix>(a).householderQ();
  Vector e(n);
  for (Eigen::Index i = 0; i < n; ++i) e[i] = rng.uniform(lo, hi);
  return q * e.asDiagonal() * q.transpose();
}

/// H_k as the inverse of B_k, where B_0 = c I and each stored pair applies
/// B <- B - B s s^T B / (s^T B s) + ybar ybar^T / (s^T ybar).
inline Matrix inverse_of_forward_bfgs(const csqn::LbfgsMemory& memory, Index d) {
  const auto n = static_cast<Eigen::Index>(d);
  Matrix b = memory.scaling() * Matrix::Identity(n, n);
  for (const auto& p : memory.pairs()) {
    const Vector bs = b * p.s;
    b = b - bs * bs.transpose() / p.s.dot(bs) + p.y_bar * p.y_bar.transpose() / p.s.dot(p.y_bar);
  }
  return b.inverse();
}

/// H_k from its product form: H_0 = c^{-1} I, then for each pair oldest first
/// H <- (I - rho s ybar^T) H (I - rho ybar s^T) + rho s s^T.
inline Matrix dense_product_form(const csqn::LbfgsMemory& memory, Index d) {
  const auto n = static_cast<Eigen::Index>(d);
  const Matrix eye = Matrix::Identity(n, n);
  Matrix h = eye / memory.scaling();
  for (const auto& p : memory.pairs()) {
    const double rho = 1.0 / p.s.dot(p.y_bar);
    const Matrix left = eye - rho * p.s * p.y_bar.transpose();
    h = left * h * left.transpose() + rho * p.s * p.s.transpose();
  }
  return h;
}

/// Factor F of the product form with H_k = F F^T: F_0 = c^{-1/2} I and
/// F <- [(I - rho s ybar^T) F, sqrt(rho) s]. The smallest singular value of F
/// resolves lambda_min(H_k) = sigma_min(F)^2 far below the rounding floor of
/// an eigen-decomposition of H_k itself.
inline double lambda_min_factored(const csqn::LbfgsMemory& memory, Index d) {
  const auto n = static_cast<Eigen::Index>(d);
  const Matrix eye = Matrix::Identity(n, n);
  Matrix f = eye / std::sqrt(memory.scaling());
  for (const auto& p : memory.pairs()) {
    const double rho = 1.0 / p.s.dot(p.y_bar);
    Matrix next(n, f.cols() + 1);
    next << (eye - rho * p.s * p.y_bar.transpose()) * f, std::sqrt(rho) * p.s;
    f = std::move(next);
  }
  const double sigma = Eigen::JacobiSVD<Matrix>(f).singularValues().minCoeff();
  return sigma * sigma;
}

inline Eigen::VectorXd eigenvalues(const Matrix& m) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly).eigenvalues();
}

/// Per-sample losses written out directly from their definitions.
inline double naive_loss(csqn::ObjectiveKind kind, double z, double b) {
  switch (kind) {
    case csqn::ObjectiveKind::RobustLinearRegression: {
      const double t = b - z;
      return std::log(t * t / 2.0 + 1.0);
    }
    case csqn::ObjectiveKind::NonconvexLogistic: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return -(b * std::log(s) + (1.0 - b) * std::log(1.0 - s));
    }
    case csqn::ObjectiveKind::SigmoidCrossEntropy: return b * std::log(1.0 / (1.0 + std::exp(-z)));
  }
  return 0.0;
}

inline double naive_batch_loss(csqn::ObjectiveKind kind, const Vector& x, const csqn::Dataset& data,
                               const std::vector<Index>& batch) {
  double acc = 0.0;
  for (Index i : batch) acc += naive_loss(kind, data.features(i).dot(x), data.label(i));
  return acc / static_cast<double>(batch.size());
}

/// Batch gradient from the scalar derivatives of the losses above.
inline Vector naive_gradient(csqn::ObjectiveKind kind, const Vector& x, const csqn::Dataset& data,
                             const std::vector<Index>& batch) {
  Vector g = Vector::Zero(x.size());
  for (Index i : batch) {
    const Vector a = data.features(i).transpose();
    const double z = a.dot(x), b = data.label(i);
    double slope = 0.0;
    if (kind == csqn::ObjectiveKind::RobustLinearRegression) slope = -(b - z) / (1.0 + (b - z) * (b - z) / 2.0);
    if (kind == csqn::ObjectiveKind::NonconvexLogistic) slope = 1.0 / (1.0 + std::exp(-z)) - b;
    if (kind == csqn::ObjectiveKind::SigmoidCrossEntropy) slope = b / (1.0 + std::exp(z));
    g += slope * a;
  }
  return g / static_cast<double>(batch.size());
}

inline std::vector<Index> all_indices(const csqn::Dataset& data) {
  std::vector<Index> out(data.size());
  std::iota(out.begin(), out.end(), Index{0});
  return out;
}

/// Central differences with step h.
inline Vector central_difference(const std::function<double(const Vector&)>& f, Vector x, double h = 1e-5) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = f(x);
    x[i] = xi - h;
    const double fm = f(x);
    x[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

/// Tiny dataset from explicit rows.
inline csqn::Dataset make_dataset(const std::vector<std::vector<double>>& rows, const std::vector<double>& labels) {
  std::vector<csqn::Sample> samples;
  for (std::size_t i = 0; i < rows.size(); ++i)
    samples.push_back({Eigen::Map<const Vector>(rows[i].data(), static_cast<Eigen::Index>(rows[i].size())),
                       labels[i]});
  return csqn::Dataset::from_samples(samples);
}

}  // namespace oracle
