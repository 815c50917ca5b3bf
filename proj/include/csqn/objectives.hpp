#pragma once

// Finite-sum objectives F(x) = (1/n) sum_i l(x; a_i, b_i), their mini-batch
// oracles, the synthetic sparse dataset, and smoothness diagnostics.

#include "csqn/common.hpp"
#include "csqn/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace csqn {

enum class ObjectiveKind { RobustLinearRegression, NonconvexLogistic, SigmoidCrossEntropy };

enum class LabelMode { PlusMinusOne, ZeroOne };

inline std::string to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::RobustLinearRegression: return "robust_linear_regression";
    case ObjectiveKind::NonconvexLogistic: return "nonconvex_logistic";
    case ObjectiveKind::SigmoidCrossEntropy: return "sigmoid_cross_entropy";
  }
  return "unknown";
}

inline ObjectiveKind objective_from_string(std::string_view name) {
  if (name == "robust_linear_regression" || name == "robust_lr") return ObjectiveKind::RobustLinearRegression;
  if (name == "nonconvex_logistic" || name == "logistic") return ObjectiveKind::NonconvexLogistic;
  if (name == "sigmoid_cross_entropy") return ObjectiveKind::SigmoidCrossEntropy;
  throw ConfigError("unknown objective '" + std::string(name) + "'");
}

/// Label convention each objective expects from the generator.
inline LabelMode natural_label_mode(ObjectiveKind kind) {
  return kind == ObjectiveKind::NonconvexLogistic ? LabelMode::ZeroOne : LabelMode::PlusMinusOne;
}

struct Sample {
  Vector features;
  double label = 0.0;
};

/// n samples of dimension d, stored row-major so each sample is contiguous.
class Dataset {
 public:
  using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Dataset() = default;

  Dataset(FeatureMatrix features, Vector labels) : features_(std::move(features)), labels_(std::move(labels)) {
    require_config(features_.rows() > 0 && features_.cols() > 0, "dataset must have n >= 1 and d >= 1");
    require_config(features_.rows() == labels_.size(), "dataset label count differs from sample count");
  }

  static Dataset from_samples(const std::vector<Sample>& samples) {
    require_config(!samples.empty(), "dataset must contain at least one sample");
    const auto d = samples.front().features.size();
    FeatureMatrix a(static_cast<Eigen::Index>(samples.size()), d);
    Vector b(static_cast<Eigen::Index>(samples.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
      require_config(samples[i].features.size() == d, "sample " + std::to_string(i) + " has wrong dimension");
      a.row(static_cast<Eigen::Index>(i)) = samples[i].features.transpose();
      b[static_cast<Eigen::Index>(i)] = samples[i].label;
    }
    return Dataset(std::move(a), std::move(b));
  }

  Index size() const { return static_cast<Index>(features_.rows()); }
  Index dimension() const { return static_cast<Index>(features_.cols()); }

  auto features(Index i) const { return features_.row(static_cast<Eigen::Index>(i)); }
  double label(Index i) const { return labels_[static_cast<Eigen::Index>(i)]; }

  const FeatureMatrix& feature_matrix() const { return features_; }
  const Vector& labels() const { return labels_; }

  Sample sample(Index i) const { return {features(i).transpose(), label(i)}; }

  bool operator==(const Dataset& o) const { return features_ == o.features_ && labels_ == o.labels_; }

 private:
  FeatureMatrix features_;
  Vector labels_;
};

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
  Index d = 100;
  Index n = 5000;
  double sparsity = 0.1;
  LabelMode label_mode = LabelMode::PlusMinusOne;
  std::uint64_t seed = 0;
  /// One u shared by every sample instead of a fresh u_i per sample.
  bool shared_u = false;
};

inline Index nonzeros_per_sample(Index d, double sparsity) {
  require_config(sparsity > 0.0 && sparsity <= 1.0, "sparsity must lie in (0, 1]");
  return static_cast<Index>(std::llround(sparsity * static_cast<double>(d)));
}

/// Sparse features with nonzero values uniform in [0,1] at positions chosen
/// uniformly without replacement; label b_i = sign(u_i^T a_i) with u_i uniform
/// in [-1,1]^d (sign(0) is taken as +1).
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  require_config(spec.d >= 1, "d must be >= 1");
  require_config(spec.n >= 1, "n must be >= 1");
  const Index nnz = nonzeros_per_sample(spec.d, spec.sparsity);
  require_config(nnz >= 1, "sparsity * d rounds to zero nonzeros per sample");

  RngStream rng(spec.seed, Stream::Data);
  const auto d = static_cast<Eigen::Index>(spec.d);
  Dataset::FeatureMatrix a = Dataset::FeatureMatrix::Zero(static_cast<Eigen::Index>(spec.n), d);
  Vector b(static_cast<Eigen::Index>(spec.n));

  Vector shared(d);
  if (spec.shared_u)
    for (Eigen::Index j = 0; j < d; ++j) shared[j] = rng.uniform(-1.0, 1.0);

  std::vector<Index> positions(spec.d);
  Vector u(d);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    std::iota(positions.begin(), positions.end(), Index{0});
    for (Index j = 0; j < nnz; ++j) {
      const Index pick = j + static_cast<Index>(rng.index(spec.d - j));
      std::swap(positions[j], positions[pick]);
      a(i, static_cast<Eigen::Index>(positions[j])) = rng.uniform();
    }
    if (spec.shared_u) {
      u = shared;
    } else {
      for (Eigen::Index j = 0; j < d; ++j) u[j] = rng.uniform(-1.0, 1.0);
    }
    const double sign = a.row(i).dot(u) >= 0.0 ? 1.0 : -1.0;
    b[i] = spec.label_mode == LabelMode::ZeroOne ? (sign + 1.0) / 2.0 : sign;
  }
  return Dataset(std::move(a), std::move(b));
}

// ---------------------------------------------------------------------------
// Persistence: line 1 "d n", then "label idx:val idx:val ..." per sample.

inline std::string serialize_dataset(const Dataset& data) {
  std::string out = std::to_string(data.dimension()) + " " + std::to_string(data.size()) + "\n";
  char buf[64];
  auto put = [&](double v) {
    const int len = std::snprintf(buf, sizeof(buf), "%.17g", v);
    out.append(buf, static_cast<std::size_t>(len));
  };
  for (Index i = 0; i < data.size(); ++i) {
    put(data.label(i));
    const auto row = data.features(i);
    for (Eigen::Index j = 0; j < row.size(); ++j) {
      if (row[j] == 0.0) continue;
      out += ' ';
      out += std::to_string(j);
      out += ':';
      put(row[j]);
    }
    out += '\n';
  }
  return out;
}

inline Dataset parse_dataset(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset: missing header line");
  long long d = 0, n = 0;
  {
    std::istringstream hdr(line);
    if (!(hdr >> d >> n) || d < 1 || n < 1) throw ConfigError("dataset: header must be 'd n' with positive values");
  }
  Dataset::FeatureMatrix a = Dataset::FeatureMatrix::Zero(n, d);
  Vector b(n);
  for (long long i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw ConfigError("dataset: expected " + std::to_string(n) + " samples, got " + std::to_string(i));
    std::istringstream row(line);
    std::string tok;
    if (!(row >> tok)) throw ConfigError("dataset: empty sample line " + std::to_string(i + 2));
    b[i] = std::stod(tok);
    while (row >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw ConfigError("dataset: malformed entry '" + tok + "' on line " + std::to_string(i + 2));
      const long long j = std::stoll(tok.substr(0, colon));
      if (j < 0 || j >= d) throw ConfigError("dataset: index " + std::to_string(j) + " out of range on line " + std::to_string(i + 2));
      a(i, j) = std::stod(tok.substr(colon + 1));
    }
  }
  return Dataset(std::move(a), std::move(b));
}

inline void save_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << serialize_dataset(data);
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_dataset(ss.str());
}

// ---------------------------------------------------------------------------
// Per-sample losses

/// log(sigmoid(z)) without overflow for large |z|.
inline double log_sigmoid(double z) {
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace detail {

inline void check_label(ObjectiveKind kind, double b) {
  if (kind == ObjectiveKind::NonconvexLogistic && b != 0.0 && b != 1.0)
    throw ConfigError("logistic objective requires labels in {0,1}, got " + std::to_string(b));
}

inline double sample_loss(ObjectiveKind kind, double z, double b) {
  switch (kind) {
    case ObjectiveKind::RobustLinearRegression: {
      const double t = b - z;
      return std::log1p(t * t / 2.0);
    }
    case ObjectiveKind::NonconvexLogistic:
      return -(b * log_sigmoid(z) + (1.0 - b) * log_sigmoid(-z));
    case ObjectiveKind::SigmoidCrossEntropy:
      return b * log_sigmoid(z);
  }
  return 0.0;
}

/// d l / d z where z = a^T x; the sample gradient is this times a.
inline double sample_slope(ObjectiveKind kind, double z, double b) {
  switch (kind) {
    case ObjectiveKind::RobustLinearRegression: {
      const double t = b - z;
      return -t / (t * t / 2.0 + 1.0);
    }
    case ObjectiveKind::NonconvexLogistic:
      return sigmoid(z) - b;
    case ObjectiveKind::SigmoidCrossEntropy:
      return b * sigmoid(-z);
  }
  return 0.0;
}

inline void check_batch(const Dataset& data, const Vector& x, std::span<const Index> batch) {
  if (batch.empty()) throw ContractViolation("empty batch");
  require(static_cast<Index>(x.size()) == data.dimension(), "parameter length differs from dataset dimension");
  for (Index i : batch) require(i < data.size(), "batch index out of range");
}

}  // namespace detail

inline double sample_loss(ObjectiveKind kind, const Vector& x, const Dataset& data, Index i) {
  detail::check_label(kind, data.label(i));
  return detail::sample_loss(kind, data.features(i).dot(x), data.label(i));
}

inline Vector sample_gradient(ObjectiveKind kind, const Vector& x, const Dataset& data, Index i) {
  detail::check_label(kind, data.label(i));
  return detail::sample_slope(kind, data.features(i).dot(x), data.label(i)) * data.features(i).transpose();
}

/// Mean per-sample loss over `batch` (a multiset; duplicates count).
inline double loss(ObjectiveKind kind, const Vector& x, const Dataset& data, std::span<const Index> batch) {
  detail::check_batch(data, x, batch);
  double total = 0.0;
  for (Index i : batch) {
    detail::check_label(kind, data.label(i));
    total += detail::sample_loss(kind, data.features(i).dot(x), data.label(i));
  }
  return total / static_cast<double>(batch.size());
}

inline Vector gradient(ObjectiveKind kind, const Vector& x, const Dataset& data, std::span<const Index> batch) {
  detail::check_batch(data, x, batch);
  Vector g = Vector::Zero(x.size());
  for (Index i : batch) {
    detail::check_label(kind, data.label(i));
    const auto a = data.features(i);
    g.noalias() += detail::sample_slope(kind, a.dot(x), data.label(i)) * a.transpose();
  }
  return g / static_cast<double>(batch.size());
}

/// Mini-batch gradient plus the norm of every per-sample gradient, which the
/// adaptive damping needs. Costs the same as `gradient`.
inline Vector gradient_with_norms(ObjectiveKind kind, const Vector& x, const Dataset& data,
                                  std::span<const Index> batch, std::vector<double>& norms) {
  detail::check_batch(data, x, batch);
  norms.clear();
  norms.reserve(batch.size());
  Vector g = Vector::Zero(x.size());
  for (Index i : batch) {
    detail::check_label(kind, data.label(i));
    const auto a = data.features(i);
    const double slope = detail::sample_slope(kind, a.dot(x), data.label(i));
    g.noalias() += slope * a.transpose();
    norms.push_back(std::abs(slope) * a.norm());
  }
  return g / static_cast<double>(batch.size());
}

inline std::vector<Index> full_batch(const Dataset& data) {
  std::vector<Index> all(data.size());
  std::iota(all.begin(), all.end(), Index{0});
  return all;
}

inline double full_loss(ObjectiveKind kind, const Vector& x, const Dataset& data) {
  require(static_cast<Index>(x.size()) == data.dimension(), "parameter length differs from dataset dimension");
  const auto& a = data.feature_matrix();
  const Vector z = a * x;
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    detail::check_label(kind, data.labels()[i]);
    total += detail::sample_loss(kind, z[i], data.labels()[i]);
  }
  return total / static_cast<double>(z.size());
}

inline Vector full_gradient(ObjectiveKind kind, const Vector& x, const Dataset& data) {
  require(static_cast<Index>(x.size()) == data.dimension(), "parameter length differs from dataset dimension");
  const auto& a = data.feature_matrix();
  const Vector z = a * x;
  Vector slope(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    detail::check_label(kind, data.labels()[i]);
    slope[i] = detail::sample_slope(kind, z[i], data.labels()[i]);
  }
  return a.transpose() * slope / static_cast<double>(z.size());
}

// ---------------------------------------------------------------------------
// Smoothness constants

/// (L0, L1) together with the per-sample constants (gamma0, gamma1) and the
/// gradient-noise level sigma they were derived from.
struct SmoothnessParams {
  double L0 = 1.0;
  double L1 = 0.0;
  double gamma0 = 1.0;
  double gamma1 = 0.0;
  double sigma = 0.0;

  static double L0_from_gamma(double gamma0, double gamma1, double sigma) {
    return std::sqrt(2.0 * (gamma0 * gamma0 + gamma1 * gamma1 * sigma * sigma));
  }

  /// L0 = sqrt(2(g0^2 + g1^2 s^2)), L1 = g1 sqrt(2).
  static SmoothnessParams from_gamma(double gamma0, double gamma1, double sigma) {
    SmoothnessParams p{L0_from_gamma(gamma0, gamma1, sigma), gamma1 * std::sqrt(2.0), gamma0, gamma1, sigma};
    p.validate();
    return p;
  }

  void validate() const {
    require_config(L0 > 0.0, "L0 must be > 0");
    require_config(L1 >= 0.0, "L1 must be >= 0");
    require_config(gamma0 > 0.0, "gamma0 must be > 0");
    require_config(gamma1 >= 0.0, "gamma1 must be >= 0");
    require_config(sigma >= 0.0, "sigma must be >= 0");
  }

  bool operator==(const SmoothnessParams&) const = default;

  bool gamma_consistent(double tol = 0.0) const {
    const double l0 = L0_from_gamma(gamma0, gamma1, sigma);
    const double l1 = gamma1 * std::sqrt(2.0);
    return std::abs(L0 - l0) <= tol * l0 && std::abs(L1 - l1) <= tol * std::max(1.0, l1);
  }
};

/// Upper bound on |l''(z)| for the per-sample scalar loss.
inline double curvature_bound(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::RobustLinearRegression: return 1.0;  // l''(t) = (1 - t^2/2)/(1 + t^2/2)^2
    case ObjectiveKind::NonconvexLogistic: return 0.25;
    case ObjectiveKind::SigmoidCrossEntropy: return 0.25;
  }
  return 1.0;
}

/// Empirical gradient-noise level sqrt(mean_i ||grad l_i(x) - grad F(x)||^2).
inline double estimate_sigma(ObjectiveKind kind, const Dataset& data, const Vector& x) {
  const Vector mean = full_gradient(kind, x, data);
  double acc = 0.0;
  for (Index i = 0; i < data.size(); ++i) acc += (sample_gradient(kind, x, data, i) - mean).squaredNorm();
  return std::sqrt(acc / static_cast<double>(data.size()));
}

/// Per-sample Hessians are l''(a^T x) a a^T, so gamma0 = max|l''| max ||a_i||^2
/// and gamma1 = 0 satisfy the per-sample smoothness condition for every sample.
inline SmoothnessParams derive_smoothness_params(ObjectiveKind kind, const Dataset& data, double sigma = 0.0) {
  double max_sq = 0.0;
  for (Index i = 0; i < data.size(); ++i) max_sq = std::max(max_sq, data.features(i).squaredNorm());
  return SmoothnessParams::from_gamma(curvature_bound(kind) * std::max(max_sq, 1e-12), 0.0, sigma);
}

// ---------------------------------------------------------------------------
// Smoothness diagnostics

struct CrossEntropyReport {
  std::vector<double> ratios;  // one per probe with nonzero gradient
  double max_ratio = 0.0;
  double u_norm = 0.0;
  Index skipped = 0;
  bool bound_holds = true;

  bool empty() const { return ratios.empty(); }
};

/// For F(x) = y log(sigmoid(u^T x)): grad = y(1 - yhat)u and
/// Hess = -y yhat(1 - yhat) u u^T, so ||Hess|| / ||grad|| = yhat ||u||.
inline CrossEntropyReport check_cross_entropy_smoothness(const Vector& u, double y, std::span<const Vector> xs,
                                                         double tol = 1e-12) {
  CrossEntropyReport report;
  report.u_norm = u.norm();
  for (const Vector& x : xs) {
    require(x.size() == u.size(), "probe dimension differs from u");
    const double z = u.dot(x);
    const double yhat = sigmoid(z);
    const double one_minus = sigmoid(-z);
    const Vector grad = y * one_minus * u;
    const double grad_norm = grad.norm();
    if (grad_norm == 0.0) {
      ++report.skipped;
      continue;
    }
    const Matrix hess = -y * yhat * one_minus * (u * u.transpose());
    const double hess_norm = hess.selfadjointView<Eigen::Lower>().operatorNorm();
    const double ratio = hess_norm / grad_norm;
    report.ratios.push_back(ratio);
    report.max_ratio = std::max(report.max_ratio, ratio);
    if (ratio > report.u_norm * (1.0 + tol) + tol) report.bound_holds = false;
  }
  return report;
}

struct SmoothnessPoint {
  double grad_norm = 0.0;
  double smoothness = 0.0;
};

/// Local smoothness ||grad(x_{k+1}) - grad(x_k)|| / ||x_{k+1} - x_k|| between
/// consecutive iterates, paired with ||grad(x_k)||. Coincident iterates are skipped.
template <typename GradFn>
std::vector<SmoothnessPoint> estimate_smoothness_along_trajectory(GradFn&& grad, std::span<const Vector> xs) {
  require(xs.size() >= 2, "need at least two iterates");
  std::vector<SmoothnessPoint> out;
  Vector g_prev = grad(xs[0]);
  for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
    Vector g_next = grad(xs[k + 1]);
    const double step = (xs[k + 1] - xs[k]).norm();
    if (step > 0.0) out.push_back({g_prev.norm(), (g_next - g_prev).norm() / step});
    g_prev = std::move(g_next);
  }
  return out;
}

inline std::vector<SmoothnessPoint> estimate_smoothness_along_trajectory(ObjectiveKind kind, const Dataset& data,
                                                                         std::span<const Vector> xs) {
  return estimate_smoothness_along_trajectory([&](const Vector& x) { return full_gradient(kind, x, data); }, xs);
}

}  // namespace csqn
