#pragma once

// Adaptive damped L-BFGS. Curvature pairs are damped so that s^T ybar stays
// bounded below by w q c s^T s, the weights w = kappa^2 / Gamma^2 and
// q_k = q Gamma^4 adapt to a data-dependent smoothness proxy Gamma, and the
// inverse-Hessian action is computed with the two-loop recursion.
//
// Dense BFGS updates and the explicit H_{k,m} recursion live here too; they
// are O(d^2) reference implementations used to check the limited-memory path.

#include "csqn/common.hpp"
#include "csqn/objectives.hpp"

#include <cmath>
#include <deque>
#include <optional>
#include <span>
#include <vector>

namespace csqn {

struct DampingParams {
  double delta = 1.0;
  double q = 0.5;
  double kappa = 1.0;
  Index memory_size = 5;

  void validate() const {
    require_config(delta > 0.0, "damping delta must be > 0");
    require_config(q > 0.0, "damping q must be > 0");
    require_config(kappa > 0.0, "damping kappa must be > 0");
    require_config(memory_size >= 1, "memory_size must be >= 1");
  }

  bool operator==(const DampingParams&) const = default;
};

struct EigenBounds {
  double lambda_m = 1.0;
  double lambda_M = 1.0;

  void validate() const {
    require_config(lambda_m > 0.0, "lambda_m must be > 0");
    require_config(lambda_M >= lambda_m, "lambda_M must be >= lambda_m");
  }

  bool operator==(const EigenBounds&) const = default;
};

struct CurvaturePair {
  Vector s;
  Vector y;      // raw gradient difference
  Vector y_bar;  // damped
  double rho = 0.0;
  double gamma = 0.0;
  double theta = 1.0;
  double w = 1.0;
  double q = 0.5;
  double c = 1.0;
};

/// Ring of at most p damped pairs, oldest first, plus the current scaling c_k
/// of the initial matrix H_{k,0} = c_k^{-1} I.
class LbfgsMemory {
 public:
  explicit LbfgsMemory(Index capacity = 5, double c = 1.0) : capacity_(capacity), c_(c) {
    require_config(capacity >= 1, "memory_size must be >= 1");
    require(c > 0.0, "scaling c must be > 0");
  }

  void push(CurvaturePair pair) {
    require(pair.rho > 0.0 && std::isfinite(pair.rho), "curvature pair must have s^T ybar > 0");
    if (pairs_.size() == capacity_) pairs_.pop_front();
    pairs_.push_back(std::move(pair));
  }

  void set_scaling(double c) {
    require(c > 0.0 && std::isfinite(c), "scaling c must be positive and finite");
    c_ = c;
  }

  double scaling() const { return c_; }
  Index capacity() const { return capacity_; }
  Index size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  const std::deque<CurvaturePair>& pairs() const { return pairs_; }
  void clear() { pairs_.clear(); }

 private:
  Index capacity_;
  double c_;
  std::deque<CurvaturePair> pairs_;
};

/// Gamma = gamma0 (1 + e^{gamma1/L0} / L0) + (gamma1^2 / m) sum_l ||grad l(x; xi_l)||,
/// L0 = sqrt(2 (gamma0^2 + gamma1^2 sigma^2)).
inline double compute_gamma_from_norms(std::span<const double> sample_grad_norms, const SmoothnessParams& params) {
  require_config(params.gamma0 > 0.0, "gamma0 must be > 0");
  const double L0 = SmoothnessParams::L0_from_gamma(params.gamma0, params.gamma1, params.sigma);
  double gamma = params.gamma0 * (1.0 + std::exp(params.gamma1 / L0) / L0);
  if (params.gamma1 == 0.0) return gamma;
  require(!sample_grad_norms.empty(), "Gamma needs at least one sample gradient when gamma1 > 0");
  double sum = 0.0;
  for (double n : sample_grad_norms) sum += n;
  return gamma + params.gamma1 * params.gamma1 * sum / static_cast<double>(sample_grad_norms.size());
}

inline double compute_gamma(std::span<const Vector> batch_gradients, const SmoothnessParams& params) {
  std::vector<double> norms;
  norms.reserve(batch_gradients.size());
  for (const auto& g : batch_gradients) norms.push_back(g.norm());
  return compute_gamma_from_norms(norms, params);
}

/// The damping weights for one pair: w and q_k, with q_k clamped below 1.
struct DampingWeights {
  double w = 1.0;
  double q = 0.5;
  bool clamped = false;
};

inline constexpr double kMaxDampingQ = 1.0 - 1e-6;

/// w = kappa^2 / Gamma^2, q_k = min(q Gamma^4, 1 - 1e-6).
inline DampingWeights adaptive_weights(double gamma, const DampingParams& params) {
  require(gamma > 0.0, "Gamma must be > 0");
  const double g2 = gamma * gamma;
  const double qk = params.q * g2 * g2;
  return {params.kappa * params.kappa / g2, std::min(qk, kMaxDampingQ), qk >= kMaxDampingQ};
}

/// c_k = max{delta, w y^T y / s^T y}; only delta when s^T y <= 0.
inline double compute_scaling(const Vector& s, const Vector& y, double w, double delta) {
  const double sy = s.dot(y);
  if (!(sy > 0.0)) return delta;
  return std::max(delta, w * y.squaredNorm() / sy);
}

inline double compute_scaling(const Vector& s, const Vector& y, double gamma, const DampingParams& params) {
  return compute_scaling(s, y, adaptive_weights(gamma, params).w, params.delta);
}

/// ybar = w (theta y + (1 - theta) c s) with theta = 1 unless
/// s^T y < q mubar (mubar = c s^T s), where theta = (1 - q) mubar / (mubar - s^T y).
/// Guarantees s^T ybar >= w q c s^T s. Returns nullopt when s = 0.
inline std::optional<CurvaturePair> damp_pair(const Vector& s, const Vector& y, double c, const DampingWeights& wq,
                                              double gamma = 0.0) {
  require(s.size() == y.size(), "s and y differ in length");
  require(c > 0.0, "scaling c must be > 0");
  require(wq.w > 0.0 && wq.q > 0.0 && wq.q < 1.0, "damping weights need w > 0 and q in (0,1)");
  const double ss = s.squaredNorm();
  if (!(ss > 0.0)) return std::nullopt;
  const double sy = s.dot(y);
  const double mu_bar = c * ss;
  double theta = 1.0;
  if (sy < wq.q * mu_bar) theta = (1.0 - wq.q) * mu_bar / (mu_bar - sy);
  CurvaturePair pair;
  pair.s = s;
  pair.y = y;
  pair.y_bar = wq.w * (theta * y + (1.0 - theta) * c * s);
  const double sy_bar = s.dot(pair.y_bar);
  if (!(sy_bar > 0.0) || !std::isfinite(sy_bar)) return std::nullopt;
  pair.rho = 1.0 / sy_bar;
  pair.gamma = gamma;
  pair.theta = theta;
  pair.w = wq.w;
  pair.q = wq.q;
  pair.c = c;
  return pair;
}

inline std::optional<CurvaturePair> damp_pair(const Vector& s, const Vector& y, double c, double gamma,
                                              const DampingParams& params) {
  return damp_pair(s, y, c, adaptive_weights(gamma, params), gamma);
}

/// H_k v in O(m d) via the two-loop recursion over the stored pairs with
/// H_{k,0} = c^{-1} I.
inline Vector two_loop_apply(const LbfgsMemory& memory, const Vector& v) {
  const auto& pairs = memory.pairs();
  const std::size_t m = pairs.size();
  std::vector<double> alpha(m);
  Vector u = v;
  for (std::size_t i = m; i-- > 0;) {
    const auto& p = pairs[i];
    alpha[i] = p.rho * p.s.dot(u);
    u.noalias() -= alpha[i] * p.y_bar;
  }
  u /= memory.scaling();
  for (std::size_t i = 0; i < m; ++i) {
    const auto& p = pairs[i];
    const double beta = p.rho * p.y_bar.dot(u);
    u.noalias() += (alpha[i] - beta) * p.s;
  }
  return u;
}

inline constexpr Index kDenseDimensionLimit = 64;

/// Explicit H_{k,m}: start from c^{-1} I and apply
/// H <- (I - rho s ybar^T) H (I - rho ybar s^T) + rho s s^T, oldest pair first.
inline Matrix dense_hk(const LbfgsMemory& memory, Index dimension) {
  if (dimension > kDenseDimensionLimit)
    throw ContractViolation("dense_hk is limited to d <= " + std::to_string(kDenseDimensionLimit));
  const auto d = static_cast<Eigen::Index>(dimension);
  Matrix h = Matrix::Identity(d, d) / memory.scaling();
  for (const auto& p : memory.pairs()) {
    require(p.s.size() == d, "pair dimension differs");
    const Matrix v = Matrix::Identity(d, d) - p.rho * p.y_bar * p.s.transpose();
    h = v.transpose() * h * v + p.rho * p.s * p.s.transpose();
  }
  return h;
}

inline Matrix dense_hk(const LbfgsMemory& memory) {
  require(!memory.empty(), "dimension unknown for an empty memory; pass it explicitly");
  return dense_hk(memory, static_cast<Index>(memory.pairs().front().s.size()));
}

// ---------------------------------------------------------------------------
// Full-matrix adaptive BFGS (reference only)

struct DenseBfgsState {
  Matrix B;
  Matrix H;
  double last_theta = 1.0;
  Vector last_y_hat;

  static DenseBfgsState identity(Index d) {
    const auto n = static_cast<Eigen::Index>(d);
    return {Matrix::Identity(n, n), Matrix::Identity(n, n), 1.0, Vector::Zero(n)};
  }
};

/// One adaptive BFGS update of both B and H = B^{-1}, damping y toward B s.
inline DenseBfgsState dense_bfgs_step(const DenseBfgsState& state, const Vector& s, const Vector& y, double q_hat,
                                      double w_hat) {
  require(q_hat > 0.0 && q_hat < 1.0, "q_hat must lie in (0,1)");
  require(w_hat > 0.0, "w_hat must be > 0");
  require(s.squaredNorm() > 0.0, "s must be nonzero");
  const Vector bs = state.B * s;
  const double mu = s.dot(bs);
  if (!(mu > 0.0)) throw ContractViolation("s^T B s <= 0: B is not positive definite");
  const double sy = s.dot(y);
  const double theta = sy < q_hat * mu ? (1.0 - q_hat) * mu / (mu - sy) : 1.0;
  const Vector y_hat = w_hat * (theta * y + (1.0 - theta) * bs);
  const double rho = 1.0 / s.dot(y_hat);

  DenseBfgsState next;
  next.B = state.B - bs * bs.transpose() / mu + rho * y_hat * y_hat.transpose();
  const auto d = s.size();
  const Matrix v = Matrix::Identity(d, d) - rho * y_hat * s.transpose();
  next.H = v.transpose() * state.H * v + rho * s * s.transpose();
  next.last_theta = theta;
  next.last_y_hat = y_hat;
  return next;
}

// ---------------------------------------------------------------------------
// Closed-form eigenvalue envelope of H_k under w = kappa^2/Gamma^2, q_k = q Gamma^4

/// lambda_m = (delta + (kappa^2 p / (q g0^4)) (1/delta + (delta g0 + kappa^2)/g0^3
///             + (p + 2 q g0^4)/(2 p g0)))^{-1}
inline double lambda_m_bound(const DampingParams& params, double gamma0) {
  params.validate();
  require_config(gamma0 > 0.0, "gamma0 must be > 0");
  const double p = static_cast<double>(params.memory_size);
  const double k2 = params.kappa * params.kappa;
  const double g4 = std::pow(gamma0, 4);
  const double inner = 1.0 / params.delta + (params.delta * gamma0 + k2) / std::pow(gamma0, 3) +
                       (p + 2.0 * params.q * g4) / (2.0 * p * gamma0);
  return 1.0 / (params.delta + k2 * p / (params.q * g4) * inner);
}

/// lambda_M = (1/(delta g0^2 kappa^2 q)) (a^p - 1)/(a - 1),
/// a = 1 + 2/(delta g0 kappa^2 q) + (1/(delta g0 kappa^2 q))^2
inline double lambda_M_bound(const DampingParams& params, double gamma0) {
  params.validate();
  require_config(gamma0 > 0.0, "gamma0 must be > 0");
  const double k2 = params.kappa * params.kappa;
  const double b = 1.0 / (params.delta * gamma0 * k2 * params.q);
  const double a = 1.0 + 2.0 * b + b * b;
  const double p = static_cast<double>(params.memory_size);
  // (a^p - 1)/(a - 1) = 1 + a + ... + a^{p-1}
  const double geometric = std::expm1(p * std::log(a)) / (a - 1.0);
  return b / gamma0 * geometric;
}

inline EigenBounds closed_form_bounds(const DampingParams& params, double gamma0) {
  return {lambda_m_bound(params, gamma0), lambda_M_bound(params, gamma0)};
}

}  // namespace csqn
