#pragma once

// Property checks run by the `verify` command. Each check draws its own
// randomized instances from a seed and compares the fast code paths against
// the dense references and closed forms in this library.

#include "csqn/baselines.hpp"
#include "csqn/common.hpp"
#include "csqn/experiment.hpp"
#include "csqn/objectives.hpp"
#include "csqn/optimizer.hpp"
#include "csqn/quasi_newton.hpp"
#include "csqn/rng.hpp"
#include "csqn/spider.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace csqn {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace verify_detail {

inline Vector random_vector(RngStream& rng, Index d, double scale = 1.0) {
  Vector v(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scale * rng.normal();
  return v;
}

/// Symmetric matrix with eigenvalues drawn from [lo, hi].
inline Matrix random_symmetric(RngStream& rng, Index d, double lo, double hi) {
  const auto n = static_cast<Eigen::Index>(d);
  Matrix a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(a);
  const Matrix q = qr.householderQ();
  Vector eig(n);
  for (Eigen::Index i = 0; i < n; ++i) eig[i] = rng.uniform(lo, hi);
  return q * eig.asDiagonal() * q.transpose();
}

inline std::string fmt(double v) {
  std::ostringstream o;
  o.precision(6);
  o << v;
  return o.str();
}

inline double min_eig(const Matrix& h) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(h, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

inline double max_eig(const Matrix& h) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(h, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
}

}  // namespace verify_detail

/// two_loop_apply against the explicit product recursion.
inline CheckResult check_two_loop(std::uint64_t seed, Index cases = 1000) {
  using namespace verify_detail;
  RngStream rng(seed, Stream::Minibatch);
  double worst = 0.0;
  for (Index t = 0; t < cases; ++t) {
    const Index d = 2 + rng.index(19);
    const Index p = 1 + rng.index(5);
    LbfgsMemory mem(p, 1.0);
    const Matrix g = random_symmetric(rng, d, -1.0, 3.0);
    const Index pairs = p + rng.index(3);
    for (Index j = 0; j < pairs; ++j) {
      const Vector s = random_vector(rng, d);
      const Vector y = g * s;
      const double c = compute_scaling(s, y, 1.0, 0.1);
      if (auto pair = damp_pair(s, y, c, DampingWeights{rng.uniform(0.2, 2.0), rng.uniform(0.05, 0.95), false})) {
        mem.set_scaling(c);
        mem.push(std::move(*pair));
      }
    }
    const Vector v = random_vector(rng, d);
    const double err = (two_loop_apply(mem, v) - dense_hk(mem, d) * v).norm() / v.norm();
    worst = std::max(worst, err);
  }
  return {"two-loop matches dense H_k", worst <= 1e-10, "max relative error " + fmt(worst)};
}

/// Damped pairs keep s^T ybar >= w q c s^T s and H_k positive definite, with
/// adversarial negative-curvature y.
inline CheckResult check_positive_definite(std::uint64_t seed, Index sequences = 500) {
  using namespace verify_detail;
  RngStream rng(seed, Stream::Refresh);
  double worst_margin = 0.0, worst_eig = std::numeric_limits<double>::infinity();
  for (Index t = 0; t < sequences; ++t) {
    const Index d = 2 + rng.index(9);
    LbfgsMemory mem(1 + rng.index(5), 1.0);
    for (Index j = 0; j < 8; ++j) {
      const Vector s = random_vector(rng, d);
      Vector y = random_vector(rng, d);
      if (rng.uniform() < 0.5) y = -rng.uniform(0.1, 5.0) * s + 0.1 * y;
      const DampingWeights wq{rng.uniform(0.1, 3.0), rng.uniform(0.01, 0.99), false};
      const double c = compute_scaling(s, y, wq.w, rng.uniform(0.01, 2.0));
      auto pair = damp_pair(s, y, c, wq);
      if (!pair) continue;
      const double floor = wq.w * wq.q * c * s.squaredNorm();
      worst_margin = std::min(worst_margin, (s.dot(pair->y_bar) - floor) / floor + 1e-12);
      mem.set_scaling(c);
      mem.push(std::move(*pair));
      worst_eig = std::min(worst_eig, min_eig(dense_hk(mem, d)));
    }
  }
  const bool ok = worst_margin >= 0.0 && worst_eig > 0.0;
  return {"damped pairs keep H_k positive definite", ok,
          "min eigenvalue " + fmt(worst_eig) + ", worst relative damping margin " + fmt(worst_margin)};
}

/// Eigenvalues of H_k against the closed-form bounds with delta = kappa =
/// gamma0 = 1, q = 0.5, p = 1, so lambda_m = 1/9 and lambda_M = 2. Gamma is
/// drawn from [gamma0, (1/q)^{1/4}) so that q_k = q Gamma^4 stays below 1, and
/// y = G s with G symmetric, ||G|| <= Gamma.
inline CheckResult check_spectral_envelope(std::uint64_t seed, Index runs = 100) {
  using namespace verify_detail;
  const DampingParams params{1.0, 0.5, 1.0, 1};
  const EigenBounds bounds = closed_form_bounds(params, 1.0);
  RngStream rng(seed, Stream::Output);
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  Index below = 0, above = 0, steps = 0;
  const double gamma_cap = std::pow(1.0 / params.q, 0.25);
  for (Index t = 0; t < runs; ++t) {
    const Index d = 2 + rng.index(7);
    LbfgsMemory mem(params.memory_size, params.delta);
    for (Index j = 0; j < 10; ++j) {
      const double gamma = rng.uniform(1.0, gamma_cap);
      const Matrix g = random_symmetric(rng, d, 0.0, gamma);
      const Vector s = random_vector(rng, d);
      const Vector y = g * s;
      const DampingWeights wq = adaptive_weights(gamma, params);
      const double c = compute_scaling(s, y, wq.w, params.delta);
      auto pair = damp_pair(s, y, c, wq, gamma);
      if (!pair) continue;
      mem.set_scaling(c);
      mem.push(std::move(*pair));
      const Matrix h = dense_hk(mem, d);
      const double mn = min_eig(h), mx = max_eig(h);
      lo = std::min(lo, mn);
      hi = std::max(hi, mx);
      if (mn < bounds.lambda_m - 1e-12) ++below;
      if (mx > bounds.lambda_M + 1e-12) ++above;
      ++steps;
    }
  }
  std::string detail = "eigenvalues in [" + fmt(lo) + ", " + fmt(hi) + "] vs bounds [" + fmt(bounds.lambda_m) + ", " +
                       fmt(bounds.lambda_M) + "]; " + std::to_string(below) + " below, " + std::to_string(above) +
                       " above, of " + std::to_string(steps) + " steps";
  return {"H_k eigenvalues within closed-form bounds", below == 0 && above == 0, detail};
}

/// Worked stepsize values plus monotonicity of eta in ||v||.
inline CheckResult check_stepsize(std::uint64_t seed, Index draws = 10000) {
  using namespace verify_detail;
  struct Case {
    double v, L1, expect;
    ClipBranch branch;
  };
  const Case table[] = {{10.0, 1.0, 0.001, ClipBranch::Quadratic},
                        {0.1, 1.0, 0.5, ClipBranch::Constant},
                        {10.0, 0.0, 0.01, ClipBranch::Linear}};
  bool ok = true;
  for (const auto& c : table) {
    const Stepsize s = compute_stepsize(c.v, StepsizeParams{1.0, 1.0, c.L1, 1.0, 0.1});
    ok = ok && std::abs(s.eta - c.expect) <= 1e-15 && s.branch == c.branch;
  }
  RngStream rng(seed, Stream::Data);
  Index violations = 0;
  for (Index t = 0; t < 50; ++t) {
    const StepsizeParams p{rng.uniform(0.1, 1.0), rng.uniform(0.1, 10.0), rng.uniform(0.0, 10.0),
                           rng.uniform(0.5, 3.0), rng.uniform(0.01, 1.0)};
    std::vector<double> v(draws / 50);
    for (auto& x : v) x = std::exp(rng.uniform(-8.0, 8.0));
    std::sort(v.begin(), v.end());
    double prev = std::numeric_limits<double>::infinity();
    for (double x : v) {
      const double eta = compute_stepsize(x, p).eta;
      if (eta > prev) ++violations;
      prev = eta;
    }
  }
  return {"clipped stepsize table and monotonicity", ok && violations == 0,
          std::to_string(violations) + " monotonicity violations"};
}

/// Estimator structure: exhaustive refresh expectation, restart
/// unbiasedness, and lower error than a fresh mini-batch of equal cost.
inline CheckResult check_estimator(std::uint64_t seed) {
  using namespace verify_detail;
  const auto kind = ObjectiveKind::RobustLinearRegression;
  const Dataset small = generate_synthetic({3, 10, 1.0, LabelMode::PlusMinusOne, seed, false});
  RngStream rng(seed, Stream::Init);
  const Vector x0 = random_vector(rng, 3), x1 = random_vector(rng, 3), v_prev = random_vector(rng, 3);
  Vector mean = Vector::Zero(3);
  for (Index i = 0; i < 10; ++i)
    for (Index j = 0; j < 10; ++j) {
      const std::vector<Index> b{i, j};
      mean += v_prev + gradient(kind, x1, small, b) - gradient(kind, x0, small, b);
    }
  mean /= 100.0;
  const Vector expect = v_prev + full_gradient(kind, x1, small) - full_gradient(kind, x0, small);
  const double martingale_err = (mean - expect).cwiseAbs().maxCoeff();

  SpiderConfig rc{4, 1, 1, SamplingMode::WithReplacement};
  const Index draws = 10000;
  Vector sum = Vector::Zero(3), sq = Vector::Zero(3);
  RngStream rrng(seed, Stream::Restart);
  for (Index t = 0; t < draws; ++t) {
    SpiderState st(3, rc);
    restart(st, kind, x1, small, rrng);
    sum += st.v;
    sq += st.v.cwiseProduct(st.v);
  }
  const Vector m = sum / draws;
  const Vector se = ((sq / draws - m.cwiseProduct(m)) / draws).cwiseSqrt();
  const Vector g = full_gradient(kind, x1, small);
  bool unbiased = true;
  for (Eigen::Index i = 0; i < 3; ++i) unbiased = unbiased && std::abs(m[i] - g[i]) <= 3.0 * se[i] + 1e-15;

  const Dataset data = generate_synthetic({100, 5000, 0.1, LabelMode::PlusMinusOne, seed, false});
  SpiderConfig sc{2000, 100, 6, SamplingMode::WithReplacement};
  double mse_spider = 0.0, mse_batch = 0.0;
  RngStream trng(seed, Stream::Refresh), brng(seed, Stream::Minibatch);
  for (Index t = 0; t < 200; ++t) {
    Vector x = random_vector(trng, 100, 0.3);
    SpiderState st(100, sc);
    restart(st, kind, x, data, trng);
    for (int k = 0; k < 5; ++k) {
      const Vector xp = x;
      x -= 0.05 * st.v;
      refresh(st, kind, x, &xp, data, trng);
    }
    const Vector truth = full_gradient(kind, x, data);
    mse_spider += (st.v - truth).squaredNorm() / 200.0;
    const auto b = draw_batch(data.size(), sc.s2_size, SamplingMode::WithReplacement, brng);
    mse_batch += (gradient(kind, x, data, b) - truth).squaredNorm() / 200.0;
  }
  const bool ok = martingale_err <= 1e-12 && unbiased && mse_spider < mse_batch;
  return {"estimator expectation, unbiasedness and variance reduction", ok,
          "martingale error " + fmt(martingale_err) + ", restart mean within 3 s.e.: " +
              (unbiased ? "yes" : "no") + ", MSE " + fmt(mse_spider) + " vs mini-batch " + fmt(mse_batch)};
}

/// Central differences (step 1e-5) against the analytic gradient.
inline CheckResult check_gradients(std::uint64_t seed, Index points = 100) {
  using namespace verify_detail;
  double worst = 0.0;
  for (auto kind : {ObjectiveKind::RobustLinearRegression, ObjectiveKind::NonconvexLogistic}) {
    const Dataset data = generate_synthetic({10, 20, 0.5, natural_label_mode(kind), seed, false});
    RngStream rng(seed + 1, Stream::Init);
    const auto all = full_batch(data);
    for (Index t = 0; t < points; ++t) {
      Vector x = random_vector(rng, 10);
      const Vector g = gradient(kind, x, data, all);
      Vector fd(10);
      for (Eigen::Index i = 0; i < 10; ++i) {
        const double h = 1e-5, xi = x[i];
        x[i] = xi + h;
        const double fp = loss(kind, x, data, all);
        x[i] = xi - h;
        const double fm = loss(kind, x, data, all);
        x[i] = xi;
        fd[i] = (fp - fm) / (2 * h);
      }
      worst = std::max(worst, (fd - g).norm() / std::max(g.norm(), 1e-8));
    }
  }
  return {"gradients match central differences", worst <= 1e-6, "max relative error " + fmt(worst)};
}

inline CheckResult check_cross_entropy(std::uint64_t seed, Index probes = 100) {
  using namespace verify_detail;
  RngStream rng(seed, Stream::Data);
  const Vector u = random_vector(rng, 6);
  std::vector<Vector> xs;
  for (Index t = 0; t < probes; ++t) xs.push_back(random_vector(rng, 6));
  const auto report = check_cross_entropy_smoothness(u, 1.0, xs);
  double worst = 0.0;
  std::size_t r = 0;
  for (const auto& x : xs) {
    const double expect = sigmoid(u.dot(x)) * u.norm();
    worst = std::max(worst, std::abs(report.ratios[r++] - expect));
  }
  return {"cross-entropy Hessian/gradient ratio", report.bound_holds && worst <= 1e-12,
          "max |ratio - yhat ||u|||= " + fmt(worst)};
}

/// y^T y/s^T y <= Gamma, y^T y/s^T s <= Gamma^2, s^T y/s^T s <= Gamma for
/// short steps, Gamma from the data-derived smoothness constants.
inline CheckResult check_ratio_facts(std::uint64_t seed, Index pairs = 500) {
  using namespace verify_detail;
  Index checked = 0, violations = 0;
  double worst = 0.0;
  for (auto kind : {ObjectiveKind::RobustLinearRegression, ObjectiveKind::NonconvexLogistic}) {
    const Dataset data = generate_synthetic({100, 5000, 0.1, natural_label_mode(kind), seed, false});
    const SmoothnessParams sm = derive_smoothness_params(kind, data);
    RngStream rng(seed, Stream::Minibatch);
    for (Index t = 0; t < pairs; ++t) {
      const Vector x = random_vector(rng, 100);
      Vector s = random_vector(rng, 100);
      s *= rng.uniform(0.0, 1.0) / (sm.L0 * s.norm());
      const auto batch = draw_batch(data.size(), 1 + rng.index(100), SamplingMode::WithReplacement, rng);
      std::vector<double> norms;
      const Vector g0 = gradient_with_norms(kind, x, data, batch, norms);
      const Vector y = gradient(kind, x + s, data, batch) - g0;
      const double gamma = compute_gamma_from_norms(norms, sm);
      const double sy = s.dot(y), ss = s.squaredNorm(), yy = y.squaredNorm();
      if (!(sy > 0.0)) continue;
      ++checked;
      const double r1 = yy / sy - gamma, r2 = yy / ss - gamma * gamma, r3 = sy / ss - gamma;
      worst = std::max({worst, r1, r2, r3});
      if (r1 > 1e-9 || r2 > 1e-9 || r3 > 1e-9) ++violations;
    }
  }
  return {"curvature ratios bounded by Gamma", violations == 0 && checked > 0,
          std::to_string(checked) + " pairs, max excess " + fmt(worst)};
}

/// lambda_M/lambda_m non-increasing in delta and in q.
inline CheckResult check_bound_ratio_monotone() {
  using namespace verify_detail;
  const double deltas[] = {0.25, 0.5, 1.0, 2.0, 4.0};
  const double qs[] = {0.1, 0.2, 0.3, 0.4, 0.5};
  Index violations = 0;
  for (Index p : {Index{1}, Index{2}, Index{5}}) {
    auto ratio = [&](double delta, double q) {
      const auto b = closed_form_bounds(DampingParams{delta, q, 1.0, p}, 1.0);
      return b.lambda_M / b.lambda_m;
    };
    for (double q : qs)
      for (int i = 1; i < 5; ++i)
        if (ratio(deltas[i], q) > ratio(deltas[i - 1], q) * (1 + 1e-12)) ++violations;
    for (double delta : deltas)
      for (int i = 1; i < 5; ++i)
        if (ratio(delta, qs[i]) > ratio(delta, qs[i - 1]) * (1 + 1e-12)) ++violations;
  }
  return {"bound ratio shrinks as delta or q grows", violations == 0,
          std::to_string(violations) + " violations on 5x5 grids, p in {1,2,5}"};
}

/// Clipped SQN mean final loss no worse than any other roster entry.
inline CheckResult check_ordering(const ExperimentConfig& cfg) {
  using namespace verify_detail;
  const Dataset data = make_dataset(cfg);
  const ComparisonReport report = compare(cfg, data);
  const auto* ours = report.find(Algorithm::ClippedSqn);
  if (!ours) return {"clipped SQN ordering on " + to_string(cfg.objective), false, "roster lacks clipped_sqn"};
  bool ok = ours->aborted_runs == 0 && report.budgets_fair();
  std::string detail = "clipped_sqn " + fmt(ours->mean_final_loss);
  for (const auto& s : report.algorithms) {
    if (s.algorithm == Algorithm::ClippedSqn) continue;
    detail += ", " + s.name + " " + fmt(s.mean_final_loss);
    if (s.aborted_runs == 0 && !(ours->mean_final_loss <= s.mean_final_loss)) ok = false;
  }
  return {"clipped SQN ordering on " + to_string(cfg.objective), ok, detail};
}

inline std::vector<std::function<CheckResult()>> property_suite(std::uint64_t seed) {
  return {[=] { return check_two_loop(seed); },          [=] { return check_positive_definite(seed); },
          [=] { return check_spectral_envelope(seed); }, [=] { return check_stepsize(seed); },
          [=] { return check_estimator(seed); },         [=] { return check_gradients(seed); },
          [=] { return check_cross_entropy(seed); },     [=] { return check_ratio_facts(seed); },
          [] { return check_bound_ratio_monotone(); }};
}

}  // namespace csqn
