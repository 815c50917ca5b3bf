#pragma once

// Clipped stochastic quasi-Newton driver: variance-reduced gradient v_k,
// clipped stepsize
//   eta_k = min{ h1/(2 L0 lM^2), h1 eps/(L0 lM^2 ||v||), h1 eps/(L1 lM^2 ||v||^2) },
// and the update x_{k+1} = x_k - eta_k H_k v_k with H_k from adaptive damped L-BFGS.

#include "csqn/common.hpp"
#include "csqn/objectives.hpp"
#include "csqn/quasi_newton.hpp"
#include "csqn/rng.hpp"
#include "csqn/spider.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace csqn {

enum class ClipBranch { Constant, Linear, Quadratic, None };

inline std::string to_string(ClipBranch b) {
  switch (b) {
    case ClipBranch::Constant: return "constant";
    case ClipBranch::Linear: return "linear";
    case ClipBranch::Quadratic: return "quadratic";
    case ClipBranch::None: return "none";
  }
  return "none";
}

/// h1 = lambda_m - (beta lambda_M^2 / 4)(2 + 3 L1 c). Must be positive for a usable stepsize.
inline double compute_h1(double beta, double c_param, double L1, const EigenBounds& eigen) {
  return eigen.lambda_m - beta * eigen.lambda_M * eigen.lambda_M / 4.0 * (2.0 + 3.0 * L1 * c_param);
}

struct StepsizeParams {
  double h1 = 1.0;
  double L0 = 1.0;
  double L1 = 0.0;
  double lambda_M = 1.0;
  double eps = 0.1;
};

struct Stepsize {
  double eta = 0.0;
  ClipBranch branch = ClipBranch::Constant;
};

/// Three-term clipped minimum. The L1 term is dropped when L1 = 0; only the
/// constant term applies when ||v|| = 0. Ties resolve to the earlier branch.
inline Stepsize compute_stepsize(double v_norm, const StepsizeParams& p) {
  require(p.h1 > 0.0, "h1 must be > 0");
  require(v_norm >= 0.0, "||v|| must be >= 0");
  const double lm2 = p.lambda_M * p.lambda_M;
  Stepsize out{p.h1 / (2.0 * p.L0 * lm2), ClipBranch::Constant};
  if (v_norm == 0.0) return out;
  const double linear = p.h1 * p.eps / (p.L0 * lm2 * v_norm);
  if (linear < out.eta) out = {linear, ClipBranch::Linear};
  if (p.L1 > 0.0) {
    const double quadratic = p.h1 * p.eps / (p.L1 * lm2 * v_norm * v_norm);
    if (quadratic < out.eta) out = {quadratic, ClipBranch::Quadratic};
  }
  return out;
}

struct IterationBudget {
  Index iterations = 0;
  bool capped = false;
};

/// K = ceil(2 L0 lambda_M^2 Delta0 / (h1^2 eps^2)), capped at `hard_max`.
inline IterationBudget iteration_budget(double delta0, double L0, double lambda_M, double h1, double eps,
                                        Index hard_max = Index{1} << 40) {
  require_config(delta0 > 0.0, "Delta0 estimate must be > 0");
  require_config(h1 > 0.0, "h1 must be > 0");
  require_config(eps > 0.0, "eps must be > 0");
  const double k = 2.0 * L0 * lambda_M * lambda_M * delta0 / (h1 * h1 * eps * eps);
  if (!std::isfinite(k) || k >= static_cast<double>(hard_max)) return {hard_max, true};
  return {static_cast<Index>(std::max<std::uint64_t>(ceil_count(k), 1)), false};
}

struct ClippedSqnConfig {
  double eps = 0.1;
  double beta = 0.1;
  double c_param = 1.0;
  SmoothnessParams smoothness;
  /// Overrides the closed-form envelope computed from the damping parameters.
  std::optional<EigenBounds> eigen_override;
  SpiderConfig batches;
  /// Derive |S1|, |S2|, r from eps, sigma and h1 instead of `batches`.
  bool theory_batches = false;
  Index max_iterations = 100;
  /// Stop once this many samples have been drawn (0 = no sample budget).
  Index sample_budget = 0;
  DampingParams damping;
  std::uint64_t seed = 0;
  /// Reject (beta, c) outside the convergence-guarantee range.
  bool strict_theory = false;
  /// Record ||grad F(x_k)|| each iteration (full pass over the data).
  bool track_true_gradient = false;
  /// Record the full-data loss each iteration.
  bool track_loss = true;
  /// Check the step against the dense H_k spectrum (small d only).
  bool diagnostics = false;
};

/// Everything derived from a config before the first iteration.
struct ResolvedConfig {
  ClippedSqnConfig config;
  EigenBounds eigen;
  double h1 = 0.0;
  StepsizeParams stepsize;
  SpiderConfig batches;
};

inline ResolvedConfig resolve(const ClippedSqnConfig& cfg) {
  require_config(cfg.eps > 0.0, "eps must be > 0");
  require_config(cfg.beta > 0.0, "beta must be > 0");
  require_config(cfg.c_param > 0.0, "c must be > 0");
  require_config(cfg.max_iterations >= 1, "max_iterations must be >= 1");
  cfg.smoothness.validate();
  cfg.damping.validate();

  ResolvedConfig r;
  r.config = cfg;
  r.eigen = cfg.eigen_override ? *cfg.eigen_override : closed_form_bounds(cfg.damping, cfg.smoothness.gamma0);
  r.eigen.validate();
  r.h1 = compute_h1(cfg.beta, cfg.c_param, cfg.smoothness.L1, r.eigen);
  if (!(r.h1 > 0.0)) {
    std::ostringstream msg;
    msg << "h1 = " << r.h1 << " <= 0 for beta=" << cfg.beta << ", c=" << cfg.c_param
        << ", lambda_m=" << r.eigen.lambda_m << ", lambda_M=" << r.eigen.lambda_M
        << "; the clipped stepsize needs lambda_m > (beta lambda_M^2/4)(2 + 3 L1 c)";
    throw ConfigError(msg.str());
  }
  if (cfg.strict_theory) {
    const double lm = r.eigen.lambda_m, lM2 = r.eigen.lambda_M * r.eigen.lambda_M;
    const double beta_max = lm / (1.0 + lM2);
    if (cfg.beta > beta_max) {
      std::ostringstream msg;
      msg << "strict mode: beta=" << cfg.beta << " exceeds lambda_m/(1+lambda_M^2)=" << beta_max;
      throw ConfigError(msg.str());
    }
    if (cfg.smoothness.L1 > 0.0) {
      const double c_max = (4.0 * lm - 2.0 * cfg.beta * (1.0 + lM2)) /
                           (cfg.smoothness.L1 * lM2 * cfg.beta * (3.0 + cfg.beta * cfg.beta));
      if (cfg.c_param > c_max) {
        std::ostringstream msg;
        msg << "strict mode: c=" << cfg.c_param << " exceeds (4 lambda_m - 2 beta(1+lambda_M^2))/"
            << "(L1 lambda_M^2 beta (3+beta^2))=" << c_max;
        throw ConfigError(msg.str());
      }
    }
  }
  r.stepsize = {r.h1, cfg.smoothness.L0, cfg.smoothness.L1, r.eigen.lambda_M, cfg.eps};
  r.batches = cfg.batches;
  if (cfg.theory_batches) {
    const auto sizes = theory_batch_sizes(cfg.eps, cfg.smoothness.sigma, r.h1);
    r.batches.s1_size = sizes.s1_size;
    r.batches.s2_size = sizes.s2_size;
    r.batches.restart_period = sizes.restart_period;
  }
  r.batches.validate();
  return r;
}

struct IterationRecord {
  Index k = 0;
  double loss = std::numeric_limits<double>::quiet_NaN();
  double grad_norm_v = 0.0;
  std::optional<double> grad_norm_true;
  double stepsize = 0.0;
  Index samples_consumed = 0;
  ClipBranch clip_branch = ClipBranch::Constant;
  double step_norm = 0.0;
  /// lambda_max(H_k) from the dense reference, diagnostics mode only.
  std::optional<double> h_max_eigen;
  std::optional<double> h_min_eigen;
  std::optional<double> gamma;
  bool pair_accepted = false;
};

struct RunTrace {
  std::vector<IterationRecord> records;
  Index output_index = 0;
  Vector final_x;
  Vector output_x;
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  Index samples_consumed = 0;
  bool aborted = false;
  std::string abort_reason;
  Index clamped_q = 0;
  Index skipped_pairs = 0;
};

/// Per-run mutable state. The batch drawn at iteration k-1 (and the gradient
/// and per-sample gradient norms it produced at x_{k-1}) is kept for the
/// curvature pair built at iteration k.
struct TrainState {
  Vector x;
  std::optional<Vector> x_prev;
  SpiderState spider;
  LbfgsMemory memory;
  Index k = 0;
  std::vector<Index> prev_batch;
  Vector prev_batch_grad;
  std::vector<double> prev_batch_norms;
  Index clamped_q = 0;
  Index skipped_pairs = 0;

  TrainState(Vector x0, const ResolvedConfig& rc)
      : x(std::move(x0)),
        spider(static_cast<Index>(x.size()), rc.batches),
        memory(rc.config.damping.memory_size, rc.config.damping.delta) {}
};

struct RunStreams {
  RngStream restart;
  RngStream refresh;
  RngStream output;

  explicit RunStreams(std::uint64_t seed)
      : restart(seed, Stream::Restart), refresh(seed, Stream::Refresh), output(seed, Stream::Output) {}
};

namespace detail {

/// Builds the pair (s_{k-1}, ybar_{k-1}) from the batch drawn at k-1, updates
/// c_k and pushes the pair. Returns Gamma_{k-1}, or nullopt when no pair was formed.
inline std::optional<double> update_memory(TrainState& st, const ResolvedConfig& rc, const Dataset& data,
                                           ObjectiveKind kind) {
  if (!st.x_prev || st.prev_batch.empty()) return std::nullopt;
  const Vector s = st.x - *st.x_prev;
  if (!(s.squaredNorm() > 0.0)) {
    ++st.skipped_pairs;
    return std::nullopt;
  }
  const Vector g_bar = gradient(kind, st.x, data, st.prev_batch);
  const Vector y = g_bar - st.prev_batch_grad;
  const double gamma = compute_gamma_from_norms(st.prev_batch_norms, rc.config.smoothness);
  const DampingWeights wq = adaptive_weights(gamma, rc.config.damping);
  if (wq.clamped) ++st.clamped_q;
  const double c = compute_scaling(s, y, wq.w, rc.config.damping.delta);
  auto pair = damp_pair(s, y, c, wq, gamma);
  if (!pair) {
    ++st.skipped_pairs;
    return gamma;
  }
  st.memory.set_scaling(c);
  st.memory.push(std::move(*pair));
  return gamma;
}

}  // namespace detail

/// One iteration: estimator update, clipped stepsize, curvature pair from the
/// previous batch, H_k v_k by two-loop recursion, then the parameter update.
inline IterationRecord step(TrainState& st, const ResolvedConfig& rc, const Dataset& data, ObjectiveKind kind,
                            RunStreams& rngs) {
  IterationRecord rec;
  rec.k = st.k;
  if (rc.config.track_loss) rec.loss = full_loss(kind, st.x, data);
  if (rc.config.track_true_gradient) rec.grad_norm_true = full_gradient(kind, st.x, data).norm();

  const Vector* x_prev = st.x_prev ? &*st.x_prev : nullptr;
  BatchDraw draw = advance(st.spider, kind, st.x, x_prev, data, rngs.restart, rngs.refresh);
  rec.samples_consumed = st.spider.samples_consumed;

  const double v_norm = st.spider.v.norm();
  rec.grad_norm_v = v_norm;
  const Stepsize eta = compute_stepsize(v_norm, rc.stepsize);
  rec.stepsize = eta.eta;
  rec.clip_branch = eta.branch;

  const Index skipped_before = st.skipped_pairs;
  rec.gamma = detail::update_memory(st, rc, data, kind);
  rec.pair_accepted = rec.gamma.has_value() && st.skipped_pairs == skipped_before;

  const Vector direction = two_loop_apply(st.memory, st.spider.v);
  if (rc.config.diagnostics && data.dimension() <= kDenseDimensionLimit) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(dense_hk(st.memory, data.dimension()), Eigen::EigenvaluesOnly);
    rec.h_min_eigen = es.eigenvalues().minCoeff();
    rec.h_max_eigen = es.eigenvalues().maxCoeff();
  }

  // g_{k} and per-sample norms at x_k on this iteration's batch, kept for the next pair.
  st.prev_batch_grad = gradient_with_norms(kind, st.x, data, draw.indices, st.prev_batch_norms);
  st.prev_batch = std::move(draw.indices);

  Vector next = st.x - eta.eta * direction;
  rec.step_norm = (next - st.x).norm();
  st.x_prev = std::move(st.x);
  st.x = std::move(next);
  ++st.k;
  return rec;
}

/// Full loop. Stops after max_iterations, or earlier once the sample budget is
/// reached; the output iterate is drawn uniformly from x_0..x_{K-1}.
inline RunTrace run(const ClippedSqnConfig& cfg, const Dataset& data, ObjectiveKind kind, const Vector& x0) {
  require_config(static_cast<Index>(x0.size()) == data.dimension(), "x0 length differs from dataset dimension");
  const ResolvedConfig rc = resolve(cfg);
  RunStreams rngs(cfg.seed);
  TrainState st(x0, rc);
  RunTrace trace;
  std::vector<Vector> iterates;
  iterates.reserve(cfg.max_iterations);

  for (Index k = 0; k < cfg.max_iterations; ++k) {
    if (cfg.sample_budget > 0 && st.spider.samples_consumed >= cfg.sample_budget) break;
    iterates.push_back(st.x);
    IterationRecord rec = step(st, rc, data, kind, rngs);
    const bool finite = st.x.allFinite() && (!cfg.track_loss || std::isfinite(rec.loss));
    trace.records.push_back(std::move(rec));
    if (!finite) {
      trace.aborted = true;
      trace.abort_reason = "non-finite iterate or loss at iteration " + std::to_string(k);
      break;
    }
  }

  trace.final_x = st.x;
  trace.samples_consumed = st.spider.samples_consumed;
  trace.clamped_q = st.clamped_q;
  trace.skipped_pairs = st.skipped_pairs;
  if (!trace.aborted) trace.final_loss = full_loss(kind, st.x, data);
  if (!iterates.empty()) {
    trace.output_index = static_cast<Index>(rngs.output.index(iterates.size()));
    trace.output_x = iterates[trace.output_index];
  }
  return trace;
}

}  // namespace csqn
