#pragma once

// Comparison methods: mini-batch SGD, Spider, (L0,L1)-Spider and a stochastic
// damped L-BFGS (SdLBFGS) built from this library's damping with fixed
// weights. All share the sample-accounting contract of the main method so
// they can be compared at equal sample budgets.

#include "csqn/common.hpp"
#include "csqn/objectives.hpp"
#include "csqn/optimizer.hpp"
#include "csqn/quasi_newton.hpp"
#include "csqn/rng.hpp"
#include "csqn/spider.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace csqn {

enum class Algorithm { ClippedSqn, Sgd, Spider, L0L1Spider, SdLbfgs };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::ClippedSqn: return "clipped_sqn";
    case Algorithm::Sgd: return "sgd";
    case Algorithm::Spider: return "spider";
    case Algorithm::L0L1Spider: return "l0l1_spider";
    case Algorithm::SdLbfgs: return "sdlbfgs";
  }
  return "unknown";
}

inline Algorithm algorithm_from_string(std::string_view name) {
  if (name == "clipped_sqn") return Algorithm::ClippedSqn;
  if (name == "sgd") return Algorithm::Sgd;
  if (name == "spider") return Algorithm::Spider;
  if (name == "l0l1_spider") return Algorithm::L0L1Spider;
  if (name == "sdlbfgs") return Algorithm::SdLbfgs;
  throw ConfigError("unknown algorithm '" + std::string(name) + "'");
}

struct BaselineConfig {
  Algorithm algorithm = Algorithm::Sgd;
  /// Mini-batch size for Sgd and SdLbfgs.
  Index batch_size = 500;
  /// Estimator batches for the Spider variants.
  SpiderConfig spider;
  /// Fixed stepsize for Sgd.
  double stepsize = 0.1;
  /// Spider: eta = min{1/(2L), eps/(L ||v||)}.
  double L = 1.0;
  double eps = 0.1;
  /// (L0,L1)-Spider: eta = min{1/(2L0), eps/(L0 ||v||), eps/(L1 ||v||^2)}.
  double L0 = 1.0;
  double L1 = 1.0;
  /// SdLbfgs: eta_k = eta0 / sqrt(1 + k), fixed damping weights.
  double eta0 = 0.1;
  DampingParams damping;
  double fixed_w = 1.0;
  double fixed_q = 0.5;

  std::uint64_t seed = 0;
  Index max_iterations = 100;
  Index sample_budget = 0;
  bool track_loss = true;

  void validate() const {
    require_config(algorithm != Algorithm::ClippedSqn, "BaselineConfig cannot select clipped_sqn");
    require_config(max_iterations >= 1, "max_iterations must be >= 1");
    switch (algorithm) {
      case Algorithm::Sgd:
        require_config(batch_size >= 1, "sgd batch_size must be >= 1");
        require_config(stepsize >= 0.0, "sgd stepsize must be >= 0");
        break;
      case Algorithm::Spider:
        spider.validate();
        require_config(L > 0.0 && eps > 0.0, "spider needs L > 0 and eps > 0");
        break;
      case Algorithm::L0L1Spider:
        spider.validate();
        require_config(L0 > 0.0 && L1 >= 0.0 && eps > 0.0, "l0l1_spider needs L0 > 0, L1 >= 0, eps > 0");
        break;
      case Algorithm::SdLbfgs:
        require_config(batch_size >= 1, "sdlbfgs batch_size must be >= 1");
        require_config(eta0 >= 0.0, "sdlbfgs eta0 must be >= 0");
        damping.validate();
        require_config(fixed_w > 0.0, "sdlbfgs fixed_w must be > 0");
        require_config(fixed_q > 0.0 && fixed_q < 1.0, "sdlbfgs fixed_q must lie in (0,1)");
        break;
      case Algorithm::ClippedSqn: break;
    }
  }
};

/// eta = min{1/(2L), eps/(L ||v||)}.
inline Stepsize spider_stepsize(double v_norm, double L, double eps) {
  Stepsize out{1.0 / (2.0 * L), ClipBranch::Constant};
  if (v_norm > 0.0) {
    const double linear = eps / (L * v_norm);
    if (linear < out.eta) out = {linear, ClipBranch::Linear};
  }
  return out;
}

/// eta = min{1/(2L0), eps/(L0 ||v||), eps/(L1 ||v||^2)}; the clipped rule with
/// h1 = 1 and lambda_M = 1.
inline Stepsize l0l1_spider_stepsize(double v_norm, double L0, double L1, double eps) {
  return compute_stepsize(v_norm, StepsizeParams{1.0, L0, L1, 1.0, eps});
}

struct BaselineStep {
  double eta = 0.0;
  ClipBranch branch = ClipBranch::None;
  double direction_norm = 0.0;
  Index samples = 0;
};

/// x <- x - eta grad l(x; B) for a fresh uniform batch B.
inline BaselineStep sgd_step(Vector& x, const Dataset& data, ObjectiveKind kind, const BaselineConfig& cfg,
                             RngStream& rng) {
  const auto batch = draw_batch(data.size(), cfg.batch_size, SamplingMode::WithReplacement, rng);
  const Vector g = gradient(kind, x, data, batch);
  x -= cfg.stepsize * g;
  return {cfg.stepsize, ClipBranch::None, g.norm(), batch.size()};
}

struct SpiderRunState {
  Vector x;
  std::optional<Vector> x_prev;
  SpiderState spider;

  SpiderRunState(Vector x0, const SpiderConfig& cfg)
      : x(std::move(x0)), spider(static_cast<Index>(x.size()), cfg) {}
};

namespace detail {

template <typename StepRule>
BaselineStep spider_family_step(SpiderRunState& st, const Dataset& data, ObjectiveKind kind, RngStream& restart_rng,
                                RngStream& refresh_rng, StepRule&& rule) {
  const Index before = st.spider.samples_consumed;
  const Vector* x_prev = st.x_prev ? &*st.x_prev : nullptr;
  advance(st.spider, kind, st.x, x_prev, data, restart_rng, refresh_rng);
  const double v_norm = st.spider.v.norm();
  const Stepsize eta = rule(v_norm);
  Vector next = st.x - eta.eta * st.spider.v;
  st.x_prev = std::move(st.x);
  st.x = std::move(next);
  return {eta.eta, eta.branch, v_norm, st.spider.samples_consumed - before};
}

}  // namespace detail

inline BaselineStep spider_step(SpiderRunState& st, const Dataset& data, ObjectiveKind kind,
                                const BaselineConfig& cfg, RngStream& restart_rng, RngStream& refresh_rng) {
  return detail::spider_family_step(st, data, kind, restart_rng, refresh_rng,
                                    [&](double v) { return spider_stepsize(v, cfg.L, cfg.eps); });
}

inline BaselineStep l0l1_spider_step(SpiderRunState& st, const Dataset& data, ObjectiveKind kind,
                                     const BaselineConfig& cfg, RngStream& restart_rng, RngStream& refresh_rng) {
  return detail::spider_family_step(st, data, kind, restart_rng, refresh_rng,
                                    [&](double v) { return l0l1_spider_stepsize(v, cfg.L0, cfg.L1, cfg.eps); });
}

struct SdLbfgsState {
  Vector x;
  std::optional<Vector> x_prev;
  LbfgsMemory memory;
  std::vector<Index> prev_batch;
  Vector prev_grad;
  Index k = 0;

  SdLbfgsState(Vector x0, const DampingParams& damping)
      : x(std::move(x0)), memory(damping.memory_size, damping.delta) {}
};

/// x <- x - eta_k H_k g_k. The pair reuses the previous batch evaluated at the
/// new iterate, so no extra samples are drawn.
inline BaselineStep sdlbfgs_step(SdLbfgsState& st, const Dataset& data, ObjectiveKind kind,
                                 const BaselineConfig& cfg, RngStream& rng) {
  if (st.x_prev && !st.prev_batch.empty()) {
    const Vector s = st.x - *st.x_prev;
    if (s.squaredNorm() > 0.0) {
      const Vector y = gradient(kind, st.x, data, st.prev_batch) - st.prev_grad;
      const DampingWeights wq{cfg.fixed_w, cfg.fixed_q, false};
      const double c = compute_scaling(s, y, wq.w, cfg.damping.delta);
      if (auto pair = damp_pair(s, y, c, wq)) {
        st.memory.set_scaling(c);
        st.memory.push(std::move(*pair));
      }
    }
  }
  auto batch = draw_batch(data.size(), cfg.batch_size, SamplingMode::WithReplacement, rng);
  Vector g = gradient(kind, st.x, data, batch);
  const Vector direction = two_loop_apply(st.memory, g);
  const double eta = cfg.eta0 / std::sqrt(1.0 + static_cast<double>(st.k));
  Vector next = st.x - eta * direction;
  st.x_prev = std::move(st.x);
  st.x = std::move(next);
  st.prev_batch = std::move(batch);
  st.prev_grad = std::move(g);
  ++st.k;
  return {eta, ClipBranch::None, st.prev_grad.norm(), st.prev_batch.size()};
}

/// Runs one baseline until max_iterations or the sample budget is reached.
inline RunTrace run_baseline(const BaselineConfig& cfg, const Dataset& data, ObjectiveKind kind, const Vector& x0) {
  cfg.validate();
  require_config(static_cast<Index>(x0.size()) == data.dimension(), "x0 length differs from dataset dimension");
  RunStreams rngs(cfg.seed);
  RngStream minibatch(cfg.seed, Stream::Minibatch);

  Vector sgd_x = x0;
  std::optional<SpiderRunState> spider;
  std::optional<SdLbfgsState> sdl;
  if (cfg.algorithm == Algorithm::Spider || cfg.algorithm == Algorithm::L0L1Spider) spider.emplace(x0, cfg.spider);
  if (cfg.algorithm == Algorithm::SdLbfgs) sdl.emplace(x0, cfg.damping);
  auto current = [&]() -> const Vector& {
    if (spider) return spider->x;
    if (sdl) return sdl->x;
    return sgd_x;
  };

  RunTrace trace;
  Index samples = 0;
  std::vector<Vector> iterates;
  for (Index k = 0; k < cfg.max_iterations; ++k) {
    if (cfg.sample_budget > 0 && samples >= cfg.sample_budget) break;
    iterates.push_back(current());
    IterationRecord rec;
    rec.k = k;
    if (cfg.track_loss) rec.loss = full_loss(kind, current(), data);
    BaselineStep bs;
    switch (cfg.algorithm) {
      case Algorithm::Sgd: bs = sgd_step(sgd_x, data, kind, cfg, minibatch); break;
      case Algorithm::Spider: bs = spider_step(*spider, data, kind, cfg, rngs.restart, rngs.refresh); break;
      case Algorithm::L0L1Spider: bs = l0l1_spider_step(*spider, data, kind, cfg, rngs.restart, rngs.refresh); break;
      case Algorithm::SdLbfgs: bs = sdlbfgs_step(*sdl, data, kind, cfg, minibatch); break;
      case Algorithm::ClippedSqn: break;
    }
    samples += bs.samples;
    rec.samples_consumed = samples;
    rec.grad_norm_v = bs.direction_norm;
    rec.stepsize = bs.eta;
    rec.clip_branch = bs.branch;
    rec.step_norm = (current() - iterates.back()).norm();
    const bool finite = current().allFinite() && (!cfg.track_loss || std::isfinite(rec.loss));
    trace.records.push_back(rec);
    if (!finite) {
      trace.aborted = true;
      trace.abort_reason = "non-finite iterate or loss at iteration " + std::to_string(k);
      break;
    }
  }
  trace.final_x = current();
  trace.samples_consumed = samples;
  if (!trace.aborted) trace.final_loss = full_loss(kind, trace.final_x, data);
  if (!iterates.empty()) {
    trace.output_index = static_cast<Index>(rngs.output.index(iterates.size()));
    trace.output_x = iterates[trace.output_index];
  }
  return trace;
}

}  // namespace csqn
