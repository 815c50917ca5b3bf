#pragma once

// Recursive variance-reduced gradient estimate with periodic large-batch
// restarts:
//   k mod r == 0 : v_k = grad l(x_k; S1)
//   otherwise    : v_k = v_{k-1} + grad l(x_k; S2) - grad l(x_{k-1}; S2)

#include "csqn/common.hpp"
#include "csqn/objectives.hpp"
#include "csqn/rng.hpp"

#include <numeric>
#include <optional>
#include <vector>

namespace csqn {

enum class SamplingMode { WithReplacement, WithoutReplacement };

enum class DrawKind { Restart, Refresh };

struct BatchDraw {
  std::vector<Index> indices;
  DrawKind kind = DrawKind::Restart;
};

struct SpiderConfig {
  Index s1_size = 2000;
  Index s2_size = 100;
  Index restart_period = 20;
  SamplingMode sampling = SamplingMode::WithReplacement;
  /// Hard cap on a single batch; larger requests are rejected.
  Index max_batch = Index{1} << 26;

  void validate() const {
    require_config(s1_size >= 1, "s1_size must be >= 1");
    require_config(s2_size >= 1, "s2_size must be >= 1");
    require_config(restart_period >= 1, "restart_period must be >= 1");
    require_config(s1_size <= max_batch, "s1_size " + std::to_string(s1_size) + " exceeds the batch cap");
    require_config(s2_size <= max_batch, "s2_size " + std::to_string(s2_size) + " exceeds the batch cap");
  }

  bool operator==(const SpiderConfig&) const = default;
};

struct SpiderState {
  Vector v;
  Index iteration = 0;
  Index samples_consumed = 0;
  Index restarts = 0;
  Index refreshes = 0;
  SpiderConfig config;

  SpiderState() = default;
  SpiderState(Index dimension, SpiderConfig cfg) : v(Vector::Zero(static_cast<Eigen::Index>(dimension))), config(cfg) {
    config.validate();
  }

  bool restart_due() const { return iteration % config.restart_period == 0; }
};

/// Draws `size` indices into [0, n). Without-replacement mode returns a
/// uniformly random subset and needs size <= n; size == n yields 0..n-1 in order.
inline std::vector<Index> draw_batch(Index n, Index size, SamplingMode mode, RngStream& rng) {
  std::vector<Index> out;
  if (mode == SamplingMode::WithReplacement) {
    out.resize(size);
    for (auto& i : out) i = static_cast<Index>(rng.index(n));
    return out;
  }
  require_config(size <= n, "without-replacement batch larger than the dataset");
  out.resize(n);
  std::iota(out.begin(), out.end(), Index{0});
  if (size == n) return out;
  for (Index j = 0; j < size; ++j) std::swap(out[j], out[j + static_cast<Index>(rng.index(n - j))]);
  out.resize(size);
  return out;
}

/// Large-batch restart at x_k. Requires iteration mod r == 0.
inline BatchDraw restart(SpiderState& state, ObjectiveKind kind, const Vector& x, const Dataset& data,
                         RngStream& rng) {
  require(state.restart_due(), "restart called on a refresh iteration");
  BatchDraw draw{draw_batch(data.size(), state.config.s1_size, state.config.sampling, rng), DrawKind::Restart};
  state.v = gradient(kind, x, data, draw.indices);
  state.samples_consumed += draw.indices.size();
  ++state.restarts;
  ++state.iteration;
  return draw;
}

/// Recursive correction using one S2 batch evaluated at x_k and x_{k-1}. The
/// batch is returned so the quasi-Newton update can reuse it.
inline BatchDraw refresh(SpiderState& state, ObjectiveKind kind, const Vector& x, const Vector* x_prev,
                         const Dataset& data, RngStream& rng) {
  require(!state.restart_due(), "refresh called on a restart iteration");
  require(x_prev != nullptr, "refresh needs the previous iterate");
  BatchDraw draw{draw_batch(data.size(), state.config.s2_size, state.config.sampling, rng), DrawKind::Refresh};
  state.v += gradient(kind, x, data, draw.indices) - gradient(kind, *x_prev, data, draw.indices);
  state.samples_consumed += draw.indices.size();
  ++state.refreshes;
  ++state.iteration;
  return draw;
}

/// Restart or refresh, whichever iteration k calls for. Restarts and
/// refreshes draw from separate streams.
inline BatchDraw advance(SpiderState& state, ObjectiveKind kind, const Vector& x, const Vector* x_prev,
                         const Dataset& data, RngStream& restart_rng, RngStream& refresh_rng) {
  if (state.restart_due()) return restart(state, kind, x, data, restart_rng);
  return refresh(state, kind, x, x_prev, data, refresh_rng);
}

struct TheoryBatchSizes {
  Index s1_size = 1;
  Index s2_size = 1;
  Index restart_period = 1;
};

/// |S1| = 2 sigma^2 / eps^2, |S2| = 4 h1^2 / eps, r = 1 / eps, each rounded up
/// and clamped to at least 1.
inline TheoryBatchSizes theory_batch_sizes(double eps, double sigma, double h1) {
  require_config(eps > 0.0, "eps must be > 0");
  require_config(sigma >= 0.0, "sigma must be >= 0");
  require_config(h1 > 0.0, "h1 must be > 0");
  auto at_least_one = [](std::uint64_t v) { return static_cast<Index>(std::max<std::uint64_t>(v, 1)); };
  return {at_least_one(ceil_count(2.0 * sigma * sigma / (eps * eps))), at_least_one(ceil_count(4.0 * h1 * h1 / eps)),
          at_least_one(ceil_count(1.0 / eps))};
}

}  // namespace csqn
