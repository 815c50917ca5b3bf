#pragma once

// Multi-seed experiment runner: builds the dataset, grid-searches each roster
// entry, and writes per-run CSV traces, an aggregate CSV at matched sample
// counts, an SVG plot and a report whose header is itself a loadable config.

#include "csqn/baselines.hpp"
#include "csqn/common.hpp"
#include "csqn/config.hpp"
#include "csqn/objectives.hpp"
#include "csqn/optimizer.hpp"
#include "csqn/plot.hpp"
#include "csqn/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace csqn {

inline Dataset make_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset.from_file) return load_dataset(cfg.dataset.path);
  return generate_synthetic(cfg.synthetic_spec());
}

/// x_0 for one seed. Auto draws N(0, I) for robust regression and
/// U[-1, 1]^d for the classification losses.
inline Vector initial_point(InitMode mode, ObjectiveKind kind, Index d, std::uint64_t seed) {
  if (mode == InitMode::Auto)
    mode = kind == ObjectiveKind::RobustLinearRegression ? InitMode::Normal : InitMode::Uniform;
  Vector x = Vector::Zero(static_cast<Eigen::Index>(d));
  RngStream rng(seed, Stream::Init);
  if (mode == InitMode::Normal)
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.normal();
  if (mode == InitMode::Uniform)
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
  return x;
}

struct CurvePoint {
  double samples = 0.0;
  double loss = 0.0;
};

/// (cumulative samples, loss) pairs: loss(x_0) at zero samples, then the loss
/// of each new iterate at the sample count that produced it.
inline std::vector<CurvePoint> loss_curve(const RunTrace& trace) {
  std::vector<CurvePoint> out;
  if (trace.records.empty()) return out;
  out.push_back({0.0, trace.records.front().loss});
  for (std::size_t k = 1; k < trace.records.size(); ++k)
    out.push_back({static_cast<double>(trace.records[k - 1].samples_consumed), trace.records[k].loss});
  out.push_back({static_cast<double>(trace.records.back().samples_consumed), trace.final_loss});
  return out;
}

/// Loss of the latest iterate available after `samples` samples.
inline double loss_at(const std::vector<CurvePoint>& curve, double samples) {
  double value = std::numeric_limits<double>::quiet_NaN();
  for (const auto& p : curve) {
    if (p.samples > samples) break;
    value = p.loss;
  }
  return value;
}

namespace detail {

inline std::string csv_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << body;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

inline constexpr const char* kTraceCsvHeader = "k,samples,loss,grad_norm,stepsize,clip_branch";

/// One row per iteration. samples is the cumulative count after the step,
/// loss and grad_norm (the estimator norm ||v_k||) refer to x_k.
inline std::string trace_csv(const RunTrace& trace) {
  std::string out = std::string(kTraceCsvHeader) + "\n";
  for (const auto& r : trace.records) {
    out += std::to_string(r.k) + "," + std::to_string(r.samples_consumed) + "," + detail::csv_real(r.loss) + "," +
           detail::csv_real(r.grad_norm_v) + "," + detail::csv_real(r.stepsize) + "," + to_string(r.clip_branch) +
           "\n";
  }
  return out;
}

struct CandidateScore {
  std::string label;
  double mean_final_loss = 0.0;
  Index aborted = 0;
};

struct AlgorithmSummary {
  std::string name;
  Algorithm algorithm = Algorithm::ClippedSqn;
  AlgorithmSpec selected;
  std::vector<CandidateScore> candidates;
  std::size_t selected_index = 0;
  /// Selected configuration, one entry per seed.
  std::vector<RunTrace> runs;
  std::vector<double> final_losses;
  double mean_final_loss = std::numeric_limits<double>::quiet_NaN();
  double std_final_loss = std::numeric_limits<double>::quiet_NaN();
  Index aborted_runs = 0;
  /// Largest number of samples a single step can draw.
  Index step_granularity = 0;
  std::vector<double> mean_curve;
  std::vector<double> std_curve;
};

struct ComparisonReport {
  ObjectiveKind objective = ObjectiveKind::RobustLinearRegression;
  std::vector<std::uint64_t> seeds;
  SmoothnessParams data_smoothness;
  std::vector<double> sample_grid;
  std::vector<AlgorithmSummary> algorithms;
  /// Roster indices sorted by mean final loss; aborted algorithms last.
  std::vector<std::size_t> ranking;
  Index max_sample_gap = 0;
  Index allowed_sample_gap = 0;

  bool budgets_fair() const { return max_sample_gap <= allowed_sample_gap; }

  bool any_aborted() const {
    for (const auto& a : algorithms)
      if (a.aborted_runs > 0) return true;
    return false;
  }

  const AlgorithmSummary* find(Algorithm a) const {
    for (const auto& s : algorithms)
      if (s.algorithm == a) return &s;
    return nullptr;
  }
};

inline RunTrace run_candidate(const AlgorithmSpec& spec, const ExperimentConfig& cfg, const Dataset& data,
                              const SmoothnessParams& data_smoothness, std::uint64_t seed) {
  const Vector x0 = initial_point(cfg.init, cfg.objective, data.dimension(), seed);
  if (spec.algorithm == Algorithm::ClippedSqn) {
    ClippedSqnConfig c = sqn_config_from(spec, data_smoothness);
    c.seed = seed;
    c.max_iterations = cfg.max_iterations;
    c.sample_budget = cfg.sample_budget;
    return run(c, data, cfg.objective, x0);
  }
  BaselineConfig c = baseline_config_from(spec);
  c.seed = seed;
  c.max_iterations = cfg.max_iterations;
  c.sample_budget = cfg.sample_budget;
  return run_baseline(c, data, cfg.objective, x0);
}

inline Index step_granularity(const AlgorithmSpec& spec, const SmoothnessParams& data_smoothness) {
  switch (spec.algorithm) {
    case Algorithm::ClippedSqn: {
      const auto rc = resolve(sqn_config_from(spec, data_smoothness));
      return std::max(rc.batches.s1_size, rc.batches.s2_size);
    }
    case Algorithm::Spider:
    case Algorithm::L0L1Spider: return std::max(spec.count("s1"), spec.count("s2"));
    case Algorithm::Sgd:
    case Algorithm::SdLbfgs: return spec.count("batch");
  }
  return 0;
}

namespace detail {

/// Runs fn(i) for i in [0, count) on `threads` workers. Results land in
/// caller-owned slots, so the outcome does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t count, Index threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::min<std::size_t>(std::max<Index>(threads, 1), std::max<std::size_t>(count, 1));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = std::numeric_limits<double>::quiet_NaN();
  sd = std::numeric_limits<double>::quiet_NaN();
  if (v.empty()) return;
  double s = 0.0;
  for (double x : v) s += x;
  mean = s / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
}

}  // namespace detail

inline constexpr std::size_t kSampleGridPoints = 101;

/// All runs and the aggregation, without touching the filesystem.
inline ComparisonReport compare(const ExperimentConfig& cfg, const Dataset& data) {
  const SmoothnessParams smooth = derive_smoothness_params(cfg.objective, data);
  validate(cfg, smooth);

  ComparisonReport report;
  report.objective = cfg.objective;
  report.seeds = cfg.seeds;
  report.data_smoothness = smooth;

  struct Task {
    std::size_t algo, candidate, seed;
  };
  std::vector<std::vector<AlgorithmSpec>> candidates;
  std::vector<Task> tasks;
  for (std::size_t a = 0; a < cfg.roster.size(); ++a) {
    candidates.push_back(expand_grid(cfg.roster[a]));
    for (std::size_t c = 0; c < candidates[a].size(); ++c)
      for (std::size_t s = 0; s < cfg.seeds.size(); ++s) tasks.push_back({a, c, s});
  }
  std::vector<RunTrace> traces(tasks.size());
  detail::parallel_for(tasks.size(), cfg.threads, [&](std::size_t i) {
    const auto& t = tasks[i];
    traces[i] = run_candidate(candidates[t.algo][t.candidate], cfg, data, smooth, cfg.seeds[t.seed]);
  });

  std::size_t offset = 0;
  Index budget_ref = cfg.sample_budget;
  for (std::size_t a = 0; a < cfg.roster.size(); ++a) {
    AlgorithmSummary sum;
    sum.algorithm = cfg.roster[a].algorithm;
    sum.name = to_string(sum.algorithm);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < candidates[a].size(); ++c) {
      CandidateScore score{candidates[a][c].grid_label(), 0.0, 0};
      for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
        const auto& tr = traces[offset + c * cfg.seeds.size() + s];
        if (tr.aborted) ++score.aborted;
        score.mean_final_loss += tr.final_loss / static_cast<double>(cfg.seeds.size());
      }
      if (score.aborted > 0) score.mean_final_loss = std::numeric_limits<double>::infinity();
      if (score.mean_final_loss < best) {
        best = score.mean_final_loss;
        sum.selected_index = c;
      }
      sum.candidates.push_back(std::move(score));
    }
    sum.selected = candidates[a][sum.selected_index];
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
      auto& tr = traces[offset + sum.selected_index * cfg.seeds.size() + s];
      if (tr.aborted) ++sum.aborted_runs;
      else sum.final_losses.push_back(tr.final_loss);
      if (cfg.sample_budget == 0) budget_ref = std::max(budget_ref, tr.samples_consumed);
      sum.runs.push_back(std::move(tr));
    }
    detail::mean_std(sum.final_losses, sum.mean_final_loss, sum.std_final_loss);
    sum.step_granularity = step_granularity(sum.selected, smooth);
    offset += candidates[a].size() * cfg.seeds.size();
    report.algorithms.push_back(std::move(sum));
  }

  for (std::size_t j = 0; j < kSampleGridPoints; ++j)
    report.sample_grid.push_back(static_cast<double>(budget_ref) * static_cast<double>(j) /
                                 static_cast<double>(kSampleGridPoints - 1));
  for (auto& sum : report.algorithms) {
    std::vector<std::vector<CurvePoint>> curves;
    for (const auto& tr : sum.runs)
      if (!tr.aborted) curves.push_back(loss_curve(tr));
    for (double s : report.sample_grid) {
      std::vector<double> values;
      for (const auto& c : curves) {
        const double v = loss_at(c, s);
        if (std::isfinite(v)) values.push_back(v);
      }
      double m, sd;
      detail::mean_std(values, m, sd);
      sum.mean_curve.push_back(m);
      sum.std_curve.push_back(sd);
    }
  }

  Index lo = std::numeric_limits<Index>::max(), hi = 0;
  for (const auto& sum : report.algorithms) {
    report.allowed_sample_gap = std::max(report.allowed_sample_gap, sum.step_granularity);
    for (const auto& tr : sum.runs) {
      lo = std::min(lo, tr.samples_consumed);
      hi = std::max(hi, tr.samples_consumed);
    }
  }
  report.max_sample_gap = hi >= lo ? hi - lo : 0;

  for (std::size_t a = 0; a < report.algorithms.size(); ++a) report.ranking.push_back(a);
  std::stable_sort(report.ranking.begin(), report.ranking.end(), [&](std::size_t x, std::size_t y) {
    auto key = [&](std::size_t i) {
      const auto& s = report.algorithms[i];
      return s.aborted_runs > 0 || !std::isfinite(s.mean_final_loss) ? std::numeric_limits<double>::infinity()
                                                                      : s.mean_final_loss;
    };
    return key(x) < key(y);
  });
  return report;
}

inline std::string aggregate_csv(const ComparisonReport& report) {
  std::string out = "algorithm,samples,mean_loss,std_loss,runs\n";
  for (const auto& sum : report.algorithms) {
    Index finished = 0;
    for (const auto& tr : sum.runs)
      if (!tr.aborted) ++finished;
    for (std::size_t j = 0; j < report.sample_grid.size(); ++j)
      out += sum.name + "," + detail::csv_real(report.sample_grid[j]) + "," + detail::csv_real(sum.mean_curve[j]) +
             "," + detail::csv_real(sum.std_curve[j]) + "," + std::to_string(finished) + "\n";
  }
  return out;
}

inline std::vector<PlotSeries> plot_series(const ComparisonReport& report) {
  std::vector<PlotSeries> out;
  for (const auto& sum : report.algorithms) {
    const bool plottable = std::any_of(sum.mean_curve.begin(), sum.mean_curve.end(),
                                       [](double v) { return std::isfinite(v); });
    if (plottable) out.push_back({sum.name, report.sample_grid, sum.mean_curve});
  }
  return out;
}

inline constexpr const char* kSdLbfgsNote =
    "sdlbfgs is run as this library's damped L-BFGS with fixed weights (w, q), a fresh mini-batch per step, "
    "curvature pairs from the previous batch re-evaluated at the new iterate, and stepsize eta0/sqrt(1+k)";

/// Report text. Every line outside the embedded config starts with '#', so
/// the whole file loads as a config and reproduces the same runs.
inline std::string report_text(const ExperimentConfig& cfg, const ComparisonReport& report) {
  std::ostringstream out;
  out << "# experiment report; this file is a loadable config that reproduces the runs below\n";
  out << serialize_config(cfg);
  out << "\n# seeds:";
  for (auto s : report.seeds) out << " " << s;
  out << "\n# objective: " << to_string(report.objective) << "\n";
  const auto& sm = report.data_smoothness;
  out << "# data-derived smoothness: gamma0=" << detail::csv_real(sm.gamma0) << " gamma1=0 L0="
      << detail::csv_real(sm.L0) << " L1=" << detail::csv_real(sm.L1)
      << " Gamma=" << detail::csv_real(gamma_floor(sm)) << "\n";
  for (const auto& sum : report.algorithms)
    if (sum.algorithm == Algorithm::SdLbfgs) out << "# note: " << kSdLbfgsNote << "\n";
  out << "#\n# grid search (lowest mean final loss is selected)\n";
  for (const auto& sum : report.algorithms) {
    if (sum.algorithm == Algorithm::ClippedSqn) {
      const auto c = sqn_config_from(sum.selected, report.data_smoothness);
      const auto rc = resolve(c);
      out << "# " << sum.name << " resolved: q=" << detail::csv_real(c.damping.q)
          << " kappa=" << detail::csv_real(c.damping.kappa) << " L0=" << detail::csv_real(c.smoothness.L0)
          << " L1=" << detail::csv_real(c.smoothness.L1) << " lambda_m=" << detail::csv_real(rc.eigen.lambda_m)
          << " lambda_M=" << detail::csv_real(rc.eigen.lambda_M) << " h1=" << detail::csv_real(rc.h1)
          << " s1=" << rc.batches.s1_size << " s2=" << rc.batches.s2_size << " r=" << rc.batches.restart_period
          << "\n";
    }
    for (std::size_t c = 0; c < sum.candidates.size(); ++c) {
      const auto& cand = sum.candidates[c];
      out << "#   " << sum.name << " [" << cand.label << "] mean_final_loss=" << detail::csv_real(cand.mean_final_loss)
          << " aborted=" << cand.aborted << (c == sum.selected_index ? "  <- selected" : "") << "\n";
    }
  }
  out << "#\n# results at the selected settings\n";
  for (const auto& sum : report.algorithms) {
    out << "# " << sum.name << " mean_final_loss=" << detail::csv_real(sum.mean_final_loss)
        << " std=" << detail::csv_real(sum.std_final_loss) << " aborted=" << sum.aborted_runs << "\n";
    for (std::size_t s = 0; s < sum.runs.size(); ++s) {
      const auto& tr = sum.runs[s];
      out << "#   seed " << report.seeds[s] << ": final_loss=" << detail::csv_real(tr.final_loss)
          << " samples=" << tr.samples_consumed << " iterations=" << tr.records.size();
      if (tr.aborted) out << " ABORTED (" << tr.abort_reason << ")";
      out << "\n";
    }
  }
  out << "# ranking:";
  for (std::size_t i = 0; i < report.ranking.size(); ++i)
    out << " " << (i + 1) << "." << report.algorithms[report.ranking[i]].name;
  out << "\n# sample budgets: max gap " << report.max_sample_gap << ", one-step granularity "
      << report.allowed_sample_gap << (report.budgets_fair() ? " (equal)" : " (UNEQUAL)") << "\n";
  return out.str();
}

inline std::string trace_file_name(const AlgorithmSummary& sum, std::uint64_t seed) {
  return sum.name + "_seed" + std::to_string(seed) + ".csv";
}

inline void write_artifacts(const ExperimentConfig& cfg, const ComparisonReport& report) {
  namespace fs = std::filesystem;
  const fs::path dir(cfg.output);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  for (const auto& sum : report.algorithms)
    for (std::size_t s = 0; s < sum.runs.size(); ++s)
      detail::write_file(dir / trace_file_name(sum, report.seeds[s]), trace_csv(sum.runs[s]));
  detail::write_file(dir / "aggregate.csv", aggregate_csv(report));
  PlotAxes axes;
  axes.title = "Training loss, " + to_string(report.objective);
  // A plot needs at least one algorithm with a finite curve; fully diverged runs have none.
  if (const auto series = plot_series(report); !series.empty())
    detail::write_file(dir / "loss_vs_samples.svg", emit_plot(series, axes));
  detail::write_file(dir / "report.txt", report_text(cfg, report));
}

/// Loads the data, runs every (algorithm, grid point, seed) and writes the
/// artifacts into cfg.output. Aborted runs are recorded, not fatal.
inline ComparisonReport run_experiment(const ExperimentConfig& cfg) {
  const Dataset data = make_dataset(cfg);
  ComparisonReport report = compare(cfg, data);
  write_artifacts(cfg, report);
  return report;
}

}  // namespace csqn
