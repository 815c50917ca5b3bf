// Command-line front end: gen-data, run, verify, plot.
// Exit codes: 0 success, 1 config error, 2 run divergence, 3 I/O error,
// 4 a verify property failed.

#include "csqn/config.hpp"
#include "csqn/experiment.hpp"
#include "csqn/objectives.hpp"
#include "csqn/plot.hpp"
#include "csqn/verify.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

enum Exit { kOk = 0, kConfig = 1, kDiverged = 2, kIo = 3, kPropertyFailed = 4 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool strict_theory = false;
  bool theory_batches = false;
  std::string objective = "robust_linear_regression";
  std::size_t d = 100, n = 5000;
  double sparsity = 0.1;
  std::string input;
  std::string title = "Training loss";
  bool end_to_end = false;
};

void apply_overrides(csqn::ExperimentConfig& cfg, const Options& opt) {
  if (opt.seed) cfg.seeds = {*opt.seed};
  if (!opt.out.empty()) cfg.output = opt.out;
  for (auto& spec : cfg.roster) {
    if (spec.algorithm != csqn::Algorithm::ClippedSqn) continue;
    if (opt.strict_theory) spec.set("strict_theory", "true");
    if (opt.theory_batches) spec.set("theory_batches", "true");
  }
  csqn::validate(cfg);
}

int cmd_gen_data(const Options& opt) {
  csqn::ExperimentConfig cfg;
  if (!opt.config.empty()) {
    cfg = csqn::load_config(opt.config);
  } else {
    cfg.objective = csqn::objective_from_string(opt.objective);
    cfg.dataset.d = opt.d;
    cfg.dataset.n = opt.n;
    cfg.dataset.sparsity = opt.sparsity;
  }
  if (opt.seed) cfg.dataset.seed = *opt.seed;
  if (cfg.dataset.from_file) throw csqn::ConfigError("dataset.source: gen-data needs source = generate");
  const csqn::Dataset data = csqn::generate_synthetic(cfg.synthetic_spec());
  const std::filesystem::path dir(opt.out.empty() ? "." : opt.out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw csqn::IoError("cannot create " + dir.string());
  const auto path = dir / "dataset.txt";
  csqn::save_dataset(data, path.string());
  std::cout << "wrote " << path.string() << " (n=" << data.size() << ", d=" << data.dimension() << ")\n";
  return kOk;
}

int cmd_run(const Options& opt) {
  csqn::ExperimentConfig cfg = csqn::load_config(opt.config);
  apply_overrides(cfg, opt);
  const auto report = csqn::run_experiment(cfg);
  for (std::size_t i = 0; i < report.ranking.size(); ++i) {
    const auto& s = report.algorithms[report.ranking[i]];
    std::printf("%zu. %-12s mean final loss %.10g (std %.3g) [%s]%s\n", i + 1, s.name.c_str(), s.mean_final_loss,
                s.std_final_loss, s.selected.grid_label().c_str(), s.aborted_runs ? " ABORTED RUNS" : "");
  }
  std::cout << "artifacts in " << cfg.output << "\n";
  if (report.any_aborted()) {
    std::cerr << "error: at least one run diverged; see " << cfg.output << "/report.txt\n";
    return kDiverged;
  }
  return kOk;
}

int cmd_verify(const Options& opt) {
  const std::uint64_t seed = opt.seed.value_or(1);
  std::vector<std::function<csqn::CheckResult()>> checks = csqn::property_suite(seed);
  if (opt.end_to_end) {
    if (opt.config.empty()) throw csqn::ConfigError("verify: --end-to-end needs --config");
    auto cfg = csqn::load_config(opt.config);
    apply_overrides(cfg, Options{});
    checks.push_back([cfg] { return csqn::check_ordering(cfg); });
  }
  bool all = true;
  for (auto& check : checks) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = check();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %s: %s (%.1fs)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str(), secs);
    all = all && r.passed;
  }
  return all ? kOk : kPropertyFailed;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

int cmd_plot(const Options& opt) {
  std::ifstream in(opt.input);
  if (!in) throw csqn::IoError("cannot open " + opt.input);
  std::string line;
  if (!std::getline(in, line)) throw csqn::IoError(opt.input + " is empty");
  const auto header = split_csv_line(line);
  std::vector<csqn::PlotSeries> series;
  std::map<std::string, std::size_t> index;
  if (header.size() >= 3 && header[0] == "algorithm" && header[1] == "samples" && header[2] == "mean_loss") {
    while (std::getline(in, line)) {
      const auto cells = split_csv_line(line);
      if (cells.size() < 3) continue;
      auto [it, fresh] = index.try_emplace(cells[0], series.size());
      if (fresh) series.push_back({cells[0], {}, {}});
      series[it->second].x.push_back(std::stod(cells[1]));
      series[it->second].y.push_back(std::stod(cells[2]));
    }
  } else if (line == csqn::kTraceCsvHeader) {
    csqn::PlotSeries s{std::filesystem::path(opt.input).stem().string(), {}, {}};
    while (std::getline(in, line)) {
      const auto cells = split_csv_line(line);
      if (cells.size() < 3) continue;
      s.x.push_back(std::stod(cells[1]));
      s.y.push_back(std::stod(cells[2]));
    }
    series.push_back(std::move(s));
  } else {
    throw csqn::IoError(opt.input + ": not an aggregate or trace CSV");
  }
  if (series.empty()) throw csqn::ConfigError(opt.input + ": no data rows");
  csqn::PlotAxes axes;
  axes.title = opt.title;
  const std::filesystem::path dir(opt.out.empty() ? "." : opt.out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw csqn::IoError("cannot create " + dir.string());
  const auto path = dir / "loss_vs_samples.svg";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw csqn::IoError("cannot write " + path.string());
  out << csqn::emit_plot(series, axes);
  std::cout << "wrote " << path.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clipped stochastic quasi-Newton experiments"};
  app.require_subcommand(1);
  Options opt;
  std::uint64_t seed_value = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed_value, "Override the seed list with a single seed")
        ->each([&](const std::string&) { opt.seed = seed_value; });
    sub->add_option("--out", opt.out, "Output directory");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the sparse synthetic dataset");
  gen->add_option("--config", opt.config, "Experiment config; its [dataset] section is used");
  gen->add_option("--objective", opt.objective, "Label convention when no config is given");
  gen->add_option("--d", opt.d, "Dimension");
  gen->add_option("--n", opt.n, "Number of samples");
  gen->add_option("--sparsity", opt.sparsity, "Fraction of nonzero features");
  add_common(gen);

  auto* run = app.add_subcommand("run", "Run an experiment and write CSV, SVG and report");
  run->add_option("--config", opt.config, "Experiment config")->required();
  run->add_flag("--strict-theory", opt.strict_theory, "Reject (beta, c) outside the convergence ranges");
  run->add_flag("--theory-batches", opt.theory_batches, "Derive |S1|, |S2| and r from eps, sigma and h1");
  add_common(run);

  auto* ver = app.add_subcommand("verify", "Run the property checks");
  ver->add_option("--config", opt.config, "Config for the end-to-end ordering check");
  ver->add_flag("--end-to-end", opt.end_to_end, "Also run the ordering check on --config");
  ver->add_option("--seed", seed_value, "Seed for the randomized checks")->each([&](const std::string&) {
    opt.seed = seed_value;
  });

  auto* plot = app.add_subcommand("plot", "Render loss_vs_samples.svg from an aggregate or trace CSV");
  plot->add_option("--input", opt.input, "aggregate.csv or a per-run trace CSV")->required();
  plot->add_option("--title", opt.title, "Plot title");
  plot->add_option("--out", opt.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_gen_data(opt);
    if (*run) return cmd_run(opt);
    if (*ver) return cmd_verify(opt);
    if (*plot) return cmd_plot(opt);
  } catch (const csqn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const csqn::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const csqn::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  }
  return kOk;
}
