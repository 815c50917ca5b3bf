#pragma once

// Experiment configuration. The text format is flat "key = value" lines under
// [section] headers, '#' starts a comment:
//
//   [experiment]   objective, seeds, budgets, output directory
//   [dataset]      generate parameters or a file path
//   [<algorithm>]  one section per roster entry, in roster order
//
// Inside an algorithm section "grid.<key> = v1, v2, ..." sweeps a numeric key;
// the experiment keeps the grid point with the lowest mean final loss.

#include "csqn/baselines.hpp"
#include "csqn/common.hpp"
#include "csqn/objectives.hpp"
#include "csqn/optimizer.hpp"
#include "csqn/quasi_newton.hpp"
#include "csqn/spider.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace csqn {

enum class ParamType { Real, Count, Flag, Choice, RealOrAuto, Text };

struct ParamInfo {
  std::string_view key;
  ParamType type;
  bool required = false;
  std::string_view fallback = {};
  std::string_view choices = {};  // '|'-separated, Choice only
};

namespace detail {

inline constexpr ParamInfo kSqnParams[] = {
    {"eps", ParamType::Real, true},
    {"beta", ParamType::Real, false, "0.001"},
    {"c", ParamType::Real, false, "1"},
    {"L0", ParamType::RealOrAuto, false, "auto"},
    {"L1", ParamType::RealOrAuto, false, "auto"},
    {"gamma0", ParamType::RealOrAuto, false, "auto"},
    {"gamma1", ParamType::Real, false, "0"},
    {"sigma", ParamType::Real, false, "0"},
    {"lambda_m", ParamType::RealOrAuto, false, "auto"},
    {"lambda_M", ParamType::RealOrAuto, false, "auto"},
    {"s1", ParamType::Count, false, "2000"},
    {"s2", ParamType::Count, false, "100"},
    {"r", ParamType::Count, false, "20"},
    {"sampling", ParamType::Choice, false, "with_replacement", "with_replacement|without_replacement"},
    {"delta", ParamType::Real, false, "1"},
    {"q", ParamType::RealOrAuto, false, "auto"},
    {"q_k", ParamType::Real, false, "0.5"},
    {"kappa", ParamType::RealOrAuto, false, "auto"},
    {"w", ParamType::Real, false, "1"},
    {"memory", ParamType::Count, false, "5"},
    {"strict_theory", ParamType::Flag, false, "false"},
    {"theory_batches", ParamType::Flag, false, "false"},
    {"track_true_gradient", ParamType::Flag, false, "false"},
    {"diagnostics", ParamType::Flag, false, "false"},
};

inline constexpr ParamInfo kSgdParams[] = {
    {"batch", ParamType::Count, false, "500"},
    {"stepsize", ParamType::Real, true},
};

inline constexpr ParamInfo kSpiderParams[] = {
    {"s1", ParamType::Count, false, "2000"},
    {"s2", ParamType::Count, false, "100"},
    {"r", ParamType::Count, false, "20"},
    {"sampling", ParamType::Choice, false, "with_replacement", "with_replacement|without_replacement"},
    {"L", ParamType::Real, true},
    {"eps", ParamType::Real, true},
};

inline constexpr ParamInfo kL0L1SpiderParams[] = {
    {"s1", ParamType::Count, false, "2000"},
    {"s2", ParamType::Count, false, "100"},
    {"r", ParamType::Count, false, "20"},
    {"sampling", ParamType::Choice, false, "with_replacement", "with_replacement|without_replacement"},
    {"L0", ParamType::Real, true},
    {"L1", ParamType::Real, true},
    {"eps", ParamType::Real, true},
};

inline constexpr ParamInfo kSdLbfgsParams[] = {
    {"batch", ParamType::Count, false, "500"},
    {"eta0", ParamType::Real, true},
    {"delta", ParamType::Real, false, "1"},
    {"memory", ParamType::Count, false, "5"},
    {"w", ParamType::Real, false, "1"},
    {"q", ParamType::Real, false, "0.5"},
};

inline constexpr ParamInfo kExperimentParams[] = {
    {"objective", ParamType::Choice, true, {}, "robust_linear_regression|nonconvex_logistic|sigmoid_cross_entropy"},
    {"seeds", ParamType::Text, false, "0"},
    {"sample_budget", ParamType::Count, false, "0"},
    {"max_iterations", ParamType::Count, false, "100000"},
    {"comparison", ParamType::Flag, false, "true"},
    {"output", ParamType::Text, false, "results"},
    {"init", ParamType::Choice, false, "auto", "auto|normal|uniform|zero"},
    {"threads", ParamType::Count, false, "1"},
};

inline constexpr ParamInfo kDatasetParams[] = {
    {"source", ParamType::Choice, false, "generate", "generate|file"},
    {"path", ParamType::Text, false, ""},
    {"d", ParamType::Count, false, "100"},
    {"n", ParamType::Count, false, "5000"},
    {"sparsity", ParamType::Real, false, "0.1"},
    {"seed", ParamType::Count, false, "2024"},
    {"shared_u", ParamType::Flag, false, "false"},
};

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto end = comma == std::string_view::npos ? s.size() : comma;
    const auto item = trim(s.substr(start, end - start));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::optional<double> parse_real(std::string_view s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<std::uint64_t> parse_count(std::string_view s) {
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end) return std::nullopt;
  return v;
}

/// Shortest text that reads back to the same double.
inline std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline bool choice_allowed(std::string_view choices, std::string_view value) {
  std::size_t start = 0;
  while (start <= choices.size()) {
    const auto bar = choices.find('|', start);
    const auto end = bar == std::string_view::npos ? choices.size() : bar;
    if (choices.substr(start, end - start) == value) return true;
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  return false;
}

/// Checks a raw value against its type and returns the canonical spelling.
inline std::string canonical_value(const ParamInfo& info, std::string_view raw, const std::string& path) {
  const auto value = trim(raw);
  auto fail = [&](const std::string& what) { return ConfigError(path + ": " + what + ", got '" + std::string(value) + "'"); };
  switch (info.type) {
    case ParamType::Real:
      if (auto v = parse_real(value)) return format_real(*v);
      throw fail("expected a finite number");
    case ParamType::RealOrAuto:
      if (value == "auto") return "auto";
      if (auto v = parse_real(value)) return format_real(*v);
      throw fail("expected a number or 'auto'");
    case ParamType::Count:
      if (auto v = parse_count(value)) return std::to_string(*v);
      throw fail("expected a non-negative integer");
    case ParamType::Flag:
      if (value == "true" || value == "1" || value == "yes") return "true";
      if (value == "false" || value == "0" || value == "no") return "false";
      throw fail("expected true or false");
    case ParamType::Choice:
      if (choice_allowed(info.choices, value)) return std::string(value);
      throw fail("expected one of " + std::string(info.choices));
    case ParamType::Text: return std::string(value);
  }
  return std::string(value);
}

inline const ParamInfo* find_param(std::span<const ParamInfo> table, std::string_view key) {
  for (const auto& p : table)
    if (p.key == key) return &p;
  return nullptr;
}

}  // namespace detail

inline std::span<const ParamInfo> algorithm_params(Algorithm a) {
  switch (a) {
    case Algorithm::ClippedSqn: return detail::kSqnParams;
    case Algorithm::Sgd: return detail::kSgdParams;
    case Algorithm::Spider: return detail::kSpiderParams;
    case Algorithm::L0L1Spider: return detail::kL0L1SpiderParams;
    case Algorithm::SdLbfgs: return detail::kSdLbfgsParams;
  }
  return {};
}

struct GridAxis {
  std::string key;
  std::vector<std::string> values;

  bool operator==(const GridAxis&) const = default;
};

/// One roster entry: every key of the algorithm's table in table order with
/// its canonical value ("" for a required key supplied only through a grid).
struct AlgorithmSpec {
  Algorithm algorithm = Algorithm::ClippedSqn;
  std::vector<std::pair<std::string, std::string>> values;
  std::vector<GridAxis> grid;

  bool operator==(const AlgorithmSpec&) const = default;

  std::string section() const { return to_string(algorithm); }

  const std::string& get(std::string_view key) const {
    for (const auto& [k, v] : values)
      if (k == key) return v;
    throw ContractViolation(section() + "." + std::string(key) + " is not a known key");
  }

  double real(std::string_view key) const {
    const auto& v = get(key);
    auto parsed = detail::parse_real(v);
    if (!parsed) throw ConfigError(section() + "." + std::string(key) + ": no value");
    return *parsed;
  }

  std::optional<double> real_or_auto(std::string_view key) const {
    if (get(key) == "auto") return std::nullopt;
    return real(key);
  }

  Index count(std::string_view key) const {
    auto parsed = detail::parse_count(get(key));
    if (!parsed) throw ConfigError(section() + "." + std::string(key) + ": no value");
    return static_cast<Index>(*parsed);
  }

  bool flag(std::string_view key) const { return get(key) == "true"; }

  void set(std::string_view key, std::string_view raw) {
    const auto* info = detail::find_param(algorithm_params(algorithm), key);
    const std::string path = section() + "." + std::string(key);
    if (!info) throw ConfigError(path + ": unknown key");
    for (auto& [k, v] : values)
      if (k == key) v = detail::canonical_value(*info, raw, path);
  }

  void set_grid(std::string_view key, const std::vector<std::string>& raw_values) {
    const auto* info = detail::find_param(algorithm_params(algorithm), key);
    const std::string path = section() + ".grid." + std::string(key);
    if (!info) throw ConfigError(path + ": unknown key");
    if (info->type != ParamType::Real && info->type != ParamType::Count && info->type != ParamType::RealOrAuto)
      throw ConfigError(path + ": only numeric keys can be swept");
    if (raw_values.empty()) throw ConfigError(path + ": grid needs at least one value");
    GridAxis axis{std::string(key), {}};
    for (const auto& r : raw_values) axis.values.push_back(detail::canonical_value(*info, r, path));
    for (auto& existing : grid)
      if (existing.key == key) {
        existing = std::move(axis);
        return;
      }
    grid.push_back(std::move(axis));
  }

  bool gridded(std::string_view key) const {
    for (const auto& a : grid)
      if (a.key == key) return true;
    return false;
  }

  /// "key=value, ..." for the swept keys, or "default" without a grid.
  std::string grid_label() const {
    std::string out;
    for (const auto& a : grid) {
      if (!out.empty()) out += ", ";
      out += a.key + "=" + get(a.key);
    }
    return out.empty() ? "default" : out;
  }
};

/// A spec with every key at its default; required keys are left empty.
inline AlgorithmSpec default_spec(Algorithm a) {
  AlgorithmSpec spec;
  spec.algorithm = a;
  for (const auto& p : algorithm_params(a)) spec.values.emplace_back(std::string(p.key), std::string(p.fallback));
  return spec;
}

inline void check_required(const AlgorithmSpec& spec) {
  for (const auto& p : algorithm_params(spec.algorithm))
    if (p.required && spec.get(p.key).empty() && !spec.gridded(p.key))
      throw ConfigError(spec.section() + "." + std::string(p.key) + ": missing required field");
}

inline constexpr Index kMaxGridPoints = 10000;

/// Cartesian product of the grid axes, first axis varying slowest. Each
/// returned spec has the swept keys set and keeps the grid for labelling.
inline std::vector<AlgorithmSpec> expand_grid(const AlgorithmSpec& spec) {
  Index total = 1;
  for (const auto& a : spec.grid) {
    total *= a.values.size();
    require_config(total <= kMaxGridPoints, spec.section() + ".grid: more than " +
                                                std::to_string(kMaxGridPoints) + " grid points");
  }
  std::vector<AlgorithmSpec> out;
  out.reserve(total);
  std::vector<std::size_t> idx(spec.grid.size(), 0);
  for (Index n = 0; n < total; ++n) {
    AlgorithmSpec point = spec;
    for (std::size_t a = 0; a < spec.grid.size(); ++a) point.set(spec.grid[a].key, spec.grid[a].values[idx[a]]);
    out.push_back(std::move(point));
    for (std::size_t a = spec.grid.size(); a-- > 0;) {
      if (++idx[a] < spec.grid[a].values.size()) break;
      idx[a] = 0;
    }
  }
  return out;
}

enum class InitMode { Auto, Normal, Uniform, Zero };

inline std::string to_string(InitMode m) {
  switch (m) {
    case InitMode::Auto: return "auto";
    case InitMode::Normal: return "normal";
    case InitMode::Uniform: return "uniform";
    case InitMode::Zero: return "zero";
  }
  return "auto";
}

struct DatasetSpec {
  bool from_file = false;
  std::string path;
  Index d = 100;
  Index n = 5000;
  double sparsity = 0.1;
  std::uint64_t seed = 2024;
  bool shared_u = false;

  bool operator==(const DatasetSpec&) const = default;
};

struct ExperimentConfig {
  ObjectiveKind objective = ObjectiveKind::RobustLinearRegression;
  DatasetSpec dataset;
  std::vector<std::uint64_t> seeds{0};
  /// Per-run sample budget; 0 means only max_iterations stops a run.
  Index sample_budget = 0;
  Index max_iterations = 100000;
  /// Comparison mode: every algorithm runs to the same sample budget.
  bool comparison = true;
  std::string output = "results";
  InitMode init = InitMode::Auto;
  Index threads = 1;
  std::vector<AlgorithmSpec> roster;

  bool operator==(const ExperimentConfig&) const = default;

  SyntheticSpec synthetic_spec() const {
    return {dataset.d, dataset.n, dataset.sparsity, natural_label_mode(objective), dataset.seed, dataset.shared_u};
  }
};

// ---------------------------------------------------------------------------
// Typed algorithm configs

/// Noise-free part of Gamma, gamma0 (1 + e^{gamma1/L0} / L0); equals Gamma when gamma1 = 0.
inline double gamma_floor(const SmoothnessParams& p) {
  const double L0 = SmoothnessParams::L0_from_gamma(p.gamma0, p.gamma1, p.sigma);
  return p.gamma0 * (1.0 + std::exp(p.gamma1 / L0) / L0);
}

inline SpiderConfig spider_config_from(const AlgorithmSpec& spec) {
  SpiderConfig s;
  s.s1_size = spec.count("s1");
  s.s2_size = spec.count("s2");
  s.restart_period = spec.count("r");
  s.sampling = spec.get("sampling") == "without_replacement" ? SamplingMode::WithoutReplacement
                                                              : SamplingMode::WithReplacement;
  return s;
}

/// Builds the optimizer config. `data_smoothness` supplies gamma0 when the
/// section leaves it on auto. q = auto targets q_k (q = q_k / Gamma^4) and
/// kappa = auto targets w (kappa = sqrt(w) Gamma) at the noise-free Gamma.
inline ClippedSqnConfig sqn_config_from(const AlgorithmSpec& spec, const SmoothnessParams& data_smoothness) {
  require(spec.algorithm == Algorithm::ClippedSqn, "sqn_config_from needs a clipped_sqn spec");
  ClippedSqnConfig cfg;
  cfg.eps = spec.real("eps");
  cfg.beta = spec.real("beta");
  cfg.c_param = spec.real("c");

  SmoothnessParams sm;
  sm.gamma0 = spec.real_or_auto("gamma0").value_or(data_smoothness.gamma0);
  sm.gamma1 = spec.real("gamma1");
  sm.sigma = spec.real("sigma");
  require_config(sm.gamma0 > 0.0, "clipped_sqn.gamma0: must be > 0");
  require_config(sm.gamma1 >= 0.0, "clipped_sqn.gamma1: must be >= 0");
  require_config(sm.sigma >= 0.0, "clipped_sqn.sigma: must be >= 0");
  const auto from_gamma = SmoothnessParams::from_gamma(sm.gamma0, sm.gamma1, sm.sigma);
  sm.L0 = spec.real_or_auto("L0").value_or(from_gamma.L0);
  sm.L1 = spec.real_or_auto("L1").value_or(from_gamma.L1);
  cfg.smoothness = sm;

  const auto lm = spec.real_or_auto("lambda_m");
  const auto lM = spec.real_or_auto("lambda_M");
  require_config(lm.has_value() == lM.has_value(), "clipped_sqn.lambda_m/lambda_M: set both or neither");
  if (lm) cfg.eigen_override = EigenBounds{*lm, *lM};

  const double g = gamma_floor(sm);
  cfg.damping.delta = spec.real("delta");
  cfg.damping.memory_size = spec.count("memory");
  const double qk = spec.real("q_k");
  const double w = spec.real("w");
  require_config(qk > 0.0 && qk < 1.0, "clipped_sqn.q_k: must lie in (0,1)");
  require_config(w > 0.0, "clipped_sqn.w: must be > 0");
  cfg.damping.q = spec.real_or_auto("q").value_or(qk / (g * g * g * g));
  cfg.damping.kappa = spec.real_or_auto("kappa").value_or(std::sqrt(w) * g);

  cfg.batches = spider_config_from(spec);
  cfg.strict_theory = spec.flag("strict_theory");
  cfg.theory_batches = spec.flag("theory_batches");
  cfg.track_true_gradient = spec.flag("track_true_gradient");
  cfg.diagnostics = spec.flag("diagnostics");
  return cfg;
}

inline BaselineConfig baseline_config_from(const AlgorithmSpec& spec) {
  require(spec.algorithm != Algorithm::ClippedSqn, "baseline_config_from needs a baseline spec");
  BaselineConfig cfg;
  cfg.algorithm = spec.algorithm;
  switch (spec.algorithm) {
    case Algorithm::Sgd:
      cfg.batch_size = spec.count("batch");
      cfg.stepsize = spec.real("stepsize");
      break;
    case Algorithm::Spider:
      cfg.spider = spider_config_from(spec);
      cfg.L = spec.real("L");
      cfg.eps = spec.real("eps");
      break;
    case Algorithm::L0L1Spider:
      cfg.spider = spider_config_from(spec);
      cfg.L0 = spec.real("L0");
      cfg.L1 = spec.real("L1");
      cfg.eps = spec.real("eps");
      break;
    case Algorithm::SdLbfgs:
      cfg.batch_size = spec.count("batch");
      cfg.eta0 = spec.real("eta0");
      cfg.damping.delta = spec.real("delta");
      cfg.damping.memory_size = spec.count("memory");
      cfg.fixed_w = spec.real("w");
      cfg.fixed_q = spec.real("q");
      break;
    case Algorithm::ClippedSqn: break;
  }
  return cfg;
}

/// True when validating the spec needs gamma0 from the dataset, i.e. the
/// eigenvalue bounds come from the closed forms with gamma0 on auto.
inline bool needs_data(const AlgorithmSpec& spec) {
  if (spec.algorithm != Algorithm::ClippedSqn) return false;
  return spec.get("gamma0") == "auto" && spec.get("lambda_M") == "auto" && !spec.gridded("gamma0");
}

/// Validates every grid point of one roster entry, prefixing errors with the
/// section name. `data_smoothness` stands in for the dataset when given.
inline void validate_spec(const AlgorithmSpec& spec, const std::optional<SmoothnessParams>& data_smoothness) {
  check_required(spec);
  for (const auto& point : expand_grid(spec)) {
    try {
      if (spec.algorithm == Algorithm::ClippedSqn) {
        if (!data_smoothness && needs_data(point)) continue;
        const SmoothnessParams placeholder = data_smoothness.value_or(SmoothnessParams::from_gamma(1.0, 0.0, 0.0));
        resolve(sqn_config_from(point, placeholder));
      } else {
        baseline_config_from(point).validate();
      }
    } catch (const ConfigError& e) {
      const std::string what = e.what();
      const std::string prefix = point.section();
      std::string where = prefix;
      if (!point.grid.empty()) where += " (" + point.grid_label() + ")";
      throw ConfigError(what.rfind(prefix, 0) == 0 ? what : where + ": " + what);
    }
  }
}

inline void validate(const ExperimentConfig& cfg, const std::optional<SmoothnessParams>& data_smoothness = {}) {
  require_config(!cfg.roster.empty(), "experiment: the roster needs at least one algorithm section");
  require_config(!cfg.seeds.empty(), "experiment.seeds: at least one seed is required");
  std::set<std::uint64_t> seen(cfg.seeds.begin(), cfg.seeds.end());
  require_config(seen.size() == cfg.seeds.size(), "experiment.seeds: seeds must be distinct");
  require_config(cfg.max_iterations >= 1, "experiment.max_iterations: must be >= 1");
  require_config(cfg.threads >= 1, "experiment.threads: must be >= 1");
  if (cfg.comparison)
    require_config(cfg.sample_budget > 0, "experiment.sample_budget: comparison mode needs a positive sample budget");
  if (cfg.dataset.from_file) {
    require_config(!cfg.dataset.path.empty(), "dataset.path: required when source = file");
  } else {
    require_config(cfg.dataset.d >= 1, "dataset.d: must be >= 1");
    require_config(cfg.dataset.n >= 1, "dataset.n: must be >= 1");
    require_config(cfg.dataset.sparsity > 0.0 && cfg.dataset.sparsity <= 1.0, "dataset.sparsity: must lie in (0, 1]");
    require_config(nonzeros_per_sample(cfg.dataset.d, cfg.dataset.sparsity) >= 1,
                   "dataset.sparsity: sparsity * d rounds to zero nonzeros per sample");
  }
  std::set<Algorithm> algos;
  for (const auto& spec : cfg.roster) {
    require_config(algos.insert(spec.algorithm).second, spec.section() + ": duplicate section");
    validate_spec(spec, data_smoothness);
  }
}

// ---------------------------------------------------------------------------
// Text form

namespace detail {

struct RawSection {
  std::string name;
  int line = 0;
  std::vector<std::pair<std::string, std::string>> entries;
  std::vector<int> lines;
};

inline std::vector<RawSection> split_sections(std::string_view text) {
  std::vector<RawSection> sections;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    std::string_view body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']' || body.size() < 3)
        throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      sections.push_back({std::string(trim(body.substr(1, body.size() - 2))), lineno, {}, {}});
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    if (sections.empty()) throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
    const auto key = trim(body.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    sections.back().entries.emplace_back(std::string(key), std::string(trim(body.substr(eq + 1))));
    sections.back().lines.push_back(lineno);
  }
  return sections;
}

/// Applies a section's entries to a table of fixed keys; returns key -> canonical value.
inline std::vector<std::pair<std::string, std::string>> read_fixed(const RawSection& sec,
                                                                   std::span<const ParamInfo> table) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& p : table) out.emplace_back(std::string(p.key), std::string(p.fallback));
  std::set<std::string> given;
  for (const auto& [key, value] : sec.entries) {
    const std::string path = sec.name + "." + key;
    const auto* info = find_param(table, key);
    if (!info) throw ConfigError(path + ": unknown key");
    if (!given.insert(key).second) throw ConfigError(path + ": duplicate key");
    for (auto& [k, v] : out)
      if (k == key) v = canonical_value(*info, value, path);
  }
  for (const auto& p : table)
    if (p.required && !given.count(std::string(p.key)))
      throw ConfigError(sec.name + "." + std::string(p.key) + ": missing required field");
  return out;
}

inline const std::string& lookup(const std::vector<std::pair<std::string, std::string>>& kv, std::string_view key) {
  for (const auto& [k, v] : kv)
    if (k == key) return v;
  throw ContractViolation("missing key " + std::string(key));
}

inline AlgorithmSpec read_algorithm(const RawSection& sec) {
  AlgorithmSpec spec = default_spec(algorithm_from_string(sec.name));
  std::set<std::string> given;
  for (const auto& [key, value] : sec.entries) {
    const std::string path = sec.name + "." + key;
    if (!given.insert(key).second) throw ConfigError(path + ": duplicate key");
    if (key.rfind("grid.", 0) == 0) {
      spec.set_grid(key.substr(5), split_list(value));
    } else {
      spec.set(key, value);
    }
  }
  if (spec.algorithm == Algorithm::ClippedSqn) {
    if (spec.get("q") != "auto" && given.count("q_k")) throw ConfigError("clipped_sqn.q: set q or q_k, not both");
    if (spec.get("kappa") != "auto" && given.count("w")) throw ConfigError("clipped_sqn.kappa: set kappa or w, not both");
  }
  check_required(spec);
  return spec;
}

}  // namespace detail

/// Parses and validates configuration text. Checks that need the dataset
/// (gamma0 = auto with closed-form eigenvalue bounds) are deferred to the
/// experiment, which repeats validation once the data exists.
inline ExperimentConfig parse_config(std::string_view text) {
  const auto sections = detail::split_sections(text);
  ExperimentConfig cfg;
  cfg.roster.clear();
  bool have_experiment = false, have_dataset = false;
  for (const auto& sec : sections) {
    if (sec.name == "experiment") {
      require_config(!have_experiment, "experiment: duplicate section");
      have_experiment = true;
      const auto kv = detail::read_fixed(sec, detail::kExperimentParams);
      cfg.objective = objective_from_string(detail::lookup(kv, "objective"));
      cfg.seeds.clear();
      for (const auto& s : detail::split_list(detail::lookup(kv, "seeds"))) {
        auto v = detail::parse_count(s);
        if (!v) throw ConfigError("experiment.seeds: expected non-negative integers, got '" + s + "'");
        cfg.seeds.push_back(*v);
      }
      cfg.sample_budget = static_cast<Index>(*detail::parse_count(detail::lookup(kv, "sample_budget")));
      cfg.max_iterations = static_cast<Index>(*detail::parse_count(detail::lookup(kv, "max_iterations")));
      cfg.comparison = detail::lookup(kv, "comparison") == "true";
      cfg.output = detail::lookup(kv, "output");
      const auto& init = detail::lookup(kv, "init");
      cfg.init = init == "normal" ? InitMode::Normal : init == "uniform" ? InitMode::Uniform
                                                     : init == "zero"    ? InitMode::Zero
                                                                         : InitMode::Auto;
      cfg.threads = static_cast<Index>(*detail::parse_count(detail::lookup(kv, "threads")));
    } else if (sec.name == "dataset") {
      require_config(!have_dataset, "dataset: duplicate section");
      have_dataset = true;
      const auto kv = detail::read_fixed(sec, detail::kDatasetParams);
      cfg.dataset.from_file = detail::lookup(kv, "source") == "file";
      cfg.dataset.path = detail::lookup(kv, "path");
      cfg.dataset.d = static_cast<Index>(*detail::parse_count(detail::lookup(kv, "d")));
      cfg.dataset.n = static_cast<Index>(*detail::parse_count(detail::lookup(kv, "n")));
      cfg.dataset.sparsity = *detail::parse_real(detail::lookup(kv, "sparsity"));
      cfg.dataset.seed = *detail::parse_count(detail::lookup(kv, "seed"));
      cfg.dataset.shared_u = detail::lookup(kv, "shared_u") == "true";
    } else {
      try {
        algorithm_from_string(sec.name);
      } catch (const ConfigError&) {
        throw ConfigError(sec.name + ": unknown section (line " + std::to_string(sec.line) + ")");
      }
      cfg.roster.push_back(detail::read_algorithm(sec));
    }
  }
  require_config(have_experiment, "experiment: missing required section");
  validate(cfg);
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

/// Canonical text with every default filled in; parse_config reads it back
/// to an equal config.
inline std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "[experiment]\n";
  out << "objective = " << to_string(cfg.objective) << "\n";
  out << "seeds = ";
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) out << (i ? ", " : "") << cfg.seeds[i];
  out << "\n";
  out << "sample_budget = " << cfg.sample_budget << "\n";
  out << "max_iterations = " << cfg.max_iterations << "\n";
  out << "comparison = " << (cfg.comparison ? "true" : "false") << "\n";
  out << "output = " << cfg.output << "\n";
  out << "init = " << to_string(cfg.init) << "\n";
  out << "threads = " << cfg.threads << "\n";
  out << "\n[dataset]\n";
  out << "source = " << (cfg.dataset.from_file ? "file" : "generate") << "\n";
  out << "path = " << cfg.dataset.path << "\n";
  out << "d = " << cfg.dataset.d << "\n";
  out << "n = " << cfg.dataset.n << "\n";
  out << "sparsity = " << detail::format_real(cfg.dataset.sparsity) << "\n";
  out << "seed = " << cfg.dataset.seed << "\n";
  out << "shared_u = " << (cfg.dataset.shared_u ? "true" : "false") << "\n";
  for (const auto& spec : cfg.roster) {
    out << "\n[" << spec.section() << "]\n";
    for (const auto& [k, v] : spec.values) {
      if (v.empty()) continue;
      if (spec.algorithm == Algorithm::ClippedSqn) {
        // An explicit q or kappa overrides its convenience key, which is then omitted.
        if (k == "q_k" && spec.get("q") != "auto") continue;
        if (k == "w" && spec.get("kappa") != "auto") continue;
      }
      out << k << " = " << v << "\n";
    }
    for (const auto& axis : spec.grid) {
      out << "grid." << axis.key << " = ";
      for (std::size_t i = 0; i < axis.values.size(); ++i) out << (i ? ", " : "") << axis.values[i];
      out << "\n";
    }
  }
  return out.str();
}

}  // namespace csqn
