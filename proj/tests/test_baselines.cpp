#include "csqn/baselines.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace csqn;

namespace {

constexpr ObjectiveKind kRobust = ObjectiveKind::RobustLinearRegression;

BaselineConfig make(Algorithm a) {
  BaselineConfig cfg;
  cfg.algorithm = a;
  cfg.batch_size = 20;
  cfg.spider = {40, 10, 4, SamplingMode::WithReplacement};
  cfg.max_iterations = 30;
  return cfg;
}

}  // namespace

TEST(Names, RoundTrip) {
  for (auto a : {Algorithm::ClippedSqn, Algorithm::Sgd, Algorithm::Spider, Algorithm::L0L1Spider, Algorithm::SdLbfgs})
    EXPECT_EQ(algorithm_from_string(to_string(a)), a);
  EXPECT_THROW(algorithm_from_string("adam"), ConfigError);
}

TEST(Sgd, ZeroStepsizeLeavesIterate) {
  const Dataset data = generate_synthetic({4, 50, 0.5, LabelMode::PlusMinusOne, 1, false});
  BaselineConfig cfg = make(Algorithm::Sgd);
  cfg.stepsize = 0.0;
  Vector x = Vector::Ones(4);
  RngStream rng(1, Stream::Minibatch);
  const auto s = sgd_step(x, data, kRobust, cfg, rng);
  EXPECT_EQ(x, Vector::Ones(4));
  EXPECT_EQ(s.samples, 20u);
}

TEST(Sgd, StepIsMinusEtaTimesBatchGradient) {
  const Dataset data = generate_synthetic({4, 50, 0.5, LabelMode::PlusMinusOne, 2, false});
  BaselineConfig cfg = make(Algorithm::Sgd);
  cfg.stepsize = 0.7;
  const Vector x0 = Vector::Constant(4, 0.3);
  Vector x = x0;
  RngStream a(2, Stream::Minibatch), b(2, Stream::Minibatch);
  sgd_step(x, data, kRobust, cfg, a);
  const auto batch = draw_batch(50, 20, SamplingMode::WithReplacement, b);
  EXPECT_LE((x - (x0 - 0.7 * gradient(kRobust, x0, data, batch))).norm(), 1e-15);
}

TEST(SpiderStepsize, WorkedValues) {
  EXPECT_DOUBLE_EQ(spider_stepsize(0.15, 1.0, 0.1).eta, 0.5);
  EXPECT_EQ(spider_stepsize(0.15, 1.0, 0.1).branch, ClipBranch::Constant);
  EXPECT_NEAR(spider_stepsize(10.0, 1.0, 0.1).eta, 0.01, 1e-15);
  EXPECT_NEAR(l0l1_spider_stepsize(10.0, 1.0, 1.0, 0.1).eta, 0.001, 1e-15);
  EXPECT_DOUBLE_EQ(l0l1_spider_stepsize(0.0, 2.0, 1.0, 0.1).eta, 0.25);
}

TEST(SpiderStepsize, L1ZeroLimitAndClippedRuleIdentity) {
  RngStream rng(3, Stream::Init);
  for (int t = 0; t < 1000; ++t) {
    const double v = rng.uniform(0, 50), L = rng.uniform(0.1, 5), L1 = rng.uniform(0.01, 5), eps = rng.uniform(0.01, 1);
    EXPECT_EQ(l0l1_spider_stepsize(v, L, 0.0, eps).eta, spider_stepsize(v, L, eps).eta);
    EXPECT_EQ(l0l1_spider_stepsize(v, L, L1, eps).eta, compute_stepsize(v, StepsizeParams{1.0, L, L1, 1.0, eps}).eta);
  }
}

TEST(SpiderFamily, StepUsesEstimatorAndUpdatesIterate) {
  const Dataset data = generate_synthetic({3, 30, 1.0, LabelMode::PlusMinusOne, 4, false});
  BaselineConfig cfg = make(Algorithm::Spider);
  cfg.spider = {30, 30, 3, SamplingMode::WithoutReplacement};
  cfg.L = 2.0;
  cfg.eps = 0.05;
  const Vector x0 = Vector::Constant(3, 1.5);
  SpiderRunState st(x0, cfg.spider);
  RngStream a(4, Stream::Restart), b(4, Stream::Refresh);
  const auto s = spider_step(st, data, kRobust, cfg, a, b);
  const Vector g = full_gradient(kRobust, x0, data);
  EXPECT_NEAR(s.eta, spider_stepsize(g.norm(), 2.0, 0.05).eta, 1e-15);
  EXPECT_LE((st.x - (x0 - s.eta * g)).norm(), 1e-12);
  EXPECT_EQ(s.samples, 30u);
}

TEST(SpiderFamily, ZeroEstimateKeepsIterate) {
  const Dataset data = oracle::make_dataset({{1, 0}, {0, 1}}, {0, 0});
  BaselineConfig cfg = make(Algorithm::L0L1Spider);
  cfg.spider = {2, 2, 2, SamplingMode::WithoutReplacement};
  SpiderRunState st(Vector::Zero(2), cfg.spider);
  RngStream a(5, Stream::Restart), b(5, Stream::Refresh);
  const auto s = l0l1_spider_step(st, data, kRobust, cfg, a, b);
  EXPECT_DOUBLE_EQ(s.eta, 1.0 / (2.0 * cfg.L0));
  EXPECT_EQ(st.x, Vector::Zero(2));
}

TEST(SdLbfgs, FirstStepIsCollinearWithGradient) {
  const Dataset data = generate_synthetic({5, 60, 0.5, LabelMode::PlusMinusOne, 6, false});
  BaselineConfig cfg = make(Algorithm::SdLbfgs);
  cfg.eta0 = 0.4;
  cfg.damping = {2.0, 0.5, 1.0, 5};
  const Vector x0 = Vector::Constant(5, 0.8);
  SdLbfgsState st(x0, cfg.damping);
  RngStream a(6, Stream::Minibatch), b(6, Stream::Minibatch);
  sdlbfgs_step(st, data, kRobust, cfg, a);
  const auto batch = draw_batch(60, 20, SamplingMode::WithReplacement, b);
  const Vector g = gradient(kRobust, x0, data, batch);
  EXPECT_LE((st.x - (x0 - 0.4 / 2.0 * g)).norm(), 1e-14);
}

TEST(SdLbfgs, DecayingStepAndPositiveDefiniteMemory) {
  const Dataset data = generate_synthetic({6, 80, 0.5, LabelMode::PlusMinusOne, 7, false});
  BaselineConfig cfg = make(Algorithm::SdLbfgs);
  cfg.eta0 = 0.5;
  cfg.damping = {0.5, 0.5, 1.0, 5};
  SdLbfgsState st(Vector::Constant(6, 2.0), cfg.damping);
  RngStream rng(7, Stream::Minibatch);
  for (int k = 0; k < 25; ++k) {
    const auto s = sdlbfgs_step(st, data, kRobust, cfg, rng);
    EXPECT_DOUBLE_EQ(s.eta, 0.5 / std::sqrt(1.0 + k));
    if (!st.memory.empty()) {
      for (const auto& p : st.memory.pairs()) {
        EXPECT_EQ(p.w, cfg.fixed_w);
        EXPECT_EQ(p.q, cfg.fixed_q);
      }
      EXPECT_GT(oracle::eigenvalues(dense_hk(st.memory, 6)).minCoeff(), 0.0);
    }
  }
  EXPECT_EQ(st.memory.size(), 5u);
}

TEST(RunBaseline, AccountingBudgetAndDeterminism) {
  const Dataset data = generate_synthetic({5, 100, 0.4, LabelMode::PlusMinusOne, 8, false});
  for (auto a : {Algorithm::Sgd, Algorithm::Spider, Algorithm::L0L1Spider, Algorithm::SdLbfgs}) {
    BaselineConfig cfg = make(a);
    cfg.stepsize = 0.1;
    cfg.eta0 = 0.1;
    cfg.seed = 3;
    const auto t = run_baseline(cfg, data, kRobust, Vector::Zero(5));
    ASSERT_EQ(t.records.size(), 30u) << to_string(a);
    const Index expected = (a == Algorithm::Sgd || a == Algorithm::SdLbfgs) ? 30 * 20 : 8 * 40 + 22 * 10;
    EXPECT_EQ(t.samples_consumed, expected) << to_string(a);
    EXPECT_EQ(t.records.back().samples_consumed, expected);
    EXPECT_EQ(run_baseline(cfg, data, kRobust, Vector::Zero(5)).final_x, t.final_x);

    cfg.max_iterations = 10000;
    cfg.sample_budget = 333;
    const auto b = run_baseline(cfg, data, kRobust, Vector::Zero(5));
    EXPECT_GE(b.samples_consumed, 333u);
    EXPECT_LT(b.samples_consumed, 333u + 40u);
  }
}

TEST(RunBaseline, SgdReducesLossOnSyntheticData) {
  const Dataset data = generate_synthetic({20, 500, 0.1, LabelMode::PlusMinusOne, 9, false});
  BaselineConfig cfg = make(Algorithm::Sgd);
  cfg.batch_size = 500;
  cfg.stepsize = 0.5;
  cfg.max_iterations = 50;
  const auto t = run_baseline(cfg, data, kRobust, Vector::Zero(20));
  EXPECT_LT(t.final_loss, t.records.front().loss);
}

TEST(RunBaseline, Validation) {
  BaselineConfig cfg = make(Algorithm::ClippedSqn);
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = make(Algorithm::SdLbfgs);
  cfg.fixed_q = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = make(Algorithm::Spider);
  cfg.L = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
