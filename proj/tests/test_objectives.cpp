#include "csqn/objectives.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

using namespace csqn;

namespace {

constexpr ObjectiveKind kRobust = ObjectiveKind::RobustLinearRegression;
constexpr ObjectiveKind kLogistic = ObjectiveKind::NonconvexLogistic;

Dataset single(std::vector<double> a, double b) { return oracle::make_dataset({a}, {b}); }

}  // namespace

TEST(Synthetic, SparsityPatternAndLabels) {
  const Dataset data = generate_synthetic({100, 5000, 0.1, LabelMode::PlusMinusOne, 3, false});
  ASSERT_EQ(data.size(), 5000u);
  ASSERT_EQ(data.dimension(), 100u);
  for (Index i = 0; i < data.size(); ++i) {
    const auto row = data.features(i);
    int nnz = 0;
    for (Eigen::Index j = 0; j < row.size(); ++j) {
      if (row[j] != 0.0) ++nnz;
      ASSERT_GE(row[j], 0.0);
      ASSERT_LE(row[j], 1.0);
    }
    ASSERT_EQ(nnz, 10);
    ASSERT_TRUE(data.label(i) == 1.0 || data.label(i) == -1.0);
  }
}

TEST(Synthetic, DenseBoundary) {
  const Dataset data = generate_synthetic({3, 50, 1.0, LabelMode::PlusMinusOne, 1, false});
  for (Index i = 0; i < data.size(); ++i)
    for (Eigen::Index j = 0; j < 3; ++j) EXPECT_GT(data.features(i)[j], 0.0);
}

TEST(Synthetic, SameSeedSameBits) {
  const SyntheticSpec spec{20, 200, 0.2, LabelMode::ZeroOne, 7, false};
  EXPECT_TRUE(generate_synthetic(spec) == generate_synthetic(spec));
  SyntheticSpec other = spec;
  other.seed = 8;
  EXPECT_FALSE(generate_synthetic(spec) == generate_synthetic(other));
}

TEST(Synthetic, ZeroOneLabels) {
  const Dataset data = generate_synthetic({10, 300, 0.3, LabelMode::ZeroOne, 2, false});
  std::set<double> seen;
  for (Index i = 0; i < data.size(); ++i) seen.insert(data.label(i));
  EXPECT_EQ(seen, (std::set<double>{0.0, 1.0}));
}

TEST(Synthetic, SharedDirectionGivesLinearlySeparableLabels) {
  const Dataset data = generate_synthetic({5, 100, 1.0, LabelMode::PlusMinusOne, 4, true});
  // With one shared u the labels agree with sign(u^T a); some x (namely u) separates them.
  RngStream rng(4, Stream::Data);
  Vector u(5);
  for (Eigen::Index j = 0; j < 5; ++j) u[j] = rng.uniform(-1.0, 1.0);
  for (Index i = 0; i < data.size(); ++i)
    EXPECT_EQ(data.label(i), data.features(i).dot(u) >= 0.0 ? 1.0 : -1.0);
}

TEST(Synthetic, RejectsZeroNonzeros) {
  EXPECT_THROW(generate_synthetic({10, 10, 0.01, LabelMode::PlusMinusOne, 1, false}), ConfigError);
  EXPECT_THROW(generate_synthetic({10, 10, 0.0, LabelMode::PlusMinusOne, 1, false}), ConfigError);
}

TEST(Persistence, RoundTripIsExact) {
  const Dataset data = generate_synthetic({12, 40, 0.25, LabelMode::PlusMinusOne, 5, false});
  EXPECT_TRUE(parse_dataset(serialize_dataset(data)) == data);
  const auto path = std::filesystem::temp_directory_path() / "csqn_dataset_roundtrip.txt";
  save_dataset(data, path.string());
  EXPECT_TRUE(load_dataset(path.string()) == data);
  std::filesystem::remove(path);
}

TEST(Persistence, Errors) {
  EXPECT_THROW(load_dataset("/nonexistent/dir/data.txt"), IoError);
  EXPECT_THROW(parse_dataset(""), ConfigError);
  EXPECT_THROW(parse_dataset("2 2\n1 0:1\n"), ConfigError);
  EXPECT_THROW(parse_dataset("2 1\n1 5:1\n"), ConfigError);
}

TEST(Loss, WorkedValues) {
  EXPECT_DOUBLE_EQ(loss(kRobust, Vector::Zero(2), single({1, 0}, 0.0), std::vector<Index>{0}), 0.0);
  EXPECT_NEAR(loss(kRobust, Vector::Zero(2), single({1, 0}, 2.0), std::vector<Index>{0}), std::log(3.0), 1e-15);
  EXPECT_NEAR(loss(kLogistic, Vector::Zero(2), single({1, 0}, 1.0), std::vector<Index>{0}), std::log(2.0), 1e-15);
}

TEST(Loss, MatchesNaiveFormulas) {
  for (auto kind : {kRobust, kLogistic}) {
    const Dataset data = generate_synthetic({8, 30, 0.5, natural_label_mode(kind), 9, false});
    RngStream rng(9, Stream::Init);
    const Vector x = oracle::gaussian(rng, 8);
    const std::vector<Index> batch{0, 3, 3, 29};
    EXPECT_NEAR(loss(kind, x, data, batch), oracle::naive_batch_loss(kind, x, data, batch), 1e-13);
  }
}

TEST(Loss, Errors) {
  const Dataset data = single({1, 0}, 0.5);
  EXPECT_THROW(loss(kRobust, Vector::Zero(2), data, std::vector<Index>{}), ContractViolation);
  EXPECT_THROW(loss(kLogistic, Vector::Zero(2), data, std::vector<Index>{0}), ConfigError);
  EXPECT_THROW(gradient(kLogistic, Vector::Zero(2), data, std::vector<Index>{0}), ConfigError);
  EXPECT_THROW(loss(kRobust, Vector::Zero(3), data, std::vector<Index>{0}), ContractViolation);
}

TEST(Loss, LogisticStableForLargeMargins) {
  const Dataset data = single({1}, 1.0);
  Vector x(1);
  x[0] = 800.0;
  EXPECT_NEAR(loss(kLogistic, x, data, std::vector<Index>{0}), 0.0, 1e-300);
  x[0] = -800.0;
  EXPECT_NEAR(loss(kLogistic, x, data, std::vector<Index>{0}), 800.0, 1e-9);
}

TEST(Gradient, WorkedValues) {
  const Vector gr = gradient(kRobust, Vector::Zero(2), single({1, 0}, 2.0), std::vector<Index>{0});
  EXPECT_NEAR(gr[0], -2.0 / 3.0, 1e-15);
  EXPECT_EQ(gr[1], 0.0);
  const Vector gl = gradient(kLogistic, Vector::Zero(2), single({1, 0}, 1.0), std::vector<Index>{0});
  EXPECT_NEAR(gl[0], -0.5, 1e-15);
  EXPECT_EQ(gl[1], 0.0);
}

TEST(Gradient, FiniteDifferences) {
  for (auto kind : {kRobust, kLogistic, ObjectiveKind::SigmoidCrossEntropy}) {
    const Dataset data = generate_synthetic({5, 12, 0.6, natural_label_mode(kind), 11, false});
    RngStream rng(11, Stream::Init);
    for (int t = 0; t < 20; ++t) {
      const Vector x = oracle::gaussian(rng, 5);
      const std::vector<Index> batch{rng.index(12), rng.index(12), rng.index(12)};
      const Vector g = gradient(kind, x, data, batch);
      const Vector fd = oracle::central_difference(
          [&](const Vector& z) { return oracle::naive_batch_loss(kind, z, data, batch); }, x);
      EXPECT_LE((g - fd).norm(), 1e-6 * std::max(g.norm(), 1e-3)) << to_string(kind);
    }
  }
}

TEST(Gradient, BatchAverageOverAllBatchesIsFullGradient) {
  // Every ordered batch of size m drawn with replacement from n = 6 samples.
  const Dataset data = generate_synthetic({4, 6, 0.5, LabelMode::PlusMinusOne, 13, false});
  RngStream rng(13, Stream::Init);
  const Vector x = oracle::gaussian(rng, 4);
  for (Index m = 1; m <= 3; ++m) {
    Vector mean = Vector::Zero(4);
    Index count = 0;
    std::vector<Index> b(m, 0);
    for (;;) {
      mean += gradient(kRobust, x, data, b);
      ++count;
      Index pos = 0;
      while (pos < m && ++b[pos] == 6) b[pos++] = 0;
      if (pos == m) break;
    }
    mean /= static_cast<double>(count);
    EXPECT_LE((mean - full_gradient(kRobust, x, data)).cwiseAbs().maxCoeff(), 1e-12) << "m=" << m;
  }
}

TEST(FullGradient, Consistency) {
  const Dataset data = generate_synthetic({6, 10, 0.5, LabelMode::ZeroOne, 17, false});
  RngStream rng(17, Stream::Init);
  const Vector x = oracle::gaussian(rng, 6);
  Vector avg = Vector::Zero(6);
  for (Index i = 0; i < 10; ++i) avg += sample_gradient(kLogistic, x, data, i) / 10.0;
  EXPECT_LE((avg - full_gradient(kLogistic, x, data)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((gradient(kLogistic, x, data, full_batch(data)) - full_gradient(kLogistic, x, data)).norm(), 1e-14);
  EXPECT_NEAR(loss(kLogistic, x, data, full_batch(data)), full_loss(kLogistic, x, data), 1e-14);

  const Dataset one = single({0.3, 0.7}, -1.0);
  const Vector y = Vector::Ones(2);
  EXPECT_LE((full_gradient(kRobust, y, one) - sample_gradient(kRobust, y, one, 0)).norm(), 1e-15);
}

TEST(Gradient, PerSampleNorms) {
  const Dataset data = generate_synthetic({6, 20, 0.5, LabelMode::PlusMinusOne, 19, false});
  const Vector x = Vector::Constant(6, 0.3);
  const std::vector<Index> batch{1, 4, 4, 9};
  std::vector<double> norms;
  const Vector g = gradient_with_norms(kRobust, x, data, batch, norms);
  EXPECT_LE((g - gradient(kRobust, x, data, batch)).norm(), 1e-15);
  ASSERT_EQ(norms.size(), 4u);
  for (std::size_t k = 0; k < batch.size(); ++k)
    EXPECT_NEAR(norms[k], sample_gradient(kRobust, x, data, batch[k]).norm(), 1e-15);
}

TEST(CrossEntropy, WorkedValue) {
  Vector u(2);
  u << 1, 0;
  const auto r = check_cross_entropy_smoothness(u, 1.0, std::vector<Vector>{Vector::Zero(2)});
  ASSERT_EQ(r.ratios.size(), 1u);
  EXPECT_NEAR(r.ratios[0], 0.5, 1e-15);
  EXPECT_TRUE(r.bound_holds);
}

TEST(CrossEntropy, RatioIsSigmoidTimesNorm) {
  RngStream rng(23, Stream::Init);
  const Vector u = oracle::gaussian(rng, 4);
  std::vector<Vector> xs;
  for (int i = 0; i < 50; ++i) xs.push_back(oracle::gaussian(rng, 4));
  const auto r = check_cross_entropy_smoothness(u, 0.7, xs);
  ASSERT_EQ(r.ratios.size(), xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double yhat = 1.0 / (1.0 + std::exp(-u.dot(xs[i])));
    EXPECT_NEAR(r.ratios[i], yhat * u.norm(), 1e-12);
    EXPECT_LE(r.ratios[i], u.norm() + 1e-12);
  }
  EXPECT_NEAR(r.max_ratio, *std::max_element(r.ratios.begin(), r.ratios.end()), 0.0);
}

TEST(CrossEntropy, VanishingRatioAndEmptyReport) {
  Vector u(1);
  u << 1.0;
  Vector far(1);
  far << -40.0;
  const auto r = check_cross_entropy_smoothness(u, 1.0, std::vector<Vector>{far});
  ASSERT_EQ(r.ratios.size(), 1u);
  EXPECT_LT(r.ratios[0], 1e-15);
  const auto empty = check_cross_entropy_smoothness(u, 0.0, std::vector<Vector>{far});
  EXPECT_TRUE(empty.empty());
  EXPECT_EQ(empty.skipped, 1u);
}

TEST(SmoothnessTrajectory, QuadraticGivesUnitEstimates) {
  std::vector<Vector> xs;
  RngStream rng(29, Stream::Init);
  for (int i = 0; i < 6; ++i) xs.push_back(oracle::gaussian(rng, 3));
  xs.push_back(xs.back());  // coincident pair is skipped
  const auto pts = estimate_smoothness_along_trajectory([](const Vector& x) { return x; }, xs);
  ASSERT_EQ(pts.size(), 5u);
  for (const auto& p : pts) EXPECT_NEAR(p.smoothness, 1.0, 1e-12);
}

TEST(SmoothnessTrajectory, SinglePairAndGuard) {
  std::vector<Vector> xs{Vector::Zero(2), Vector::Ones(2)};
  EXPECT_EQ(estimate_smoothness_along_trajectory([](const Vector& x) { return x; }, xs).size(), 1u);
  std::vector<Vector> one{Vector::Zero(2)};
  EXPECT_THROW(estimate_smoothness_along_trajectory([](const Vector& x) { return x; }, one), ContractViolation);
}

TEST(SmoothnessTrajectory, SgdOnRobustRegressionCorrelatesWithGradientNorm) {
  const Dataset data = generate_synthetic({20, 400, 0.3, LabelMode::PlusMinusOne, 31, false});
  RngStream rng(31, Stream::Init);
  Vector x = oracle::gaussian(rng, 20, 3.0);
  std::vector<Vector> xs{x};
  for (int k = 0; k < 40; ++k) {
    std::vector<Index> batch(50);
    for (auto& i : batch) i = rng.index(data.size());
    x -= 0.5 * gradient(kRobust, x, data, batch);
    xs.push_back(x);
  }
  const auto pts = estimate_smoothness_along_trajectory(kRobust, data, xs);
  ASSERT_GE(pts.size(), 20u);
  std::vector<double> g, l;
  for (const auto& p : pts) {
    g.push_back(p.grad_norm);
    l.push_back(p.smoothness);
  }
  EXPECT_GT(oracle::spearman(g, l), 0.0);
}

TEST(Smoothness, FromGammaAndDerived) {
  const auto p = SmoothnessParams::from_gamma(1.0, 0.0, 0.0);
  EXPECT_NEAR(p.L0, std::sqrt(2.0), 1e-15);
  EXPECT_EQ(p.L1, 0.0);
  const auto q = SmoothnessParams::from_gamma(1.0, 1.0, 1.0);
  EXPECT_NEAR(q.L0, 2.0, 1e-15);
  EXPECT_TRUE(q.gamma_consistent(1e-15));

  const Dataset data = oracle::make_dataset({{1, 2}, {0, 3}}, {1, -1});
  const auto d = derive_smoothness_params(kRobust, data);
  EXPECT_NEAR(d.gamma0, 9.0, 1e-15);
  EXPECT_EQ(d.gamma1, 0.0);
  EXPECT_NEAR(derive_smoothness_params(kLogistic, oracle::make_dataset({{1, 2}}, {1})).gamma0, 1.25, 1e-15);
}

TEST(Smoothness, PerSampleHessianBound) {
  // ||Hess l_i(x)|| = |l''(a^T x)| ||a||^2 must stay below gamma0 everywhere.
  const Dataset data = generate_synthetic({10, 100, 0.3, LabelMode::PlusMinusOne, 37, false});
  const auto p = derive_smoothness_params(kRobust, data);
  RngStream rng(37, Stream::Init);
  for (int t = 0; t < 200; ++t) {
    const Vector x = oracle::gaussian(rng, 10, 2.0);
    const Index i = rng.index(data.size());
    const double h = 1e-4;
    const Vector a = data.features(i).transpose();
    const Vector u = a / a.norm();
    const double curv = (sample_gradient(kRobust, x + h * u, data, i) - sample_gradient(kRobust, x - h * u, data, i))
                            .norm() /
                        (2 * h);
    EXPECT_LE(curv, p.gamma0 * (1 + 1e-6));
  }
}

TEST(Smoothness, SigmaEstimate) {
  const Dataset data = oracle::make_dataset({{1}, {-1}}, {0, 0});
  // Zero residuals give zero per-sample gradients.
  EXPECT_EQ(estimate_sigma(kRobust, data, Vector::Zero(1)), 0.0);
  const Dataset two = oracle::make_dataset({{1}, {1}}, {1, -1});
  // Slopes -1/1.5 and +1/1.5 around mean 0.
  EXPECT_NEAR(estimate_sigma(kRobust, two, Vector::Zero(1)), 2.0 / 3.0, 1e-15);
}
