#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace boostmt;

namespace {

// Two-layer network computing relu(x) - relu(-x) = x.
std::pair<FeatureExtractor, ParamStore> identity_extractor(std::size_t d) {
  FeatureExtractor fx({d, 2 * d, d});
  ParamStore p;
  Tensor w0({d, 2 * d}), w1({2 * d, d});
  for (std::size_t i = 0; i < d; ++i) {
    w0(i, i) = 1.0;
    w0(i, d + i) = -1.0;
    w1(i, i) = 1.0;
    w1(d + i, i) = -1.0;
  }
  p.insert(FeatureExtractor::weight_name(0), w0);
  p.insert(FeatureExtractor::bias_name(0), Tensor({2 * d}));
  p.insert(FeatureExtractor::weight_name(1), w1);
  p.insert(FeatureExtractor::bias_name(1), Tensor({d}));
  return {fx, p};
}

}  // namespace

TEST(ConfidenceInterval, WorkedCase) {
  const std::vector<double> xs{1.0, 0.5};
  const Interval ci = confidence_interval(xs);
  EXPECT_NEAR(ci.mean, 0.75, 0.005);
  EXPECT_NEAR(ci.half_width, 0.49, 0.005);
  EXPECT_THROW(confidence_interval(std::vector<double>{1.0}), ContractError);
}

TEST(ConfidenceInterval, MatchesTwoPassFormula) {
  Rng rng(derive_seed(6, "ci"));
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(300);
    std::vector<double> xs(n);
    for (double& x : xs) x = rng.uniform01();
    long double sum = 0.0L;
    for (double x : xs) sum += x;
    const long double mean = sum / n;
    long double ss = 0.0L;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double hw = static_cast<double>(1.96L * std::sqrt(ss / (n - 1)) / std::sqrt(static_cast<long double>(n)));
    const Interval ci = confidence_interval(xs);
    ASSERT_NEAR(ci.mean, static_cast<double>(mean), 1e-12);
    ASSERT_NEAR(ci.half_width, hw, 1e-12);
  }
}

TEST(MetaTest, IdentityExtractorOnZeroNoiseDataIsPerfect) {
  const Dataset ds = generate_synthetic(boostmt::testing::tiny_generator(3, 1e-300));
  const auto [fx, theta] = identity_extractor(ds.dim());
  for (MetricKind kind : kAllMetrics) {
    const EvalReport r = meta_test(fx, theta, ds, Split::novel, {3, 1, 5}, 50, Metric(kind), 1);
    EXPECT_EQ(r.mean, 1.0) << to_string(kind);
    EXPECT_EQ(r.half_width95, 0.0);
  }
}

TEST(MetaTest, InformationFreeDataGivesChance) {
  GeneratorConfig g = boostmt::testing::tiny_generator(8);
  g.sigma_super = 1e-9;
  g.sigma_class = 1e-9;
  g.sigma_sample = 1.0;
  g.samples_per_class = 60;
  const Dataset ds = generate_synthetic(g);
  Rng rng(4);
  const FeatureExtractor fx({ds.dim(), 16, 8});
  const ParamStore theta = fx.init(rng);
  const EvalReport r = meta_test(fx, theta, ds, Split::novel, {3, 5, 15}, 600, Metric(MetricKind::euclidean), 2);
  EXPECT_NEAR(r.mean, 1.0 / 3.0, 3.0 * r.half_width95);
}

TEST(MetaTest, DeterministicAndThreadIndependent) {
  const Dataset ds = generate_synthetic(boostmt::testing::tiny_generator(5));
  Rng rng(4);
  const FeatureExtractor fx({ds.dim(), 16, 8});
  const ParamStore theta = fx.init(rng);
  const EvalReport a = meta_test(fx, theta, ds, Split::novel, {3, 2, 4}, 40, Metric(), 7, 1);
  const EvalReport b = meta_test(fx, theta, ds, Split::novel, {3, 2, 4}, 40, Metric(), 7, 1);
  const EvalReport c = meta_test(fx, theta, ds, Split::novel, {3, 2, 4}, 40, Metric(), 7, 3);
  EXPECT_EQ(a.accuracies, b.accuracies);
  EXPECT_EQ(a.accuracies, c.accuracies);
  EXPECT_EQ(a.mean, c.mean);
  // Task i does not depend on how many tasks run.
  const EvalReport prefix = meta_test(fx, theta, ds, Split::novel, {3, 2, 4}, 10, Metric(), 7, 1);
  EXPECT_TRUE(std::equal(prefix.accuracies.begin(), prefix.accuracies.end(), a.accuracies.begin()));
  EXPECT_THROW(meta_test(fx, theta, ds, Split::novel, {4, 2, 4}, 10, Metric(), 7), CapacityError);
}

TEST(Probe, SeparableEmbeddingsReachFullAccuracy) {
  GeneratorConfig g = boostmt::testing::tiny_generator(3, 1e-300);
  const Dataset ds = generate_synthetic(g);
  const auto [fx, theta] = identity_extractor(ds.dim());
  ProbeConfig pc;
  pc.epochs = 200;
  pc.learning_rate = 0.05;
  pc.batch_size = 32;
  pc.seed = 1;
  EXPECT_EQ(conventional_probe(fx, theta, ds, pc), 1.0);
}

TEST(Probe, ZeroFeaturesPredictOneClass) {
  const Dataset ds = generate_synthetic(boostmt::testing::tiny_generator(3));
  const FeatureExtractor fx({ds.dim(), 4, 3});
  ParamStore theta;
  for (std::size_t l = 0; l < fx.layers(); ++l) {
    theta.insert(FeatureExtractor::weight_name(l), Tensor({fx.widths()[l], fx.widths()[l + 1]}));
    theta.insert(FeatureExtractor::bias_name(l), Tensor({fx.widths()[l + 1]}));
  }
  ProbeConfig pc;
  pc.seed = 2;
  const ParamStore before = theta;
  // Equal holdout counts per class: a constant prediction scores 1/C.
  EXPECT_NEAR(conventional_probe(fx, theta, ds, pc), 1.0 / ds.classes(Split::base).size(), 1e-15);
  EXPECT_EQ(theta, before);
}

TEST(Probe, RejectsBadHoldout) {
  const Dataset ds = generate_synthetic(boostmt::testing::tiny_generator(3));
  Rng rng(1);
  const FeatureExtractor fx({ds.dim(), 4, 3});
  ProbeConfig pc;
  pc.holdout_fraction = 1.0;
  EXPECT_THROW(conventional_probe(fx, fx.init(rng), ds, pc), ContractError);
}
