#include <gtest/gtest.h>

#include "support.hpp"

using namespace boostmt;
using boostmt::testing::random_matrix;

namespace {

constexpr double kStep = 1e-5;
constexpr double kTolerance = 1e-5;

Task random_task(Rng& rng, std::size_t ways, std::size_t shots, std::size_t queries, std::size_t d) {
  Task t;
  t.shape = {ways, shots, queries};
  t.support_x = random_matrix(rng, ways * shots, d);
  t.query_x = random_matrix(rng, ways * queries, d);
  for (std::size_t n = 0; n < ways; ++n) {
    for (std::size_t k = 0; k < shots; ++k) t.support_y.push_back(n);
    for (std::size_t q = 0; q < queries; ++q) t.query_y.push_back(n);
    t.class_map.push_back(n);
  }
  return t;
}

}  // namespace

TEST(GradCheck, ElementaryOpsAgainstCentralDifferences) {
  Rng rng(1);
  ParamStore p;
  p.insert("a", random_matrix(rng, 3, 4));
  p.insert("b", random_matrix(rng, 4, 2));
  p.insert("c", random_matrix(rng, 1, 2));
  LossBuilder loss = [](Graph& g, const ParamStore& ps) {
    NodeId a = g.parameter("a", ps.at("a")), b = g.parameter("b", ps.at("b")), c = g.parameter("c", ps.at("c"));
    NodeId h = g.bias_add(g.matmul(a, b), c);
    NodeId s = g.log_softmax(g.scale(h, 0.7));
    NodeId n = g.l2_normalize(h);
    NodeId t = g.dot(g.reshape(g.transpose(n), {1, 6}), g.reshape(n, {1, 6}));
    return g.add(g.neg(g.mean(g.pick(s, {0, 1, 1}))), g.mul(t, g.sum(g.mul(c, c))));
  };
  const GradCheckResult r = finite_diff_check(loss, p, kStep);
  EXPECT_LT(r.max_error, kTolerance);
  EXPECT_EQ(r.coordinates, 22u);
}

TEST(GradCheck, ClassificationLossOverSeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    FeatureExtractor fx({8, 16, 8});
    LinearClassifier clf(8, 5);
    ParamStore theta = fx.init(rng), omega = clf.init(rng);
    ParamStore all = theta;
    for (std::size_t i = 0; i < omega.size(); ++i) all.insert(omega.name(i), omega.value(i));
    const Tensor x = random_matrix(rng, 12, 8);
    std::vector<std::size_t> y;
    for (std::size_t i = 0; i < 12; ++i) y.push_back(rng.uniform_index(5));
    LossBuilder loss = [&](Graph& g, const ParamStore& ps) {
      ParamStore t, w;
      for (std::size_t i = 0; i < ps.size(); ++i) (ps.name(i)[0] == 't' ? t : w).insert(ps.name(i), ps.value(i));
      return classification_loss(g, fx, BoundParams(g, t, true), clf, BoundParams(g, w, true), x, y);
    };
    const GradCheckResult r = finite_diff_check(loss, all, kStep);
    EXPECT_LT(r.max_error, kTolerance) << "seed " << seed << " at " << r.worst;
  }
}

TEST(GradCheck, EpisodeLossEveryMetricOverSeeds) {
  for (MetricKind kind : kAllMetrics) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(derive_seed(seed, to_string(kind)));
      FeatureExtractor fx({8, 16, 8});
      const ParamStore theta = fx.init(rng);
      const Task task = random_task(rng, 3, 2, 2, 8);
      const Metric m(kind, 1.0);
      LossBuilder loss = [&](Graph& g, const ParamStore& ps) {
        return episode_loss(g, fx, BoundParams(g, ps, true), task, m);
      };
      const GradCheckResult r = finite_diff_check(loss, theta, kStep);
      EXPECT_LT(r.max_error, kTolerance) << to_string(kind) << " seed " << seed << " at " << r.worst;
    }
  }
}
