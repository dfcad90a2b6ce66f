#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "support.hpp"

using namespace boostmt;
using boostmt::testing::random_matrix;

namespace {

// Layer-by-layer scalar recomputation of the extractor.
std::vector<double> oracle_embed(const FeatureExtractor& fx, const ParamStore& theta, std::span<const double> x) {
  std::vector<double> h(x.begin(), x.end());
  for (std::size_t l = 0; l < fx.layers(); ++l) {
    const Tensor& w = theta.at(FeatureExtractor::weight_name(l));
    const Tensor& b = theta.at(FeatureExtractor::bias_name(l));
    std::vector<double> next(w.cols());
    for (std::size_t o = 0; o < w.cols(); ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * w(i, o);
      next[o] = (l + 1 < fx.layers()) ? std::max(0.0, s) : s;
    }
    h = std::move(next);
  }
  return h;
}

double graph_scalar(const std::function<NodeId(Graph&)>& f) {
  Graph g;
  return g.value(f(g)).item();
}

Task fixed_task(const Tensor& support, std::vector<std::size_t> sy, const Tensor& query, std::vector<std::size_t> qy,
                std::size_t ways) {
  Task t;
  t.support_x = support;
  t.support_y = std::move(sy);
  t.query_x = query;
  t.query_y = std::move(qy);
  for (std::size_t n = 0; n < ways; ++n) t.class_map.push_back(n);
  return t;
}

}  // namespace

TEST(Extractor, MatchesIndependentLayerOracle) {
  Rng rng(4);
  FeatureExtractor fx({5, 7, 6, 3});
  const ParamStore theta = fx.init(rng);
  const Tensor x = random_matrix(rng, 9, 5);
  const Tensor e = embed(fx, theta, x);
  Graph g;
  const Tensor ge = g.value(embed(g, fx, BoundParams(g, theta, false), g.constant(x)));
  for (std::size_t r = 0; r < 9; ++r) {
    const auto want = oracle_embed(fx, theta, x.row(r));
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_NEAR(e(r, c), want[c], 1e-12);
      EXPECT_NEAR(ge(r, c), want[c], 1e-12);
    }
  }
}

TEST(Extractor, BatchRowsAreIndependent) {
  Rng rng(5);
  FeatureExtractor fx({4, 8, 3});
  const ParamStore theta = fx.init(rng);
  const Tensor x = random_matrix(rng, 6, 4);
  const Tensor all = embed(fx, theta, x);
  for (std::size_t r = 0; r < 6; ++r) {
    Tensor one({1, 4});
    std::copy(x.row(r).begin(), x.row(r).end(), one.row(0).begin());
    const Tensor e = embed(fx, theta, one);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(e(0, c), all(r, c));
  }
}

TEST(Extractor, WrongInputWidthThrows) {
  Rng rng(1);
  FeatureExtractor fx({4, 8, 3});
  EXPECT_THROW(embed(fx, fx.init(rng), Tensor({2, 5})), DimensionError);
  EXPECT_THROW(FeatureExtractor({4, 3}), ContractError);
}

TEST(Prototypes, MeansPerLabel) {
  const Tensor e = Tensor::matrix(4, 2, {1, 2, 3, 4, 10, 0, 20, 0});
  const std::vector<std::size_t> y{0, 0, 1, 1};
  EXPECT_EQ(prototypes(e, y, 2), Tensor::matrix(2, 2, {2, 3, 15, 0}));
  const std::vector<std::size_t> missing{0, 0, 0, 0};
  EXPECT_THROW(prototypes(e, missing, 2), EpisodeShapeError);
  const std::vector<std::size_t> uneven{0, 0, 0, 1};
  EXPECT_THROW(prototypes(e, uneven, 2), EpisodeShapeError);
}

TEST(Metrics, WorkedValues) {
  const std::vector<double> q{1.0, 2.0};
  const Tensor c = Tensor::matrix(1, 2, {4.0, -2.0});
  EXPECT_NEAR(metric_scores(q, c, Metric(MetricKind::manhattan))[0], -7.0, 1e-15);
  EXPECT_NEAR(metric_scores(q, c, Metric(MetricKind::euclidean))[0], -5.0, 1e-15);
  EXPECT_NEAR(metric_scores(q, c, Metric(MetricKind::chebyshev))[0], -4.0, 1e-15);
  EXPECT_NEAR(metric_scores(q, c, Metric(MetricKind::cosine))[0], 0.0, 1e-15);
  EXPECT_NEAR(metric_scores(q, c, Metric(MetricKind::cosine_plus_euclidean))[0], -5.0, 1e-15);
  EXPECT_NEAR(metric_scores(q, c, Metric(MetricKind::manhattan, 2.0))[0], -14.0, 1e-15);
  const std::vector<double> origin{0.0, 0.0};
  EXPECT_NEAR(metric_scores(origin, Tensor::matrix(1, 2, {3.0, 4.0}), Metric(MetricKind::manhattan))[0], -7.0, 1e-15);
  EXPECT_NEAR(metric_scores(origin, Tensor::matrix(1, 2, {3.0, 4.0}), Metric(MetricKind::euclidean))[0], -5.0, 1e-15);
}

TEST(Metrics, CosineIsScaleInvariantAndSelfMatchIsBest) {
  Rng rng(9);
  const Tensor protos = random_matrix(rng, 5, 6);
  for (MetricKind kind : kAllMetrics) {
    for (std::size_t n = 0; n < 5; ++n) {
      const Tensor s = metric_scores(protos.row(n), protos, Metric(kind));
      EXPECT_EQ(argmax(s.data()), n) << to_string(kind);
    }
  }
  std::vector<double> q(protos.row(2).begin(), protos.row(2).end());
  const Tensor a = metric_scores(q, protos, Metric(MetricKind::cosine));
  for (double& v : q) v *= 3.5;
  const Tensor b = metric_scores(q, protos, Metric(MetricKind::cosine));
  for (std::size_t n = 0; n < 5; ++n) EXPECT_NEAR(a[n], b[n], 1e-14);
  const std::vector<double> zero(6, 0.0);
  EXPECT_THROW(metric_scores(zero, protos, Metric(MetricKind::cosine)), DegenerateVectorError);
  EXPECT_THROW(Metric(MetricKind::cosine, 0.0), ConfigError);
}

TEST(Metrics, GraphBatchMatchesValuePath) {
  Rng rng(21);
  const Tensor q = random_matrix(rng, 4, 3), c = random_matrix(rng, 5, 3);
  for (MetricKind kind : kAllMetrics) {
    const Metric m(kind, 1.7);
    Graph g;
    const Tensor s = g.value(metric_scores(g, g.constant(q), g.constant(c), m));
    for (std::size_t i = 0; i < 4; ++i) {
      const Tensor row = metric_scores(q.row(i), c, m);
      for (std::size_t n = 0; n < 5; ++n) EXPECT_NEAR(s(i, n), row[n], 1e-12) << to_string(kind);
    }
  }
}

TEST(Probabilities, WorkedExampleAndShiftInvariance) {
  const Tensor p = episode_probabilities(Tensor::vector({std::log(3.0), 0.0}));
  EXPECT_NEAR(p[0], 0.75, 1e-15);
  EXPECT_NEAR(p[1], 0.25, 1e-15);
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor s({6});
    for (double& v : s.data()) v = rng.normal(0.0, 5.0);
    Tensor shifted = s;
    const double c = rng.normal(0.0, 100.0);
    for (double& v : shifted.data()) v += c;
    const Tensor a = episode_probabilities(s), b = episode_probabilities(shifted);
    double total = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_NEAR(a[i], b[i], 1e-12);
      total += a[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  EXPECT_NEAR(cross_entropy(Tensor::vector({0.2, 0.2, 0.2, 0.2, 0.2}), 3), std::log(5.0), 1e-15);
  EXPECT_THROW(cross_entropy(Tensor::vector({0.5, 0.5}), 2), ContractError);
}

TEST(ClassificationLoss, ZeroHeadGivesLogC) {
  Rng rng(8);
  FeatureExtractor fx({4, 6, 3});
  LinearClassifier clf(3, 7);
  const ParamStore theta = fx.init(rng), omega = clf.zeros();
  const Tensor x = random_matrix(rng, 5, 4);
  const std::vector<std::size_t> y{0, 6, 3, 3, 1};
  const double loss = graph_scalar([&](Graph& g) {
    return classification_loss(g, fx, BoundParams(g, theta, false), clf, BoundParams(g, omega, false), x, y);
  });
  EXPECT_NEAR(loss, std::log(7.0), 1e-14);
  const std::vector<std::size_t> bad{0, 7, 3, 3, 1};
  EXPECT_THROW(graph_scalar([&](Graph& g) {
                 return classification_loss(g, fx, BoundParams(g, theta, false), clf, BoundParams(g, omega, false), x,
                                            bad);
               }),
               ContractError);
}

TEST(EpisodeLoss, MatchesBruteForceForEveryMetric) {
  Rng rng(12);
  FeatureExtractor fx({4, 6, 3});
  const ParamStore theta = fx.init(rng);
  const std::size_t ways = 3, shots = 2, queries = 2;
  std::vector<std::size_t> sy, qy;
  for (std::size_t n = 0; n < ways; ++n) {
    for (std::size_t k = 0; k < shots; ++k) sy.push_back(n);
    for (std::size_t k = 0; k < queries; ++k) qy.push_back(n);
  }
  const Task task = fixed_task(random_matrix(rng, 6, 4), sy, random_matrix(rng, 6, 4), qy, ways);
  for (MetricKind kind : kAllMetrics) {
    const Metric m(kind, 1.3);
    std::vector<std::vector<double>> protos(ways, std::vector<double>(3, 0.0));
    for (std::size_t i = 0; i < task.support_y.size(); ++i) {
      const auto e = oracle_embed(fx, theta, task.support_x.row(i));
      for (std::size_t d = 0; d < 3; ++d) protos[task.support_y[i]][d] += e[d] / shots;
    }
    double want = 0.0;
    for (std::size_t i = 0; i < task.query_y.size(); ++i) {
      const auto q = oracle_embed(fx, theta, task.query_x.row(i));
      std::vector<double> score(ways);
      for (std::size_t n = 0; n < ways; ++n) {
        double qq = 0, pp = 0, qp = 0, l1 = 0, l2 = 0, li = 0;
        for (std::size_t d = 0; d < 3; ++d) {
          const double diff = q[d] - protos[n][d];
          qq += q[d] * q[d];
          pp += protos[n][d] * protos[n][d];
          qp += q[d] * protos[n][d];
          l1 += std::abs(diff);
          l2 += diff * diff;
          li = std::max(li, std::abs(diff));
        }
        const double cos = qp / std::sqrt(qq * pp);
        double s = 0.0;
        switch (kind) {
          case MetricKind::cosine: s = cos; break;
          case MetricKind::euclidean: s = -std::sqrt(l2); break;
          case MetricKind::manhattan: s = -l1; break;
          case MetricKind::chebyshev: s = -li; break;
          case MetricKind::cosine_plus_euclidean: s = cos - std::sqrt(l2); break;
        }
        score[n] = 1.3 * s;
      }
      double z = 0.0;
      for (double s : score) z += std::exp(s);
      want += -(score[task.query_y[i]] - std::log(z));
    }
    want /= static_cast<double>(task.query_y.size());
    const double got =
        graph_scalar([&](Graph& g) { return episode_loss(g, fx, BoundParams(g, theta, false), task, m); });
    EXPECT_NEAR(got, want, 1e-12) << to_string(kind);
  }
}

TEST(EpisodeLoss, IdenticalPrototypesGiveLogN) {
  FeatureExtractor fx({2, 3, 2});
  Rng rng(1);
  const ParamStore theta = fx.init(rng);
  const Tensor same = Tensor::matrix(2, 2, {1.0, 1.0, 1.0, 1.0});
  const Task task = fixed_task(same, {0, 1}, Tensor::matrix(2, 2, {0.3, -2.0, 5.0, 1.0}), {0, 1}, 2);
  for (MetricKind kind : kAllMetrics) {
    const double loss =
        graph_scalar([&](Graph& g) { return episode_loss(g, fx, BoundParams(g, theta, false), task, Metric(kind)); });
    EXPECT_NEAR(loss, std::log(2.0), 1e-14) << to_string(kind);
  }
}

TEST(ModelFile, RoundTripIsExact) {
  Rng rng(77);
  const Model m = init_model(FeatureExtractor({3, 5, 4}), 6, rng);
  std::stringstream ss;
  save_model(m, ss);
  EXPECT_EQ(load_model(ss), m);
  std::stringstream broken("boostmt-model 1\nwidths 3 5 4\nclasses 6\nparam theta.0.w 3 5\n1,2\n");
  EXPECT_THROW(load_model(broken), ParseError);
}
