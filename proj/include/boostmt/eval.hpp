#pragma once

// Few-shot meta-testing with 95% confidence intervals, the frozen-extractor
// linear probe, and cross-domain evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <thread>
#include <utility>
#include <vector>

#include "boostmt/data.hpp"
#include "boostmt/episodes.hpp"
#include "boostmt/model.hpp"
#include "boostmt/rng.hpp"

namespace boostmt {

inline constexpr double kZ95 = 1.96;

struct Interval {
  double mean = 0.0;
  double half_width = 0.0;
};

// Mean and 1.96 * s / sqrt(n), s the sample (n-1) standard deviation.
inline Interval confidence_interval(std::span<const double> xs) {
  if (xs.size() < 2) throw ContractError("confidence_interval needs at least two values");
  const double n = static_cast<double>(xs.size());
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double s = std::sqrt(ss / (n - 1.0));
  return {mean, kZ95 * s / std::sqrt(n)};
}

struct EvalReport {
  std::size_t task_count = 0;
  std::vector<double> accuracies;  // indexed by task
  double mean = 0.0;
  double half_width95 = 0.0;
  EpisodeShape shape;
  Metric metric;
  Split split = Split::novel;
  std::uint64_t seed = 0;
};

// Fraction of query points whose highest-scoring prototype is their own class.
inline double task_accuracy(const FeatureExtractor& fx, const ParamStore& theta, const Task& task, Metric m) {
  const Tensor support = embed(fx, theta, task.support_x);
  const Tensor query = embed(fx, theta, task.query_x);
  const Tensor protos = prototypes(support, task.support_y, task.class_map.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < query.rows(); ++i) {
    const Tensor s = metric_scores(query.row(i), protos, m);
    if (argmax(s.data()) == task.query_y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(query.rows());
}

// Task i draws from its own stream derive_seed(seed, i), so results do not
// depend on evaluation order or thread count.
inline EvalReport meta_test(const FeatureExtractor& fx, const ParamStore& theta, const Dataset& ds, Split split,
                            EpisodeShape shape, std::size_t tasks, Metric m, std::uint64_t seed,
                            std::size_t threads = 1) {
  if (tasks == 0) throw ContractError("meta_test needs at least one task");
  EvalReport r;
  r.task_count = tasks;
  r.shape = shape;
  r.metric = m;
  r.split = split;
  r.seed = seed;
  r.accuracies.assign(tasks, 0.0);

  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < tasks; i += stride) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
      r.accuracies[i] = task_accuracy(fx, theta, sample_task(ds, split, shape, rng), m);
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, tasks));
  if (threads == 1) {
    work(0, 1);
  } else {
    // Capacity errors surface identically from every task, so validate once up front.
    Rng probe(derive_seed(seed, std::uint64_t{0}));
    (void)sample_task(ds, split, shape, probe);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& th : pool) th.join();
  }

  if (tasks >= 2) {
    const Interval ci = confidence_interval(r.accuracies);
    r.mean = ci.mean;
    r.half_width95 = ci.half_width;
  } else {
    r.mean = r.accuracies[0];
  }
  return r;
}

struct ProbeConfig {
  std::size_t epochs = 10;
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::size_t batch_size = 128;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;
};

// Trains a fresh zero-initialized linear head on frozen base-class embeddings
// (first 1 - holdout of each class's samples) and returns accuracy on the
// held-out remainder.
inline double conventional_probe(const FeatureExtractor& fx, const ParamStore& theta, const Dataset& ds,
                                 const ProbeConfig& cfg) {
  if (!(cfg.holdout_fraction > 0.0 && cfg.holdout_fraction < 1.0)) {
    throw ContractError("probe holdout fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> train_ids, test_ids;
  for (std::size_t cls : ds.classes(Split::base)) {
    const auto& ids = ds.class_samples(cls);
    const auto held = static_cast<std::size_t>(std::ceil(cfg.holdout_fraction * static_cast<double>(ids.size())));
    if (held == 0 || held >= ids.size()) throw CapacityError("class " + std::to_string(cls) + " too small to probe");
    const std::size_t cut = ids.size() - held;
    train_ids.insert(train_ids.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(cut));
    test_ids.insert(test_ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(cut), ids.end());
  }
  if (train_ids.empty()) throw CapacityError("probe: base split is empty");

  const Tensor train_emb = embed(fx, theta, ds.gather(train_ids));
  const Tensor test_emb = embed(fx, theta, ds.gather(test_ids));
  const std::size_t d = fx.embedding_dim();
  const LinearClassifier head(d, ds.classes(Split::base).size());
  ParamStore omega = head.zeros();
  ParamStore velocity = head.zeros();

  auto labels_of = [&](std::span<const std::size_t> ids) {
    std::vector<std::size_t> y;
    for (std::size_t i : ids) y.push_back(ds.split_index(ds.label(i)));
    return y;
  };

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t bs = std::min(cfg.batch_size, order.size());
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      Tensor xb({end - start, d});
      std::vector<std::size_t> yb;
      for (std::size_t i = start; i < end; ++i) {
        auto src = train_emb.row(order[i]);
        std::copy(src.begin(), src.end(), xb.row(i - start).begin());
        yb.push_back(ds.split_index(ds.label(train_ids[order[i]])));
      }
      Graph g;
      BoundParams w(g, omega, true);
      NodeId logits = g.bias_add(g.matmul(g.constant(std::move(xb)), w[LinearClassifier::kWeight]),
                                 w[LinearClassifier::kBias]);
      NodeId loss = g.neg(g.mean(g.pick(g.log_softmax(logits), yb)));
      const GradientMap grad = g.backward(loss);
      for (std::size_t i = 0; i < velocity.size(); ++i) {
        auto v = velocity.value(i).data();
        auto gr = grad.value(i).data();
        for (std::size_t j = 0; j < v.size(); ++j) v[j] = cfg.momentum * v[j] + gr[j];
      }
      omega.axpy(-cfg.learning_rate, velocity);
    }
  }

  const Tensor logits = kernels::matmul(test_emb, omega.at(LinearClassifier::kWeight));
  const Tensor& bias = omega.at(LinearClassifier::kBias);
  const auto truth = labels_of(test_ids);
  std::size_t correct = 0;
  std::vector<double> row(bias.size());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = logits(i, c) + bias[c];
    if (argmax(row) == truth[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test_ids.size());
}

// Meta-test on the novel split of a second, independently generated domain.
inline EvalReport cross_domain_eval(const FeatureExtractor& fx, const ParamStore& theta,
                                    const GeneratorConfig& train_domain, const GeneratorConfig& test_domain,
                                    EpisodeShape shape, std::size_t tasks, Metric m, std::uint64_t seed) {
  if (train_domain.dim != test_domain.dim || test_domain.dim != fx.input_dim()) {
    throw ConfigError("cross-domain evaluation needs matching input dimensions");
  }
  const Dataset foreign = generate_synthetic(test_domain);
  return meta_test(fx, theta, foreign, Split::novel, shape, tasks, m, seed);
}

}  // namespace boostmt
