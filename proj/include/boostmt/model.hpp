#pragma once

// MLP feature extractor, linear classification head, episode metrics and the
// two training losses (batch cross-entropy and prototype episode loss).
//
// Parameter naming: extractor layer L has "theta.L.w" [in×out] and
// "theta.L.b" [out]; the head has "omega.w" [d_emb×C] and "omega.b" [C].

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "boostmt/autodiff.hpp"
#include "boostmt/episodes.hpp"
#include "boostmt/errors.hpp"
#include "boostmt/rng.hpp"
#include "boostmt/tensor.hpp"

namespace boostmt {

enum class MetricKind { cosine, euclidean, manhattan, chebyshev, cosine_plus_euclidean };

inline const char* to_string(MetricKind m) {
  switch (m) {
    case MetricKind::cosine: return "cosine";
    case MetricKind::euclidean: return "euclidean";
    case MetricKind::manhattan: return "manhattan";
    case MetricKind::chebyshev: return "chebyshev";
    case MetricKind::cosine_plus_euclidean: return "cosine_plus_euclidean";
  }
  return "?";
}

inline MetricKind parse_metric(const std::string& s) {
  for (MetricKind m : {MetricKind::cosine, MetricKind::euclidean, MetricKind::manhattan,
                       MetricKind::chebyshev, MetricKind::cosine_plus_euclidean}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown metric '" + s + "'");
}

inline constexpr MetricKind kAllMetrics[] = {MetricKind::cosine, MetricKind::euclidean, MetricKind::manhattan,
                                             MetricKind::chebyshev, MetricKind::cosine_plus_euclidean};

// Similarity used inside episodes. Distances are negated so that a larger
// score always means "closer"; every score is multiplied by tau.
struct Metric {
  MetricKind kind = MetricKind::cosine;
  double tau = 1.0;

  Metric() = default;
  Metric(MetricKind k, double t = 1.0) : kind(k), tau(t) {
    if (!(tau > 0.0)) throw ConfigError("metric scale tau must be positive");
  }
};

class FeatureExtractor {
 public:
  FeatureExtractor() = default;

  // widths = {d_in, hidden..., d_emb}. Hidden layers use relu; the embedding
  // layer is affine.
  explicit FeatureExtractor(std::vector<std::size_t> widths) : widths_(std::move(widths)) {
    if (widths_.size() < 3) throw ContractError("feature extractor needs at least one hidden layer");
    for (std::size_t w : widths_)
      if (w == 0) throw ContractError("layer widths must be >= 1");
  }

  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t input_dim() const { return widths_.front(); }
  std::size_t embedding_dim() const { return widths_.back(); }
  std::size_t layers() const { return widths_.size() - 1; }

  static std::string weight_name(std::size_t layer) { return "theta." + std::to_string(layer) + ".w"; }
  static std::string bias_name(std::size_t layer) { return "theta." + std::to_string(layer) + ".b"; }

  // Weights ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
  ParamStore init(Rng& rng) const {
    ParamStore p;
    for (std::size_t l = 0; l < layers(); ++l) {
      const std::size_t in = widths_[l], out = widths_[l + 1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      Tensor w({in, out});
      for (double& v : w.data()) v = rng.uniform(-bound, bound);
      p.insert(weight_name(l), std::move(w));
      p.insert(bias_name(l), Tensor({out}));
    }
    return p;
  }

  friend bool operator==(const FeatureExtractor&, const FeatureExtractor&) = default;

 private:
  std::vector<std::size_t> widths_;
};

class LinearClassifier {
 public:
  LinearClassifier() = default;
  LinearClassifier(std::size_t input_dim, std::size_t classes) : in_(input_dim), classes_(classes) {
    if (in_ == 0 || classes_ == 0) throw ContractError("classifier dimensions must be >= 1");
  }

  std::size_t input_dim() const { return in_; }
  std::size_t classes() const { return classes_; }

  static constexpr const char* kWeight = "omega.w";
  static constexpr const char* kBias = "omega.b";

  ParamStore init(Rng& rng) const {
    ParamStore p;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    Tensor w({in_, classes_});
    for (double& v : w.data()) v = rng.uniform(-bound, bound);
    p.insert(kWeight, std::move(w));
    p.insert(kBias, Tensor({classes_}));
    return p;
  }

  ParamStore zeros() const {
    ParamStore p;
    p.insert(kWeight, Tensor({in_, classes_}));
    p.insert(kBias, Tensor({classes_}));
    return p;
  }

  friend bool operator==(const LinearClassifier&, const LinearClassifier&) = default;

 private:
  std::size_t in_ = 0;
  std::size_t classes_ = 0;
};

// Graph handles for a bound ParamStore, in store order.
class BoundParams {
 public:
  BoundParams(Graph& g, const ParamStore& p, bool trainable) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      names_.push_back(p.name(i));
      ids_.push_back(trainable ? g.parameter(p.name(i), p.value(i)) : g.constant(p.value(i)));
    }
  }

  NodeId operator[](const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return ids_[i];
    throw ContractError("parameter '" + name + "' not bound");
  }

 private:
  std::vector<std::string> names_;
  std::vector<NodeId> ids_;
};

// ---------------------------------------------------------------------------
// Graph path
// ---------------------------------------------------------------------------

inline NodeId embed(Graph& g, const FeatureExtractor& fx, const BoundParams& theta, NodeId x) {
  const Tensor& xv = g.value(x);
  if (xv.rank() != 2 || xv.cols() != fx.input_dim()) {
    throw DimensionError("embed: input " + shape_string(xv.shape()) + " does not have " +
                         std::to_string(fx.input_dim()) + " columns");
  }
  NodeId h = x;
  for (std::size_t l = 0; l < fx.layers(); ++l) {
    h = g.bias_add(g.matmul(h, theta[FeatureExtractor::weight_name(l)]), theta[FeatureExtractor::bias_name(l)]);
    if (l + 1 < fx.layers()) h = g.relu(h);
  }
  return h;
}

// [N×NK] matrix whose row n averages the rows labeled n. Each label in 0..N-1
// must appear the same number of times.
inline Tensor prototype_averager(std::span<const std::size_t> labels, std::size_t ways) {
  if (ways == 0 || labels.empty()) throw EpisodeShapeError("episode has no classes");
  std::vector<std::size_t> counts(ways, 0);
  for (std::size_t y : labels) {
    if (y >= ways) throw EpisodeShapeError("label " + std::to_string(y) + " outside 0.." + std::to_string(ways - 1));
    ++counts[y];
  }
  for (std::size_t n = 0; n < ways; ++n) {
    if (counts[n] == 0) throw EpisodeShapeError("class " + std::to_string(n) + " missing from support set");
    if (counts[n] != counts[0]) throw EpisodeShapeError("classes have unequal shot counts");
  }
  Tensor a({ways, labels.size()});
  const double w = 1.0 / static_cast<double>(counts[0]);
  for (std::size_t i = 0; i < labels.size(); ++i) a(labels[i], i) = w;
  return a;
}

inline NodeId prototypes(Graph& g, NodeId embeddings, std::span<const std::size_t> labels, std::size_t ways) {
  return g.matmul(g.constant(prototype_averager(labels, ways)), embeddings);
}

// queries [M×d], protos [N×d] -> scores [M×N]
inline NodeId metric_scores(Graph& g, NodeId queries, NodeId protos, Metric m) {
  const Tensor& q = g.value(queries);
  const Tensor& c = g.value(protos);
  if (q.rank() != 2 || c.rank() != 2 || q.cols() != c.cols()) {
    throw DimensionError("metric_scores: queries " + shape_string(q.shape()) + " vs prototypes " +
                         shape_string(c.shape()));
  }
  const std::size_t M = q.rows(), N = c.rows();

  auto cosine = [&] {
    return g.matmul(g.l2_normalize(queries), g.transpose(g.l2_normalize(protos)));
  };
  auto pairwise = [&] {
    std::vector<std::size_t> qi(M * N), ci(M * N);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        qi[i * N + j] = i;
        ci[i * N + j] = j;
      }
    return g.sub(g.gather_rows(queries, std::move(qi)), g.gather_rows(protos, std::move(ci)));
  };
  auto euclidean = [&](NodeId diff) {
    return g.reshape(g.sqrt(g.sum_rows(g.mul(diff, diff))), {M, N});
  };

  NodeId s = 0;
  switch (m.kind) {
    case MetricKind::cosine:
      s = cosine();
      break;
    case MetricKind::euclidean:
      s = g.neg(euclidean(pairwise()));
      break;
    case MetricKind::manhattan:
      s = g.neg(g.reshape(g.sum_rows(g.abs(pairwise())), {M, N}));
      break;
    case MetricKind::chebyshev:
      s = g.neg(g.reshape(g.max_rows(g.abs(pairwise())), {M, N}));
      break;
    case MetricKind::cosine_plus_euclidean:
      s = g.sub(cosine(), euclidean(pairwise()));
      break;
  }
  return m.tau == 1.0 ? s : g.scale(s, m.tau);
}

// Mean cross-entropy of the classification head over a batch.
inline NodeId classification_loss(Graph& g, const FeatureExtractor& fx, const BoundParams& theta,
                                  const LinearClassifier& clf, const BoundParams& omega, const Tensor& x,
                                  const std::vector<std::size_t>& y) {
  if (x.rows() == 0 || y.empty()) throw ContractError("classification_loss: empty batch");
  if (y.size() != x.rows()) throw DimensionError("classification_loss: one label per row required");
  for (std::size_t label : y) {
    if (label >= clf.classes()) {
      throw ContractError("classification_loss: label " + std::to_string(label) + " >= class count " +
                          std::to_string(clf.classes()));
    }
  }
  NodeId emb = embed(g, fx, theta, g.constant(x));
  NodeId logits = g.bias_add(g.matmul(emb, omega[LinearClassifier::kWeight]), omega[LinearClassifier::kBias]);
  return g.neg(g.mean(g.pick(g.log_softmax(logits), y)));
}

// Mean query cross-entropy of the prototype classifier built from the support set.
inline NodeId episode_loss(Graph& g, const FeatureExtractor& fx, const BoundParams& theta, const Task& task,
                           Metric m) {
  if (task.query_y.empty() || task.query_y.size() != task.query_x.rows()) {
    throw EpisodeShapeError("episode has no well-formed query set");
  }
  const std::size_t ways = task.class_map.empty() ? task.shape.ways : task.class_map.size();
  NodeId support = embed(g, fx, theta, g.constant(task.support_x));
  NodeId query = embed(g, fx, theta, g.constant(task.query_x));
  NodeId protos = prototypes(g, support, task.support_y, ways);
  NodeId scores = metric_scores(g, query, protos, m);
  return g.neg(g.mean(g.pick(g.log_softmax(scores), task.query_y)));
}

struct LossGrad {
  double loss = 0.0;
  GradientMap grad;
};

// Gradients with respect to both theta and omega in one backward pass.
inline LossGrad classification_loss_grad(const FeatureExtractor& fx, const ParamStore& theta,
                                         const LinearClassifier& clf, const ParamStore& omega, const Tensor& x,
                                         const std::vector<std::size_t>& y) {
  Graph g;
  BoundParams t(g, theta, true), w(g, omega, true);
  NodeId root = classification_loss(g, fx, t, clf, w, x, y);
  LossGrad r;
  r.loss = g.value(root).item();
  r.grad = g.backward(root);
  return r;
}

inline LossGrad episode_loss_grad(const FeatureExtractor& fx, const ParamStore& theta, const Task& task,
                                  Metric m) {
  Graph g;
  BoundParams t(g, theta, true);
  NodeId root = episode_loss(g, fx, t, task, m);
  LossGrad r;
  r.loss = g.value(root).item();
  r.grad = g.backward(root);
  return r;
}

// Splits a combined gradient into the entries whose names start with prefix.
inline GradientMap select_prefix(const GradientMap& all, const std::string& prefix) {
  GradientMap out;
  for (std::size_t i = 0; i < all.size(); ++i)
    if (all.name(i).rfind(prefix, 0) == 0) out.insert(all.name(i), all.value(i));
  return out;
}

// ---------------------------------------------------------------------------
// Value path (no tape), used for evaluation.
// ---------------------------------------------------------------------------

inline Tensor embed(const FeatureExtractor& fx, const ParamStore& theta, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != fx.input_dim()) {
    throw DimensionError("embed: input " + shape_string(x.shape()) + " does not have " +
                         std::to_string(fx.input_dim()) + " columns");
  }
  Tensor h = x;
  for (std::size_t l = 0; l < fx.layers(); ++l) {
    h = kernels::matmul(h, theta.at(FeatureExtractor::weight_name(l)));
    const Tensor& b = theta.at(FeatureExtractor::bias_name(l));
    const bool hidden = l + 1 < fx.layers();
    for (std::size_t r = 0; r < h.rows(); ++r) {
      auto row = h.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) {
        row[c] += b[c];
        if (hidden && !(row[c] > 0.0)) row[c] = 0.0;
      }
    }
  }
  return h;
}

// Row n = mean of the embeddings labeled n.
inline Tensor prototypes(const Tensor& embeddings, std::span<const std::size_t> labels, std::size_t ways) {
  if (labels.size() != embeddings.rows()) throw EpisodeShapeError("prototypes: one label per embedding required");
  return kernels::matmul(prototype_averager(labels, ways), embeddings);
}

// Scores of one query against every prototype row.
inline Tensor metric_scores(std::span<const double> q, const Tensor& protos, Metric m, double eps = 1e-12) {
  if (protos.rank() != 2 || protos.cols() != q.size()) {
    throw DimensionError("metric_scores: query of length " + std::to_string(q.size()) + " vs prototypes " +
                         shape_string(protos.shape()));
  }
  const std::size_t N = protos.rows();
  Tensor s({N});
  const double qn = kernels::norm2(q);
  const bool need_cos = m.kind == MetricKind::cosine || m.kind == MetricKind::cosine_plus_euclidean;
  if (need_cos && !(qn > eps)) throw DegenerateVectorError("metric_scores: query has zero norm");
  for (std::size_t n = 0; n < N; ++n) {
    auto c = protos.row(n);
    double cos = 0.0, l2 = 0.0, l1 = 0.0, linf = 0.0;
    if (need_cos) {
      const double cn = kernels::norm2(c);
      if (!(cn > eps)) throw DegenerateVectorError("metric_scores: prototype " + std::to_string(n) + " has zero norm");
      cos = kernels::dot(q, c) / (qn * cn);
    }
    for (std::size_t d = 0; d < q.size(); ++d) {
      const double diff = std::abs(q[d] - c[d]);
      l2 += diff * diff;
      l1 += diff;
      linf = std::max(linf, diff);
    }
    l2 = std::sqrt(l2);
    double v = 0.0;
    switch (m.kind) {
      case MetricKind::cosine: v = cos; break;
      case MetricKind::euclidean: v = -l2; break;
      case MetricKind::manhattan: v = -l1; break;
      case MetricKind::chebyshev: v = -linf; break;
      case MetricKind::cosine_plus_euclidean: v = cos - l2; break;
    }
    s[n] = m.tau * v;
  }
  return s;
}

// Softmax over one score vector, max-shifted.
inline Tensor episode_probabilities(const Tensor& scores) {
  Tensor p = scores;
  const double mx = *std::max_element(p.data().begin(), p.data().end());
  double sum = 0.0;
  for (double& v : p.data()) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : p.data()) v /= sum;
  return p;
}

inline double cross_entropy(const Tensor& probabilities, std::size_t true_class) {
  if (true_class >= probabilities.size()) {
    throw ContractError("cross_entropy: class " + std::to_string(true_class) + " out of range " +
                        std::to_string(probabilities.size()));
  }
  return -std::log(probabilities[true_class]);
}

// Index of the first maximum.
inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// ---------------------------------------------------------------------------
// Trained model and its file format.
//
//   boostmt-model 1
//   widths <d_in> <h_1> ... <d_emb>
//   classes <C>
//   param <name> <dim_1> [<dim_2>]
//   <v_1>,<v_2>,...                  one line per parameter, 17 significant digits
// ---------------------------------------------------------------------------

struct Model {
  FeatureExtractor extractor;
  LinearClassifier classifier;
  ParamStore theta;
  ParamStore omega;

  friend bool operator==(const Model&, const Model&) = default;
};

inline Model init_model(const FeatureExtractor& fx, std::size_t classes, Rng& rng) {
  Model m{fx, LinearClassifier(fx.embedding_dim(), classes), {}, {}};
  m.theta = fx.init(rng);
  m.omega = m.classifier.init(rng);
  return m;
}

inline void save_model(const Model& m, std::ostream& os) {
  os << "boostmt-model 1\nwidths";
  for (std::size_t w : m.extractor.widths()) os << ' ' << w;
  os << "\nclasses " << m.classifier.classes() << "\n";
  os << std::setprecision(17);
  for (const ParamStore* store : {&m.theta, &m.omega}) {
    for (std::size_t i = 0; i < store->size(); ++i) {
      const Tensor& t = store->value(i);
      os << "param " << store->name(i);
      for (std::size_t d : t.shape()) os << ' ' << d;
      os << "\n";
      for (std::size_t j = 0; j < t.size(); ++j) os << (j ? "," : "") << t[j];
      os << "\n";
    }
  }
}

inline void save_model(const Model& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write model to " + path);
  save_model(m, os);
}

inline Model load_model(std::istream& is) {
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> void {
    throw ParseError("model line " + std::to_string(line_no) + ": " + msg);
  };
  auto next = [&](const char* what) {
    std::string line;
    if (!std::getline(is, line)) fail(std::string("unexpected end of file, expecting ") + what);
    ++line_no;
    return line;
  };
  if (next("header") != "boostmt-model 1") fail("missing 'boostmt-model 1' header");

  std::vector<std::size_t> widths;
  {
    std::istringstream ls(next("widths"));
    std::string key;
    ls >> key;
    if (key != "widths") fail("expected 'widths'");
    std::size_t w;
    while (ls >> w) widths.push_back(w);
    if (!ls.eof()) fail("bad width list");
  }
  std::size_t classes = 0;
  {
    std::istringstream ls(next("classes"));
    std::string key;
    if (!(ls >> key >> classes) || key != "classes") fail("expected 'classes <C>'");
  }
  Model m;
  try {
    m.extractor = FeatureExtractor(widths);
    m.classifier = LinearClassifier(m.extractor.embedding_dim(), classes);
  } catch (const ContractError& e) {
    fail(e.what());
  }

  Rng unused(0);
  const ParamStore theta_layout = m.extractor.init(unused);
  const ParamStore omega_layout = m.classifier.zeros();
  for (const ParamStore* layout : {&theta_layout, &omega_layout}) {
    ParamStore& dst = layout == &theta_layout ? m.theta : m.omega;
    for (std::size_t i = 0; i < layout->size(); ++i) {
      std::istringstream ls(next("param"));
      std::string key, name;
      ls >> key >> name;
      if (key != "param" || name != layout->name(i)) fail("expected 'param " + layout->name(i) + "'");
      Shape shape;
      std::size_t d;
      while (ls >> d) shape.push_back(d);
      if (shape != layout->value(i).shape()) fail("shape mismatch for " + name);
      std::vector<double> values;
      std::istringstream vs(next("values"));
      std::string tok;
      while (std::getline(vs, tok, ',')) {
        std::size_t pos = 0;
        double v = 0.0;
        try {
          v = std::stod(tok, &pos);
        } catch (const std::exception&) {
          fail("bad real '" + tok + "'");
        }
        if (pos != tok.size()) fail("bad real '" + tok + "'");
        values.push_back(v);
      }
      if (values.size() != shape_size(shape)) fail("wrong value count for " + name);
      dst.insert(name, Tensor(shape, std::move(values)));
    }
  }
  return m;
}

inline Model load_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open model " + path);
  return load_model(is);
}

}  // namespace boostmt
