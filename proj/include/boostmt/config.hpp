#pragma once

// Experiment configuration: a JSON document parsed strictly (unknown keys and
// wrong types are errors). See README.md for the full schema.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "boostmt/data.hpp"
#include "boostmt/errors.hpp"
#include "boostmt/eval.hpp"
#include "boostmt/model.hpp"
#include "boostmt/rng.hpp"
#include "boostmt/trainers.hpp"

namespace boostmt {

using json = nlohmann::ordered_json;

struct EvalSettings {
  EpisodeShape shape{5, 5, 15};
  Metric metric{MetricKind::cosine};
  std::size_t validate_every = 1;
  std::size_t val_tasks = 100;
  std::size_t test_tasks = 300;
  std::size_t threads = 1;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::optional<GeneratorConfig> generator;
  std::optional<std::string> data_path;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t embedding = 64;
  Method method = Method::boost_mt;
  BoostMTConfig train;
  BoostMTConfig pretrain;  // stage one of meta-baseline
  EvalSettings eval;
  std::optional<ProbeConfig> probe;
  std::optional<GeneratorConfig> cross_domain;
  std::vector<std::uint64_t> seeds;
  json source;
};

namespace detail {

// One JSON object whose keys must all be consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!j_.contains(key)) return fallback;
    return require<T>(key);
  }

  template <typename T>
  T require(const std::string& key) {
    used_.insert(key);
    if (!j_.contains(key)) throw ConfigError(where() + ": missing required key '" + key + "'");
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw type_error(key, "a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
        throw type_error(key, "a non-negative integer");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw type_error(key, "a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw type_error(key, "a string");
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>> ||
                         std::is_same_v<T, std::vector<std::uint64_t>>) {
      if (!v.is_array()) throw type_error(key, "an array of non-negative integers");
      for (const auto& e : v)
        if (!e.is_number_unsigned()) throw type_error(key, "an array of non-negative integers");
    }
    return v.get<T>();
  }

  Section child(const std::string& key) {
    used_.insert(key);
    return Section(j_.at(key), path_ + "." + key);
  }

  // Rejects any key that was never read.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(where() + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : "config" + path_; }
  ConfigError type_error(const std::string& key, const char* what) const {
    return ConfigError(where() + "." + key + " must be " + what);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline GeneratorConfig parse_generator(Section s, std::uint64_t default_seed) {
  GeneratorConfig g;
  g.dim = s.get("dim", g.dim);
  g.superclasses = s.get("superclasses", g.superclasses);
  g.classes_per_superclass = s.get("classes_per_superclass", g.classes_per_superclass);
  g.samples_per_class = s.get("samples_per_class", g.samples_per_class);
  g.sigma_super = s.get("sigma_super", g.sigma_super);
  g.sigma_class = s.get("sigma_class", g.sigma_class);
  g.sigma_sample = s.get("sigma_sample", g.sigma_sample);
  g.base_classes = s.get("base_classes", g.base_classes);
  g.val_classes = s.get("val_classes", g.val_classes);
  g.novel_classes = s.get("novel_classes", g.novel_classes);
  g.seed = s.get<std::uint64_t>("seed", default_seed);
  s.finish();
  try {
    g.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  return g;
}

inline EpisodeShape parse_shape(Section& s, EpisodeShape d) {
  d.ways = s.get("n_way", d.ways);
  d.shots = s.get("k_shot", d.shots);
  d.queries = s.get("query", d.queries);
  if (d.ways < 2 || d.shots == 0 || d.queries == 0) throw ConfigError("episode shape needs n_way >= 2, k_shot >= 1, query >= 1");
  return d;
}

inline Metric parse_metric_fields(Section& s, Metric d) {
  const MetricKind kind = parse_metric(s.get<std::string>("metric", to_string(d.kind)));
  const double tau = s.get("tau", d.tau);
  return Metric(kind, tau);
}

inline BoostMTConfig parse_train(Section s, BoostMTConfig c) {
  c.alpha = s.get("alpha", c.alpha);
  c.beta = s.get("beta", c.beta);
  c.epochs = s.get("epochs", c.epochs);
  c.batch_size = s.get("batch_size", c.batch_size);
  c.inner_loops = s.get("inner_loops", c.inner_loops);
  c.shape = parse_shape(s, c.shape);
  c.metric = parse_metric_fields(s, c.metric);
  c.momentum = s.get("momentum", c.momentum);
  c.decay_epochs = s.get("decay_epochs", c.decay_epochs);
  c.decay_factor = s.get("decay_factor", c.decay_factor);
  c.update_extractor_in_outer = s.get("update_extractor_in_outer", c.update_extractor_in_outer);
  c.update_classifier_in_inner = s.get("update_classifier_in_inner", c.update_classifier_in_inner);
  c.disable_inner = s.get("disable_inner", c.disable_inner);
  c.disable_outer = s.get("disable_outer", c.disable_outer);
  c.outer_grad_at_updated_classifier = s.get("outer_grad_at_updated_classifier", c.outer_grad_at_updated_classifier);
  s.finish();
  c.validate();
  return c;
}

}  // namespace detail

inline ExperimentConfig parse_experiment(const json& j) {
  ExperimentConfig c;
  c.source = j;
  detail::Section root(j, "");
  c.seed = root.require<std::uint64_t>("seed");

  {
    detail::Section data = root.child("data");
    const bool gen = data.has("generator"), path = data.has("path");
    if (gen == path) throw ConfigError("config.data needs exactly one of 'generator' or 'path'");
    if (gen) c.generator = detail::parse_generator(data.child("generator"), derive_seed(c.seed, "data"));
    if (path) c.data_path = data.require<std::string>("path");
    data.finish();
  }

  if (root.has("model")) {
    detail::Section m = root.child("model");
    c.hidden = m.get("hidden", c.hidden);
    c.embedding = m.get("embedding", c.embedding);
    m.finish();
    if (c.hidden.empty() || c.embedding == 0) throw ConfigError("config.model needs a hidden layer and embedding >= 1");
    for (std::size_t w : c.hidden)
      if (w == 0) throw ConfigError("config.model.hidden widths must be >= 1");
  }

  c.method = parse_method(root.get<std::string>("method", to_string(c.method)));
  c.train = root.has("train") ? detail::parse_train(root.child("train"), c.train) : c.train;
  c.pretrain = root.has("pretrain") ? detail::parse_train(root.child("pretrain"), c.train) : c.train;

  if (root.has("eval")) {
    detail::Section e = root.child("eval");
    c.eval.shape = detail::parse_shape(e, c.eval.shape);
    c.eval.metric = detail::parse_metric_fields(e, c.eval.metric);
    c.eval.validate_every = e.get("validate_every", c.eval.validate_every);
    c.eval.val_tasks = e.get("val_tasks", c.eval.val_tasks);
    c.eval.test_tasks = e.get("test_tasks", c.eval.test_tasks);
    c.eval.threads = e.get("threads", c.eval.threads);
    e.finish();
    if (c.eval.val_tasks < 2 || c.eval.test_tasks < 2) throw ConfigError("config.eval task counts must be >= 2");
    if (c.eval.validate_every == 0) throw ConfigError("config.eval.validate_every must be >= 1");
  }

  if (root.has("probe")) {
    detail::Section p = root.child("probe");
    ProbeConfig pc;
    pc.epochs = p.get("epochs", pc.epochs);
    pc.learning_rate = p.get("learning_rate", pc.learning_rate);
    pc.momentum = p.get("momentum", pc.momentum);
    pc.batch_size = p.get("batch_size", pc.batch_size);
    pc.holdout_fraction = p.get("holdout_fraction", pc.holdout_fraction);
    p.finish();
    if (!(pc.holdout_fraction > 0.0 && pc.holdout_fraction < 1.0)) throw ConfigError("config.probe.holdout_fraction must lie in (0, 1)");
    pc.seed = derive_seed(c.seed, "probe");
    c.probe = pc;
  }

  if (root.has("cross_domain")) {
    c.cross_domain = detail::parse_generator(root.child("cross_domain"), derive_seed(c.seed, "cross_domain"));
  }

  c.seeds = root.get("seeds", std::vector<std::uint64_t>{});
  root.finish();

  // Meta-Baseline's first stage shares the "train" stream with plain
  // pre-training so the two are the same run.
  c.train.seed = derive_seed(c.seed, "train");
  c.pretrain.seed = c.train.seed;
  if (c.method == Method::meta_baseline) c.train.seed = derive_seed(c.seed, "meta");
  return c;
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

inline ExperimentConfig load_experiment(const std::string& path) { return parse_experiment(read_json_file(path)); }

// Same experiment under another global seed. Generator seeds that were not
// pinned explicitly follow the new seed.
inline ExperimentConfig with_seed(const ExperimentConfig& c, std::uint64_t seed) {
  json j = c.source;
  j["seed"] = seed;
  return parse_experiment(j);
}

}  // namespace boostmt
