#pragma once

// Experiment pipeline (data -> train -> evaluate -> persist) and the
// method/variant comparison grid.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "boostmt/config.hpp"
#include "boostmt/data.hpp"
#include "boostmt/eval.hpp"
#include "boostmt/metrics.hpp"
#include "boostmt/model.hpp"
#include "boostmt/trainers.hpp"

namespace boostmt {

inline constexpr const char* kVersion = "boostmt 1.0.0";

inline Dataset load_or_generate(const ExperimentConfig& c) {
  if (c.data_path) return load_dataset(*c.data_path);
  return generate_synthetic(*c.generator);
}

inline Architecture make_architecture(const ExperimentConfig& c, const Dataset& ds) {
  std::vector<std::size_t> widths{ds.dim()};
  widths.insert(widths.end(), c.hidden.begin(), c.hidden.end());
  widths.push_back(c.embedding);
  FeatureExtractor fx(widths);
  return {fx, LinearClassifier(fx.embedding_dim(), ds.classes(Split::base).size())};
}

inline json report_json(const EvalReport& r) {
  json j;
  j["task_count"] = r.task_count;
  j["mean"] = r.mean;
  j["half_width95"] = r.half_width95;
  j["n_way"] = r.shape.ways;
  j["k_shot"] = r.shape.shots;
  j["query"] = r.shape.queries;
  j["metric"] = to_string(r.metric.kind);
  j["tau"] = r.metric.tau;
  j["split"] = to_string(r.split);
  j["seed"] = r.seed;
  return j;
}

struct RunOutcome {
  TrainResult train;
  EvalReport test;
  std::optional<double> probe_accuracy;
  std::optional<EvalReport> cross_domain;
  RunRecord record;
  json summary;
};

// Streams: validation "val", test "test", probe "probe"; training streams are
// set on the parsed config.
inline RunOutcome run_experiment(const ExperimentConfig& c, const Dataset& ds, std::ostream* metrics = nullptr) {
  const Architecture arch = make_architecture(c, ds);
  ValidationConfig v;
  v.shape = c.eval.shape;
  v.tasks = c.eval.val_tasks;
  v.metric = c.eval.metric;
  v.seed = derive_seed(c.seed, "val");
  v.every = c.eval.validate_every;
  v.probe = c.probe;

  RunOutcome out;
  std::size_t written = 0;
  if (metrics) RunRecord::write_header(*metrics);
  EpochHook hook;
  if (metrics) {
    hook = [&](const RunRecord& rec) {
      written = rec.write_rows(*metrics, written);
      metrics->flush();
    };
  }
  out.train = train_method(c.method, arch, ds, c.train, c.pretrain, v, out.record, hook);

  const Model& m = out.train.model;
  const Metric test_metric = c.method == Method::meta_baseline ? Metric(MetricKind::cosine, c.eval.metric.tau) : c.eval.metric;
  out.test = meta_test(m.extractor, m.theta, ds, Split::novel, c.eval.shape, c.eval.test_tasks, test_metric,
                       derive_seed(c.seed, "test"), c.eval.threads);
  if (c.probe) out.probe_accuracy = conventional_probe(m.extractor, m.theta, ds, *c.probe);
  if (c.cross_domain) {
    if (!c.generator) throw ConfigError("cross_domain evaluation needs a generated training domain");
    out.cross_domain = cross_domain_eval(m.extractor, m.theta, *c.generator, *c.cross_domain, c.eval.shape,
                                         c.eval.test_tasks, test_metric, derive_seed(c.seed, "cross_test"));
  }

  json& s = out.summary;
  s["version"] = kVersion;
  s["method"] = to_string(c.method);
  s["seed"] = c.seed;
  s["epochs_completed"] = out.train.final_state.epoch;
  s["best_val_accuracy"] = out.train.best_val_accuracy;
  s["best_epoch"] = out.train.best_epoch;
  s["best_phase"] = out.train.best_phase;
  s["test"] = report_json(out.test);
  if (out.probe_accuracy) s["probe_accuracy"] = *out.probe_accuracy;
  if (out.cross_domain) s["cross_domain"] = report_json(*out.cross_domain);
  s["config"] = c.source;
  return out;
}

// Runs the pipeline and writes metrics.csv, summary.json and model.txt into dir.
inline RunOutcome run_to_directory(const ExperimentConfig& c, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const Dataset ds = load_or_generate(c);
  std::ofstream metrics(std::filesystem::path(dir) / "metrics.csv");
  if (!metrics) throw std::runtime_error("cannot write metrics to " + dir);
  RunOutcome out = run_experiment(c, ds, &metrics);
  std::ofstream summary(std::filesystem::path(dir) / "summary.json");
  summary << out.summary.dump(2) << "\n";
  save_model(out.train.model, (std::filesystem::path(dir) / "model.txt").string());
  return out;
}

// ---------------------------------------------------------------------------
// Comparison grid
//
// Spec syntax: "key=v1,v2;key2=w1,w2" (cartesian product, rows in row-major
// order). Keys: method, variant (full|f|c|wo-inner|wo-outer), T or
// inner_loops, metric, epochs, alpha, beta, batch_size, k_shot, or any
// dotted config path such as train.momentum.
// ---------------------------------------------------------------------------

struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

inline std::vector<GridAxis> parse_grid(const std::string& spec) {
  std::vector<GridAxis> axes;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ';')) {
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == part.size()) {
      throw ConfigError("grid axis '" + part + "' must look like key=v1,v2");
    }
    GridAxis a{part.substr(0, eq), {}};
    std::stringstream vs(part.substr(eq + 1));
    std::string v;
    while (std::getline(vs, v, ','))
      if (!v.empty()) a.values.push_back(v);
    if (a.values.empty()) throw ConfigError("grid axis '" + a.key + "' has no values");
    axes.push_back(std::move(a));
  }
  if (axes.empty()) throw ConfigError("empty grid");
  return axes;
}

namespace detail {

inline json grid_literal(const std::string& v) {
  try {
    json j = json::parse(v);
    if (j.is_number() || j.is_boolean()) return j;
  } catch (const json::parse_error&) {
  }
  return v;
}

inline void set_path(json& j, const std::string& dotted, json value) {
  json* cur = &j;
  std::stringstream ss(dotted);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!cur->contains(parts[i])) (*cur)[parts[i]] = json::object();
    cur = &(*cur)[parts[i]];
  }
  (*cur)[parts.back()] = std::move(value);
}

inline void apply_grid_value(json& j, const std::string& key, const std::string& value) {
  if (key == "method") {
    j["method"] = value;
  } else if (key == "variant") {
    j["method"] = "boost-mt";
    if (!j.contains("train")) j["train"] = json::object();
    json& t = j["train"];
    t["update_extractor_in_outer"] = value == "f";
    t["update_classifier_in_inner"] = value == "c";
    t["disable_inner"] = value == "wo-inner";
    t["disable_outer"] = value == "wo-outer";
    if (value != "full" && value != "f" && value != "c" && value != "wo-inner" && value != "wo-outer") {
      throw ConfigError("unknown variant '" + value + "'");
    }
  } else if (key == "T" || key == "inner_loops") {
    set_path(j, "train.inner_loops", grid_literal(value));
  } else if (key == "metric" || key == "epochs" || key == "alpha" || key == "beta" || key == "batch_size" ||
             key == "k_shot") {
    set_path(j, "train." + key, grid_literal(value));
  } else if (key.find('.') != std::string::npos) {
    set_path(j, key, grid_literal(value));
  } else {
    throw ConfigError("unknown grid key '" + key + "'");
  }
}

}  // namespace detail

struct CompareRow {
  std::vector<std::string> labels;  // one per grid axis
  std::vector<double> seed_means;
  std::vector<double> seed_half_widths;
  std::size_t tasks = 0;
  double mean = 0.0;        // over all tasks of all seeds
  double half_width95 = 0.0;
  double best_val_mean = 0.0;
};

struct CompareTable {
  std::vector<std::string> keys;
  std::vector<std::uint64_t> seeds;
  std::vector<CompareRow> rows;
};

// Every grid point is trained and meta-tested once per seed; the task
// accuracies of all seeds are pooled into one interval.
inline CompareTable run_compare(const ExperimentConfig& base, const std::vector<GridAxis>& axes,
                                std::ostream* log = nullptr) {
  CompareTable table;
  for (const auto& a : axes) table.keys.push_back(a.key);
  table.seeds = base.seeds.empty() ? std::vector<std::uint64_t>{base.seed} : base.seeds;

  std::size_t points = 1;
  for (const auto& a : axes) points *= a.values.size();
  std::map<std::string, Dataset> datasets;  // keyed by data section + seed

  for (std::size_t p = 0; p < points; ++p) {
    CompareRow row;
    json j = base.source;
    std::size_t rest = p;
    std::vector<std::size_t> pick(axes.size());
    for (std::size_t a = axes.size(); a-- > 0;) {
      pick[a] = rest % axes[a].values.size();
      rest /= axes[a].values.size();
    }
    for (std::size_t a = 0; a < axes.size(); ++a) {
      detail::apply_grid_value(j, axes[a].key, axes[a].values[pick[a]]);
      row.labels.push_back(axes[a].values[pick[a]]);
    }

    std::vector<double> pooled;
    double val_sum = 0.0;
    for (std::uint64_t seed : table.seeds) {
      j["seed"] = seed;
      const ExperimentConfig c = parse_experiment(j);
      const std::string key = j["data"].dump() + "#" + std::to_string(seed);
      auto it = datasets.find(key);
      if (it == datasets.end()) it = datasets.emplace(key, load_or_generate(c)).first;
      const RunOutcome r = run_experiment(c, it->second);
      row.seed_means.push_back(r.test.mean);
      row.seed_half_widths.push_back(r.test.half_width95);
      pooled.insert(pooled.end(), r.test.accuracies.begin(), r.test.accuracies.end());
      val_sum += r.train.best_val_accuracy;
      if (log) {
        *log << "[compare]";
        for (std::size_t a = 0; a < axes.size(); ++a) *log << ' ' << axes[a].key << '=' << row.labels[a];
        *log << " seed=" << seed << " test=" << r.test.mean << " +- " << r.test.half_width95 << "\n";
      }
    }
    row.tasks = pooled.size();
    const Interval ci = confidence_interval(pooled);
    row.mean = ci.mean;
    row.half_width95 = ci.half_width;
    row.best_val_mean = val_sum / static_cast<double>(table.seeds.size());
    table.rows.push_back(std::move(row));
  }
  return table;
}

// CSV: <grid keys...>,seeds,tasks,mean_acc,ci95,val_acc,seed_means
inline void write_table(const CompareTable& t, std::ostream& os) {
  for (const auto& k : t.keys) os << k << ',';
  os << "seeds,tasks,mean_acc,ci95,val_acc,seed_means\n";
  os << std::fixed << std::setprecision(6);
  for (const auto& r : t.rows) {
    for (const auto& l : r.labels) os << l << ',';
    os << t.seeds.size() << ',' << r.tasks << ',' << r.mean << ',' << r.half_width95 << ',' << r.best_val_mean << ',';
    for (std::size_t i = 0; i < r.seed_means.size(); ++i) os << (i ? ";" : "") << r.seed_means[i];
    os << '\n';
  }
  os.unsetf(std::ios::floatfield);
}

}  // namespace boostmt
