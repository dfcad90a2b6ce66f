#pragma once

// Command-line front end. Exit codes: 0 success, 1 runtime failure,
// 2 usage or configuration error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "boostmt/config.hpp"
#include "boostmt/runner.hpp"

namespace boostmt {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

inline void require_file(const std::string& path, const char* what) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError(std::string(what) + " not found: " + path);
}

// Writes to `path`, or to `fallback` when path is empty.
template <typename F>
void emit(const std::string& path, std::ostream& fallback, F write) {
  if (path.empty()) {
    write(fallback);
    return;
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  write(os);
}

}  // namespace detail

inline int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot training laboratory: pre-training, prototypical, Meta-Baseline and Boost-MT", "boostmt"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config_path, out_path, model_path, dataset_path, grid, metric = "cosine", split = "novel";
  std::size_t n = 5, k = 5, q = 15, tasks = 300, threads = 1;
  std::uint64_t seed = 0;
  double tau = 1.0;
  ProbeConfig probe_cfg;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset file");
  gen->add_option("--config", config_path, "experiment config (JSON)")->required();
  gen->add_option("--out", out_path, "dataset file to write")->required();

  auto* train = app.add_subcommand("train", "train one method and evaluate it");
  train->add_option("--config", config_path, "experiment config (JSON)")->required();
  train->add_option("--out", out_path, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "meta-test a saved model");
  eval->add_option("--model", model_path, "model file")->required();
  eval->add_option("--dataset", dataset_path, "dataset file")->required();
  eval->add_option("--n", n, "ways")->capture_default_str();
  eval->add_option("--k", k, "shots")->capture_default_str();
  eval->add_option("--q", q, "queries per class")->capture_default_str();
  eval->add_option("--tasks", tasks, "number of tasks")->capture_default_str();
  eval->add_option("--seed", seed, "task seed")->capture_default_str();
  eval->add_option("--metric", metric, "cosine|euclidean|manhattan|chebyshev|cosine_plus_euclidean")->capture_default_str();
  eval->add_option("--tau", tau, "score scale")->capture_default_str();
  eval->add_option("--split", split, "base|val|novel")->capture_default_str();
  eval->add_option("--threads", threads, "worker threads")->capture_default_str();
  eval->add_option("--out", out_path, "write the report here instead of stdout");

  auto* probe = app.add_subcommand("probe", "linear probe on a frozen extractor");
  probe->add_option("--model", model_path, "model file")->required();
  probe->add_option("--dataset", dataset_path, "dataset file")->required();
  probe->add_option("--epochs", probe_cfg.epochs, "probe epochs")->capture_default_str();
  probe->add_option("--lr", probe_cfg.learning_rate, "learning rate")->capture_default_str();
  probe->add_option("--momentum", probe_cfg.momentum, "momentum")->capture_default_str();
  probe->add_option("--batch", probe_cfg.batch_size, "batch size")->capture_default_str();
  probe->add_option("--holdout", probe_cfg.holdout_fraction, "held-out fraction per class")->capture_default_str();
  probe->add_option("--seed", seed, "shuffle seed")->capture_default_str();
  probe->add_option("--out", out_path, "write the result here instead of stdout");

  auto* compare = app.add_subcommand("compare", "run a method/variant grid over the config's seeds");
  compare->add_option("--config", config_path, "experiment config (JSON)")->required();
  compare->add_option("--grid", grid, "e.g. \"method=pretrain,proto,meta-baseline,boost-mt\" or \"T=1,5,10\"")->required();
  compare->add_option("--out", out_path, "write the table here as well as stdout");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*gen) {
      const ExperimentConfig c = load_experiment(config_path);
      if (!c.generator) throw ConfigError("gen-data needs config.data.generator");
      save_dataset(generate_synthetic(*c.generator), out_path);
      out << "wrote " << out_path << "\n";
    } else if (*train) {
      const ExperimentConfig c = load_experiment(config_path);
      if (c.data_path) detail::require_file(*c.data_path, "dataset");
      const RunOutcome r = run_to_directory(c, out_path);
      out << to_string(c.method) << ": test " << r.test.mean << " +- " << r.test.half_width95 << " ("
          << r.test.task_count << " tasks), best validation " << r.train.best_val_accuracy << "\n";
    } else if (*eval) {
      detail::require_file(model_path, "model");
      detail::require_file(dataset_path, "dataset");
      const Metric m(parse_metric(metric), tau);
      Split s;
      try {
        s = parse_split(split);
      } catch (const ValidationError& e) {
        throw ConfigError(e.what());
      }
      const Model model = load_model(model_path);
      const Dataset ds = load_dataset(dataset_path);
      const EvalReport r = meta_test(model.extractor, model.theta, ds, s, {n, k, q}, tasks, m, seed, threads);
      detail::emit(out_path, out, [&](std::ostream& os) { os << report_json(r).dump(2) << "\n"; });
    } else if (*probe) {
      detail::require_file(model_path, "model");
      detail::require_file(dataset_path, "dataset");
      probe_cfg.seed = seed;
      const Model model = load_model(model_path);
      const Dataset ds = load_dataset(dataset_path);
      json j;
      j["accuracy"] = conventional_probe(model.extractor, model.theta, ds, probe_cfg);
      j["epochs"] = probe_cfg.epochs;
      j["seed"] = seed;
      detail::emit(out_path, out, [&](std::ostream& os) { os << j.dump(2) << "\n"; });
    } else if (*compare) {
      const ExperimentConfig c = load_experiment(config_path);
      const auto axes = parse_grid(grid);
      const CompareTable t = run_compare(c, axes, &err);
      write_table(t, out);
      if (!out_path.empty()) {
        std::ofstream os(out_path);
        if (!os) throw std::runtime_error("cannot write " + out_path);
        write_table(t, os);
      }
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace boostmt
