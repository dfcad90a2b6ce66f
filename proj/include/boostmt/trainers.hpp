#pragma once

// Training regimes: conventional pre-training, prototypical episodic
// training, two-stage Meta-Baseline, and the two-loop Boost-MT update.
//
// Boost-MT cycle s (one per base-class batch):
//   outer  mu~ = CE(head_w~(f_th~(X)), y) at (th~_{s-1}, w~_{s-1}); one
//          backward gives grad_w and grad_th. w~_s = w~_{s-1} - alpha * grad_w
//          (momentum SGD); grad_th is cached; th_0 = th~_{s-1}.
//   inner  for t = 1..T on fresh base tasks:
//            sigma  = episode loss at th_{t-1}
//            sigma~ = episode loss of the same task at th~_{s-1}
//            th_t   = th_{t-1} - beta * (grad sigma - grad sigma~ + grad_th)
//   then   th~_s = th_T

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "boostmt/data.hpp"
#include "boostmt/episodes.hpp"
#include "boostmt/errors.hpp"
#include "boostmt/eval.hpp"
#include "boostmt/metrics.hpp"
#include "boostmt/model.hpp"
#include "boostmt/rng.hpp"

namespace boostmt {

struct BoostMTConfig {
  double alpha = 0.1;  // outer (classifier) step size
  double beta = 0.1;   // inner (extractor) step size
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  std::size_t inner_loops = 10;
  EpisodeShape shape{5, 5, 15};
  Metric metric{MetricKind::cosine};
  double momentum = 0.9;
  std::vector<std::size_t> decay_epochs;  // alpha and beta scale by decay_factor from each of these epochs on
  double decay_factor = 0.1;

  bool update_extractor_in_outer = false;   // Boost-MT-f
  bool update_classifier_in_inner = false;  // Boost-MT-c
  bool disable_inner = false;               // w/o inner
  bool disable_outer = false;               // w/o outer
  bool outer_grad_at_updated_classifier = false;

  std::uint64_t seed = 0;

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("step sizes must be non-negative");
    if (inner_loops == 0) throw ConfigError("inner_loops must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(decay_factor > 0.0)) throw ConfigError("decay_factor must be positive");
    if (disable_inner && disable_outer) throw ConfigError("disable_inner and disable_outer are exclusive");
  }

  // Multiplier applied to alpha and beta during `epoch` (0-based).
  double lr_scale(std::size_t epoch) const {
    double s = 1.0;
    for (std::size_t e : decay_epochs)
      if (epoch >= e) s *= decay_factor;
    return s;
  }
};

struct Architecture {
  FeatureExtractor extractor;
  LinearClassifier classifier;
};

struct TrainState {
  ParamStore theta_snapshot;  // th~ (the model's extractor for every regime)
  ParamStore omega;           // w~
  ParamStore omega_velocity;
  ParamStore theta_velocity;  // used when the extractor takes momentum steps
  ParamStore theta_inner;     // th_t
  GradientMap outer_grad_theta;
  double outer_loss = 0.0;
  bool outer_cache_valid = false;
  std::size_t epoch = 0;
  std::size_t cycle = 0;  // outer cycles completed across epochs
  Rng batch_rng;
  Rng task_rng;

  const ParamStore& theta() const { return theta_snapshot; }
};

// Streams: "init" for parameters, "batches" for outer batches, "tasks" for
// episodes, all derived from `seed`.
inline TrainState init_train_state(const Architecture& arch, std::uint64_t seed) {
  TrainState s;
  Rng init(derive_seed(seed, "init"));
  s.theta_snapshot = arch.extractor.init(init);
  s.omega = arch.classifier.init(init);
  s.omega_velocity = s.omega.zeros_like();
  s.theta_velocity = s.theta_snapshot.zeros_like();
  s.theta_inner = s.theta_snapshot;
  s.batch_rng = Rng(derive_seed(seed, "batches"));
  s.task_rng = Rng(derive_seed(seed, "tasks"));
  return s;
}

// Training state that starts from existing parameters.
inline TrainState train_state_from(const ParamStore& theta, const ParamStore& omega, std::uint64_t seed) {
  TrainState s;
  s.theta_snapshot = theta;
  s.omega = omega;
  s.omega_velocity = omega.zeros_like();
  s.theta_velocity = theta.zeros_like();
  s.theta_inner = theta;
  s.batch_rng = Rng(derive_seed(seed, "batches"));
  s.task_rng = Rng(derive_seed(seed, "tasks"));
  return s;
}

inline Model to_model(const Architecture& arch, const TrainState& s) {
  return Model{arch.extractor, arch.classifier, s.theta_snapshot, s.omega};
}

// v = momentum * v + g;  p = p - lr * v
inline void momentum_step(ParamStore& params, ParamStore& velocity, const GradientMap& grad, double lr,
                          double momentum) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    Tensor& v = velocity.at(grad.name(i));
    auto vs = v.data();
    auto gs = grad.value(i).data();
    for (std::size_t j = 0; j < vs.size(); ++j) vs[j] = momentum * vs[j] + gs[j];
    kernels::axpy(-lr, v, params.at(grad.name(i)));
  }
}

// Classification labels (position among base classes) of a task's query points.
inline std::vector<std::size_t> query_head_labels(const Dataset& ds, const Task& task) {
  std::vector<std::size_t> y;
  y.reserve(task.query_y.size());
  for (std::size_t label : task.query_y) y.push_back(ds.split_index(task.class_map[label]));
  return y;
}

// Outer loop of one cycle.
inline void boost_mt_outer_step(TrainState& s, const Architecture& arch, const Batch& batch,
                                const BoostMTConfig& cfg, double lr_scale = 1.0) {
  const double alpha = cfg.alpha * lr_scale;
  const LossGrad lg =
      classification_loss_grad(arch.extractor, s.theta_snapshot, arch.classifier, s.omega, batch.x, batch.y);
  GradientMap grad_theta = select_prefix(lg.grad, "theta.");
  const GradientMap grad_omega = select_prefix(lg.grad, "omega.");
  s.outer_loss = lg.loss;

  if (cfg.disable_inner) {
    // Without the inner loop the batch gradient trains both parts directly.
    momentum_step(s.theta_snapshot, s.theta_velocity, grad_theta, alpha, cfg.momentum);
    momentum_step(s.omega, s.omega_velocity, grad_omega, alpha, cfg.momentum);
    s.outer_grad_theta = std::move(grad_theta);
    s.outer_cache_valid = false;
    s.theta_inner = s.theta_snapshot;
    return;
  }

  momentum_step(s.omega, s.omega_velocity, grad_omega, alpha, cfg.momentum);
  if (cfg.outer_grad_at_updated_classifier) {
    grad_theta = select_prefix(classification_loss_grad(arch.extractor, s.theta_snapshot, arch.classifier,
                                                        s.omega, batch.x, batch.y)
                                   .grad,
                               "theta.");
  }
  if (cfg.update_extractor_in_outer) {
    momentum_step(s.theta_snapshot, s.theta_velocity, grad_theta, alpha, cfg.momentum);
  }
  s.outer_grad_theta = std::move(grad_theta);
  s.outer_cache_valid = true;
  s.theta_inner = s.theta_snapshot;
}

struct InnerStepLosses {
  double sigma = 0.0;
  double sigma_snapshot = 0.0;
};

// One variance-corrected extractor update. `head_labels` (base-class
// positions of the query points) is required only for Boost-MT-c.
inline InnerStepLosses boost_mt_inner_step(TrainState& s, const Architecture& arch, const Task& task,
                                           const BoostMTConfig& cfg, double lr_scale = 1.0,
                                           std::span<const std::size_t> head_labels = {}) {
  if (!cfg.disable_outer && !s.outer_cache_valid) {
    throw ProtocolError("inner step requires an outer step earlier in the same cycle");
  }
  if (cfg.update_classifier_in_inner && head_labels.size() != task.query_y.size()) {
    throw ContractError("classifier update in the inner loop needs one head label per query point");
  }
  const double beta = cfg.beta * lr_scale;
  InnerStepLosses out;

  // Classifier gradient is taken at th_{t-1}, before the extractor moves.
  GradientMap head_grad;
  if (cfg.update_classifier_in_inner) {
    std::vector<std::size_t> y(head_labels.begin(), head_labels.end());
    head_grad = select_prefix(
        classification_loss_grad(arch.extractor, s.theta_inner, arch.classifier, s.omega, task.query_x, y).grad,
        "omega.");
  }

  const LossGrad inner = episode_loss_grad(arch.extractor, s.theta_inner, task, cfg.metric);
  out.sigma = inner.loss;
  if (cfg.disable_outer) {
    s.theta_inner.axpy(-beta, inner.grad);
  } else {
    const LossGrad snap = episode_loss_grad(arch.extractor, s.theta_snapshot, task, cfg.metric);
    out.sigma_snapshot = snap.loss;
    GradientMap direction = inner.grad;
    direction.axpy(-1.0, snap.grad);
    direction.axpy(1.0, s.outer_grad_theta);
    s.theta_inner.axpy(-beta, direction);
  }
  if (cfg.update_classifier_in_inner) s.omega.axpy(-beta, head_grad);
  return out;
}

struct CycleObserver {
  // Called after each cycle's outer step with th~_{s-1}, the cached outer
  // gradient, and after the first inner step with th_1.
  std::function<void(const TrainState& after_outer)> after_outer;
  std::function<void(const TrainState& after_first_inner)> after_first_inner;
};

// S = ceil(|base| / N_b) cycles over one epoch-shuffled pass of the base split.
inline void boost_mt_epoch(TrainState& s, const Architecture& arch, const Dataset& ds, const BoostMTConfig& cfg,
                           RunRecord* record = nullptr, const CycleObserver* observer = nullptr) {
  cfg.validate();
  const double scale = cfg.lr_scale(s.epoch);
  const std::size_t cycles = batches_per_epoch(ds.samples(Split::base).size(), cfg.batch_size);
  std::vector<std::vector<std::size_t>> batches;
  if (!cfg.disable_outer) batches = epoch_batches(ds, Split::base, cfg.batch_size, s.batch_rng);

  for (std::size_t c = 0; c < cycles; ++c) {
    if (!cfg.disable_outer) {
      boost_mt_outer_step(s, arch, make_batch(ds, batches[c]), cfg, scale);
      if (observer && observer->after_outer) observer->after_outer(s);
    } else {
      s.theta_inner = s.theta_snapshot;
    }
    double sigma_sum = 0.0, sigma_snap_sum = 0.0;
    if (!cfg.disable_inner) {
      std::vector<Task> tasks;
      tasks.reserve(cfg.inner_loops);
      for (std::size_t t = 0; t < cfg.inner_loops; ++t)
        tasks.push_back(sample_task(ds, Split::base, cfg.shape, s.task_rng));
      for (std::size_t t = 0; t < cfg.inner_loops; ++t) {
        std::vector<std::size_t> head;
        if (cfg.update_classifier_in_inner) head = query_head_labels(ds, tasks[t]);
        const InnerStepLosses l = boost_mt_inner_step(s, arch, tasks[t], cfg, scale, head);
        sigma_sum += l.sigma;
        sigma_snap_sum += l.sigma_snapshot;
        if (t == 0 && observer && observer->after_first_inner) observer->after_first_inner(s);
      }
      s.theta_snapshot = s.theta_inner;
    }
    s.outer_cache_valid = false;
    ++s.cycle;
    if (record) {
      const double T = static_cast<double>(cfg.inner_loops);
      if (!cfg.disable_outer) record->add(s.epoch, s.cycle, "train", "mu", s.outer_loss);
      if (!cfg.disable_inner) {
        record->add(s.epoch, s.cycle, "train", "sigma", sigma_sum / T);
        if (!cfg.disable_outer) record->add(s.epoch, s.cycle, "train", "sigma_snapshot", sigma_snap_sum / T);
      }
    }
  }
  ++s.epoch;
}

// Mini-batch momentum SGD on the batch classification loss, both parts.
inline void pretrain_epoch(TrainState& s, const Architecture& arch, const Dataset& ds, const BoostMTConfig& cfg,
                           RunRecord* record = nullptr) {
  cfg.validate();
  const double lr = cfg.alpha * cfg.lr_scale(s.epoch);
  for (const auto& ids : epoch_batches(ds, Split::base, cfg.batch_size, s.batch_rng)) {
    const Batch b = make_batch(ds, ids);
    const LossGrad lg = classification_loss_grad(arch.extractor, s.theta_snapshot, arch.classifier, s.omega, b.x, b.y);
    momentum_step(s.theta_snapshot, s.theta_velocity, select_prefix(lg.grad, "theta."), lr, cfg.momentum);
    momentum_step(s.omega, s.omega_velocity, select_prefix(lg.grad, "omega."), lr, cfg.momentum);
    ++s.cycle;
    if (record) record->add(s.epoch, s.cycle, "train", "mu", lg.loss);
  }
  s.theta_inner = s.theta_snapshot;
  ++s.epoch;
}

// Prototypical episodic training: ceil(|base| / N_b) * T tasks per epoch, each
// a plain step th <- th - beta * grad sigma. The classifier is untouched.
inline void proto_epoch(TrainState& s, const Architecture& arch, const Dataset& ds, const BoostMTConfig& cfg,
                        RunRecord* record = nullptr) {
  cfg.validate();
  const double beta = cfg.beta * cfg.lr_scale(s.epoch);
  const std::size_t cycles = batches_per_epoch(ds.samples(Split::base).size(), cfg.batch_size);
  for (std::size_t c = 0; c < cycles; ++c) {
    std::vector<Task> tasks;
    tasks.reserve(cfg.inner_loops);
    for (std::size_t t = 0; t < cfg.inner_loops; ++t)
      tasks.push_back(sample_task(ds, Split::base, cfg.shape, s.task_rng));
    double sigma_sum = 0.0;
    for (const Task& task : tasks) {
      const LossGrad lg = episode_loss_grad(arch.extractor, s.theta_snapshot, task, cfg.metric);
      s.theta_snapshot.axpy(-beta, lg.grad);
      sigma_sum += lg.loss;
    }
    ++s.cycle;
    if (record) record->add(s.epoch, s.cycle, "train", "sigma", sigma_sum / static_cast<double>(cfg.inner_loops));
  }
  s.theta_inner = s.theta_snapshot;
  ++s.epoch;
}

// Few-shot validation used for model selection.
struct ValidationConfig {
  EpisodeShape shape{5, 5, 15};
  std::size_t tasks = 100;
  Metric metric{MetricKind::cosine};
  std::uint64_t seed = 0;
  std::size_t every = 1;             // validate every `every` epochs and after the last
  std::optional<ProbeConfig> probe;  // also chart the conventional probe
};

inline double validation_accuracy(const Architecture& arch, const ParamStore& theta, const Dataset& ds,
                                  const ValidationConfig& v) {
  return meta_test(arch.extractor, theta, ds, Split::val, v.shape, v.tasks, v.metric, v.seed).mean;
}

enum class Method { pretrain, proto, meta_baseline, boost_mt };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::pretrain: return "pretrain";
    case Method::proto: return "proto";
    case Method::meta_baseline: return "meta-baseline";
    case Method::boost_mt: return "boost-mt";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::pretrain, Method::proto, Method::meta_baseline, Method::boost_mt})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown method '" + s + "'");
}

struct TrainResult {
  Model model;                 // parameters selected by validation accuracy
  double best_val_accuracy = 0.0;
  std::size_t best_epoch = 0;  // epochs completed when the selected model was taken
  std::string best_phase;      // "pretrain" or "meta" for two-stage runs
  TrainState final_state;      // unselected state after the last epoch
};

using EpochHook = std::function<void(const RunRecord&)>;

namespace detail {

// Runs `epochs` epochs with `step`, validating before the first and after
// each scheduled epoch. The strictly best validated model among the trained
// epochs is kept; the starting point is a candidate only when epochs == 0.
template <typename Step>
void run_selected(TrainState& s, const Architecture& arch, const Dataset& ds, std::size_t epochs,
                  const ValidationConfig& v, const std::string& phase, RunRecord& rec, TrainResult& best,
                  bool& have_best, const EpochHook& hook, Step step) {
  auto validate = [&](std::size_t epoch_label) {
    const double acc = validation_accuracy(arch, s.theta_snapshot, ds, v);
    rec.add(epoch_label, s.cycle, phase, "val_acc", acc);
    if (v.probe) rec.add(epoch_label, s.cycle, phase, "probe_acc", conventional_probe(arch.extractor, s.theta_snapshot, ds, *v.probe));
    if (epoch_label == 0 && epochs > 0) return;
    if (!have_best || acc > best.best_val_accuracy) {
      best.model = to_model(arch, s);
      best.best_val_accuracy = acc;
      best.best_epoch = epoch_label;
      best.best_phase = phase;
      have_best = true;
    }
  };
  const std::size_t first = s.epoch;
  validate(s.epoch - first);
  if (hook) hook(rec);
  const std::size_t every = std::max<std::size_t>(1, v.every);
  for (std::size_t e = 0; e < epochs; ++e) {
    step(s);
    const std::size_t done = s.epoch - first;
    if (done % every == 0 || done == epochs) validate(done);
    if (hook) hook(rec);
  }
}

}  // namespace detail

// Two stages: pre-training with validation checkpoint selection, then
// cosine prototypical meta-training from that checkpoint, again selected by
// validation. Stage rows are tagged "pretrain" and "meta".
inline TrainResult meta_baseline_train(const Architecture& arch, const Dataset& ds, const BoostMTConfig& cfg_pre,
                                       const BoostMTConfig& cfg_meta, const ValidationConfig& v, RunRecord& rec,
                                       const EpochHook& hook = {}) {
  TrainResult stage1;
  bool have1 = false;
  TrainState s = init_train_state(arch, cfg_pre.seed);
  detail::run_selected(s, arch, ds, cfg_pre.epochs, v, "pretrain", rec, stage1, have1, hook,
                       [&](TrainState& st) { pretrain_epoch(st, arch, ds, cfg_pre, &rec); });

  BoostMTConfig meta = cfg_meta;
  meta.metric = Metric(MetricKind::cosine, cfg_meta.metric.tau);
  ValidationConfig v2 = v;
  v2.metric = Metric(MetricKind::cosine, v.metric.tau);

  TrainResult stage2;
  bool have2 = false;
  TrainState s2 = train_state_from(stage1.model.theta, stage1.model.omega, cfg_meta.seed);
  s2.cycle = s.cycle;
  detail::run_selected(s2, arch, ds, meta.epochs, v2, "meta", rec, stage2, have2, hook,
                       [&](TrainState& st) { proto_epoch(st, arch, ds, meta, &rec); });
  stage2.final_state = std::move(s2);
  return stage2;
}

// One regime from initialization, with validation-based model selection.
inline TrainResult train_method(Method method, const Architecture& arch, const Dataset& ds, const BoostMTConfig& cfg,
                                const BoostMTConfig& cfg_pre, const ValidationConfig& v, RunRecord& rec,
                                const EpochHook& hook = {}) {
  if (method == Method::meta_baseline) return meta_baseline_train(arch, ds, cfg_pre, cfg, v, rec, hook);
  TrainResult best;
  bool have = false;
  TrainState s = init_train_state(arch, cfg.seed);
  const char* phase = to_string(method);
  detail::run_selected(s, arch, ds, cfg.epochs, v, phase, rec, best, have, hook, [&](TrainState& st) {
    switch (method) {
      case Method::pretrain: pretrain_epoch(st, arch, ds, cfg, &rec); break;
      case Method::proto: proto_epoch(st, arch, ds, cfg, &rec); break;
      case Method::boost_mt: boost_mt_epoch(st, arch, ds, cfg, &rec); break;
      case Method::meta_baseline: break;
    }
  });
  best.final_state = std::move(s);
  return best;
}

}  // namespace boostmt
