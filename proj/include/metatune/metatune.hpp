#pragma once

// Meta fine-tuning engine. The inner update and the meta update are generic
// over the task loss so the same code path serves closed-form oracles and
// the segmentation network.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metatune/autodiff.hpp"
#include "metatune/metrics.hpp"
#include "metatune/sampler.hpp"
#include "metatune/segnet.hpp"
#include "metatune/synthdata.hpp"

namespace metatune {

enum class MetaMode { second_order, first_order };

inline std::string to_string(MetaMode m) { return m == MetaMode::second_order ? "second" : "first"; }
inline MetaMode parse_mode(const std::string& s) {
  if (s == "second" || s == "second_order") return MetaMode::second_order;
  if (s == "first" || s == "first_order") return MetaMode::first_order;
  throw ValueError("mode", "unknown mode '" + s + "' (valid: second, first)");
}

struct MetaTuneConfig {
  double alpha = 0.01;
  double beta = 0.005;
  std::size_t meta_steps = 30;
  std::size_t inner_steps = 1;
  MetaMode mode = MetaMode::second_order;
  double tau = 0.5;
  Method method = Method::active;
  std::uint64_t seed = 0;
  double split_ratio = 0.5;

  void validate() const {
    if (!(alpha > 0.0)) throw ValueError("MetaTuneConfig", "alpha must be > 0");
    if (!(beta > 0.0)) throw ValueError("MetaTuneConfig", "beta must be > 0");
    if (inner_steps < 1) throw ValueError("MetaTuneConfig", "inner_steps must be >= 1");
    if (!(tau >= 0.0 && tau <= 1.0)) throw ValueError("MetaTuneConfig", "tau must be in [0, 1]");
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) {
      throw ValueError("MetaTuneConfig", "split_ratio must be in (0, 1)");
    }
  }
};

/// Scalar task loss evaluated at parameter handles `theta` on one datum.
template <class Data>
using TaskLoss = std::function<Var(std::span<const Var> theta, const Data& data)>;

/// theta' after `steps` plain gradient steps of size alpha on loss(.; data).
/// With create_graph, theta' stays differentiable with respect to theta.
template <class Data>
std::vector<Var> inner_adapt(std::span<const Var> theta, const TaskLoss<Data>& loss, const Data& data,
                             double alpha, std::size_t steps, bool create_graph) {
  if (!(alpha > 0.0)) throw ValueError("inner_adapt", "alpha must be > 0");
  if (steps < 1) throw ValueError("inner_adapt", "steps must be >= 1");
  if (theta.empty()) throw ValueError("inner_adapt", "no parameters");
  Tape& tape = theta.front().tape();
  std::vector<Var> cur(theta.begin(), theta.end());
  for (std::size_t step = 0; step < steps; ++step) {
    const Var l = loss(cur, data);
    if (!std::isfinite(l.item())) throw NonFiniteError("inner_adapt", "loss is not finite", step);
    const std::vector<Var> g = tape.grad(l, cur, create_graph);
    for (std::size_t i = 0; i < cur.size(); ++i) {
      if (!g[i].value().all_finite()) throw NonFiniteError("inner_adapt", "gradient is not finite", step);
      cur[i] = sub(cur[i], scale(g[i], alpha));
    }
  }
  return cur;
}

struct MetaStepResult {
  std::vector<Tensor> theta;      // updated parameters
  std::vector<Tensor> meta_grad;  // gradient of the summed outer loss
  double outer_loss = 0.0;        // sum over pairs of L(theta_i'; D_i')
};

template <class Data>
struct TaskPair {
  const Data* inner;  // D, adapts theta -> theta_i'
  const Data* outer;  // D', evaluates theta_i'
};

/// One meta update: theta - beta * grad_theta sum_i L(theta_i'; D_i').
/// second_order differentiates through the inner adaptation; first_order
/// uses grad_{theta_i'} L(theta_i'; D_i') in its place.
template <class Data>
MetaStepResult meta_step(const std::vector<Tensor>& theta, std::span<const TaskPair<Data>> pairs,
                         const TaskLoss<Data>& loss, const MetaTuneConfig& cfg) {
  if (pairs.empty()) throw ValueError("meta_step", "no task pairs");
  if (!(cfg.beta > 0.0)) throw ValueError("meta_step", "beta must be > 0");
  MetaStepResult r;
  r.meta_grad.reserve(theta.size());
  for (const Tensor& t : theta) r.meta_grad.emplace_back(t.shape(), 0.0);

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    Tape tape;
    std::vector<Var> params;
    params.reserve(theta.size());
    for (const Tensor& t : theta) params.push_back(tape.leaf(t));
    std::vector<Var> g;
    double l_value = 0.0;
    try {
      if (cfg.mode == MetaMode::second_order) {
        const auto adapted = inner_adapt<Data>(params, loss, *pairs[i].inner, cfg.alpha, cfg.inner_steps, true);
        const Var l = loss(adapted, *pairs[i].outer);
        l_value = l.item();
        if (!std::isfinite(l_value)) throw NonFiniteError("meta_step", "outer loss is not finite", i);
        g = tape.grad(l, params, false);
      } else {
        const auto adapted = inner_adapt<Data>(params, loss, *pairs[i].inner, cfg.alpha, cfg.inner_steps, false);
        std::vector<Var> frozen;
        frozen.reserve(adapted.size());
        for (const Var& a : adapted) frozen.push_back(tape.leaf(a.value()));
        const Var l = loss(frozen, *pairs[i].outer);
        l_value = l.item();
        if (!std::isfinite(l_value)) throw NonFiniteError("meta_step", "outer loss is not finite", i);
        g = tape.grad(l, frozen, false);
      }
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("meta_step pair " + std::to_string(i), e.what(), i);
    }
    r.outer_loss += l_value;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const Tensor& gk = g[k].value();
      if (!gk.all_finite()) throw NonFiniteError("meta_step pair " + std::to_string(i), "meta-gradient is not finite", i);
      auto acc = r.meta_grad[k].data();
      for (std::size_t j = 0; j < gk.size(); ++j) acc[j] += gk[j];
    }
  }

  r.theta = theta;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    auto dst = r.theta[k].data();
    const auto grad = r.meta_grad[k].data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] -= cfg.beta * grad[j];
  }
  return r;
}

/// Segmentation task loss: mean per-pixel cross-entropy of the network.
inline TaskLoss<Sample> segmentation_loss(const NetworkConfig& cfg) {
  return [cfg](std::span<const Var> theta, const Sample& s) { return loss(cfg, theta, s); };
}

struct EvalSummary {
  double mean_fg = 0.0;                 // mean over slices of mean-foreground Dice
  std::vector<double> per_class_mean;   // mean over slices, per class
  std::size_t slices = 0;
};

using Predictor = std::function<LabelMap(const Sample&)>;

inline std::vector<SliceReport> evaluate_slices(const Predictor& predict_fn, std::size_t num_classes,
                                                std::span<const PatientVolume> patients) {
  std::vector<SliceReport> rows;
  for (const PatientVolume& p : patients) {
    for (std::size_t z = 0; z < p.slices.size(); ++z) {
      const Sample& s = p.slices[z];
      rows.push_back({p.patient_id, z, dice_report(predict_fn(s), s.labels, num_classes)});
    }
  }
  return rows;
}

inline std::vector<SliceReport> evaluate_slices(const ParamVector& params,
                                                std::span<const PatientVolume> patients) {
  return evaluate_slices([&](const Sample& s) { return predict(params, s.image); }, params.config.num_classes,
                         patients);
}

inline AggregateReport aggregate_slices(const std::vector<SliceReport>& rows) {
  if (rows.empty()) throw ValueError("evaluate", "no slices to evaluate");
  std::vector<DiceReport> reports;
  reports.reserve(rows.size());
  for (const auto& r : rows) reports.push_back(r.report);
  return aggregate(reports);
}

inline EvalSummary evaluate(const ParamVector& params, std::span<const PatientVolume> patients) {
  const auto rows = evaluate_slices(params, patients);
  const AggregateReport agg = aggregate_slices(rows);
  EvalSummary s;
  s.mean_fg = agg.mean_foreground.mean;
  for (const auto& c : agg.per_class) s.per_class_mean.push_back(c.mean);
  s.slices = rows.size();
  return s;
}

/// Source-domain mean foreground Dice lost between theta0 and theta_final
/// (positive = forgetting).
inline double forgetting(const ParamVector& theta0, const ParamVector& theta_final,
                         std::span<const PatientVolume> source_val) {
  if (source_val.empty()) throw ValueError("forgetting", "empty source validation set");
  return evaluate(theta0, source_val).mean_fg - evaluate(theta_final, source_val).mean_fg;
}

struct TuneRecord {
  std::size_t step = 0;
  double outer_loss = 0.0;
  double source_val_dsc = 0.0;
  double target_val_dsc = 0.0;
  double source_val_enhancing = 0.0;
  double target_val_enhancing = 0.0;

  friend bool operator==(const TuneRecord&, const TuneRecord&) = default;
};

struct TuneResult {
  TuneRecord initial;               // evaluation of theta0 (step 0)
  std::vector<TuneRecord> records;  // one per completed step, steps 1..N
  ParamVector final_params;
  MetaTuneConfig config;
  double wall_seconds = 0.0;
};

struct TuneData {
  std::span<const PatientVolume> source_val;
  std::span<const PatientVolume> target_train;
  std::span<const PatientVolume> target_val;
};

struct TuneHooks {
  std::ostream* order_log = nullptr;
  std::function<void(const TuneRecord&)> on_record;
};

namespace tune_detail {

inline TuneRecord measure(std::size_t step, double outer_loss, const ParamVector& p, const TuneData& data) {
  const EvalSummary src = evaluate(p, data.source_val);
  const EvalSummary tgt = evaluate(p, data.target_val);
  return {step, outer_loss, src.mean_fg, tgt.mean_fg, src.per_class_mean.at(kEnhancing),
          tgt.per_class_mean.at(kEnhancing)};
}

inline void check_data(const TuneData& data, const char* op) {
  if (data.target_train.empty()) throw ValueError(op, "empty target training set");
  if (data.source_val.empty()) throw ValueError(op, "empty source validation set");
  if (data.target_val.empty()) throw ValueError(op, "empty target validation set");
}

inline std::vector<SampleRef> refs(const PatientVolume& p, std::span<const std::size_t> slices, Pool pool) {
  std::vector<SampleRef> out;
  for (std::size_t z : slices) out.push_back({p.patient_id, z, pool, &p.slices[z]});
  return out;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace tune_detail

/// Builds one meta-batch schedule for a patient under the current params.
inline OrderedSchedule schedule_meta_batch(const ParamVector& params, const PatientVolume& patient,
                                           const MetaTuneConfig& cfg, std::size_t step) {
  const auto [inner_idx, outer_idx] =
      split_inner_outer(patient.slices.size(), cfg.split_ratio, derive_seed(cfg.seed, "split:" + std::to_string(step)));
  const auto inner_refs = tune_detail::refs(patient, inner_idx, Pool::inner);
  const auto outer_refs = tune_detail::refs(patient, outer_idx, Pool::outer);
  const TaskPartition inner = decompose_tasks(params, inner_refs, cfg.tau);
  const TaskPartition outer = decompose_tasks(params, outer_refs, cfg.tau);
  if (cfg.method == Method::active) return order_active(inner, outer);
  return order_passive(inner, outer, derive_seed(cfg.seed, "passive:" + std::to_string(step)));
}

/// Meta fine-tuning: each meta-batch is one target training patient (cycled
/// in dataset order); the partition is rebuilt with the current parameters
/// at the start of every meta-batch.
inline TuneResult run_meta_tune(const ParamVector& theta0, const TuneData& data, const MetaTuneConfig& cfg,
                                const TuneHooks& hooks = {}) {
  cfg.validate();
  if (cfg.method == Method::naive) throw ValueError("run_meta_tune", "naive is not a meta-tune method");
  const auto t0 = std::chrono::steady_clock::now();
  TuneResult result;
  result.config = cfg;
  result.final_params = theta0;
  if (cfg.meta_steps == 0) {
    result.initial = {};
    return result;
  }
  tune_detail::check_data(data, "run_meta_tune");
  result.initial = tune_detail::measure(0, 0.0, theta0, data);
  if (hooks.order_log) write_order_log_header(*hooks.order_log);
  const TaskLoss<Sample> task_loss = segmentation_loss(theta0.config);

  ParamVector theta = theta0;
  for (std::size_t step = 1; step <= cfg.meta_steps; ++step) {
    try {
      const PatientVolume& patient = data.target_train[(step - 1) % data.target_train.size()];
      const OrderedSchedule sched = schedule_meta_batch(theta, patient, cfg, step);
      if (hooks.order_log) append_order_log(*hooks.order_log, step, sched);
      std::vector<TaskPair<Sample>> pairs;
      for (const ScheduledPair& p : sched.pairs) pairs.push_back({p.inner.ref.sample, p.outer->ref.sample});
      MetaStepResult r = meta_step<Sample>(theta.tensors, pairs, task_loss, cfg);
      theta.tensors = std::move(r.theta);
      result.records.push_back(tune_detail::measure(step, r.outer_loss, theta, data));
    } catch (const Error& e) {
      throw Error("meta step " + std::to_string(step), e.what());
    }
    if (hooks.on_record) hooks.on_record(result.records.back());
  }
  result.final_params = std::move(theta);
  result.wall_seconds = tune_detail::seconds_since(t0);
  return result;
}

/// Samples consumed by one meta-batch of `slices` slices: the inner pool
/// plus one outer sample per inner sample.
inline std::size_t samples_per_meta_batch(std::size_t slices, double split_ratio) {
  if (slices < 2) return 1;
  const auto k = std::clamp<std::size_t>(static_cast<std::size_t>(split_ratio * static_cast<double>(slices)), 1,
                                         slices - 1);
  return 2 * k;
}

/// One plain SGD step; returns the pre-step loss.
inline double sgd_step(ParamVector& params, const Sample& s, double lr) {
  Tape tape;
  const std::vector<Var> p = leaves(tape, params);
  const Var l = loss(params.config, p, s);
  const double v = l.item();
  if (!std::isfinite(v)) throw NonFiniteError("sgd_step", "loss is not finite");
  const auto g = tape.grad(l, p, false);
  for (std::size_t k = 0; k < p.size(); ++k) {
    const Tensor& gk = g[k].value();
    if (!gk.all_finite()) throw NonFiniteError("sgd_step", "gradient is not finite");
    auto dst = params.tensors[k].data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] -= lr * gk[j];
  }
  return v;
}

/// Plain SGD (learning rate alpha) over the pooled target training slices
/// in order_naive order, reshuffled each epoch. One record per N samples,
/// N = samples_per_meta_batch, so trajectories line up with meta-tuning.
/// The record's outer_loss is the mean pre-step loss over those N samples.
inline TuneResult run_naive_tune(const ParamVector& theta0, const TuneData& data, const MetaTuneConfig& cfg,
                                 const TuneHooks& hooks = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TuneResult result;
  result.config = cfg;
  result.final_params = theta0;
  if (cfg.meta_steps == 0) return result;
  tune_detail::check_data(data, "run_naive_tune");
  result.initial = tune_detail::measure(0, 0.0, theta0, data);

  std::vector<SampleRef> pool;
  for (const PatientVolume& p : data.target_train) {
    for (std::size_t z = 0; z < p.slices.size(); ++z) pool.push_back({p.patient_id, z, Pool::inner, &p.slices[z]});
  }
  const std::size_t per_record = samples_per_meta_batch(data.target_train.front().slices.size(), cfg.split_ratio);
  if (hooks.order_log) write_order_log_header(*hooks.order_log);

  ParamVector theta = theta0;
  std::size_t epoch = 0, cursor = 0;
  OrderedSchedule sched = order_naive(pool, derive_seed(cfg.seed, "naive:0"));
  for (std::size_t step = 1; step <= cfg.meta_steps; ++step) {
    double total = 0.0;
    OrderedSchedule consumed{Method::naive, sched.seed, {}};
    for (std::size_t n = 0; n < per_record; ++n) {
      if (cursor == sched.pairs.size()) {
        ++epoch;
        cursor = 0;
        sched = order_naive(pool, derive_seed(cfg.seed, "naive:" + std::to_string(epoch)));
      }
      const ScheduledPair& p = sched.pairs[cursor++];
      consumed.pairs.push_back(p);
      try {
        total += sgd_step(theta, *p.inner.ref.sample, cfg.alpha);
      } catch (const Error& e) {
        throw Error("naive step " + std::to_string(step), e.what());
      }
    }
    if (hooks.order_log) append_order_log(*hooks.order_log, step, consumed);
    result.records.push_back(tune_detail::measure(step, total / static_cast<double>(per_record), theta, data));
    if (hooks.on_record) hooks.on_record(result.records.back());
  }
  result.final_params = std::move(theta);
  result.wall_seconds = tune_detail::seconds_since(t0);
  return result;
}

inline void write_trajectory_csv(std::ostream& os, const TuneResult& r) {
  os << "step,outer_loss,source_val_dsc,target_val_dsc\n";
  for (const TuneRecord& rec : r.records) {
    os << rec.step << ',' << fixed6(rec.outer_loss) << ',' << fixed6(rec.source_val_dsc) << ','
       << fixed6(rec.target_val_dsc) << '\n';
  }
}

}  // namespace metatune
