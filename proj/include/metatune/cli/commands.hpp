#pragma once

// The metatune command line: gen-data, pretrain, finetune, eval, report and
// sweep. Every command is a plain function over an options struct so tests
// can run them in-process; run() wires them to CLI11.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "metatune/cli/run_manifest.hpp"
#include "metatune/dataset_io.hpp"
#include "metatune/metatune.hpp"
#include "metatune/param_file.hpp"
#include "metatune/pretrain.hpp"

namespace metatune::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(path.string(), "", "cannot open for writing");
  os << text;
  if (!os) throw IoError(path.string(), "", "write failed");
}

inline void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), "", "cannot create directory: " + ec.message());
}

inline std::string num(double v) { return full_precision(v); }

// ---------------------------------------------------------------- gen-data

struct GenDataOptions {
  fs::path out;
  std::string domain = "target";
  std::size_t patients = 30;
  std::uint64_t seed = 0;
  GenConfig gen;
};

/// Patient i gets seed derive_seed(seed, "gen-data:<domain>") + i.
inline std::vector<DatasetEntry> cmd_gen_data(const GenDataOptions& o, std::ostream& log) {
  const Domain domain = parse_domain(o.domain);
  if (o.patients == 0) throw ValueError("gen-data", "--patients must be positive");
  const std::uint64_t seed_base = derive_seed(o.seed, "gen-data:" + to_string(domain));
  const auto entries = gen_dataset(domain, o.patients, seed_base, o.gen, o.out);
  std::ostringstream cfg;
  cfg << "domain=" << to_string(domain) << "\npatients=" << o.patients << "\nseed=" << o.seed
      << "\nseed_base=" << seed_base << "\nimage_size=" << o.gen.image_size << "\nslices=" << o.gen.slices
      << "\nnoise_sigma=" << num(o.gen.noise_sigma) << "\ncontrast_margin=" << num(o.gen.contrast_margin)
      << "\nskull=" << (o.gen.skull ? "true" : "false") << '\n';
  write_text(o.out / "gen_config.txt", cfg.str());
  const auto val = std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.split == Split::val; });
  log << "wrote " << entries.size() << " " << to_string(domain) << " patients to " << o.out.string() << " ("
      << entries.size() - static_cast<std::size_t>(val) << " train, " << val << " val)\n";
  return entries;
}

// ---------------------------------------------------------------- pretrain

struct PretrainOptions {
  fs::path data;
  fs::path out;
  std::size_t epochs = 20;
  double lr = 0.02;
  std::uint64_t seed = 0;
  std::uint32_t width = 8;
};

inline NetworkConfig network_for(const std::vector<PatientVolume>& patients, std::uint32_t width,
                                 const std::string& where) {
  if (patients.empty()) throw ValueError(where, "no patients");
  const Tensor& img = patients.front().slices.front().image;
  if (img.dim(1) != img.dim(2)) throw ValueError(where, "images must be square");
  NetworkConfig c;
  c.in_channels = static_cast<std::uint32_t>(img.dim(0));
  c.num_classes = static_cast<std::uint32_t>(kNumClasses);
  c.base_width = width;
  c.image_size = static_cast<std::uint32_t>(img.dim(1));
  c.validate();
  return c;
}

inline void check_compatible(const NetworkConfig& net, const std::vector<PatientVolume>& patients,
                             const std::string& where) {
  for (const PatientVolume& p : patients) {
    for (const Sample& s : p.slices) {
      const Shape want{net.in_channels, net.image_size, net.image_size};
      if (s.image.shape() != want) throw ShapeError(where + " " + p.patient_id, s.image.shape(), want);
    }
  }
}

inline PretrainResult cmd_pretrain(const PretrainOptions& o, const std::string& command_line, std::ostream& log) {
  const auto train = load_split(o.data, Split::train);
  const auto val = load_split(o.data, Split::val);
  if (val.empty()) throw ValueError("pretrain", o.data.string() + " has no validation patients");
  const NetworkConfig net = network_for(train, o.width, "pretrain");
  check_compatible(net, val, "pretrain");
  make_dir(o.out);

  RunManifest m(o.out, "pretrain_seed" + std::to_string(o.seed), command_line);
  m.set("command", std::string("pretrain"));
  m.set("data", o.data.string());
  m.set("data_hash", hash_dataset(o.data));
  m.set("epochs", static_cast<std::uint64_t>(o.epochs));
  m.set("lr", o.lr);
  m.set("seed", o.seed);
  m.set("base_width", static_cast<std::uint64_t>(o.width));
  m.set("outputs", std::string("params.mtp,pretrain.csv"));
  m.start();

  PretrainConfig pc;
  pc.epochs = o.epochs;
  pc.lr = o.lr;
  pc.seed = o.seed;
  const PretrainResult r = pretrain(net, train, val, pc, [&](const EpochRecord& e) {
    log << "epoch " << e.epoch << "/" << o.epochs << " train_loss=" << fixed6(e.train_loss)
        << " source_val_dsc=" << fixed6(e.source_val_dsc) << '\n';
  });
  write_params(r.params, o.out / "params.mtp");
  std::ostringstream csv;
  write_pretrain_csv(csv, r.records);
  write_text(o.out / "pretrain.csv", csv.str());
  m.set("final_source_val_dsc", r.records.back().source_val_dsc);
  m.finish();
  return r;
}

// ---------------------------------------------------------------- finetune

struct FinetuneOptions {
  fs::path params;
  fs::path source;
  fs::path target;
  fs::path out;
  std::string method = "active";
  double alpha = 0.01;
  double beta = 0.005;
  std::size_t meta_steps = 30;
  std::size_t inner_steps = 1;
  double tau = 0.5;
  std::string mode = "second";
  std::uint64_t seed = 0;
  double split_ratio = 0.5;
  std::string order_log;  // empty: no order log

  MetaTuneConfig tune_config() const {
    MetaTuneConfig c;
    c.alpha = alpha;
    c.beta = beta;
    c.meta_steps = meta_steps;
    c.inner_steps = inner_steps;
    c.tau = tau;
    c.mode = parse_mode(mode);
    c.method = parse_method(method);
    c.seed = seed;
    c.split_ratio = split_ratio;
    c.validate();
    return c;
  }

  /// Equivalent single-run invocation, recorded in the run manifest.
  std::string command_line() const {
    std::ostringstream os;
    os << "metatune finetune --params " << params.string() << " --source " << source.string() << " --target "
       << target.string() << " --out " << out.string() << " --method " << method << " --alpha " << num(alpha)
       << " --beta " << num(beta) << " --meta-steps " << meta_steps << " --inner-steps " << inner_steps
       << " --tau " << num(tau) << " --mode " << mode << " --seed " << seed << " --split-ratio "
       << num(split_ratio);
    if (!order_log.empty()) os << " --order-log " << order_log;
    return os.str();
  }
};

/// Inputs shared by every fine-tuning run of a sweep.
struct FinetuneInputs {
  ParamVector theta0;
  std::vector<PatientVolume> source_val, target_train, target_val;
  std::string params_hash, source_hash, target_hash;

  TuneData data() const { return {source_val, target_train, target_val}; }
};

inline FinetuneInputs load_finetune_inputs(const fs::path& params, const fs::path& source, const fs::path& target) {
  FinetuneInputs in;
  in.theta0 = read_params(params);
  in.source_val = load_split(source, Split::val);
  in.target_train = load_split(target, Split::train);
  in.target_val = load_split(target, Split::val);
  if (in.source_val.empty()) throw ValueError("finetune", source.string() + " has no validation patients");
  if (in.target_train.empty()) throw ValueError("finetune", target.string() + " has no training patients");
  if (in.target_val.empty()) throw ValueError("finetune", target.string() + " has no validation patients");
  for (const auto* set : {&in.source_val, &in.target_train, &in.target_val}) {
    check_compatible(in.theta0.config, *set, "finetune");
  }
  in.params_hash = hash_file(params);
  in.source_hash = hash_dataset(source);
  in.target_hash = hash_dataset(target);
  return in;
}

inline std::string run_id(const FinetuneOptions& o) { return o.method + "_seed" + std::to_string(o.seed); }

inline TuneResult finetune_run(const FinetuneOptions& o, const FinetuneInputs& in, std::ostream& log) {
  const MetaTuneConfig cfg = o.tune_config();
  make_dir(o.out);
  RunManifest m(o.out, run_id(o), o.command_line());
  m.set("command", std::string("finetune"));
  m.set("method", o.method);
  m.set("seed", o.seed);
  m.set("alpha", o.alpha);
  m.set("beta", o.beta);
  m.set("meta_steps", static_cast<std::uint64_t>(o.meta_steps));
  m.set("inner_steps", static_cast<std::uint64_t>(o.inner_steps));
  m.set("tau", o.tau);
  m.set("mode", to_string(cfg.mode));
  m.set("split_ratio", o.split_ratio);
  m.set("params", o.params.string());
  m.set("params_hash", in.params_hash);
  m.set("source", o.source.string());
  m.set("source_hash", in.source_hash);
  m.set("target", o.target.string());
  m.set("target_hash", in.target_hash);
  m.set("outputs", std::string("tuned.mtp,trajectory.csv") + (o.order_log.empty() ? "" : "," + o.order_log));
  m.start();

  std::ofstream order;
  TuneHooks hooks;
  if (!o.order_log.empty()) {
    order.open(o.order_log, std::ios::binary | std::ios::trunc);
    if (!order) throw IoError(o.order_log, "", "cannot open for writing");
    hooks.order_log = &order;
  }
  hooks.on_record = [&](const TuneRecord& r) {
    log << run_id(o) << " step " << r.step << "/" << o.meta_steps << " outer_loss=" << fixed6(r.outer_loss)
        << " source_val_dsc=" << fixed6(r.source_val_dsc) << " target_val_dsc=" << fixed6(r.target_val_dsc)
        << '\n';
  };
  const TuneResult r = cfg.method == Method::naive ? run_naive_tune(in.theta0, in.data(), cfg, hooks)
                                                   : run_meta_tune(in.theta0, in.data(), cfg, hooks);
  write_params(r.final_params, o.out / "tuned.mtp");
  std::ostringstream csv;
  write_trajectory_csv(csv, r);
  write_text(o.out / "trajectory.csv", csv.str());

  const TuneRecord& last = r.records.empty() ? r.initial : r.records.back();
  if (!r.records.empty()) {
    m.set("initial_source_val_dsc", r.initial.source_val_dsc);
    m.set("initial_target_val_dsc", r.initial.target_val_dsc);
    m.set("initial_target_val_enhancing", r.initial.target_val_enhancing);
    m.set("final_source_val_dsc", last.source_val_dsc);
    m.set("final_target_val_dsc", last.target_val_dsc);
    m.set("final_target_val_enhancing", last.target_val_enhancing);
    m.set("forgetting", r.initial.source_val_dsc - last.source_val_dsc);
  }
  m.set("wall_seconds", r.wall_seconds);
  m.finish();
  return r;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  fs::path params;
  fs::path data;
  std::string split = "val";
  fs::path out;
};

inline AggregateReport cmd_eval(const EvalOptions& o, std::ostream& log) {
  const ParamVector p = read_params(o.params);
  std::vector<PatientVolume> patients;
  if (o.split == "train" || o.split == "all") patients = load_split(o.data, Split::train);
  if (o.split == "val" || o.split == "all") {
    for (auto& v : load_split(o.data, Split::val)) patients.push_back(std::move(v));
  }
  if (patients.empty()) throw ValueError("eval", "split '" + o.split + "' of " + o.data.string() + " is empty");
  check_compatible(p.config, patients, "eval");
  const auto rows = evaluate_slices(p, patients);
  const AggregateReport agg = aggregate_slices(rows);
  make_dir(o.out);
  std::ostringstream dice_csv, summary_csv;
  write_dice_csv(dice_csv, rows);
  write_summary_csv(summary_csv, agg);
  write_text(o.out / "dice.csv", dice_csv.str());
  write_text(o.out / "summary.csv", summary_csv.str());
  log << summary_csv.str();
  return agg;
}

// ---------------------------------------------------------------- report

struct RunRow {
  std::string method;
  std::uint64_t seed = 0;
  double target_val_dsc = 0.0, target_val_enhancing = 0.0, source_val_dsc = 0.0, forgetting = 0.0;
  double initial_target_val_dsc = 0.0, initial_target_val_enhancing = 0.0, initial_source_val_dsc = 0.0;
};

struct ReportOptions {
  fs::path runs;
  fs::path out;  // empty: print only
};

inline int method_rank(const std::string& m) {
  if (m == "naive") return 0;
  if (m == "passive") return 1;
  if (m == "active") return 2;
  return 3;
}

inline std::vector<RunRow> collect_runs(const fs::path& runs, std::ostream& warn) {
  if (!fs::is_directory(runs)) throw IoError(runs.string(), "", "not a directory");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(runs)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<RunRow> rows;
  for (const fs::path& d : dirs) {
    const fs::path mpath = d / kRunManifest;
    if (!fs::exists(mpath)) {
      warn << "warning: skipping " << d.string() << ": no " << kRunManifest << '\n';
      continue;
    }
    const auto kv = read_key_values(mpath);
    auto get = [&](const std::string& k) -> std::string {
      const auto it = kv.find(k);
      return it == kv.end() ? std::string() : it->second;
    };
    if (get("command") != "finetune") continue;
    if (get("status") != "complete" || get("forgetting").empty()) {
      warn << "warning: skipping " << d.string() << ": run incomplete\n";
      continue;
    }
    try {
      RunRow r;
      r.method = get("method");
      r.seed = std::stoull(get("seed"));
      r.target_val_dsc = std::stod(get("final_target_val_dsc"));
      r.target_val_enhancing = std::stod(get("final_target_val_enhancing"));
      r.source_val_dsc = std::stod(get("final_source_val_dsc"));
      r.forgetting = std::stod(get("forgetting"));
      r.initial_target_val_dsc = std::stod(get("initial_target_val_dsc"));
      r.initial_target_val_enhancing = std::stod(get("initial_target_val_enhancing"));
      r.initial_source_val_dsc = std::stod(get("initial_source_val_dsc"));
      rows.push_back(r);
    } catch (const std::exception&) {
      warn << "warning: skipping " << d.string() << ": malformed manifest\n";
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const RunRow& a, const RunRow& b) {
    if (method_rank(a.method) != method_rank(b.method)) return method_rank(a.method) < method_rank(b.method);
    if (a.method != b.method) return a.method < b.method;
    return a.seed < b.seed;
  });
  return rows;
}

struct MethodSummary {
  std::string method;
  SummaryStat target_val_dsc, target_val_enhancing, source_val_dsc, forgetting;
};

inline std::vector<MethodSummary> summarize_methods(const std::vector<RunRow>& rows) {
  std::vector<MethodSummary> out;
  for (std::size_t i = 0; i < rows.size();) {
    std::size_t j = i;
    std::vector<double> t, e, s, f;
    while (j < rows.size() && rows[j].method == rows[i].method) {
      t.push_back(rows[j].target_val_dsc);
      e.push_back(rows[j].target_val_enhancing);
      s.push_back(rows[j].source_val_dsc);
      f.push_back(rows[j].forgetting);
      ++j;
    }
    out.push_back({rows[i].method, summarize(t), summarize(e), summarize(s), summarize(f)});
    i = j;
  }
  return out;
}

/// Comparison table: the pretrained baseline, one row per run, then mean
/// and std rows per method.
inline std::string report_csv(const std::vector<RunRow>& rows) {
  std::ostringstream os;
  os << "row,method,seed,n,target_val_dsc,target_val_enhancing,source_val_dsc,forgetting\n";
  std::vector<double> bt, be, bs;
  for (const RunRow& r : rows) {
    bt.push_back(r.initial_target_val_dsc);
    be.push_back(r.initial_target_val_enhancing);
    bs.push_back(r.initial_source_val_dsc);
  }
  os << "baseline,pretrained,," << rows.size() << ',' << fixed6(summarize(bt).mean) << ','
     << fixed6(summarize(be).mean) << ',' << fixed6(summarize(bs).mean) << ',' << fixed6(0.0) << '\n';
  for (const RunRow& r : rows) {
    os << "run," << r.method << ',' << r.seed << ",1," << fixed6(r.target_val_dsc) << ','
       << fixed6(r.target_val_enhancing) << ',' << fixed6(r.source_val_dsc) << ',' << fixed6(r.forgetting) << '\n';
  }
  for (const MethodSummary& m : summarize_methods(rows)) {
    os << "mean," << m.method << ",," << m.target_val_dsc.n << ',' << fixed6(m.target_val_dsc.mean) << ','
       << fixed6(m.target_val_enhancing.mean) << ',' << fixed6(m.source_val_dsc.mean) << ','
       << fixed6(m.forgetting.mean) << '\n';
    os << "std," << m.method << ",," << m.target_val_dsc.n << ',' << fixed6(m.target_val_dsc.std) << ','
       << fixed6(m.target_val_enhancing.std) << ',' << fixed6(m.source_val_dsc.std) << ','
       << fixed6(m.forgetting.std) << '\n';
  }
  return os.str();
}

/// Returns false when no run could be read.
inline bool cmd_report(const ReportOptions& o, std::ostream& out, std::ostream& err) {
  const auto rows = collect_runs(o.runs, err);
  if (rows.empty()) {
    err << "error: no runs found in " << o.runs.string() << '\n';
    return false;
  }
  const std::string csv = report_csv(rows);
  if (!o.out.empty()) write_text(o.out, csv);
  out << csv;
  return true;
}

// ---------------------------------------------------------------- sweep

struct SweepOptions {
  FinetuneOptions base;  // out is the sweep root; method and seed are overridden
  std::vector<std::string> methods{"naive", "passive", "active"};
  std::size_t seeds = 10;
  std::uint64_t first_seed = 0;
  std::size_t jobs = 1;
  bool order_logs = false;
};

/// Runs every (method, seed) combination, `jobs` at a time, then writes
/// report.csv under the sweep root. Each run is single-threaded, so results
/// do not depend on `jobs`.
inline std::vector<RunRow> cmd_sweep(const SweepOptions& o, std::ostream& out, std::ostream& err) {
  for (const auto& m : o.methods) parse_method(m);
  if (o.seeds == 0) throw ValueError("sweep", "--seeds must be positive");
  const FinetuneInputs in = load_finetune_inputs(o.base.params, o.base.source, o.base.target);
  make_dir(o.base.out);

  std::vector<FinetuneOptions> runs;
  for (std::size_t s = 0; s < o.seeds; ++s) {
    for (const auto& m : o.methods) {
      FinetuneOptions r = o.base;
      r.method = m;
      r.seed = o.first_seed + s;
      r.out = o.base.out / run_id(r);
      r.order_log = o.order_logs ? (r.out / "order_log.csv").string() : "";
      r.tune_config();
      runs.push_back(r);
    }
  }

  std::mutex io;
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(runs.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      try {
        make_dir(runs[i].out);
        std::ostringstream sink;
        const TuneResult r = finetune_run(runs[i], in, sink);
        const TuneRecord& last = r.records.empty() ? r.initial : r.records.back();
        std::lock_guard lock(io);
        out << run_id(runs[i]) << " done in " << fixed6(r.wall_seconds) << "s target_val_dsc="
            << fixed6(last.target_val_dsc) << " forgetting=" << fixed6(r.initial.source_val_dsc - last.source_val_dsc)
            << '\n';
      } catch (const std::exception& e) {
        std::lock_guard lock(io);
        errors[i] = e.what();
        err << "error: " << run_id(runs[i]) << ": " << e.what() << '\n';
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(o.jobs, runs.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (!errors[i].empty()) throw Error("sweep " + run_id(runs[i]), errors[i]);
  }

  std::ostringstream sink;
  const auto rows = collect_runs(o.base.out, err);
  write_text(o.base.out / "report.csv", report_csv(rows));
  out << "wrote " << (o.base.out / "report.csv").string() << '\n';
  return rows;
}

// ---------------------------------------------------------------- parsing

inline std::string join_args(int argc, const char* const* argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

/// Splices `key=value` defaults from --config PATH into the argument list
/// for every option the command line does not already set.
inline std::vector<std::string> apply_config_defaults(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::optional<std::string> config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (!config) return out;
  const auto kv = read_key_values(*config);
  auto given = [&](const std::string& key) {
    return std::any_of(out.begin(), out.end(), [&](const std::string& a) {
      return a == "--" + key || a.rfind("--" + key + "=", 0) == 0;
    });
  };
  // Defaults go right after the subcommand name (args[1]).
  std::vector<std::string> extra;
  for (const auto& [key, value] : kv) {
    if (given(key)) continue;
    if (value == "true") {
      extra.push_back("--" + key);
    } else if (value != "false") {
      extra.push_back("--" + key);
      extra.push_back(value);
    }
  }
  out.insert(out.begin() + static_cast<long>(std::min<std::size_t>(2, out.size())), extra.begin(), extra.end());
  return out;
}

inline void add_finetune_flags(CLI::App* c, FinetuneOptions& f, bool with_method) {
  c->add_option("--params", f.params, "pretrained parameters (.mtp)")->required();
  c->add_option("--source", f.source, "source-domain dataset (its val split measures forgetting)")->required();
  c->add_option("--target", f.target, "target-domain dataset")->required();
  c->add_option("--out", f.out, "output directory")->required();
  if (with_method) {
    c->add_option("--method", f.method, "naive | passive | active")
        ->check(CLI::IsMember({"naive", "passive", "active"}))
        ->capture_default_str();
  }
  c->add_option("--alpha", f.alpha, "inner learning rate (naive: SGD learning rate)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c->add_option("--beta", f.beta, "meta learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  c->add_option("--meta-steps", f.meta_steps, "meta updates (records)")->capture_default_str();
  c->add_option("--inner-steps", f.inner_steps, "gradient steps per task")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c->add_option("--tau", f.tau, "good/bad DSC threshold")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  c->add_option("--mode", f.mode, "second | first")
      ->check(CLI::IsMember({"second", "first"}))
      ->capture_default_str();
  c->add_option("--split-ratio", f.split_ratio, "inner share of each patient's slices")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
}

/// Parses and dispatches one command line. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  const std::string command_line = join_args(argc, argv);
  std::vector<std::string> args(argv, argv + argc);
  try {
    args = apply_config_defaults(args);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  CLI::App app{"Meta fine-tuning of a small segmentation network across a synthetic domain shift", "metatune"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "expand help for every subcommand");
  app.footer("Any subcommand also accepts --config PATH with key=value defaults; flags override it.");

  GenDataOptions gen;
  auto* g = app.add_subcommand("gen-data", "generate a synthetic dataset");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--domain", gen.domain, "source|glioma|hgg or target|mets|metastasis")->capture_default_str();
  g->add_option("--patients", gen.patients, "number of patients")->check(CLI::PositiveNumber)->capture_default_str();
  g->add_option("--seed", gen.seed, "master seed")->capture_default_str();
  g->add_option("--image-size", gen.gen.image_size, "image height and width")->capture_default_str();
  g->add_option("--slices", gen.gen.slices, "slices per patient")->capture_default_str();
  g->add_option("--noise-sigma", gen.gen.noise_sigma, "Gaussian noise sigma")->capture_default_str();
  g->add_option("--contrast-margin", gen.gen.contrast_margin, "enhancing T1c margin over brain")
      ->capture_default_str();
  bool no_skull = false;
  g->add_flag("--no-skull", no_skull, "omit the bright skull ring");

  PretrainOptions pre;
  auto* p = app.add_subcommand("pretrain", "train on a source-domain dataset");
  p->add_option("--data", pre.data, "source dataset directory")->required();
  p->add_option("--out", pre.out, "output directory")->required();
  p->add_option("--epochs", pre.epochs, "passes over the training split")->capture_default_str();
  p->add_option("--lr", pre.lr, "SGD learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  p->add_option("--seed", pre.seed, "master seed")->capture_default_str();
  p->add_option("--width", pre.width, "base channel width")->check(CLI::PositiveNumber)->capture_default_str();

  FinetuneOptions ft;
  auto* f = app.add_subcommand("finetune", "fine-tune pretrained parameters on the target domain");
  add_finetune_flags(f, ft, true);
  f->add_option("--seed", ft.seed, "master seed")->capture_default_str();
  f->add_option("--order-log", ft.order_log, "write the task order CSV here");

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "per-slice Dice of parameters on a dataset split");
  e->add_option("--params", ev.params, "parameters (.mtp)")->required();
  e->add_option("--data", ev.data, "dataset directory")->required();
  e->add_option("--split", ev.split, "val | train | all")
      ->check(CLI::IsMember({"val", "train", "all"}))
      ->capture_default_str();
  e->add_option("--out", ev.out, "directory for dice.csv and summary.csv")->required();

  ReportOptions rep;
  auto* r = app.add_subcommand("report", "compare fine-tuning runs");
  r->add_option("--runs", rep.runs, "directory of run directories")->required();
  r->add_option("--out", rep.out, "write the comparison CSV here");

  SweepOptions sw;
  auto* s = app.add_subcommand("sweep", "fine-tune every (method, seed) pair and report");
  add_finetune_flags(s, sw.base, false);
  s->add_option("--methods", sw.methods, "methods to run")
      ->delimiter(',')
      ->check(CLI::IsMember({"naive", "passive", "active"}))
      ->capture_default_str();
  s->add_option("--seeds", sw.seeds, "number of seeds")->check(CLI::PositiveNumber)->capture_default_str();
  s->add_option("--first-seed", sw.first_seed, "first seed")->capture_default_str();
  s->add_option("--jobs", sw.jobs, "runs in parallel")->check(CLI::PositiveNumber)->capture_default_str();
  s->add_flag("--order-logs", sw.order_logs, "write order_log.csv in every run directory");

  std::vector<const char*> cargs;
  for (const auto& a : args) cargs.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (g->parsed()) {
      gen.gen.skull = !no_skull;
      try {
        gen.gen.validate();
        parse_domain(gen.domain);
      } catch (const ValueError& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitUsage;
      }
      cmd_gen_data(gen, out);
    } else if (p->parsed()) {
      cmd_pretrain(pre, command_line, out);
    } else if (f->parsed()) {
      try {
        ft.tune_config();
      } catch (const ValueError& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitUsage;
      }
      if (ft.method == "naive" && f->count("--beta") > 0) {
        err << "warning: --beta is ignored by --method naive\n";
      }
      const FinetuneInputs in = load_finetune_inputs(ft.params, ft.source, ft.target);
      finetune_run(ft, in, out);
    } else if (e->parsed()) {
      cmd_eval(ev, out);
    } else if (r->parsed()) {
      if (!cmd_report(rep, out, err)) return kExitRuntime;
    } else if (s->parsed()) {
      try {
        sw.base.tune_config();
      } catch (const ValueError& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitUsage;
      }
      cmd_sweep(sw, out, err);
    }
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace metatune::cli
