#pragma once

// Task decomposition and meta-batch ordering.
//
// A pool's samples are scored by the current model (mean foreground Dice of
// its prediction) and split at threshold tau into good (learned) and bad
// (unlearned) tasks. Schedules pair an inner-loop sample D with an
// outer-loop sample D', alternating bad, good, bad, good, ...

#include <algorithm>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "metatune/metrics.hpp"
#include "metatune/rng.hpp"
#include "metatune/sample.hpp"
#include "metatune/segnet.hpp"

namespace metatune {

enum class Pool { inner, outer };
enum class Origin { good, bad, none };
enum class Method { naive, passive, active };

inline std::string to_string(Pool p) { return p == Pool::inner ? "inner" : "outer"; }
inline std::string to_string(Origin o) {
  switch (o) {
    case Origin::good: return "good";
    case Origin::bad: return "bad";
    case Origin::none: return "none";
  }
  return "none";
}
inline std::string to_string(Method m) {
  switch (m) {
    case Method::naive: return "naive";
    case Method::passive: return "passive";
    case Method::active: return "active";
  }
  return "naive";
}
inline Method parse_method(const std::string& s) {
  if (s == "naive") return Method::naive;
  if (s == "passive") return Method::passive;
  if (s == "active") return Method::active;
  throw ValueError("method", "unknown method '" + s + "' (valid: naive, passive, active)");
}

struct SampleRef {
  std::string patient;
  std::size_t slice = 0;
  Pool pool = Pool::inner;
  const Sample* sample = nullptr;  // not owned
};

struct ScoredSample {
  SampleRef ref;
  double score = 0.0;
};

struct TaskPartition {
  std::vector<ScoredSample> good;  // score >= tau
  std::vector<ScoredSample> bad;   // score < tau
  double tau = 0.5;
};

struct ScheduledPair {
  ScoredSample inner;
  std::optional<ScoredSample> outer;  // empty for naive schedules
  Origin origin = Origin::none;
};

struct OrderedSchedule {
  Method method = Method::naive;
  std::uint64_t seed = 0;
  std::vector<ScheduledPair> pairs;
};

/// Shuffles slice indices 0..n-1 with Rng(seed); the first floor(ratio * n)
/// (clamped to 1..n-1) form the inner pool, the rest the outer pool.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_inner_outer(
    std::size_t n, double ratio, std::uint64_t seed) {
  if (n < 2) throw ValueError("split_inner_outer", "need at least 2 slices, got " + std::to_string(n));
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValueError("split_inner_outer", "ratio must be in (0, 1)");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  const auto k = std::clamp<std::size_t>(static_cast<std::size_t>(ratio * static_cast<double>(n)), 1, n - 1);
  return {std::vector<std::size_t>(idx.begin(), idx.begin() + static_cast<long>(k)),
          std::vector<std::size_t>(idx.begin() + static_cast<long>(k), idx.end())};
}

/// Mean foreground Dice of the model's prediction on one sample.
inline double score_sample(const ParamVector& params, const Sample& s) {
  return dice_report(predict(params, s.image), s.labels, params.config.num_classes).mean_foreground;
}

/// Splits already-scored samples at tau (ties go to good).
inline TaskPartition partition_by_score(std::vector<ScoredSample> scored, double tau) {
  TaskPartition p;
  p.tau = tau;
  for (ScoredSample& s : scored) (s.score >= tau ? p.good : p.bad).push_back(std::move(s));
  return p;
}

inline TaskPartition decompose_tasks(const ParamVector& params, std::span<const SampleRef> pool, double tau) {
  if (pool.empty()) throw ValueError("decompose_tasks", "empty pool");
  std::vector<ScoredSample> scored;
  scored.reserve(pool.size());
  for (const SampleRef& r : pool) scored.push_back({r, score_sample(params, *r.sample)});
  return partition_by_score(std::move(scored), tau);
}

namespace sampler_detail {

inline bool ref_less(const SampleRef& a, const SampleRef& b) {
  return a.patient != b.patient ? a.patient < b.patient : a.slice < b.slice;
}

/// bad, good, bad, good, ... continuing with whichever set remains.
inline std::vector<std::pair<ScoredSample, Origin>> alternate(const std::vector<ScoredSample>& bad,
                                                              const std::vector<ScoredSample>& good) {
  std::vector<std::pair<ScoredSample, Origin>> out;
  std::size_t b = 0, g = 0;
  while (b < bad.size() || g < good.size()) {
    if (b < bad.size()) out.emplace_back(bad[b++], Origin::bad);
    if (g < good.size()) out.emplace_back(good[g++], Origin::good);
  }
  return out;
}

inline void require_pools(const TaskPartition& inner, const TaskPartition& outer, const char* op) {
  if (inner.good.empty() && inner.bad.empty()) throw ValueError(op, "empty inner pool");
  if (outer.good.empty() && outer.bad.empty()) throw ValueError(op, "empty outer pool");
}

/// Outer pool with per-sample consumption flags for one meta-batch.
class OuterPicker {
 public:
  explicit OuterPicker(const TaskPartition& outer) {
    for (const auto& s : outer.good) items_.push_back({s, Origin::good, false});
    for (const auto& s : outer.bad) items_.push_back({s, Origin::bad, false});
  }

  /// Chooses among unconsumed items of the matching origin, falling back to
  /// every unconsumed item, and (only once the pool is exhausted) to all.
  template <class Choose>
  ScoredSample take(Origin origin, Choose choose) {
    std::vector<std::size_t> cand = candidates([&](const Item& it) { return !it.used && it.origin == origin; });
    if (cand.empty()) cand = candidates([](const Item& it) { return !it.used; });
    if (cand.empty()) {
      for (Item& it : items_) it.used = false;
      cand = candidates([](const Item&) { return true; });
    }
    const std::size_t pick = choose(items_, cand);
    items_[pick].used = true;
    return items_[pick].sample;
  }

  struct Item {
    ScoredSample sample;
    Origin origin;
    bool used;
  };

 private:
  template <class Pred>
  std::vector<std::size_t> candidates(Pred pred) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < items_.size(); ++i) {
      if (pred(items_[i])) out.push_back(i);
    }
    return out;
  }

  std::vector<Item> items_;
};

}  // namespace sampler_detail

/// Random order within good and within bad, alternated; each D' is drawn at
/// random from the outer pool's matching partition.
inline OrderedSchedule order_passive(const TaskPartition& inner, const TaskPartition& outer,
                                     std::uint64_t seed) {
  using namespace sampler_detail;
  require_pools(inner, outer, "order_passive");
  Rng rng(seed);
  std::vector<ScoredSample> good = inner.good, bad = inner.bad;
  rng.shuffle(good);
  rng.shuffle(bad);
  OuterPicker picker(outer);
  OrderedSchedule sched{Method::passive, seed, {}};
  for (auto& [s, origin] : alternate(bad, good)) {
    ScoredSample d2 = picker.take(origin, [&](const auto&, const std::vector<std::size_t>& cand) {
      return cand[rng.index(cand.size())];
    });
    sched.pairs.push_back({s, std::move(d2), origin});
  }
  return sched;
}

/// Bad tasks by ascending score (least learned first), good tasks by
/// descending score; ties by (patient, slice). Each D' is the extreme
/// remaining outer sample of the matching partition: minimum score for bad
/// pairs, maximum for good pairs.
inline OrderedSchedule order_active(const TaskPartition& inner, const TaskPartition& outer) {
  using namespace sampler_detail;
  require_pools(inner, outer, "order_active");
  std::vector<ScoredSample> good = inner.good, bad = inner.bad;
  std::stable_sort(bad.begin(), bad.end(), [](const ScoredSample& a, const ScoredSample& b) {
    return a.score != b.score ? a.score < b.score : ref_less(a.ref, b.ref);
  });
  std::stable_sort(good.begin(), good.end(), [](const ScoredSample& a, const ScoredSample& b) {
    return a.score != b.score ? a.score > b.score : ref_less(a.ref, b.ref);
  });
  OuterPicker picker(outer);
  OrderedSchedule sched{Method::active, 0, {}};
  for (auto& [s, origin] : alternate(bad, good)) {
    const bool want_min = origin == Origin::bad;
    ScoredSample d2 = picker.take(origin, [&](const auto& items, const std::vector<std::size_t>& cand) {
      std::size_t best = cand.front();
      for (std::size_t i : cand) {
        const auto& x = items[i].sample;
        const auto& y = items[best].sample;
        const bool better = x.score != y.score ? (want_min ? x.score < y.score : x.score > y.score)
                                               : ref_less(x.ref, y.ref);
        if (better) best = i;
      }
      return best;
    });
    sched.pairs.push_back({s, std::move(d2), origin});
  }
  return sched;
}

/// Seeded shuffle of the whole pool; no partition, no outer samples.
inline OrderedSchedule order_naive(std::span<const SampleRef> pool, std::uint64_t seed) {
  if (pool.empty()) throw ValueError("order_naive", "empty pool");
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  OrderedSchedule sched{Method::naive, seed, {}};
  for (std::size_t i : idx) sched.pairs.push_back({ScoredSample{pool[i], 0.0}, std::nullopt, Origin::none});
  return sched;
}

inline void write_order_log_header(std::ostream& os) {
  os << "meta_batch,position,pool,origin,patient,slice,dsc\n";
}

/// One row per scheduled sample (D and, when present, D').
inline void append_order_log(std::ostream& os, std::size_t meta_batch, const OrderedSchedule& sched) {
  for (std::size_t pos = 0; pos < sched.pairs.size(); ++pos) {
    const ScheduledPair& p = sched.pairs[pos];
    auto row = [&](const ScoredSample& s) {
      os << meta_batch << ',' << pos << ',' << to_string(s.ref.pool) << ',' << to_string(p.origin) << ','
         << s.ref.patient << ',' << s.ref.slice << ',' << fixed6(s.score) << '\n';
    };
    row(p.inner);
    if (p.outer) row(*p.outer);
  }
}

}  // namespace metatune
