#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "metatune/error.hpp"
#include "metatune/label_map.hpp"

namespace metatune {

/// Fixed 6-decimal rendering used by every CSV the project writes.
inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline void check_same_shape(const LabelMap& a, const LabelMap& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError("dice", std::vector<std::size_t>{a.height, a.width}, std::vector<std::size_t>{b.height, b.width});
  }
}

struct OverlapCounts {
  std::size_t intersection = 0;
  std::size_t pred = 0;
  std::size_t truth = 0;

  friend bool operator==(const OverlapCounts&, const OverlapCounts&) = default;
};

/// 2|A n B| / (|A| + |B|); both masks empty counts as a perfect 1.0.
inline double dice_from_counts(const OverlapCounts& c) {
  if (c.pred + c.truth == 0) return 1.0;
  return 2.0 * static_cast<double>(c.intersection) / static_cast<double>(c.pred + c.truth);
}

inline double dice(const LabelMap& pred, const LabelMap& truth, std::size_t class_id) {
  check_same_shape(pred, truth);
  OverlapCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.data[i] == class_id;
    const bool t = truth.data[i] == class_id;
    c.pred += p;
    c.truth += t;
    c.intersection += p && t;
  }
  return dice_from_counts(c);
}

struct DiceReport {
  std::vector<double> per_class;       // indexed by class id
  std::vector<OverlapCounts> counts;   // indexed by class id
  double mean_foreground = 1.0;
};

/// Per-class Dice for classes 0..num_classes-1. `mean_foreground` averages
/// classes 1..K-1 that occur in either map; a slice where no foreground class
/// occurs anywhere scores 1.0.
inline DiceReport dice_report(const LabelMap& pred, const LabelMap& truth, std::size_t num_classes) {
  check_same_shape(pred, truth);
  DiceReport r;
  r.counts.assign(num_classes, {});
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::size_t p = pred.data[i], t = truth.data[i];
    if (p >= num_classes || t >= num_classes) {
      throw ValueError("dice_report", "label out of range for " + std::to_string(num_classes) +
                                          " classes");
    }
    ++r.counts[p].pred;
    ++r.counts[t].truth;
    if (p == t) ++r.counts[p].intersection;
  }
  r.per_class.reserve(num_classes);
  for (const OverlapCounts& c : r.counts) r.per_class.push_back(dice_from_counts(c));
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 1; c < num_classes; ++c) {
    if (r.counts[c].pred + r.counts[c].truth == 0) continue;
    sum += r.per_class[c];
    ++present;
  }
  r.mean_foreground = present ? sum / static_cast<double>(present) : 1.0;
  return r;
}

struct SummaryStat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 when n == 1
  std::size_t n = 0;
};

inline SummaryStat summarize(const std::vector<double>& values) {
  if (values.empty()) throw ValueError("aggregate", "empty list");
  SummaryStat s;
  s.n = values.size();
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

struct AggregateReport {
  std::vector<SummaryStat> per_class;
  SummaryStat mean_foreground;
};

inline AggregateReport aggregate(const std::vector<DiceReport>& reports) {
  if (reports.empty()) throw ValueError("aggregate", "empty list");
  const std::size_t k = reports.front().per_class.size();
  AggregateReport out;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> v;
    v.reserve(reports.size());
    for (const DiceReport& r : reports) {
      if (r.per_class.size() != k) throw ValueError("aggregate", "reports disagree on class count");
      v.push_back(r.per_class[c]);
    }
    out.per_class.push_back(summarize(v));
  }
  std::vector<double> fg;
  for (const DiceReport& r : reports) fg.push_back(r.mean_foreground);
  out.mean_foreground = summarize(fg);
  return out;
}

struct SliceReport {
  std::string patient;
  std::size_t slice = 0;
  DiceReport report;
};

inline void write_dice_csv(std::ostream& os, const std::vector<SliceReport>& rows) {
  os << "patient,slice,class,dsc\n";
  for (const SliceReport& r : rows) {
    for (std::size_t c = 0; c < r.report.per_class.size(); ++c) {
      os << r.patient << ',' << r.slice << ',' << c << ',' << fixed6(r.report.per_class[c]) << '\n';
    }
  }
}

/// `class,mean,std,n` rows; the class column is the class id or "mean_fg".
inline void write_summary_csv(std::ostream& os, const AggregateReport& agg) {
  os << "class,mean,std,n\n";
  for (std::size_t c = 0; c < agg.per_class.size(); ++c) {
    const SummaryStat& s = agg.per_class[c];
    os << c << ',' << fixed6(s.mean) << ',' << fixed6(s.std) << ',' << s.n << '\n';
  }
  const SummaryStat& s = agg.mean_foreground;
  os << "mean_fg," << fixed6(s.mean) << ',' << fixed6(s.std) << ',' << s.n << '\n';
}

}  // namespace metatune
