#pragma once

// Confusion-matrix evaluation. Rows are ground truth, columns prediction.
//
// Pooled scores (MIOU, PA, MA, per-class IoU/Dice) come from one matrix
// accumulated over the whole dataset. The per-class "jaccard" column is the
// per-image IoU averaged over images where the class has non-zero union.
// Classes with zero union (absent from both truth and prediction) are left
// out of every mean.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "eyenet/errors.hpp"
#include "eyenet/labels.hpp"

namespace eyenet {

struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts)
      for (auto v : row) t += v;
    return t;
  }
  std::uint64_t tp(std::size_t c) const { return counts[c][c]; }
  std::uint64_t row_sum(std::size_t c) const {
    std::uint64_t s = 0;
    for (auto v : counts[c]) s += v;
    return s;
  }
  std::uint64_t col_sum(std::size_t c) const {
    std::uint64_t s = 0;
    for (const auto& row : counts) s += row[c];
    return s;
  }
  // TP + FP + FN.
  std::uint64_t union_count(std::size_t c) const { return row_sum(c) + col_sum(c) - tp(c); }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    for (std::size_t t = 0; t < kNumClasses; ++t)
      for (std::size_t p = 0; p < kNumClasses; ++p) counts[t][p] += o.counts[t][p];
    return *this;
  }
  friend ConfusionMatrix operator+(ConfusionMatrix a, const ConfusionMatrix& b) { return a += b; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& truth) {
  if (pred.h != truth.h || pred.w != truth.w) {
    throw ShapeError("confusion: prediction " + std::to_string(pred.h) + "x" + std::to_string(pred.w) +
                     " vs truth " + std::to_string(truth.h) + "x" + std::to_string(truth.w));
  }
  validate_labels(pred);
  validate_labels(truth);
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < pred.size(); ++i) ++cm.counts[truth.data[i]][pred.data[i]];
  return cm;
}

namespace detail {
inline void require_pixels(const ConfusionMatrix& cm, const char* what) {
  if (cm.total() == 0) throw ContractError(std::string(what) + ": empty confusion matrix");
}
}  // namespace detail

inline double class_iou(const ConfusionMatrix& cm, std::size_t c) {
  const auto u = cm.union_count(c);
  return u == 0 ? 0.0 : double(cm.tp(c)) / double(u);
}

inline double class_dice(const ConfusionMatrix& cm, std::size_t c) {
  const auto denom = cm.row_sum(c) + cm.col_sum(c);
  return denom == 0 ? 0.0 : 2.0 * double(cm.tp(c)) / double(denom);
}

inline double miou(const ConfusionMatrix& cm) {
  detail::require_pixels(cm, "miou");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (cm.union_count(c) == 0) continue;
    acc += class_iou(cm, c);
    ++n;
  }
  return acc / double(n);
}

inline double pixel_accuracy(const ConfusionMatrix& cm) {
  detail::require_pixels(cm, "pixel_accuracy");
  std::uint64_t trace = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) trace += cm.tp(c);
  return double(trace) / double(cm.total());
}

// Mean over classes present in the truth of TP / row sum.
inline double mean_accuracy(const ConfusionMatrix& cm) {
  detail::require_pixels(cm, "mean_accuracy");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto r = cm.row_sum(c);
    if (r == 0) continue;
    acc += double(cm.tp(c)) / double(r);
    ++n;
  }
  return n ? acc / double(n) : 0.0;
}

struct ClassScores {
  double iou = 0.0;
  double dice = 0.0;
  double jaccard = 0.0;
  bool present = false;  // non-zero union somewhere
};

inline std::array<ClassScores, kNumClasses> per_class_scores(const ConfusionMatrix& cm) {
  detail::require_pixels(cm, "per_class_scores");
  std::array<ClassScores, kNumClasses> out{};
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    out[c].present = cm.union_count(c) > 0;
    out[c].iou = class_iou(cm, c);
    out[c].dice = class_dice(cm, c);
    out[c].jaccard = out[c].iou;
  }
  return out;
}

struct MetricReport {
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  double mean_accuracy = 0.0;
  double mean_dice = 0.0;  // over present classes
  std::array<ClassScores, kNumClasses> per_class{};
  std::uint64_t pixel_total = 0;
  std::size_t images = 0;
};

// Accumulates per-image confusion matrices; shardable (merge is additive).
class MetricAccumulator {
 public:
  void add(const ConfusionMatrix& cm) {
    pooled_ += cm;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      if (cm.union_count(c) == 0) continue;
      jaccard_sum_[c] += class_iou(cm, c);
      ++jaccard_n_[c];
    }
    ++images_;
  }
  void add(const LabelMap& pred, const LabelMap& truth) { add(confusion(pred, truth)); }

  void merge(const MetricAccumulator& o) {
    pooled_ += o.pooled_;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      jaccard_sum_[c] += o.jaccard_sum_[c];
      jaccard_n_[c] += o.jaccard_n_[c];
    }
    images_ += o.images_;
  }

  const ConfusionMatrix& pooled() const { return pooled_; }

  MetricReport report() const {
    MetricReport r;
    r.miou = miou(pooled_);
    r.pixel_accuracy = pixel_accuracy(pooled_);
    r.mean_accuracy = mean_accuracy(pooled_);
    r.per_class = per_class_scores(pooled_);
    double dsum = 0.0;
    std::size_t dn = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      r.per_class[c].jaccard = jaccard_n_[c] ? jaccard_sum_[c] / double(jaccard_n_[c]) : 0.0;
      if (r.per_class[c].present) {
        dsum += r.per_class[c].dice;
        ++dn;
      }
    }
    r.mean_dice = dn ? dsum / double(dn) : 0.0;
    r.pixel_total = pooled_.total();
    r.images = images_;
    return r;
  }

 private:
  ConfusionMatrix pooled_;
  std::array<double, kNumClasses> jaccard_sum_{};
  std::array<std::size_t, kNumClasses> jaccard_n_{};
  std::size_t images_ = 0;
};

inline MetricReport evaluate(std::span<const LabelMap> preds, std::span<const LabelMap> truths) {
  if (preds.size() != truths.size()) throw ContractError("evaluate: prediction/truth count mismatch");
  MetricAccumulator acc;
  for (std::size_t i = 0; i < preds.size(); ++i) acc.add(preds[i], truths[i]);
  return acc.report();
}

// Human-readable table.
inline void print_table(std::ostream& os, const MetricReport& r) {
  os << std::fixed << std::setprecision(4);
  os << "images " << r.images << ", pixels " << r.pixel_total << "\n";
  os << "PA " << r.pixel_accuracy << "  MA " << r.mean_accuracy << "  Dice " << r.mean_dice << "  MIOU " << r.miou
     << "\n";
  os << std::left << std::setw(12) << "class" << std::right << std::setw(10) << "dice" << std::setw(10) << "jaccard"
     << std::setw(10) << "iou" << "\n";
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    os << std::left << std::setw(12) << kClassNames[c] << std::right;
    if (!r.per_class[c].present) {
      os << std::setw(10) << "-" << std::setw(10) << "-" << std::setw(10) << "-" << "\n";
      continue;
    }
    os << std::setw(10) << r.per_class[c].dice << std::setw(10) << r.per_class[c].jaccard << std::setw(10)
       << r.per_class[c].iou << "\n";
  }
  os.unsetf(std::ios::floatfield);
}

// Machine-readable key=value lines.
inline void print_key_values(std::ostream& os, const MetricReport& r) {
  std::ostringstream ss;
  ss << std::setprecision(17);
  ss << "images=" << r.images << "\n";
  ss << "pixel_total=" << r.pixel_total << "\n";
  ss << "miou=" << r.miou << "\n";
  ss << "pixel_accuracy=" << r.pixel_accuracy << "\n";
  ss << "mean_accuracy=" << r.mean_accuracy << "\n";
  ss << "mean_dice=" << r.mean_dice << "\n";
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& s = r.per_class[c];
    ss << kClassNames[c] << ".present=" << (s.present ? 1 : 0) << "\n";
    ss << kClassNames[c] << ".iou=" << s.iou << "\n";
    ss << kClassNames[c] << ".dice=" << s.dice << "\n";
    ss << kClassNames[c] << ".jaccard=" << s.jaccard << "\n";
  }
  os << ss.str();
}

}  // namespace eyenet
