#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace dbr::metrics {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::vector<std::string> class_names;
  std::vector<std::uint64_t> counts;  // C × C, row-major

  std::size_t num_classes() const { return class_names.size(); }
  std::uint64_t at(std::size_t truth, std::size_t pred) const {
    return counts[truth * num_classes() + pred];
  }
  std::uint64_t row_sum(std::size_t c) const;
  std::uint64_t col_sum(std::size_t c) const;
  std::uint64_t total() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// DataError on length mismatch or an index outside [0, C). Names default to
/// the class indices.
ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels,
                          std::size_t num_classes, std::vector<std::string> class_names = {});

/// DataError naming the first class without support.
std::vector<double> recall_per_class(const ConfusionMatrix& cm);
/// A class that is never predicted has precision 0.
std::vector<double> precision_per_class(const ConfusionMatrix& cm);
/// F_beta per class; 0 when precision and recall are both 0.
std::vector<double> fbeta_per_class(const ConfusionMatrix& cm, double beta = 1.0);

/// Mean per-class recall.
double balanced_accuracy(const ConfusionMatrix& cm);
double macro_recall(const ConfusionMatrix& cm);
double macro_f1(const ConfusionMatrix& cm, double beta = 1.0);
/// Fraction of all samples classified correctly.
double micro_recall(const ConfusionMatrix& cm);

struct ClassMetrics {
  std::string name;
  double recall = 0, precision = 0, f1 = 0;
  std::uint64_t support = 0;

  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

struct EvalReport {
  double balanced_accuracy = 0;
  double macro_f1 = 0;
  double macro_recall = 0;
  double micro_recall = 0;
  std::vector<ClassMetrics> per_class;
  ConfusionMatrix confusion;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

EvalReport report(const ConfusionMatrix& cm);
EvalReport report(std::span<const int> preds, std::span<const int> labels,
                  const std::vector<std::string>& class_names);

/// Human-readable per-class table with the headline metrics.
std::string format_table(const EvalReport& r);
/// Tab-separated `metric<TAB>value` lines (headline and per-class), values
/// printed with round-trip precision.
std::string format_metrics_tsv(const EvalReport& r);
/// One row per model: balanced accuracy, F1 and recall.
std::string format_comparison(const std::vector<std::pair<std::string, EvalReport>>& rows);
std::string format_comparison_tsv(const std::vector<std::pair<std::string, EvalReport>>& rows);

/// Heat map of the row-normalized confusion matrix; every cell is a <rect>
/// with a `data-value` attribute holding the normalized value.
std::string confusion_svg(const EvalReport& r);
/// Grouped per-class bars of recall, precision and F1 (`data-value` per bar).
std::string per_class_svg(const EvalReport& r);

}  // namespace dbr::metrics
