#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdssl/datasets.hpp"

namespace cdssl {

/// Rows are the true class, columns the predicted class.
using ConfusionMatrix = std::vector<std::vector<std::uint64_t>>;

ConfusionMatrix make_confusion(std::size_t num_classes);
ConfusionMatrix confusion_from_predictions(const std::vector<int>& truth, const std::vector<int>& predicted,
                                           std::size_t num_classes);

/// A percentage rounded half-up to hundredths, kept as an integer so formatting is exact.
struct Percent {
  std::int64_t hundredths = 0;
  bool undefined = false;  // a zero denominator produced this value

  double value() const { return static_cast<double>(hundredths) / 100.0; }
  std::string str() const;
  bool operator==(const Percent&) const = default;
};

struct ClassMetrics {
  Percent precision;
  Percent recall;
  Percent f1;
  std::uint64_t support = 0;
};

struct MetricsTuple {
  Percent accuracy;
  Percent precision;
  Percent recall;
  Percent f1;
  std::vector<ClassMetrics> per_class;
  /// Some precision/recall/F1 term had a zero denominator and was taken as 0.
  bool zero_denominator = false;
};

/// Binary: positive-class (index 1) precision/recall/F1. Multiclass: macro
/// averages over every class. All arithmetic is exact before rounding.
MetricsTuple compute_metrics(const ConfusionMatrix& confusion, LabelScheme::Kind kind);

struct MetricsReport {
  std::string dataset;
  std::string task;
  double fraction = 1.0;
  ConfusionMatrix confusion;
  MetricsTuple metrics;
  std::uint64_t sample_count = 0;

  nlohmann::json to_json() const;
};

MetricsReport make_report(const ConfusionMatrix& confusion, LabelScheme::Kind kind, std::string dataset,
                          double fraction);

}  // namespace cdssl
