#include "cdssl/metrics.hpp"

#include <cstdio>

#include <boost/multiprecision/cpp_int.hpp>

#include "cdssl/errors.hpp"

namespace cdssl {

namespace {

using Rational = boost::multiprecision::cpp_rational;
using boost::multiprecision::cpp_int;

struct Ratio {
  Rational value;
  bool undefined = false;
};

Ratio ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return {Rational(0), true};
  return {Rational(cpp_int(num), cpp_int(den)), false};
}

Percent to_percent(const Ratio& r) {
  // floor(10000 * q + 1/2) for q >= 0
  const Rational scaled = r.value * 10000 + Rational(1, 2);
  const cpp_int q = boost::multiprecision::numerator(scaled) / boost::multiprecision::denominator(scaled);
  return {q.convert_to<std::int64_t>(), r.undefined};
}

struct ClassRatios {
  Ratio precision, recall, f1;
};

ClassRatios class_ratios(const ConfusionMatrix& m, std::size_t k) {
  std::uint64_t tp = m[k][k], predicted = 0, actual = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    predicted += m[i][k];
    actual += m[k][i];
  }
  ClassRatios r{ratio(tp, predicted), ratio(tp, actual), ratio(2 * tp, predicted + actual)};
  // 2PR/(P+R) reduces to 2TP/(2TP+FP+FN); P+R vanishes exactly when TP does.
  if (tp == 0) r.f1 = {Rational(0), true};
  return r;
}

}  // namespace

ConfusionMatrix make_confusion(std::size_t num_classes) {
  return ConfusionMatrix(num_classes, std::vector<std::uint64_t>(num_classes, 0));
}

ConfusionMatrix confusion_from_predictions(const std::vector<int>& truth, const std::vector<int>& predicted,
                                           std::size_t num_classes) {
  if (truth.size() != predicted.size()) throw ValidationError("truth and prediction counts differ");
  ConfusionMatrix m = make_confusion(num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= num_classes || static_cast<std::size_t>(p) >= num_classes)
      throw ValidationError("class index out of range in confusion counts");
    ++m[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  return m;
}

std::string Percent::str() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%lld.%02lld", hundredths < 0 ? "-" : "",
                static_cast<long long>(std::llabs(hundredths) / 100), static_cast<long long>(std::llabs(hundredths) % 100));
  return buf;
}

MetricsTuple compute_metrics(const ConfusionMatrix& confusion, LabelScheme::Kind kind) {
  const std::size_t c = confusion.size();
  if (c < 2) throw ValidationError("confusion matrix needs at least two classes");
  for (const auto& row : confusion)
    if (row.size() != c) throw ValidationError("confusion matrix must be square");
  if (kind == LabelScheme::Kind::binary && c != 2) throw ValidationError("binary metrics need a 2x2 matrix");

  std::uint64_t total = 0, trace = 0;
  for (std::size_t i = 0; i < c; ++i) {
    trace += confusion[i][i];
    for (std::size_t j = 0; j < c; ++j) total += confusion[i][j];
  }

  MetricsTuple out;
  out.accuracy = to_percent(ratio(trace, total));
  out.zero_denominator = total == 0;

  std::vector<ClassRatios> classes;
  for (std::size_t k = 0; k < c; ++k) {
    classes.push_back(class_ratios(confusion, k));
    const auto& r = classes.back();
    ClassMetrics cm{to_percent(r.precision), to_percent(r.recall), to_percent(r.f1), 0};
    for (std::size_t j = 0; j < c; ++j) cm.support += confusion[k][j];
    out.per_class.push_back(cm);
  }

  if (kind == LabelScheme::Kind::binary) {
    const auto& r = classes[1];
    out.precision = to_percent(r.precision);
    out.recall = to_percent(r.recall);
    out.f1 = to_percent(r.f1);
    out.zero_denominator = out.zero_denominator || r.precision.undefined || r.recall.undefined || r.f1.undefined;
  } else {
    Ratio p{Rational(0)}, rc{Rational(0)}, f{Rational(0)};
    for (const auto& r : classes) {
      p.value += r.precision.value;
      rc.value += r.recall.value;
      f.value += r.f1.value;
      p.undefined = p.undefined || r.precision.undefined;
      rc.undefined = rc.undefined || r.recall.undefined;
      f.undefined = f.undefined || r.f1.undefined;
    }
    const Rational n(static_cast<long long>(c));
    p.value /= n;
    rc.value /= n;
    f.value /= n;
    out.precision = to_percent(p);
    out.recall = to_percent(rc);
    out.f1 = to_percent(f);
    out.zero_denominator = out.zero_denominator || p.undefined || rc.undefined || f.undefined;
  }
  return out;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& c : metrics.per_class) {
    per_class.push_back({{"precision", c.precision.value()},
                         {"recall", c.recall.value()},
                         {"f1", c.f1.value()},
                         {"support", c.support}});
  }
  return {{"dataset", dataset},
          {"task", task},
          {"fraction", fraction},
          {"sample_count", sample_count},
          {"accuracy", metrics.accuracy.value()},
          {"precision", metrics.precision.value()},
          {"recall", metrics.recall.value()},
          {"f1", metrics.f1.value()},
          {"zero_denominator", metrics.zero_denominator},
          {"confusion", confusion},
          {"per_class", per_class}};
}

MetricsReport make_report(const ConfusionMatrix& confusion, LabelScheme::Kind kind, std::string dataset,
                          double fraction) {
  MetricsReport r;
  r.dataset = std::move(dataset);
  r.task = kind == LabelScheme::Kind::binary ? "binary" : "multiclass";
  r.fraction = fraction;
  r.confusion = confusion;
  r.metrics = compute_metrics(confusion, kind);
  for (const auto& row : confusion)
    for (auto v : row) r.sample_count += v;
  return r;
}

}  // namespace cdssl
