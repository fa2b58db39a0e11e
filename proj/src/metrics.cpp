#include "ccnn/metrics.hpp"

#include <cmath>
#include <numeric>

#include <json.hpp>

#include "ccnn/error.hpp"

namespace ccnn {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : n_(num_classes), m_(num_classes * num_classes, 0) {
  if (num_classes == 0) fail(ErrorKind::Precondition, "confusion matrix needs at least one class");
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(m_.begin(), m_.end(), std::uint64_t(0)); }

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t count) {
  if (truth >= n_ || predicted >= n_)
    fail(ErrorKind::Label, "label pair (" + std::to_string(truth) + ", " + std::to_string(predicted) +
                               ") outside [0, " + std::to_string(n_) + ")");
  m_[truth * n_ + predicted] += count;
}

void ConfusionMatrix::update(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size())
    fail(ErrorKind::Dimension, "confusion update: label arrays differ in length");
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (truth[i] < 0 || predicted[i] < 0 || std::size_t(truth[i]) >= n_ || std::size_t(predicted[i]) >= n_)
      fail(ErrorKind::Label, "confusion update: label outside [0, " + std::to_string(n_) + ")");
  for (std::size_t i = 0; i < truth.size(); ++i) m_[std::size_t(truth[i]) * n_ + std::size_t(predicted[i])] += 1;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.n_ != n_) fail(ErrorKind::Dimension, "cannot merge confusion matrices of different size");
  for (std::size_t i = 0; i < m_.size(); ++i) m_[i] += other.m_[i];
  return *this;
}

namespace {
double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }
}  // namespace

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
  const std::size_t n = cm.num_classes();
  const std::uint64_t total = cm.total();
  if (total == 0) fail(ErrorKind::Evaluation, "cannot compute metrics from an empty confusion matrix");

  MetricsReport r;
  std::uint64_t trace = 0;
  for (std::size_t c = 0; c < n; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t k = 0; k < n; ++k) {
      row += cm(c, k);
      col += cm(k, c);
    }
    const double tp = double(cm(c, c));
    trace += cm(c, c);
    const double p = ratio(tp, double(col));
    const double rc = ratio(tp, double(row));
    r.precision.push_back(p);
    r.recall.push_back(rc);
    r.f1.push_back(ratio(2.0 * p * rc, p + rc));
    r.support.push_back(row);
  }
  const auto mean = [n](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(n); };
  r.accuracy = double(trace) / double(total);
  r.macro_precision = mean(r.precision);
  r.macro_recall = mean(r.recall);
  r.macro_f1 = mean(r.f1);
  return r;
}

std::string metrics_json(const MetricsReport& report, const std::vector<std::string>& class_names,
                         const std::string& source_label) {
  const auto fixed4 = [](double v) { return std::round(v * 1e4) / 1e4; };
  const auto fixed4_all = [&](const std::vector<double>& v) {
    std::vector<double> out;
    for (double x : v) out.push_back(fixed4(x));
    return out;
  };
  nlohmann::ordered_json j;
  if (!source_label.empty()) j["model"] = source_label;
  j["accuracy"] = fixed4(report.accuracy);
  j["macro_precision"] = fixed4(report.macro_precision);
  j["macro_recall"] = fixed4(report.macro_recall);
  j["macro_f1"] = fixed4(report.macro_f1);
  j["classes"] = class_names;
  j["precision"] = fixed4_all(report.precision);
  j["recall"] = fixed4_all(report.recall);
  j["f1"] = fixed4_all(report.f1);
  j["support"] = report.support;
  return j.dump(2) + "\n";
}

}  // namespace ccnn
