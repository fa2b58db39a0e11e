#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ccnn {

/// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);

  std::size_t num_classes() const { return n_; }
  std::uint64_t operator()(std::size_t truth, std::size_t predicted) const { return m_[truth * n_ + predicted]; }
  std::uint64_t total() const;

  void update(std::span<const int> truth, std::span<const int> predicted);
  void add(std::size_t truth, std::size_t predicted, std::uint64_t count = 1);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> m_;
};

struct MetricsReport {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  std::vector<std::uint64_t> support;
};

/// Per-class precision/recall/F1 with 0/0 taken as 0; macro values are
/// unweighted means over every class in the matrix.
MetricsReport compute_metrics(const ConfusionMatrix& cm);

/// JSON document with the report values rounded to 4 decimals.
/// `source_label` records which model produced the numbers (e.g. "best").
std::string metrics_json(const MetricsReport& report, const std::vector<std::string>& class_names,
                         const std::string& source_label = {});

}  // namespace ccnn
