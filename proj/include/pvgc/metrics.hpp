#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace pvgc {

/// Fixed class order for seven-class lesion data.
inline const std::vector<std::string>& lesion_classes() {
  static const std::vector<std::string> names{"AKIEC", "BCC", "BKL", "DF", "MEL", "NV", "VASC"};
  return names;
}

/// Lesion names for seven classes, otherwise class0, class1, ...
std::vector<std::string> class_names(std::size_t classes);

struct MetricsReport {
  std::size_t classes = 0;
  std::vector<std::string> names;
  /// Row-major classes×classes counts indexed [truth][prediction].
  std::vector<std::size_t> confusion;
  std::size_t samples = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  /// Set when some per-class rate had a zero denominator and was reported as 0.
  std::vector<bool> undefined;
  /// Mean loss over the evaluated samples when known.
  double loss = 0.0;
  bool has_loss = false;

  std::size_t count(std::size_t truth, std::size_t pred) const { return confusion[truth * classes + pred]; }
};

MetricsReport compute_metrics(std::vector<std::size_t> confusion, std::size_t classes);
MetricsReport metrics_from_predictions(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                       std::size_t classes);

/// key = value lines followed by a per-class table and the confusion matrix.
std::string metrics_text(const MetricsReport& report);

}  // namespace pvgc
