#include "pvgc/metrics.hpp"

#include <sstream>

#include "pvgc/detail/format.hpp"
#include "pvgc/errors.hpp"

namespace pvgc {

std::vector<std::string> class_names(std::size_t classes) {
  if (classes == lesion_classes().size()) return lesion_classes();
  std::vector<std::string> out;
  for (std::size_t i = 0; i < classes; ++i) out.push_back("class" + std::to_string(i));
  return out;
}

MetricsReport compute_metrics(std::vector<std::size_t> confusion, std::size_t classes) {
  if (classes == 0 || confusion.size() != classes * classes) {
    throw ContractError("confusion matrix needs " + std::to_string(classes * classes) + " entries, got " +
                        std::to_string(confusion.size()));
  }
  MetricsReport r;
  r.classes = classes;
  r.names = class_names(classes);
  r.confusion = std::move(confusion);
  std::size_t diagonal = 0;
  for (std::size_t i = 0; i < classes; ++i) {
    diagonal += r.count(i, i);
    for (std::size_t j = 0; j < classes; ++j) r.samples += r.count(i, j);
  }
  if (r.samples == 0) throw ContractError("metrics of an empty dataset");
  r.accuracy = static_cast<double>(diagonal) / static_cast<double>(r.samples);
  r.precision.assign(classes, 0.0);
  r.recall.assign(classes, 0.0);
  r.f1.assign(classes, 0.0);
  r.undefined.assign(classes, false);
  double f1_sum = 0.0;
  for (std::size_t k = 0; k < classes; ++k) {
    std::size_t tp = r.count(k, k), fp = 0, fn = 0;
    for (std::size_t j = 0; j < classes; ++j) {
      if (j == k) continue;
      fp += r.count(j, k);
      fn += r.count(k, j);
    }
    if (tp + fp > 0) {
      r.precision[k] = static_cast<double>(tp) / static_cast<double>(tp + fp);
    } else {
      r.undefined[k] = true;
    }
    if (tp + fn > 0) {
      r.recall[k] = static_cast<double>(tp) / static_cast<double>(tp + fn);
    } else {
      r.undefined[k] = true;
    }
    // Harmonic mean of precision and recall; 0 when either is 0.
    if (tp > 0) r.f1[k] = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    f1_sum += r.f1[k];
  }
  r.macro_f1 = f1_sum / static_cast<double>(classes);
  return r;
}

MetricsReport metrics_from_predictions(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                       std::size_t classes) {
  if (truth.size() != predicted.size()) {
    throw ContractError("metrics: " + std::to_string(truth.size()) + " labels but " +
                        std::to_string(predicted.size()) + " predictions");
  }
  std::vector<std::size_t> confusion(classes * classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || predicted[i] >= classes) {
      throw ContractError("metrics: class index outside " + std::to_string(classes) + " classes");
    }
    ++confusion[truth[i] * classes + predicted[i]];
  }
  return compute_metrics(std::move(confusion), classes);
}

namespace {

std::string fmt(double v) { return detail::real_text(v); }

}  // namespace

std::string metrics_text(const MetricsReport& r) {
  std::ostringstream out;
  out << "samples = " << r.samples << '\n';
  out << "classes = " << r.classes << '\n';
  out << "accuracy = " << fmt(r.accuracy) << '\n';
  out << "macro_f1 = " << fmt(r.macro_f1) << '\n';
  if (r.has_loss) out << "loss = " << fmt(r.loss) << '\n';
  out << "\n[per_class]\n";
  out << "# class precision recall f1 support undefined\n";
  for (std::size_t k = 0; k < r.classes; ++k) {
    std::size_t support = 0;
    for (std::size_t j = 0; j < r.classes; ++j) support += r.count(k, j);
    out << r.names[k] << ' ' << fmt(r.precision[k]) << ' ' << fmt(r.recall[k]) << ' ' << fmt(r.f1[k]) << ' '
        << support << ' ' << (r.undefined[k] ? "yes" : "no") << '\n';
  }
  out << "\n[confusion]\n";
  out << "# rows: truth, columns: prediction\n";
  for (std::size_t i = 0; i < r.classes; ++i) {
    for (std::size_t j = 0; j < r.classes; ++j) out << (j ? " " : "") << r.count(i, j);
    out << '\n';
  }
  return out.str();
}

}  // namespace pvgc
