#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pvgc/autodiff.hpp"
#include "pvgc/capsule.hpp"
#include "pvgc/commands.hpp"
#include "pvgc/data.hpp"
#include "pvgc/errors.hpp"
#include "pvgc/graph.hpp"
#include "pvgc/model.hpp"
#include "pvgc/run_config.hpp"
#include "pvgc/train.hpp"
#include "pvgc/verification.hpp"

namespace py = pybind11;
using namespace pvgc;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

std::vector<std::size_t> to_labels(const py::array_t<long long, py::array::c_style | py::array::forcecast>& a) {
  std::vector<std::size_t> out;
  for (py::ssize_t i = 0; i < a.size(); ++i) {
    if (a.data()[i] < 0) throw ContractError("labels must be non-negative");
    out.push_back(static_cast<std::size_t>(a.data()[i]));
  }
  return out;
}

RunConfig run_config(const std::string& preset, const std::vector<std::string>& overrides) {
  return parse_run_config_text("", "python", overrides, preset);
}

py::dict census_dict(const ModelCensus& c) {
  py::list entries;
  for (const auto& e : c.entries) {
    py::dict d;
    d["group"] = e.group;
    d["output_shape"] = e.output_shape;
    d["params"] = e.params;
    d["macs"] = e.macs;
    entries.append(d);
  }
  py::dict out;
  out["params"] = c.params;
  out["flops"] = c.flops;
  out["entries"] = entries;
  return out;
}

py::dict metrics_dict(const MetricsReport& r) {
  py::dict d;
  d["accuracy"] = r.accuracy;
  d["macro_f1"] = r.macro_f1;
  d["precision"] = r.precision;
  d["recall"] = r.recall;
  d["f1"] = r.f1;
  d["confusion"] = r.confusion;
  d["names"] = r.names;
  d["samples"] = r.samples;
  if (r.has_loss) d["loss"] = r.loss;
  return d;
}

class PyModel {
 public:
  PyModel(const std::string& preset, const std::vector<std::string>& overrides, std::uint64_t seed)
      : model_(run_config(preset, overrides).model, seed) {}

  py::dict forward(const Array& images, bool train) {
    ForwardContext ctx{train ? NormMode::train : NormMode::eval, train, nullptr};
    ModelOutput out;
    {
      py::gil_scoped_release release;
      NoGradScope no_grad;
      out = model_.forward(to_tensor(images), ctx);
    }
    py::dict d;
    d["scores"] = to_array(out.scores);
    if (out.capsules.defined()) d["capsules"] = to_array(out.capsules);
    return d;
  }

  std::size_t parameter_count() const { return model_.parameter_count(); }
  std::string head() const { return head_name(model_.config().head); }

 private:
  Model model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Pyramid vision graph network with a capsule head";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DegenerateGraphError>(m, "DegenerateGraphError", base.ptr());
  py::register_exception<DegenerateBatchError>(m, "DegenerateBatchError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<CheckpointError>(m, "CheckpointError", base.ptr());

  m.def(
      "resolved_config",
      [](const std::string& preset, const std::vector<std::string>& overrides) {
        return resolved_config_text(run_config(preset, overrides));
      },
      py::arg("preset") = "micro", py::arg("overrides") = std::vector<std::string>{},
      "Fully resolved configuration text for a preset and key=value overrides.");

  m.def(
      "census",
      [](const std::string& preset, const std::vector<std::string>& overrides) {
        return census_dict(count_params_flops(run_config(preset, overrides).model));
      },
      py::arg("preset") = "tiny", py::arg("overrides") = std::vector<std::string>{},
      "Closed-form parameter and FLOP census.");

  m.def(
      "knn",
      [](const Array& x, std::size_t k, std::size_t dilation) {
        if (x.ndim() != 2) throw ShapeError("knn expects an N×D array");
        auto table = knn_dilated(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                                 static_cast<std::size_t>(x.shape(0)), static_cast<std::size_t>(x.shape(1)), k,
                                 dilation);
        py::array_t<long long> out({static_cast<py::ssize_t>(table.node_count),
                                    static_cast<py::ssize_t>(table.neighbors)});
        std::copy(table.indices.begin(), table.indices.end(), out.mutable_data());
        return out;
      },
      py::arg("features"), py::arg("k"), py::arg("dilation") = 1,
      "Dilated K-nearest neighbors, rows ordered closest first, ties by index.");

  m.def("dilation_for_layer", &dilation_for_layer, py::arg("layer_index"));

  m.def(
      "squash", [](const Array& s) { return to_array(squash(to_tensor(s))); }, py::arg("s"),
      "Capsule squash along the last axis.");

  m.def(
      "dynamic_routing",
      [](const Array& predictions, std::size_t iterations) {
        RoutingTrace trace;
        Tensor v = dynamic_routing(to_tensor(predictions), iterations, &trace);
        py::list couplings;
        for (const auto& c : trace.couplings) couplings.append(to_array(c));
        return py::make_tuple(to_array(v), couplings);
      },
      py::arg("predictions"), py::arg("iterations") = 3,
      "Routing by agreement over B×M×c×d predictions. Returns (capsules, couplings).");

  m.def(
      "margin_loss",
      [](const Array& norms, const py::array_t<long long, py::array::c_style | py::array::forcecast>& targets,
         double m_plus, double m_minus, double lambda) {
        return margin_loss(to_tensor(norms), to_labels(targets), MarginParams{m_plus, m_minus, lambda}).item();
      },
      py::arg("norms"), py::arg("targets"), py::arg("m_plus") = 0.9, py::arg("m_minus") = 0.1,
      py::arg("lam") = 0.5);

  m.def(
      "cross_entropy",
      [](const Array& logits, const py::array_t<long long, py::array::c_style | py::array::forcecast>& targets) {
        return cross_entropy(to_tensor(logits), to_labels(targets)).item();
      },
      py::arg("logits"), py::arg("targets"));

  m.def(
      "compute_metrics",
      [](const std::vector<std::size_t>& confusion, std::size_t classes) {
        return metrics_dict(compute_metrics(confusion, classes));
      },
      py::arg("confusion"), py::arg("classes"), "Metrics of a row-major [truth][prediction] confusion matrix.");

  m.def(
      "gradcheck",
      [](std::size_t instances, std::uint64_t seed) {
        std::vector<CheckResult> results;
        {
          py::gil_scoped_release release;
          PrecisionScope f64(Precision::f64);
          results = run_op_checks(all_op_checks(), instances, seed, 1e-4);
        }
        py::dict out;
        for (const auto& r : results) out[py::str(r.name)] = r.max_error;
        return out;
      },
      py::arg("instances") = 2, py::arg("seed") = 0, "Max relative gradient error per op.");

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, const std::vector<std::string>&, std::uint64_t>(),
           py::arg("preset") = "micro", py::arg("overrides") = std::vector<std::string>{}, py::arg("seed") = 0)
      .def("forward", &PyModel::forward, py::arg("images"), py::arg("train") = false)
      .def_property_readonly("parameter_count", &PyModel::parameter_count)
      .def_property_readonly("head", &PyModel::head);

  m.def(
      "train_synthetic",
      [](std::size_t classes, std::size_t per_class, std::size_t epochs, std::uint64_t seed, bool augment) {
        ModelConfig config = model_preset("micro");
        config.classes = classes;
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.seed = seed;
        cfg.augment = augment;
        TrainResult result;
        MetricsReport report;
        {
          py::gil_scoped_release release;
          auto data = synth_dataset(classes, per_class, config.height, seed);
          Model model(config, seed);
          result = train(model, data, nullptr, cfg);
          report = evaluate(model, data, cfg.batch_size, LossKind::automatic);
        }
        py::list history;
        for (const auto& r : result.history) {
          py::dict d;
          d["epoch"] = r.epoch;
          d["lr"] = r.lr;
          d["train_loss"] = r.train_loss;
          d["train_acc"] = r.train_acc;
          history.append(d);
        }
        py::dict out;
        out["history"] = history;
        out["metrics"] = metrics_dict(report);
        out["best_epoch"] = result.best_epoch;
        return out;
      },
      py::arg("classes") = 2, py::arg("per_class") = 20, py::arg("epochs") = 10, py::arg("seed") = 0,
      py::arg("augment") = true, "Trains the micro preset on synthetic data; metrics are on the training set.");
}
