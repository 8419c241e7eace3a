#include "pvgc/commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>

#include "pvgc/checkpoint.hpp"
#include "pvgc/model.hpp"
#include "pvgc/train.hpp"
#include "pvgc/verification.hpp"

namespace pvgc {

namespace fs = std::filesystem;

const Dataset& Datasets::split(const std::string& name) const {
  const Dataset* d = name == "train" ? train.get() : name == "val" ? val.get() : name == "test" ? test.get() : nullptr;
  if (d == nullptr) throw ConfigError("unknown split '" + name + "'");
  if (d->size() == 0) throw DataError("split '" + name + "' is empty");
  return *d;
}

Datasets load_datasets(const RunConfig& config) {
  Datasets d;
  const std::size_t size = config.model.height;
  if (config.synthetic) {
    const std::size_t c = config.model.classes;
    d.train = std::make_unique<InMemoryDataset>(synth_dataset(c, config.synthetic_per_class, size, config.synthetic_seed));
    d.val = std::make_unique<InMemoryDataset>(
        synth_dataset(c, config.synthetic_val_per_class, size, config.synthetic_seed + 1));
    d.test = std::make_unique<InMemoryDataset>(
        synth_dataset(c, config.synthetic_test_per_class, size, config.synthetic_seed + 2));
    return d;
  }
  ManifestSplits splits = stratified_split(load_manifest(config.metadata, config.image_dir), config.split);
  d.train = std::make_unique<ImageDataset>(std::move(splits.train), size);
  d.val = std::make_unique<ImageDataset>(std::move(splits.val), size);
  d.test = std::make_unique<ImageDataset>(std::move(splits.test), size);
  return d;
}

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const ConfigError*>(&error)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&error)) return kExitData;
  if (dynamic_cast<const NumericError*>(&error)) return kExitNumeric;
  if (dynamic_cast<const CheckpointError*>(&error)) return kExitCheckpoint;
  return kExitFailure;
}

namespace {

// Runs a command body, mapping escaping errors to exit codes.
int guarded(std::ostream& err, const char* command, const std::function<int()>& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    err << "pvgc " << command << ": error: " << e.what() << '\n';
    return code;
  }
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

int cmd_train(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, "train", [&] {
    const RunConfig config = parse_run_config(options.config, options.overrides, options.preset);
    const fs::path dir = config.out_dir;
    fs::create_directories(dir);
    const std::string resolved = resolved_config_text(config);
    write_file(dir / "resolved.cfg", resolved);

    Datasets data = load_datasets(config);
    const Dataset* val = data.val && data.val->size() > 0 ? data.val.get() : nullptr;
    PrecisionScope precision(config.train.precision);
    Model model(config.model, config.train.seed);
    if (!options.quiet) {
      out << "train: " << data.train->size() << " samples, "
          << (val ? std::to_string(val->size()) + " validation samples" : std::string("no validation split")) << ", "
          << model.parameter_count() << " parameters, precision " << precision_name(config.train.precision) << '\n';
    }
    auto progress = [&](const EpochRecord& r) {
      if (options.quiet) return;
      out << "epoch " << r.epoch << "/" << config.train.epochs << "  lr " << r.lr << "  loss " << fixed(r.train_loss, 6)
          << "  acc " << fixed(r.train_acc, 4);
      if (val) out << "  val_loss " << fixed(r.val_loss, 6) << "  val_acc " << fixed(r.val_acc, 4);
      out << '\n';
    };
    TrainResult result = train(model, *data.train, val, config.train, resolved, progress);
    write_file(dir / "history.tsv", history_tsv(result.history));
    checkpoint_save(dir / "best.ckpt", result.best);

    Model best = model_from_checkpoint(result.best);
    const Dataset& report_set = val ? *val : *data.train;
    MetricsReport report = evaluate(best, report_set, config.train.batch_size, config.train.loss, config.train.margin);
    std::string text = "split = " + std::string(val ? "val" : "train") + "\n";
    text += "best_epoch = " + std::to_string(result.best_epoch) + "\n";
    text += metrics_text(report);
    write_file(dir / "metrics.txt", text);
    if (!options.quiet) {
      out << "best epoch " << result.best_epoch << ", " << (val ? "val" : "train") << " accuracy "
          << fixed(report.accuracy, 4) << ", macro F1 " << fixed(report.macro_f1, 4) << '\n';
      out << "wrote " << (dir / "best.ckpt").string() << '\n';
    }
    return int{kExitOk};
  });
}

int cmd_eval(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, "eval", [&] {
    if (!options.checkpoint) throw ConfigError("eval needs --checkpoint PATH");
    const Checkpoint ckpt = checkpoint_load(*options.checkpoint);
    RunConfig config;
    if (options.config) {
      config = parse_run_config(options.config, options.overrides, options.preset);
    } else {
      config = parse_run_config_text(ckpt.metadata, options.checkpoint->string() + " (embedded config)",
                                     options.overrides, options.preset);
    }
    if (!(config.model == ckpt.config)) {
      throw ModelMismatchError("configured model differs from the checkpoint's model:\n--- checkpoint\n" +
                               model_config_text(ckpt.config) + "--- configured\n" + model_config_text(config.model));
    }
    Model model = model_from_checkpoint(ckpt);
    Datasets data = load_datasets(config);
    PrecisionScope precision(config.train.precision);
    MetricsReport report =
        evaluate(model, data.split(config.eval_split), config.train.batch_size, config.train.loss, config.train.margin);
    out << "split = " << config.eval_split << '\n';
    out << "checkpoint_epoch = " << ckpt.epoch << '\n';
    out << metrics_text(report);
    return int{kExitOk};
  });
}

int run_gradcheck(const RunConfig& config, const std::vector<OpCheck>& checks, std::ostream& out, std::ostream& err) {
  PrecisionScope precision(Precision::f64);
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  std::vector<std::string> failures;
  auto line = [&](const std::string& kind, const CheckResult& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-5s %-24s instances %3zu  max_rel_err %.3e  threshold %.0e  %s", kind.c_str(),
                  r.name.c_str(), r.instances, r.max_error, r.threshold, r.passed() ? "PASS" : "FAIL");
    out << buf << '\n';
    out.flush();
    if (!r.passed()) failures.push_back(r.name);
  };
  run_op_checks(checks, config.gradcheck_instances, config.train.seed, config.gradcheck_op_tol,
                [&](const CheckResult& r) { line("op", r); });

  ModelConfig model = config.model;
  if (model.height > 64 || model.width > 64) {
    out << "note: end-to-end check uses the micro preset (configured input " << model.height << "×" << model.width
        << " is too large for finite differences)\n";
    model = model_preset("micro");
  }
  CheckResult e2e{"model-" + std::string(head_name(model.head)), 1,
                  end_to_end_check(model, config.train.seed, config.gradcheck_coords), config.gradcheck_model_tol};
  line("model", e2e);
  const double seconds = std::chrono::duration<double>(clock::now() - start).count();
  out << "checked " << checks.size() << " ops and 1 model in " << fixed(seconds, 1) << " s\n";
  if (!failures.empty()) {
    std::string names;
    for (const auto& n : failures) names += (names.empty() ? "" : ", ") + n;
    err << "pvgc gradcheck: threshold exceeded by: " << names << '\n';
    return int{kExitGradcheck};
  }
  out << "all gradient checks passed\n";
  return int{kExitOk};
}

int cmd_gradcheck(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, "gradcheck", [&] {
    const RunConfig config = parse_run_config(options.config, options.overrides, options.preset);
    return run_gradcheck(config, all_op_checks(), out, err);
  });
}

int cmd_inspect(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, "inspect", [&] {
    const RunConfig config = parse_run_config(options.config, options.overrides, options.preset);
    out << "input " << config.model.height << "×" << config.model.width << ", " << config.model.classes
        << " classes, preset " << config.preset << "\n\n";
    for (HeadKind head : {HeadKind::pooling_mlp, HeadKind::capsule}) {
      ModelConfig m = config.model;
      m.head = head;
      const ModelCensus census = count_params_flops(m);
      out << "[" << head_name(head) << "]\n";
      char buf[160];
      std::snprintf(buf, sizeof buf, "%-10s %-14s %12s %16s\n", "group", "output", "params", "MACs");
      out << buf;
      for (const auto& e : census.entries) {
        std::snprintf(buf, sizeof buf, "%-10s %-14s %12zu %16zu\n", e.group.c_str(), e.output_shape.c_str(), e.params,
                      e.macs);
        out << buf;
      }
      out << "total params " << census.params << " (" << fixed(census.params / 1e6, 3) << " M)\n";
      out << "total FLOPs  " << census.flops << " (" << fixed(census.flops / 1e9, 3) << " G)\n\n";
    }
    return int{kExitOk};
  });
}

}  // namespace pvgc
