#include "pvgc/run_config.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <functional>
#include <sstream>

#include "pvgc/detail/format.hpp"
#include "pvgc/metrics.hpp"
#include "pvgc/model.hpp"

namespace pvgc {

namespace {

using detail::real_text;

std::string flag_text(bool v) { return v ? "true" : "false"; }

struct KeySpec {
  std::string section;
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define PVGC_COUNT_KEY(section, name, field)                                       \
  KeySpec {                                                                        \
    section, name, [](RunConfig& c, const std::string& v) { c.field = parse_count(v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                 \
  }
#define PVGC_REAL_KEY(section, name, field)                                       \
  KeySpec {                                                                       \
    section, name, [](RunConfig& c, const std::string& v) { c.field = parse_real(v); }, \
        [](const RunConfig& c) { return real_text(c.field); }                     \
  }
#define PVGC_FLAG_KEY(section, name, field)                                       \
  KeySpec {                                                                       \
    section, name, [](RunConfig& c, const std::string& v) { c.field = parse_flag(v); }, \
        [](const RunConfig& c) { return flag_text(c.field); }                     \
  }
#define PVGC_TEXT_KEY(section, name, field)                                     \
  KeySpec {                                                                     \
    section, name, [](RunConfig& c, const std::string& v) { c.field = v; },     \
        [](const RunConfig& c) { return c.field; }                              \
  }

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = [] {
    std::vector<KeySpec> s{
        PVGC_TEXT_KEY("run", "preset", preset),
        PVGC_TEXT_KEY("run", "out_dir", out_dir),
    };
    for (const auto& [key, value] : model_config_entries(ModelConfig{})) {
      const std::string k = key;
      s.push_back(KeySpec{"model", k,
                          [k](RunConfig& c, const std::string& v) { apply_model_entry(c.model, k, v); },
                          [k](const RunConfig& c) {
                            for (const auto& [mk, mv] : model_config_entries(c.model)) {
                              if (mk == k) return mv;
                            }
                            return std::string{};
                          }});
    }
    std::vector<KeySpec> rest{
        PVGC_COUNT_KEY("train", "epochs", train.epochs),
        PVGC_COUNT_KEY("train", "batch_size", train.batch_size),
        PVGC_COUNT_KEY("train", "warmup_epochs", train.warmup_epochs),
        PVGC_REAL_KEY("train", "lr", train.lr),
        PVGC_REAL_KEY("train", "start_lr", train.start_lr),
        PVGC_REAL_KEY("train", "beta1", train.adamw.beta1),
        PVGC_REAL_KEY("train", "beta2", train.adamw.beta2),
        PVGC_REAL_KEY("train", "adam_eps", train.adamw.eps),
        PVGC_REAL_KEY("train", "weight_decay", train.adamw.weight_decay),
        KeySpec{"train", "loss", [](RunConfig& c, const std::string& v) { c.train.loss = parse_loss(v); },
                [](const RunConfig& c) { return std::string(loss_name(c.train.loss)); }},
        PVGC_REAL_KEY("train", "m_plus", train.margin.m_plus),
        PVGC_REAL_KEY("train", "m_minus", train.margin.m_minus),
        PVGC_REAL_KEY("train", "lambda", train.margin.lambda),
        KeySpec{"train", "seed", [](RunConfig& c, const std::string& v) { c.train.seed = parse_count(v); },
                [](const RunConfig& c) { return std::to_string(c.train.seed); }},
        KeySpec{"train", "precision",
                [](RunConfig& c, const std::string& v) { c.train.precision = parse_precision(v); },
                [](const RunConfig& c) { return std::string(precision_name(c.train.precision)); }},
        PVGC_FLAG_KEY("train", "augment", train.augment),
        PVGC_FLAG_KEY("data", "synthetic", synthetic),
        KeySpec{"data", "synthetic_seed", [](RunConfig& c, const std::string& v) { c.synthetic_seed = parse_count(v); },
                [](const RunConfig& c) { return std::to_string(c.synthetic_seed); }},
        PVGC_COUNT_KEY("data", "synthetic_per_class", synthetic_per_class),
        PVGC_COUNT_KEY("data", "synthetic_val_per_class", synthetic_val_per_class),
        PVGC_COUNT_KEY("data", "synthetic_test_per_class", synthetic_test_per_class),
        PVGC_TEXT_KEY("data", "metadata", metadata),
        PVGC_TEXT_KEY("data", "image_dir", image_dir),
        PVGC_REAL_KEY("data", "split_train", split.train),
        PVGC_REAL_KEY("data", "split_val", split.val),
        PVGC_REAL_KEY("data", "split_test", split.test),
        KeySpec{"data", "split_seed", [](RunConfig& c, const std::string& v) { c.split.seed = parse_count(v); },
                [](const RunConfig& c) { return std::to_string(c.split.seed); }},
        PVGC_TEXT_KEY("data", "eval_split", eval_split),
        PVGC_COUNT_KEY("gradcheck", "gradcheck_instances", gradcheck_instances),
        PVGC_COUNT_KEY("gradcheck", "gradcheck_coords", gradcheck_coords),
        PVGC_REAL_KEY("gradcheck", "gradcheck_op_tol", gradcheck_op_tol),
        PVGC_REAL_KEY("gradcheck", "gradcheck_model_tol", gradcheck_model_tol),
    };
    for (auto& k : rest) s.push_back(std::move(k));
    return s;
  }();
  return specs;
}

#undef PVGC_COUNT_KEY
#undef PVGC_REAL_KEY
#undef PVGC_FLAG_KEY
#undef PVGC_TEXT_KEY

const KeySpec* find_key(const std::string& name) {
  for (const auto& k : key_specs()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

struct Entry {
  std::string section;  // empty when none was given
  std::string key;
  std::string value;
  std::string where;    // "file:line" or "override 'k=v'"
};

// Resolves an optional "section.key" prefix and checks the key exists there.
const KeySpec& resolve(const Entry& e) {
  const KeySpec* spec = find_key(e.key);
  if (spec == nullptr) throw ConfigError(e.where + ": unknown key '" + e.key + "'");
  if (!e.section.empty() && e.section != spec->section) {
    throw ConfigError(e.where + ": key '" + e.key + "' belongs to section [" + spec->section + "], not [" +
                      e.section + "]");
  }
  return *spec;
}

void apply(RunConfig& config, const Entry& e) {
  const KeySpec& spec = resolve(e);
  try {
    spec.set(config, e.value);
  } catch (const ConfigError& err) {
    throw ConfigError(e.where + ": " + e.key + " = " + e.value + ": " + err.what());
  }
}

std::vector<Entry> parse_lines(const std::string& text, const std::string& source) {
  std::vector<Entry> entries;
  std::istringstream in(text);
  std::string line, section;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string where = source + ":" + std::to_string(number);
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      static const std::vector<std::string> known{"run", "model", "train", "data", "gradcheck"};
      if (std::find(known.begin(), known.end(), section) == known.end()) {
        throw ConfigError(where + ": unknown section [" + section + "]");
      }
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
    Entry e{section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where};
    resolve(e);
    for (const auto& prev : entries) {
      if (prev.key == e.key) throw ConfigError(where + ": key '" + e.key + "' already set at " + prev.where);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

Entry parse_override(const std::string& text) {
  const std::string where = "override '" + text + "'";
  auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
  std::string key = trim(text.substr(0, eq));
  std::string section;
  auto dot = key.find('.');
  if (dot != std::string::npos) {
    section = key.substr(0, dot);
    key = key.substr(dot + 1);
  }
  Entry e{section, key, trim(text.substr(eq + 1)), where};
  resolve(e);
  return e;
}

}  // namespace

void RunConfig::validate() const {
  if (!is_model_preset(preset)) throw ConfigError("unknown preset '" + preset + "' (expected tiny or micro)");
  model.validate();
  train.validate();
  split.validate();
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  if (eval_split != "train" && eval_split != "val" && eval_split != "test") {
    throw ConfigError("eval_split must be train, val or test, got '" + eval_split + "'");
  }
  if (synthetic) {
    if (synthetic_per_class < 1) throw ConfigError("synthetic_per_class must be positive");
  } else {
    if (metadata.empty()) throw ConfigError("missing required key 'metadata' in [data] when synthetic = false");
    if (image_dir.empty()) throw ConfigError("missing required key 'image_dir' in [data] when synthetic = false");
    if (model.classes != lesion_classes().size()) {
      throw ConfigError("lesion data has 7 classes but the model is configured for " +
                        std::to_string(model.classes));
    }
  }
  if (model.height != model.width) throw ConfigError("input must be square for the data pipeline");
  if (gradcheck_instances == 0) throw ConfigError("gradcheck_instances must be positive");
  if (!(gradcheck_op_tol > 0.0) || !(gradcheck_model_tol > 0.0)) throw ConfigError("gradcheck tolerances must be positive");
}

RunConfig parse_run_config_text(const std::string& text, const std::string& source,
                                const std::vector<std::string>& overrides,
                                const std::optional<std::string>& preset_flag) {
  const std::vector<Entry> file_entries = parse_lines(text, source);
  std::vector<Entry> override_entries;
  for (const auto& o : overrides) override_entries.push_back(parse_override(o));

  const std::array<const std::vector<Entry>*, 2> sources{&file_entries, &override_entries};

  RunConfig config;
  if (preset_flag) {
    config.preset = *preset_flag;
  } else {
    for (const auto* list : sources) {
      for (const auto& e : *list) {
        if (e.key == "preset") config.preset = e.value;
      }
    }
  }
  if (!is_model_preset(config.preset)) {
    throw ConfigError("unknown preset '" + config.preset + "' (expected tiny or micro)");
  }
  config.model = model_preset(config.preset);
  for (const auto* list : sources) {
    for (const auto& e : *list) {
      if (e.key != "preset") apply(config, e);
    }
  }
  config.validate();
  return config;
}

RunConfig parse_run_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides,
                           const std::optional<std::string>& preset_flag) {
  std::string text;
  std::string source = "<defaults>";
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot read config file " + path->string());
    std::ostringstream buf;
    buf << in.rdbuf();
    text = buf.str();
    source = path->string();
  }
  return parse_run_config_text(text, source, overrides, preset_flag);
}

std::string resolved_config_text(const RunConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& k : key_specs()) {
    if (k.section != section) {
      if (!section.empty()) out << '\n';
      section = k.section;
      out << '[' << section << "]\n";
    }
    out << k.name << " = " << k.get(config) << '\n';
  }
  return out.str();
}

std::vector<std::pair<std::string, std::string>> run_config_keys() {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : key_specs()) out.emplace_back(k.section, k.name);
  return out;
}

}  // namespace pvgc
