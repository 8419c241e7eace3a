#include "pvgc/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

#include "pvgc/errors.hpp"

namespace pvgc {

const char* head_name(HeadKind kind) { return kind == HeadKind::capsule ? "capsule" : "pooling-mlp"; }

HeadKind parse_head(const std::string& name) {
  if (name == "capsule") return HeadKind::capsule;
  if (name == "pooling-mlp") return HeadKind::pooling_mlp;
  throw ConfigError("unknown head '" + name + "' (expected capsule or pooling-mlp)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid model config: " + msg); };
  if (height == 0 || width == 0 || height % 32 != 0 || width % 32 != 0) {
    fail("input extents must be positive multiples of 32, got " + std::to_string(height) + "×" +
         std::to_string(width));
  }
  if (classes < 2) fail("class count must be at least 2");
  if (heads == 0) fail("head count must be positive");
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    const std::string tag = "stage " + std::to_string(s + 1) + ": ";
    if (st.dim == 0 || st.dim % heads != 0) {
      fail(tag + "dim " + std::to_string(st.dim) + " not divisible by head count " + std::to_string(heads));
    }
    if (st.depth == 0) fail(tag + "depth must be at least 1");
    if (st.neighbors == 0) fail(tag + "neighbor count must be positive");
    if (st.ffn_ratio == 0) fail(tag + "FFN ratio must be positive");
    if (st.stride_denominator != (std::size_t{4} << s)) fail(tag + "unexpected stride denominator");
  }
  if (stem_channels[2] != stages[0].dim) fail("stem output channels must equal the stage-1 dim");
  if (stem_channels[0] == 0 || stem_channels[1] == 0) fail("stem channels must be positive");
  if (head == HeadKind::capsule) {
    if (primary_caps_dim == 0 || stages[3].dim % primary_caps_dim != 0) {
      fail("last stage dim " + std::to_string(stages[3].dim) + " not divisible by primary capsule dim " +
           std::to_string(primary_caps_dim));
    }
    if (class_caps_dim == 0) fail("class capsule dim must be positive");
    if (routing_iters < 1) fail("routing iterations must be at least 1");
  } else if (mlp_hidden == 0) {
    fail("MLP hidden width must be positive");
  }
}

std::size_t ModelConfig::total_blocks() const {
  std::size_t n = 0;
  for (const auto& st : stages) n += st.depth;
  return n;
}

std::size_t ModelConfig::stage_nodes(std::size_t s) const { return stage_height(s) * stage_width(s); }

namespace {

ModelConfig make_preset(std::array<std::size_t, 4> dims, std::size_t size, std::size_t k, std::size_t heads,
                        std::size_t classes, std::size_t caps_dim, std::size_t mlp_hidden) {
  ModelConfig c;
  c.height = c.width = size;
  for (std::size_t s = 0; s < 4; ++s) {
    c.stages[s] = StageConfig{dims[s], 4, k, 2, std::size_t{4} << s};
  }
  c.stem_channels = {dims[0] / 2, dims[0], dims[0]};
  c.heads = heads;
  c.classes = classes;
  c.class_caps_dim = caps_dim;
  c.mlp_hidden = mlp_hidden;
  return c;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<std::size_t> parse_counts(const std::string& value, std::size_t expected) {
  auto parts = split_list(value);
  std::vector<std::size_t> out;
  for (const auto& p : parts) out.push_back(parse_count(p));
  if (out.size() == 1 && expected > 1) out.assign(expected, out[0]);
  if (out.size() != expected) {
    throw ConfigError("expected " + std::to_string(expected) + " comma-separated values, got '" + value + "'");
  }
  return out;
}

}  // namespace

bool is_model_preset(const std::string& name) { return name == "tiny" || name == "micro"; }

ModelConfig model_preset(const std::string& name) {
  if (name == "tiny") return make_preset({48, 96, 240, 384}, 256, 9, 4, 7, 16, 1024);
  if (name == "micro") return make_preset({8, 16, 24, 32}, 32, 3, 2, 3, 8, 64);
  throw ConfigError("unknown preset '" + name + "' (expected tiny or micro)");
}

std::vector<std::pair<std::string, std::string>> model_config_entries(const ModelConfig& c) {
  std::vector<std::size_t> dims, ratios, ks, depths;
  for (const auto& st : c.stages) {
    dims.push_back(st.dim);
    ratios.push_back(st.ffn_ratio);
    ks.push_back(st.neighbors);
    depths.push_back(st.depth);
  }
  return {
      {"input_height", std::to_string(c.height)},
      {"input_width", std::to_string(c.width)},
      {"stem_channels", join({c.stem_channels.begin(), c.stem_channels.end()})},
      {"stage_dims", join(dims)},
      {"ffn_ratios", join(ratios)},
      {"neighbors", join(ks)},
      {"stage_depths", join(depths)},
      {"head", head_name(c.head)},
      {"classes", std::to_string(c.classes)},
      {"heads", std::to_string(c.heads)},
      {"pos_embed", c.pos_embed ? "true" : "false"},
      {"primary_caps_dim", std::to_string(c.primary_caps_dim)},
      {"class_caps_dim", std::to_string(c.class_caps_dim)},
      {"routing_iters", std::to_string(c.routing_iters)},
      {"share_capsule_weights", c.share_capsule_weights ? "true" : "false"},
      {"mlp_hidden", std::to_string(c.mlp_hidden)},
  };
}

bool apply_model_entry(ModelConfig& c, const std::string& key, const std::string& value) {
  if (key == "input_height") {
    c.height = parse_count(value);
  } else if (key == "input_width") {
    c.width = parse_count(value);
  } else if (key == "stem_channels") {
    auto v = parse_counts(value, 3);
    std::copy(v.begin(), v.end(), c.stem_channels.begin());
  } else if (key == "stage_dims") {
    auto v = parse_counts(value, 4);
    for (std::size_t s = 0; s < 4; ++s) c.stages[s].dim = v[s];
  } else if (key == "ffn_ratios") {
    auto v = parse_counts(value, 4);
    for (std::size_t s = 0; s < 4; ++s) c.stages[s].ffn_ratio = v[s];
  } else if (key == "neighbors") {
    auto v = parse_counts(value, 4);
    for (std::size_t s = 0; s < 4; ++s) c.stages[s].neighbors = v[s];
  } else if (key == "stage_depths") {
    auto v = parse_counts(value, 4);
    for (std::size_t s = 0; s < 4; ++s) c.stages[s].depth = v[s];
  } else if (key == "head") {
    c.head = parse_head(value);
  } else if (key == "classes") {
    c.classes = parse_count(value);
  } else if (key == "heads") {
    c.heads = parse_count(value);
  } else if (key == "pos_embed") {
    c.pos_embed = parse_flag(value);
  } else if (key == "primary_caps_dim") {
    c.primary_caps_dim = parse_count(value);
  } else if (key == "class_caps_dim") {
    c.class_caps_dim = parse_count(value);
  } else if (key == "routing_iters") {
    c.routing_iters = parse_count(value);
  } else if (key == "share_capsule_weights") {
    c.share_capsule_weights = parse_flag(value);
  } else if (key == "mlp_hidden") {
    c.mlp_hidden = parse_count(value);
  } else {
    return false;
  }
  return true;
}

std::string model_config_text(const ModelConfig& config) {
  std::string out;
  for (const auto& [k, v] : model_config_entries(config)) out += k + " = " + v + "\n";
  return out;
}

ModelConfig parse_model_config_text(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed model config line '" + line + "'");
    const auto key = trim(line.substr(0, eq));
    if (!apply_model_entry(c, key, trim(line.substr(eq + 1)))) {
      throw ConfigError("unknown model config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

long long parse_integer(const std::string& value) {
  long long v = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end || value.empty()) {
    throw ConfigError("expected an integer, got '" + value + "'");
  }
  return v;
}

std::size_t parse_count(const std::string& value) {
  long long v = parse_integer(value);
  if (v < 0) throw ConfigError("expected a non-negative integer, got '" + value + "'");
  return static_cast<std::size_t>(v);
}

double parse_real(const std::string& value) {
  double v = 0.0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end || value.empty() || !std::isfinite(v)) {
    throw ConfigError("expected a real number, got '" + value + "'");
  }
  return v;
}

bool parse_flag(const std::string& value) {
  std::string v = value;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("expected a boolean, got '" + value + "'");
}

}  // namespace pvgc
