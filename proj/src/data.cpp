#include "pvgc/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "pvgc/config.hpp"
#include "pvgc/image.hpp"
#include "pvgc/metrics.hpp"

namespace pvgc {

std::array<std::size_t, 7> DatasetManifest::class_counts() const {
  std::array<std::size_t, 7> counts{};
  for (const auto& r : records) ++counts.at(r.label);
  return counts;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      out.push_back(trim(field));
      field.clear();
    } else {
      field += ch;
    }
  }
  out.push_back(trim(field));
  return out;
}

std::string upper(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return s;
}

std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& metadata, const std::filesystem::path& image_dir) {
  std::ifstream in(metadata);
  if (!in) throw DataError("cannot open metadata file " + metadata.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(metadata.string() + ": empty metadata file");
  const auto header = split_csv(line);
  std::size_t id_col = header.size(), dx_col = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string h = lower(header[i]);
    if (h == "image_id" || h == "image-id" || h == "image") id_col = i;
    if (h == "dx" || h == "diagnosis") dx_col = i;
  }
  if (id_col == header.size() || dx_col == header.size()) {
    throw DataError(metadata.string() + ": header must name an image_id column and a dx/diagnosis column");
  }
  const auto& vocab = lesion_classes();
  static const std::array<const char*, 6> extensions{".jpg", ".jpeg", ".png", ".bmp", ".ppm", ".pgm"};
  DatasetManifest manifest;
  std::set<std::string> seen;
  std::vector<std::string> missing;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() <= std::max(id_col, dx_col)) {
      throw DataError(metadata.string() + ":" + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                      " columns, got " + std::to_string(fields.size()));
    }
    const std::string& id = fields[id_col];
    const std::string dx = upper(fields[dx_col]);
    auto it = std::find(vocab.begin(), vocab.end(), dx);
    if (it == vocab.end()) {
      throw DataError(metadata.string() + ":" + std::to_string(row) + ": unknown label '" + fields[dx_col] +
                      "' for image " + id);
    }
    if (!seen.insert(id).second) {
      throw DataError(metadata.string() + ":" + std::to_string(row) + ": duplicate image id " + id);
    }
    std::filesystem::path found;
    for (const char* ext : extensions) {
      auto candidate = image_dir / (id + ext);
      if (std::filesystem::exists(candidate)) {
        found = candidate;
        break;
      }
    }
    if (found.empty()) missing.push_back(id);
    manifest.records.push_back({id, found, static_cast<std::size_t>(it - vocab.begin())});
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw DataError(std::to_string(missing.size()) + " images missing under " + image_dir.string() + ": " + list);
  }
  return manifest;
}

void SplitSpec::validate() const {
  if (!(train > 0.0 && val > 0.0 && test > 0.0)) throw ConfigError("split fractions must be positive");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
}

ManifestSplits stratified_split(const DatasetManifest& manifest, const SplitSpec& spec) {
  spec.validate();
  std::array<std::vector<std::size_t>, 7> by_class;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) by_class.at(manifest.records[i].label).push_back(i);
  std::mt19937_64 rng(spec.seed);
  std::vector<int> assignment(manifest.records.size(), -1);
  const std::array<double, 3> fractions{spec.train, spec.val, spec.test};
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& members = by_class[k];
    if (members.empty()) continue;
    if (members.size() < 3) {
      throw StratificationError("class " + lesion_classes()[k] + " has " + std::to_string(members.size()) +
                                " samples; stratified splitting needs at least 3");
    }
    std::shuffle(members.begin(), members.end(), rng);
    const double n = static_cast<double>(members.size());
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> remainder{};
    std::size_t allocated = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      const double exact = n * fractions[s];
      counts[s] = static_cast<std::size_t>(std::floor(exact));
      remainder[s] = exact - static_cast<double>(counts[s]);
      allocated += counts[s];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b]; });
    for (std::size_t r = 0; allocated < members.size(); ++r, ++allocated) ++counts[order[r % 3]];
    std::size_t pos = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t j = 0; j < counts[s]; ++j) assignment[members[pos++]] = static_cast<int>(s);
    }
  }
  ManifestSplits out;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    DatasetManifest* target = assignment[i] == 0 ? &out.train : assignment[i] == 1 ? &out.val : &out.test;
    target->records.push_back(manifest.records[i]);
  }
  return out;
}

Sample ImageDataset::get(std::size_t index) const {
  const auto& r = manifest_.records.at(index);
  return Sample{preprocess(read_image(r.path), image_size_), r.label, r.id};
}

InMemoryDataset synth_dataset(std::size_t classes, std::size_t per_class, std::size_t size, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (size == 0) throw ConfigError("synthetic image size must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.08);
  std::vector<Sample> samples;
  samples.reserve(classes * per_class);
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t k = 0; k < classes; ++k) {
      const double cycles = static_cast<double>(k / 2 + 1);
      const bool vertical = k % 2 == 1;
      std::vector<double> v(3 * size * size);
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < size; ++y) {
          for (std::size_t x = 0; x < size; ++x) {
            const double coord = static_cast<double>(vertical ? x : y) + 0.5;
            const double wave = std::sin(2.0 * std::numbers::pi * cycles * coord / static_cast<double>(size));
            const double pixel = std::clamp(0.5 + 0.3 * wave + noise(rng), 0.0, 1.0);
            v[(c * size + y) * size + x] = (pixel - kNormMean) / kNormStd;
          }
        }
      }
      round_to_precision(v);
      samples.push_back(Sample{Tensor({3, size, size}, std::move(v)), k,
                               "synth-" + std::to_string(seed) + "-" + std::to_string(samples.size())});
    }
  }
  return InMemoryDataset(std::move(samples), size);
}

AugmentDraw draw_augment(std::size_t size, std::mt19937_64& rng) {
  const std::size_t pad = size / 8;
  std::uniform_int_distribution<std::size_t> offset(0, 2 * pad);
  AugmentDraw d;
  d.offset_y = offset(rng);
  d.offset_x = offset(rng);
  d.flip_h = (rng() & 1U) != 0;
  d.flip_v = (rng() & 1U) != 0;
  return d;
}

Tensor apply_augment(const Tensor& image, const AugmentDraw& draw) {
  if (image.rank() != 3 || image.dim(1) != image.dim(2)) {
    throw ShapeError("augment expects a C×S×S image, got " + shape_str(image.shape()));
  }
  const std::size_t channels = image.dim(0), size = image.dim(1), pad = size / 8;
  if (draw.offset_y > 2 * pad || draw.offset_x > 2 * pad) throw ContractError("augment crop offset out of range");
  auto src = image.values();
  std::vector<double> out(image.numel());
  auto clamp_index = [&](std::size_t padded) {
    // Position in the padded frame → source index with edge replication.
    const long long p = static_cast<long long>(padded) - static_cast<long long>(pad);
    return static_cast<std::size_t>(std::clamp<long long>(p, 0, static_cast<long long>(size) - 1));
  };
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < size; ++y) {
      const std::size_t yy = draw.flip_v ? size - 1 - y : y;
      const std::size_t sy = clamp_index(yy + draw.offset_y);
      for (std::size_t x = 0; x < size; ++x) {
        const std::size_t xx = draw.flip_h ? size - 1 - x : x;
        const std::size_t sx = clamp_index(xx + draw.offset_x);
        out[(c * size + y) * size + x] = src[(c * size + sy) * size + sx];
      }
    }
  }
  return Tensor(image.shape(), std::move(out));
}

Sample augment(const Sample& sample, std::mt19937_64& rng) {
  const AugmentDraw d = draw_augment(sample.image.dim(1), rng);
  return Sample{apply_augment(sample.image, d), sample.label, sample.id};
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t epoch, const std::string& id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : id) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace pvgc
