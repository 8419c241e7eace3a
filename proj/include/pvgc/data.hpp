#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pvgc/tensor.hpp"

namespace pvgc {

struct ManifestRecord {
  std::string id;
  std::filesystem::path path;
  std::size_t label = 0;  // index into lesion_classes()
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  std::array<std::size_t, 7> class_counts() const;
};

/// Reads a comma-separated metadata file whose header names an image-id
/// column (image_id) and a diagnosis column (dx or diagnosis). Labels are
/// matched case-insensitively. Image files are looked up as
/// <image_dir>/<id>.{jpg,jpeg,png,bmp,ppm,pgm}.
/// Throws DataError for unknown labels (naming the row), duplicate ids, and
/// missing images (listing every missing id).
DatasetManifest load_manifest(const std::filesystem::path& metadata, const std::filesystem::path& image_dir);

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ManifestSplits {
  DatasetManifest train;
  DatasetManifest val;
  DatasetManifest test;
};

/// Per-class shuffle and largest-remainder allocation. Each split keeps the
/// manifest's record order. Throws StratificationError when a present class
/// has fewer than 3 samples.
ManifestSplits stratified_split(const DatasetManifest& manifest, const SplitSpec& spec);

struct Sample {
  Tensor image;  // 3×S×S, normalized
  std::size_t label = 0;
  std::string id;
};

class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::size_t size() const = 0;
  virtual Sample get(std::size_t index) const = 0;
  virtual std::size_t image_size() const = 0;
  virtual std::size_t label(std::size_t index) const = 0;
};

class InMemoryDataset : public Dataset {
 public:
  InMemoryDataset() = default;
  InMemoryDataset(std::vector<Sample> samples, std::size_t image_size)
      : samples_(std::move(samples)), image_size_(image_size) {}

  std::size_t size() const override { return samples_.size(); }
  Sample get(std::size_t index) const override { return samples_.at(index); }
  std::size_t image_size() const override { return image_size_; }
  std::size_t label(std::size_t index) const override { return samples_.at(index).label; }

  std::vector<Sample>& samples() { return samples_; }
  const std::vector<Sample>& samples() const { return samples_; }

 private:
  std::vector<Sample> samples_;
  std::size_t image_size_ = 0;
};

/// Decodes and preprocesses manifest images on access.
class ImageDataset : public Dataset {
 public:
  ImageDataset(DatasetManifest manifest, std::size_t image_size)
      : manifest_(std::move(manifest)), image_size_(image_size) {}

  std::size_t size() const override { return manifest_.records.size(); }
  Sample get(std::size_t index) const override;
  std::size_t image_size() const override { return image_size_; }
  std::size_t label(std::size_t index) const override { return manifest_.records.at(index).label; }

 private:
  DatasetManifest manifest_;
  std::size_t image_size_;
};

/// Class k is a sinusoidal stripe pattern (horizontal for even k, vertical
/// for odd k) with k/2 + 1 cycles across the image, plus seeded Gaussian
/// noise. Labels cycle 0, 1, ..., classes−1.
InMemoryDataset synth_dataset(std::size_t classes, std::size_t per_class, std::size_t size, std::uint64_t seed);

/// Random draws of one augmentation.
struct AugmentDraw {
  std::size_t offset_y = 0;
  std::size_t offset_x = 0;
  bool flip_h = false;
  bool flip_v = false;
};

/// Pad S/8 per side, crop offsets uniform in [0, S/4], flips at 50% each.
AugmentDraw draw_augment(std::size_t size, std::mt19937_64& rng);
/// Applies a draw to a C×S×S image (edge-replicated padding).
Tensor apply_augment(const Tensor& image, const AugmentDraw& draw);
Sample augment(const Sample& sample, std::mt19937_64& rng);

/// Stream for one sample's augmentation in one epoch.
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t epoch, const std::string& id);

}  // namespace pvgc
