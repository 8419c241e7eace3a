#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pvgc/tensor.hpp"

namespace pvgc {

/// Interleaved RGB pixels in [0, 1], row-major H×W×3.
struct RawImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> rgb;

  double at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
};

/// Decodes PNG, PPM/PGM, BMP or baseline JPEG bytes. Grayscale is expanded
/// to three channels. Throws DecodeError.
RawImage decode_image(std::span<const std::uint8_t> bytes);
RawImage read_image(const std::filesystem::path& path);

/// Bilinear resize with half-pixel centers (align_corners = false) and edge
/// clamping; returns planar 3×size×size values.
std::vector<double> resize_bilinear(const RawImage& image, std::size_t size);

inline constexpr double kNormMean = 0.5;
inline constexpr double kNormStd = 0.5;

/// Resize to size×size, then (x − 0.5)/0.5 per channel: a 3×size×size tensor.
Tensor preprocess(const RawImage& image, std::size_t size);

}  // namespace pvgc
