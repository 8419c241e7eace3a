#include "pvgc/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "pvgc/errors.hpp"

namespace pvgc {

RawImage decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw DecodeError("cannot decode an empty byte buffer");
  cv::Mat buffer(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat decoded;
  try {
    decoded = cv::imdecode(buffer, cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw DecodeError(std::string("image decode failed: ") + e.what());
  }
  if (decoded.empty()) throw DecodeError("undecodable image bytes (" + std::to_string(bytes.size()) + " bytes)");
  RawImage img;
  img.height = static_cast<std::size_t>(decoded.rows);
  img.width = static_cast<std::size_t>(decoded.cols);
  img.rgb.resize(img.height * img.width * 3);
  for (int y = 0; y < decoded.rows; ++y) {
    const auto* row = decoded.ptr<cv::Vec3b>(y);
    for (int x = 0; x < decoded.cols; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * img.width + static_cast<std::size_t>(x)) * 3;
      // Decoder output is BGR.
      for (int c = 0; c < 3; ++c) img.rgb[base + static_cast<std::size_t>(c)] = row[x][2 - c] / 255.0;
    }
  }
  return img;
}

RawImage read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_image(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
}

std::vector<double> resize_bilinear(const RawImage& image, std::size_t size) {
  if (image.height == 0 || image.width == 0 || size == 0) throw ContractError("resize of an empty image");
  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [size](std::size_t extent) {
    std::vector<Tap> out(size);
    const double scale = static_cast<double>(extent) / static_cast<double>(size);
    for (std::size_t i = 0; i < size; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(extent - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      out[i] = {lo, std::min(lo + 1, extent - 1), src - static_cast<double>(lo)};
    }
    return out;
  };
  const auto ty = taps(image.height);
  const auto tx = taps(image.width);
  std::vector<double> out(3 * size * size);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const Tap& a = ty[y];
        const Tap& b = tx[x];
        const double top = image.at(a.lo, b.lo, c) * (1.0 - b.frac) + image.at(a.lo, b.hi, c) * b.frac;
        const double bottom = image.at(a.hi, b.lo, c) * (1.0 - b.frac) + image.at(a.hi, b.hi, c) * b.frac;
        out[(c * size + y) * size + x] = top * (1.0 - a.frac) + bottom * a.frac;
      }
    }
  }
  return out;
}

Tensor preprocess(const RawImage& image, std::size_t size) {
  std::vector<double> v = resize_bilinear(image, size);
  for (auto& x : v) x = (x - kNormMean) / kNormStd;
  round_to_precision(v);
  return Tensor({3, size, size}, std::move(v));
}

}  // namespace pvgc
