#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

namespace maris {

/// Row-major binary mask.
struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return bits[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return bits[y * width + x]; }
  std::size_t area() const;
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// Uncompressed COCO run-length encoding: column-major runs starting with zeros.
struct Rle {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> counts;
  friend bool operator==(const Rle&, const Rle&) = default;
};

Rle encode_rle(const BinaryMask& mask);
/// Throws DataError when the runs do not cover exactly height*width pixels.
BinaryMask decode_rle(const Rle& rle);

nlohmann::json rle_to_json(const Rle& rle);
Rle rle_from_json(const nlohmann::json& j);

/// Union of even-odd filled flat [x0,y0,x1,y1,...] polygons; a pixel is
/// inside when its centre (x+0.5, y+0.5) is.
BinaryMask rasterize_polygons(const std::vector<std::vector<double>>& polygons,
                              std::size_t height, std::size_t width);

/// Intersection over union; 0 when the union is empty. Throws ShapeError on
/// mismatched sizes.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

}  // namespace maris
