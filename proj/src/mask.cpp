#include "maris/mask.hpp"

#include <algorithm>
#include <cmath>

#include "maris/error.hpp"

namespace maris {

std::size_t BinaryMask::area() const {
  std::size_t n = 0;
  for (auto b : bits) n += b ? 1 : 0;
  return n;
}

Rle encode_rle(const BinaryMask& mask) {
  Rle rle{mask.height, mask.width, {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (std::size_t x = 0; x < mask.width; ++x)
    for (std::size_t y = 0; y < mask.height; ++y) {
      const std::uint8_t v = mask.at(y, x) ? 1 : 0;
      if (v != current) {
        rle.counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  rle.counts.push_back(run);
  return rle;
}

BinaryMask decode_rle(const Rle& rle) {
  BinaryMask mask(rle.height, rle.width);
  const std::size_t total = rle.height * rle.width;
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (std::uint32_t run : rle.counts) {
    if (pos + run > total) throw DataError("run-length counts exceed mask size");
    for (std::uint32_t i = 0; i < run; ++i, ++pos) {
      // Column-major position -> (y, x)
      mask.at(pos % rle.height, pos / rle.height) = value;
    }
    value ^= 1;
  }
  if (pos != total) throw DataError("run-length counts do not cover the mask");
  return mask;
}

nlohmann::json rle_to_json(const Rle& rle) {
  return {{"size", {rle.height, rle.width}}, {"counts", rle.counts}};
}

Rle rle_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("size") || !j.contains("counts"))
    throw DataError("run-length segmentation needs 'size' and 'counts'");
  const auto& size = j.at("size");
  if (!size.is_array() || size.size() != 2) throw DataError("run-length 'size' must be [h, w]");
  if (!j.at("counts").is_array())
    throw DataError("only uncompressed run-length counts (integer arrays) are supported");
  Rle rle;
  rle.height = size[0].get<std::size_t>();
  rle.width = size[1].get<std::size_t>();
  rle.counts = j.at("counts").get<std::vector<std::uint32_t>>();
  return rle;
}

BinaryMask rasterize_polygons(const std::vector<std::vector<double>>& polygons,
                              std::size_t height, std::size_t width) {
  BinaryMask mask(height, width);
  std::vector<double> xs;
  for (std::size_t y = 0; y < height; ++y) {
    const double cy = static_cast<double>(y) + 0.5;
    for (const auto& poly : polygons) {
      xs.clear();
      const std::size_t n = poly.size() / 2;
      for (std::size_t i = 0; i < n; ++i) {
        const double x0 = poly[2 * i], y0 = poly[2 * i + 1];
        const double x1 = poly[2 * ((i + 1) % n)], y1 = poly[2 * ((i + 1) % n) + 1];
        // Half-open rule so shared vertices count once.
        if ((y0 <= cy) != (y1 <= cy)) xs.push_back(x0 + (cy - y0) * (x1 - x0) / (y1 - y0));
      }
      std::sort(xs.begin(), xs.end());
      for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
        // Pixel centres x + 0.5 strictly inside [xs[k], xs[k+1]).
        const double lo = std::ceil(xs[k] - 0.5), hi = std::ceil(xs[k + 1] - 0.5);
        for (double x = std::max(0.0, lo); x < std::min(static_cast<double>(width), hi); x += 1.0) {
          mask.at(y, static_cast<std::size_t>(x)) = 1;
        }
      }
    }
  }
  return mask;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError("mask_iou: " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                     " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool x = a.bits[i] != 0, y = b.bits[i] != 0;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace maris
