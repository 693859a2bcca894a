#pragma once

// Frozen feature producers: visual pyramid, geometric pyramid plus global
// depth token, and prompt-text embeddings. The stubs here are seeded random
// networks; any implementation of the three interfaces can be swapped in.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "maris/tensor.hpp"

namespace maris {

/// H x W x 3 image with values in [0, 1], stored row-major, channel-last.
class ImageSample {
 public:
  static constexpr std::size_t kMinSize = 16;

  ImageSample() = default;
  /// Throws ShapeError on undersized images and DataError on out-of-range pixels.
  ImageSample(std::string id, std::size_t height, std::size_t width, std::vector<double> pixels);

  const std::string& id() const { return id_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels_[(y * width_ + x) * 3 + c];
  }
  const std::vector<double>& pixels() const { return pixels_; }

 private:
  std::string id_;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> pixels_;
};

/// One dense level: (height*width) x channels.
struct FeatureMap {
  std::size_t height = 0;
  std::size_t width = 0;
  Matrix data;

  std::size_t channels() const { return data.cols(); }
  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

struct FeaturePyramid {
  std::vector<FeatureMap> levels;
  std::vector<int> strides;

  std::size_t size() const { return levels.size(); }
  /// Checks level count, strictly decreasing spatial sizes and finiteness.
  void validate() const;
  friend bool operator==(const FeaturePyramid&, const FeaturePyramid&) = default;
};

struct GlobalDepthToken {
  std::vector<double> vector;
  friend bool operator==(const GlobalDepthToken&, const GlobalDepthToken&) = default;
};

/// K classes x T templates x D embedding dims, every (k, t) row unit length.
class TemplateEmbeddings {
 public:
  TemplateEmbeddings() = default;
  TemplateEmbeddings(std::vector<std::string> class_names, std::vector<std::string> template_ids,
                     std::size_t dim);

  std::size_t num_classes() const { return class_names_.size(); }
  std::size_t num_templates() const { return template_ids_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::string>& class_names() const { return class_names_; }
  const std::vector<std::string>& template_ids() const { return template_ids_; }

  std::span<double> at(std::size_t k, std::size_t t) {
    return {data_.data() + (k * num_templates() + t) * dim_, dim_};
  }
  std::span<const double> at(std::size_t k, std::size_t t) const {
    return {data_.data() + (k * num_templates() + t) * dim_, dim_};
  }
  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const TemplateEmbeddings&, const TemplateEmbeddings&) = default;

 private:
  std::vector<std::string> class_names_;
  std::vector<std::string> template_ids_;
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

struct EncoderConfig {
  std::vector<int> strides{4, 8, 16};
  std::vector<int> channels{32, 64, 128};
  int embed_dim = 64;  // D, shared text / dense-visual embedding width
  int token_dim = 64;  // C_g
  std::uint64_t seed = 0;

  std::size_t levels() const { return strides.size(); }
  void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

class VisualEncoder {
 public:
  virtual ~VisualEncoder() = default;
  virtual FeaturePyramid encode(const ImageSample& image) const = 0;
  /// Unit-normalized per-pixel embeddings in the text space (level-0 resolution x D).
  virtual FeatureMap embed_dense(const ImageSample& image) const = 0;
  virtual std::uint64_t parameter_checksum() const = 0;
};

class GeometryEncoder {
 public:
  virtual ~GeometryEncoder() = default;
  virtual std::pair<FeaturePyramid, GlobalDepthToken> encode(const ImageSample& image) const = 0;
  virtual std::uint64_t parameter_checksum() const = 0;
};

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual TemplateEmbeddings encode(std::span<const std::string> class_names,
                                    std::span<const std::string> templates) const = 0;
};

struct EncoderSet {
  std::shared_ptr<const VisualEncoder> visual;
  std::shared_ptr<const GeometryEncoder> geometry;
  std::shared_ptr<const TextEncoder> text;

  std::uint64_t parameter_checksum() const;
};

/// Seeded convolutional / hashed-string stubs.
EncoderSet make_stub_encoders(const EncoderConfig& config);
/// A structurally different stub set honoring the same contracts (per-pixel
/// linear features, different hash). Exists to show downstream code does not
/// depend on one implementation.
EncoderSet make_linear_stub_encoders(const EncoderConfig& config);

/// Substitutes the class name for every "{}"; throws DataError naming the
/// template when it has no placeholder.
std::string format_prompt(const std::string& templ, const std::string& class_name);

FeaturePyramid encode_visual(const ImageSample& image, const EncoderConfig& config);
std::pair<FeaturePyramid, GlobalDepthToken> encode_geometry(const ImageSample& image,
                                                           const EncoderConfig& config);
TemplateEmbeddings encode_text(std::span<const std::string> class_names,
                               std::span<const std::string> templates,
                               const EncoderConfig& config);

/// ceil(n / stride)
inline std::size_t level_extent(std::size_t n, int stride) {
  return (n + static_cast<std::size_t>(stride) - 1) / static_cast<std::size_t>(stride);
}

}  // namespace maris
