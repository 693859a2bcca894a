#include "maris/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "maris/random.hpp"

namespace maris {

ImageSample::ImageSample(std::string id, std::size_t height, std::size_t width,
                         std::vector<double> pixels)
    : id_(std::move(id)), height_(height), width_(width), pixels_(std::move(pixels)) {
  if (height_ < kMinSize || width_ < kMinSize) {
    throw ShapeError("image '" + id_ + "' is " + std::to_string(height_) + "x" +
                     std::to_string(width_) + ", below the minimum size " +
                     std::to_string(kMinSize) + "x" + std::to_string(kMinSize));
  }
  if (pixels_.size() != height_ * width_ * 3) {
    throw ShapeError("image '" + id_ + "': pixel buffer size does not match HxWx3");
  }
  for (double v : pixels_) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw DataError("image '" + id_ + "': pixel values must be finite and within [0,1]");
    }
  }
}

void FeaturePyramid::validate() const {
  if (levels.size() < 2) throw ShapeError("feature pyramid needs at least 2 levels");
  if (strides.size() != levels.size()) throw ShapeError("pyramid stride count mismatch");
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const auto& lv = levels[l];
    if (lv.channels() == 0) throw ShapeError("pyramid level " + std::to_string(l) + " has no channels");
    if (lv.data.rows() != lv.height * lv.width)
      throw ShapeError("pyramid level " + std::to_string(l) + " row count mismatch");
    if (!lv.data.all_finite())
      throw ShapeError("pyramid level " + std::to_string(l) + " has non-finite values");
    if (l > 0 && !(lv.height * lv.width < levels[l - 1].height * levels[l - 1].width))
      throw ShapeError("pyramid spatial sizes must strictly decrease");
  }
}

TemplateEmbeddings::TemplateEmbeddings(std::vector<std::string> class_names,
                                       std::vector<std::string> template_ids, std::size_t dim)
    : class_names_(std::move(class_names)),
      template_ids_(std::move(template_ids)),
      dim_(dim),
      data_(class_names_.size() * template_ids_.size() * dim, 0.0) {}

void EncoderConfig::validate() const {
  if (strides.size() < 2) throw ConfigError("encoder config: at least 2 levels required");
  if (channels.size() != strides.size())
    throw ConfigError("encoder config: channels and strides must have equal length");
  for (std::size_t l = 0; l < strides.size(); ++l) {
    if (strides[l] <= 0 || channels[l] <= 0)
      throw ConfigError("encoder config: strides and channels must be positive");
    if (l > 0 && strides[l] <= strides[l - 1])
      throw ConfigError("encoder config: strides must strictly increase");
  }
  if (embed_dim <= 0 || token_dim <= 0) throw ConfigError("encoder config: dims must be positive");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"levels", c.levels()},       {"strides", c.strides},
                     {"channels", c.channels},     {"embed_dim", c.embed_dim},
                     {"token_dim", c.token_dim},   {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  EncoderConfig d;
  c.strides = j.value("strides", d.strides);
  c.channels = j.value("channels", d.channels);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.token_dim = j.value("token_dim", d.token_dim);
  c.seed = j.value("seed", d.seed);
  if (j.contains("levels") && j.at("levels").get<std::size_t>() != c.strides.size())
    throw ConfigError("encoder config: 'levels' disagrees with strides");
  c.validate();
}

std::string format_prompt(const std::string& templ, const std::string& class_name) {
  std::string out;
  std::size_t pos = 0;
  bool found = false;
  while (true) {
    const std::size_t hit = templ.find("{}", pos);
    if (hit == std::string::npos) break;
    out.append(templ, pos, hit - pos);
    out += class_name;
    pos = hit + 2;
    found = true;
  }
  if (!found) throw DataError("template has no \"{}\" placeholder: '" + templ + "'");
  out.append(templ, pos, std::string::npos);
  return out;
}

std::uint64_t EncoderSet::parameter_checksum() const {
  return mix64(visual->parameter_checksum() ^ mix64(geometry->parameter_checksum()));
}

namespace {

// Box-average the image (or any channel-last planar signal) to the level grid.
Matrix avg_pool(const std::vector<double>& src, std::size_t h, std::size_t w, std::size_t ch,
                int stride, std::size_t& out_h, std::size_t& out_w) {
  out_h = level_extent(h, stride);
  out_w = level_extent(w, stride);
  Matrix out(out_h * out_w, ch);
  const std::size_t s = static_cast<std::size_t>(stride);
  for (std::size_t oy = 0; oy < out_h; ++oy)
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      std::size_t count = 0;
      for (std::size_t y = oy * s; y < std::min(h, (oy + 1) * s); ++y)
        for (std::size_t x = ox * s; x < std::min(w, (ox + 1) * s); ++x) {
          ++count;
          for (std::size_t c = 0; c < ch; ++c) out(oy * out_w + ox, c) += src[(y * w + x) * ch + c];
        }
      for (std::size_t c = 0; c < ch; ++c) out(oy * out_w + ox, c) /= static_cast<double>(count);
    }
  return out;
}

// 3x3 same-padded convolution: weights (9*cin) x cout, bias 1 x cout, tanh.
Matrix conv3x3_tanh(const Matrix& x, std::size_t h, std::size_t w, const Matrix& weights,
                    const Matrix& bias) {
  const std::size_t cin = x.cols(), cout = weights.cols();
  Matrix out(h * w, cout);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx) {
      auto orow = out.row(y * w + xx);
      for (std::size_t c = 0; c < cout; ++c) orow[c] = bias[c];
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const long yy = static_cast<long>(y) + dy, xq = static_cast<long>(xx) + dx;
          if (yy < 0 || xq < 0 || yy >= static_cast<long>(h) || xq >= static_cast<long>(w)) continue;
          const std::size_t tap = static_cast<std::size_t>((dy + 1) * 3 + (dx + 1));
          auto irow = x.row(static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xq));
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double v = irow[ci];
            const auto wrow = weights.row(tap * cin + ci);
            for (std::size_t c = 0; c < cout; ++c) orow[c] += v * wrow[c];
          }
        }
      for (double& v : orow) v = std::tanh(v);
    }
  return out;
}

Matrix apply_tanh_linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix out = matmul(x, w);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = std::tanh(out(i, j) + b[j]);
  return out;
}

void normalize_rows_inplace(Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double ss = 0.0;
    for (double v : m.row(i)) ss += v * v;
    const double inv = ss > 0 ? 1.0 / std::sqrt(ss) : 0.0;
    for (double& v : m.row(i)) v *= inv;
  }
}

std::uint64_t checksum_all(const std::vector<const Matrix*>& ms) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Matrix* m : ms) h = checksum(m->data(), h);
  return h;
}

// Channel-last derived inputs for the geometric branch: pseudo depth, its
// gradient magnitude and luminance.
std::vector<double> geometric_inputs(const ImageSample& img) {
  const std::size_t h = img.height(), w = img.width();
  std::vector<double> lum(h * w), depth(h * w), out(h * w * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double l = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
      lum[y * w + x] = l;
      // Darker and higher in the frame reads as farther away underwater.
      depth[y * w + x] = 0.6 * (1.0 - l) + 0.4 * (1.0 - static_cast<double>(y) / static_cast<double>(h - 1));
    }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double gx = depth[y * w + std::min(x + 1, w - 1)] - depth[y * w + (x > 0 ? x - 1 : 0)];
      const double gy = depth[std::min(y + 1, h - 1) * w + x] - depth[(y > 0 ? y - 1 : 0) * w + x];
      const std::size_t i = (y * w + x) * 3;
      out[i] = depth[y * w + x];
      out[i + 1] = std::sqrt(gx * gx + gy * gy);
      out[i + 2] = lum[y * w + x];
    }
  return out;
}

struct ConvStack {
  Matrix conv_w, conv_b, proj_w, proj_b;
};

constexpr std::size_t kHidden = 16;

std::vector<ConvStack> make_conv_stacks(const EncoderConfig& cfg, const std::string& name) {
  std::vector<ConvStack> stacks;
  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    auto rng = stream_rng(cfg.seed, name + "/level" + std::to_string(l));
    ConvStack s;
    s.conv_w = random_normal(9 * 3, kHidden, 1.0 / std::sqrt(9.0 * 3.0) * 2.0, rng);
    s.conv_b = random_normal(1, kHidden, 0.3, rng);
    const auto c = static_cast<std::size_t>(cfg.channels[l]);
    s.proj_w = random_normal(kHidden, c, 1.0 / std::sqrt(static_cast<double>(kHidden)) * 1.5, rng);
    s.proj_b = random_normal(1, c, 0.1, rng);
    stacks.push_back(std::move(s));
  }
  return stacks;
}

FeaturePyramid run_conv_stacks(const std::vector<ConvStack>& stacks, const EncoderConfig& cfg,
                               const std::vector<double>& input, std::size_t h, std::size_t w) {
  FeaturePyramid p;
  p.strides = cfg.strides;
  for (std::size_t l = 0; l < stacks.size(); ++l) {
    FeatureMap fm;
    Matrix pooled = avg_pool(input, h, w, 3, cfg.strides[l], fm.height, fm.width);
    Matrix hidden = conv3x3_tanh(pooled, fm.height, fm.width, stacks[l].conv_w, stacks[l].conv_b);
    fm.data = apply_tanh_linear(hidden, stacks[l].proj_w, stacks[l].proj_b);
    p.levels.push_back(std::move(fm));
  }
  return p;
}

class ConvVisualEncoder final : public VisualEncoder {
 public:
  explicit ConvVisualEncoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    stacks_ = make_conv_stacks(cfg_, "visual");
    auto rng = stream_rng(cfg_.seed, "visual/dense");
    dense_w_ = random_normal(static_cast<std::size_t>(cfg_.channels[0]),
                             static_cast<std::size_t>(cfg_.embed_dim),
                             1.0 / std::sqrt(static_cast<double>(cfg_.channels[0])), rng);
  }

  FeaturePyramid encode(const ImageSample& image) const override {
    return run_conv_stacks(stacks_, cfg_, image.pixels(), image.height(), image.width());
  }

  FeatureMap embed_dense(const ImageSample& image) const override {
    FeaturePyramid p = encode(image);
    FeatureMap out{p.levels[0].height, p.levels[0].width, matmul(p.levels[0].data, dense_w_)};
    normalize_rows_inplace(out.data);
    return out;
  }

  std::uint64_t parameter_checksum() const override {
    std::vector<const Matrix*> ms;
    for (const auto& s : stacks_) ms.insert(ms.end(), {&s.conv_w, &s.conv_b, &s.proj_w, &s.proj_b});
    ms.push_back(&dense_w_);
    return checksum_all(ms);
  }

 private:
  EncoderConfig cfg_;
  std::vector<ConvStack> stacks_;
  Matrix dense_w_;
};

class ConvGeometryEncoder final : public GeometryEncoder {
 public:
  explicit ConvGeometryEncoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    stacks_ = make_conv_stacks(cfg_, "geometry");
    auto rng = stream_rng(cfg_.seed, "geometry/token");
    const auto last = static_cast<std::size_t>(cfg_.channels.back());
    token_w_ = random_normal(last, static_cast<std::size_t>(cfg_.token_dim),
                             1.0 / std::sqrt(static_cast<double>(last)) * 2.0, rng);
    token_b_ = random_normal(1, static_cast<std::size_t>(cfg_.token_dim), 0.1, rng);
  }

  std::pair<FeaturePyramid, GlobalDepthToken> encode(const ImageSample& image) const override {
    FeaturePyramid p = run_conv_stacks(stacks_, cfg_, geometric_inputs(image), image.height(),
                                       image.width());
    const FeatureMap& top = p.levels.back();
    Matrix mean(1, top.channels());
    for (std::size_t i = 0; i < top.data.rows(); ++i)
      for (std::size_t c = 0; c < top.channels(); ++c) mean[c] += top.data(i, c);
    for (double& v : mean.data()) v /= static_cast<double>(top.data.rows());
    Matrix tok = apply_tanh_linear(mean, token_w_, token_b_);
    return {std::move(p), GlobalDepthToken{tok.data()}};
  }

  std::uint64_t parameter_checksum() const override {
    std::vector<const Matrix*> ms;
    for (const auto& s : stacks_) ms.insert(ms.end(), {&s.conv_w, &s.conv_b, &s.proj_w, &s.proj_b});
    ms.insert(ms.end(), {&token_w_, &token_b_});
    return checksum_all(ms);
  }

 private:
  EncoderConfig cfg_;
  std::vector<ConvStack> stacks_;
  Matrix token_w_, token_b_;
};

class HashedTextEncoder final : public TextEncoder {
 public:
  HashedTextEncoder(EncoderConfig cfg, std::uint64_t basis) : cfg_(std::move(cfg)), basis_(basis) {
    cfg_.validate();
  }

  TemplateEmbeddings encode(std::span<const std::string> class_names,
                            std::span<const std::string> templates) const override {
    for (const auto& t : templates)
      if (t.find("{}") == std::string::npos)
        throw DataError("template has no \"{}\" placeholder: '" + t + "'");
    const auto dim = static_cast<std::size_t>(cfg_.embed_dim);
    TemplateEmbeddings out({class_names.begin(), class_names.end()},
                           {templates.begin(), templates.end()}, dim);
    for (std::size_t k = 0; k < class_names.size(); ++k)
      for (std::size_t t = 0; t < templates.size(); ++t) {
        const std::string prompt = format_prompt(templates[t], class_names[k]);
        std::mt19937_64 rng(mix64(fnv1a(prompt, basis_) ^ mix64(cfg_.seed)));
        Matrix v = random_normal(1, dim, 1.0, rng);
        double ss = 0.0;
        for (double x : v.data()) ss += x * x;
        const double inv = 1.0 / std::sqrt(ss);
        auto row = out.at(k, t);
        for (std::size_t d = 0; d < dim; ++d) row[d] = v[d] * inv;
      }
    return out;
  }

 private:
  EncoderConfig cfg_;
  std::uint64_t basis_;
};

// Per-pixel linear features on pooled inputs with coordinate channels.
class LinearVisualEncoder final : public VisualEncoder {
 public:
  explicit LinearVisualEncoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (std::size_t l = 0; l < cfg_.levels(); ++l) {
      auto rng = stream_rng(cfg_.seed, "linear-visual/" + std::to_string(l));
      weights_.push_back(random_normal(5, static_cast<std::size_t>(cfg_.channels[l]), 1.0, rng));
    }
    auto rng = stream_rng(cfg_.seed, "linear-visual/dense");
    dense_w_ = random_normal(static_cast<std::size_t>(cfg_.channels[0]),
                             static_cast<std::size_t>(cfg_.embed_dim), 1.0, rng);
  }

  FeaturePyramid encode(const ImageSample& image) const override {
    FeaturePyramid p;
    p.strides = cfg_.strides;
    for (std::size_t l = 0; l < cfg_.levels(); ++l) {
      FeatureMap fm;
      Matrix pooled = avg_pool(image.pixels(), image.height(), image.width(), 3, cfg_.strides[l],
                               fm.height, fm.width);
      Matrix in(pooled.rows(), 5);
      for (std::size_t i = 0; i < pooled.rows(); ++i) {
        for (std::size_t c = 0; c < 3; ++c) in(i, c) = pooled(i, c);
        in(i, 3) = static_cast<double>(i % fm.width) / static_cast<double>(fm.width);
        in(i, 4) = static_cast<double>(i / fm.width) / static_cast<double>(fm.height);
      }
      Matrix zero(1, weights_[l].cols());
      fm.data = apply_tanh_linear(in, weights_[l], zero);
      p.levels.push_back(std::move(fm));
    }
    return p;
  }

  FeatureMap embed_dense(const ImageSample& image) const override {
    FeaturePyramid p = encode(image);
    FeatureMap out{p.levels[0].height, p.levels[0].width, matmul(p.levels[0].data, dense_w_)};
    normalize_rows_inplace(out.data);
    return out;
  }

  std::uint64_t parameter_checksum() const override {
    std::vector<const Matrix*> ms;
    for (const auto& w : weights_) ms.push_back(&w);
    ms.push_back(&dense_w_);
    return checksum_all(ms);
  }

 private:
  EncoderConfig cfg_;
  std::vector<Matrix> weights_;
  Matrix dense_w_;
};

class LinearGeometryEncoder final : public GeometryEncoder {
 public:
  explicit LinearGeometryEncoder(EncoderConfig cfg) : cfg_(std::move(cfg)), inner_(cfg_) {
    auto rng = stream_rng(cfg_.seed, "linear-geometry/token");
    token_w_ = random_normal(static_cast<std::size_t>(cfg_.channels.back()),
                             static_cast<std::size_t>(cfg_.token_dim), 0.5, rng);
  }

  std::pair<FeaturePyramid, GlobalDepthToken> encode(const ImageSample& image) const override {
    // Feed the geometric channels through the linear visual stub.
    std::vector<double> geo = geometric_inputs(image);
    for (double& v : geo) v = std::clamp(v, 0.0, 1.0);
    ImageSample as_image(image.id(), image.height(), image.width(), std::move(geo));
    FeaturePyramid p = inner_.encode(as_image);
    const FeatureMap& top = p.levels.back();
    Matrix mean(1, top.channels());
    for (std::size_t i = 0; i < top.data.rows(); ++i)
      for (std::size_t c = 0; c < top.channels(); ++c) mean[c] += top.data(i, c) / static_cast<double>(top.data.rows());
    Matrix zero(1, token_w_.cols());
    Matrix tok = apply_tanh_linear(mean, token_w_, zero);
    return {std::move(p), GlobalDepthToken{tok.data()}};
  }

  std::uint64_t parameter_checksum() const override {
    return mix64(inner_.parameter_checksum() ^ checksum(token_w_.data()));
  }

 private:
  EncoderConfig cfg_;
  LinearVisualEncoder inner_;
  Matrix token_w_;
};

}  // namespace

EncoderSet make_stub_encoders(const EncoderConfig& config) {
  return {std::make_shared<ConvVisualEncoder>(config), std::make_shared<ConvGeometryEncoder>(config),
          std::make_shared<HashedTextEncoder>(config, 0xcbf29ce484222325ULL)};
}

EncoderSet make_linear_stub_encoders(const EncoderConfig& config) {
  return {std::make_shared<LinearVisualEncoder>(config),
          std::make_shared<LinearGeometryEncoder>(config),
          std::make_shared<HashedTextEncoder>(config, 0x84222325cbf29ce4ULL)};
}

FeaturePyramid encode_visual(const ImageSample& image, const EncoderConfig& config) {
  return ConvVisualEncoder(config).encode(image);
}

std::pair<FeaturePyramid, GlobalDepthToken> encode_geometry(const ImageSample& image,
                                                           const EncoderConfig& config) {
  return ConvGeometryEncoder(config).encode(image);
}

TemplateEmbeddings encode_text(std::span<const std::string> class_names,
                               std::span<const std::string> templates,
                               const EncoderConfig& config) {
  return HashedTextEncoder(config, 0xcbf29ce484222325ULL).encode(class_names, templates);
}

}  // namespace maris
