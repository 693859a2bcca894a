#include "maris/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "maris/random.hpp"

namespace maris::data {

namespace {

struct Colour {
  const char* name;
  std::array<double, 3> rgb;
};

constexpr std::array<Colour, 12> kPalette{{
    {"red", {0.90, 0.15, 0.12}},
    {"yellow", {0.95, 0.85, 0.10}},
    {"green", {0.15, 0.80, 0.20}},
    {"magenta", {0.85, 0.15, 0.80}},
    {"white", {0.97, 0.97, 0.97}},
    {"orange", {0.98, 0.55, 0.05}},
    {"black", {0.05, 0.05, 0.05}},
    {"cyan", {0.10, 0.90, 0.90}},
    {"purple", {0.45, 0.10, 0.65}},
    {"brown", {0.50, 0.30, 0.10}},
    {"pink", {0.98, 0.60, 0.75}},
    {"lime", {0.65, 0.98, 0.20}},
}};

constexpr std::array<const char*, 3> kShapes{"square", "circle", "triangle"};

struct Box {
  long x0, y0, x1, y1;  // inclusive-exclusive
  bool overlaps(const Box& o, long margin) const {
    return !(x1 + margin <= o.x0 || o.x1 + margin <= x0 || y1 + margin <= o.y0 ||
             o.y1 + margin <= y0);
  }
};

}  // namespace

std::vector<std::string> synth_class_names(std::size_t n_classes) {
  if (n_classes == 0 || n_classes > kPalette.size())
    throw ConfigError("synthetic fixtures support 1.." + std::to_string(kPalette.size()) +
                      " classes");
  std::vector<std::string> names;
  for (std::size_t k = 0; k < n_classes; ++k)
    names.push_back(std::string(kPalette[k].name) + " " + kShapes[k % kShapes.size()]);
  return names;
}

SynthFixture synth_fixture(std::uint64_t seed, const SynthSpec& spec) {
  if (spec.n_images == 0) throw ConfigError("synth: n_images must be positive");
  if (spec.shapes_min == 0 || spec.shapes_max < spec.shapes_min)
    throw ConfigError("synth: need 1 <= shapes_min <= shapes_max");
  if (spec.height < ImageSample::kMinSize || spec.width < ImageSample::kMinSize)
    throw ConfigError("synth: image size below minimum");
  const auto names = synth_class_names(spec.n_classes);
  const auto h = static_cast<long>(spec.height), w = static_cast<long>(spec.width);
  const long min_side = std::max(6L, std::min(h, w) / 4);
  const long max_side = std::max(min_side, std::min(h, w) * 2 / 5);

  nlohmann::json root;
  root["categories"] = nlohmann::json::array();
  for (std::size_t k = 0; k < names.size(); ++k)
    root["categories"].push_back(
        {{"id", k + 1}, {"name", names[k]}, {"supercategory", kShapes[k % kShapes.size()]}});
  root["images"] = nlohmann::json::array();
  root["annotations"] = nlohmann::json::array();

  SynthFixture fx;
  std::int64_t ann_id = 1;
  for (std::size_t i = 0; i < spec.n_images; ++i) {
    auto rng = stream_rng(seed, "synth/image" + std::to_string(i));
    const std::int64_t image_id = static_cast<std::int64_t>(i) + 1;
    char fname[32];
    std::snprintf(fname, sizeof(fname), "images/%06lld.ppm", static_cast<long long>(image_id));

    // Water background: vertical blue-green gradient plus soft noise texture.
    std::vector<double> px(spec.height * spec.width * 3);
    const double tint = 0.1 * uniform01(rng);
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        const double depth = static_cast<double>(y) / static_cast<double>(h - 1);
        const double noise = 0.06 * (uniform01(rng) - 0.5) +
                             0.03 * std::sin(0.4 * static_cast<double>(x) + 3.0 * tint);
        const std::size_t o = (static_cast<std::size_t>(y) * spec.width + static_cast<std::size_t>(x)) * 3;
        px[o] = std::clamp(0.05 + tint + noise, 0.0, 1.0);
        px[o + 1] = std::clamp(0.35 - 0.15 * depth + noise, 0.0, 1.0);
        px[o + 2] = std::clamp(0.55 - 0.20 * depth + noise, 0.0, 1.0);
      }

    const std::size_t n_shapes =
        spec.shapes_min + uniform_index(rng, spec.shapes_max - spec.shapes_min + 1);
    std::vector<Box> placed;
    for (std::size_t s = 0; s < n_shapes; ++s) {
      const std::size_t cls = uniform_index(rng, spec.n_classes);
      long side = min_side + static_cast<long>(uniform_index(rng, static_cast<std::size_t>(max_side - min_side + 1)));
      Box box{};
      bool ok = false;
      // Crowded canvas: shrink toward min_side before giving up.
      for (int attempt = 0; !ok; ++attempt) {
        if (attempt > 0 && attempt % 200 == 0) {
          if (side == min_side) break;
          side = std::max(min_side, side * 3 / 4);
        }
        const long x0 = static_cast<long>(uniform_index(rng, static_cast<std::size_t>(w - side + 1)));
        const long y0 = static_cast<long>(uniform_index(rng, static_cast<std::size_t>(h - side + 1)));
        box = {x0, y0, x0 + side, y0 + side};
        ok = std::none_of(placed.begin(), placed.end(),
                          [&](const Box& b) { return b.overlaps(box, 2); });
      }
      if (!ok) {
        throw DataError("synth: cannot place shape " + std::to_string(s) + " in image " +
                        std::to_string(image_id) + " without overlap (canvas overfull)");
      }
      placed.push_back(box);

      const double bx0 = static_cast<double>(box.x0), by0 = static_cast<double>(box.y0);
      const double sd = static_cast<double>(side);
      nlohmann::json segmentation;
      BinaryMask mask;
      switch (cls % kShapes.size()) {
        case 0: {
          std::vector<double> poly{bx0, by0, bx0 + sd, by0, bx0 + sd, by0 + sd, bx0, by0 + sd};
          mask = rasterize_polygons({poly}, spec.height, spec.width);
          segmentation = nlohmann::json::array({poly});
          break;
        }
        case 1: {
          mask = BinaryMask(spec.height, spec.width);
          const double cx = bx0 + sd / 2, cy = by0 + sd / 2, r = sd / 2;
          for (long y = box.y0; y < box.y1; ++y)
            for (long x = box.x0; x < box.x1; ++x) {
              const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
              if (dx * dx + dy * dy <= r * r) mask.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1;
            }
          segmentation = rle_to_json(encode_rle(mask));
          break;
        }
        default: {
          std::vector<double> poly{bx0 + sd / 2, by0, bx0 + sd, by0 + sd, bx0, by0 + sd};
          mask = rasterize_polygons({poly}, spec.height, spec.width);
          segmentation = nlohmann::json::array({poly});
          break;
        }
      }
      const auto& rgb = kPalette[cls].rgb;
      long mx0 = w, my0 = h, mx1 = -1, my1 = -1;
      for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
          if (!mask.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x))) continue;
          mx0 = std::min(mx0, x), my0 = std::min(my0, y), mx1 = std::max(mx1, x), my1 = std::max(my1, y);
          const double shade = 0.9 + 0.1 * uniform01(rng);
          const std::size_t o = (static_cast<std::size_t>(y) * spec.width + static_cast<std::size_t>(x)) * 3;
          for (int c = 0; c < 3; ++c) px[o + c] = std::clamp(rgb[c] * shade, 0.0, 1.0);
        }
      if (mask.area() == 0) throw DataError("synth: empty shape mask");
      root["annotations"].push_back(
          {{"id", ann_id++},
           {"image_id", image_id},
           {"category_id", cls + 1},
           {"segmentation", segmentation},
           {"area", mask.area()},
           {"bbox", {mx0, my0, mx1 - mx0 + 1, my1 - my0 + 1}},
           {"iscrowd", 0}});
      ++fx.instance_count;
    }
    // Quantize like the on-disk PPM so in-memory and reloaded images agree.
    for (double& v : px) v = static_cast<double>(std::lround(v * 255.0)) / 255.0;
    fx.images.emplace_back(std::to_string(image_id), spec.height, spec.width, std::move(px));
    root["images"].push_back(
        {{"id", image_id}, {"file_name", fname}, {"height", spec.height}, {"width", spec.width}});
  }
  fx.index = DatasetIndex::from_json(root);
  return fx;
}

void write_fixture(const SynthFixture& fixture, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::size_t i = 0;
  for (const auto& [id, rec] : fixture.index.images()) write_ppm(fixture.images[i++], dir / rec.file_name);
  fixture.index.save(dir / "annotations.json");
}

}  // namespace maris::data
