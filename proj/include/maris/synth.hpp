#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "maris/data.hpp"

namespace maris::data {

struct SynthSpec {
  std::size_t n_images = 20;
  std::size_t n_classes = 6;
  std::size_t shapes_min = 1;  // shapes per image drawn uniformly from [min, max]
  std::size_t shapes_max = 3;
  std::size_t height = 64;
  std::size_t width = 64;
};

struct SynthFixture {
  DatasetIndex index;  // file names relative to the fixture directory
  std::vector<ImageSample> images;  // same order as index.images()
  std::size_t instance_count = 0;
};

/// Names of the fixture classes: distinct colour per class, shape cycling
/// through square / circle / triangle. At most 12 classes.
std::vector<std::string> synth_class_names(std::size_t n_classes);

/// Deterministic scenes of coloured shapes on textured water backgrounds.
/// Throws ConfigError on invalid specs and DataError when shapes cannot be
/// placed without overlap.
SynthFixture synth_fixture(std::uint64_t seed, const SynthSpec& spec);

/// Writes images/<id>.ppm and annotations.json under `dir`.
void write_fixture(const SynthFixture& fixture, const std::filesystem::path& dir);

}  // namespace maris::data
