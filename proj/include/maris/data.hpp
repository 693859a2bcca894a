#pragma once

// COCO-style annotation index, PPM image IO, class splits and task configs.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maris/encoders.hpp"
#include "maris/mask.hpp"

namespace maris::data {

struct ImageRecord {
  std::int64_t id = 0;
  std::string file_name;
  std::size_t height = 0;
  std::size_t width = 0;
};

struct CategoryRecord {
  std::int64_t id = 0;
  std::string name;
  std::string supercategory;
};

struct AnnotationRecord {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  /// Either a list of flat polygons or an uncompressed run-length object.
  nlohmann::json segmentation;
  std::vector<double> bbox;
};

/// Immutable, validated annotation index. Records keep their source JSON so
/// that save(load(x)) reproduces canonical files byte for byte.
class DatasetIndex {
 public:
  DatasetIndex() = default;
  /// Validates references and geometry; throws DataError naming the record.
  static DatasetIndex from_json(const nlohmann::json& j, std::filesystem::path root = {});
  static DatasetIndex load(const std::filesystem::path& path);

  nlohmann::json to_json() const;
  /// Canonical text form (sorted keys, two-space indent, trailing newline).
  std::string dump() const;
  void save(const std::filesystem::path& path) const;

  const std::map<std::int64_t, ImageRecord>& images() const { return images_; }
  const std::map<std::int64_t, AnnotationRecord>& annotations() const { return annotations_; }
  const std::map<std::int64_t, CategoryRecord>& categories() const { return categories_; }
  const std::filesystem::path& root() const { return root_; }

  const CategoryRecord& category(std::int64_t id) const;
  std::optional<std::int64_t> category_id(const std::string& name) const;
  /// Category names ordered by category id.
  std::vector<std::string> category_names() const;
  /// Annotation ids of an image in ascending id order.
  std::vector<std::int64_t> annotations_of(std::int64_t image_id) const;
  /// Image ids (ascending) holding at least one instance of the named category.
  std::vector<std::int64_t> images_with(const std::string& category_name) const;

  BinaryMask decode_mask(std::int64_t annotation_id) const;
  ImageSample load_image(std::int64_t image_id) const;

 private:
  std::map<std::int64_t, ImageRecord> images_;
  std::map<std::int64_t, AnnotationRecord> annotations_;
  std::map<std::int64_t, CategoryRecord> categories_;
  nlohmann::json raw_;
  std::filesystem::path root_;
};

void write_ppm(const ImageSample& image, const std::filesystem::path& path);
ImageSample read_ppm(const std::filesystem::path& path, std::string id);

// ---------------------------------------------------------------------------
// Class splits

struct ClassSplit {
  std::vector<std::string> train_exclusive;
  std::vector<std::string> intersection;
  std::vector<std::string> ov_exclusive;

  std::vector<std::string> train_classes() const;  // train_exclusive + intersection
  std::vector<std::string> val_classes() const;    // intersection + ov_exclusive
  /// Throws DataError when the three groups overlap.
  void validate() const;
  friend bool operator==(const ClassSplit&, const ClassSplit&) = default;
};

/// Name-based split; each group is sorted.
ClassSplit build_class_split(const std::vector<std::string>& train_names,
                             const std::vector<std::string>& val_names);
ClassSplit build_class_split(const DatasetIndex& train, const DatasetIndex& val);

nlohmann::json split_to_json(const ClassSplit& split);
ClassSplit split_from_json(const nlohmann::json& j);
std::string dump_split(const ClassSplit& split);
void save_split(const ClassSplit& split, const std::filesystem::path& path);
ClassSplit load_split(const std::filesystem::path& path);

/// Human-readable summary with counts; flags an empty intersection.
std::string split_report(const ClassSplit& split);

enum class TaskMode { kInDomain, kCrossDomain };

std::string to_string(TaskMode mode);
TaskMode parse_task_mode(const std::string& text);

struct TaskConfig {
  TaskMode mode = TaskMode::kInDomain;
  std::string train_source;
  std::string eval_source;
  std::vector<std::string> train_vocabulary;
  std::vector<std::string> vocabulary;  // used at inference
};

/// Throws ConfigError for cross-domain splits that share category names.
TaskConfig make_task_config(TaskMode mode, const std::string& train_source,
                            const std::string& eval_source, const ClassSplit& split);

}  // namespace maris::data
