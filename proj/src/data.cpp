#include "maris/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "maris/error.hpp"

namespace maris::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

const json& field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key))
    throw DataError(where + ": missing field '" + key + "'");
  return obj.at(key);
}

template <typename T>
T get_as(const json& obj, const char* key, const std::string& where) {
  try {
    return field(obj, key, where).get<T>();
  } catch (const json::exception& e) {
    throw DataError(where + ": bad field '" + key + "': " + e.what());
  }
}

std::vector<std::vector<double>> polygons_of(const json& seg, const std::string& where) {
  std::vector<std::vector<double>> polys;
  for (const auto& p : seg) {
    if (!p.is_array()) throw DataError(where + ": polygon must be a flat coordinate array");
    std::vector<double> flat;
    for (const auto& v : p) {
      if (!v.is_number()) throw DataError(where + ": polygon coordinates must be numbers");
      flat.push_back(v.get<double>());
    }
    if (flat.size() < 6 || flat.size() % 2 != 0)
      throw DataError(where + ": polygon needs an even number (>= 6) of coordinates");
    polys.push_back(std::move(flat));
  }
  if (polys.empty()) throw DataError(where + ": empty polygon list");
  return polys;
}

}  // namespace

DatasetIndex DatasetIndex::from_json(const json& j, fs::path root) {
  DatasetIndex idx;
  idx.root_ = std::move(root);
  if (!j.is_object()) throw DataError("annotation file must be a JSON object");
  for (const char* key : {"images", "annotations", "categories"})
    if (!j.contains(key) || !j.at(key).is_array())
      throw DataError(std::string("annotation file: missing array '") + key + "'");

  for (const auto& im : j.at("images")) {
    ImageRecord r;
    r.id = get_as<std::int64_t>(im, "id", "image");
    const std::string where = "image " + std::to_string(r.id);
    r.file_name = get_as<std::string>(im, "file_name", where);
    r.height = get_as<std::size_t>(im, "height", where);
    r.width = get_as<std::size_t>(im, "width", where);
    if (!idx.images_.emplace(r.id, r).second) throw DataError(where + ": duplicate id");
  }
  for (const auto& c : j.at("categories")) {
    CategoryRecord r;
    r.id = get_as<std::int64_t>(c, "id", "category");
    const std::string where = "category " + std::to_string(r.id);
    r.name = get_as<std::string>(c, "name", where);
    r.supercategory = c.value("supercategory", std::string());
    if (!idx.categories_.emplace(r.id, r).second) throw DataError(where + ": duplicate id");
  }
  std::set<std::string> names;
  for (const auto& [id, c] : idx.categories_)
    if (!names.insert(c.name).second)
      throw DataError("category " + std::to_string(id) + ": duplicate name '" + c.name + "'");

  for (const auto& a : j.at("annotations")) {
    AnnotationRecord r;
    r.id = get_as<std::int64_t>(a, "id", "annotation");
    const std::string where = "annotation " + std::to_string(r.id);
    r.image_id = get_as<std::int64_t>(a, "image_id", where);
    r.category_id = get_as<std::int64_t>(a, "category_id", where);
    if (!idx.images_.count(r.image_id))
      throw DataError(where + ": references missing image id " + std::to_string(r.image_id));
    if (!idx.categories_.count(r.category_id))
      throw DataError(where + ": references missing category id " + std::to_string(r.category_id));
    r.segmentation = field(a, "segmentation", where);
    if (a.contains("bbox")) r.bbox = get_as<std::vector<double>>(a, "bbox", where);
    if (!r.bbox.empty() && r.bbox.size() != 4) throw DataError(where + ": bbox must have 4 values");
    const ImageRecord& im = idx.images_.at(r.image_id);
    if (r.segmentation.is_array()) {
      polygons_of(r.segmentation, where);
    } else if (r.segmentation.is_object()) {
      Rle rle;
      try {
        rle = rle_from_json(r.segmentation);
      } catch (const DataError& e) {
        throw DataError(where + ": " + e.what());
      }
      if (rle.height != im.height || rle.width != im.width)
        throw DataError(where + ": run-length size does not match image " +
                        std::to_string(im.id));
      try {
        decode_rle(rle);
      } catch (const DataError& e) {
        throw DataError(where + ": " + e.what());
      }
    } else {
      throw DataError(where + ": segmentation must be polygons or run-length object");
    }
    if (!idx.annotations_.emplace(r.id, std::move(r)).second)
      throw DataError(where + ": duplicate id");
  }
  idx.raw_ = j;
  return idx;
}

DatasetIndex DatasetIndex::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw DataError("'" + path.string() + "': " + e.what());
  }
  return from_json(j, path.parent_path());
}

json DatasetIndex::to_json() const { return raw_; }

std::string DatasetIndex::dump() const { return raw_.dump(2) + "\n"; }

void DatasetIndex::save(const fs::path& path) const { write_file(path, dump()); }

const CategoryRecord& DatasetIndex::category(std::int64_t id) const {
  auto it = categories_.find(id);
  if (it == categories_.end()) throw DataError("unknown category id " + std::to_string(id));
  return it->second;
}

std::optional<std::int64_t> DatasetIndex::category_id(const std::string& name) const {
  for (const auto& [id, c] : categories_)
    if (c.name == name) return id;
  return std::nullopt;
}

std::vector<std::string> DatasetIndex::category_names() const {
  std::vector<std::string> out;
  for (const auto& [id, c] : categories_) out.push_back(c.name);
  return out;
}

std::vector<std::int64_t> DatasetIndex::annotations_of(std::int64_t image_id) const {
  std::vector<std::int64_t> out;
  for (const auto& [id, a] : annotations_)
    if (a.image_id == image_id) out.push_back(id);
  return out;
}

std::vector<std::int64_t> DatasetIndex::images_with(const std::string& category_name) const {
  const auto cid = category_id(category_name);
  std::set<std::int64_t> ids;
  if (cid)
    for (const auto& [id, a] : annotations_)
      if (a.category_id == *cid) ids.insert(a.image_id);
  return {ids.begin(), ids.end()};
}

BinaryMask DatasetIndex::decode_mask(std::int64_t annotation_id) const {
  auto it = annotations_.find(annotation_id);
  if (it == annotations_.end())
    throw DataError("unknown annotation id " + std::to_string(annotation_id));
  const AnnotationRecord& a = it->second;
  const ImageRecord& im = images_.at(a.image_id);
  if (a.segmentation.is_object()) return decode_rle(rle_from_json(a.segmentation));
  return rasterize_polygons(polygons_of(a.segmentation, "annotation " + std::to_string(a.id)),
                            im.height, im.width);
}

ImageSample DatasetIndex::load_image(std::int64_t image_id) const {
  auto it = images_.find(image_id);
  if (it == images_.end()) throw DataError("unknown image id " + std::to_string(image_id));
  ImageSample img = read_ppm(root_ / it->second.file_name, std::to_string(image_id));
  if (img.height() != it->second.height || img.width() != it->second.width)
    throw DataError("image " + std::to_string(image_id) + ": file size does not match record");
  return img;
}

void write_ppm(const ImageSample& image, const fs::path& path) {
  std::string out = "P6\n" + std::to_string(image.width()) + " " +
                    std::to_string(image.height()) + "\n255\n";
  out.reserve(out.size() + image.pixels().size());
  for (double v : image.pixels())
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  write_file(path, out);
}

ImageSample read_ppm(const fs::path& path, std::string id) {
  const std::string bytes = read_file(path);
  std::istringstream in(bytes);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || !in)
    throw DataError("'" + path.string() + "': not an 8-bit binary PPM");
  in.get();
  const auto offset = static_cast<std::size_t>(in.tellg());
  if (bytes.size() < offset + w * h * 3)
    throw DataError("'" + path.string() + "': truncated pixel data");
  std::vector<double> px(w * h * 3);
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = static_cast<unsigned char>(bytes[offset + i]) / 255.0;
  return ImageSample(std::move(id), h, w, std::move(px));
}

std::vector<std::string> ClassSplit::train_classes() const {
  std::vector<std::string> out = train_exclusive;
  out.insert(out.end(), intersection.begin(), intersection.end());
  return out;
}

std::vector<std::string> ClassSplit::val_classes() const {
  std::vector<std::string> out = intersection;
  out.insert(out.end(), ov_exclusive.begin(), ov_exclusive.end());
  return out;
}

void ClassSplit::validate() const {
  std::set<std::string> seen;
  for (const auto* group : {&train_exclusive, &intersection, &ov_exclusive})
    for (const auto& n : *group)
      if (!seen.insert(n).second) throw DataError("class split: '" + n + "' appears twice");
}

ClassSplit build_class_split(const std::vector<std::string>& train_names,
                             const std::vector<std::string>& val_names) {
  const std::set<std::string> tr(train_names.begin(), train_names.end());
  const std::set<std::string> va(val_names.begin(), val_names.end());
  ClassSplit s;
  std::set_difference(tr.begin(), tr.end(), va.begin(), va.end(),
                      std::back_inserter(s.train_exclusive));
  std::set_intersection(tr.begin(), tr.end(), va.begin(), va.end(),
                        std::back_inserter(s.intersection));
  std::set_difference(va.begin(), va.end(), tr.begin(), tr.end(),
                      std::back_inserter(s.ov_exclusive));
  return s;
}

ClassSplit build_class_split(const DatasetIndex& train, const DatasetIndex& val) {
  return build_class_split(train.category_names(), val.category_names());
}

json split_to_json(const ClassSplit& split) {
  return {{"train_exclusive", split.train_exclusive},
          {"intersection", split.intersection},
          {"ov_exclusive", split.ov_exclusive}};
}

ClassSplit split_from_json(const json& j) {
  ClassSplit s;
  try {
    s.train_exclusive = j.at("train_exclusive").get<std::vector<std::string>>();
    s.intersection = j.at("intersection").get<std::vector<std::string>>();
    s.ov_exclusive = j.at("ov_exclusive").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("split file: ") + e.what());
  }
  s.validate();
  return s;
}

std::string dump_split(const ClassSplit& split) { return split_to_json(split).dump(2) + "\n"; }

void save_split(const ClassSplit& split, const fs::path& path) {
  write_file(path, dump_split(split));
}

ClassSplit load_split(const fs::path& path) {
  try {
    return split_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw DataError("'" + path.string() + "': " + e.what());
  }
}

std::string split_report(const ClassSplit& split) {
  std::ostringstream os;
  os << "train classes: " << split.train_classes().size() << "\n"
     << "val classes: " << split.val_classes().size() << "\n"
     << "train exclusive: " << split.train_exclusive.size() << "\n"
     << "intersection: " << split.intersection.size() << "\n"
     << "open-vocabulary exclusive: " << split.ov_exclusive.size() << "\n";
  if (split.intersection.empty())
    os << "note: empty intersection (disjoint vocabularies, cross-domain setting)\n";
  return os.str();
}

std::string to_string(TaskMode mode) {
  return mode == TaskMode::kInDomain ? "in-domain" : "cross-domain";
}

TaskMode parse_task_mode(const std::string& text) {
  if (text == "in-domain") return TaskMode::kInDomain;
  if (text == "cross-domain") return TaskMode::kCrossDomain;
  throw ConfigError("unknown task mode '" + text + "' (expected in-domain or cross-domain)");
}

TaskConfig make_task_config(TaskMode mode, const std::string& train_source,
                            const std::string& eval_source, const ClassSplit& split) {
  split.validate();
  if (mode == TaskMode::kCrossDomain && !split.intersection.empty()) {
    throw ConfigError("cross-domain task requires disjoint vocabularies, but " +
                      std::to_string(split.intersection.size()) + " names are shared (e.g. '" +
                      split.intersection.front() + "')");
  }
  TaskConfig t;
  t.mode = mode;
  t.train_source = train_source;
  t.eval_source = eval_source;
  t.train_vocabulary = split.train_classes();
  std::sort(t.train_vocabulary.begin(), t.train_vocabulary.end());
  t.vocabulary = split.val_classes();
  std::sort(t.vocabulary.begin(), t.vocabulary.end());
  return t;
}

}  // namespace maris::data
