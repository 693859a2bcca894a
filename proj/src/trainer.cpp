#include "maris/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

#include "maris/error.hpp"
#include "maris/prompt_bank.hpp"
#include "maris/random.hpp"

namespace maris::trainer {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const OptimizerConfig& c) {
  j = {{"kind", c.kind},   {"step_size", c.step_size}, {"steps", c.steps},
       {"batch_size", c.batch_size}, {"beta1", c.beta1}, {"beta2", c.beta2},
       {"epsilon", c.epsilon}};
}

void from_json(const json& j, OptimizerConfig& c) {
  OptimizerConfig d;
  c.kind = j.value("kind", d.kind);
  c.step_size = j.value("step_size", d.step_size);
  c.steps = j.value("steps", d.steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.epsilon = j.value("epsilon", d.epsilon);
}

void RunConfig::validate() const {
  encoder.validate();
  gpem.validate();
  selection.validate();
  if (optimizer.kind != "adam" && optimizer.kind != "sgd")
    throw ConfigError("optimizer.kind must be adam or sgd, got '" + optimizer.kind + "'");
  if (!(optimizer.step_size > 0)) throw ConfigError("optimizer.step_size must be > 0");
  if (optimizer.steps < 0) throw ConfigError("optimizer.steps must be >= 0");
  if (optimizer.batch_size < 1) throw ConfigError("optimizer.batch_size must be >= 1");
  if (!(score_floor >= 0 && score_floor < 1)) throw ConfigError("score_floor must be in [0,1)");
}

json run_config_to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"mode", data::to_string(c.mode)},
          {"train_classes", c.train_classes},
          {"score_floor", c.score_floor},
          {"encoder", c.encoder},
          {"gpem", c.gpem},
          {"heads", c.heads},
          {"selection", c.selection},
          {"loss", c.loss},
          {"optimizer", c.optimizer}};
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object() || !j.contains("seed")) throw ConfigError("run config: 'seed' is required");
  RunConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("mode")) c.mode = data::parse_task_mode(j.at("mode").get<std::string>());
    c.train_classes = j.value("train_classes", std::vector<std::string>{});
    c.score_floor = j.value("score_floor", c.score_floor);
    if (j.contains("encoder")) c.encoder = j.at("encoder").get<EncoderConfig>();
    if (j.contains("gpem")) c.gpem = j.at("gpem").get<gpem::GpemConfig>();
    if (j.contains("heads")) c.heads = j.at("heads").get<model::HeadConfig>();
    c.selection.seed = c.seed;
    c.loss.seed = c.seed;
    if (j.contains("selection")) {
      json s = j.at("selection");
      if (!s.contains("seed")) s["seed"] = c.seed;
      c.selection = s.get<saim::SelectionConfig>();
    }
    if (j.contains("loss")) {
      json l = j.at("loss");
      if (!l.contains("seed")) l["seed"] = c.seed;
      c.loss = l.get<losses::LossConfig>();
    }
    if (j.contains("optimizer")) c.optimizer = j.at("optimizer").get<OptimizerConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void put_le(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(b, 8);
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "maris-checkpoint";
  manifest["version"] = Checkpoint::kFormatVersion;
  manifest["step"] = ckpt.step;
  manifest["loss_history"] = ckpt.loss_history;
  manifest["train_vocabulary"] = ckpt.train_vocabulary;
  manifest["encoder_checksum"] = ckpt.encoder_checksum;
  manifest["config"] = run_config_to_json(ckpt.config);
  manifest["params"] = json::array();
  std::ofstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw DataError("cannot write '" + (dir / "params.bin").string() + "'");
  for (const auto& [name, m] : ckpt.params) {
    manifest["params"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    for (double v : m.data()) put_le(bin, v);
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw DataError("cannot write '" + (dir / "manifest.json").string() + "'");
  out << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw DataError("checkpoint '" + dir.string() + "': missing manifest.json");
  Checkpoint c;
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "maris-checkpoint")
    throw DataError("checkpoint '" + dir.string() + "': not a checkpoint manifest");
  if (manifest.value("version", 0) != Checkpoint::kFormatVersion)
    throw DataError("checkpoint '" + dir.string() + "': unsupported version " +
                    std::to_string(manifest.value("version", 0)));
  c.config = run_config_from_json(manifest.at("config"));
  c.step = manifest.at("step").get<int>();
  c.loss_history = manifest.at("loss_history").get<std::vector<double>>();
  c.train_vocabulary = manifest.at("train_vocabulary").get<std::vector<std::string>>();
  c.encoder_checksum = manifest.at("encoder_checksum").get<std::uint64_t>();

  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw DataError("checkpoint '" + dir.string() + "': missing params.bin");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)),
                                   std::istreambuf_iterator<char>());
  std::size_t offset = 0;
  for (const auto& p : manifest.at("params")) {
    const auto rows = p.at("rows").get<std::size_t>(), cols = p.at("cols").get<std::size_t>();
    if (offset + rows * cols * 8 > bytes.size())
      throw DataError("checkpoint params.bin is truncated at '" + p.at("name").get<std::string>() + "'");
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i, offset += 8) m[i] = get_le(bytes.data() + offset);
    c.params.emplace_back(p.at("name").get<std::string>(), std::move(m));
  }
  if (offset != bytes.size()) throw DataError("checkpoint params.bin has trailing bytes");
  return c;
}

model::Model restore_model(const Checkpoint& ckpt) {
  model::Model m = model::Model::init(ckpt.config.encoder, ckpt.config.gpem, ckpt.config.heads,
                                      ckpt.config.seed);
  if (m.params().size() != ckpt.params.size())
    throw DataError("checkpoint has " + std::to_string(ckpt.params.size()) +
                    " parameter arrays, model expects " + std::to_string(m.params().size()));
  std::size_t i = 0;
  for (auto& [name, var] : m.params()) {
    const auto& [cname, value] = ckpt.params[i++];
    if (cname != name || !value.same_shape(var.value()))
      throw DataError("checkpoint parameter '" + cname + "' " + value.shape_str() +
                      " does not match model parameter '" + name + "' " + var.value().shape_str());
    var.mutable_value() = value;
  }
  return m;
}

Checkpoint snapshot(const model::Model& m, const RunConfig& config) {
  Checkpoint c;
  c.config = config;
  for (const auto& [name, var] : m.params()) c.params.emplace_back(name, var.value());
  return c;
}

// ---------------------------------------------------------------------------

saim::SelectionResult build_class_embeddings(const data::DatasetIndex& dataset,
                                             const std::vector<std::string>& vocabulary,
                                             const EncoderSet& encoders,
                                             const saim::SelectionConfig& cfg) {
  const auto bank = saim::build_prompt_bank();
  return saim::select_with_single_image(
      dataset, [&](std::int64_t id) { return dataset.load_image(id); }, vocabulary,
      bank.templates(), encoders, cfg);
}

losses::TargetSet make_targets(const data::DatasetIndex& dataset, std::int64_t image_id,
                               const std::vector<std::string>& vocabulary,
                               std::size_t mask_height, std::size_t mask_width) {
  const auto& im = dataset.images().at(image_id);
  losses::TargetSet t;
  t.height = mask_height;
  t.width = mask_width;
  std::vector<std::vector<double>> rows;
  for (std::int64_t aid : dataset.annotations_of(image_id)) {
    const auto& a = dataset.annotations().at(aid);
    const auto& name = dataset.category(a.category_id).name;
    const auto it = std::find(vocabulary.begin(), vocabulary.end(), name);
    if (it == vocabulary.end()) continue;
    const BinaryMask full = dataset.decode_mask(aid);
    std::vector<double> cells(mask_height * mask_width, 0.0);
    for (std::size_t y = 0; y < mask_height; ++y) {
      const std::size_t y0 = y * im.height / mask_height, y1 = (y + 1) * im.height / mask_height;
      for (std::size_t x = 0; x < mask_width; ++x) {
        const std::size_t x0 = x * im.width / mask_width, x1 = (x + 1) * im.width / mask_width;
        std::size_t on = 0, n = 0;
        for (std::size_t yy = y0; yy < y1; ++yy)
          for (std::size_t xx = x0; xx < x1; ++xx, ++n) on += full.at(yy, xx);
        cells[y * mask_width + x] = n > 0 && 2 * on >= n ? 1.0 : 0.0;
      }
    }
    t.class_ids.push_back(static_cast<std::size_t>(it - vocabulary.begin()));
    rows.push_back(std::move(cells));
  }
  t.masks = Matrix(rows.size(), mask_height * mask_width);
  for (std::size_t g = 0; g < rows.size(); ++g)
    std::copy(rows[g].begin(), rows[g].end(), t.masks.row(g).begin());
  return t;
}

namespace {

class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, ParamSet& params) : cfg_(cfg), params_(params) {
    for (const auto& [name, v] : params_) {
      m_.emplace_back(v.rows(), v.cols());
      v_.emplace_back(v.rows(), v.cols());
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_), c2 = 1.0 - std::pow(cfg_.beta2, t_);
    std::size_t i = 0;
    for (auto& [name, var] : params_) {
      Matrix& value = var.mutable_value();
      const Matrix& grad = var.grad();
      if (grad.empty()) {
        ++i;
        continue;
      }
      for (std::size_t e = 0; e < value.size(); ++e) {
        const double g = grad[e];
        if (cfg_.kind == "sgd") {
          value[e] -= cfg_.step_size * g;
          continue;
        }
        m_[i][e] = cfg_.beta1 * m_[i][e] + (1 - cfg_.beta1) * g;
        v_[i][e] = cfg_.beta2 * v_[i][e] + (1 - cfg_.beta2) * g * g;
        value[e] -= cfg_.step_size * (m_[i][e] / c1) / (std::sqrt(v_[i][e] / c2) + cfg_.epsilon);
      }
      ++i;
    }
  }

 private:
  OptimizerConfig cfg_;
  ParamSet& params_;
  std::vector<Matrix> m_, v_;
  int t_ = 0;
};

// Fisher-Yates with the portable index sampler, so orders match across platforms.
void shuffle(std::vector<std::int64_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

}  // namespace

Checkpoint train(const RunConfig& config, const data::DatasetIndex& dataset,
                 const TrainOptions& options) {
  config.validate();
  const EncoderSet encoders = make_stub_encoders(config.encoder);
  const std::uint64_t encoder_before = encoders.parameter_checksum();

  std::vector<std::string> vocabulary =
      config.train_classes.empty() ? dataset.category_names() : config.train_classes;
  for (const auto& name : vocabulary)
    if (!dataset.category_id(name))
      throw DataError("training class '" + name + "' is not a dataset category");

  const saim::SelectionResult classes =
      build_class_embeddings(dataset, vocabulary, encoders, config.selection);

  model::Model m = model::Model::init(config.encoder, config.gpem, config.heads, config.seed);

  struct Item {
    model::EncodedImage encoded;
    losses::TargetSet targets;
  };
  std::map<std::int64_t, Item> items;
  const int stride0 = config.encoder.strides.front();
  for (const auto& [id, im] : dataset.images()) {
    const std::size_t mh = level_extent(im.height, stride0), mw = level_extent(im.width, stride0);
    losses::TargetSet t = make_targets(dataset, id, vocabulary, mh, mw);
    if (t.size() == 0) continue;
    if (t.size() > static_cast<std::size_t>(config.gpem.num_queries))
      throw ConfigError("image " + std::to_string(id) + " has " + std::to_string(t.size()) +
                        " instances but only " + std::to_string(config.gpem.num_queries) +
                        " queries");
    items[id] = {model::encode_image(encoders, dataset.load_image(id)), std::move(t)};
  }
  if (items.empty()) throw DataError("no training image contains a training class");

  std::vector<std::int64_t> order;
  for (const auto& [id, item] : items) order.push_back(id);
  auto batch_rng = stream_rng(config.seed, "batches");
  std::vector<std::int64_t> epoch;
  std::size_t cursor = 0;

  Optimizer opt(config.optimizer, m.params());
  Checkpoint result;
  for (int step = 0; step < config.optimizer.steps; ++step) {
    m.params().zero_grad();
    ag::Var loss;
    const auto bs = static_cast<std::size_t>(config.optimizer.batch_size);
    for (std::size_t b = 0; b < bs; ++b) {
      if (cursor == epoch.size()) {
        epoch = order;
        shuffle(epoch, batch_rng);
        cursor = 0;
      }
      const Item& item = items.at(epoch[cursor++]);
      const model::ForwardOutput out = m.forward(item.encoded, classes.embeddings.vectors);
      if (!out.class_logits.value().all_finite() || !out.mask_logits.value().all_finite())
        throw NumericError("training diverged: non-finite logits at step " + std::to_string(step), step);
      const losses::LossTerms terms =
          losses::total_loss(out.class_logits, out.mask_logits, item.targets, config.loss);
      loss = loss.valid() ? ag::add(loss, terms.total) : terms.total;
    }
    loss = ag::scale(loss, 1.0 / static_cast<double>(bs));
    const double value = loss.scalar();
    if (!std::isfinite(value))
      throw NumericError("training diverged: non-finite loss at step " + std::to_string(step), step);
    ag::backward(loss);
    for (const auto& [name, var] : m.params())
      if (!var.grad().empty() && !var.grad().all_finite())
        throw NumericError("non-finite gradient for '" + name + "' at step " + std::to_string(step), step);
    opt.step();
    result.loss_history.push_back(value);
    if (options.on_step) options.on_step(step, value);
  }

  if (encoders.parameter_checksum() != encoder_before)
    throw Error("frozen encoder parameters changed during training");

  Checkpoint snap = snapshot(m, config);
  snap.step = config.optimizer.steps;
  snap.loss_history = std::move(result.loss_history);
  snap.train_vocabulary = vocabulary;
  snap.encoder_checksum = encoder_before;
  return snap;
}

namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

std::vector<eval::InstancePrediction> infer(const model::Model& m,
                                            const model::EncodedImage& image,
                                            std::int64_t image_id,
                                            const std::vector<std::string>& vocabulary,
                                            const saim::ClassEmbeddings& classes,
                                            const InferenceOptions& options) {
  if (classes.vectors.rows() != vocabulary.size() || classes.class_names != vocabulary)
    throw ShapeError("inference: class embeddings cover " + std::to_string(classes.vectors.rows()) +
                     " classes, vocabulary has " + std::to_string(vocabulary.size()));
  const model::ForwardOutput out = m.forward(image, classes.vectors);
  const Matrix& cls = out.class_logits.value();
  const Matrix up = gpem::upsample_matrix(out.mask_height, out.mask_width, image.height, image.width);
  const Matrix full = matmul(out.mask_logits.value(), transpose(up));  // N_Q x (H*W)

  std::vector<eval::InstancePrediction> preds;
  for (std::size_t q = 0; q < cls.rows(); ++q) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < cls.cols(); ++k)
      if (cls(q, k) > cls(q, best)) best = k;
    BinaryMask mask(image.height, image.width);
    double conf = 0.0;
    std::size_t area = 0;
    for (std::size_t i = 0; i < full.cols(); ++i) {
      if (full(q, i) > 0.0) {
        mask.bits[i] = 1;
        conf += sigmoid(full(q, i));
        ++area;
      }
    }
    if (area == 0) continue;
    const double score = sigmoid(cls(q, best)) * conf / static_cast<double>(area);
    if (score < options.score_floor) continue;
    preds.push_back({image_id, vocabulary[best], std::move(mask), score});
  }
  return preds;
}

std::vector<eval::InstancePrediction> infer_encoded(const model::Model& m,
                                                    const std::map<std::int64_t, model::EncodedImage>& encoded,
                                                    const std::vector<std::string>& vocabulary,
                                                    const saim::ClassEmbeddings& classes,
                                                    const InferenceOptions& options) {
  std::vector<eval::InstancePrediction> all;
  for (const auto& [id, image] : encoded) {
    auto preds = infer(m, image, id, vocabulary, classes, options);
    std::move(preds.begin(), preds.end(), std::back_inserter(all));
  }
  return all;
}

std::vector<eval::InstancePrediction> infer_dataset(const model::Model& m,
                                                    const EncoderSet& encoders,
                                                    const data::DatasetIndex& dataset,
                                                    const std::vector<std::string>& vocabulary,
                                                    const saim::ClassEmbeddings& classes,
                                                    const InferenceOptions& options) {
  return infer_encoded(m, encode_dataset(encoders, dataset), vocabulary, classes, options);
}

EncodedDataset encode_dataset(const EncoderSet& encoders, const data::DatasetIndex& dataset) {
  EncodedDataset out;
  for (const auto& [id, im] : dataset.images())
    out[id] = model::encode_image(encoders, dataset.load_image(id));
  return out;
}

EvalOutputs evaluate_model(const model::Model& m, const EncoderSet& encoders,
                           const data::DatasetIndex& dataset, const EncodedDataset& encoded,
                           const std::vector<std::string>& vocabulary,
                           const data::ClassSplit& split, const saim::SelectionConfig& selection,
                           const InferenceOptions& options) {
  EvalOutputs out;
  out.selection = build_class_embeddings(dataset, vocabulary, encoders, selection);
  out.predictions = infer_encoded(m, encoded, vocabulary, out.selection.embeddings, options);
  out.report = eval::group_metrics(eval::evaluate_classes(out.predictions, dataset, vocabulary), split);
  return out;
}

std::vector<SweepRow> topn_sweep(const model::Model& m, const EncoderSet& encoders,
                                 const data::DatasetIndex& dataset, const EncodedDataset& encoded,
                                 const std::vector<std::string>& vocabulary,
                                 const data::ClassSplit& split, saim::SelectionConfig selection,
                                 const std::vector<int>& grid, const InferenceOptions& options) {
  const int t = static_cast<int>(saim::build_prompt_bank().size());
  selection.strategy = saim::Strategy::kMixed;
  std::vector<SweepRow> rows;
  for (int n : grid) {
    SweepRow row;
    row.requested = n;
    row.used = std::min(n, t);
    row.clamped = n > t;
    selection.top_n = row.used;
    const EvalOutputs r =
        evaluate_model(m, encoders, dataset, encoded, vocabulary, split, selection, options);
    row.intersection = r.report.group(eval::kIntersection).metrics;
    row.open_vocabulary = r.report.group(eval::kOpenVocabulary).metrics;
    row.overall = r.report.group(eval::kOverall).metrics;
    rows.push_back(row);
  }
  return rows;
}

json sweep_to_json(const std::vector<SweepRow>& rows) {
  auto metrics = [](const std::optional<eval::ApSummary>& s) -> json {
    if (!s) return nullptr;
    return {{"mAP", s->map}, {"AP50", s->ap50}, {"AP75", s->ap75}};
  };
  json arr = json::array();
  for (const auto& r : rows)
    arr.push_back({{"top_n", r.requested},
                   {"top_n_used", r.used},
                   {"clamped", r.clamped},
                   {"Intersection", metrics(r.intersection)},
                   {"Open-Vocabulary", metrics(r.open_vocabulary)},
                   {"Overall", metrics(r.overall)}});
  return arr;
}

std::string format_sweep_table(const std::vector<SweepRow>& rows) {
  std::string s = "TopN  used  Inter.mAP  OV.mAP  Overall.mAP  Overall.AP50  Overall.AP75  note\n";
  auto cell = [](const std::optional<eval::ApSummary>& v, double eval::ApSummary::*f, int w) {
    char buf[32];
    if (v) std::snprintf(buf, sizeof buf, "%*.2f", w, (*v).*f);
    else std::snprintf(buf, sizeof buf, "%*s", w, "-");
    return std::string(buf);
  };
  for (const auto& r : rows) {
    char head[32];
    std::snprintf(head, sizeof head, "%4d  %4d", r.requested, r.used);
    s += head;
    s += "  " + cell(r.intersection, &eval::ApSummary::map, 9);
    s += "  " + cell(r.open_vocabulary, &eval::ApSummary::map, 6);
    s += "  " + cell(r.overall, &eval::ApSummary::map, 11);
    s += "  " + cell(r.overall, &eval::ApSummary::ap50, 12);
    s += "  " + cell(r.overall, &eval::ApSummary::ap75, 12);
    s += r.clamped ? "  clamped to T\n" : "\n";
  }
  return s;
}

}  // namespace maris::trainer
