#include "maris/saim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "maris/random.hpp"

namespace maris::saim {

SimilarityTensor::SimilarityTensor(std::size_t batch, std::size_t height, std::size_t width,
                                   std::size_t classes, std::size_t templates)
    : dims_{batch, height, width, classes, templates},
      values_(batch * height * width * classes * templates, 0.0) {}

BatchScores::BatchScores(std::size_t batch, std::size_t classes, std::size_t templates)
    : batch_(batch), classes_(classes), templates_(templates),
      values_(batch * classes * templates, 0.0) {}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kMeanAll: return "mean-all";
    case Strategy::kMixed: return "mixed";
    case Strategy::kWeighted: return "weighted";
  }
  return "mixed";
}

Strategy parse_strategy(const std::string& text) {
  if (text == "mean-all") return Strategy::kMeanAll;
  if (text == "mixed") return Strategy::kMixed;
  if (text == "weighted") return Strategy::kWeighted;
  throw ConfigError("unknown selection strategy '" + text +
                    "' (expected mean-all, mixed or weighted)");
}

void SelectionConfig::validate() const {
  if (top_n < 1) throw ConfigError("selection: top_n must be >= 1");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("selection: lambda must be in [0,1]");
  if (!(alpha_enh > 1.0)) throw ConfigError("selection: alpha_enh must be > 1");
}

void to_json(nlohmann::json& j, const SelectionConfig& c) {
  j = nlohmann::json{{"strategy", to_string(c.strategy)},
                     {"top_n", c.top_n},
                     {"lambda", c.lambda},
                     {"alpha_enh", c.alpha_enh},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SelectionConfig& c) {
  SelectionConfig d;
  c.strategy = parse_strategy(j.value("strategy", to_string(d.strategy)));
  c.top_n = j.value("top_n", d.top_n);
  c.lambda = j.value("lambda", d.lambda);
  c.alpha_enh = j.value("alpha_enh", d.alpha_enh);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

SimilarityTensor compute_similarity_tensor(std::span<const FeatureMap> pixel_features,
                                           const TemplateEmbeddings& templates) {
  if (pixel_features.empty()) throw ShapeError("similarity: empty batch");
  const std::size_t h = pixel_features[0].height, w = pixel_features[0].width;
  const std::size_t k_n = templates.num_classes(), t_n = templates.num_templates();
  std::vector<double> emb_norm(k_n * t_n);
  for (std::size_t k = 0; k < k_n; ++k)
    for (std::size_t t = 0; t < t_n; ++t) {
      double ss = 0.0;
      for (double v : templates.at(k, t)) ss += v * v;
      emb_norm[k * t_n + t] = std::sqrt(ss);
    }
  SimilarityTensor s(pixel_features.size(), h, w, k_n, t_n);
  for (std::size_t b = 0; b < pixel_features.size(); ++b) {
    const FeatureMap& fm = pixel_features[b];
    if (fm.height != h || fm.width != w) throw ShapeError("similarity: batch items differ in size");
    if (fm.channels() != templates.dim()) {
      throw ShapeError("similarity: pixel features have dimension " +
                       std::to_string(fm.channels()) + ", text embeddings " +
                       std::to_string(templates.dim()));
    }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const auto p = fm.data.row(y * w + x);
        double pn = 0.0;
        for (double v : p) pn += v * v;
        pn = std::sqrt(pn);
        for (std::size_t k = 0; k < k_n; ++k)
          for (std::size_t t = 0; t < t_n; ++t) {
            const auto e = templates.at(k, t);
            const double denom = pn * emb_norm[k * t_n + t];
            double dot = 0.0;
            for (std::size_t d = 0; d < p.size(); ++d) dot += p[d] * e[d];
            s.at(b, y, x, k, t) = denom > 0 ? std::clamp(dot / denom, -1.0, 1.0) : 0.0;
          }
      }
  }
  return s;
}

BatchScores mean_spatial(const SimilarityTensor& s) {
  BatchScores out(s.batch(), s.classes(), s.templates());
  const double n = static_cast<double>(s.height() * s.width());
  for (std::size_t b = 0; b < s.batch(); ++b)
    for (std::size_t k = 0; k < s.classes(); ++k)
      for (std::size_t t = 0; t < s.templates(); ++t) {
        double acc = 0.0;
        for (std::size_t y = 0; y < s.height(); ++y)
          for (std::size_t x = 0; x < s.width(); ++x) acc += s.at(b, y, x, k, t);
        out.at(b, k, t) = acc / n;
      }
  return out;
}

std::vector<std::size_t> top_n_indices(std::span<const double> scores, std::size_t n) {
  if (n < 1 || n > scores.size()) {
    throw ConfigError("top-N selection: N=" + std::to_string(n) + " outside [1, " +
                      std::to_string(scores.size()) + "]");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(n);
  return idx;
}

namespace {

void check_scores(const BatchScores& scores, const TemplateEmbeddings& templates) {
  if (scores.classes() != templates.num_classes() ||
      scores.templates() != templates.num_templates()) {
    throw ShapeError("selection: scores are " + std::to_string(scores.classes()) + "x" +
                     std::to_string(scores.templates()) + ", embeddings " +
                     std::to_string(templates.num_classes()) + "x" +
                     std::to_string(templates.num_templates()));
  }
  if (scores.batch() == 0) throw ShapeError("selection: empty batch");
}

void normalize(std::span<double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  if (ss <= 0.0) return;
  const double inv = 1.0 / std::sqrt(ss);
  for (double& x : v) x *= inv;
}

// Mean of E[k, t] over the given template indices, summed in ascending index order.
std::vector<double> mean_of(const TemplateEmbeddings& te, std::size_t k,
                            std::vector<std::size_t> ts) {
  std::sort(ts.begin(), ts.end());
  std::vector<double> acc(te.dim(), 0.0);
  for (std::size_t t : ts) {
    const auto e = te.at(k, t);
    for (std::size_t d = 0; d < acc.size(); ++d) acc[d] += e[d];
  }
  for (double& v : acc) v /= static_cast<double>(ts.size());
  return acc;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

SelectionResult empty_result(const TemplateEmbeddings& te, std::size_t batch) {
  SelectionResult r;
  r.embeddings.class_names = te.class_names();
  r.embeddings.vectors = Matrix(te.num_classes(), te.dim());
  r.top_indices.assign(batch, std::vector<std::vector<std::size_t>>(te.num_classes()));
  return r;
}

}  // namespace

SelectionResult select_templates_mean_all(const TemplateEmbeddings& templates) {
  SelectionResult r = empty_result(templates, 1);
  for (std::size_t k = 0; k < templates.num_classes(); ++k) {
    auto row = r.embeddings.vectors.row(k);
    const auto mean = mean_of(templates, k, all_indices(templates.num_templates()));
    std::copy(mean.begin(), mean.end(), row.begin());
    normalize(row);
    r.top_indices[0][k] = all_indices(templates.num_templates());
  }
  return r;
}

SelectionResult select_templates_mixed(const BatchScores& scores,
                                       const TemplateEmbeddings& templates,
                                       const SelectionConfig& cfg) {
  check_scores(scores, templates);
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0))
    throw ConfigError("mixed selection: lambda must be in [0,1]");
  const std::size_t n = static_cast<std::size_t>(std::max(cfg.top_n, 0));
  const std::size_t t_n = templates.num_templates();
  if (n < 1 || n > t_n) {
    throw ConfigError("mixed selection: N=" + std::to_string(cfg.top_n) + " outside [1, " +
                      std::to_string(t_n) + "]");
  }
  SelectionResult r = empty_result(templates, scores.batch());
  for (std::size_t k = 0; k < templates.num_classes(); ++k) {
    const auto overall = mean_of(templates, k, all_indices(t_n));
    // Running mean over the batch of the per-item top-N means; exact when items agree.
    std::vector<double> top(templates.dim(), 0.0);
    for (std::size_t b = 0; b < scores.batch(); ++b) {
      auto idx = top_n_indices(scores.row(b, k), n);
      const auto mean_b = mean_of(templates, k, idx);
      for (std::size_t d = 0; d < top.size(); ++d)
        top[d] = b == 0 ? mean_b[d] : top[d] + (mean_b[d] - top[d]) / static_cast<double>(b + 1);
      r.top_indices[b][k] = std::move(idx);
    }
    auto row = r.embeddings.vectors.row(k);
    // lambda * top + (1 - lambda) * overall, written as a step from `overall`.
    for (std::size_t d = 0; d < row.size(); ++d) row[d] = overall[d] + cfg.lambda * (top[d] - overall[d]);
    normalize(row);
  }
  return r;
}

std::vector<double> weighted_template_weights(std::span<const double> scores, std::size_t top_n,
                                              double alpha_enh) {
  if (!(alpha_enh >= 1.0)) throw ConfigError("weighted selection: alpha_enh must be >= 1");
  std::vector<double> w(scores.size(), 1.0);
  for (std::size_t t : top_n_indices(scores, top_n)) w[t] = alpha_enh;
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;
  return w;
}

SelectionResult select_templates_weighted(const BatchScores& scores,
                                          const TemplateEmbeddings& templates,
                                          const SelectionConfig& cfg) {
  check_scores(scores, templates);
  const std::size_t t_n = templates.num_templates();
  if (cfg.top_n < 1 || static_cast<std::size_t>(cfg.top_n) > t_n) {
    throw ConfigError("weighted selection: N=" + std::to_string(cfg.top_n) + " outside [1, " +
                      std::to_string(t_n) + "]");
  }
  const auto n = static_cast<std::size_t>(cfg.top_n);
  SelectionResult r = empty_result(templates, scores.batch());
  const double inv_b = 1.0 / static_cast<double>(scores.batch());
  for (std::size_t k = 0; k < templates.num_classes(); ++k) {
    auto row = r.embeddings.vectors.row(k);
    for (std::size_t b = 0; b < scores.batch(); ++b) {
      const auto w = weighted_template_weights(scores.row(b, k), n, cfg.alpha_enh);
      for (std::size_t t = 0; t < t_n; ++t) {
        const auto e = templates.at(k, t);
        for (std::size_t d = 0; d < row.size(); ++d) row[d] += inv_b * w[t] * e[d];
      }
      r.top_indices[b][k] = top_n_indices(scores.row(b, k), n);
    }
    normalize(row);
  }
  return r;
}

SelectionResult select_templates(const BatchScores& scores, const TemplateEmbeddings& templates,
                                 const SelectionConfig& cfg) {
  switch (cfg.strategy) {
    case Strategy::kMeanAll: return select_templates_mean_all(templates);
    case Strategy::kMixed: return select_templates_mixed(scores, templates, cfg);
    case Strategy::kWeighted: return select_templates_weighted(scores, templates, cfg);
  }
  throw ConfigError("unknown strategy");
}

std::optional<std::int64_t> sample_image_for_class(const data::DatasetIndex& dataset,
                                                   const std::string& class_name,
                                                   std::uint64_t seed) {
  const auto ids = dataset.images_with(class_name);
  if (ids.empty()) return std::nullopt;
  auto rng = stream_rng(seed, "template-sample/" + class_name);
  return ids[uniform_index(rng, ids.size())];
}

SelectionResult select_with_single_image(const data::DatasetIndex& dataset,
                                         const ImageLoader& load_image,
                                         const std::vector<std::string>& class_names,
                                         const std::vector<std::string>& templates,
                                         const EncoderSet& encoders, const SelectionConfig& cfg) {
  const TemplateEmbeddings all = encoders.text->encode(class_names, templates);
  SelectionResult out = empty_result(all, 1);
  const SelectionResult fallback = select_templates_mean_all(all);
  for (std::size_t k = 0; k < class_names.size(); ++k) {
    const auto image_id = sample_image_for_class(dataset, class_names[k], cfg.seed);
    if (!image_id || cfg.strategy == Strategy::kMeanAll) {
      if (!image_id)
        out.warnings.push_back("no images for class '" + class_names[k] +
                               "'; using the mean of all templates");
      for (std::size_t d = 0; d < all.dim(); ++d)
        out.embeddings.vectors(k, d) = fallback.embeddings.vectors(k, d);
      out.top_indices[0][k] = fallback.top_indices[0][k];
      continue;
    }
    const FeatureMap dense = encoders.visual->embed_dense(load_image(*image_id));
    TemplateEmbeddings one({class_names[k]}, all.template_ids(), all.dim());
    for (std::size_t t = 0; t < all.num_templates(); ++t) {
      auto src = all.at(k, t);
      std::copy(src.begin(), src.end(), one.at(0, t).begin());
    }
    const BatchScores scores = mean_spatial(compute_similarity_tensor({&dense, 1}, one));
    const SelectionResult r = select_templates(scores, one, cfg);
    for (std::size_t d = 0; d < all.dim(); ++d) out.embeddings.vectors(k, d) = r.embeddings.vectors(0, d);
    out.top_indices[0][k] = r.top_indices[0][0];
  }
  return out;
}

ag::Var fuse_global(const ag::Var& token, const ag::Var& aggregated, const Linear& projection) {
  return ag::add_row(aggregated, projection(token));
}

FeatureMap fuse_global(const GlobalDepthToken& token, const FeatureMap& aggregated,
                       const Linear& projection) {
  ag::Var t = ag::constant(Matrix(1, token.vector.size(), token.vector));
  return {aggregated.height, aggregated.width,
          fuse_global(t, ag::constant(aggregated.data), projection).value()};
}

ag::Var predict_masks(const ag::Var& queries, const ag::Var& features, const Mlp& embed) {
  return ag::matmul(embed(queries), ag::transpose(features));
}

Matrix predict_masks(const Matrix& queries, const Matrix& features, const Mlp& embed) {
  return predict_masks(ag::constant(queries), ag::constant(features), embed).value();
}

ag::Var pool_features(const ag::Var& features, const ag::Var& mask_logits, PoolMode mode) {
  if (mode == PoolMode::kGlobalMean) {
    const double inv = 1.0 / static_cast<double>(features.rows());
    return ag::matmul(ag::constant(Matrix(mask_logits.rows(), features.rows(), inv)), features);
  }
  ag::Var w = ag::sigmoid(mask_logits);
  // eps keeps the average defined when every weight underflows to 0.
  return ag::div_rows(ag::matmul(w, features),
                      ag::add_scalar(ag::sum_rows(w), ag::constant(Matrix(1, 1, 1e-6))));
}

ag::Var cosine_logits(const ag::Var& query_features, const Matrix& class_vectors,
                      const ag::Var& scale, const ag::Var& bias) {
  if (query_features.cols() != class_vectors.cols()) {
    throw ShapeError("classification: query features have width " +
                     std::to_string(query_features.cols()) + ", class embeddings " +
                     std::to_string(class_vectors.cols()));
  }
  ag::Var cos = ag::matmul(ag::normalize_rows(query_features),
                           ag::constant(maris::transpose(class_vectors)));
  return ag::add_scalar(ag::mul_scalar(cos, scale), bias);
}

Matrix classify_queries(const Matrix& features, const Matrix& queries, const Matrix& mask_logits,
                        const ClassEmbeddings& classes, double temperature, PoolMode mode) {
  if (!(temperature > 0.0)) throw ConfigError("classify_queries: temperature must be > 0");
  if (queries.cols() != features.cols())
    throw ShapeError("classify_queries: query width differs from feature width");
  ag::Var pooled = pool_features(ag::constant(features), ag::constant(mask_logits), mode);
  ag::Var fq = ag::add(pooled, ag::constant(queries));
  return cosine_logits(fq, classes.vectors, ag::constant(Matrix(1, 1, 1.0 / temperature)),
                       ag::constant(Matrix(1, 1, 0.0)))
      .value();
}

}  // namespace maris::saim
