#pragma once

// Semantic alignment: similarity-driven template selection producing one
// embedding per class, global depth-token fusion, and the classification and
// mask heads.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maris/autograd.hpp"
#include "maris/data.hpp"
#include "maris/encoders.hpp"
#include "maris/params.hpp"
#include "maris/prompt_bank.hpp"

namespace maris::saim {

/// S[b,h,w,k,t]: cosine similarity of pixel (b,h,w) with template embedding (k,t).
class SimilarityTensor {
 public:
  SimilarityTensor(std::size_t batch, std::size_t height, std::size_t width, std::size_t classes,
                   std::size_t templates);

  std::size_t batch() const { return dims_[0]; }
  std::size_t height() const { return dims_[1]; }
  std::size_t width() const { return dims_[2]; }
  std::size_t classes() const { return dims_[3]; }
  std::size_t templates() const { return dims_[4]; }

  double& at(std::size_t b, std::size_t h, std::size_t w, std::size_t k, std::size_t t) {
    return values_[index(b, h, w, k, t)];
  }
  double at(std::size_t b, std::size_t h, std::size_t w, std::size_t k, std::size_t t) const {
    return values_[index(b, h, w, k, t)];
  }
  const std::vector<double>& values() const { return values_; }

 private:
  std::size_t index(std::size_t b, std::size_t h, std::size_t w, std::size_t k,
                    std::size_t t) const {
    return (((b * dims_[1] + h) * dims_[2] + w) * dims_[3] + k) * dims_[4] + t;
  }
  std::size_t dims_[5];
  std::vector<double> values_;
};

/// S̄[b,k,t]: spatial mean of the similarity tensor.
class BatchScores {
 public:
  BatchScores(std::size_t batch, std::size_t classes, std::size_t templates);

  std::size_t batch() const { return batch_; }
  std::size_t classes() const { return classes_; }
  std::size_t templates() const { return templates_; }
  double& at(std::size_t b, std::size_t k, std::size_t t) {
    return values_[(b * classes_ + k) * templates_ + t];
  }
  double at(std::size_t b, std::size_t k, std::size_t t) const {
    return values_[(b * classes_ + k) * templates_ + t];
  }
  std::span<const double> row(std::size_t b, std::size_t k) const {
    return {values_.data() + (b * classes_ + k) * templates_, templates_};
  }

 private:
  std::size_t batch_, classes_, templates_;
  std::vector<double> values_;
};

/// One unit-length embedding per class (K x D).
struct ClassEmbeddings {
  std::vector<std::string> class_names;
  Matrix vectors;
};

enum class Strategy { kMeanAll, kMixed, kWeighted };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& text);

struct SelectionConfig {
  Strategy strategy = Strategy::kMixed;
  int top_n = 20;
  double lambda = 0.5;     // weight of the top-N average in the mixed strategy
  double alpha_enh = 2.0;  // enhancement factor of the weighted strategy
  std::uint64_t seed = 0;  // single-image sampling

  /// Configuration-file validation: N >= 1, lambda in [0,1], alpha_enh > 1.
  void validate() const;
};

void to_json(nlohmann::json& j, const SelectionConfig& c);
void from_json(const nlohmann::json& j, SelectionConfig& c);

/// Selection output plus the ranked template indices chosen per (batch, class).
struct SelectionResult {
  ClassEmbeddings embeddings;
  std::vector<std::vector<std::vector<std::size_t>>> top_indices;  // [b][k] -> indices
  std::vector<std::string> warnings;
};

/// Pixel maps must share H and W; each feature row is compared by cosine.
SimilarityTensor compute_similarity_tensor(std::span<const FeatureMap> pixel_features,
                                           const TemplateEmbeddings& templates);
BatchScores mean_spatial(const SimilarityTensor& s);

/// Indices of the n largest scores, ties broken toward the lower index.
std::vector<std::size_t> top_n_indices(std::span<const double> scores, std::size_t n);

SelectionResult select_templates_mean_all(const TemplateEmbeddings& templates);
SelectionResult select_templates_mixed(const BatchScores& scores,
                                       const TemplateEmbeddings& templates,
                                       const SelectionConfig& cfg);
SelectionResult select_templates_weighted(const BatchScores& scores,
                                          const TemplateEmbeddings& templates,
                                          const SelectionConfig& cfg);
/// Normalized weights W̃[b,k,:] of the weighted strategy.
std::vector<double> weighted_template_weights(std::span<const double> scores, std::size_t top_n,
                                              double alpha_enh);
SelectionResult select_templates(const BatchScores& scores, const TemplateEmbeddings& templates,
                                 const SelectionConfig& cfg);

/// Image drawn for a class by the single-image rule, or nullopt when the
/// dataset has no instance of it.
std::optional<std::int64_t> sample_image_for_class(const data::DatasetIndex& dataset,
                                                   const std::string& class_name,
                                                   std::uint64_t seed);

using ImageLoader = std::function<ImageSample(std::int64_t image_id)>;

/// For each class: draw one image containing it, compute similarities on that
/// image only, and apply the configured strategy. Classes absent from the
/// dataset fall back to the mean of all templates (recorded in warnings).
SelectionResult select_with_single_image(const data::DatasetIndex& dataset,
                                         const ImageLoader& load_image,
                                         const std::vector<std::string>& class_names,
                                         const std::vector<std::string>& templates,
                                         const EncoderSet& encoders, const SelectionConfig& cfg);

// ---------------------------------------------------------------------------
// Heads

enum class PoolMode { kMaskWeighted, kGlobalMean };

/// F_f = F_m + broadcast(token W + b).
ag::Var fuse_global(const ag::Var& token, const ag::Var& aggregated, const Linear& projection);
FeatureMap fuse_global(const GlobalDepthToken& token, const FeatureMap& aggregated,
                       const Linear& projection);

/// M[q, p] = <embed(query_q), F_f[p]>, returned as N_Q x (H*W).
ag::Var predict_masks(const ag::Var& queries, const ag::Var& features, const Mlp& embed);
Matrix predict_masks(const Matrix& queries, const Matrix& features, const Mlp& embed);

/// Per-query pooled features: sigmoid(mask)-weighted average, or global mean.
ag::Var pool_features(const ag::Var& features, const ag::Var& mask_logits, PoolMode mode);

/// logits[q,k] = scale * <normalize(f_q), E_k> + bias.
ag::Var cosine_logits(const ag::Var& query_features, const Matrix& class_vectors,
                      const ag::Var& scale, const ag::Var& bias);

/// Y[q,k] = (1/temperature) <normalize(pool(F_f)_q + query_q), E_k>. Requires
/// feature width == embedding width; throws ConfigError for temperature <= 0.
Matrix classify_queries(const Matrix& features, const Matrix& queries, const Matrix& mask_logits,
                        const ClassEmbeddings& classes, double temperature,
                        PoolMode mode = PoolMode::kMaskWeighted);

}  // namespace maris::saim
