#pragma once

// Training loop, checkpoints and inference.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maris/data.hpp"
#include "maris/eval.hpp"
#include "maris/losses.hpp"
#include "maris/model.hpp"
#include "maris/saim.hpp"

namespace maris::trainer {

struct OptimizerConfig {
  std::string kind = "adam";  // adam | sgd
  double step_size = 1e-3;
  int steps = 200;
  int batch_size = 4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);

struct RunConfig {
  EncoderConfig encoder;
  gpem::GpemConfig gpem;
  model::HeadConfig heads;
  saim::SelectionConfig selection;
  losses::LossConfig loss;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  data::TaskMode mode = data::TaskMode::kInDomain;
  /// Classes supervised during training; empty means every dataset category.
  std::vector<std::string> train_classes;
  double score_floor = 0.05;

  void validate() const;
};

nlohmann::json run_config_to_json(const RunConfig& c);
/// Requires a "seed" entry; other fields fall back to defaults.
RunConfig run_config_from_json(const nlohmann::json& j);

struct Checkpoint {
  static constexpr int kFormatVersion = 1;
  RunConfig config;
  std::vector<std::pair<std::string, Matrix>> params;  // registration order
  int step = 0;
  std::vector<double> loss_history;
  std::vector<std::string> train_vocabulary;
  std::uint64_t encoder_checksum = 0;
};

/// Directory with manifest.json and params.bin (float64 little-endian,
/// concatenated in manifest order).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Rebuilds the model of a checkpoint; throws DataError on a parameter
/// name or shape mismatch.
model::Model restore_model(const Checkpoint& ckpt);
Checkpoint snapshot(const model::Model& m, const RunConfig& config);

/// Class embeddings for a vocabulary by the configured selection rule.
saim::SelectionResult build_class_embeddings(const data::DatasetIndex& dataset,
                                             const std::vector<std::string>& vocabulary,
                                             const EncoderSet& encoders,
                                             const saim::SelectionConfig& cfg);

/// Per-image targets restricted to `vocabulary` at level-0 resolution
/// (block mean >= 0.5).
losses::TargetSet make_targets(const data::DatasetIndex& dataset, std::int64_t image_id,
                               const std::vector<std::string>& vocabulary,
                               std::size_t mask_height, std::size_t mask_width);

struct TrainOptions {
  /// Called after every step with (step, loss).
  std::function<void(int, double)> on_step;
};

/// Throws NumericError carrying the step index on a non-finite loss and
/// Error if the frozen encoders change during training.
Checkpoint train(const RunConfig& config, const data::DatasetIndex& dataset,
                 const TrainOptions& options = {});

struct InferenceOptions {
  double score_floor = 0.05;
};

/// Predictions for one encoded image; `classes` must cover `vocabulary`
/// row for row.
std::vector<eval::InstancePrediction> infer(const model::Model& m,
                                            const model::EncodedImage& image,
                                            std::int64_t image_id,
                                            const std::vector<std::string>& vocabulary,
                                            const saim::ClassEmbeddings& classes,
                                            const InferenceOptions& options = {});

/// Inference over every image of a dataset, in ascending image id order.
std::vector<eval::InstancePrediction> infer_encoded(const model::Model& m,
                                                    const std::map<std::int64_t, model::EncodedImage>& encoded,
                                                    const std::vector<std::string>& vocabulary,
                                                    const saim::ClassEmbeddings& classes,
                                                    const InferenceOptions& options = {});
std::vector<eval::InstancePrediction> infer_dataset(const model::Model& m,
                                                    const EncoderSet& encoders,
                                                    const data::DatasetIndex& dataset,
                                                    const std::vector<std::string>& vocabulary,
                                                    const saim::ClassEmbeddings& classes,
                                                    const InferenceOptions& options = {});

// ---------------------------------------------------------------------------
// Evaluation pipeline

using EncodedDataset = std::map<std::int64_t, model::EncodedImage>;
EncodedDataset encode_dataset(const EncoderSet& encoders, const data::DatasetIndex& dataset);

struct EvalOutputs {
  std::vector<eval::InstancePrediction> predictions;
  eval::EvalReport report;
  saim::SelectionResult selection;
};

/// Selection -> inference -> per-class AP -> grouped report.
EvalOutputs evaluate_model(const model::Model& m, const EncoderSet& encoders,
                           const data::DatasetIndex& dataset, const EncodedDataset& encoded,
                           const std::vector<std::string>& vocabulary,
                           const data::ClassSplit& split, const saim::SelectionConfig& selection,
                           const InferenceOptions& options = {});

/// TopN grid of the ablation table.
inline const std::vector<int> kTopNGrid{1, 2, 5, 10, 20, 50, 80};

struct SweepRow {
  int requested = 0;
  int used = 0;  // min(requested, T)
  bool clamped = false;
  std::optional<eval::ApSummary> intersection;
  std::optional<eval::ApSummary> open_vocabulary;
  std::optional<eval::ApSummary> overall;
};

/// Re-runs selection (mixed strategy) and evaluation for each N; values
/// above the template count are clamped and flagged.
std::vector<SweepRow> topn_sweep(const model::Model& m, const EncoderSet& encoders,
                                 const data::DatasetIndex& dataset, const EncodedDataset& encoded,
                                 const std::vector<std::string>& vocabulary,
                                 const data::ClassSplit& split, saim::SelectionConfig selection,
                                 const std::vector<int>& grid,
                                 const InferenceOptions& options = {});

nlohmann::json sweep_to_json(const std::vector<SweepRow>& rows);
std::string format_sweep_table(const std::vector<SweepRow>& rows);

}  // namespace maris::trainer
