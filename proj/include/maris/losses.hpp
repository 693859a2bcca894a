#pragma once

// Bipartite matching and the classification / mask losses.

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "maris/autograd.hpp"
#include "maris/tensor.hpp"

namespace maris::losses {

/// Ground truth of one image: G class indices and G binary masks (G x H0*W0).
struct TargetSet {
  std::vector<std::size_t> class_ids;
  Matrix masks;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return class_ids.size(); }
  /// Throws DataError on non-binary masks, class ids >= num_classes or bad shapes.
  void validate(std::size_t num_classes) const;
};

struct MatchWeights {
  double cls = 2.0;
  double dice = 5.0;
  double bce = 5.0;
};

struct LossConfig {
  MatchWeights match;
  double w_cls = 1.0;
  double w_mask = 1.0;
  bool softmax_cls = false;  // softmax cross-entropy on matched queries instead of BCE
  double dice_eps = 1.0;
  // Mask matching costs use sampled points when H0*W0 exceeds the threshold.
  std::size_t point_threshold = 4096;
  std::size_t num_points = 112;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

/// Matched (query, target) pairs ordered by target index.
struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<long> target_of_query;  // -1 marks a no-object query
  double cost = 0.0;

  bool is_no_object(std::size_t q) const { return target_of_query[q] < 0; }
};

/// Exact minimum-cost assignment of every row to a distinct column
/// (rows <= cols). Returns the column of each row.
std::vector<std::size_t> solve_assignment(const Matrix& cost);

/// Cost matrix G x N_Q of w_cls*(-p_class) + w_dice*dice + w_bce*bce.
Matrix matching_cost(const Matrix& class_logits, const Matrix& mask_logits,
                     const TargetSet& targets, const LossConfig& cfg);

/// Throws ConfigError when G > N_Q (capacity) or G == 0.
Assignment hungarian_match(const Matrix& class_logits, const Matrix& mask_logits,
                           const TargetSet& targets, const LossConfig& cfg = {});

ag::Var classification_loss(const ag::Var& class_logits, const TargetSet& targets,
                            const Assignment& assignment, bool softmax = false);
ag::Var mask_loss(const ag::Var& mask_logits, const TargetSet& targets,
                  const Assignment& assignment, double eps = 1.0);

struct LossTerms {
  ag::Var total;
  ag::Var cls;
  ag::Var mask;
  Assignment assignment;
};

/// Matches on current values, then w_cls * L_cls + w_mask * L_mask.
LossTerms total_loss(const ag::Var& class_logits, const ag::Var& mask_logits,
                     const TargetSet& targets, const LossConfig& cfg = {});

// Value-only conveniences.
double classification_loss(const Matrix& class_logits, const TargetSet& targets,
                           const Assignment& assignment, bool softmax = false);
double mask_loss(const Matrix& mask_logits, const TargetSet& targets,
                 const Assignment& assignment, double eps = 1.0);

}  // namespace maris::losses
