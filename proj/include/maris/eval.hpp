#pragma once

// Mask AP over the COCO IoU grid, grouped Intersection / Open-Vocabulary / Overall.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maris/data.hpp"
#include "maris/mask.hpp"

namespace maris::eval {

struct InstancePrediction {
  std::int64_t image_id = 0;
  std::string category;
  BinaryMask mask;
  double score = 0.0;
};

inline constexpr std::size_t kNumThresholds = 10;
inline constexpr std::size_t kMaxDetections = 100;
/// 0.50, 0.55, ..., 0.95.
std::array<double, kNumThresholds> iou_thresholds();

/// AP at every grid threshold (x100) or nullopt when the class has no GT.
using ApGrid = std::optional<std::array<double, kNumThresholds>>;

/// Greedy per-image matching (highest score first, best IoU, ties to the
/// lower annotation id), at most 100 detections per image, 101-point
/// interpolated precision. Predictions of other classes are ignored.
ApGrid compute_ap_grid(const std::vector<InstancePrediction>& predictions,
                       const data::DatasetIndex& gts, const std::string& class_name);
/// Single-threshold form; nullopt when the class has no GT.
std::optional<double> compute_ap(const std::vector<InstancePrediction>& predictions,
                                 const data::DatasetIndex& gts, const std::string& class_name,
                                 double iou_threshold);

struct ApSummary {
  double map = 0.0;  // mean over the grid
  double ap50 = 0.0;
  double ap75 = 0.0;
  friend bool operator==(const ApSummary&, const ApSummary&) = default;
};

ApSummary summarize(const std::array<double, kNumThresholds>& grid);

struct ClassResult {
  std::size_t gt_count = 0;
  std::size_t prediction_count = 0;
  std::optional<ApSummary> ap;  // absent when gt_count == 0
};

struct GroupResult {
  std::string name;
  std::vector<std::string> classes;  // classes contributing to the mean
  std::optional<ApSummary> metrics;  // absent for an empty group
};

struct EvalReport {
  std::map<std::string, ClassResult> per_class;
  std::vector<GroupResult> groups;  // Intersection, Open-Vocabulary, Overall
  std::vector<std::string> excluded;  // vocabulary classes without GT
  const GroupResult& group(const std::string& name) const;
};

inline constexpr const char* kIntersection = "Intersection";
inline constexpr const char* kOpenVocabulary = "Open-Vocabulary";
inline constexpr const char* kOverall = "Overall";

/// Per-class AP for every vocabulary name.
std::map<std::string, ClassResult> evaluate_classes(
    const std::vector<InstancePrediction>& predictions, const data::DatasetIndex& gts,
    const std::vector<std::string>& vocabulary);

/// Class-weighted group means; classes without AP are excluded and listed.
EvalReport group_metrics(const std::map<std::string, ClassResult>& per_class,
                         const data::ClassSplit& split);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
/// Three groups x three metrics, fixed-width text.
std::string format_report_table(const EvalReport& report);

nlohmann::json predictions_to_json(const std::vector<InstancePrediction>& predictions);
std::vector<InstancePrediction> predictions_from_json(const nlohmann::json& j);

struct RankedClass {
  std::string name;
  double ap = 0.0;
  std::optional<double> paired_ap;  // same class in the second report
};

struct ClassRanking {
  std::vector<RankedClass> best;   // descending AP
  std::vector<RankedClass> worst;  // ascending AP
  std::optional<std::string> notice;
};

/// Best / worst classes by mAP, ties by name. With `paired`, each entry
/// also carries the class's mAP in the second report.
ClassRanking per_class_report(const EvalReport& report, std::size_t top_k,
                              const EvalReport* paired = nullptr);

nlohmann::json ranking_to_json(const ClassRanking& ranking);
/// Horizontal bar chart; a second series is drawn when any entry is paired.
std::string bar_chart_svg(const std::string& title, const std::vector<RankedClass>& entries,
                          const std::string& first_label = "AP",
                          const std::string& second_label = "paired AP");

}  // namespace maris::eval
