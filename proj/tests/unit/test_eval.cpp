#include <cmath>

#include <gtest/gtest.h>

#include "maris/eval.hpp"
#include "maris/random.hpp"
#include "oracles.hpp"

using namespace maris;
using namespace maris::eval;

namespace {

// 10x10 GT square and a prediction overlapping it with the requested IoU.
struct Single {
  data::DatasetIndex index;
  std::vector<InstancePrediction> preds;
};

Single single_case(std::size_t pred_cols) {
  // GT covers columns 0..9 of rows 0..9 (100 px); prediction covers columns 0..pred_cols-1.
  const auto gt = oracle::box_mask(20, 20, 0, 0, 10, 10);
  Single s;
  s.index = oracle::make_index({"eel"}, {1}, 20, 20, {{1, "eel", gt}});
  s.preds.push_back({1, "eel", oracle::box_mask(20, 20, 0, 0, pred_cols, 10), 0.9});
  return s;
}

std::map<std::string, ClassResult> constant_classes(const std::vector<std::string>& names,
                                                    double value) {
  std::map<std::string, ClassResult> out;
  for (const auto& n : names) out[n] = {1, 1, ApSummary{value, value, value}};
  return out;
}

}  // namespace

TEST(Thresholds, Grid) {
  const auto t = iou_thresholds();
  EXPECT_DOUBLE_EQ(t[0], 0.5);
  EXPECT_DOUBLE_EQ(t[5], 0.75);
  EXPECT_DOUBLE_EQ(t[9], 0.95);
}

TEST(ComputeAp, SinglePredictionThresholdCrossing) {
  const auto s8 = single_case(8);  // IoU 0.8
  EXPECT_DOUBLE_EQ(mask_iou(s8.preds[0].mask, s8.index.decode_mask(1)), 0.8);
  EXPECT_DOUBLE_EQ(*compute_ap(s8.preds, s8.index, "eel", 0.5), 100.0);
  EXPECT_DOUBLE_EQ(*compute_ap(s8.preds, s8.index, "eel", 0.75), 100.0);
  const auto s6 = single_case(6);  // IoU 0.6
  EXPECT_DOUBLE_EQ(*compute_ap(s6.preds, s6.index, "eel", 0.5), 100.0);
  EXPECT_DOUBLE_EQ(*compute_ap(s6.preds, s6.index, "eel", 0.75), 0.0);
  const auto grid = compute_ap_grid(s6.preds, s6.index, "eel");
  const auto sum = summarize(*grid);
  EXPECT_DOUBLE_EQ(sum.ap50, 100.0);
  EXPECT_DOUBLE_EQ(sum.ap75, 0.0);
  EXPECT_DOUBLE_EQ(sum.map, 30.0);  // thresholds 0.50, 0.55, 0.60 pass
}

TEST(ComputeAp, NoPredictionsIsZeroAndNoGtIsAbsent) {
  const auto s = single_case(8);
  EXPECT_DOUBLE_EQ(*compute_ap({}, s.index, "eel", 0.5), 0.0);
  const auto idx = oracle::make_index({"eel", "ray"}, {1}, 20, 20,
                                      {{1, "eel", oracle::box_mask(20, 20, 0, 0, 3, 3)}});
  EXPECT_FALSE(compute_ap(s.preds, idx, "ray", 0.5).has_value());
  EXPECT_FALSE(compute_ap_grid(s.preds, idx, "ray").has_value());
  EXPECT_THROW(compute_ap(s.preds, s.index, "eel", 0.52), ConfigError);
}

TEST(ComputeAp, MatchesBruteForceOnMicroFixtures) {
  auto rng = stream_rng(1, "ap");
  for (int trial = 0; trial < 50; ++trial) {
    const auto fx = oracle::random_micro_fixture(rng);
    for (const auto& cls : fx.classes) {
      const auto grid = compute_ap_grid(fx.predictions, fx.index, cls);
      for (std::size_t i = 0; i < kNumThresholds; ++i) {
        const double t = iou_thresholds()[i];
        const auto want = oracle::brute_force_ap(fx.predictions, fx.index, cls, t);
        ASSERT_EQ(grid.has_value(), want.has_value());
        if (want) EXPECT_NEAR((*grid)[i], *want, 1e-9) << "trial " << trial << " t " << t;
      }
    }
  }
}

TEST(ComputeAp, NonIncreasingInThreshold) {
  auto rng = stream_rng(2, "ap");
  for (int trial = 0; trial < 50; ++trial) {
    const auto fx = oracle::random_micro_fixture(rng);
    for (const auto& cls : fx.classes) {
      const auto grid = compute_ap_grid(fx.predictions, fx.index, cls);
      if (!grid) continue;
      for (std::size_t i = 1; i < kNumThresholds; ++i) EXPECT_LE((*grid)[i], (*grid)[i - 1] + 1e-12);
      for (double v : *grid) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 100.0);
      }
    }
  }
}

TEST(ComputeAp, DuplicateDetectionIsFalsePositive) {
  const auto gt = oracle::box_mask(8, 8, 0, 0, 4, 4);
  const auto idx = oracle::make_index({"eel"}, {1}, 8, 8, {{1, "eel", gt}});
  std::vector<InstancePrediction> p{{1, "eel", gt, 0.9}, {1, "eel", gt, 0.8}};
  EXPECT_DOUBLE_EQ(*compute_ap(p, idx, "eel", 0.5), 100.0);
  p[0].score = 0.7;  // now the duplicate ranks first; still one TP at rank 1
  EXPECT_DOUBLE_EQ(*compute_ap(p, idx, "eel", 0.5), 100.0);
  p.insert(p.begin(), {1, "eel", oracle::box_mask(8, 8, 5, 5, 8, 8), 0.95});
  // FP then TP: precision 0.5 at full recall.
  EXPECT_NEAR(*compute_ap(p, idx, "eel", 0.5), 50.0, 1e-9);
}

TEST(ComputeAp, CapsDetectionsPerImage) {
  const auto gt = oracle::box_mask(8, 8, 0, 0, 4, 4);
  const auto idx = oracle::make_index({"eel"}, {1}, 8, 8, {{1, "eel", gt}});
  std::vector<InstancePrediction> p;
  for (int i = 0; i < 100; ++i) p.push_back({1, "eel", oracle::box_mask(8, 8, 6, 6, 8, 8), 0.9});
  p.push_back({1, "eel", gt, 0.1});  // rank 101, dropped
  EXPECT_DOUBLE_EQ(*compute_ap(p, idx, "eel", 0.5), 0.0);
}

TEST(GroupMetrics, ConstantClassesGiveConstantGroups) {
  const auto names = oracle::split_fixture_names();
  const auto split = data::build_class_split(names.train, names.val);
  const auto rep = group_metrics(constant_classes(split.val_classes(), 50.0), split);
  for (const auto& g : rep.groups) {
    ASSERT_TRUE(g.metrics.has_value()) << g.name;
    EXPECT_DOUBLE_EQ(g.metrics->map, 50.0);
    EXPECT_DOUBLE_EQ(g.metrics->ap50, 50.0);
    EXPECT_DOUBLE_EQ(g.metrics->ap75, 50.0);
  }
}

TEST(GroupMetrics, WeightedOverallMean) {
  const auto names = oracle::split_fixture_names();
  const auto split = data::build_class_split(names.train, names.val);
  auto per = constant_classes(split.intersection, 80.0);
  for (auto& [n, r] : constant_classes(split.ov_exclusive, 20.0)) per[n] = r;
  const auto rep = group_metrics(per, split);
  ASSERT_EQ(rep.groups.size(), 3u);
  EXPECT_EQ(rep.groups[0].name, kIntersection);
  EXPECT_EQ(rep.groups[1].name, kOpenVocabulary);
  EXPECT_EQ(rep.groups[2].name, kOverall);
  EXPECT_NEAR(rep.group(kOverall).metrics->map, (41.0 * 80.0 + 74.0 * 20.0) / 115.0, 1e-9);
  EXPECT_NEAR(rep.group(kOverall).metrics->map, 41.39, 5e-3);
  EXPECT_EQ(rep.group(kOverall).classes.size(), 115u);
}

TEST(GroupMetrics, EmptyOpenVocabularyGroup) {
  const std::vector<std::string> names{"a", "b", "c"};
  const auto split = data::build_class_split(names, names);
  std::map<std::string, ClassResult> per;
  per["a"] = {1, 1, ApSummary{10, 20, 5}};
  per["b"] = {2, 1, ApSummary{30, 40, 15}};
  per["c"] = {0, 3, std::nullopt};
  const auto rep = group_metrics(per, split);
  EXPECT_FALSE(rep.group(kOpenVocabulary).metrics.has_value());
  EXPECT_EQ(*rep.group(kOverall).metrics, *rep.group(kIntersection).metrics);
  EXPECT_DOUBLE_EQ(rep.group(kOverall).metrics->map, 20.0);
  EXPECT_EQ(rep.excluded, std::vector<std::string>{"c"});
}

TEST(EvaluateClasses, CountsAndExclusion) {
  const auto gt = oracle::box_mask(8, 8, 0, 0, 4, 4);
  const auto idx = oracle::make_index({"eel", "ray"}, {1, 2}, 8, 8, {{1, "eel", gt}, {2, "eel", gt}});
  const std::vector<InstancePrediction> p{{1, "eel", gt, 0.9}, {2, "ray", gt, 0.5}};
  const auto per = evaluate_classes(p, idx, {"eel", "ray"});
  EXPECT_EQ(per.at("eel").gt_count, 2u);
  EXPECT_EQ(per.at("eel").prediction_count, 1u);
  EXPECT_NEAR(per.at("eel").ap->ap50, 100.0 * 51.0 / 101.0, 1e-9);  // recall 0.5 at precision 1
  EXPECT_FALSE(per.at("ray").ap.has_value());
  EXPECT_EQ(per.at("ray").prediction_count, 1u);
}

TEST(Report, JsonRoundTripAndTable) {
  const std::vector<std::string> train{"a", "b"}, val{"b", "c"};
  const auto split = data::build_class_split(train, val);
  std::map<std::string, ClassResult> per;
  per["b"] = {1, 1, ApSummary{60, 70, 50}};
  per["c"] = {1, 1, ApSummary{20, 30, 10}};
  const auto rep = group_metrics(per, split);
  const auto back = report_from_json(report_to_json(rep));
  EXPECT_EQ(report_to_json(back), report_to_json(rep));
  const auto table = format_report_table(rep);
  for (const char* g : {kIntersection, kOpenVocabulary, kOverall})
    EXPECT_NE(table.find(g), std::string::npos);
  for (const char* m : {"mAP", "AP50", "AP75"}) EXPECT_NE(table.find(m), std::string::npos);
  EXPECT_THROW(rep.group("Nope"), DataError);
}

TEST(Report, PredictionsJsonRoundTrip) {
  auto rng = stream_rng(3, "pred");
  const auto fx = oracle::random_micro_fixture(rng);
  const auto back = predictions_from_json(predictions_to_json(fx.predictions));
  ASSERT_EQ(back.size(), fx.predictions.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].image_id, fx.predictions[i].image_id);
    EXPECT_EQ(back[i].category, fx.predictions[i].category);
    EXPECT_EQ(back[i].mask, fx.predictions[i].mask);
    EXPECT_DOUBLE_EQ(back[i].score, fx.predictions[i].score);
  }
}

TEST(Ranking, BestAndWorst) {
  EvalReport rep;
  rep.per_class["c1"] = {1, 1, ApSummary{10, 0, 0}};
  rep.per_class["c2"] = {1, 1, ApSummary{50, 0, 0}};
  rep.per_class["c3"] = {1, 1, ApSummary{90, 0, 0}};
  const auto r = per_class_report(rep, 1);
  ASSERT_EQ(r.best.size(), 1u);
  EXPECT_EQ(r.best[0].name, "c3");
  EXPECT_DOUBLE_EQ(r.best[0].ap, 90.0);
  EXPECT_EQ(r.worst[0].name, "c1");
  EXPECT_FALSE(r.notice.has_value());
}

TEST(Ranking, TiesByNameAndTruncationNotice) {
  EvalReport rep;
  for (const char* n : {"delta", "alpha", "charlie", "bravo"}) rep.per_class[n] = {1, 1, ApSummary{40, 0, 0}};
  rep.per_class["none"] = {0, 0, std::nullopt};
  const auto r = per_class_report(rep, 10);
  ASSERT_EQ(r.best.size(), 4u);
  EXPECT_EQ(r.best[0].name, "alpha");
  EXPECT_EQ(r.worst[0].name, "alpha");
  EXPECT_TRUE(r.notice.has_value());
  EXPECT_EQ(ranking_to_json(r), ranking_to_json(per_class_report(rep, 10)));
}

TEST(Ranking, TopTenOfMany) {
  EvalReport rep, other;
  for (int i = 0; i < 115; ++i) {
    const std::string n = "class" + std::to_string(i);
    rep.per_class[n] = {1, 1, ApSummary{static_cast<double>(i % 37), 0, 0}};
    other.per_class[n] = {1, 1, ApSummary{1.0, 0, 0}};
  }
  const auto r = per_class_report(rep, 10, &other);
  EXPECT_EQ(r.best.size(), 10u);
  EXPECT_EQ(r.worst.size(), 10u);
  EXPECT_DOUBLE_EQ(*r.best[0].paired_ap, 1.0);
  const auto svg = bar_chart_svg("Best", r.best, "a", "b");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}
