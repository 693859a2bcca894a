#include "maris/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "maris/error.hpp"

namespace maris::eval {

using nlohmann::json;

std::array<double, kNumThresholds> iou_thresholds() {
  std::array<double, kNumThresholds> t{};
  for (std::size_t i = 0; i < kNumThresholds; ++i) t[i] = static_cast<double>(50 + 5 * i) / 100.0;
  return t;
}

namespace {

struct ClassData {
  std::size_t npos = 0;
  std::vector<std::size_t> order;           // kept predictions, global score order
  std::map<std::int64_t, std::vector<std::size_t>> per_image;  // kept, per-image score order
  std::map<std::int64_t, std::vector<BinaryMask>> gt_masks;    // ascending annotation id
};

bool by_score(const std::vector<InstancePrediction>& preds, std::size_t a, std::size_t b) {
  if (preds[a].score != preds[b].score) return preds[a].score > preds[b].score;
  return a < b;
}

ClassData gather(const std::vector<InstancePrediction>& preds, const data::DatasetIndex& gts,
                 const std::string& class_name) {
  ClassData d;
  if (const auto cid = gts.category_id(class_name)) {
    for (const auto& [id, a] : gts.annotations())
      if (a.category_id == *cid) {
        d.gt_masks[a.image_id].push_back(gts.decode_mask(id));
        ++d.npos;
      }
  }
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].category != class_name) continue;
    if (!std::isfinite(preds[i].score))
      throw DataError("prediction " + std::to_string(i) + ": non-finite score");
    d.per_image[preds[i].image_id].push_back(i);
  }
  for (auto& [img, idx] : d.per_image) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return by_score(preds, a, b); });
    if (idx.size() > kMaxDetections) idx.resize(kMaxDetections);
    d.order.insert(d.order.end(), idx.begin(), idx.end());
  }
  std::sort(d.order.begin(), d.order.end(),
            [&](std::size_t a, std::size_t b) { return by_score(preds, a, b); });
  return d;
}

// 101-point interpolated AP from true-positive flags in global score order.
double interpolated_ap(const std::vector<std::size_t>& order, const std::vector<char>& tp,
                       std::size_t npos) {
  const std::size_t n = order.size();
  std::vector<double> precision(n), recall(n);
  double ctp = 0.0, cfp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tp[order[i]]) ctp += 1.0; else cfp += 1.0;
    precision[i] = ctp / (ctp + cfp);
    recall[i] = ctp / static_cast<double>(npos);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), level);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0 * 100.0;
}

}  // namespace

ApGrid compute_ap_grid(const std::vector<InstancePrediction>& predictions,
                       const data::DatasetIndex& gts, const std::string& class_name) {
  const ClassData d = gather(predictions, gts, class_name);
  if (d.npos == 0) return std::nullopt;

  // IoU of each kept prediction against the GT of its image.
  std::map<std::size_t, std::vector<double>> ious;
  for (const auto& [img, idx] : d.per_image) {
    const auto g = d.gt_masks.find(img);
    for (std::size_t p : idx) {
      auto& row = ious[p];
      if (g == d.gt_masks.end()) continue;
      for (const auto& m : g->second) row.push_back(mask_iou(predictions[p].mask, m));
    }
  }

  std::array<double, kNumThresholds> out{};
  const auto thresholds = iou_thresholds();
  for (std::size_t ti = 0; ti < kNumThresholds; ++ti) {
    std::vector<char> tp(predictions.size(), 0);
    for (const auto& [img, idx] : d.per_image) {
      std::vector<char> used(ious[idx.front()].size(), 0);
      for (std::size_t p : idx) {
        const auto& row = ious[p];
        long best = -1;
        for (std::size_t g = 0; g < row.size(); ++g) {
          if (used[g] || row[g] < thresholds[ti]) continue;
          if (best < 0 || row[g] > row[static_cast<std::size_t>(best)]) best = static_cast<long>(g);
        }
        if (best >= 0) {
          used[static_cast<std::size_t>(best)] = 1;
          tp[p] = 1;
        }
      }
    }
    out[ti] = interpolated_ap(d.order, tp, d.npos);
  }
  return out;
}

std::optional<double> compute_ap(const std::vector<InstancePrediction>& predictions,
                                 const data::DatasetIndex& gts, const std::string& class_name,
                                 double iou_threshold) {
  const auto grid = iou_thresholds();
  for (std::size_t i = 0; i < kNumThresholds; ++i) {
    if (std::abs(grid[i] - iou_threshold) < 1e-12) {
      const ApGrid g = compute_ap_grid(predictions, gts, class_name);
      if (!g) return std::nullopt;
      return (*g)[i];
    }
  }
  throw ConfigError("IoU threshold must lie on the 0.50:0.05:0.95 grid");
}

ApSummary summarize(const std::array<double, kNumThresholds>& grid) {
  ApSummary s;
  s.map = std::accumulate(grid.begin(), grid.end(), 0.0) / static_cast<double>(kNumThresholds);
  s.ap50 = grid[0];
  s.ap75 = grid[5];
  return s;
}

const GroupResult& EvalReport::group(const std::string& name) const {
  for (const auto& g : groups)
    if (g.name == name) return g;
  throw DataError("report has no group '" + name + "'");
}

std::map<std::string, ClassResult> evaluate_classes(
    const std::vector<InstancePrediction>& predictions, const data::DatasetIndex& gts,
    const std::vector<std::string>& vocabulary) {
  std::map<std::string, ClassResult> out;
  for (const auto& name : vocabulary) {
    ClassResult r;
    if (const auto cid = gts.category_id(name))
      for (const auto& [id, a] : gts.annotations())
        if (a.category_id == *cid) ++r.gt_count;
    for (const auto& p : predictions)
      if (p.category == name) ++r.prediction_count;
    if (const ApGrid g = compute_ap_grid(predictions, gts, name)) r.ap = summarize(*g);
    out[name] = r;
  }
  return out;
}

namespace {

GroupResult make_group(const std::string& name, const std::vector<std::string>& classes,
                       const std::map<std::string, ClassResult>& per_class) {
  GroupResult g;
  g.name = name;
  ApSummary acc;
  for (const auto& c : classes) {
    const auto it = per_class.find(c);
    if (it == per_class.end() || !it->second.ap) continue;
    g.classes.push_back(c);
    acc.map += it->second.ap->map;
    acc.ap50 += it->second.ap->ap50;
    acc.ap75 += it->second.ap->ap75;
  }
  if (!g.classes.empty()) {
    const double n = static_cast<double>(g.classes.size());
    g.metrics = ApSummary{acc.map / n, acc.ap50 / n, acc.ap75 / n};
  }
  return g;
}

}  // namespace

EvalReport group_metrics(const std::map<std::string, ClassResult>& per_class,
                         const data::ClassSplit& split) {
  EvalReport r;
  r.per_class = per_class;
  std::vector<std::string> overall = split.intersection;
  overall.insert(overall.end(), split.ov_exclusive.begin(), split.ov_exclusive.end());
  std::sort(overall.begin(), overall.end());
  r.groups.push_back(make_group(kIntersection, split.intersection, per_class));
  r.groups.push_back(make_group(kOpenVocabulary, split.ov_exclusive, per_class));
  r.groups.push_back(make_group(kOverall, overall, per_class));
  for (const auto& c : overall) {
    const auto it = per_class.find(c);
    if (it == per_class.end() || !it->second.ap) r.excluded.push_back(c);
  }
  return r;
}

namespace {

json summary_json(const std::optional<ApSummary>& s) {
  if (!s) return nullptr;
  return {{"mAP", s->map}, {"AP50", s->ap50}, {"AP75", s->ap75}};
}

std::optional<ApSummary> summary_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return ApSummary{j.at("mAP").get<double>(), j.at("AP50").get<double>(),
                   j.at("AP75").get<double>()};
}

}  // namespace

json report_to_json(const EvalReport& report) {
  json j;
  j["overall_rule"] = "class-weighted mean over Intersection and Open-Vocabulary classes";
  j["iou_thresholds"] = iou_thresholds();
  j["groups"] = json::array();
  for (const auto& g : report.groups)
    j["groups"].push_back({{"name", g.name}, {"classes", g.classes}, {"metrics", summary_json(g.metrics)}});
  j["per_class"] = json::object();
  for (const auto& [name, c] : report.per_class)
    j["per_class"][name] = {{"gt_count", c.gt_count},
                            {"prediction_count", c.prediction_count},
                            {"ap", summary_json(c.ap)}};
  j["excluded"] = report.excluded;
  return j;
}

EvalReport report_from_json(const json& j) {
  EvalReport r;
  try {
    for (const auto& g : j.at("groups"))
      r.groups.push_back({g.at("name").get<std::string>(),
                          g.at("classes").get<std::vector<std::string>>(),
                          summary_from(g.at("metrics"))});
    for (const auto& [name, c] : j.at("per_class").items())
      r.per_class[name] = {c.at("gt_count").get<std::size_t>(),
                           c.at("prediction_count").get<std::size_t>(), summary_from(c.at("ap"))};
    r.excluded = j.value("excluded", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  return r;
}

std::string format_report_table(const EvalReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(18) << "group" << std::right << std::setw(9) << "classes"
     << std::setw(9) << "mAP" << std::setw(9) << "AP50" << std::setw(9) << "AP75" << "\n";
  for (const auto& g : report.groups) {
    os << std::left << std::setw(18) << g.name << std::right << std::setw(9) << g.classes.size();
    if (g.metrics)
      os << std::setw(9) << g.metrics->map << std::setw(9) << g.metrics->ap50 << std::setw(9)
         << g.metrics->ap75;
    else
      os << std::setw(9) << "-" << std::setw(9) << "-" << std::setw(9) << "-";
    os << "\n";
  }
  if (!report.excluded.empty())
    os << "excluded (no ground truth): " << report.excluded.size() << " classes\n";
  return os.str();
}

json predictions_to_json(const std::vector<InstancePrediction>& predictions) {
  json arr = json::array();
  for (const auto& p : predictions)
    arr.push_back({{"image_id", p.image_id},
                   {"category", p.category},
                   {"segmentation", rle_to_json(encode_rle(p.mask))},
                   {"score", p.score}});
  return arr;
}

std::vector<InstancePrediction> predictions_from_json(const json& j) {
  std::vector<InstancePrediction> out;
  if (!j.is_array()) throw DataError("prediction file must be an array");
  for (std::size_t i = 0; i < j.size(); ++i) {
    try {
      InstancePrediction p;
      p.image_id = j[i].at("image_id").get<std::int64_t>();
      p.category = j[i].at("category").get<std::string>();
      p.mask = decode_rle(rle_from_json(j[i].at("segmentation")));
      p.score = j[i].at("score").get<double>();
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw DataError("prediction " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

ClassRanking per_class_report(const EvalReport& report, std::size_t top_k,
                              const EvalReport* paired) {
  std::vector<RankedClass> all;
  for (const auto& [name, c] : report.per_class) {
    if (!c.ap) continue;
    RankedClass rc{name, c.ap->map, std::nullopt};
    if (paired) {
      const auto it = paired->per_class.find(name);
      if (it != paired->per_class.end() && it->second.ap) rc.paired_ap = it->second.ap->map;
    }
    all.push_back(rc);
  }
  ClassRanking r;
  if (top_k > all.size()) {
    r.notice = "top_k " + std::to_string(top_k) + " exceeds the " + std::to_string(all.size()) +
               " evaluated classes; lists truncated";
    top_k = all.size();
  }
  auto best = all;
  std::sort(best.begin(), best.end(), [](const RankedClass& a, const RankedClass& b) {
    return a.ap != b.ap ? a.ap > b.ap : a.name < b.name;
  });
  auto worst = all;
  std::sort(worst.begin(), worst.end(), [](const RankedClass& a, const RankedClass& b) {
    return a.ap != b.ap ? a.ap < b.ap : a.name < b.name;
  });
  r.best.assign(best.begin(), best.begin() + static_cast<long>(top_k));
  r.worst.assign(worst.begin(), worst.begin() + static_cast<long>(top_k));
  return r;
}

json ranking_to_json(const ClassRanking& ranking) {
  auto list = [](const std::vector<RankedClass>& v) {
    json a = json::array();
    for (const auto& e : v) {
      json row = {{"class", e.name}, {"mAP", e.ap}};
      if (e.paired_ap) row["paired_mAP"] = *e.paired_ap;
      a.push_back(row);
    }
    return a;
  };
  json j = {{"best", list(ranking.best)}, {"worst", list(ranking.worst)}};
  if (ranking.notice) j["notice"] = *ranking.notice;
  return j;
}

}  // namespace maris::eval
