#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Written as plain loops; they share no code with the library beyond
// its data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maris/data.hpp"
#include "maris/eval.hpp"
#include "maris/mask.hpp"
#include "maris/params.hpp"
#include "maris/tensor.hpp"

namespace oracle {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Minimum total cost over all injective row -> column maps, by enumeration.
inline double brute_force_assignment(const maris::Matrix& cost) {
  const std::size_t n = cost.rows(), m = cost.cols();
  std::vector<std::size_t> cols(m);
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  // Every permutation of the columns; the first n entries give a map.
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += cost(i, cols[i]);
    best = std::min(best, c);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

/// Mean elementwise BCE of sigmoid(x) against t.
inline double bce(const maris::Matrix& x, const maris::Matrix& t) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = sigmoid(x[i]);
    acc += -(t[i] * std::log(p) + (1.0 - t[i]) * std::log(1.0 - p));
  }
  return acc / static_cast<double>(x.size());
}

inline double dice_row(std::span<const double> x, std::span<const double> t, double eps) {
  double pg = 0.0, ps = 0.0, gs = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = sigmoid(x[i]);
    pg += p * t[i];
    ps += p;
    gs += t[i];
  }
  return 1.0 - (2.0 * pg + eps) / (ps + gs + eps);
}

/// Central-difference check of every scalar of every parameter.
struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double worst_rel = 0.0;
  std::string worst_name;
};

/// |analytic - numeric| <= rel_tol * max(|analytic|, |numeric|) + abs_floor.
/// `analytic` holds gradients already accumulated by backward().
inline GradCheckResult check_gradients(maris::ParamSet& params,
                                       const std::map<std::string, maris::Matrix>& analytic,
                                       const std::function<double()>& loss, double h,
                                       double rel_tol, double abs_floor) {
  GradCheckResult r;
  for (auto& [name, var] : params) {
    const maris::Matrix& a = analytic.at(name);
    for (std::size_t i = 0; i < var.value().size(); ++i) {
      const double orig = var.value()[i];
      var.mutable_value()[i] = orig + h;
      const double fp = loss();
      var.mutable_value()[i] = orig - h;
      const double fm = loss();
      var.mutable_value()[i] = orig;
      const double num = (fp - fm) / (2.0 * h);
      const double diff = std::abs(num - a[i]);
      const double scale = std::max(std::abs(num), std::abs(a[i]));
      const double rel = scale > 0 ? diff / scale : 0.0;
      ++r.checked;
      if (diff > rel_tol * scale + abs_floor) {
        ++r.failures;
        if (rel > r.worst_rel) {
          r.worst_rel = rel;
          r.worst_name = name + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  return r;
}

/// Indices of the n largest scores by full sort; ties to the lower index.
inline std::vector<std::size_t> sorted_top_n(const std::vector<double>& s, std::size_t n) {
  std::vector<std::pair<double, std::size_t>> v;
  for (std::size_t i = 0; i < s.size(); ++i) v.emplace_back(-s[i], i);
  std::sort(v.begin(), v.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(v[i].second);
  return out;
}

// ---------------------------------------------------------------------------
// Micro AP fixtures and a brute-force evaluator.

/// Annotation JSON with one category per name and RLE masks.
struct MicroGt {
  std::int64_t image_id;
  std::string category;
  maris::BinaryMask mask;
};

inline maris::data::DatasetIndex make_index(const std::vector<std::string>& categories,
                                            const std::vector<std::int64_t>& image_ids,
                                            std::size_t h, std::size_t w,
                                            const std::vector<MicroGt>& gts) {
  nlohmann::json j;
  j["images"] = nlohmann::json::array();
  for (auto id : image_ids)
    j["images"].push_back({{"id", id}, {"file_name", "img" + std::to_string(id) + ".ppm"},
                           {"height", h}, {"width", w}});
  j["categories"] = nlohmann::json::array();
  for (std::size_t k = 0; k < categories.size(); ++k)
    j["categories"].push_back({{"id", k + 1}, {"name", categories[k]}, {"supercategory", "x"}});
  j["annotations"] = nlohmann::json::array();
  std::int64_t aid = 1;
  for (const auto& g : gts) {
    const auto cat = std::find(categories.begin(), categories.end(), g.category) - categories.begin();
    j["annotations"].push_back({{"id", aid++},
                                {"image_id", g.image_id},
                                {"category_id", cat + 1},
                                {"segmentation", maris::rle_to_json(maris::encode_rle(g.mask))},
                                {"bbox", {0, 0, 1, 1}}});
  }
  return maris::data::DatasetIndex::from_json(j);
}

namespace detail {

// Lexicographic search over all valid matchings of an image's predictions:
// earlier (higher-score) predictions take priority; each prefers a higher IoU,
// then a lower GT index, and "unmatched" ranks last.
inline void enumerate(std::size_t p, const std::vector<std::vector<double>>& iou, double t,
                      std::vector<char>& used, std::vector<long>& cur, std::vector<long>& best,
                      bool& have_best) {
  if (p == iou.size()) {
    auto key = [&](const std::vector<long>& m, std::size_t i) {
      return m[i] < 0 ? std::make_pair(-1.0, 0L) : std::make_pair(iou[i][m[i]], -m[i]);
    };
    bool better = !have_best;
    for (std::size_t i = 0; i < cur.size() && !better; ++i) {
      if (key(cur, i) > key(best, i)) better = true;
      else if (key(cur, i) < key(best, i)) break;
    }
    if (better) {
      best = cur;
      have_best = true;
    }
    return;
  }
  cur[p] = -1;
  enumerate(p + 1, iou, t, used, cur, best, have_best);
  for (std::size_t g = 0; g < (iou.empty() ? 0 : iou[p].size()); ++g) {
    if (used[g] || iou[p][g] < t) continue;
    used[g] = 1;
    cur[p] = static_cast<long>(g);
    enumerate(p + 1, iou, t, used, cur, best, have_best);
    used[g] = 0;
  }
  cur[p] = -1;
}

}  // namespace detail

/// AP x 100 at threshold t, or nullopt without GT.
inline std::optional<double> brute_force_ap(const std::vector<maris::eval::InstancePrediction>& preds,
                                            const maris::data::DatasetIndex& gts,
                                            const std::string& cls, double t) {
  const auto cid = gts.category_id(cls);
  std::map<std::int64_t, std::vector<maris::BinaryMask>> gt;
  std::size_t npos = 0;
  if (cid)
    for (const auto& [id, a] : gts.annotations())
      if (a.category_id == *cid) {
        gt[a.image_id].push_back(gts.decode_mask(id));
        ++npos;
      }
  if (npos == 0) return std::nullopt;

  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i].category == cls) idx.push_back(i);
  auto before = [&](std::size_t a, std::size_t b) {
    return preds[a].score > preds[b].score || (preds[a].score == preds[b].score && a < b);
  };
  std::map<std::int64_t, std::vector<std::size_t>> per_image;
  for (auto i : idx) per_image[preds[i].image_id].push_back(i);
  std::vector<char> tp(preds.size(), 0);
  std::vector<std::size_t> kept;
  for (auto& [img, v] : per_image) {
    std::sort(v.begin(), v.end(), before);
    if (v.size() > 100) v.resize(100);
    kept.insert(kept.end(), v.begin(), v.end());
    std::vector<std::vector<double>> iou;
    for (auto p : v) {
      std::vector<double> row;
      for (const auto& m : gt[img]) row.push_back(maris::mask_iou(preds[p].mask, m));
      iou.push_back(row);
    }
    std::vector<char> used(gt[img].size(), 0);
    std::vector<long> cur(v.size(), -1), best(v.size(), -1);
    bool have = false;
    detail::enumerate(0, iou, t, used, cur, best, have);
    for (std::size_t i = 0; i < v.size(); ++i)
      if (best[i] >= 0) tp[v[i]] = 1;
  }
  std::sort(kept.begin(), kept.end(), before);
  std::vector<double> prec, rec;
  double ctp = 0, cfp = 0;
  for (auto p : kept) {
    (tp[p] ? ctp : cfp) += 1.0;
    prec.push_back(ctp / (ctp + cfp));
    rec.push_back(ctp / static_cast<double>(npos));
  }
  // Interpolated precision at each recall level: max precision at recall >= r.
  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    double best = 0.0;
    for (std::size_t i = 0; i < prec.size(); ++i)
      if (rec[i] >= r / 100.0) best = std::max(best, prec[i]);
    sum += best;
  }
  return sum / 101.0 * 100.0;
}

/// Square mask covering [x0,x1) x [y0,y1).
inline maris::BinaryMask box_mask(std::size_t h, std::size_t w, std::size_t x0, std::size_t y0,
                                  std::size_t x1, std::size_t y1) {
  maris::BinaryMask m(h, w);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) m.at(y, x) = 1;
  return m;
}

// ---------------------------------------------------------------------------
// Scalar-loop dense layers.

/// y = x W + b, one output element at a time.
inline maris::Matrix dense(const maris::Matrix& x, const maris::Matrix& w, const maris::Matrix& b) {
  maris::Matrix y(x.rows(), w.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double acc = b[j];
      for (std::size_t c = 0; c < x.cols(); ++c) acc += x(i, c) * w(c, j);
      y(i, j) = acc;
    }
  return y;
}

inline maris::Matrix dense(const maris::Matrix& x, const maris::Linear& l) {
  return dense(x, l.weight.value(), l.bias.value());
}

inline maris::Matrix mlp(const maris::Matrix& x, const maris::Mlp& m) {
  maris::Matrix h = dense(x, m.first);
  for (double& v : h.data()) v = v * sigmoid(v);
  return dense(h, m.second);
}

/// Gated fusion of one level: v = x Wv, g = y Wg, a = sigmoid([v g] Wa),
/// out = MLP(v + a * g), element by element.
template <class Level>
maris::Matrix fusion_level(const maris::Matrix& x, const maris::Matrix& y, const Level& p,
                           bool use_mlp) {
  const maris::Matrix v = dense(x, p.visual), g = dense(y, p.geometric);
  const std::size_t cs = v.cols();
  maris::Matrix blended(v.rows(), cs);
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < cs; ++j) {
      double z = p.gate.bias.value()[j];
      for (std::size_t c = 0; c < cs; ++c) z += v(i, c) * p.gate.weight.value()(c, j);
      for (std::size_t c = 0; c < cs; ++c) z += g(i, c) * p.gate.weight.value()(cs + c, j);
      blended(i, j) = v(i, j) + sigmoid(z) * g(i, j);
    }
  return use_mlp ? mlp(blended, p.mlp) : blended;
}

// ---------------------------------------------------------------------------
// Template selection by exhaustive sort.

/// scores[b][k][t], embeddings[k][t][d]; returns K x D unit rows.
using Scores3 = std::vector<std::vector<std::vector<double>>>;

inline std::vector<double> unit(std::vector<double> v) {
  double ss = 0;
  for (double x : v) ss += x * x;
  if (ss > 0)
    for (double& x : v) x /= std::sqrt(ss);
  return v;
}

inline std::vector<std::vector<double>> mixed_selection(const Scores3& scores, const Scores3& emb,
                                                        std::size_t n, double lambda) {
  const std::size_t K = emb.size(), T = emb[0].size(), D = emb[0][0].size(), B = scores.size();
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> all(D, 0.0), top(D, 0.0);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < D; ++d) all[d] += emb[k][t][d] / static_cast<double>(T);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t : sorted_top_n(scores[b][k], n))
        for (std::size_t d = 0; d < D; ++d)
          top[d] += emb[k][t][d] / static_cast<double>(n * B);
    std::vector<double> e(D);
    for (std::size_t d = 0; d < D; ++d) e[d] = lambda * top[d] + (1.0 - lambda) * all[d];
    out.push_back(unit(e));
  }
  return out;
}

inline std::vector<double> enhancement_weights(const std::vector<double>& s, std::size_t n,
                                               double alpha) {
  std::vector<double> w(s.size(), 1.0);
  for (std::size_t t : sorted_top_n(s, n)) w[t] = alpha;
  double z = 0;
  for (double v : w) z += v;
  for (double& v : w) v /= z;
  return w;
}

inline std::vector<std::vector<double>> weighted_selection(const Scores3& scores, const Scores3& emb,
                                                           std::size_t n, double alpha) {
  const std::size_t K = emb.size(), T = emb[0].size(), D = emb[0][0].size(), B = scores.size();
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> e(D, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      const auto w = enhancement_weights(scores[b][k], n, alpha);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t d = 0; d < D; ++d) e[d] += w[t] * emb[k][t][d] / static_cast<double>(B);
    }
    out.push_back(unit(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary fixture with 84 train names, 115 val names and 41 shared.

struct NameSets {
  std::vector<std::string> train;
  std::vector<std::string> val;
};

inline NameSets split_fixture_names() {
  NameSets n;
  for (int i = 0; i < 41; ++i) {
    n.train.push_back("shared-" + std::to_string(i));
    n.val.push_back("shared-" + std::to_string(i));
  }
  for (int i = 0; i < 43; ++i) n.train.push_back("train-only-" + std::to_string(i));
  for (int i = 0; i < 74; ++i) n.val.push_back("val-only-" + std::to_string(i));
  return n;
}

/// Small random scenes: up to 3 images of 8x8, two classes, box-shaped GT and
/// predictions near them (plus strays), scores rounded so ties occur.
struct MicroFixture {
  maris::data::DatasetIndex index;
  std::vector<maris::eval::InstancePrediction> predictions;
  std::vector<std::string> classes{"a", "b"};
};

inline MicroFixture random_micro_fixture(std::mt19937_64& rng) {
  auto u = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
  auto box = [&](std::size_t cx, std::size_t cy) {
    const std::size_t x0 = std::min<std::size_t>(cx, 6), y0 = std::min<std::size_t>(cy, 6);
    return box_mask(8, 8, x0, y0, std::min<std::size_t>(8, x0 + 2 + u(3)),
                    std::min<std::size_t>(8, y0 + 2 + u(3)));
  };
  MicroFixture fx;
  std::vector<std::int64_t> ids;
  std::vector<MicroGt> gts;
  const std::size_t n_img = 1 + u(3);
  for (std::size_t i = 0; i < n_img; ++i) {
    const auto id = static_cast<std::int64_t>(i + 1);
    ids.push_back(id);
    const std::size_t n_gt = u(4);
    for (std::size_t g = 0; g < n_gt; ++g) {
      const std::size_t cx = u(7), cy = u(7);
      const std::string cls = fx.classes[u(2)];
      gts.push_back({id, cls, box(cx, cy)});
      const std::size_t n_pred = u(3);
      for (std::size_t p = 0; p < n_pred; ++p) {
        const std::size_t dx = cx + u(2), dy = cy + u(2);
        fx.predictions.push_back({id, u(4) == 0 ? fx.classes[u(2)] : cls, box(dx, dy),
                                  static_cast<double>(1 + u(10)) / 10.0});
      }
    }
    const std::size_t strays = u(2);
    for (std::size_t p = 0; p < strays; ++p)
      fx.predictions.push_back({id, fx.classes[u(2)], box(u(7), u(7)),
                                static_cast<double>(1 + u(10)) / 10.0});
  }
  fx.index = make_index(fx.classes, ids, 8, 8, gts);
  return fx;
}

}  // namespace oracle
