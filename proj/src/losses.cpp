#include "maris/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "maris/error.hpp"
#include "maris/random.hpp"

namespace maris::losses {

void TargetSet::validate(std::size_t num_classes) const {
  if (masks.rows() != class_ids.size())
    throw DataError("target set: " + std::to_string(class_ids.size()) + " classes but " +
                    std::to_string(masks.rows()) + " masks");
  if (!class_ids.empty() && masks.cols() != height * width)
    throw DataError("target set: masks are not " + std::to_string(height) + "x" +
                    std::to_string(width));
  for (std::size_t g = 0; g < class_ids.size(); ++g)
    if (class_ids[g] >= num_classes)
      throw DataError("target " + std::to_string(g) + ": class index " +
                      std::to_string(class_ids[g]) + " outside vocabulary of " +
                      std::to_string(num_classes));
  for (double v : masks.data())
    if (v != 0.0 && v != 1.0) throw DataError("target set: mask values must be 0 or 1");
}

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"match", {{"cls", c.match.cls}, {"dice", c.match.dice}, {"bce", c.match.bce}}},
       {"w_cls", c.w_cls},
       {"w_mask", c.w_mask},
       {"softmax_cls", c.softmax_cls},
       {"dice_eps", c.dice_eps},
       {"point_threshold", c.point_threshold},
       {"num_points", c.num_points},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  LossConfig d;
  if (j.contains("match")) {
    const auto& m = j.at("match");
    c.match.cls = m.value("cls", d.match.cls);
    c.match.dice = m.value("dice", d.match.dice);
    c.match.bce = m.value("bce", d.match.bce);
  }
  c.w_cls = j.value("w_cls", d.w_cls);
  c.w_mask = j.value("w_mask", d.w_mask);
  c.softmax_cls = j.value("softmax_cls", d.softmax_cls);
  c.dice_eps = j.value("dice_eps", d.dice_eps);
  c.point_threshold = j.value("point_threshold", d.point_threshold);
  c.num_points = j.value("num_points", d.num_points);
  c.seed = j.value("seed", d.seed);
  if (c.w_cls < 0 || c.w_mask < 0 || c.match.cls < 0 || c.match.dice < 0 || c.match.bce < 0)
    throw ConfigError("loss weights must be nonnegative");
  if (!(c.dice_eps > 0)) throw ConfigError("dice_eps must be > 0");
  if (c.num_points == 0) throw ConfigError("num_points must be >= 1");
}

// Shortest augmenting path with row/column potentials, O(n^2 m).
std::vector<std::size_t> solve_assignment(const Matrix& cost) {
  const std::size_t n = cost.rows(), m = cost.cols();
  if (n > m) throw ConfigError("assignment: more rows than columns");
  if (n == 0) return {};
  if (!cost.all_finite()) throw NumericError("assignment: non-finite cost", -1);
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col(n);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) col[p[j] - 1] = j - 1;
  return col;
}

namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

Matrix matching_cost(const Matrix& class_logits, const Matrix& mask_logits,
                     const TargetSet& targets, const LossConfig& cfg) {
  const std::size_t nq = class_logits.rows(), g_n = targets.size();
  if (mask_logits.rows() != nq)
    throw ShapeError("matching: " + std::to_string(nq) + " class rows vs " +
                     std::to_string(mask_logits.rows()) + " mask rows");
  if (mask_logits.cols() != targets.masks.cols())
    throw ShapeError("matching: mask logits have " + std::to_string(mask_logits.cols()) +
                     " pixels, targets " + std::to_string(targets.masks.cols()));
  const std::size_t hw = mask_logits.cols();

  std::vector<std::size_t> points;
  if (hw > cfg.point_threshold) {
    auto rng = stream_rng(cfg.seed, "match-points");
    points.resize(cfg.num_points);
    for (auto& p : points) p = uniform_index(rng, hw);
  } else {
    points.resize(hw);
    for (std::size_t i = 0; i < hw; ++i) points[i] = i;
  }
  const double inv_p = 1.0 / static_cast<double>(points.size());

  // Class probabilities, sigmoid or softmax.
  Matrix prob(nq, class_logits.cols());
  for (std::size_t q = 0; q < nq; ++q) {
    if (cfg.softmax_cls) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < prob.cols(); ++k) mx = std::max(mx, class_logits(q, k));
      double z = 0.0;
      for (std::size_t k = 0; k < prob.cols(); ++k) z += std::exp(class_logits(q, k) - mx);
      for (std::size_t k = 0; k < prob.cols(); ++k) prob(q, k) = std::exp(class_logits(q, k) - mx) / z;
    } else {
      for (std::size_t k = 0; k < prob.cols(); ++k) prob(q, k) = sigmoid(class_logits(q, k));
    }
  }

  Matrix cost(g_n, nq);
  for (std::size_t q = 0; q < nq; ++q) {
    std::vector<double> p(points.size()), pos(points.size()), neg(points.size());
    double sum_p = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double x = mask_logits(q, points[i]);
      p[i] = sigmoid(x);
      pos[i] = softplus(-x);  // -log sigmoid(x)
      neg[i] = softplus(x);   // -log(1 - sigmoid(x))
      sum_p += p[i];
    }
    for (std::size_t g = 0; g < g_n; ++g) {
      double inter = 0.0, sum_g = 0.0, bce = 0.0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        const double t = targets.masks(g, points[i]);
        inter += p[i] * t;
        sum_g += t;
        bce += t * pos[i] + (1.0 - t) * neg[i];
      }
      const double dice = 1.0 - (2.0 * inter + cfg.dice_eps) / (sum_p + sum_g + cfg.dice_eps);
      cost(g, q) = cfg.match.cls * -prob(q, targets.class_ids[g]) + cfg.match.dice * dice +
                   cfg.match.bce * bce * inv_p;
    }
  }
  return cost;
}

Assignment hungarian_match(const Matrix& class_logits, const Matrix& mask_logits,
                           const TargetSet& targets, const LossConfig& cfg) {
  const std::size_t nq = class_logits.rows(), g_n = targets.size();
  if (g_n == 0) throw ConfigError("matching: no targets");
  if (g_n > nq)
    throw ConfigError("matching capacity exceeded: " + std::to_string(g_n) + " targets for " +
                      std::to_string(nq) + " queries");
  targets.validate(class_logits.cols());
  const Matrix cost = matching_cost(class_logits, mask_logits, targets, cfg);
  const auto col = solve_assignment(cost);
  Assignment a;
  a.target_of_query.assign(nq, -1);
  for (std::size_t g = 0; g < g_n; ++g) {
    a.pairs.emplace_back(col[g], g);
    a.target_of_query[col[g]] = static_cast<long>(g);
    a.cost += cost(g, col[g]);
  }
  return a;
}

ag::Var classification_loss(const ag::Var& class_logits, const TargetSet& targets,
                            const Assignment& assignment, bool softmax) {
  if (softmax) {
    std::vector<std::size_t> rows, cls;
    for (auto [q, g] : assignment.pairs) {
      rows.push_back(q);
      cls.push_back(targets.class_ids[g]);
    }
    return ag::softmax_cross_entropy(ag::select_rows(class_logits, rows), cls);
  }
  Matrix onehot(class_logits.rows(), class_logits.cols());
  for (auto [q, g] : assignment.pairs) onehot(q, targets.class_ids[g]) = 1.0;
  return ag::bce_with_logits(class_logits, onehot);
}

ag::Var mask_loss(const ag::Var& mask_logits, const TargetSet& targets,
                  const Assignment& assignment, double eps) {
  std::vector<std::size_t> rows;
  Matrix gt(assignment.pairs.size(), targets.masks.cols());
  for (std::size_t i = 0; i < assignment.pairs.size(); ++i) {
    const auto [q, g] = assignment.pairs[i];
    rows.push_back(q);
    for (std::size_t c = 0; c < gt.cols(); ++c) gt(i, c) = targets.masks(g, c);
  }
  ag::Var sel = ag::select_rows(mask_logits, rows);
  return ag::add(ag::dice_loss(sel, gt, eps), ag::bce_with_logits(sel, gt));
}

LossTerms total_loss(const ag::Var& class_logits, const ag::Var& mask_logits,
                     const TargetSet& targets, const LossConfig& cfg) {
  LossTerms t;
  t.assignment = hungarian_match(class_logits.value(), mask_logits.value(), targets, cfg);
  t.cls = classification_loss(class_logits, targets, t.assignment, cfg.softmax_cls);
  t.mask = mask_loss(mask_logits, targets, t.assignment, cfg.dice_eps);
  t.total = ag::add(ag::scale(t.cls, cfg.w_cls), ag::scale(t.mask, cfg.w_mask));
  return t;
}

double classification_loss(const Matrix& class_logits, const TargetSet& targets,
                           const Assignment& assignment, bool softmax) {
  return classification_loss(ag::constant(class_logits), targets, assignment, softmax).scalar();
}

double mask_loss(const Matrix& mask_logits, const TargetSet& targets,
                 const Assignment& assignment, double eps) {
  return mask_loss(ag::constant(mask_logits), targets, assignment, eps).scalar();
}

}  // namespace maris::losses
