#include "maris/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace maris::ag {

namespace {

Var make(Matrix value, std::vector<std::shared_ptr<Node>> parents,
         std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = std::any_of(parents.begin(), parents.end(),
                                 [](const auto& p) { return p->requires_grad; });
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(bw);
  }
  return Var(std::move(n));
}

// Parent gradient buffer, or nullptr when the parent is not differentiable.
Matrix* gbuf(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return &p.grad;
}

void check_same(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError(std::string(op) + ": " + a.value().shape_str() + " vs " +
                     b.value().shape_str());
  }
}

double sigm(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

void Var::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

Var parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

Var constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

void backward(const Var& root) {
  if (root.value().size() != 1) throw ShapeError("backward: root must be scalar");
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad();
  root.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Var matmul(const Var& a, const Var& b) {
  return make(maris::matmul(a.value(), b.value()), {a.shared(), b.shared()}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    const Matrix& bv = self.parents[1]->value;
    if (Matrix* ga = gbuf(self, 0)) {
      // dA = G * B^T
      for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < bv.cols(); ++j) {
          const double g = self.grad(i, j);
          if (g == 0.0) continue;
          for (std::size_t k = 0; k < av.cols(); ++k) (*ga)(i, k) += g * bv(k, j);
        }
    }
    if (Matrix* gb = gbuf(self, 1)) {
      // dB = A^T * G
      for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t k = 0; k < av.cols(); ++k) {
          const double a_ik = av(i, k);
          if (a_ik == 0.0) continue;
          for (std::size_t j = 0; j < bv.cols(); ++j) (*gb)(k, j) += a_ik * self.grad(i, j);
        }
    }
  });
}

Var transpose(const Var& a) {
  return make(maris::transpose(a.value()), {a.shared()}, [](Node& self) {
    if (Matrix* ga = gbuf(self, 0))
      for (std::size_t i = 0; i < self.grad.rows(); ++i)
        for (std::size_t j = 0; j < self.grad.cols(); ++j) (*ga)(j, i) += self.grad(i, j);
  });
}

Var add(const Var& a, const Var& b) {
  check_same(a, b, "add");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make(std::move(out), {a.shared(), b.shared()}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (Matrix* g = gbuf(self, p))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

Var sub(const Var& a, const Var& b) {
  check_same(a, b, "sub");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make(std::move(out), {a.shared(), b.shared()}, [](Node& self) {
    if (Matrix* g = gbuf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (Matrix* g = gbuf(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
  });
}

Var mul(const Var& a, const Var& b) {
  check_same(a, b, "mul");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make(std::move(out), {a.shared(), b.shared()}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    const Matrix& bv = self.parents[1]->value;
    if (Matrix* g = gbuf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    if (Matrix* g = gbuf(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
  });
}

Var scale(const Var& a, double s) {
  Matrix out = a.value();
  for (double& v : out.data()) v *= s;
  return make(std::move(out), {a.shared()}, [s](Node& self) {
    if (Matrix* g = gbuf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
  });
}

Var add_row(const Var& a, const Var& b) {
  if (b.rows() != 1 || b.cols() != a.cols()) {
    throw ShapeError("add_row: " + a.value().shape_str() + " + " + b.value().shape_str());
  }
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += b.value()[j];
  return make(std::move(out), {a.shared(), b.shared()}, [](Node& self) {
    if (Matrix* g = gbuf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (Matrix* g = gbuf(self, 1))
      for (std::size_t i = 0; i < self.grad.rows(); ++i)
        for (std::size_t j = 0; j < self.grad.cols(); ++j) (*g)[j] += self.grad(i, j);
  });
}

Var mul_scalar(const Var& a, const Var& s) {
  if (s.value().size() != 1) throw ShapeError("mul_scalar: scalar operand must be 1x1");
  Matrix out = a.value();
  const double sv = s.scalar();
  for (double& v : out.data()) v *= sv;
  return make(std::move(out), {a.shared(), s.shared()}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    const double sv = self.parents[1]->value[0];
    if (Matrix* g = gbuf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += sv * self.grad[i];
    if (Matrix* g = gbuf(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * self.grad[i];
      (*g)[0] += acc;
    }
  });
}

Var add_scalar(const Var& a, const Var& s) {
  if (s.value().size() != 1) throw ShapeError("add_scalar: scalar operand must be 1x1");
  Matrix out = a.value();
  for (double& v : out.data()) v += s.scalar();
  return make(std::move(out), {a.shared(), s.shared()}, [](Node& self) {
    if (Matrix* g = gbuf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (Matrix* g = gbuf(self, 1)) {
      double acc = 0.0;
      for (double v : self.grad.data()) acc += v;
      (*g)[0] += acc;
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }

Var sigmoid(const Var& a) {
  Matrix out = a.value();
  for (double& v : out.data()) v = sigm(v);
  return make(std::move(out), {a.shared()}, [](Node& self) {
    if (Matrix* g = gbuf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double s = self.value[i];
        (*g)[i] += self.grad[i] * s * (1.0 - s);
      }
  });
}

Var silu(const Var& a) {
  Matrix out = a.value();
  for (double& v : out.data()) v = v * sigm(v);
  return make(std::move(out), {a.shared()}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    if (Matrix* g = gbuf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double s = sigm(av[i]);
        (*g)[i] += self.grad[i] * (s + av[i] * s * (1.0 - s));
      }
  });
}

Var exp(const Var& a) {
  Matrix out = a.value();
  for (double& v : out.data()) v = std::exp(v);
  return make(std::move(out), {a.shared()}, [](Node& self) {
    if (Matrix* g = gbuf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * self.value[i];
  });
}

Var concat_cols(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: " + a.value().shape_str() + " | " + b.value().shape_str());
  }
  const std::size_t ca = a.cols(), cb = b.cols();
  Matrix out(a.rows(), ca + cb);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < ca; ++j) out(i, j) = a.value()(i, j);
    for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = b.value()(i, j);
  }
  return make(std::move(out), {a.shared(), b.shared()}, [ca, cb](Node& self) {
    if (Matrix* g = gbuf(self, 0))
      for (std::size_t i = 0; i < g->rows(); ++i)
        for (std::size_t j = 0; j < ca; ++j) (*g)(i, j) += self.grad(i, j);
    if (Matrix* g = gbuf(self, 1))
      for (std::size_t i = 0; i < g->rows(); ++i)
        for (std::size_t j = 0; j < cb; ++j) (*g)(i, j) += self.grad(i, ca + j);
  });
}

Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a.value().size()) {
    throw ShapeError("reshape: " + a.value().shape_str() + " -> " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  Matrix out(rows, cols, a.value().data());
  return make(std::move(out), {a.shared()}, [](Node& self) {
    if (Matrix* g = gbuf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

Var select_rows(const Var& a, std::span<const std::size_t> rows) {
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Matrix out(idx.size(), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a.rows()) throw ShapeError("select_rows: index out of range");
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a.value()(idx[i], j);
  }
  return make(std::move(out), {a.shared()}, [idx = std::move(idx)](Node& self) {
    if (Matrix* g = gbuf(self, 0))
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < g->cols(); ++j) (*g)(idx[i], j) += self.grad(i, j);
  });
}

Var sum_all(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return make(Matrix(1, 1, s), {a.shared()}, [](Node& self) {
    if (Matrix* g = gbuf(self, 0))
      for (double& v : g->data()) v += self.grad[0];
  });
}

Var mean_all(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum_all(a), n > 0 ? 1.0 / n : 0.0);
}

Var sum_rows(const Var& a) {
  Matrix out(a.rows(), 1);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, 0) += a.value()(i, j);
  return make(std::move(out), {a.shared()}, [](Node& self) {
    if (Matrix* g = gbuf(self, 0))
      for (std::size_t i = 0; i < g->rows(); ++i)
        for (std::size_t j = 0; j < g->cols(); ++j) (*g)(i, j) += self.grad(i, 0);
  });
}

Var div_rows(const Var& a, const Var& s) {
  if (s.rows() != a.rows() || s.cols() != 1) {
    throw ShapeError("div_rows: " + a.value().shape_str() + " / " + s.value().shape_str());
  }
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) /= s.value()(i, 0);
  return make(std::move(out), {a.shared(), s.shared()}, [](Node& self) {
    const Matrix& sv = self.parents[1]->value;
    if (Matrix* g = gbuf(self, 0))
      for (std::size_t i = 0; i < g->rows(); ++i)
        for (std::size_t j = 0; j < g->cols(); ++j) (*g)(i, j) += self.grad(i, j) / sv(i, 0);
    if (Matrix* g = gbuf(self, 1))
      for (std::size_t i = 0; i < self.value.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < self.value.cols(); ++j)
          acc += self.grad(i, j) * self.value(i, j);
        (*g)(i, 0) -= acc / sv(i, 0);
      }
  });
}

Var softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double m = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double& v : r) z += (v = std::exp(v - m));
    for (double& v : r) v /= z;
  }
  return make(std::move(out), {a.shared()}, [](Node& self) {
    if (Matrix* g = gbuf(self, 0))
      for (std::size_t i = 0; i < self.value.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < self.value.cols(); ++j)
          dot += self.grad(i, j) * self.value(i, j);
        for (std::size_t j = 0; j < self.value.cols(); ++j)
          (*g)(i, j) += self.value(i, j) * (self.grad(i, j) - dot);
      }
  });
}

Var normalize_rows(const Var& a, double eps) {
  Matrix out = a.value();
  std::vector<double> inv(out.rows());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    double ss = eps;
    for (double v : out.row(i)) ss += v * v;
    inv[i] = 1.0 / std::sqrt(ss);
    for (double& v : out.row(i)) v *= inv[i];
  }
  return make(std::move(out), {a.shared()}, [inv = std::move(inv)](Node& self) {
    if (Matrix* g = gbuf(self, 0))
      for (std::size_t i = 0; i < self.value.rows(); ++i) {
        // d(x/n) = (g - y (y.g)) / n
        double dot = 0.0;
        for (std::size_t j = 0; j < self.value.cols(); ++j)
          dot += self.grad(i, j) * self.value(i, j);
        for (std::size_t j = 0; j < self.value.cols(); ++j)
          (*g)(i, j) += inv[i] * (self.grad(i, j) - self.value(i, j) * dot);
      }
  });
}

Var bilinear_sample(const Var& values, std::size_t height, std::size_t width, const Var& locs) {
  if (values.rows() != height * width) {
    throw ShapeError("bilinear_sample: value map has " + std::to_string(values.rows()) +
                     " rows, expected " + std::to_string(height * width));
  }
  if (locs.cols() != 2) throw ShapeError("bilinear_sample: locations must be N x 2");
  const std::size_t c = values.cols();
  const std::size_t n = locs.rows();
  Matrix out(n, c);
  const Matrix& v = values.value();
  const Matrix& l = locs.value();
  auto at = [&](long y, long x) -> const double* {
    if (y < 0 || x < 0 || y >= static_cast<long>(height) || x >= static_cast<long>(width))
      return nullptr;
    return v.data().data() + (static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)) * c;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const double x = l(i, 0), y = l(i, 1);
    const long x0 = static_cast<long>(std::floor(x)), y0 = static_cast<long>(std::floor(y));
    const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
    const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    const double* p[4] = {at(y0, x0), at(y0, x0 + 1), at(y0 + 1, x0), at(y0 + 1, x0 + 1)};
    for (int k = 0; k < 4; ++k)
      if (p[k])
        for (std::size_t j = 0; j < c; ++j) out(i, j) += w[k] * p[k][j];
  }
  return make(std::move(out), {values.shared(), locs.shared()}, [height, width](Node& self) {
    const Matrix& v = self.parents[0]->value;
    const Matrix& l = self.parents[1]->value;
    const std::size_t c = v.cols();
    Matrix* gv = gbuf(self, 0);
    Matrix* gl = gbuf(self, 1);
    auto idx = [&](long y, long x) -> long {
      if (y < 0 || x < 0 || y >= static_cast<long>(height) || x >= static_cast<long>(width))
        return -1;
      return y * static_cast<long>(width) + x;
    };
    for (std::size_t i = 0; i < l.rows(); ++i) {
      const double x = l(i, 0), y = l(i, 1);
      const long x0 = static_cast<long>(std::floor(x)), y0 = static_cast<long>(std::floor(y));
      const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
      const long id[4] = {idx(y0, x0), idx(y0, x0 + 1), idx(y0 + 1, x0), idx(y0 + 1, x0 + 1)};
      const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      // d w / d fx and d w / d fy
      const double dwx[4] = {-(1 - fy), (1 - fy), -fy, fy};
      const double dwy[4] = {-(1 - fx), -fx, (1 - fx), fx};
      double gx = 0.0, gy = 0.0;
      for (int k = 0; k < 4; ++k) {
        if (id[k] < 0) continue;
        const std::size_t base = static_cast<std::size_t>(id[k]) * c;
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          const double g = self.grad(i, j);
          if (gv) gv->data()[base + j] += w[k] * g;
          dot += g * v.data()[base + j];
        }
        gx += dwx[k] * dot;
        gy += dwy[k] * dot;
      }
      if (gl) {
        (*gl)(i, 0) += gx;
        (*gl)(i, 1) += gy;
      }
    }
  });
}

Var weighted_group_sum(const Var& samples, const Var& weights) {
  const std::size_t n = weights.rows(), p = weights.cols(), c = samples.cols();
  if (samples.rows() != n * p) {
    throw ShapeError("weighted_group_sum: " + samples.value().shape_str() + " with weights " +
                     weights.value().shape_str());
  }
  Matrix out(n, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < p; ++k) {
      const double w = weights.value()(i, k);
      for (std::size_t j = 0; j < c; ++j) out(i, j) += w * samples.value()(i * p + k, j);
    }
  return make(std::move(out), {samples.shared(), weights.shared()}, [](Node& self) {
    const Matrix& s = self.parents[0]->value;
    const Matrix& w = self.parents[1]->value;
    const std::size_t n = w.rows(), p = w.cols(), c = s.cols();
    Matrix* gs = gbuf(self, 0);
    Matrix* gw = gbuf(self, 1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < p; ++k) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          if (gs) (*gs)(i * p + k, j) += w(i, k) * self.grad(i, j);
          dot += s(i * p + k, j) * self.grad(i, j);
        }
        if (gw) (*gw)(i, k) += dot;
      }
  });
}

Var bce_with_logits(const Var& logits, const Matrix& targets) {
  if (!logits.value().same_shape(targets)) {
    throw ShapeError("bce_with_logits: " + logits.value().shape_str() + " vs " +
                     targets.shape_str());
  }
  const Matrix& x = logits.value();
  const double n = static_cast<double>(x.size());
  double acc = 0.0;
  // -[t log s(x) + (1-t) log(1-s(x))] = softplus(x) - t x
  for (std::size_t i = 0; i < x.size(); ++i) acc += softplus(x[i]) - targets[i] * x[i];
  return make(Matrix(1, 1, n > 0 ? acc / n : 0.0), {logits.shared()},
              [targets, n](Node& self) {
                const Matrix& x = self.parents[0]->value;
                if (Matrix* g = gbuf(self, 0))
                  for (std::size_t i = 0; i < x.size(); ++i)
                    (*g)[i] += self.grad[0] * (sigm(x[i]) - targets[i]) / n;
              });
}

Var dice_loss(const Var& logits, const Matrix& targets, double eps) {
  if (!logits.value().same_shape(targets)) {
    throw ShapeError("dice_loss: " + logits.value().shape_str() + " vs " + targets.shape_str());
  }
  const Matrix& x = logits.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<double> num(rows), den(rows);
  double acc = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    double pg = 0.0, ps = 0.0, gs = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double p = sigm(x(i, j));
      pg += p * targets(i, j);
      ps += p;
      gs += targets(i, j);
    }
    num[i] = 2.0 * pg + eps;
    den[i] = ps + gs + eps;
    acc += 1.0 - num[i] / den[i];
  }
  const double r = static_cast<double>(rows);
  return make(Matrix(1, 1, rows ? acc / r : 0.0), {logits.shared()},
              [targets, num = std::move(num), den = std::move(den), r](Node& self) {
                const Matrix& x = self.parents[0]->value;
                Matrix* g = gbuf(self, 0);
                if (!g) return;
                for (std::size_t i = 0; i < x.rows(); ++i)
                  for (std::size_t j = 0; j < x.cols(); ++j) {
                    const double p = sigm(x(i, j));
                    // d/dp of -(num/den) = -(2 g den - num) / den^2
                    const double dp = -(2.0 * targets(i, j) * den[i] - num[i]) / (den[i] * den[i]);
                    (*g)(i, j) += self.grad[0] * dp * p * (1.0 - p) / r;
                  }
              });
}

Var softmax_cross_entropy(const Var& logits, std::span<const std::size_t> targets) {
  if (targets.size() != logits.rows()) throw ShapeError("softmax_cross_entropy: target count");
  std::vector<std::size_t> t(targets.begin(), targets.end());
  const Matrix& x = logits.value();
  Matrix prob = x;
  double acc = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (t[i] >= x.cols()) throw ShapeError("softmax_cross_entropy: target out of range");
    auto r = prob.row(i);
    const double m = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double& v : r) z += (v = std::exp(v - m));
    for (double& v : r) v /= z;
    acc += -(x(i, t[i]) - m - std::log(z));
  }
  const double n = static_cast<double>(x.rows());
  return make(Matrix(1, 1, n > 0 ? acc / n : 0.0), {logits.shared()},
              [t = std::move(t), prob = std::move(prob), n](Node& self) {
                if (Matrix* g = gbuf(self, 0))
                  for (std::size_t i = 0; i < prob.rows(); ++i)
                    for (std::size_t j = 0; j < prob.cols(); ++j)
                      (*g)(i, j) += self.grad[0] * (prob(i, j) - (j == t[i] ? 1.0 : 0.0)) / n;
              });
}

}  // namespace maris::ag
