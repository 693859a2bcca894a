#pragma once

// Minimal reverse-mode automatic differentiation over 2-D float64 matrices.
//
// Every op builds a node holding its forward value and a closure that
// pushes the node's gradient into its parents. backward() runs the closures
// in reverse topological order. Graphs are rebuilt on every forward pass.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maris/tensor.hpp"

namespace maris::ag {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty() && !value.empty()) grad = Matrix(value.rows(), value.cols());
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value[0]; }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }
  bool valid() const { return static_cast<bool>(node_); }

  void zero_grad();

 private:
  std::shared_ptr<Node> node_;
};

/// Leaf holding trainable values.
Var parameter(Matrix value);
/// Leaf that never receives gradient.
Var constant(Matrix value);

/// Accumulates d(root)/d(node) into every reachable node that requires grad.
/// `root` must be 1x1.
void backward(const Var& root);

// Linear algebra
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a (m x n) + b (1 x n) broadcast over rows.
Var add_row(const Var& a, const Var& b);
/// a * s where s is 1x1.
Var mul_scalar(const Var& a, const Var& s);
/// a + s where s is 1x1.
Var add_scalar(const Var& a, const Var& s);
Var linear(const Var& x, const Var& w, const Var& b);

// Elementwise nonlinearities
Var sigmoid(const Var& a);
Var silu(const Var& a);
Var exp(const Var& a);

// Shape and indexing
Var concat_cols(const Var& a, const Var& b);
Var reshape(const Var& a, std::size_t rows, std::size_t cols);
Var select_rows(const Var& a, std::span<const std::size_t> rows);

// Reductions
Var sum_all(const Var& a);
Var mean_all(const Var& a);
/// Per-row sum: (m x n) -> (m x 1).
Var sum_rows(const Var& a);
/// a (m x n) / s (m x 1) row-wise.
Var div_rows(const Var& a, const Var& s);
Var softmax_rows(const Var& a);
/// Row-wise L2 normalization with x / sqrt(|x|^2 + eps).
Var normalize_rows(const Var& a, double eps = 1e-12);

// Sampling
/// Bilinear sampling of a (height*width) x C value map at continuous pixel
/// coordinates `locs` (N x 2, columns x then y, pixel centres at integers).
/// Samples outside the map read zeros.
Var bilinear_sample(const Var& values, std::size_t height, std::size_t width, const Var& locs);
/// out[n] = sum_p w[n,p] * s[n*P + p], with s (N*P x C) and w (N x P).
Var weighted_group_sum(const Var& samples, const Var& weights);

// Losses
/// Mean binary cross-entropy of sigmoid(logits) against constant targets.
Var bce_with_logits(const Var& logits, const Matrix& targets);
/// Mean over rows of 1 - (2 sum p g + eps) / (sum p + sum g + eps), p = sigmoid(logits).
Var dice_loss(const Var& logits, const Matrix& targets, double eps);
/// Mean softmax cross-entropy with integer row targets.
Var softmax_cross_entropy(const Var& logits, std::span<const std::size_t> targets);

}  // namespace maris::ag
