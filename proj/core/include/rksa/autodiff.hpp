#pragma once

// Matrix-valued reverse-mode automatic differentiation.
//
// Every value is a dense Eigen matrix held by a Node. Operations allocate a
// new Node that keeps its parents alive and a closure that pushes the node's
// gradient back into them. Parameters are leaf nodes owned by the model; the
// graph built during a forward pass is released when the last Var handle
// referring to it goes away.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "rksa/types.hpp"

namespace rksa::ad {

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g);
  Node& parent(std::size_t i) { return *parents[i]; }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double scalar() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Leaf without gradient tracking.
Var constant(Matrix value);
Var constant(double value);
/// Leaf that accumulates gradients (a trainable tensor).
Var parameter(Matrix value);

/// Disables graph construction on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates to every leaf.
void backward(const Var& root);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var divide(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// s * a where s is a 1x1 variable.
Var scale_by(const Var& a, const Var& s);
/// a + row broadcast over every row; row is 1 x cols(a).
Var add_row(const Var& a, const Var& row);
/// a ⊙ row broadcast over every row; row is 1 x cols(a).
Var mul_row(const Var& a, const Var& row);

// Elementwise nonlinearities.
Var softplus(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var log_sigmoid(const Var& a);
/// 1 / sqrt(1 + a^2), the sqrt(1 - delta^2) factor of the skew-normal.
Var inv_sqrt1p_square(const Var& a);
/// Clamp off-diagonal entries to [-bound, bound]; the diagonal passes through.
Var clamp_off_diagonal(const Var& a, double bound);

// Structure.
Var slice(const Var& a, Index row, Index col, Index rows, Index cols);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
/// Rows of `table` selected by `ids`; gradient scatter-adds into the table.
Var gather_rows(const Var& table, std::span<const Index> ids);
Var sum(const Var& a);

// Fused layers with hand-written backward passes.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps);
/// Row softmax restricted to entries where mask(i, j) is true; masked entries
/// get weight 0. Throws NumericalError when a row has no visible entry.
Var masked_softmax(const Var& z, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask);
/// Lower Cholesky factor of a symmetric positive definite matrix.
Var cholesky(const Var& a);
/// Divide every row by its L2 norm.
Var row_normalize(const Var& x);
/// g_ij / sqrt(g_ii g_jj) with an exact unit diagonal.
Var correlation_normalize(const Var& g);
/// Negative Plackett-Luce log-likelihood of `order` under row scores.
Var listmle(const Var& scores, std::span<const Index> order);

}  // namespace rksa::ad
