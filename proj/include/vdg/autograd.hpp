/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
//
// Every op returns a Var that owns its value and, when any input requires a
// gradient, a closure that pushes its output gradient back to the inputs.
// Leaves created with parameter() keep accumulating gradients across
// backward() calls until zero_grad().

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace vdg::ag {

using Matrix = Eigen::MatrixXd;

struct Node {
  Matrix value;
  Matrix grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  template <class Expr>
  void accumulate(const Expr& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  // Direct access for optimizers and finite differences.
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const;

  void zero_grad() { node_->grad.resize(0, 0); }
  // Gradient as a full matrix (zeros when nothing flowed in).
  Matrix grad_or_zero() const;

  // Seeds d(this)/d(this) = 1 for a 1x1 value and propagates.
  void backward() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Matrix value);
Var parameter(Matrix value);
Var scalar(double v);

// Linear algebra
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
// x * W^T + b, with W stored (out x in) and b (1 x out) optional.
Var linear(const Var& x, const Var& weight, const Var& bias = Var());
Var transpose(const Var& a);

// Elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var minimum(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);
Var clamp_min(const Var& a, double lo);
Var abs(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
// log(max(a, eps)); no gradient where a < eps.
Var log_clamped(const Var& a, double eps = 1e-12);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

// Row-wise
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                    double eps = 1e-5);
Var l2_normalize_rows(const Var& a, double eps = 1e-12);

// Shape
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& table, std::vector<int> rows);

// Reductions to 1x1
Var sum(const Var& a);
Var mean(const Var& a);

/// Central-difference check of d(loss)/d(params). `loss` is re-evaluated
/// for every perturbed entry. Returns the largest relative error
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
struct GradCheck {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  size_t entries = 0;
};
GradCheck gradcheck(const std::function<Var()>& loss, std::span<Var> params,
                    double eps, double floor = 1e-6);

}  // namespace vdg::ag
