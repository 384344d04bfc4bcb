/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "vdg/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "vdg/error.hpp"

namespace vdg::ag {

namespace {

using Fn = std::function<void(Node&)>;

Var make(Matrix value, std::vector<Var> inputs, Fn backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.ptr());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

Node& in(Node& self, size_t i) { return *self.inputs[i]; }

}  // namespace

double Var::item() const {
  if (node_->value.size() != 1) throw DimensionError("item() on a non-scalar");
  return node_->value(0, 0);
}

Matrix Var::grad_or_zero() const {
  if (node_->grad.size() == 0) {
    return Matrix::Zero(node_->value.rows(), node_->value.cols());
  }
  return node_->grad;
}

void Var::backward() const {
  if (node_->value.size() != 1) {
    throw DimensionError("backward() needs a scalar root");
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
  // Interior gradients are not needed after the pass.
  for (Node* n : order) {
    if (n->backward) n->grad.resize(0, 0);
  }
}

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
  return make(a.value() * b.value(), {a, b}, [](Node& s) {
    in(s, 0).accumulate(s.grad * in(s, 1).value.transpose());
    in(s, 1).accumulate(in(s, 0).value.transpose() * s.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw DimensionError("matmul_nt: inner dimensions differ");
  return make(a.value() * b.value().transpose(), {a, b}, [](Node& s) {
    in(s, 0).accumulate(s.grad * in(s, 1).value);
    in(s, 1).accumulate(s.grad.transpose() * in(s, 0).value);
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  if (x.cols() != weight.cols()) {
    throw DimensionError("linear: input has " + std::to_string(x.cols()) +
                         " features, weight expects " +
                         std::to_string(weight.cols()));
  }
  Matrix y = x.value() * weight.value().transpose();
  if (!bias.defined()) {
    return make(std::move(y), {x, weight}, [](Node& s) {
      in(s, 0).accumulate(s.grad * in(s, 1).value);
      in(s, 1).accumulate(s.grad.transpose() * in(s, 0).value);
    });
  }
  if (bias.rows() != 1 || bias.cols() != weight.rows()) {
    throw DimensionError("linear: bias shape mismatch");
  }
  y.rowwise() += bias.value().row(0);
  return make(std::move(y), {x, weight, bias}, [](Node& s) {
    in(s, 0).accumulate(s.grad * in(s, 1).value);
    in(s, 1).accumulate(s.grad.transpose() * in(s, 0).value);
    in(s, 2).accumulate(s.grad.colwise().sum());
  });
}

Var transpose(const Var& a) {
  return make(a.value().transpose(), {a},
              [](Node& s) { in(s, 0).accumulate(s.grad.transpose()); });
}

Var add(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  return make(a.value() + b.value(), {a, b}, [](Node& s) {
    in(s, 0).accumulate(s.grad);
    in(s, 1).accumulate(s.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  return make(a.value() - b.value(), {a, b}, [](Node& s) {
    in(s, 0).accumulate(s.grad);
    in(s, 1).accumulate(-s.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  same_shape(a, b, "mul");
  return make(a.value().cwiseProduct(b.value()), {a, b}, [](Node& s) {
    in(s, 0).accumulate(s.grad.cwiseProduct(in(s, 1).value));
    in(s, 1).accumulate(s.grad.cwiseProduct(in(s, 0).value));
  });
}

Var div(const Var& a, const Var& b) {
  same_shape(a, b, "div");
  return make(a.value().cwiseQuotient(b.value()), {a, b}, [](Node& s) {
    const Matrix& bv = in(s, 1).value;
    in(s, 0).accumulate(s.grad.cwiseQuotient(bv));
    in(s, 1).accumulate(-s.grad.cwiseProduct(s.value).cwiseQuotient(bv));
  });
}

Var scale(const Var& a, double k) {
  return make(a.value() * k, {a}, [k](Node& s) { in(s, 0).accumulate(s.grad * k); });
}

Var add_scalar(const Var& a, double k) {
  return make((a.value().array() + k).matrix(), {a},
              [](Node& s) { in(s, 0).accumulate(s.grad); });
}

Var minimum(const Var& a, const Var& b) {
  same_shape(a, b, "minimum");
  return make(a.value().cwiseMin(b.value()), {a, b}, [](Node& s) {
    const auto pick_a = (in(s, 0).value.array() <= in(s, 1).value.array());
    in(s, 0).accumulate(pick_a.select(s.grad.array(), 0.0).matrix());
    in(s, 1).accumulate(pick_a.select(0.0, s.grad.array()).matrix());
  });
}

Var maximum(const Var& a, const Var& b) {
  same_shape(a, b, "maximum");
  return make(a.value().cwiseMax(b.value()), {a, b}, [](Node& s) {
    const auto pick_a = (in(s, 0).value.array() >= in(s, 1).value.array());
    in(s, 0).accumulate(pick_a.select(s.grad.array(), 0.0).matrix());
    in(s, 1).accumulate(pick_a.select(0.0, s.grad.array()).matrix());
  });
}

Var clamp_min(const Var& a, double lo) {
  return make(a.value().cwiseMax(lo), {a}, [lo](Node& s) {
    in(s, 0).accumulate((in(s, 0).value.array() > lo).select(s.grad.array(), 0.0).matrix());
  });
}

Var abs(const Var& a) {
  return make(a.value().cwiseAbs(), {a}, [](Node& s) {
    in(s, 0).accumulate(s.grad.cwiseProduct(
        Matrix(in(s, 0).value.unaryExpr([](double v) {
          return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
        }))));
  });
}

Var relu(const Var& a) {
  return make(a.value().cwiseMax(0.0), {a}, [](Node& s) {
    in(s, 0).accumulate((in(s, 0).value.array() > 0).select(s.grad.array(), 0.0).matrix());
  });
}

Var sigmoid(const Var& a) {
  Matrix y = a.value().unaryExpr([](double v) {
    return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  });
  return make(std::move(y), {a}, [](Node& s) {
    in(s, 0).accumulate(
        s.grad.cwiseProduct(s.value.cwiseProduct((1.0 - s.value.array()).matrix())));
  });
}

Var tanh(const Var& a) {
  return make(a.value().array().tanh().matrix(), {a}, [](Node& s) {
    in(s, 0).accumulate(
        s.grad.cwiseProduct((1.0 - s.value.array().square()).matrix()));
  });
}

Var exp(const Var& a) {
  return make(a.value().array().exp().matrix(), {a}, [](Node& s) {
    in(s, 0).accumulate(s.grad.cwiseProduct(s.value));
  });
}

Var log_clamped(const Var& a, double eps) {
  return make(a.value().cwiseMax(eps).array().log().matrix(), {a}, [eps](Node& s) {
    const Matrix& x = in(s, 0).value;
    in(s, 0).accumulate(
        (x.array() >= eps).select(s.grad.array() / x.array().max(eps), 0.0).matrix());
  });
}

Var softmax_rows(const Var& a) {
  Matrix y = a.value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return make(std::move(y), {a}, [](Node& s) {
    const Matrix& p = s.value;
    const Eigen::VectorXd dot = s.grad.cwiseProduct(p).rowwise().sum();
    in(s, 0).accumulate(p.cwiseProduct((s.grad.colwise() - dot)));
  });
}

Var log_softmax_rows(const Var& a) {
  Matrix y = a.value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).maxCoeff();
    const double lse = m + std::log((y.row(r).array() - m).exp().sum());
    y.row(r).array() -= lse;
  }
  return make(std::move(y), {a}, [](Node& s) {
    const Matrix p = s.value.array().exp().matrix();
    const Eigen::VectorXd gsum = s.grad.rowwise().sum();
    in(s, 0).accumulate(s.grad - p.cwiseProduct(gsum.replicate(1, p.cols())));
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index n = x.rows(), d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 ||
      beta.cols() != d) {
    throw DimensionError("layer_norm_rows: gain/bias shape mismatch");
  }
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mu) * inv_std(r);
  }
  Matrix y = xhat;
  y.array().rowwise() *= gamma.value().row(0).array();
  y.rowwise() += beta.value().row(0);
  return make(std::move(y), {x, gamma, beta},
              [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& s) {
                const Eigen::Index d = xhat.cols();
                Matrix dxhat = s.grad;
                dxhat.array().rowwise() *= in(s, 1).value.row(0).array();
                const Eigen::VectorXd m1 = dxhat.rowwise().mean();
                const Eigen::VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
                Matrix dx = dxhat;
                dx.colwise() -= m1;
                dx -= xhat.cwiseProduct(m2.replicate(1, d));
                dx.array().colwise() *= inv_std.array();
                in(s, 0).accumulate(dx);
                in(s, 1).accumulate(s.grad.cwiseProduct(xhat).colwise().sum());
                in(s, 2).accumulate(s.grad.colwise().sum());
              });
}

Var l2_normalize_rows(const Var& a, double eps) {
  const Eigen::VectorXd norms =
      (a.value().rowwise().squaredNorm().array() + eps).sqrt().matrix();
  Matrix y = a.value();
  y.array().colwise() /= norms.array();
  return make(std::move(y), {a}, [norms](Node& s) {
    const Eigen::VectorXd dot = s.grad.cwiseProduct(s.value).rowwise().sum();
    Matrix dx = s.grad - s.value.cwiseProduct(dot.replicate(1, s.value.cols()));
    dx.array().colwise() /= norms.array();
    in(s, 0).accumulate(dx);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw PreconditionError("concat_rows of nothing");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix y(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    y.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make(std::move(y), parts, [offsets](Node& s) {
    for (size_t i = 0; i < s.inputs.size(); ++i) {
      Node& n = *s.inputs[i];
      n.accumulate(s.grad.middleRows(offsets[i], n.value.rows()));
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw PreconditionError("concat_cols of nothing");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts[0].rows();
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix y(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    y.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make(std::move(y), parts, [offsets](Node& s) {
    for (size_t i = 0; i < s.inputs.size(); ++i) {
      Node& n = *s.inputs[i];
      n.accumulate(s.grad.middleCols(offsets[i], n.value.cols()));
    }
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw DimensionError("slice_rows out of range");
  }
  return make(a.value().middleRows(start, count), {a}, [start](Node& s) {
    Node& src = in(s, 0);
    Matrix g = Matrix::Zero(src.value.rows(), src.value.cols());
    g.middleRows(start, s.grad.rows()) = s.grad;
    src.accumulate(g);
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw DimensionError("slice_cols out of range");
  }
  return make(a.value().middleCols(start, count), {a}, [start](Node& s) {
    Node& src = in(s, 0);
    Matrix g = Matrix::Zero(src.value.rows(), src.value.cols());
    g.middleCols(start, s.grad.cols()) = s.grad;
    src.accumulate(g);
  });
}

Var gather_rows(const Var& table, std::vector<int> rows) {
  Matrix y(static_cast<Eigen::Index>(rows.size()), table.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= table.rows()) {
      throw DimensionError("gather_rows index out of range");
    }
    y.row(static_cast<Eigen::Index>(i)) = table.value().row(rows[i]);
  }
  return make(std::move(y), {table}, [rows = std::move(rows)](Node& s) {
    Node& src = in(s, 0);
    Matrix g = Matrix::Zero(src.value.rows(), src.value.cols());
    for (size_t i = 0; i < rows.size(); ++i) {
      g.row(rows[i]) += s.grad.row(static_cast<Eigen::Index>(i));
    }
    src.accumulate(g);
  });
}

Var sum(const Var& a) {
  return make(Matrix::Constant(1, 1, a.value().sum()), {a}, [](Node& s) {
    Node& src = in(s, 0);
    src.accumulate(Matrix::Constant(src.value.rows(), src.value.cols(), s.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return make(Matrix::Constant(1, 1, a.value().sum() / n), {a}, [n](Node& s) {
    Node& src = in(s, 0);
    src.accumulate(
        Matrix::Constant(src.value.rows(), src.value.cols(), s.grad(0, 0) / n));
  });
}

// ---------------------------------------------------------------------------

GradCheck gradcheck(const std::function<Var()>& loss, std::span<Var> params,
                    double eps, double floor) {
  for (auto& p : params) p.zero_grad();
  loss().backward();
  std::vector<Matrix> analytic;
  for (auto& p : params) analytic.push_back(p.grad_or_zero());

  GradCheck result;
  for (size_t i = 0; i < params.size(); ++i) {
    Matrix& w = params[i].mutable_value();
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      const double orig = w.data()[k];
      w.data()[k] = orig + eps;
      const double plus = loss().item();
      w.data()[k] = orig - eps;
      const double minus = loss().item();
      w.data()[k] = orig;
      const double numeric = (plus - minus) / (2 * eps);
      const double a = analytic[i].data()[k];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      result.max_rel_error = std::max(result.max_rel_error, abs_err / denom);
      ++result.entries;
    }
  }
  for (auto& p : params) p.zero_grad();
  return result;
}

}  // namespace vdg::ag
