/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "vdg/nn.hpp"

#include <cmath>

#include "vdg/error.hpp"

namespace vdg::nn {

Matrix xavier_uniform(int rows, int cols, Rng& rng) {
  const double a = std::sqrt(6.0 / (rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-a, a);
  return m;
}

Var ParamStore::add(const std::string& name, Matrix init, ParamGroup group) {
  Var v = ag::parameter(std::move(init));
  adopt(name, v, group);
  return v;
}

void ParamStore::adopt(const std::string& name, Var var, ParamGroup group) {
  if (find(name) != nullptr) throw PreconditionError("duplicate parameter " + name);
  params_.push_back({name, std::move(var), group});
}

const NamedParam* ParamStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

double ParamStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) {
    if (p.var.grad().size() != 0) sq += p.var.grad().squaredNorm();
  }
  return std::sqrt(sq);
}

void ParamStore::scale_grads(double factor) {
  for (auto& p : params_) {
    if (p.var.grad().size() != 0) p.var.node()->grad *= factor;
  }
}

size_t ParamStore::scalar_count() const {
  size_t n = 0;
  for (const auto& p : params_) n += static_cast<size_t>(p.var.value().size());
  return n;
}

std::vector<Matrix> ParamStore::snapshot() const {
  std::vector<Matrix> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.var.value());
  return out;
}

void ParamStore::restore(const std::vector<Matrix>& values) {
  if (values.size() != params_.size()) {
    throw DimensionError("restore: parameter count mismatch");
  }
  for (size_t i = 0; i < values.size(); ++i) {
    Matrix& dst = params_[i].var.mutable_value();
    if (dst.rows() != values[i].rows() || dst.cols() != values[i].cols()) {
      throw DimensionError("restore: shape mismatch for " + params_[i].name);
    }
    dst = values[i];
  }
}

double clip_grad_norm(ParamStore& store, double max_norm) {
  const double norm = store.grad_norm();
  if (norm > max_norm) store.scale_grads(max_norm / norm);
  return norm;
}

AdamW::AdamW(ParamStore& store, Options options)
    : store_(store), options_(options) {
  for (const auto& p : store_.params()) {
    m_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
    v_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
  }
}

void AdamW::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(options_.beta1, step_);
  const double bc2 = 1.0 - std::pow(options_.beta2, step_);
  auto& params = store_.params();
  for (size_t i = 0; i < params.size(); ++i) {
    Var& var = params[i].var;
    const double lr = params[i].group == ParamGroup::Head ? options_.head_lr
                                                          : options_.base_lr;
    Matrix& w = var.mutable_value();
    w *= 1.0 - lr * options_.weight_decay;
    if (var.grad().size() == 0) continue;
    const Matrix& g = var.grad();
    m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * g;
    v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * g.cwiseAbs2();
    w.array() -= lr * (m_[i].array() / bc1) /
                 ((v_[i].array() / bc2).sqrt() + options_.eps);
  }
}

Linear::Linear(ParamStore& store, const std::string& name, int in, int out,
               ParamGroup group, Rng& rng) {
  weight = store.add(name + ".weight", xavier_uniform(out, in, rng), group);
  bias = store.add(name + ".bias", Matrix::Zero(1, out), group);
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, int dim,
                     ParamGroup group) {
  gain = store.add(name + ".gain", Matrix::Ones(1, dim), group);
  shift = store.add(name + ".shift", Matrix::Zero(1, dim), group);
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name,
                                       int dim, int heads_, ParamGroup group,
                                       Rng& rng)
    : q(store, name + ".q", dim, dim, group, rng),
      k(store, name + ".k", dim, dim, group, rng),
      v(store, name + ".v", dim, dim, group, rng),
      out(store, name + ".out", dim, dim, group, rng),
      heads(heads_) {
  if (heads <= 0 || dim % heads != 0) {
    throw PreconditionError("attention dim must be divisible by head count");
  }
}

Var MultiHeadAttention::operator()(const Var& query, const Var& key,
                                   const Var& value, const Matrix* bias) const {
  const Var qs = q(query), ks = k(key), vs = v(value);
  const auto dim = qs.cols();
  const auto head_dim = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  if (bias != nullptr && (bias->rows() != qs.rows() || bias->cols() != ks.rows())) {
    throw DimensionError("attention bias shape does not match queries x keys");
  }
  const Var bias_var = bias != nullptr ? ag::constant(*bias) : Var();
  std::vector<Var> per_head;
  per_head.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const Var qh = ag::slice_cols(qs, h * head_dim, head_dim);
    const Var kh = ag::slice_cols(ks, h * head_dim, head_dim);
    const Var vh = ag::slice_cols(vs, h * head_dim, head_dim);
    Var logits = ag::scale(ag::matmul_nt(qh, kh), scale);
    if (bias_var.defined()) logits = ag::add(logits, bias_var);
    const Var weights = ag::softmax_rows(logits);
    per_head.push_back(ag::matmul(weights, vh));
  }
  return out(heads == 1 ? per_head[0] : ag::concat_cols(per_head));
}

FeedForward::FeedForward(ParamStore& store, const std::string& name, int dim,
                         int hidden, ParamGroup group, Rng& rng)
    : in(store, name + ".in", dim, hidden, group, rng),
      out(store, name + ".out", hidden, dim, group, rng) {}

EncoderLayer::EncoderLayer(ParamStore& store, const std::string& name, int dim,
                           int heads, int hidden, ParamGroup group, Rng& rng)
    : norm1(store, name + ".norm1", dim, group),
      norm2(store, name + ".norm2", dim, group),
      attn(store, name + ".attn", dim, heads, group, rng),
      ff(store, name + ".ff", dim, hidden, group, rng) {}

Var EncoderLayer::operator()(const Var& x, const Var& pos) const {
  const Var h = norm1(x);
  const Var qk = pos.defined() ? ag::add(h, pos) : h;
  const Var x1 = ag::add(x, attn(qk, qk, h));
  return ag::add(x1, ff(norm2(x1)));
}

DecoderLayer::DecoderLayer(ParamStore& store, const std::string& name, int dim,
                           int heads, int hidden, ParamGroup group, Rng& rng)
    : norm1(store, name + ".norm1", dim, group),
      norm2(store, name + ".norm2", dim, group),
      norm3(store, name + ".norm3", dim, group),
      self_attn(store, name + ".self_attn", dim, heads, group, rng),
      cross_attn(store, name + ".cross_attn", dim, heads, group, rng),
      ff(store, name + ".ff", dim, hidden, group, rng) {}

Var DecoderLayer::operator()(const Var& tgt, const Var& query_pos,
                             const Var& memory, const Var& memory_pos,
                             const Matrix* cross_bias) const {
  const Var h1 = norm1(tgt);
  const Var qk1 = ag::add(h1, query_pos);
  const Var t1 = ag::add(tgt, self_attn(qk1, qk1, h1));
  const Var h2 = norm2(t1);
  const Var mem_k = memory_pos.defined() ? ag::add(memory, memory_pos) : memory;
  const Var t2 = ag::add(t1, cross_attn(ag::add(h2, query_pos), mem_k, memory, cross_bias));
  return ag::add(t2, ff(norm3(t2)));
}

}  // namespace vdg::nn
