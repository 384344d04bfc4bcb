/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "vdg/autograd.hpp"

namespace vdg::nn {

using ag::Matrix;
using ag::Var;

// Seeded generator with library-independent draws, so runs reproduce across
// standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return engine_() % n; }
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

// Uniform in [-a, a], a = sqrt(6 / (fan_in + fan_out)).
Matrix xavier_uniform(int rows, int cols, Rng& rng);

// Base parameters belong to the pretrained-style backbone; Head parameters
// (soft token head, graph encoder) get their own learning rate.
enum class ParamGroup { Base, Head };

struct NamedParam {
  std::string name;
  Var var;
  ParamGroup group = ParamGroup::Base;
};

class ParamStore {
 public:
  Var add(const std::string& name, Matrix init, ParamGroup group);
  void adopt(const std::string& name, Var var, ParamGroup group);

  const std::vector<NamedParam>& params() const { return params_; }
  std::vector<NamedParam>& params() { return params_; }
  const NamedParam* find(const std::string& name) const;

  void zero_grad();
  double grad_norm() const;
  void scale_grads(double factor);
  size_t scalar_count() const;

  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& values);

 private:
  std::vector<NamedParam> params_;
};

/// Rescales all gradients so their global 2-norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(ParamStore& store, double max_norm);

class AdamW {
 public:
  struct Options {
    double base_lr = 1e-5;
    double head_lr = 1e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamW(ParamStore& store, Options options);
  void step();
  long steps() const { return step_; }

 private:
  ParamStore& store_;
  Options options_;
  std::vector<Matrix> m_, v_;
  long step_ = 0;
};

struct Linear {
  Var weight;  // (out x in)
  Var bias;    // (1 x out)

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out,
         ParamGroup group, Rng& rng);
  Var operator()(const Var& x) const { return ag::linear(x, weight, bias); }
};

struct LayerNorm {
  Var gain, shift;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, int dim, ParamGroup group);
  Var operator()(const Var& x) const { return ag::layer_norm_rows(x, gain, shift); }
};

struct MultiHeadAttention {
  Linear q, k, v, out;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, int dim,
                     int heads, ParamGroup group, Rng& rng);
  // Scaled dot-product attention; positions are added to queries and keys
  // only. `bias` (queries x keys) is added to every head's logits.
  Var operator()(const Var& query, const Var& key, const Var& value,
                 const Matrix* bias = nullptr) const;
};

struct FeedForward {
  Linear in, out;

  FeedForward() = default;
  FeedForward(ParamStore& store, const std::string& name, int dim, int hidden,
              ParamGroup group, Rng& rng);
  Var operator()(const Var& x) const { return out(ag::relu(in(x))); }
};

// Pre-norm transformer encoder layer.
struct EncoderLayer {
  LayerNorm norm1, norm2;
  MultiHeadAttention attn;
  FeedForward ff;

  EncoderLayer() = default;
  EncoderLayer(ParamStore& store, const std::string& name, int dim, int heads,
               int hidden, ParamGroup group, Rng& rng);
  Var operator()(const Var& x, const Var& pos) const;
};

// Pre-norm transformer decoder layer: self-attention over queries, then
// cross-attention into the encoded memory.
struct DecoderLayer {
  LayerNorm norm1, norm2, norm3;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ff;

  DecoderLayer() = default;
  DecoderLayer(ParamStore& store, const std::string& name, int dim, int heads,
               int hidden, ParamGroup group, Rng& rng);
  Var operator()(const Var& tgt, const Var& query_pos, const Var& memory,
                 const Var& memory_pos, const Matrix* cross_bias = nullptr) const;
};

}  // namespace vdg::nn
