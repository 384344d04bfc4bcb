/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "vdg/autograd.hpp"
#include "vdg/corefgraph.hpp"
#include "vdg/nn.hpp"

namespace vdg {

enum class Activation { ReLU, Identity, Tanh };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// One relational graph convolution:
///   x_i' = act( sum_r sum_{j in N_i^r} W_r x_j / |N_i^r|  +  W_0 x_i )
/// with r over the five message relations (self-loop excluded; W_0 plays
/// its role). Weights are (d_out x d_in).
struct RGCNLayer {
  int d_in = 0;
  int d_out = 0;
  std::array<ag::Var, kMessageRelations.size()> relation_weights;
  ag::Var self_weight;
  Activation activation = Activation::ReLU;
};

class RGCNStack {
 public:
  RGCNStack() = default;
  /// dims = {d_0, d_1, ..., d_L}; seeded uniform init in [-a, a] with
  /// a = sqrt(6 / (d_in + d_out)).
  RGCNStack(const std::vector<int>& dims, Activation activation, uint64_t seed);

  /// W_0 = identity, every W_r = 0. Each layer then maps x to act(x).
  static RGCNStack identity(int dim, int layers, Activation activation);

  const std::vector<RGCNLayer>& layers() const { return layers_; }
  std::vector<RGCNLayer>& layers() { return layers_; }
  bool empty() const { return layers_.empty(); }
  int input_dim() const;
  int output_dim() const;
  std::vector<ag::Var> parameters() const;

  /// Registers every weight under `prefix` in a parameter store.
  void register_params(nn::ParamStore& store, const std::string& prefix,
                       nn::ParamGroup group) const;

  static std::vector<std::string> tensor_names(int layers);

 private:
  std::vector<RGCNLayer> layers_;
};

/// Row-normalized adjacency of one relation: A(i, j) = 1 / |N_i^r| for each
/// edge j -> i. Built once per graph and reused by every layer.
struct GraphOperators {
  int node_count = 0;
  int word_count = 0;
  std::vector<std::pair<int, ag::Var>> adjacency;  // relation slot, matrix
  ag::Var node_init;  // (nodes x words): words copy, spans average

  explicit GraphOperators(const CorefGraph& graph);
};

ag::Var rgcn_layer_forward(const GraphOperators& ops, const ag::Var& x,
                           const RGCNLayer& layer);

ag::Var rgcn_stack_forward(const GraphOperators& ops, const ag::Var& x,
                           const RGCNStack& stack);

/// Word-node outputs of the last layer, in token order. Span nodes start
/// from the mean of their words and are dropped at the end.
ag::Var encode_sequence(const GraphOperators& ops, const ag::Var& word_vectors,
                        const RGCNStack& stack);

// Value-level entry points. Throw DimensionError on size mismatches.
Eigen::MatrixXd rgcn_layer_forward(const CorefGraph& graph,
                                   const Eigen::MatrixXd& node_feats,
                                   const RGCNLayer& layer);
Eigen::MatrixXd encode_sequence(const CorefGraph& graph,
                                const Eigen::MatrixXd& word_vectors,
                                const RGCNStack& stack);

/// Max relative error between backprop and central differences of
/// sum(stack(node_feats)) over every weight entry.
double finite_diff_gradcheck(const RGCNStack& stack, const CorefGraph& graph,
                             const Eigen::MatrixXd& node_feats, double eps);

void save_rgcn(const std::filesystem::path& path, const RGCNStack& stack,
               uint64_t seed);
RGCNStack load_rgcn(const std::filesystem::path& path, uint64_t* seed = nullptr);

}  // namespace vdg
