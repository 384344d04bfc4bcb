/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "vdg/rgcn.hpp"

#include <map>

#include "vdg/error.hpp"
#include "vdg/weights_io.hpp"

namespace vdg {

const char* to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  for (auto a : {Activation::ReLU, Activation::Identity, Activation::Tanh}) {
    if (s == to_string(a)) return a;
  }
  throw PreconditionError("unknown activation '" + s + "'");
}

namespace {

int relation_slot(EdgeType type) {
  for (size_t i = 0; i < kMessageRelations.size(); ++i) {
    if (kMessageRelations[i] == type) return static_cast<int>(i);
  }
  return -1;
}

ag::Var activate(const ag::Var& x, Activation a) {
  switch (a) {
    case Activation::ReLU: return ag::relu(x);
    case Activation::Tanh: return ag::tanh(x);
    case Activation::Identity: break;
  }
  return x;
}

}  // namespace

RGCNStack::RGCNStack(const std::vector<int>& dims, Activation activation,
                     uint64_t seed) {
  nn::Rng rng(seed);
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    RGCNLayer layer;
    layer.d_in = dims[l];
    layer.d_out = dims[l + 1];
    layer.activation = activation;
    for (auto& w : layer.relation_weights) {
      w = ag::parameter(nn::xavier_uniform(layer.d_out, layer.d_in, rng));
    }
    layer.self_weight = ag::parameter(nn::xavier_uniform(layer.d_out, layer.d_in, rng));
    layers_.push_back(std::move(layer));
  }
}

RGCNStack RGCNStack::identity(int dim, int layers, Activation activation) {
  RGCNStack stack;
  for (int l = 0; l < layers; ++l) {
    RGCNLayer layer;
    layer.d_in = layer.d_out = dim;
    layer.activation = activation;
    for (auto& w : layer.relation_weights) {
      w = ag::parameter(Eigen::MatrixXd::Zero(dim, dim));
    }
    layer.self_weight = ag::parameter(Eigen::MatrixXd::Identity(dim, dim));
    stack.layers_.push_back(std::move(layer));
  }
  return stack;
}

int RGCNStack::input_dim() const { return layers_.empty() ? 0 : layers_.front().d_in; }
int RGCNStack::output_dim() const { return layers_.empty() ? 0 : layers_.back().d_out; }

std::vector<ag::Var> RGCNStack::parameters() const {
  std::vector<ag::Var> out;
  for (const auto& layer : layers_) {
    for (const auto& w : layer.relation_weights) out.push_back(w);
    out.push_back(layer.self_weight);
  }
  return out;
}

std::vector<std::string> RGCNStack::tensor_names(int layers) {
  std::vector<std::string> names;
  for (int l = 0; l < layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    for (EdgeType r : kMessageRelations) names.push_back(p + to_string(r));
    names.push_back(p + "self");
  }
  return names;
}

void RGCNStack::register_params(nn::ParamStore& store, const std::string& prefix,
                                nn::ParamGroup group) const {
  const auto names = tensor_names(static_cast<int>(layers_.size()));
  const auto params = parameters();
  for (size_t i = 0; i < params.size(); ++i) {
    store.adopt(prefix + names[i], params[i], group);
  }
}

GraphOperators::GraphOperators(const CorefGraph& graph)
    : node_count(graph.node_count()), word_count(graph.word_count) {
  std::map<int, std::vector<std::pair<int, int>>> by_slot;  // slot -> (dst, src)
  for (const auto& e : graph.edges) {
    const int slot = relation_slot(e.type);
    if (slot >= 0) by_slot[slot].push_back({e.dst, e.src});
  }
  for (auto& [slot, pairs] : by_slot) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(node_count, node_count);
    std::vector<int> degree(node_count, 0);
    for (auto [dst, src] : pairs) degree[dst]++;
    for (auto [dst, src] : pairs) a(dst, src) += 1.0 / degree[dst];
    adjacency.emplace_back(slot, ag::constant(std::move(a)));
  }
  Eigen::MatrixXd init = Eigen::MatrixXd::Zero(node_count, word_count);
  for (int i = 0; i < node_count; ++i) {
    const auto& n = graph.nodes[i];
    if (n.kind == GraphNode::Kind::Word) {
      init(i, n.token) = 1.0;
    } else {
      for (int w = n.span.start; w < n.span.end; ++w) {
        init(i, w) = 1.0 / n.span.length();
      }
    }
  }
  node_init = ag::constant(std::move(init));
}

ag::Var rgcn_layer_forward(const GraphOperators& ops, const ag::Var& x,
                           const RGCNLayer& layer) {
  if (x.rows() != ops.node_count) {
    throw DimensionError("rgcn: got " + std::to_string(x.rows()) +
                         " node rows for a graph of " +
                         std::to_string(ops.node_count) + " nodes");
  }
  if (x.cols() != layer.d_in) {
    throw DimensionError("rgcn: feature dim " + std::to_string(x.cols()) +
                         " != layer input dim " + std::to_string(layer.d_in));
  }
  ag::Var acc = ag::linear(x, layer.self_weight);
  for (const auto& [slot, adj] : ops.adjacency) {
    acc = ag::add(acc, ag::linear(ag::matmul(adj, x), layer.relation_weights[slot]));
  }
  return activate(acc, layer.activation);
}

ag::Var rgcn_stack_forward(const GraphOperators& ops, const ag::Var& x,
                           const RGCNStack& stack) {
  ag::Var h = x;
  for (const auto& layer : stack.layers()) h = rgcn_layer_forward(ops, h, layer);
  return h;
}

ag::Var encode_sequence(const GraphOperators& ops, const ag::Var& word_vectors,
                        const RGCNStack& stack) {
  if (word_vectors.rows() != ops.word_count) {
    throw DimensionError("encode_sequence: " + std::to_string(word_vectors.rows()) +
                         " word vectors for " + std::to_string(ops.word_count) +
                         " words");
  }
  if (stack.empty()) return word_vectors;
  const ag::Var nodes = ag::matmul(ops.node_init, word_vectors);
  return ag::slice_rows(rgcn_stack_forward(ops, nodes, stack), 0, ops.word_count);
}

Eigen::MatrixXd rgcn_layer_forward(const CorefGraph& graph,
                                   const Eigen::MatrixXd& node_feats,
                                   const RGCNLayer& layer) {
  GraphOperators ops(graph);
  return rgcn_layer_forward(ops, ag::constant(node_feats), layer).value();
}

Eigen::MatrixXd encode_sequence(const CorefGraph& graph,
                                const Eigen::MatrixXd& word_vectors,
                                const RGCNStack& stack) {
  GraphOperators ops(graph);
  return encode_sequence(ops, ag::constant(word_vectors), stack).value();
}

double finite_diff_gradcheck(const RGCNStack& stack, const CorefGraph& graph,
                             const Eigen::MatrixXd& node_feats, double eps) {
  GraphOperators ops(graph);
  const ag::Var x = ag::constant(node_feats);
  auto params = stack.parameters();
  const auto check = ag::gradcheck(
      [&] { return ag::sum(rgcn_stack_forward(ops, x, stack)); }, params, eps);
  return check.max_rel_error;
}

void save_rgcn(const std::filesystem::path& path, const RGCNStack& stack,
               uint64_t seed) {
  WeightFile file;
  nlohmann::json dims = nlohmann::json::array();
  if (!stack.empty()) dims.push_back(stack.input_dim());
  for (const auto& l : stack.layers()) dims.push_back(l.d_out);
  nlohmann::json relations = nlohmann::json::array();
  for (EdgeType r : kMessageRelations) relations.push_back(to_string(r));
  file.meta = {{"kind", "rgcn"},
               {"dims", dims},
               {"relation_order", relations},
               {"seed", seed},
               {"activation", stack.empty() ? "relu"
                                            : to_string(stack.layers()[0].activation)}};
  const auto names = RGCNStack::tensor_names(static_cast<int>(stack.layers().size()));
  const auto params = stack.parameters();
  for (size_t i = 0; i < params.size(); ++i) {
    file.tensors.emplace_back(names[i], params[i].value());
  }
  write_weights(path, file);
}

RGCNStack load_rgcn(const std::filesystem::path& path, uint64_t* seed) {
  const WeightFile file = read_weights(path);
  if (file.meta.value("kind", "") != "rgcn") {
    throw ValidationError(path.string() + ": not an R-GCN checkpoint");
  }
  const auto dims = file.meta.at("dims").get<std::vector<int>>();
  const auto act = activation_from_string(file.meta.value("activation", "relu"));
  RGCNStack stack(dims, act, 0);
  const auto names = RGCNStack::tensor_names(static_cast<int>(stack.layers().size()));
  auto params = stack.parameters();
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& m = file.tensor(names[i]);
    if (m.rows() != params[i].rows() || m.cols() != params[i].cols()) {
      throw ValidationError(path.string() + ": shape mismatch for " + names[i]);
    }
    params[i].mutable_value() = m;
  }
  if (seed != nullptr) *seed = file.meta.value("seed", uint64_t{0});
  return stack;
}

}  // namespace vdg
