/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "vdg/corefgraph.hpp"
#include "vdg/corpus.hpp"
#include "vdg/nn.hpp"
#include "vdg/rgcn.hpp"

namespace vdg {

struct ModelConfig {
  int d_model = 64;
  int queries = 20;       // N
  int max_tokens = 64;    // L
  int text_layers = 2;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int heads = 4;
  int ffn_dim = 128;
  int align_dim = 64;
  int feature_channels = 8;
  int grid_height = 8;    // largest patch grid the positional tables cover
  int grid_width = 8;
  bool use_coref_graph = false;
  GraphVariant graph_variant = GraphVariant::Full;
  int rgcn_layers = 1;
  Activation rgcn_activation = Activation::ReLU;
  // "linear": one logit per absolute position from the query state.
  // "bilinear": position t scores <A q, B token_t>; no-object from a linear
  // read of q.
  std::string token_head = "bilinear";
  // Each query owns a fixed reference point on a grid over the image; the
  // box head predicts an offset from it in logit space.
  bool anchored_boxes = true;
  // Width of the Gaussian log-prior that keeps each query's cross-attention
  // near its reference point, in image fractions; 0 turns it off.
  double anchor_sigma = 0.1;
  // Log-prior those queries give every text key under the same scheme.
  double anchor_text_logit = -6.0;
  // Index 0 is the unknown-token entry.
  std::vector<std::string> vocab{"<unk>"};

  /// Throws PreconditionError naming the first bad field.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Sorted vocabulary of every token in the given datapoints, after "<unk>".
std::vector<std::string> build_vocab(const std::vector<DataPoint>& dps);

struct GroundingOutput {
  std::vector<NormBox> boxes;     // N
  Eigen::MatrixXd token_dists;    // N x (L + 1); column L is no-object
  Eigen::MatrixXd query_states;   // N x align_dim
  Eigen::MatrixXd token_states;   // n x align_dim, one row per real token
};

/// Differentiable view of the same forward pass.
struct GroundingVars {
  ag::Var boxes;            // N x 4, (cx, cy, w, h) in (0, 1)
  ag::Var token_log_probs;  // N x (L + 1)
  ag::Var query_states;
  ag::Var token_states;
  int token_count = 0;

  GroundingOutput values() const;
};

class Grounder {
 public:
  Grounder(ModelConfig config, uint64_t seed);
  // Parameters live behind shared nodes, so a copy would alias them.
  Grounder(const Grounder&) = delete;
  Grounder& operator=(const Grounder&) = delete;
  Grounder(Grounder&&) = default;
  Grounder& operator=(Grounder&&) = default;

  const ModelConfig& config() const { return config_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  RGCNStack& rgcn() { return rgcn_; }

  std::vector<int> encode_tokens(const std::vector<std::string>& tokens) const;

  /// `graph` is used only when the model was configured with a coref graph.
  /// Throws PreconditionError when the dialogue exceeds max_tokens and
  /// DimensionError when the feature grid does not fit the config.
  GroundingVars forward_graph(const DataPoint& dp, const CorefGraph* graph) const;
  GroundingOutput forward(const DataPoint& dp, const CorefGraph* graph) const;

  /// The graph this model expects for a datapoint, or nullopt when it runs
  /// without one.
  std::optional<CorefGraph> gold_graph(const DataPoint& dp) const;

  void save(const std::filesystem::path& path,
            const nlohmann::json& extra_meta = nlohmann::json::object()) const;
  static Grounder load(const std::filesystem::path& path,
                       nlohmann::json* meta_out = nullptr);

 private:
  ModelConfig config_;
  nn::ParamStore store_;
  std::unordered_map<std::string, int> token_index_;

  ag::Var token_embed_, text_pos_;
  std::vector<nn::EncoderLayer> text_layers_;
  RGCNStack rgcn_;
  nn::Linear text_proj_, patch_proj_;
  ag::Var row_embed_, col_embed_;
  std::vector<nn::EncoderLayer> encoder_;
  ag::Var query_embed_;
  std::vector<nn::DecoderLayer> decoder_;
  nn::LayerNorm encoder_norm_, decoder_norm_;
  Eigen::MatrixXd anchor_logits_;  // N x 4, zero unless anchored_boxes
  std::vector<double> anchor_x_, anchor_y_;
  nn::Linear box1_, box2_, box3_;
  nn::Linear token_head_;
  nn::Linear token_query_, token_key_;
  nn::Linear align_query_, align_token_;
};

struct RankedBox {
  int query = 0;
  NormBox box;
  double score = 0.0;
};

/// Queries ranked by their largest probability on the mention's tokens.
/// Ties keep ascending query order; at most `limit` entries.
std::vector<RankedBox> rank_boxes(const Mention& mention, const GroundingOutput& out,
                                  int limit = 10);

}  // namespace vdg
