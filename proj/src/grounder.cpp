/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "vdg/grounder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "vdg/error.hpp"
#include "vdg/weights_io.hpp"

namespace vdg {

namespace {

constexpr double kMaskedLogit = -1e30;

// Sine/cosine code of coordinates in [0, 1]; fills columns [offset, offset + width).
Eigen::MatrixXd sine_code(const std::vector<double>& coords, int d, int offset, int width) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(coords.size()), d);
  const int pairs = width / 2;
  for (size_t r = 0; r < coords.size(); ++r) {
    for (int i = 0; i < pairs; ++i) {
      const double freq = std::pow(100.0, -static_cast<double>(i) / std::max(pairs, 1));
      const double a = 2.0 * M_PI * coords[r] * freq;
      m(static_cast<Eigen::Index>(r), offset + 2 * i) = std::sin(a);
      m(static_cast<Eigen::Index>(r), offset + 2 * i + 1) = std::cos(a);
    }
  }
  return m;
}

std::vector<double> cell_centres(int n) {
  std::vector<double> c(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) c[static_cast<size_t>(i)] = (i + 0.5) / n;
  return c;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

void require(bool ok, const std::string& what) {
  if (!ok) throw PreconditionError("model config: " + what);
}

}  // namespace

void ModelConfig::validate() const {
  require(d_model >= 1, "d_model must be positive");
  require(queries >= 1, "query count must be positive");
  require(max_tokens >= 1, "max_tokens must be positive");
  require(heads >= 1 && d_model % heads == 0, "d_model must be divisible by heads");
  require(text_layers >= 0 && encoder_layers >= 0 && decoder_layers >= 1,
          "layer counts out of range");
  require(ffn_dim >= 1 && align_dim >= 1, "hidden sizes must be positive");
  require(feature_channels >= 1, "feature_channels must be positive");
  require(grid_height >= 1 && grid_width >= 1, "grid size must be positive");
  require(rgcn_layers >= 0, "rgcn_layers must be non-negative");
  require(!vocab.empty() && vocab[0] == "<unk>", "vocab must start with <unk>");
  require(anchor_sigma >= 0.0, "anchor_sigma must be non-negative");
  require(token_head == "linear" || token_head == "bilinear",
          "token_head must be linear or bilinear");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d_model", d_model},
          {"queries", queries},
          {"max_tokens", max_tokens},
          {"text_layers", text_layers},
          {"encoder_layers", encoder_layers},
          {"decoder_layers", decoder_layers},
          {"heads", heads},
          {"ffn_dim", ffn_dim},
          {"align_dim", align_dim},
          {"feature_channels", feature_channels},
          {"grid_height", grid_height},
          {"grid_width", grid_width},
          {"use_coref_graph", use_coref_graph},
          {"graph_variant", to_string(graph_variant)},
          {"rgcn_layers", rgcn_layers},
          {"rgcn_activation", to_string(rgcn_activation)},
          {"token_head", token_head},
          {"anchored_boxes", anchored_boxes},
          {"anchor_sigma", anchor_sigma},
          {"anchor_text_logit", anchor_text_logit},
          {"vocab", vocab}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.queries = j.value("queries", c.queries);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.text_layers = j.value("text_layers", c.text_layers);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.heads = j.value("heads", c.heads);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.align_dim = j.value("align_dim", c.align_dim);
  c.feature_channels = j.value("feature_channels", c.feature_channels);
  c.grid_height = j.value("grid_height", c.grid_height);
  c.grid_width = j.value("grid_width", c.grid_width);
  c.use_coref_graph = j.value("use_coref_graph", c.use_coref_graph);
  c.graph_variant = graph_variant_from_string(
      j.value("graph_variant", std::string(to_string(c.graph_variant))));
  c.rgcn_layers = j.value("rgcn_layers", c.rgcn_layers);
  c.rgcn_activation = activation_from_string(
      j.value("rgcn_activation", std::string(to_string(c.rgcn_activation))));
  c.token_head = j.value("token_head", c.token_head);
  c.anchored_boxes = j.value("anchored_boxes", c.anchored_boxes);
  c.anchor_sigma = j.value("anchor_sigma", c.anchor_sigma);
  c.anchor_text_logit = j.value("anchor_text_logit", c.anchor_text_logit);
  if (j.contains("vocab")) c.vocab = j.at("vocab").get<std::vector<std::string>>();
  c.validate();
  return c;
}

std::vector<std::string> build_vocab(const std::vector<DataPoint>& dps) {
  std::set<std::string> words;
  for (const auto& dp : dps) {
    for (const auto& t : dp.dialogue.tokens()) words.insert(t);
  }
  words.erase("<unk>");
  std::vector<std::string> vocab{"<unk>"};
  vocab.insert(vocab.end(), words.begin(), words.end());
  return vocab;
}

GroundingOutput GroundingVars::values() const {
  GroundingOutput out;
  const Eigen::MatrixXd& b = boxes.value();
  out.boxes.reserve(static_cast<size_t>(b.rows()));
  for (Eigen::Index q = 0; q < b.rows(); ++q) {
    out.boxes.push_back({b(q, 0), b(q, 1), b(q, 2), b(q, 3)});
  }
  // Scalar exp: the vectorized one leaves denormals at masked positions.
  out.token_dists = token_log_probs.value().unaryExpr([](double v) { return std::exp(v); });
  out.query_states = query_states.value();
  out.token_states = token_states.value();
  return out;
}

Grounder::Grounder(ModelConfig config, uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  using nn::ParamGroup;
  nn::Rng rng(seed);
  const int d = config_.d_model;
  const auto base = ParamGroup::Base;

  for (size_t i = 0; i < config_.vocab.size(); ++i) {
    token_index_.emplace(config_.vocab[i], static_cast<int>(i));
  }
  token_embed_ = store_.add("text.embed",
                            nn::xavier_uniform(static_cast<int>(config_.vocab.size()), d, rng),
                            base);
  text_pos_ = store_.add("text.pos", nn::xavier_uniform(config_.max_tokens, d, rng), base);
  for (int l = 0; l < config_.text_layers; ++l) {
    text_layers_.emplace_back(store_, "text.layer" + std::to_string(l), d,
                              config_.heads, config_.ffn_dim, base, rng);
  }
  if (config_.use_coref_graph && config_.rgcn_layers > 0) {
    rgcn_ = RGCNStack(std::vector<int>(config_.rgcn_layers + 1, d),
                      config_.rgcn_activation, rng.below(~uint64_t{0}));
    rgcn_.register_params(store_, "rgcn.", ParamGroup::Head);
  }
  text_proj_ = nn::Linear(store_, "text.proj", d, d, base, rng);
  patch_proj_ = nn::Linear(store_, "image.proj", config_.feature_channels, d, base, rng);
  // Rows code y in the first half of the channels, columns code x in the second.
  const int half = d / 2;
  row_embed_ = store_.add("image.row", sine_code(cell_centres(config_.grid_height), d, 0, half),
                          base);
  col_embed_ = store_.add("image.col",
                          sine_code(cell_centres(config_.grid_width), d, half, d - half), base);
  for (int l = 0; l < config_.encoder_layers; ++l) {
    encoder_.emplace_back(store_, "encoder.layer" + std::to_string(l), d,
                          config_.heads, config_.ffn_dim, base, rng);
  }
  encoder_norm_ = nn::LayerNorm(store_, "encoder.norm", d, base);
  anchor_logits_ = Eigen::MatrixXd::Zero(config_.queries, 4);
  if (config_.anchored_boxes) {
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(config_.queries))));
    const int rows = (config_.queries + cols - 1) / cols;
    for (int q = 0; q < config_.queries; ++q) {
      anchor_x_.push_back((q % cols + 0.5) / cols);
      anchor_y_.push_back((q / cols + 0.5) / rows);
      anchor_logits_.row(q) << logit(anchor_x_.back()), logit(anchor_y_.back()), logit(0.3),
          logit(0.3);
    }
    query_embed_ = store_.add(
        "decoder.queries",
        sine_code(anchor_y_, d, 0, half) + sine_code(anchor_x_, d, half, d - half), base);
  } else {
    query_embed_ =
        store_.add("decoder.queries", nn::xavier_uniform(config_.queries, d, rng), base);
  }
  for (int l = 0; l < config_.decoder_layers; ++l) {
    decoder_.emplace_back(store_, "decoder.layer" + std::to_string(l), d,
                          config_.heads, config_.ffn_dim, base, rng);
  }
  decoder_norm_ = nn::LayerNorm(store_, "decoder.norm", d, base);
  box1_ = nn::Linear(store_, "box.fc1", d, d, base, rng);
  box2_ = nn::Linear(store_, "box.fc2", d, d, base, rng);
  box3_ = nn::Linear(store_, "box.fc3", d, 4, base, rng);
  if (config_.anchored_boxes) {
    // Start every query on its reference box.
    box3_.weight.mutable_value().setZero();
  }
  if (config_.token_head == "linear") {
    token_head_ = nn::Linear(store_, "token_head", d, config_.max_tokens + 1,
                             ParamGroup::Head, rng);
  } else {
    token_head_ = nn::Linear(store_, "token_head.no_object", d, 1, ParamGroup::Head, rng);
    token_query_ = nn::Linear(store_, "token_head.query", d, d, ParamGroup::Head, rng);
    token_key_ = nn::Linear(store_, "token_head.key", d, d, ParamGroup::Head, rng);
  }
  align_query_ = nn::Linear(store_, "align.query", d, config_.align_dim, base, rng);
  align_token_ = nn::Linear(store_, "align.token", d, config_.align_dim, base, rng);
}

std::vector<int> Grounder::encode_tokens(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    const auto it = token_index_.find(t);
    ids.push_back(it == token_index_.end() ? 0 : it->second);
  }
  return ids;
}

std::optional<CorefGraph> Grounder::gold_graph(const DataPoint& dp) const {
  if (!config_.use_coref_graph) return std::nullopt;
  return build_graph(dp, config_.graph_variant);
}

GroundingVars Grounder::forward_graph(const DataPoint& dp, const CorefGraph* graph) const {
  const auto& tokens = dp.dialogue.tokens();
  const int n = static_cast<int>(tokens.size());
  const int L = config_.max_tokens;
  if (n > L) {
    throw PreconditionError(dp.image_id + ": " + std::to_string(n) +
                            " tokens exceed the model limit of " + std::to_string(L));
  }
  const FeatureGrid& f = dp.features;
  if (f.channels != config_.feature_channels) {
    throw DimensionError(dp.image_id + ": feature channels " + std::to_string(f.channels) +
                         " != model " + std::to_string(config_.feature_channels));
  }
  if (f.height > config_.grid_height || f.width > config_.grid_width || f.height < 1 ||
      f.width < 1) {
    throw DimensionError(dp.image_id + ": feature grid " + std::to_string(f.height) + "x" +
                         std::to_string(f.width) + " does not fit the model");
  }

  // Text stream.
  ag::Var text = ag::add(ag::gather_rows(token_embed_, encode_tokens(tokens)),
                         ag::slice_rows(text_pos_, 0, n));
  for (const auto& layer : text_layers_) text = layer(text, ag::Var());
  if (config_.use_coref_graph && graph != nullptr && !rgcn_.empty()) {
    if (graph->word_count != n) {
      throw DimensionError(dp.image_id + ": graph has " + std::to_string(graph->word_count) +
                           " words, dialogue has " + std::to_string(n));
    }
    const GraphOperators ops(*graph);
    text = encode_sequence(ops, text, rgcn_);
  }
  text = text_proj_(text);

  // Image stream: one row per patch, row-major over the grid.
  const int patches = f.height * f.width;
  Eigen::MatrixXd feats(patches, f.channels);
  std::vector<int> rows, cols;
  rows.reserve(patches);
  cols.reserve(patches);
  for (int y = 0; y < f.height; ++y) {
    for (int x = 0; x < f.width; ++x) {
      const int p = y * f.width + x;
      for (int c = 0; c < f.channels; ++c) feats(p, c) = f.at(y, x, c);
      rows.push_back(y);
      cols.push_back(x);
    }
  }
  const ag::Var image_pos =
      ag::add(ag::gather_rows(row_embed_, rows), ag::gather_rows(col_embed_, cols));
  const ag::Var image = ag::add(patch_proj_(ag::constant(std::move(feats))), image_pos);

  // Patch positions enter the values once and every attention key again.
  ag::Var memory = ag::concat_rows({text, image});
  const ag::Var memory_pos = ag::concat_rows(
      {ag::constant(Eigen::MatrixXd::Zero(n, config_.d_model)), image_pos});
  for (const auto& layer : encoder_) memory = layer(memory, memory_pos);
  memory = encoder_norm_(memory);

  // Log-Gaussian prior over patches around each query's reference point.
  Eigen::MatrixXd cross_bias;
  const bool use_prior = config_.anchored_boxes && config_.anchor_sigma > 0.0;
  if (use_prior) {
    cross_bias = Eigen::MatrixXd::Zero(config_.queries, n + patches);
    cross_bias.leftCols(n).setConstant(config_.anchor_text_logit);
    const double inv = 1.0 / (2.0 * config_.anchor_sigma * config_.anchor_sigma);
    for (int q = 0; q < config_.queries; ++q) {
      for (int p = 0; p < patches; ++p) {
        const double dx = (cols[p] + 0.5) / f.width - anchor_x_[q];
        const double dy = (rows[p] + 0.5) / f.height - anchor_y_[q];
        cross_bias(q, n + p) = -(dx * dx + dy * dy) * inv;
      }
    }
  }
  ag::Var hs = ag::constant(Eigen::MatrixXd::Zero(config_.queries, config_.d_model));
  for (const auto& layer : decoder_) {
    hs = layer(hs, query_embed_, memory, memory_pos, use_prior ? &cross_bias : nullptr);
  }
  hs = decoder_norm_(hs);

  GroundingVars out;
  out.token_count = n;
  out.boxes = ag::sigmoid(ag::add(box3_(ag::relu(box2_(ag::relu(box1_(hs))))),
                                  ag::constant(anchor_logits_)));

  const ag::Var text_states = ag::slice_rows(memory, 0, n);
  Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(config_.queries, L + 1);
  if (n < L) mask.middleCols(n, L - n).setConstant(kMaskedLogit);
  ag::Var logits;
  if (config_.token_head == "linear") {
    logits = token_head_(hs);
  } else {
    const ag::Var scores =
        ag::scale(ag::matmul_nt(token_query_(hs), token_key_(text_states)),
                  1.0 / std::sqrt(static_cast<double>(config_.d_model)));
    std::vector<ag::Var> parts{scores};
    if (n < L) parts.push_back(ag::constant(Eigen::MatrixXd::Zero(config_.queries, L - n)));
    parts.push_back(token_head_(hs));
    logits = ag::concat_cols(parts);
  }
  out.token_log_probs = ag::log_softmax_rows(ag::add(logits, ag::constant(std::move(mask))));
  out.query_states = align_query_(hs);
  out.token_states = align_token_(text_states);
  return out;
}

GroundingOutput Grounder::forward(const DataPoint& dp, const CorefGraph* graph) const {
  return forward_graph(dp, graph).values();
}

void Grounder::save(const std::filesystem::path& path,
                    const nlohmann::json& extra_meta) const {
  WeightFile file;
  file.meta = extra_meta;
  file.meta["kind"] = "grounder";
  file.meta["config"] = config_.to_json();
  for (const auto& p : store_.params()) file.tensors.emplace_back(p.name, p.var.value());
  write_weights(path, file);
}

Grounder Grounder::load(const std::filesystem::path& path, nlohmann::json* meta_out) {
  WeightFile file = read_weights(path);
  if (file.meta.value("kind", "") != "grounder" || !file.meta.contains("config")) {
    throw ValidationError(path.string() + ": not a grounder checkpoint");
  }
  Grounder model(ModelConfig::from_json(file.meta.at("config")), 0);
  for (auto& p : model.store_.params()) {
    const Eigen::MatrixXd& m = file.tensor(p.name);
    if (m.rows() != p.var.rows() || m.cols() != p.var.cols()) {
      throw ValidationError(path.string() + ": shape mismatch for " + p.name);
    }
    p.var.mutable_value() = m;
  }
  if (meta_out != nullptr) *meta_out = std::move(file.meta);
  return model;
}

std::vector<RankedBox> rank_boxes(const Mention& mention, const GroundingOutput& out,
                                  int limit) {
  const Eigen::Index L = out.token_dists.cols() - 1;
  if (mention.span.start < 0 || mention.span.end > L || mention.span.length() < 1) {
    throw PreconditionError("mention " + mention.id + " lies outside the token range");
  }
  std::vector<RankedBox> ranked;
  ranked.reserve(out.boxes.size());
  for (size_t q = 0; q < out.boxes.size(); ++q) {
    const double score = out.token_dists.row(static_cast<Eigen::Index>(q))
                             .segment(mention.span.start, mention.span.length())
                             .maxCoeff();
    ranked.push_back({static_cast<int>(q), out.boxes[q], score});
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedBox& a, const RankedBox& b) { return a.score > b.score; });
  if (static_cast<int>(ranked.size()) > limit) ranked.resize(static_cast<size_t>(limit));
  return ranked;
}

}  // namespace vdg
