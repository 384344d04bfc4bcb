/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vdg/corpus.hpp"

namespace vdg {

enum class EdgeType { SelfLoop, NextWord, LastWord, SpanWord, WordSpan, Coref };

inline constexpr int kEdgeTypeCount = 6;
const char* to_string(EdgeType type);
EdgeType edge_type_from_string(const std::string& s);

// Relations that carry messages. The self-loop is handled by the separate
// self weight of each convolution layer and never stored as an edge.
inline constexpr std::array<EdgeType, 5> kMessageRelations = {
    EdgeType::NextWord, EdgeType::LastWord, EdgeType::SpanWord,
    EdgeType::WordSpan, EdgeType::Coref};

enum class GraphVariant { Full, NoCoref, NoVirtualSpan, WordsOnly };

const char* to_string(GraphVariant variant);
GraphVariant graph_variant_from_string(const std::string& s);

struct GraphNode {
  enum class Kind { Word, Span } kind = Kind::Word;
  int token = -1;          // Word nodes
  std::string mention_id;  // Span nodes
  Span span;               // Span nodes: interval of length >= 2
  bool operator==(const GraphNode&) const = default;
};

struct GraphEdge {
  int src = 0;
  int dst = 0;
  EdgeType type = EdgeType::NextWord;
  auto operator<=>(const GraphEdge&) const = default;
};

/// Word nodes come first (node i is token i), followed by span nodes sorted
/// by mention id. Edges are sorted and free of duplicate triples.
struct CorefGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;
  GraphVariant variant = GraphVariant::Full;
  int word_count = 0;

  int node_count() const { return static_cast<int>(nodes.size()); }
};

/// Throws ValidationError when two mentions overlap (naming both) or a
/// mention leaves the token range.
CorefGraph build_graph(int token_count, const std::vector<Mention>& mentions,
                       const std::vector<CorefChain>& chains,
                       GraphVariant variant);

CorefGraph build_graph(const DataPoint& dp, GraphVariant variant);

/// Component-wise mean of the word vectors (rows) inside the span.
Eigen::VectorXd span_embedding(const Eigen::MatrixXd& word_vectors, Span span);

std::map<EdgeType, int> edge_census(const CorefGraph& graph);

/// Debug dump: {"variant", "nodes": [...], "edges": [[src, dst, type], ...]}.
std::string graph_to_json(const CorefGraph& graph);

}  // namespace vdg
