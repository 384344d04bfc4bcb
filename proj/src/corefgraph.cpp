/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "vdg/corefgraph.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"
#include "vdg/error.hpp"

namespace vdg {

const char* to_string(EdgeType type) {
  switch (type) {
    case EdgeType::SelfLoop: return "self_loop";
    case EdgeType::NextWord: return "next_word";
    case EdgeType::LastWord: return "last_word";
    case EdgeType::SpanWord: return "span_word";
    case EdgeType::WordSpan: return "word_span";
    case EdgeType::Coref: return "coref";
  }
  return "?";
}

EdgeType edge_type_from_string(const std::string& s) {
  for (int i = 0; i < kEdgeTypeCount; ++i) {
    const auto t = static_cast<EdgeType>(i);
    if (s == to_string(t)) return t;
  }
  throw ValidationError("unknown edge type '" + s + "'");
}

const char* to_string(GraphVariant variant) {
  switch (variant) {
    case GraphVariant::Full: return "full";
    case GraphVariant::NoCoref: return "nocoref";
    case GraphVariant::NoVirtualSpan: return "novirtualspan";
    case GraphVariant::WordsOnly: return "wordsonly";
  }
  return "?";
}

GraphVariant graph_variant_from_string(const std::string& s) {
  for (auto v : {GraphVariant::Full, GraphVariant::NoCoref,
                 GraphVariant::NoVirtualSpan, GraphVariant::WordsOnly}) {
    if (s == to_string(v)) return v;
  }
  throw PreconditionError("unknown graph variant '" + s + "'");
}

CorefGraph build_graph(int token_count, const std::vector<Mention>& mentions,
                       const std::vector<CorefChain>& chains,
                       GraphVariant variant) {
  std::vector<const Mention*> sorted;
  for (const auto& m : mentions) {
    if (m.span.start < 0 || m.span.end > token_count ||
        m.span.start >= m.span.end) {
      throw ValidationError("mention '" + m.id + "' leaves the token range");
    }
    sorted.push_back(&m);
  }
  std::sort(sorted.begin(), sorted.end(), [](const Mention* a, const Mention* b) {
    return a->span != b->span ? a->span < b->span : a->id < b->id;
  });
  for (size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i - 1]->span.overlaps(sorted[i]->span)) {
      throw ValidationError("mentions '" + sorted[i - 1]->id + "' and '" +
                            sorted[i]->id + "' overlap");
    }
  }

  CorefGraph g;
  g.variant = variant;
  g.word_count = token_count;
  for (int i = 0; i < token_count; ++i) {
    g.nodes.push_back({GraphNode::Kind::Word, i, {}, {}});
  }

  std::set<GraphEdge> edges;
  for (int i = 0; i + 1 < token_count; ++i) {
    edges.insert({i, i + 1, EdgeType::NextWord});
    edges.insert({i + 1, i, EdgeType::LastWord});
  }

  const bool with_spans =
      variant == GraphVariant::Full || variant == GraphVariant::NoCoref;
  const bool with_coref =
      variant == GraphVariant::Full || variant == GraphVariant::NoVirtualSpan;

  // Representative node per mention (span node or its single word).
  std::map<std::string, int> representative;
  if (with_spans) {
    std::vector<const Mention*> multi;
    for (const Mention* m : sorted) {
      if (m->span.length() >= 2) multi.push_back(m);
    }
    std::sort(multi.begin(), multi.end(),
              [](const Mention* a, const Mention* b) { return a->id < b->id; });
    for (const Mention* m : multi) {
      const int node = g.node_count();
      g.nodes.push_back({GraphNode::Kind::Span, -1, m->id, m->span});
      representative[m->id] = node;
      for (int w = m->span.start; w < m->span.end; ++w) {
        edges.insert({node, w, EdgeType::SpanWord});
        edges.insert({w, node, EdgeType::WordSpan});
      }
    }
  }

  if (with_coref) {
    std::map<std::string, const Mention*> by_id;
    for (const Mention* m : sorted) by_id[m->id] = m;
    for (const auto& chain : chains) {
      std::set<int> members;
      for (const auto& mid : chain.mention_ids) {
        auto it = by_id.find(mid);
        if (it == by_id.end()) continue;
        const Mention* m = it->second;
        if (variant == GraphVariant::NoVirtualSpan) {
          for (int w = m->span.start; w < m->span.end; ++w) members.insert(w);
        } else if (auto r = representative.find(mid); r != representative.end()) {
          members.insert(r->second);
        } else {
          members.insert(m->span.start);
        }
      }
      for (int a : members) {
        for (int b : members) {
          if (a != b) edges.insert({a, b, EdgeType::Coref});
        }
      }
    }
  }

  g.edges.assign(edges.begin(), edges.end());
  return g;
}

CorefGraph build_graph(const DataPoint& dp, GraphVariant variant) {
  return build_graph(static_cast<int>(dp.dialogue.tokens().size()), dp.mentions,
                     dp.chains, variant);
}

Eigen::VectorXd span_embedding(const Eigen::MatrixXd& word_vectors, Span span) {
  if (span.start < 0 || span.end > word_vectors.rows() || span.length() < 2) {
    throw PreconditionError("span embedding needs an in-range span of length >= 2");
  }
  return word_vectors.middleRows(span.start, span.length()).colwise().mean().transpose();
}

std::map<EdgeType, int> edge_census(const CorefGraph& graph) {
  std::map<EdgeType, int> counts;
  for (int i = 0; i < kEdgeTypeCount; ++i) counts[static_cast<EdgeType>(i)] = 0;
  for (const auto& e : graph.edges) counts[e.type]++;
  return counts;
}

std::string graph_to_json(const CorefGraph& graph) {
  using nlohmann::json;
  json j;
  j["variant"] = to_string(graph.variant);
  j["nodes"] = json::array();
  for (const auto& n : graph.nodes) {
    if (n.kind == GraphNode::Kind::Word) {
      j["nodes"].push_back({{"kind", "word"}, {"token", n.token}});
    } else {
      j["nodes"].push_back({{"kind", "span"},
                            {"mention_id", n.mention_id},
                            {"span", {n.span.start, n.span.end}}});
    }
  }
  j["edges"] = json::array();
  for (const auto& e : graph.edges) {
    j["edges"].push_back({e.src, e.dst, to_string(e.type)});
  }
  return j.dump(1);
}

}  // namespace vdg
