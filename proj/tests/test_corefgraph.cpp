/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include <algorithm>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "vdg/corefgraph.hpp"
#include "vdg/error.hpp"
#include "vdg/synthscene.hpp"

using namespace vdg;

namespace {

// "two kids play . they laugh" with "two kids" and "they" in one chain.
struct KidsExample {
  std::vector<Mention> mentions{{"m1", {0, 2}, MentionKind::NounPhrase, "c1"},
                                {"m2", {4, 5}, MentionKind::Pronoun, "c1"}};
  std::vector<CorefChain> chains{{"c1", {"m1", "m2"}, {"b1", "b2"}}};
  int tokens = 6;
};

int count(const std::map<EdgeType, int>& census, EdgeType t) {
  const auto it = census.find(t);
  return it == census.end() ? 0 : it->second;
}

}  // namespace

TEST_CASE("two kids example under the full graph") {
  const KidsExample ex;
  const CorefGraph g = build_graph(ex.tokens, ex.mentions, ex.chains, GraphVariant::Full);
  CHECK(g.word_count == 6);
  REQUIRE(g.node_count() == 7);
  CHECK(g.nodes[6].kind == GraphNode::Kind::Span);
  CHECK(g.nodes[6].mention_id == "m1");
  const auto census = edge_census(g);
  CHECK(count(census, EdgeType::NextWord) == 5);
  CHECK(count(census, EdgeType::LastWord) == 5);
  CHECK(count(census, EdgeType::SpanWord) == 2);
  CHECK(count(census, EdgeType::WordSpan) == 2);
  CHECK(count(census, EdgeType::Coref) == 2);
  // The coref pair links the span node and the pronoun's word node.
  const bool forward = std::count(g.edges.begin(), g.edges.end(), GraphEdge{6, 4, EdgeType::Coref});
  const bool backward =
      std::count(g.edges.begin(), g.edges.end(), GraphEdge{4, 6, EdgeType::Coref});
  CHECK(forward);
  CHECK(backward);
}

TEST_CASE("variants drop their relations") {
  const KidsExample ex;
  const auto no_coref =
      edge_census(build_graph(ex.tokens, ex.mentions, ex.chains, GraphVariant::NoCoref));
  CHECK(count(no_coref, EdgeType::Coref) == 0);
  CHECK(count(no_coref, EdgeType::SpanWord) == 2);

  const CorefGraph nv = build_graph(ex.tokens, ex.mentions, ex.chains, GraphVariant::NoVirtualSpan);
  CHECK(nv.node_count() == 6);
  const auto nvc = edge_census(nv);
  CHECK(count(nvc, EdgeType::SpanWord) == 0);
  CHECK(count(nvc, EdgeType::WordSpan) == 0);

  const auto words =
      edge_census(build_graph(ex.tokens, ex.mentions, ex.chains, GraphVariant::WordsOnly));
  CHECK(count(words, EdgeType::SpanWord) == 0);
  CHECK(count(words, EdgeType::WordSpan) == 0);
  CHECK(count(words, EdgeType::Coref) == 0);
  CHECK(count(words, EdgeType::NextWord) == 5);
}

TEST_CASE("no mentions leaves only the sequential edges") {
  const CorefGraph g = build_graph(9, {}, {}, GraphVariant::Full);
  const auto census = edge_census(g);
  CHECK(count(census, EdgeType::NextWord) == 8);
  CHECK(count(census, EdgeType::LastWord) == 8);
  CHECK(count(census, EdgeType::Coref) == 0);
  CHECK(count(census, EdgeType::SelfLoop) == 0);
  CHECK(g.edges.size() == 16);
}

TEST_CASE("overlapping or out-of-range mentions are rejected") {
  const std::vector<Mention> overlap{{"a", {0, 3}, MentionKind::NounPhrase, "c"},
                                     {"b", {2, 4}, MentionKind::NounPhrase, "c"}};
  const std::vector<CorefChain> chains{{"c", {"a", "b"}, {"x"}}};
  try {
    build_graph(6, overlap, chains, GraphVariant::Full);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    CHECK(what.find('a') != std::string::npos);
    CHECK(what.find('b') != std::string::npos);
  }
  const std::vector<Mention> outside{{"a", {4, 8}, MentionKind::NounPhrase, "c"}};
  CHECK_THROWS_AS(build_graph(6, outside, {{"c", {"a"}, {"x"}}}, GraphVariant::Full),
                  ValidationError);
}

TEST_CASE("graph is invariant to mention input order") {
  SynthConfig cfg;
  cfg.ambiguity = 2;
  std::mt19937_64 rng(9);
  for (int i = 0; i < 30; ++i) {
    const DataPoint dp = generate_datapoint(cfg, "train", i);
    std::vector<Mention> shuffled = dp.mentions;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const int n = static_cast<int>(dp.dialogue.tokens().size());
    const CorefGraph a = build_graph(n, dp.mentions, dp.chains, GraphVariant::Full);
    const CorefGraph b = build_graph(n, shuffled, dp.chains, GraphVariant::Full);
    CHECK(a.nodes == b.nodes);
    CHECK(a.edges == b.edges);
  }
}

TEST_CASE("edges are sorted and unique") {
  const DataPoint dp = generate_datapoint(SynthConfig{}, "train", 3);
  const CorefGraph g = build_graph(dp, GraphVariant::Full);
  CHECK(std::is_sorted(g.edges.begin(), g.edges.end()));
  CHECK(std::adjacent_find(g.edges.begin(), g.edges.end()) == g.edges.end());
  for (const auto& e : g.edges) {
    CHECK(e.src != e.dst);
    CHECK(e.src < g.node_count());
    CHECK(e.dst < g.node_count());
  }
}

TEST_CASE("edge census matches closed-form counts on synthetic datapoints") {
  const Corpus c = generate_corpus(21, 200, 2);
  for (const auto& dp : c.split("train")) {
    const int n = static_cast<int>(dp.dialogue.tokens().size());
    int multi_word = 0;
    for (const auto& m : dp.mentions) {
      if (m.span.length() >= 2) multi_word += m.span.length();
    }
    int coref = 0;
    for (const auto& ch : dp.chains) {
      const int m = static_cast<int>(ch.mention_ids.size());
      coref += m * (m - 1);
    }
    const auto census = edge_census(build_graph(dp, GraphVariant::Full));
    CHECK(count(census, EdgeType::NextWord) == n - 1);
    CHECK(count(census, EdgeType::LastWord) == n - 1);
    CHECK(count(census, EdgeType::SpanWord) == multi_word);
    CHECK(count(census, EdgeType::WordSpan) == multi_word);
    CHECK(count(census, EdgeType::Coref) == coref);
  }
}

TEST_CASE("span embedding is the mean of its words") {
  Eigen::MatrixXd words(3, 2);
  words << 1, 1, 5, 7, 3, 3;
  Eigen::VectorXd e = span_embedding(words, {0, 3});
  CHECK(e(0) == doctest::Approx(3.0));
  CHECK(e(1) == doctest::Approx(11.0 / 3.0));
  Eigen::MatrixXd two(2, 2);
  two << 1, 1, 3, 3;
  e = span_embedding(two, {0, 2});
  CHECK(e(0) == doctest::Approx(2.0));
  CHECK(e(1) == doctest::Approx(2.0));

  Eigen::MatrixXd same(4, 3);
  same.rowwise() = Eigen::RowVector3d(0.5, -1.0, 2.0);
  CHECK(span_embedding(same, {0, 4}).isApprox(Eigen::Vector3d(0.5, -1.0, 2.0)));

  const int k = 4;
  Eigen::MatrixXd mixed = Eigen::MatrixXd::Zero(k + 1, 2);
  for (int i = 0; i < k; ++i) mixed.row(i) << 2.0, -6.0;
  CHECK(span_embedding(mixed, {0, k + 1}).isApprox(Eigen::Vector2d(2.0, -6.0) * k / (k + 1)));
}

TEST_CASE("graph json dump names the variant and edges") {
  const KidsExample ex;
  const auto j = nlohmann::json::parse(
      graph_to_json(build_graph(ex.tokens, ex.mentions, ex.chains, GraphVariant::Full)));
  CHECK(j.at("variant") == "full");
  CHECK(j.at("nodes").size() == 7);
  CHECK(j.at("edges").size() == 16);
}

TEST_CASE("variant and edge names round trip") {
  for (auto v : {GraphVariant::Full, GraphVariant::NoCoref, GraphVariant::NoVirtualSpan,
                 GraphVariant::WordsOnly}) {
    CHECK(graph_variant_from_string(to_string(v)) == v);
  }
  for (int t = 0; t < kEdgeTypeCount; ++t) {
    const auto e = static_cast<EdgeType>(t);
    CHECK(edge_type_from_string(to_string(e)) == e);
  }
}
