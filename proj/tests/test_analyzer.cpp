/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "doctest.h"
#include "test_support.hpp"
#include "vdg/analyzer.hpp"
#include "vdg/error.hpp"
#include "vdg/synthscene.hpp"

using namespace vdg;
using vdg::test::TempDir;

namespace {

const std::vector<DataPoint>& mini() {
  static const Corpus c = load_corpus(vdg::test::data_path("mini_corpus.json"));
  return c.split("train");
}

// Gold boxes for every mention of `hit_image`, nothing for the rest.
std::vector<PredictionRow> oracle_for(const std::vector<DataPoint>& dps,
                                      const std::string& hit_image) {
  std::vector<PredictionRow> rows;
  for (const auto& dp : dps) {
    for (const auto& m : dp.mentions) {
      PredictionRow r{dp.image_id, m.id, {}};
      if (dp.image_id == hit_image) r.boxes = {dp.gold_rects(m).front()};
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

}  // namespace

TEST_CASE("cluster buckets") {
  const auto& dps = mini();
  const auto outcomes = mention_outcomes(dps, oracle_for(dps, "mini-1"));
  const auto buckets = group_by_clusters(outcomes, dps);
  REQUIRE(buckets.size() == 2);
  CHECK(buckets.at(3).mentions == 5);
  CHECK(buckets.at(3).recall() == 1.0);
  CHECK(buckets.at(2).mentions == 3);
  CHECK(buckets.at(2).recall() == 0.0);

  const auto tailed = group_by_clusters(outcomes, dps, Protocol::AnyBox, 2);
  REQUIRE(tailed.size() == 1);
  CHECK(tailed.at(2).mentions == 8);
  CHECK(tailed.at(2).hits == 5);
  CHECK(clusters_csv(tailed, 2) == "clusters,mentions,hits,recall_at1\n2+,8,5,0.625\n");
}

TEST_CASE("reference arity partitions the mentions") {
  const auto& dps = mini();
  const auto outcomes = mention_outcomes(dps, oracle_for(dps, "mini-1"));
  const auto buckets = split_by_reference_arity(outcomes, dps);
  using K = std::pair<ReferenceArity, MentionKind>;
  CHECK(buckets.at(K{ReferenceArity::Single, MentionKind::NounPhrase}).mentions == 3);
  CHECK(buckets.at(K{ReferenceArity::Single, MentionKind::Pronoun}).mentions == 2);
  CHECK(buckets.at(K{ReferenceArity::Multi, MentionKind::NounPhrase}).mentions == 2);
  CHECK(buckets.at(K{ReferenceArity::Multi, MentionKind::Pronoun}).mentions == 1);
  size_t total = 0, hits = 0;
  for (const auto& [k, b] : buckets) {
    total += b.mentions;
    hits += b.hits;
  }
  CHECK(total == outcomes.size());
  CHECK(hits == 5);
  CHECK(arity_csv(buckets).rfind("arity,kind,mentions,hits,recall_at1\n", 0) == 0);
}

TEST_CASE("arity and cluster partitions hold on synthetic data") {
  const auto dps = generate_corpus(21, 40, 2).split("train");
  std::vector<PredictionRow> rows;
  for (size_t i = 0; i < dps.size(); ++i) {
    for (const auto& m : dps[i].mentions) {
      PredictionRow r{dps[i].image_id, m.id, {}};
      if ((i + m.span.start) % 3 != 0) r.boxes = {dps[i].gold_rects(m).back()};
      rows.push_back(std::move(r));
    }
  }
  const auto outcomes = mention_outcomes(dps, rows);
  const EvalReport report = summarize(outcomes);
  size_t hits = 0, total = 0;
  for (const auto& [k, b] : group_by_clusters(outcomes, dps)) {
    hits += b.hits;
    total += b.mentions;
  }
  CHECK(total == outcomes.size());
  CHECK(static_cast<double>(hits) / static_cast<double>(total) ==
        doctest::Approx(report.at(Protocol::AnyBox, 1, MentionGroup::Overall)));
  hits = total = 0;
  for (const auto& [k, b] : split_by_reference_arity(outcomes, dps, Protocol::MergedBox)) {
    hits += b.hits;
    total += b.mentions;
  }
  CHECK(total == outcomes.size());
  CHECK(static_cast<double>(hits) / static_cast<double>(total) ==
        doctest::Approx(report.at(Protocol::MergedBox, 1, MentionGroup::Overall)));
}

TEST_CASE("coreference prediction types") {
  const DataPoint& dp = mini()[0];
  const PredictedClusters clusters{{{0, 2}, {9, 10}}, {{4, 7}}};
  CHECK(classify_coref_prediction(dp, clusters, *dp.find_mention("m1")) == CorefPredType::Correct);
  CHECK(classify_coref_prediction(dp, clusters, *dp.find_mention("m3")) == CorefPredType::Correct);
  CHECK(classify_coref_prediction(dp, clusters, *dp.find_mention("m2")) == CorefPredType::Part);
  CHECK(classify_coref_prediction(dp, clusters, *dp.find_mention("m4")) == CorefPredType::Miss);
  // An over-merged cluster is only partly right.
  const PredictedClusters merged{{{0, 2}, {9, 10}, {15, 17}}};
  CHECK(classify_coref_prediction(dp, merged, *dp.find_mention("m1")) == CorefPredType::Part);

  const auto& dps = mini();
  const auto outcomes = mention_outcomes(dps, oracle_for(dps, "mini-1"));
  const auto by_type = group_by_coref_prediction(outcomes, dps, {{"mini-1", clusters}});
  CHECK(by_type.at(CorefPredType::Correct).mentions == 2);
  CHECK(by_type.at(CorefPredType::Part).mentions == 1);
  // Two from mini-1, three from mini-2 which has no entry.
  CHECK(by_type.at(CorefPredType::Miss).mentions == 5);
  CHECK(by_type.at(CorefPredType::Miss).hits == 2);
  CHECK(coref_type_csv(by_type).rfind("type,mentions,hits,recall_at1\n", 0) == 0);
}

TEST_CASE("predicted cluster checks and file round trip") {
  CHECK_THROWS_AS(check_predicted_clusters({{{0, 2}}, {{1, 3}}}), ValidationError);
  CHECK_THROWS_AS(check_predicted_clusters({{{0, 2}, {0, 2}}}), ValidationError);
  CHECK_THROWS_AS(check_predicted_clusters({{{3, 3}}}), ValidationError);
  CHECK_NOTHROW(check_predicted_clusters({{{0, 2}, {5, 6}}, {{2, 4}}}));

  TempDir dir("analyzer");
  const std::map<std::string, PredictedClusters> clusters{
      {"mini-1", {{{0, 2}, {9, 10}}, {{4, 7}}}}, {"mini-2", {}}};
  write_predicted_clusters(dir / "c.jsonl", clusters);
  CHECK(read_predicted_clusters(dir / "c.jsonl") == clusters);
}

TEST_CASE("graphs from predicted clusters match gold graphs") {
  const Corpus corpus = generate_corpus(5, 20, 2);
  for (const auto& dp : corpus.split("train")) {
    PredictedClusters clusters;
    for (const auto& chain : dp.chains) {
      std::vector<Span> spans;
      for (const auto& id : chain.mention_ids) spans.push_back(dp.find_mention(id)->span);
      clusters.push_back(spans);
    }
    for (auto v : {GraphVariant::Full, GraphVariant::NoCoref}) {
      const CorefGraph gold = build_graph(dp, v);
      const CorefGraph pred =
          graph_from_clusters(static_cast<int>(dp.dialogue.tokens().size()), clusters, v);
      CHECK(pred.node_count() == gold.node_count());
      CHECK(edge_census(pred) == edge_census(gold));
    }
  }
}

TEST_CASE("objective filtering") {
  const DataPoint& dp = mini()[1];
  const DataPoint phrases = filter_objective(dp, Objective::PhraseOnly);
  CHECK(phrases.mentions.size() == 2);
  CHECK(phrases.chains.size() == 2);
  CHECK(phrases.boxes.size() == 3);
  CHECK(validate_datapoint(phrases).empty());

  const DataPoint pronouns = filter_objective(dp, Objective::PronounOnly);
  REQUIRE(pronouns.mentions.size() == 1);
  CHECK(pronouns.mentions[0].id == "n3");
  REQUIRE(pronouns.chains.size() == 1);
  CHECK(pronouns.chains[0].mention_ids == std::vector<std::string>{"n3"});
  REQUIRE(pronouns.boxes.size() == 1);
  CHECK(pronouns.boxes[0].id == "d1");
  CHECK(validate_datapoint(pronouns).empty());

  CHECK(filter_objective(dp, Objective::Both) == dp);

  // The two single-kind objectives partition the mentions.
  const Corpus c = generate_corpus(9, 30, 1);
  const Corpus a = filter_objective(c, Objective::PhraseOnly);
  const Corpus b = filter_objective(c, Objective::PronounOnly);
  for (size_t i = 0; i < c.split("train").size(); ++i) {
    CHECK(a.split("train")[i].mentions.size() + b.split("train")[i].mentions.size() ==
          c.split("train")[i].mentions.size());
    CHECK(validate_datapoint(a.split("train")[i]).empty());
    CHECK(validate_datapoint(b.split("train")[i]).empty());
  }

  CHECK(objective_from_string("pronoun_only") == Objective::PronounOnly);
  CHECK_THROWS_AS(objective_from_string("all"), PreconditionError);
}
