/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vdg/corefgraph.hpp"
#include "vdg/corpus.hpp"
#include "vdg/evaluator.hpp"

namespace vdg {

struct BucketRecall {
  size_t mentions = 0;
  size_t hits = 0;
  double recall() const {
    return mentions == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(mentions);
  }
};

/// Recall@1 by the number of chains in each mention's datapoint. Counts of
/// `tail` or more share the bucket `tail`; tail <= 0 keeps every count.
std::map<int, BucketRecall> group_by_clusters(const std::vector<MentionOutcome>& outcomes,
                                              const std::vector<DataPoint>& dps,
                                              Protocol protocol = Protocol::AnyBox,
                                              int tail = 0);

enum class ReferenceArity { Single, Multi };
const char* to_string(ReferenceArity a);

/// Recall@1 keyed by (Single/Multi, pronoun/phrase). A mention is Single
/// when its chain has exactly one gold box.
std::map<std::pair<ReferenceArity, MentionKind>, BucketRecall> split_by_reference_arity(
    const std::vector<MentionOutcome>& outcomes, const std::vector<DataPoint>& dps,
    Protocol protocol = Protocol::AnyBox);

enum class CorefPredType { Miss, Part, Correct };
const char* to_string(CorefPredType t);

/// Externally predicted coreference: clusters of token spans per datapoint.
using PredictedClusters = std::vector<std::vector<Span>>;

/// Throws ValidationError when two predicted clusters share a span or
/// overlapping spans.
void check_predicted_clusters(const PredictedClusters& clusters);

/// Miss when no predicted cluster holds the mention's exact span; Correct
/// when that cluster's span set equals the gold chain's; Part otherwise.
CorefPredType classify_coref_prediction(const DataPoint& dp, const PredictedClusters& clusters,
                                        const Mention& mention);

/// JSON lines {"datapoint": id, "clusters": [[[start, end], ...], ...]}.
std::map<std::string, PredictedClusters> read_predicted_clusters(
    const std::filesystem::path& path);
void write_predicted_clusters(const std::filesystem::path& path,
                              const std::map<std::string, PredictedClusters>& clusters);

/// Recall@1 by prediction type, for mentions of datapoints with a cluster
/// entry (datapoints without one count every mention as Miss).
std::map<CorefPredType, BucketRecall> group_by_coref_prediction(
    const std::vector<MentionOutcome>& outcomes, const std::vector<DataPoint>& dps,
    const std::map<std::string, PredictedClusters>& clusters,
    Protocol protocol = Protocol::AnyBox);

/// Coref graph built from predicted clusters instead of gold chains.
CorefGraph graph_from_clusters(int token_count, const PredictedClusters& clusters,
                               GraphVariant variant);

enum class Objective { Both, PhraseOnly, PronounOnly };
Objective objective_from_string(const std::string& s);  // both, phrase_only, pronoun_only

/// Drops mentions of the excluded kind, then chains left without mentions
/// and boxes no remaining chain refers to.
DataPoint filter_objective(const DataPoint& dp, Objective objective);
Corpus filter_objective(const Corpus& corpus, Objective objective);

std::string clusters_csv(const std::map<int, BucketRecall>& buckets, int tail = 0);
std::string arity_csv(
    const std::map<std::pair<ReferenceArity, MentionKind>, BucketRecall>& buckets);
std::string coref_type_csv(const std::map<CorefPredType, BucketRecall>& buckets);

}  // namespace vdg
