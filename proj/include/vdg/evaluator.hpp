/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vdg/corpus.hpp"
#include "vdg/grounder.hpp"

namespace vdg {

enum class Protocol { AnyBox, MergedBox };
inline constexpr std::array<Protocol, 2> kProtocols{Protocol::AnyBox, Protocol::MergedBox};

const char* to_string(Protocol p);  // "any" / "merged"
Protocol protocol_from_string(const std::string& s);

inline constexpr std::array<int, 3> kRecallKs{1, 5, 10};

enum class MentionGroup { Overall, Pronoun, Phrase };
inline constexpr std::array<MentionGroup, 3> kMentionGroups{
    MentionGroup::Overall, MentionGroup::Pronoun, MentionGroup::Phrase};
const char* to_string(MentionGroup g);

/// One line of a prediction file: ranked pixel boxes for one mention.
struct PredictionRow {
  std::string datapoint;
  std::string mention_id;
  std::vector<Rect> boxes;
  bool operator==(const PredictionRow&) const = default;
};

void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRow>& rows);
/// Throws ParseError with the 1-based line number on malformed input.
std::vector<PredictionRow> read_predictions(const std::filesystem::path& path);

/// Graph supplied to the model for a datapoint. An empty function means
/// "whatever the model's own config asks for, from gold annotations".
using GraphProvider = std::function<std::optional<CorefGraph>(const DataPoint&)>;

/// Worker count from VDG_THREADS (default 1, minimum 1).
int eval_threads_from_env();

/// Top-10 boxes for every mention, in datapoint then mention order.
std::vector<PredictionRow> predict_split(const Grounder& model, const std::vector<DataPoint>& dps,
                                         const GraphProvider& graphs = {}, int threads = 1);

/// True when one of the first k ranked boxes has IoU > 0.5 with a gold box
/// (AnyBox) or with the enclosing box of all golds (MergedBox).
bool mention_hit(std::span<const Rect> ranked, std::span<const Rect> gold, int k,
                 Protocol protocol);

struct MentionOutcome {
  std::string datapoint;
  std::string mention_id;
  std::string chain_id;
  MentionKind kind = MentionKind::NounPhrase;
  bool predicted = false;
  // hit[protocol][k index]
  std::array<std::array<bool, kRecallKs.size()>, kProtocols.size()> hit{};

  bool hit_at(Protocol p, int k_index) const {
    return hit[static_cast<size_t>(p)][static_cast<size_t>(k_index)];
  }
};

/// Per-mention verdicts in corpus order. Mentions without a prediction row
/// count as misses. Throws ValidationError for rows naming unknown
/// datapoints or mentions, or duplicated rows.
std::vector<MentionOutcome> mention_outcomes(const std::vector<DataPoint>& dps,
                                             const std::vector<PredictionRow>& predictions,
                                             int threads = 1);

struct EvalReport {
  // recall[protocol][k index][group]
  std::array<std::array<std::array<double, 3>, kRecallKs.size()>, kProtocols.size()> recall{};
  std::array<size_t, 3> mentions{};  // by group
  size_t missing_predictions = 0;

  double at(Protocol p, int k, MentionGroup g) const;
};

EvalReport summarize(const std::vector<MentionOutcome>& outcomes);
EvalReport evaluate(const std::vector<DataPoint>& dps,
                    const std::vector<PredictionRow>& predictions, int threads = 1);

/// Rows "protocol,k,group,recall,mentions" in protocol, k, group order.
std::string report_to_csv(const EvalReport& report, std::span<const Protocol> protocols);
nlohmann::json report_to_json(const EvalReport& report, std::span<const Protocol> protocols);

struct TTestResult {
  double t = 0.0;
  int df = 0;
  double p = 1.0;
  double mean_difference = 0.0;
  // Differences were constant and nonzero: t is infinite and p is reported
  // as 0.
  bool degenerate_variance = false;
};

/// Two-sided paired t-test on a[i] - b[i]. Throws PreconditionError on a
/// length mismatch or fewer than two pairs.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

}  // namespace vdg
