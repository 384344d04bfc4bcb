/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vdg/geometry.hpp"

namespace vdg {

struct Turn {
  std::vector<std::string> question;
  std::vector<std::string> answer;
  bool operator==(const Turn&) const = default;
};

// Where a flattened token came from. Turn 0 is the caption; turn i >= 1 is
// the i-th question/answer pair, with offsets running through the question
// and then the answer.
struct TokenOrigin {
  int turn = 0;
  int offset = 0;
  bool operator==(const TokenOrigin&) const = default;
};

class Dialogue {
 public:
  Dialogue() = default;
  Dialogue(std::string id, std::vector<std::string> caption,
           std::vector<Turn> turns);

  const std::string& id() const { return id_; }
  const std::vector<std::string>& caption() const { return caption_; }
  const std::vector<Turn>& turns() const { return turns_; }
  // Caption followed by every question and answer, in order.
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<TokenOrigin>& origins() const { return origins_; }

  bool operator==(const Dialogue&) const = default;

 private:
  std::string id_;
  std::vector<std::string> caption_;
  std::vector<Turn> turns_;
  std::vector<std::string> tokens_;
  std::vector<TokenOrigin> origins_;
};

// Half-open token interval [start, end) over Dialogue::tokens().
struct Span {
  int start = 0;
  int end = 0;
  int length() const { return end - start; }
  bool contains(int pos) const { return pos >= start && pos < end; }
  bool overlaps(const Span& o) const { return start < o.end && o.start < end; }
  auto operator<=>(const Span&) const = default;
};

enum class MentionKind { NounPhrase, Pronoun };

const char* to_string(MentionKind kind);
MentionKind mention_kind_from_string(const std::string& s);

struct Mention {
  std::string id;
  Span span;
  MentionKind kind = MentionKind::NounPhrase;
  std::string chain_id;
  bool operator==(const Mention&) const = default;
};

struct GoldBox {
  std::string id;
  Rect rect;
  ImageSize image_size;
  bool operator==(const GoldBox&) const = default;
};

struct CorefChain {
  std::string id;
  std::vector<std::string> mention_ids;
  std::vector<std::string> box_ids;
  bool operator==(const CorefChain&) const = default;
};

// Patch features, row-major (height, width, channels).
struct FeatureGrid {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  bool empty() const { return data.empty(); }
  float at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const FeatureGrid&) const = default;
};

struct DataPoint {
  std::string image_id;
  ImageSize image_size;
  FeatureGrid features;
  Dialogue dialogue;
  std::vector<Mention> mentions;
  std::vector<CorefChain> chains;
  std::vector<GoldBox> boxes;

  const Mention* find_mention(const std::string& id) const;
  const CorefChain* find_chain(const std::string& id) const;
  const GoldBox* find_box(const std::string& id) const;
  // Gold rects of the chain a mention belongs to, in chain order.
  std::vector<Rect> gold_rects(const Mention& m) const;

  bool operator==(const DataPoint&) const = default;
};

struct Corpus {
  std::map<std::string, std::vector<DataPoint>> splits;

  // Empty list for unknown split names.
  const std::vector<DataPoint>& split(const std::string& name) const;
  size_t size() const;
  bool operator==(const Corpus&) const = default;
};

struct Violation {
  std::string entity_id;
  std::string field;
  std::string message;
  bool operator==(const Violation&) const = default;
};

/// Every broken invariant of one datapoint, ordered by entity id (then
/// field). Never throws.
std::vector<Violation> validate_datapoint(const DataPoint& dp);

struct DatapointViolation {
  std::string datapoint;
  Violation violation;
};

/// Reads a corpus JSON document (or `corpus.json` inside a directory) plus
/// its feature sidecars. Throws ParseError for malformed JSON and
/// ValidationError naming the datapoint and field for schema violations.
/// With `violations` set, invariant violations found by validate_datapoint
/// are collected there instead of thrown; structural errors still throw.
Corpus load_corpus(const std::filesystem::path& path,
                   std::vector<DatapointViolation>* violations = nullptr);

/// Writes `json_path` and a `<stem>.features.f32` sidecar next to it.
void write_corpus(const Corpus& corpus, const std::filesystem::path& json_path);

enum class ChainType {
  OneMentionOneBox,
  OneMentionManyBoxes,
  ManyMentionsOneBox,
  ManyMentionsManyBoxes,
};

const char* to_string(ChainType type);
ChainType classify_chain(const CorefChain& chain);

// Buckets of dialogues by how many chains they hold: 1, 2, 3, more than 3.
inline constexpr int kChainCountBuckets = 4;
int chain_count_bucket(size_t chain_count);

struct SplitStats {
  long images = 0;
  long pronouns = 0;
  long phrases = 0;
  long boxes = 0;
  long chains = 0;
  double mean_phrases = 0.0;
  double mean_pronouns = 0.0;
  // Mentions of each kind, bucketed by the chain count of their dialogue.
  std::array<long, kChainCountBuckets> phrase_chain_hist{};
  std::array<long, kChainCountBuckets> pronoun_chain_hist{};
  std::array<long, 4> chain_type_hist{};
  bool operator==(const SplitStats&) const = default;
};

struct CorpusStats {
  std::map<std::string, SplitStats> splits;
};

SplitStats compute_split_stats(const std::vector<DataPoint>& dps);
CorpusStats compute_stats(const Corpus& corpus);

}  // namespace vdg
