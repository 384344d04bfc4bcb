/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "vdg/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "vdg/binary_io.hpp"
#include "vdg/error.hpp"

namespace vdg {

using nlohmann::json;

Dialogue::Dialogue(std::string id, std::vector<std::string> caption,
                   std::vector<Turn> turns)
    : id_(std::move(id)), caption_(std::move(caption)), turns_(std::move(turns)) {
  for (size_t i = 0; i < caption_.size(); ++i) {
    tokens_.push_back(caption_[i]);
    origins_.push_back({0, static_cast<int>(i)});
  }
  for (size_t t = 0; t < turns_.size(); ++t) {
    int offset = 0;
    for (const auto* part : {&turns_[t].question, &turns_[t].answer}) {
      for (const auto& tok : *part) {
        tokens_.push_back(tok);
        origins_.push_back({static_cast<int>(t + 1), offset++});
      }
    }
  }
}

const char* to_string(MentionKind kind) {
  return kind == MentionKind::Pronoun ? "pronoun" : "noun_phrase";
}

MentionKind mention_kind_from_string(const std::string& s) {
  if (s == "pronoun") return MentionKind::Pronoun;
  if (s == "noun_phrase") return MentionKind::NounPhrase;
  throw ValidationError("unknown mention kind '" + s + "'");
}

const Mention* DataPoint::find_mention(const std::string& id) const {
  for (const auto& m : mentions)
    if (m.id == id) return &m;
  return nullptr;
}

const CorefChain* DataPoint::find_chain(const std::string& id) const {
  for (const auto& c : chains)
    if (c.id == id) return &c;
  return nullptr;
}

const GoldBox* DataPoint::find_box(const std::string& id) const {
  for (const auto& b : boxes)
    if (b.id == id) return &b;
  return nullptr;
}

std::vector<Rect> DataPoint::gold_rects(const Mention& m) const {
  std::vector<Rect> rects;
  const CorefChain* chain = find_chain(m.chain_id);
  if (chain == nullptr) return rects;
  for (const auto& bid : chain->box_ids) {
    if (const GoldBox* box = find_box(bid)) rects.push_back(box->rect);
  }
  return rects;
}

const std::vector<DataPoint>& Corpus::split(const std::string& name) const {
  static const std::vector<DataPoint> kEmpty;
  auto it = splits.find(name);
  return it == splits.end() ? kEmpty : it->second;
}

size_t Corpus::size() const {
  size_t n = 0;
  for (const auto& [_, dps] : splits) n += dps.size();
  return n;
}

// ---------------------------------------------------------------------------
// Validation

std::vector<Violation> validate_datapoint(const DataPoint& dp) {
  std::vector<Violation> out;
  auto add = [&out](const std::string& id, const std::string& field,
                    const std::string& msg) { out.push_back({id, field, msg}); };

  const auto& tokens = dp.dialogue.tokens();
  const int n_tokens = static_cast<int>(tokens.size());
  for (int i = 0; i < n_tokens; ++i) {
    if (tokens[i].empty()) {
      add(dp.dialogue.id(), "tokens",
          "token " + std::to_string(i) + " is empty");
    }
  }

  if (!dp.features.empty() || dp.features.height || dp.features.width ||
      dp.features.channels) {
    const size_t expected = static_cast<size_t>(dp.features.height) *
                            dp.features.width * dp.features.channels;
    if (expected == 0 || dp.features.data.size() != expected) {
      add(dp.image_id, "features",
          "feature data holds " + std::to_string(dp.features.data.size()) +
              " floats, shape implies " + std::to_string(expected));
    }
  }

  auto check_unique = [&](const auto& items, const char* what) {
    std::set<std::string> seen;
    for (const auto& item : items) {
      if (!seen.insert(item.id).second) {
        add(item.id, "id", std::string("duplicate ") + what + " id");
      }
    }
  };
  check_unique(dp.mentions, "mention");
  check_unique(dp.chains, "chain");
  check_unique(dp.boxes, "box");

  // mention id -> chains listing it
  std::unordered_map<std::string, std::vector<std::string>> listed_by;
  for (const auto& c : dp.chains) {
    if (c.mention_ids.empty()) add(c.id, "mention_ids", "chain has no mentions");
    if (c.box_ids.empty()) add(c.id, "box_ids", "chain has no boxes");
    std::set<std::string> seen_m, seen_b;
    for (const auto& mid : c.mention_ids) {
      if (!seen_m.insert(mid).second) {
        add(c.id, "mention_ids", "mention '" + mid + "' listed twice");
        continue;
      }
      if (dp.find_mention(mid) == nullptr) {
        add(c.id, "mention_ids", "dangling reference to mention '" + mid + "'");
      }
      listed_by[mid].push_back(c.id);
    }
    for (const auto& bid : c.box_ids) {
      if (!seen_b.insert(bid).second) {
        add(c.id, "box_ids", "box '" + bid + "' listed twice");
      } else if (dp.find_box(bid) == nullptr) {
        add(c.id, "box_ids", "dangling reference to box '" + bid + "'");
      }
    }
  }

  for (const auto& m : dp.mentions) {
    if (m.span.start < 0 || m.span.start >= m.span.end ||
        m.span.end > n_tokens) {
      add(m.id, "span",
          "span [" + std::to_string(m.span.start) + ", " +
              std::to_string(m.span.end) + ") outside [0, " +
              std::to_string(n_tokens) + ")");
    }
    if (m.kind == MentionKind::Pronoun && m.span.length() != 1) {
      add(m.id, "kind", "pronoun span has length " +
                            std::to_string(m.span.length()) + ", expected 1");
    }
    const CorefChain* chain = dp.find_chain(m.chain_id);
    const auto it = listed_by.find(m.id);
    if (chain == nullptr) {
      add(m.id, "chain_id", "dangling reference to chain '" + m.chain_id + "'");
    } else if (it == listed_by.end() ||
               std::find(it->second.begin(), it->second.end(), m.chain_id) ==
                   it->second.end()) {
      add(m.id, "chain_id", "chain '" + m.chain_id + "' does not list mention");
    }
    if (it != listed_by.end() && it->second.size() > 1) {
      add(m.id, "chain_id", "mention listed by " +
                                std::to_string(it->second.size()) + " chains");
    }
  }

  for (const auto& b : dp.boxes) {
    if (b.image_size.width <= 0 || b.image_size.height <= 0) {
      add(b.id, "image_size", "image size must be positive");
    } else if (!b.rect.within(b.image_size)) {
      add(b.id, "rect", "rect leaves the image");
    }
    if (dp.image_size.width > 0 && !(b.image_size == dp.image_size)) {
      add(b.id, "image_size", "differs from the datapoint image size");
    }
  }

  std::stable_sort(out.begin(), out.end(),
                   [](const Violation& a, const Violation& b) {
                     if (a.entity_id != b.entity_id)
                       return a.entity_id < b.entity_id;
                     return a.field < b.field;
                   });
  return out;
}

// ---------------------------------------------------------------------------
// JSON I/O

namespace {

// Decoding context: names the datapoint and field for error messages.
struct Ctx {
  std::string datapoint;
  [[noreturn]] void fail(const std::string& field, const std::string& msg) const {
    throw ValidationError("datapoint '" + datapoint + "', field '" + field +
                          "': " + msg);
  }
  const json& need(const json& obj, const char* key, const std::string& field) const {
    if (!obj.is_object() || !obj.contains(key)) fail(field, "missing");
    return obj.at(key);
  }
  std::string str(const json& obj, const char* key, const std::string& field) const {
    const json& v = need(obj, key, field);
    if (!v.is_string()) fail(field, "expected a string");
    return v.get<std::string>();
  }
  std::vector<std::string> strs(const json& obj, const char* key,
                                const std::string& field) const {
    const json& v = need(obj, key, field);
    if (!v.is_array()) fail(field, "expected an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) fail(field, "expected an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }
  std::vector<double> nums(const json& v, size_t n, const std::string& field) const {
    if (!v.is_array() || v.size() != n) {
      fail(field, "expected an array of " + std::to_string(n) + " numbers");
    }
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) fail(field, "expected numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }
  ImageSize size(const json& v, const std::string& field) const {
    auto s = nums(v, 2, field);
    return ImageSize{static_cast<int>(s[0]), static_cast<int>(s[1])};
  }
};

class SidecarCache {
 public:
  explicit SidecarCache(std::filesystem::path base) : base_(std::move(base)) {}

  const std::vector<unsigned char>& get(const std::string& rel, const Ctx& ctx) {
    auto it = files_.find(rel);
    if (it != files_.end()) return it->second;
    std::ifstream in(base_ / rel, std::ios::binary);
    if (!in) ctx.fail("features.path", "cannot open sidecar '" + rel + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return files_.emplace(rel, std::move(bytes)).first->second;
  }

 private:
  std::filesystem::path base_;
  std::map<std::string, std::vector<unsigned char>> files_;
};

FeatureGrid decode_features(const json& j, const Ctx& ctx, SidecarCache& cache) {
  FeatureGrid grid;
  const auto shape = ctx.nums(ctx.need(j, "shape", "features.shape"), 3,
                              "features.shape");
  grid.height = static_cast<int>(shape[0]);
  grid.width = static_cast<int>(shape[1]);
  grid.channels = static_cast<int>(shape[2]);
  if (grid.height <= 0 || grid.width <= 0 || grid.channels <= 0) {
    ctx.fail("features.shape", "dimensions must be positive");
  }
  const std::string path = ctx.str(j, "path", "features.path");
  size_t offset = 0;
  if (j.contains("offset")) {
    if (!j["offset"].is_number_unsigned()) {
      ctx.fail("features.offset", "expected a nonnegative integer");
    }
    offset = j["offset"].get<size_t>();
  }
  const auto& bytes = cache.get(path, ctx);
  const size_t count =
      static_cast<size_t>(grid.height) * grid.width * grid.channels;
  if (offset + count * 4 > bytes.size()) {
    ctx.fail("features", "sidecar '" + path + "' too short");
  }
  grid.data.resize(count);
  for (size_t i = 0; i < count; ++i) {
    grid.data[i] = binary::read_f32_le(bytes.data() + offset + 4 * i);
  }
  return grid;
}

DataPoint decode_datapoint(const json& j, SidecarCache& cache, size_t index,
                           std::vector<DatapointViolation>* sink) {
  Ctx ctx{"#" + std::to_string(index)};
  if (!j.is_object()) ctx.fail("", "expected an object");
  DataPoint dp;
  dp.image_id = ctx.str(j, "image_id", "image_id");
  ctx.datapoint = dp.image_id;

  if (j.contains("features")) {
    dp.features = decode_features(j["features"], ctx, cache);
  }

  const json& jd = ctx.need(j, "dialogue", "dialogue");
  std::vector<Turn> turns;
  const json& jt = ctx.need(jd, "turns", "dialogue.turns");
  if (!jt.is_array()) ctx.fail("dialogue.turns", "expected an array");
  for (const auto& t : jt) {
    turns.push_back({ctx.strs(t, "question", "dialogue.turns.question"),
                     ctx.strs(t, "answer", "dialogue.turns.answer")});
  }
  dp.dialogue = Dialogue(ctx.str(jd, "id", "dialogue.id"),
                         ctx.strs(jd, "caption", "dialogue.caption"),
                         std::move(turns));
  if (jd.contains("tokens") &&
      ctx.strs(jd, "tokens", "dialogue.tokens") != dp.dialogue.tokens()) {
    ctx.fail("dialogue.tokens", "does not equal caption + turns");
  }

  for (const auto& jm : ctx.need(j, "mentions", "mentions")) {
    Mention m;
    m.id = ctx.str(jm, "id", "mentions.id");
    const auto span = ctx.nums(ctx.need(jm, "span", "mentions.span"), 2,
                               "mentions[" + m.id + "].span");
    m.span = {static_cast<int>(span[0]), static_cast<int>(span[1])};
    try {
      m.kind = mention_kind_from_string(ctx.str(jm, "kind", "mentions.kind"));
    } catch (const ValidationError& e) {
      ctx.fail("mentions[" + m.id + "].kind", e.what());
    }
    m.chain_id = ctx.str(jm, "chain_id", "mentions[" + m.id + "].chain_id");
    dp.mentions.push_back(std::move(m));
  }
  for (const auto& jc : ctx.need(j, "chains", "chains")) {
    CorefChain c;
    c.id = ctx.str(jc, "id", "chains.id");
    c.mention_ids = ctx.strs(jc, "mention_ids", "chains[" + c.id + "].mention_ids");
    c.box_ids = ctx.strs(jc, "box_ids", "chains[" + c.id + "].box_ids");
    dp.chains.push_back(std::move(c));
  }
  for (const auto& jb : ctx.need(j, "boxes", "boxes")) {
    const std::string id = ctx.str(jb, "id", "boxes.id");
    const auto r = ctx.nums(ctx.need(jb, "rect", "boxes.rect"), 4,
                            "boxes[" + id + "].rect");
    const ImageSize size = ctx.size(ctx.need(jb, "image_size", "boxes.image_size"),
                                    "boxes[" + id + "].image_size");
    try {
      dp.boxes.push_back(GoldBox{id, Rect(r[0], r[1], r[2], r[3]), size});
    } catch (const ValidationError& e) {
      ctx.fail("boxes[" + id + "].rect", e.what());
    }
  }

  if (j.contains("image_size")) {
    dp.image_size = ctx.size(j["image_size"], "image_size");
  } else if (!dp.boxes.empty()) {
    dp.image_size = dp.boxes.front().image_size;
  }

  const auto violations = validate_datapoint(dp);
  if (sink != nullptr) {
    for (const auto& v : violations) sink->push_back({dp.image_id, v});
    return dp;
  }
  if (!violations.empty()) {
    const auto& v = violations.front();
    std::ostringstream msg;
    msg << "datapoint '" << dp.image_id << "': " << v.entity_id << "." << v.field
        << ": " << v.message;
    if (violations.size() > 1) msg << " (+" << violations.size() - 1 << " more)";
    throw ValidationError(msg.str());
  }
  return dp;
}

size_t line_of(const std::string& text, size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + std::count(text.begin(), text.begin() + byte, '\n');
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path,
                   std::vector<DatapointViolation>* violations) {
  std::filesystem::path file = path;
  if (std::filesystem::is_directory(path)) file = path / "corpus.json";
  std::ifstream in(file);
  if (!in) throw ParseError("cannot open corpus file " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(file.string() + ":" + std::to_string(line_of(text, e.byte)) +
                     ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("splits") || !doc["splits"].is_object()) {
    throw ValidationError(file.string() + ": expected {\"splits\": {...}}");
  }

  SidecarCache cache(file.parent_path());
  Corpus corpus;
  for (const char* name : {"train", "dev", "test"}) corpus.splits[name];
  for (const auto& [name, items] : doc["splits"].items()) {
    if (!corpus.splits.contains(name)) {
      throw ValidationError("unknown split '" + name +
                            "' (expected train, dev or test)");
    }
    if (!items.is_array()) {
      throw ValidationError("split '" + name + "' is not an array");
    }
    auto& dps = corpus.splits[name];
    for (size_t i = 0; i < items.size(); ++i) {
      dps.push_back(decode_datapoint(items[i], cache, i, violations));
    }
  }
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& json_path) {
  const std::string sidecar_name =
      json_path.stem().string() + ".features.f32";
  std::vector<unsigned char> sidecar;

  json doc;
  doc["splits"] = json::object();
  for (const auto& [name, dps] : corpus.splits) {
    json arr = json::array();
    for (const auto& dp : dps) {
      json j;
      j["image_id"] = dp.image_id;
      j["image_size"] = {dp.image_size.width, dp.image_size.height};
      if (!dp.features.empty()) {
        j["features"] = {{"path", sidecar_name},
                         {"offset", sidecar.size()},
                         {"shape", {dp.features.height, dp.features.width,
                                    dp.features.channels}}};
        const size_t at = sidecar.size();
        sidecar.resize(at + 4 * dp.features.data.size());
        for (size_t i = 0; i < dp.features.data.size(); ++i) {
          binary::write_f32_le(dp.features.data[i], sidecar.data() + at + 4 * i);
        }
      }
      json turns = json::array();
      for (const auto& t : dp.dialogue.turns()) {
        turns.push_back({{"question", t.question}, {"answer", t.answer}});
      }
      j["dialogue"] = {{"id", dp.dialogue.id()},
                       {"caption", dp.dialogue.caption()},
                       {"turns", turns},
                       {"tokens", dp.dialogue.tokens()}};
      j["mentions"] = json::array();
      for (const auto& m : dp.mentions) {
        j["mentions"].push_back({{"id", m.id},
                                 {"span", {m.span.start, m.span.end}},
                                 {"kind", to_string(m.kind)},
                                 {"chain_id", m.chain_id}});
      }
      j["chains"] = json::array();
      for (const auto& c : dp.chains) {
        j["chains"].push_back({{"id", c.id},
                               {"mention_ids", c.mention_ids},
                               {"box_ids", c.box_ids}});
      }
      j["boxes"] = json::array();
      for (const auto& b : dp.boxes) {
        j["boxes"].push_back(
            {{"id", b.id},
             {"rect", {b.rect.x1(), b.rect.y1(), b.rect.x2(), b.rect.y2()}},
             {"image_size", {b.image_size.width, b.image_size.height}}});
      }
      arr.push_back(std::move(j));
    }
    doc["splits"][name] = std::move(arr);
  }

  std::ofstream out(json_path);
  if (!out) throw Error("cannot write " + json_path.string());
  out << doc.dump(1) << "\n";
  if (!sidecar.empty()) {
    std::ofstream bin(json_path.parent_path() / sidecar_name, std::ios::binary);
    bin.write(reinterpret_cast<const char*>(sidecar.data()),
              static_cast<std::streamsize>(sidecar.size()));
    if (!bin) throw Error("cannot write feature sidecar " + sidecar_name);
  }
}

// ---------------------------------------------------------------------------
// Statistics

const char* to_string(ChainType type) {
  switch (type) {
    case ChainType::OneMentionOneBox: return "one_mention_one_box";
    case ChainType::OneMentionManyBoxes: return "one_mention_many_boxes";
    case ChainType::ManyMentionsOneBox: return "many_mentions_one_box";
    case ChainType::ManyMentionsManyBoxes: return "many_mentions_many_boxes";
  }
  return "?";
}

ChainType classify_chain(const CorefChain& chain) {
  const bool many_mentions = chain.mention_ids.size() > 1;
  const bool many_boxes = chain.box_ids.size() > 1;
  if (many_mentions) {
    return many_boxes ? ChainType::ManyMentionsManyBoxes
                      : ChainType::ManyMentionsOneBox;
  }
  return many_boxes ? ChainType::OneMentionManyBoxes
                    : ChainType::OneMentionOneBox;
}

int chain_count_bucket(size_t chain_count) {
  if (chain_count <= 1) return 0;
  if (chain_count >= 4) return 3;
  return static_cast<int>(chain_count) - 1;
}

SplitStats compute_split_stats(const std::vector<DataPoint>& dps) {
  SplitStats s;
  s.images = static_cast<long>(dps.size());
  for (const auto& dp : dps) {
    long phrases = 0, pronouns = 0;
    for (const auto& m : dp.mentions) {
      (m.kind == MentionKind::Pronoun ? pronouns : phrases)++;
    }
    s.phrases += phrases;
    s.pronouns += pronouns;
    s.boxes += static_cast<long>(dp.boxes.size());
    s.chains += static_cast<long>(dp.chains.size());
    const int bucket = chain_count_bucket(dp.chains.size());
    s.phrase_chain_hist[bucket] += phrases;
    s.pronoun_chain_hist[bucket] += pronouns;
    for (const auto& c : dp.chains) {
      s.chain_type_hist[static_cast<int>(classify_chain(c))]++;
    }
  }
  if (s.images > 0) {
    s.mean_phrases = static_cast<double>(s.phrases) / s.images;
    s.mean_pronouns = static_cast<double>(s.pronouns) / s.images;
  }
  return s;
}

CorpusStats compute_stats(const Corpus& corpus) {
  CorpusStats stats;
  for (const auto& [name, dps] : corpus.splits) {
    stats.splits[name] = compute_split_stats(dps);
  }
  return stats;
}

}  // namespace vdg
