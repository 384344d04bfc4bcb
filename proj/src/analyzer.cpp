/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "vdg/analyzer.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "vdg/error.hpp"

namespace vdg {

namespace {

std::map<std::string, const DataPoint*> index_datapoints(const std::vector<DataPoint>& dps) {
  std::map<std::string, const DataPoint*> out;
  for (const auto& dp : dps) out.emplace(dp.image_id, &dp);
  return out;
}

const DataPoint& lookup(const std::map<std::string, const DataPoint*>& index,
                        const std::string& id) {
  const auto it = index.find(id);
  if (it == index.end()) throw ValidationError("outcome for unknown datapoint " + id);
  return *it->second;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(std::numeric_limits<double>::max_digits10);
  os << v;
  return os.str();
}

std::set<Span> chain_spans(const DataPoint& dp, const CorefChain& chain) {
  std::set<Span> spans;
  for (const auto& mid : chain.mention_ids) {
    if (const Mention* m = dp.find_mention(mid)) spans.insert(m->span);
  }
  return spans;
}

}  // namespace

std::map<int, BucketRecall> group_by_clusters(const std::vector<MentionOutcome>& outcomes,
                                              const std::vector<DataPoint>& dps,
                                              Protocol protocol, int tail) {
  const auto index = index_datapoints(dps);
  std::map<int, BucketRecall> out;
  for (const auto& o : outcomes) {
    int chains = static_cast<int>(lookup(index, o.datapoint).chains.size());
    if (tail > 0) chains = std::min(chains, tail);
    auto& b = out[chains];
    b.mentions++;
    if (o.hit_at(protocol, 0)) b.hits++;
  }
  return out;
}

const char* to_string(ReferenceArity a) {
  return a == ReferenceArity::Single ? "single" : "multi";
}

std::map<std::pair<ReferenceArity, MentionKind>, BucketRecall> split_by_reference_arity(
    const std::vector<MentionOutcome>& outcomes, const std::vector<DataPoint>& dps,
    Protocol protocol) {
  const auto index = index_datapoints(dps);
  std::map<std::pair<ReferenceArity, MentionKind>, BucketRecall> out;
  for (const auto& o : outcomes) {
    const DataPoint& dp = lookup(index, o.datapoint);
    const CorefChain* chain = dp.find_chain(o.chain_id);
    const size_t boxes = chain == nullptr ? 0 : chain->box_ids.size();
    const ReferenceArity arity = boxes == 1 ? ReferenceArity::Single : ReferenceArity::Multi;
    auto& b = out[{arity, o.kind}];
    b.mentions++;
    if (o.hit_at(protocol, 0)) b.hits++;
  }
  return out;
}

const char* to_string(CorefPredType t) {
  switch (t) {
    case CorefPredType::Miss: return "miss";
    case CorefPredType::Part: return "part";
    case CorefPredType::Correct: return "correct";
  }
  return "?";
}

void check_predicted_clusters(const PredictedClusters& clusters) {
  std::vector<std::pair<Span, size_t>> all;
  for (size_t c = 0; c < clusters.size(); ++c) {
    for (const auto& s : clusters[c]) {
      if (s.start < 0 || s.end <= s.start) {
        throw ValidationError("predicted cluster " + std::to_string(c) + " has an empty span");
      }
      all.emplace_back(s, c);
    }
  }
  std::sort(all.begin(), all.end());
  for (size_t i = 1; i < all.size(); ++i) {
    if (all[i - 1].first.overlaps(all[i].first)) {
      throw ValidationError("predicted clusters " + std::to_string(all[i - 1].second) + " and " +
                            std::to_string(all[i].second) + " overlap at token " +
                            std::to_string(all[i].first.start));
    }
  }
}

CorefPredType classify_coref_prediction(const DataPoint& dp, const PredictedClusters& clusters,
                                        const Mention& mention) {
  check_predicted_clusters(clusters);
  for (const auto& cluster : clusters) {
    if (std::find(cluster.begin(), cluster.end(), mention.span) == cluster.end()) continue;
    const CorefChain* chain = dp.find_chain(mention.chain_id);
    const std::set<Span> gold = chain == nullptr ? std::set<Span>{mention.span}
                                                 : chain_spans(dp, *chain);
    const std::set<Span> predicted(cluster.begin(), cluster.end());
    return predicted == gold ? CorefPredType::Correct : CorefPredType::Part;
  }
  return CorefPredType::Miss;
}

std::map<std::string, PredictedClusters> read_predicted_clusters(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open cluster file " + path.string());
  std::map<std::string, PredictedClusters> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    PredictedClusters clusters;
    std::string id;
    try {
      const auto j = nlohmann::json::parse(line);
      id = j.at("datapoint").get<std::string>();
      for (const auto& c : j.at("clusters")) {
        std::vector<Span> spans;
        for (const auto& s : c) {
          const auto v = s.get<std::vector<int>>();
          if (v.size() != 2) throw ParseError(where + ": a span needs [start, end]");
          spans.push_back({v[0], v[1]});
        }
        clusters.push_back(std::move(spans));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    try {
      check_predicted_clusters(clusters);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    if (!out.emplace(id, std::move(clusters)).second) {
      throw ValidationError(where + ": duplicate entry for datapoint " + id);
    }
  }
  return out;
}

void write_predicted_clusters(const std::filesystem::path& path,
                              const std::map<std::string, PredictedClusters>& clusters) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& [id, cs] : clusters) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : cs) {
      nlohmann::json spans = nlohmann::json::array();
      for (const auto& s : c) spans.push_back({s.start, s.end});
      arr.push_back(spans);
    }
    out << nlohmann::json{{"datapoint", id}, {"clusters", arr}}.dump() << '\n';
  }
}

std::map<CorefPredType, BucketRecall> group_by_coref_prediction(
    const std::vector<MentionOutcome>& outcomes, const std::vector<DataPoint>& dps,
    const std::map<std::string, PredictedClusters>& clusters, Protocol protocol) {
  const auto index = index_datapoints(dps);
  const PredictedClusters none;
  std::map<CorefPredType, BucketRecall> out;
  for (const auto& o : outcomes) {
    const DataPoint& dp = lookup(index, o.datapoint);
    const Mention* m = dp.find_mention(o.mention_id);
    if (m == nullptr) throw ValidationError("outcome for unknown mention " + o.mention_id);
    const auto it = clusters.find(o.datapoint);
    const auto type = classify_coref_prediction(dp, it == clusters.end() ? none : it->second, *m);
    auto& b = out[type];
    b.mentions++;
    if (o.hit_at(protocol, 0)) b.hits++;
  }
  return out;
}

CorefGraph graph_from_clusters(int token_count, const PredictedClusters& clusters,
                               GraphVariant variant) {
  check_predicted_clusters(clusters);
  std::vector<Mention> mentions;
  std::vector<CorefChain> chains;
  for (size_t c = 0; c < clusters.size(); ++c) {
    CorefChain chain{"p" + std::to_string(c), {}, {}};
    for (const auto& s : clusters[c]) {
      Mention m{"p" + std::to_string(c) + "." + std::to_string(chain.mention_ids.size()), s,
                MentionKind::NounPhrase, chain.id};
      chain.mention_ids.push_back(m.id);
      mentions.push_back(std::move(m));
    }
    chains.push_back(std::move(chain));
  }
  return build_graph(token_count, mentions, chains, variant);
}

Objective objective_from_string(const std::string& s) {
  if (s == "both") return Objective::Both;
  if (s == "phrase_only") return Objective::PhraseOnly;
  if (s == "pronoun_only") return Objective::PronounOnly;
  throw PreconditionError("unknown objective '" + s +
                          "' (expected both, phrase_only or pronoun_only)");
}

DataPoint filter_objective(const DataPoint& dp, Objective objective) {
  if (objective == Objective::Both) return dp;
  const MentionKind drop =
      objective == Objective::PhraseOnly ? MentionKind::Pronoun : MentionKind::NounPhrase;
  DataPoint out = dp;
  out.mentions.clear();
  std::set<std::string> kept_mentions;
  for (const auto& m : dp.mentions) {
    if (m.kind == drop) continue;
    kept_mentions.insert(m.id);
    out.mentions.push_back(m);
  }
  out.chains.clear();
  std::set<std::string> kept_boxes;
  for (const auto& c : dp.chains) {
    CorefChain chain = c;
    chain.mention_ids.clear();
    for (const auto& mid : c.mention_ids) {
      if (kept_mentions.count(mid)) chain.mention_ids.push_back(mid);
    }
    if (chain.mention_ids.empty()) continue;
    kept_boxes.insert(chain.box_ids.begin(), chain.box_ids.end());
    out.chains.push_back(std::move(chain));
  }
  out.boxes.clear();
  for (const auto& b : dp.boxes) {
    if (kept_boxes.count(b.id)) out.boxes.push_back(b);
  }
  return out;
}

Corpus filter_objective(const Corpus& corpus, Objective objective) {
  Corpus out;
  for (const auto& [name, dps] : corpus.splits) {
    auto& dst = out.splits[name];
    dst.reserve(dps.size());
    for (const auto& dp : dps) dst.push_back(filter_objective(dp, objective));
  }
  return out;
}

std::string clusters_csv(const std::map<int, BucketRecall>& buckets, int tail) {
  std::ostringstream os;
  os << "clusters,mentions,hits,recall_at1\n";
  for (const auto& [k, b] : buckets) {
    os << k << (tail > 0 && k == tail ? "+" : "") << ',' << b.mentions << ',' << b.hits << ','
       << fmt(b.recall()) << '\n';
  }
  return os.str();
}

std::string arity_csv(
    const std::map<std::pair<ReferenceArity, MentionKind>, BucketRecall>& buckets) {
  std::ostringstream os;
  os << "arity,kind,mentions,hits,recall_at1\n";
  for (const auto& [key, b] : buckets) {
    os << to_string(key.first) << ',' << to_string(key.second) << ',' << b.mentions << ','
       << b.hits << ',' << fmt(b.recall()) << '\n';
  }
  return os.str();
}

std::string coref_type_csv(const std::map<CorefPredType, BucketRecall>& buckets) {
  std::ostringstream os;
  os << "type,mentions,hits,recall_at1\n";
  for (const auto& [t, b] : buckets) {
    os << to_string(t) << ',' << b.mentions << ',' << b.hits << ',' << fmt(b.recall()) << '\n';
  }
  return os.str();
}

}  // namespace vdg
