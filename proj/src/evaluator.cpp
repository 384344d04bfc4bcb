/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "vdg/evaluator.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <boost/math/special_functions/beta.hpp>

#include "vdg/error.hpp"

namespace vdg {

namespace {

constexpr double kHitIoU = 0.5;

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index writes
// only its own output slot, so results do not depend on scheduling.
template <class Fn>
void parallel_for(size_t n, int threads, Fn fn) {
  const size_t workers = std::min<size_t>(std::max(threads, 1), n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

size_t group_index(MentionGroup g) { return static_cast<size_t>(g); }

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(std::numeric_limits<double>::max_digits10);
  os << v;
  return os.str();
}

}  // namespace

const char* to_string(Protocol p) {
  return p == Protocol::AnyBox ? "any" : "merged";
}

Protocol protocol_from_string(const std::string& s) {
  if (s == "any") return Protocol::AnyBox;
  if (s == "merged") return Protocol::MergedBox;
  throw PreconditionError("unknown protocol '" + s + "' (expected any or merged)");
}

const char* to_string(MentionGroup g) {
  switch (g) {
    case MentionGroup::Overall: return "overall";
    case MentionGroup::Pronoun: return "pronoun";
    case MentionGroup::Phrase: return "phrase";
  }
  return "?";
}

void write_predictions(const std::filesystem::path& path,
                       const std::vector<PredictionRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : rows) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& b : r.boxes) boxes.push_back({b.x1(), b.y1(), b.x2(), b.y2()});
    out << nlohmann::json{{"datapoint", r.datapoint},
                          {"mention_id", r.mention_id},
                          {"boxes", boxes}}
                .dump()
        << '\n';
  }
}

std::vector<PredictionRow> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open predictions file " + path.string());
  std::vector<PredictionRow> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      PredictionRow r;
      r.datapoint = j.at("datapoint").get<std::string>();
      r.mention_id = j.at("mention_id").get<std::string>();
      for (const auto& b : j.at("boxes")) {
        const auto c = b.get<std::vector<double>>();
        if (c.size() != 4) throw ParseError(where + ": a box needs 4 coordinates");
        r.boxes.emplace_back(c[0], c[1], c[2], c[3]);
      }
      rows.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  return rows;
}

int eval_threads_from_env() {
  const char* v = std::getenv("VDG_THREADS");
  if (v == nullptr) return 1;
  const int n = std::atoi(v);
  return n >= 1 ? n : 1;
}

std::vector<PredictionRow> predict_split(const Grounder& model, const std::vector<DataPoint>& dps,
                                         const GraphProvider& graphs, int threads) {
  std::vector<std::vector<PredictionRow>> per_dp(dps.size());
  parallel_for(dps.size(), threads, [&](size_t i) {
    const DataPoint& dp = dps[i];
    const std::optional<CorefGraph> graph = graphs ? graphs(dp) : model.gold_graph(dp);
    const GroundingOutput out = model.forward(dp, graph ? &*graph : nullptr);
    for (const auto& m : dp.mentions) {
      PredictionRow row{dp.image_id, m.id, {}};
      for (const auto& r : rank_boxes(m, out)) {
        row.boxes.push_back(to_clipped_rect(r.box, dp.image_size));
      }
      per_dp[i].push_back(std::move(row));
    }
  });
  std::vector<PredictionRow> rows;
  for (auto& v : per_dp) {
    for (auto& r : v) rows.push_back(std::move(r));
  }
  return rows;
}

bool mention_hit(std::span<const Rect> ranked, std::span<const Rect> gold, int k,
                 Protocol protocol) {
  if (gold.empty()) throw PreconditionError("mention_hit needs at least one gold box");
  const size_t top = std::min<size_t>(ranked.size(), static_cast<size_t>(std::max(k, 0)));
  if (protocol == Protocol::MergedBox) {
    const Rect merged = enclosing_box(gold);
    for (size_t i = 0; i < top; ++i) {
      if (iou(ranked[i], merged) > kHitIoU) return true;
    }
    return false;
  }
  for (size_t i = 0; i < top; ++i) {
    for (const auto& g : gold) {
      if (iou(ranked[i], g) > kHitIoU) return true;
    }
  }
  return false;
}

std::vector<MentionOutcome> mention_outcomes(const std::vector<DataPoint>& dps,
                                             const std::vector<PredictionRow>& predictions,
                                             int threads) {
  std::map<std::string, size_t> dp_index;
  for (size_t i = 0; i < dps.size(); ++i) dp_index.emplace(dps[i].image_id, i);

  std::map<std::pair<std::string, std::string>, const PredictionRow*> by_key;
  for (const auto& row : predictions) {
    const auto it = dp_index.find(row.datapoint);
    if (it == dp_index.end()) {
      throw ValidationError("prediction for unknown datapoint " + row.datapoint);
    }
    if (dps[it->second].find_mention(row.mention_id) == nullptr) {
      throw ValidationError("prediction for unknown mention " + row.datapoint + "/" +
                            row.mention_id);
    }
    if (!by_key.emplace(std::make_pair(row.datapoint, row.mention_id), &row).second) {
      throw ValidationError("duplicate prediction for " + row.datapoint + "/" + row.mention_id);
    }
  }

  std::vector<std::pair<size_t, size_t>> slots;  // (datapoint, mention)
  for (size_t i = 0; i < dps.size(); ++i) {
    for (size_t m = 0; m < dps[i].mentions.size(); ++m) slots.emplace_back(i, m);
  }
  std::vector<MentionOutcome> outcomes(slots.size());
  parallel_for(slots.size(), threads, [&](size_t s) {
    const DataPoint& dp = dps[slots[s].first];
    const Mention& m = dp.mentions[slots[s].second];
    MentionOutcome& o = outcomes[s];
    o.datapoint = dp.image_id;
    o.mention_id = m.id;
    o.chain_id = m.chain_id;
    o.kind = m.kind;
    const auto it = by_key.find({dp.image_id, m.id});
    if (it == by_key.end()) return;
    o.predicted = true;
    const std::vector<Rect> gold = dp.gold_rects(m);
    for (size_t p = 0; p < kProtocols.size(); ++p) {
      for (size_t k = 0; k < kRecallKs.size(); ++k) {
        o.hit[p][k] = mention_hit(it->second->boxes, gold, kRecallKs[k], kProtocols[p]);
      }
    }
  });
  return outcomes;
}

double EvalReport::at(Protocol p, int k, MentionGroup g) const {
  for (size_t ki = 0; ki < kRecallKs.size(); ++ki) {
    if (kRecallKs[ki] == k) return recall[static_cast<size_t>(p)][ki][group_index(g)];
  }
  throw PreconditionError("recall is reported for k in {1, 5, 10} only");
}

EvalReport summarize(const std::vector<MentionOutcome>& outcomes) {
  EvalReport r;
  std::array<std::array<std::array<size_t, 3>, kRecallKs.size()>, kProtocols.size()> hits{};
  for (const auto& o : outcomes) {
    const size_t kind_group = group_index(o.kind == MentionKind::Pronoun ? MentionGroup::Pronoun
                                                                         : MentionGroup::Phrase);
    r.mentions[group_index(MentionGroup::Overall)]++;
    r.mentions[kind_group]++;
    if (!o.predicted) r.missing_predictions++;
    for (size_t p = 0; p < kProtocols.size(); ++p) {
      for (size_t k = 0; k < kRecallKs.size(); ++k) {
        if (!o.hit[p][k]) continue;
        hits[p][k][group_index(MentionGroup::Overall)]++;
        hits[p][k][kind_group]++;
      }
    }
  }
  for (size_t p = 0; p < kProtocols.size(); ++p) {
    for (size_t k = 0; k < kRecallKs.size(); ++k) {
      for (size_t g = 0; g < 3; ++g) {
        r.recall[p][k][g] = r.mentions[g] == 0 ? 0.0
                                               : static_cast<double>(hits[p][k][g]) /
                                                     static_cast<double>(r.mentions[g]);
      }
    }
  }
  return r;
}

EvalReport evaluate(const std::vector<DataPoint>& dps,
                    const std::vector<PredictionRow>& predictions, int threads) {
  return summarize(mention_outcomes(dps, predictions, threads));
}

std::string report_to_csv(const EvalReport& report, std::span<const Protocol> protocols) {
  std::ostringstream os;
  os << "protocol,k,group,recall,mentions\n";
  for (Protocol p : protocols) {
    for (size_t k = 0; k < kRecallKs.size(); ++k) {
      for (MentionGroup g : kMentionGroups) {
        os << to_string(p) << ',' << kRecallKs[k] << ',' << to_string(g) << ','
           << format_double(report.recall[static_cast<size_t>(p)][k][group_index(g)]) << ','
           << report.mentions[group_index(g)] << '\n';
      }
    }
  }
  return os.str();
}

nlohmann::json report_to_json(const EvalReport& report, std::span<const Protocol> protocols) {
  nlohmann::json j;
  nlohmann::json counts;
  for (MentionGroup g : kMentionGroups) counts[to_string(g)] = report.mentions[group_index(g)];
  j["mentions"] = counts;
  j["missing_predictions"] = report.missing_predictions;
  nlohmann::json rec;
  for (Protocol p : protocols) {
    nlohmann::json per_k;
    for (size_t k = 0; k < kRecallKs.size(); ++k) {
      nlohmann::json per_g;
      for (MentionGroup g : kMentionGroups) {
        per_g[to_string(g)] = report.recall[static_cast<size_t>(p)][k][group_index(g)];
      }
      per_k["R@" + std::to_string(kRecallKs[k])] = per_g;
    }
    rec[to_string(p)] = per_k;
  }
  j["recall"] = rec;
  return j;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw PreconditionError("paired t-test needs equal-length lists");
  if (a.size() < 2) throw PreconditionError("paired t-test needs at least two pairs");
  const auto n = static_cast<double>(a.size());
  std::vector<double> d(a.size());
  double mean = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    d[i] = a[i] - b[i];
    mean += d[i];
  }
  mean /= n;
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));

  TTestResult r;
  r.df = static_cast<int>(a.size()) - 1;
  r.mean_difference = mean;
  if (sd == 0.0) {
    if (mean == 0.0) return r;  // t = 0, p = 1
    r.t = std::copysign(std::numeric_limits<double>::infinity(), mean);
    r.p = 0.0;
    r.degenerate_variance = true;
    return r;
  }
  r.t = mean / (sd / std::sqrt(n));
  // P(|T| > |t|) = I_{df / (df + t^2)}(df / 2, 1 / 2).
  const double df = r.df;
  r.p = boost::math::ibeta(df / 2.0, 0.5, df / (df + r.t * r.t));
  return r;
}

}  // namespace vdg
