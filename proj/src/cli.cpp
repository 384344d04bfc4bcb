/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "vdg/cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "vdg/analyzer.hpp"
#include "vdg/corefgraph.hpp"
#include "vdg/corpus.hpp"
#include "vdg/error.hpp"
#include "vdg/evaluator.hpp"
#include "vdg/grounder.hpp"
#include "vdg/synthscene.hpp"
#include "vdg/trainer.hpp"

namespace vdg::cli {

namespace {

using nlohmann::json;

// Writes to --out when given, otherwise to standard output.
void emit(const std::string& text, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(out_path);
  if (!f) throw Error("cannot write " + out_path);
  f << text;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

const std::vector<DataPoint>& require_split(const Corpus& corpus, const std::string& name) {
  if (!corpus.splits.contains(name)) throw PreconditionError("no split named " + name);
  return corpus.split(name);
}

json split_stats_json(const SplitStats& s) {
  json j{{"images", s.images},
         {"pronouns", s.pronouns},
         {"phrases", s.phrases},
         {"boxes", s.boxes},
         {"chains", s.chains},
         {"mean_phrases", s.mean_phrases},
         {"mean_pronouns", s.mean_pronouns},
         {"phrase_chain_hist", s.phrase_chain_hist},
         {"pronoun_chain_hist", s.pronoun_chain_hist}};
  json types;
  for (int t = 0; t < 4; ++t) {
    types[to_string(static_cast<ChainType>(t))] = s.chain_type_hist[t];
  }
  j["chain_types"] = types;
  return j;
}

// Graphs from a predicted-cluster file, or the model's gold default.
GraphProvider graph_provider(const std::string& coref, const Grounder& model) {
  if (coref.empty() || coref == "gold") return {};
  auto clusters = std::make_shared<std::map<std::string, PredictedClusters>>(
      read_predicted_clusters(coref));
  const bool use = model.config().use_coref_graph;
  const GraphVariant variant = model.config().graph_variant;
  return [clusters, use, variant](const DataPoint& dp) -> std::optional<CorefGraph> {
    if (!use) return std::nullopt;
    const auto it = clusters->find(dp.image_id);
    static const PredictedClusters none;
    return graph_from_clusters(static_cast<int>(dp.dialogue.tokens().size()),
                               it == clusters->end() ? none : it->second, variant);
  };
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ParseError("not a number: '" + item + "'");
    }
  }
  return out;
}

struct Options {
  std::string corpus, out, split = "test", preds, model, protocol = "any";
  std::string objective = "both", variant = "full", preset = "desk", coref = "gold";
  std::string datapoint, breakdown = "clusters", clusters, record, a, b;
  uint64_t seed = 7;
  int n = 200, dev = -1, test = -1, ambiguity = 1, epochs = 40, tail = 0, batch = 0;
  double lr = -1.0, head_lr = -1.0;
};

int cmd_validate(const Options& o, std::ostream& out, std::ostream& err) {
  std::vector<DatapointViolation> violations;
  const Corpus corpus = load_corpus(o.corpus, &violations);
  std::ostringstream text;
  for (const auto& v : violations) {
    text << v.datapoint << '\t' << v.violation.entity_id << '.' << v.violation.field << '\t'
         << v.violation.message << '\n';
  }
  emit(text.str(), o.out, out);
  if (!violations.empty()) {
    err << violations.size() << " violation(s)\n";
    return kDataError;
  }
  err << "ok: " << corpus.size() << " datapoints\n";
  return kOk;
}

int cmd_stats(const Options& o, std::ostream& out) {
  const CorpusStats stats = compute_stats(load_corpus(o.corpus));
  json j;
  for (const auto& [name, s] : stats.splits) j[name] = split_stats_json(s);
  emit(j.dump(2) + "\n", o.out, out);
  return kOk;
}

int cmd_graph(const Options& o, std::ostream& out) {
  const Corpus corpus = load_corpus(o.corpus);
  for (const auto& [name, dps] : corpus.splits) {
    for (const auto& dp : dps) {
      if (dp.image_id != o.datapoint) continue;
      const CorefGraph g = build_graph(dp, graph_variant_from_string(o.variant));
      emit(graph_to_json(g) + "\n", o.out, out);
      return kOk;
    }
  }
  throw ValidationError("no datapoint " + o.datapoint);
}

int cmd_synth(const Options& o, std::ostream& err) {
  SynthConfig c;
  c.seed = o.seed;
  c.train = o.n;
  c.dev = o.dev >= 0 ? o.dev : o.n / 4;
  c.test = o.test >= 0 ? o.test : o.n / 4;
  c.ambiguity = o.ambiguity;
  const Corpus corpus = generate_corpus(c);
  std::filesystem::path path = o.out;
  if (!ends_with(o.out, ".json")) {
    std::filesystem::create_directories(path);
    path /= "corpus.json";
  }
  write_corpus(corpus, path);
  err << "wrote " << corpus.size() << " datapoints to " << path.string() << "\n";
  return kOk;
}

int cmd_train(const Options& o, std::ostream& err) {
  Corpus corpus = filter_objective(load_corpus(o.corpus), objective_from_string(o.objective));
  TrainConfig tc = TrainConfig::from_preset(o.preset);
  tc.epochs = o.epochs;
  tc.seed = o.seed;
  if (o.lr >= 0) tc.base_lr = o.lr;
  if (o.head_lr >= 0) tc.head_lr = o.head_lr;
  if (o.batch > 0) tc.batch_size = o.batch;
  tc.eval_threads = eval_threads_from_env();

  ModelConfig mc;
  if (o.variant != "none") {
    mc.use_coref_graph = true;
    mc.graph_variant = graph_variant_from_string(o.variant);
  }
  if (const auto& train = corpus.split("train"); !train.empty()) {
    mc.feature_channels = train.front().features.channels;
    mc.grid_height = train.front().features.height;
    mc.grid_width = train.front().features.width;
  }

  GraphProvider provider;
  std::shared_ptr<std::map<std::string, PredictedClusters>> clusters;
  if (o.coref != "gold" && mc.use_coref_graph) {
    clusters = std::make_shared<std::map<std::string, PredictedClusters>>(
        read_predicted_clusters(o.coref));
    const GraphVariant variant = mc.graph_variant;
    provider = [clusters, variant](const DataPoint& dp) -> std::optional<CorefGraph> {
      static const PredictedClusters none;
      const auto it = clusters->find(dp.image_id);
      return graph_from_clusters(static_cast<int>(dp.dialogue.tokens().size()),
                                 it == clusters->end() ? none : it->second, variant);
    };
  }

  TrainResult result = train(corpus, mc, tc, provider, [&err](const EpochRecord& e) {
    err << "epoch " << e.epoch << " loss " << e.mean_loss.total << " dev R@1 "
        << e.dev_recall_at1 << "\n";
  });
  result.record.checkpoint = o.out;
  json meta{{"train_config", tc.to_json()},
            {"seed", tc.seed},
            {"epoch", result.record.best_epoch},
            {"dev_recall_at1", result.record.best_dev_recall_at1}};
  result.model->save(o.out, meta);
  if (!o.record.empty()) emit(result.record.to_json().dump(2) + "\n", o.record, std::cout);
  err << "saved " << o.out << " (epoch " << result.record.best_epoch << ")\n";
  return kOk;
}

int cmd_predict(const Options& o, std::ostream& err) {
  const Corpus corpus = load_corpus(o.corpus);
  const Grounder model = Grounder::load(o.model);
  const auto& dps = require_split(corpus, o.split);
  const auto rows = predict_split(model, dps, graph_provider(o.coref, model),
                                  eval_threads_from_env());
  write_predictions(o.out, rows);
  err << "wrote " << rows.size() << " predictions to " << o.out << "\n";
  return kOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const Corpus corpus =
      filter_objective(load_corpus(o.corpus), objective_from_string(o.objective));
  const auto& dps = require_split(corpus, o.split);
  const auto report = evaluate(dps, read_predictions(o.preds), eval_threads_from_env());
  std::vector<Protocol> protocols;
  if (o.protocol == "both") {
    protocols.assign(kProtocols.begin(), kProtocols.end());
  } else {
    protocols.push_back(protocol_from_string(o.protocol));
  }
  if (ends_with(o.out, ".json")) {
    emit(report_to_json(report, protocols).dump(2) + "\n", o.out, out);
  } else {
    emit(report_to_csv(report, protocols), o.out, out);
  }
  return kOk;
}

int cmd_analyze(const Options& o, std::ostream& out) {
  const Corpus corpus = load_corpus(o.corpus);
  const auto& dps = require_split(corpus, o.split);
  const auto outcomes = mention_outcomes(dps, read_predictions(o.preds), eval_threads_from_env());
  const Protocol protocol = protocol_from_string(o.protocol);
  if (o.breakdown == "clusters") {
    emit(clusters_csv(group_by_clusters(outcomes, dps, protocol, o.tail), o.tail), o.out, out);
  } else if (o.breakdown == "arity") {
    emit(arity_csv(split_by_reference_arity(outcomes, dps, protocol)), o.out, out);
  } else {
    if (o.clusters.empty()) throw PreconditionError("--breakdown coref needs --clusters");
    emit(coref_type_csv(group_by_coref_prediction(outcomes, dps,
                                                  read_predicted_clusters(o.clusters), protocol)),
         o.out, out);
  }
  return kOk;
}

int cmd_ttest(const Options& o, std::ostream& out) {
  const auto a = parse_list(o.a);
  const auto b = parse_list(o.b);
  const TTestResult r = paired_t_test(a, b);
  json j{{"n", a.size()},
         {"mean_difference", r.mean_difference},
         {"t", std::isfinite(r.t) ? json(r.t) : json(r.t > 0 ? "inf" : "-inf")},
         {"df", r.df},
         {"p", r.p},
         {"degenerate_variance", r.degenerate_variance}};
  emit(j.dump(2) + "\n", o.out, out);
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Visual dialogue grounding with coreference graphs", "vdg"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::string> variants{"full", "nocoref", "novirtualspan", "wordsonly"};
  std::vector<std::string> train_variants = variants;
  train_variants.push_back("none");

  auto* validate = app.add_subcommand("validate", "Check a corpus and list violations");
  validate->add_option("--corpus", o.corpus, "Corpus JSON or directory")->required();
  validate->add_option("--out", o.out, "Write the violation list here");

  auto* stats = app.add_subcommand("stats", "Corpus statistics as JSON");
  stats->add_option("--corpus", o.corpus)->required();
  stats->add_option("--out", o.out);

  auto* graph = app.add_subcommand("graph", "Dump the coreference graph of one datapoint");
  graph->add_option("--corpus", o.corpus)->required();
  graph->add_option("--datapoint", o.datapoint)->required();
  graph->add_option("--variant", o.variant)->check(CLI::IsMember(variants));
  graph->add_option("--out", o.out);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  synth->add_option("--seed", o.seed);
  synth->add_option("--n", o.n, "Train datapoints")->check(CLI::PositiveNumber);
  synth->add_option("--dev", o.dev, "Dev datapoints (default n/4)");
  synth->add_option("--test", o.test, "Test datapoints (default n/4)");
  synth->add_option("--ambiguity", o.ambiguity)->check(CLI::Range(0, 2));
  synth->add_option("--out", o.out, "Output directory or .json path")->required();

  auto* trn = app.add_subcommand("train", "Train a grounding model");
  trn->add_option("--corpus", o.corpus)->required();
  trn->add_option("--out", o.out, "Checkpoint path")->required();
  trn->add_option("--variant", o.variant, "Graph variant, or none")
      ->check(CLI::IsMember(train_variants));
  trn->add_option("--preset", o.preset)->check(CLI::IsMember({"desk", "standard"}));
  trn->add_option("--epochs", o.epochs)->check(CLI::PositiveNumber);
  trn->add_option("--seed", o.seed);
  trn->add_option("--lr", o.lr, "Base learning rate");
  trn->add_option("--head-lr", o.head_lr, "Token head and R-GCN learning rate");
  trn->add_option("--batch-size", o.batch)->check(CLI::PositiveNumber);
  trn->add_option("--coref", o.coref, "gold, or a predicted-cluster JSONL file");
  trn->add_option("--objective", o.objective)
      ->check(CLI::IsMember({"both", "phrase_only", "pronoun_only"}));
  trn->add_option("--record", o.record, "Write the run record JSON here");

  auto* predict = app.add_subcommand("predict", "Rank boxes for every mention of a split");
  predict->add_option("--corpus", o.corpus)->required();
  predict->add_option("--model", o.model)->required();
  predict->add_option("--split", o.split)->check(CLI::IsMember({"train", "dev", "test"}));
  predict->add_option("--coref", o.coref, "gold, or a predicted-cluster JSONL file");
  predict->add_option("--out", o.out)->required();

  auto* ev = app.add_subcommand("eval", "Recall@k table");
  ev->add_option("--corpus", o.corpus)->required();
  ev->add_option("--preds", o.preds)->required();
  ev->add_option("--protocol", o.protocol)->check(CLI::IsMember({"any", "merged", "both"}));
  ev->add_option("--split", o.split)->check(CLI::IsMember({"train", "dev", "test"}));
  ev->add_option("--objective", o.objective)
      ->check(CLI::IsMember({"both", "phrase_only", "pronoun_only"}));
  ev->add_option("--out", o.out, ".csv or .json");

  auto* an = app.add_subcommand("analyze", "Recall@1 breakdowns");
  an->add_option("--corpus", o.corpus)->required();
  an->add_option("--preds", o.preds)->required();
  an->add_option("--split", o.split)->check(CLI::IsMember({"train", "dev", "test"}));
  an->add_option("--protocol", o.protocol)->check(CLI::IsMember({"any", "merged"}));
  an->add_option("--breakdown", o.breakdown)
      ->check(CLI::IsMember({"clusters", "arity", "coref"}));
  an->add_option("--clusters", o.clusters, "Predicted-cluster JSONL (coref breakdown)");
  an->add_option("--tail", o.tail, "Merge cluster counts at or above this value");
  an->add_option("--out", o.out);

  auto* tt = app.add_subcommand("ttest", "Paired t-test on two comma-separated score lists");
  tt->add_option("--a", o.a)->required();
  tt->add_option("--b", o.b)->required();
  tt->add_option("--out", o.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n" << app.help();
    return kUsage;
  }

  try {
    if (*validate) return cmd_validate(o, out, err);
    if (*stats) return cmd_stats(o, out);
    if (*graph) return cmd_graph(o, out);
    if (*synth) return cmd_synth(o, err);
    if (*trn) return cmd_train(o, err);
    if (*predict) return cmd_predict(o, err);
    if (*ev) return cmd_eval(o, out);
    if (*an) return cmd_analyze(o, out);
    if (*tt) return cmd_ttest(o, out);
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsage;
}

int run(int argc, const char* const* argv) { return run(argc, argv, std::cout, std::cerr); }

}  // namespace vdg::cli
