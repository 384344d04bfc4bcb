/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "test_support.hpp"
#include "vdg/cli.hpp"
#include "vdg/evaluator.hpp"

using vdg::test::TempDir;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run vdg_run(std::vector<std::string> args) {
  args.insert(args.begin(), "vdg");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = vdg::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("usage errors") {
  CHECK(vdg_run({}).code == vdg::cli::kUsage);
  CHECK(vdg_run({"frobnicate"}).code == vdg::cli::kUsage);
  CHECK(vdg_run({"stats"}).code == vdg::cli::kUsage);
  CHECK(vdg_run({"synth", "--out", "x", "--ambiguity", "5"}).code == vdg::cli::kUsage);
  const Run help = vdg_run({"--help"});
  CHECK(help.code == vdg::cli::kOk);
  CHECK(help.out.find("validate") != std::string::npos);
}

TEST_CASE("validate reports every violation") {
  const Run bad = vdg_run({"validate", "--corpus", vdg::test::data_path("broken_corpus.json").string()});
  CHECK(bad.code == vdg::cli::kDataError);
  int lines = 0;
  for (char ch : bad.out) lines += ch == '\n';
  CHECK(lines == 3);
  CHECK(bad.out.find("m3.chain_id") != std::string::npos);

  const Run good = vdg_run({"validate", "--corpus", vdg::test::data_path("mini_corpus.json").string()});
  CHECK(good.code == vdg::cli::kOk);
  CHECK(good.out.empty());

  CHECK(vdg_run({"stats", "--corpus", "/nonexistent/corpus.json"}).code == vdg::cli::kDataError);
}

TEST_CASE("stats and graph output") {
  const std::string mini = vdg::test::data_path("mini_corpus.json").string();
  const Run stats = vdg_run({"stats", "--corpus", mini});
  REQUIRE(stats.code == vdg::cli::kOk);
  const json j = json::parse(stats.out);
  const json& train = j.at("train");
  CHECK(train.at("images") == 2);
  CHECK(train.at("phrases") == 5);
  CHECK(train.at("pronouns") == 3);
  CHECK(train.at("boxes") == 7);
  CHECK(train.at("chains") == 5);

  const Run graph = vdg_run({"graph", "--corpus", mini, "--datapoint", "mini-2", "--variant", "nocoref"});
  REQUIRE(graph.code == vdg::cli::kOk);
  CHECK(json::parse(graph.out).at("variant") == "nocoref");
  CHECK(vdg_run({"graph", "--corpus", mini, "--datapoint", "nope"}).code == vdg::cli::kDataError);
}

TEST_CASE("ttest output") {
  const Run r = vdg_run({"ttest", "--a", "2.2,1.8,2.1,1.9,2.0", "--b", "1,1,1,1,1"});
  REQUIRE(r.code == vdg::cli::kOk);
  const json j = json::parse(r.out);
  CHECK(j.at("df") == 4);
  CHECK(j.at("p").get<double>() == doctest::Approx(1.451281706131975e-4).epsilon(1e-9));
  CHECK(vdg_run({"ttest", "--a", "1,2", "--b", "1"}).code == vdg::cli::kDataError);
  CHECK(vdg_run({"ttest", "--a", "1,x", "--b", "1,2"}).code != vdg::cli::kOk);
}

TEST_CASE("synth, train, predict, eval and analyze end to end") {
  TempDir dir("cli");
  const std::string corpus = (dir / "corpus").string();
  REQUIRE(vdg_run({"synth", "--seed", "3", "--n", "6", "--dev", "2", "--test", "2", "--out", corpus}).code ==
          vdg::cli::kOk);
  REQUIRE(vdg_run({"validate", "--corpus", corpus}).code == vdg::cli::kOk);

  const std::string model = (dir / "model.bin").string();
  const std::string record = (dir / "record.json").string();
  const Run train = vdg_run({"train", "--corpus", corpus, "--out", model, "--epochs", "1", "--record", record});
  REQUIRE_MESSAGE(train.code == vdg::cli::kOk, train.err);
  CHECK(json::parse(slurp(record)).at("epochs").size() == 1);

  const std::string preds = (dir / "preds.jsonl").string();
  REQUIRE(vdg_run({"predict", "--corpus", corpus, "--model", model, "--split", "test", "--out", preds}).code ==
          vdg::cli::kOk);
  const auto rows = vdg::read_predictions(preds);
  CHECK(!rows.empty());
  for (const auto& r : rows) CHECK(r.boxes.size() == 10);

  const std::string csv = (dir / "eval.csv").string();
  REQUIRE(vdg_run({"eval", "--corpus", corpus, "--preds", preds, "--protocol", "both", "--out", csv}).code ==
          vdg::cli::kOk);
  std::istringstream table(slurp(csv));
  std::string line;
  int lines = 0;
  while (std::getline(table, line)) ++lines;
  CHECK(lines == 1 + 2 * 3 * 3);

  const Run clusters = vdg_run({"analyze", "--corpus", corpus, "--preds", preds, "--breakdown", "clusters"});
  CHECK(clusters.code == vdg::cli::kOk);
  CHECK(clusters.out.rfind("clusters,mentions,hits,recall_at1\n", 0) == 0);
  const Run arity = vdg_run({"analyze", "--corpus", corpus, "--preds", preds, "--breakdown", "arity"});
  CHECK(arity.code == vdg::cli::kOk);

  // Predictions for the wrong split name unknown datapoints.
  CHECK(vdg_run({"eval", "--corpus", corpus, "--preds", preds, "--split", "dev"}).code ==
        vdg::cli::kDataError);
}
