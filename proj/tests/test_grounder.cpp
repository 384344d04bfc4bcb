/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include <cmath>
#include <random>

#include "doctest.h"
#include "test_support.hpp"
#include "vdg/error.hpp"
#include "vdg/grounder.hpp"
#include "vdg/matchloss.hpp"
#include "vdg/synthscene.hpp"

using namespace vdg;

namespace {

ModelConfig small_config(const std::vector<DataPoint>& dps, bool graph = false) {
  ModelConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.ffn_dim = 24;
  c.align_dim = 8;
  c.queries = 6;
  c.text_layers = 1;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.use_coref_graph = graph;
  c.vocab = build_vocab(dps);
  return c;
}

std::vector<DataPoint> scenes(int n, int ambiguity = 1) {
  return generate_corpus(3, n, ambiguity).split("train");
}

GroundingOutput dists_only(const Eigen::MatrixXd& dists) {
  GroundingOutput out;
  out.token_dists = dists;
  out.boxes.assign(static_cast<size_t>(dists.rows()), NormBox{});
  return out;
}

}  // namespace

TEST_CASE("output shapes and distribution contracts") {
  const auto dps = scenes(20, 2);
  const Grounder model(small_config(dps), 1);
  const int N = model.config().queries, L = model.config().max_tokens;
  for (const auto& dp : dps) {
    const GroundingOutput out = model.forward(dp, nullptr);
    REQUIRE(out.boxes.size() == static_cast<size_t>(N));
    REQUIRE(out.token_dists.rows() == N);
    REQUIRE(out.token_dists.cols() == L + 1);
    const int n = static_cast<int>(dp.dialogue.tokens().size());
    CHECK(out.token_states.rows() == n);
    CHECK(out.query_states.rows() == N);
    for (int q = 0; q < N; ++q) {
      CHECK(std::abs(out.token_dists.row(q).sum() - 1.0) < 1e-9);
      // Padding positions get no mass.
      if (n < L) CHECK(out.token_dists.row(q).segment(n, L - n).maxCoeff() == 0.0);
      CHECK(is_valid(out.boxes[q]));
    }
  }
}

TEST_CASE("linear token head keeps the same contracts") {
  const auto dps = scenes(4);
  ModelConfig c = small_config(dps);
  c.token_head = "linear";
  c.anchored_boxes = false;
  const Grounder model(c, 2);
  const GroundingOutput out = model.forward(dps[0], nullptr);
  for (int q = 0; q < c.queries; ++q) {
    CHECK(std::abs(out.token_dists.row(q).sum() - 1.0) < 1e-9);
  }
}

TEST_CASE("anchored queries start on a grid of reference boxes") {
  const auto dps = scenes(1);
  const Grounder model(small_config(dps), 4);
  const GroundingOutput out = model.forward(dps[0], nullptr);
  // Six queries: a 3 x 2 grid of centres, width and height 0.3.
  CHECK(out.boxes[0].cx == doctest::Approx(1.0 / 6.0));
  CHECK(out.boxes[0].cy == doctest::Approx(0.25));
  CHECK(out.boxes[5].cx == doctest::Approx(5.0 / 6.0));
  CHECK(out.boxes[5].cy == doctest::Approx(0.75));
  CHECK(out.boxes[3].w == doctest::Approx(0.3));
}

TEST_CASE("NoCoref graph through an identity R-GCN matches the graphless path") {
  const auto dps = scenes(5);
  ModelConfig c = small_config(dps, true);
  c.rgcn_activation = Activation::Identity;
  Grounder model(c, 3);
  for (auto& layer : model.rgcn().layers()) {
    layer.self_weight.mutable_value().setIdentity();
    for (auto& w : layer.relation_weights) w.mutable_value().setZero();
  }
  for (const auto& dp : dps) {
    const CorefGraph g = build_graph(dp, GraphVariant::NoCoref);
    const GroundingOutput with = model.forward(dp, &g);
    const GroundingOutput without = model.forward(dp, nullptr);
    CHECK((with.token_dists - without.token_dists).cwiseAbs().maxCoeff() < 1e-5);
    for (size_t q = 0; q < with.boxes.size(); ++q) {
      CHECK(std::abs(with.boxes[q].cx - without.boxes[q].cx) < 1e-5);
    }
  }
}

TEST_CASE("the coref graph changes the output once relation weights are live") {
  const auto dps = scenes(3);
  const Grounder model(small_config(dps, true), 3);
  const auto g = model.gold_graph(dps[0]);
  REQUIRE(g.has_value());
  CHECK_FALSE(model.forward(dps[0], &*g).token_dists.isApprox(
      model.forward(dps[0], nullptr).token_dists));
  const Grounder plain(small_config(dps, false), 3);
  CHECK_FALSE(plain.gold_graph(dps[0]).has_value());
}

TEST_CASE("forward is deterministic") {
  const auto dps = scenes(2);
  const Grounder a(small_config(dps), 9), b(small_config(dps), 9);
  const GroundingOutput x = a.forward(dps[1], nullptr), y = b.forward(dps[1], nullptr),
                        z = a.forward(dps[1], nullptr);
  CHECK(x.token_dists == y.token_dists);
  CHECK(x.boxes == y.boxes);
  CHECK(x.token_dists == z.token_dists);
  const Grounder other(small_config(dps), 10);
  CHECK(other.forward(dps[1], nullptr).token_dists != x.token_dists);
}

TEST_CASE("input checks") {
  const auto dps = scenes(2);
  ModelConfig c = small_config(dps);
  c.max_tokens = 5;
  const Grounder tiny(c, 1);
  CHECK_THROWS_AS(tiny.forward(dps[0], nullptr), PreconditionError);

  const Grounder model(small_config(dps), 1);
  DataPoint wrong = dps[0];
  wrong.features.channels = 4;
  wrong.features.data.resize(static_cast<size_t>(wrong.features.height) * wrong.features.width * 4);
  CHECK_THROWS_AS(model.forward(wrong, nullptr), DimensionError);

  DataPoint big = dps[0];
  big.features.height = 9;
  big.features.data.resize(static_cast<size_t>(9) * big.features.width * big.features.channels);
  CHECK_THROWS_AS(model.forward(big, nullptr), DimensionError);

  const Grounder graph_model(small_config(dps, true), 1);
  const CorefGraph other = build_graph(dps[1], GraphVariant::Full);
  if (other.word_count != static_cast<int>(dps[0].dialogue.tokens().size())) {
    CHECK_THROWS_AS(graph_model.forward(dps[0], &other), DimensionError);
  }
}

TEST_CASE("config validation and json round trip") {
  ModelConfig c;
  c.d_model = 30;
  c.heads = 4;
  CHECK_THROWS_AS(c.validate(), PreconditionError);
  c = ModelConfig{};
  c.token_head = "mlp";
  CHECK_THROWS_AS(c.validate(), PreconditionError);
  c = ModelConfig{};
  c.vocab = {"a"};
  CHECK_THROWS_AS(c.validate(), PreconditionError);

  ModelConfig d;
  d.queries = 12;
  d.use_coref_graph = true;
  d.graph_variant = GraphVariant::NoVirtualSpan;
  d.rgcn_activation = Activation::Tanh;
  d.anchor_sigma = 0.2;
  d.vocab = {"<unk>", "x"};
  const ModelConfig back = ModelConfig::from_json(d.to_json());
  CHECK(back.to_json() == d.to_json());
}

TEST_CASE("unknown tokens map to index zero") {
  ModelConfig c;
  c.vocab = {"<unk>", "cat", "dog"};
  const Grounder model(c, 1);
  CHECK(model.encode_tokens({"dog", "bird", "cat"}) == std::vector<int>{2, 0, 1});
  const std::vector<std::string> v = build_vocab(scenes(3));
  CHECK(v.front() == "<unk>");
  CHECK(std::is_sorted(v.begin() + 1, v.end()));
}

TEST_CASE("checkpoint round trip") {
  vdg::test::TempDir dir("grounder");
  const auto dps = scenes(3);
  const Grounder model(small_config(dps, true), 5);
  model.save(dir / "m.vdgw", {{"note", "x"}});
  nlohmann::json meta;
  const Grounder back = Grounder::load(dir / "m.vdgw", &meta);
  CHECK(meta.at("note") == "x");
  CHECK(back.config().to_json() == model.config().to_json());
  const auto g = model.gold_graph(dps[2]);
  const GroundingOutput a = model.forward(dps[2], &*g), b = back.forward(dps[2], &*g);
  CHECK((a.token_dists - b.token_dists).cwiseAbs().maxCoeff() < 1e-4);
  CHECK(std::abs(a.boxes[0].cx - b.boxes[0].cx) < 1e-4);
}

TEST_CASE("rank boxes") {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(3, 5);
  // Mention covers positions 1 and 2; per-query maxima 0.1, 0.7, 0.3.
  d.row(0) << 0.6, 0.1, 0.05, 0.05, 0.2;
  d.row(1) << 0.1, 0.1, 0.7, 0.05, 0.05;
  d.row(2) << 0.3, 0.3, 0.2, 0.1, 0.1;
  const Mention m{"m", {1, 3}, MentionKind::NounPhrase, "c"};
  auto r = rank_boxes(m, dists_only(d));
  REQUIRE(r.size() == 3);
  CHECK(r[0].query == 1);
  CHECK(r[1].query == 2);
  CHECK(r[2].query == 0);
  CHECK(r[0].score == doctest::Approx(0.7));

  const Mention single{"p", {0, 1}, MentionKind::Pronoun, "c"};
  r = rank_boxes(single, dists_only(d));
  CHECK(r[0].query == 0);
  CHECK(r[0].score == 0.6);
  CHECK(r[2].score == 0.1);

  const Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(4, 5, 0.2);
  r = rank_boxes(m, dists_only(flat), 3);
  REQUIRE(r.size() == 3);
  CHECK(r[0].query == 0);
  CHECK(r[1].query == 1);
  CHECK(r[2].query == 2);

  CHECK_THROWS_AS(rank_boxes({"x", {3, 6}, MentionKind::NounPhrase, "c"}, dists_only(d)),
                  PreconditionError);
}

TEST_CASE("autodiff loss matches the value-level loss") {
  const auto dps = scenes(6, 2);
  const Grounder model(small_config(dps, true), 7);
  const LossWeights w;
  for (const auto& dp : dps) {
    const auto g = model.gold_graph(dp);
    const GroundingVars vars = model.forward_graph(dp, &*g);
    const GroundingOutput out = vars.values();
    const auto golds = gold_objects(dp);
    const Assignment a = hungarian_assign(matching_cost(out, golds, w));
    const LossReport ref = total_loss(out, golds, w, a);
    const LossVars lv = total_loss_var(vars, golds, w, a);
    CHECK(lv.total.item() == doctest::Approx(ref.total).epsilon(1e-10));
    CHECK(lv.report.giou == doctest::Approx(ref.giou).epsilon(1e-10));
    CHECK(lv.report.align == doctest::Approx(ref.align).epsilon(1e-10));
  }
}

TEST_CASE("model gradients agree with central differences") {
  const auto dps = scenes(2);
  ModelConfig c = small_config(dps, true);
  c.rgcn_activation = Activation::Tanh;
  Grounder model(c, 11);
  const DataPoint& dp = dps[0];
  const auto g = model.gold_graph(dp);
  const auto golds = gold_objects(dp);
  const LossWeights w;
  const Assignment a = hungarian_assign(matching_cost(model.forward(dp, &*g), golds, w));
  auto loss = [&] { return total_loss_var(model.forward_graph(dp, &*g), golds, w, a).total; };

  model.params().zero_grad();
  loss().backward();
  std::mt19937_64 rng(1);
  double worst = 0.0;
  int checked = 0;
  for (auto& p : model.params().params()) {
    const Eigen::MatrixXd analytic = p.var.grad_or_zero();
    // A few entries per tensor keep the test fast.
    for (int k = 0; k < 3; ++k) {
      const Eigen::Index i = std::uniform_int_distribution<Eigen::Index>(
          0, p.var.value().size() - 1)(rng);
      double& x = p.var.mutable_value().data()[i];
      const double keep = x, eps = 1e-6;
      x = keep + eps;
      const double up = loss().item();
      x = keep - eps;
      const double down = loss().item();
      x = keep;
      const double numeric = (up - down) / (2 * eps);
      const double scale = std::max({std::abs(numeric), std::abs(analytic.data()[i]), 1e-4});
      worst = std::max(worst, std::abs(numeric - analytic.data()[i]) / scale);
      ++checked;
    }
  }
  CHECK(checked > 50);
  CHECK(worst < 1e-3);
}
