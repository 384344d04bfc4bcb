/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "vdg/error.hpp"
#include "vdg/grounder.hpp"
#include "vdg/matchloss.hpp"

using namespace vdg;

namespace {

// Exhaustive minimum over injective maps of the G columns to distinct rows.
double brute_force_min(const Eigen::MatrixXd& cost) {
  const int N = static_cast<int>(cost.rows()), G = static_cast<int>(cost.cols());
  std::vector<int> rows(N);
  std::iota(rows.begin(), rows.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  // Every permutation's first G entries enumerate every injection (with
  // repeats), which is plenty for N <= 7.
  do {
    double total = 0.0;
    for (int g = 0; g < G; ++g) total += cost(rows[g], g);
    best = std::min(best, total);
  } while (std::next_permutation(rows.begin(), rows.end()));
  return best;
}

double assigned_cost(const Eigen::MatrixXd& cost, const Assignment& a) {
  double total = 0.0;
  for (size_t g = 0; g < a.size(); ++g) total += cost(a[g], static_cast<Eigen::Index>(g));
  return total;
}

GoldObject gold(NormBox box, std::vector<int> positions, ImageSize size = {100, 100}) {
  return {"c", "b", to_rect(box, size), size, box, std::move(positions)};
}

GroundingOutput output(std::vector<NormBox> boxes, Eigen::MatrixXd dists, int tokens = 4,
                       int dim = 3) {
  GroundingOutput out;
  out.boxes = std::move(boxes);
  out.token_dists = std::move(dists);
  out.query_states = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(out.boxes.size()), dim);
  out.token_states = Eigen::MatrixXd::Ones(tokens, dim);
  return out;
}

double entropy(const Eigen::VectorXd& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0) h -= p(i) * std::log(p(i));
  }
  return h;
}

}  // namespace

TEST_CASE("soft token targets") {
  const std::vector<int> three{2, 3, 4};
  const Eigen::VectorXd t = soft_token_target(three, 10);
  REQUIRE(t.size() == 11);
  for (int i = 0; i < 11; ++i) {
    CHECK(t(i) == doctest::Approx(i >= 2 && i <= 4 ? 1.0 / 3.0 : 0.0));
  }
  const std::vector<int> one{5};
  CHECK(soft_token_target(one, 10)(5) == 1.0);
  CHECK(soft_token_target(one, 10).sum() == 1.0);
  const Eigen::VectorXd none = soft_token_target({}, 10);
  CHECK(none(10) == 1.0);
  CHECK(none.sum() == 1.0);
}

TEST_CASE("grounding loss closed forms") {
  const std::vector<int> three{0, 1, 2};
  const Eigen::VectorXd u = soft_token_target(three, 4);
  CHECK(grounding_loss(u, u) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  const std::vector<int> one{1};
  const Eigen::VectorXd hot = soft_token_target(one, 4);
  CHECK(grounding_loss(hot, hot) == 0.0);
}

TEST_CASE("grounding loss is at least the target entropy") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    Eigen::VectorXd p(6), q(6);
    for (int i = 0; i < 6; ++i) {
      p(i) = u(rng);
      q(i) = u(rng);
    }
    if (trial % 2) p(trial % 6) = 0.0;  // sparse targets too
    p /= p.sum();
    q /= q.sum();
    CHECK(grounding_loss(q, p) >= entropy(p) - 1e-12);
    CHECK(std::abs(grounding_loss(p, p) - entropy(p)) < 1e-9);
  }
}

TEST_CASE("hungarian small cases") {
  Eigen::MatrixXd c(2, 2);
  c << 1, 2, 2, 1;
  const Assignment a = hungarian_assign(c);
  CHECK(a == Assignment{0, 1});
  CHECK(assigned_cost(c, a) == 2.0);

  Eigen::MatrixXd diag = Eigen::MatrixXd::Constant(4, 4, 100.0);
  diag.diagonal().setZero();
  CHECK(hungarian_assign(diag) == Assignment{0, 1, 2, 3});

  CHECK(hungarian_assign(Eigen::MatrixXd(3, 0)).empty());
  CHECK_THROWS_AS(hungarian_assign(Eigen::MatrixXd::Zero(2, 3)), PreconditionError);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 2);
  bad(1, 0) = std::nan("");
  CHECK_THROWS_AS(hungarian_assign(bad), PreconditionError);
}

TEST_CASE("hungarian equals brute force on random matrices") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::uniform_int_distribution<int> nd(1, 7);
  const auto start = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 1000; ++trial) {
    const int N = nd(rng);
    const int G = std::uniform_int_distribution<int>(0, std::min(N, 5))(rng);
    Eigen::MatrixXd c(N, G);
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = u(rng);
    const Assignment a = hungarian_assign(c);
    REQUIRE(a.size() == static_cast<size_t>(G));
    std::vector<int> used = a;
    std::sort(used.begin(), used.end());
    CHECK(std::adjacent_find(used.begin(), used.end()) == used.end());
    CHECK(assigned_cost(c, a) == doctest::Approx(brute_force_min(c)).epsilon(1e-12));
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(secs < 10.0);
}

TEST_CASE("matching cost entries") {
  const GoldObject g = gold({0.5, 0.5, 0.5, 0.5}, {1, 2});
  Eigen::MatrixXd dists(2, 5);
  dists << 0.1, 0.4, 0.4, 0.05, 0.05,  //
      0.2, 0.2, 0.2, 0.2, 0.2;
  const GroundingOutput out = output({{0.5, 0.5, 0.5, 0.5}, {0.25, 0.25, 0.5, 0.5}}, dists);
  const Eigen::MatrixXd c = matching_cost(out, {g}, LossWeights{});
  // Query 0: exact box, token term -ln 0.4.
  CHECK(c(0, 0) == doctest::Approx(-std::log(0.4)).epsilon(1e-12));
  // Query 1: -ln 0.2 + 5 * 0.5 + 2 * (1 - (1/7 - 1250/5625)).
  const double expect = -std::log(0.2) + 2.5 + 2.0 * (1.0 - (1.0 / 7.0 - 1250.0 / 5625.0));
  CHECK(c(1, 0) == doctest::Approx(expect).epsilon(1e-12));

  Eigen::MatrixXd exact(1, 5);
  exact << 0, 1, 0, 0, 0;
  const GroundingOutput same = output({{0.5, 0.5, 0.5, 0.5}}, exact);
  CHECK(matching_cost(same, {gold({0.5, 0.5, 0.5, 0.5}, {1})}, LossWeights{})(0, 0) ==
        doctest::Approx(0.0));

  const LossWeights doubled{10.0, 4.0, 2.0, 2.0};
  const Eigen::MatrixXd c2 = matching_cost(out, {g}, doubled);
  CHECK(c2.isApprox(2.0 * c));
  CHECK(hungarian_assign(c2) == hungarian_assign(c));
}

TEST_CASE("loss weights validation") {
  CHECK_NOTHROW(LossWeights{}.validate());
  CHECK_NOTHROW((LossWeights{0, 0, 1, 0}).validate());
  CHECK_THROWS_AS((LossWeights{0, 0, 0, 0}).validate(), PreconditionError);
  CHECK_THROWS_AS((LossWeights{-1, 0, 1, 0}).validate(), PreconditionError);
}

TEST_CASE("contrastive alignment closed forms") {
  const std::vector<GoldObject> golds{gold({0.5, 0.5, 0.2, 0.2}, {1, 2})};
  const Assignment a{0};
  // All vectors identical: uniform softmax in both directions.
  const Eigen::MatrixXd q = Eigen::MatrixXd::Ones(3, 4), t = Eigen::MatrixXd::Ones(5, 4);
  CHECK(contrastive_alignment_loss(q, t, a, golds, 0.07) ==
        doctest::Approx(0.5 * (std::log(5.0) + std::log(3.0))).epsilon(1e-12));

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  Eigen::MatrixXd qr(3, 4), tr(5, 4);
  for (Eigen::Index i = 0; i < qr.size(); ++i) qr.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < tr.size(); ++i) tr.data()[i] = n(rng);
  const double base = contrastive_alignment_loss(qr, tr, a, golds, 0.07);
  CHECK(contrastive_alignment_loss(3.7 * qr, 3.7 * tr, a, golds, 0.07) ==
        doctest::Approx(base).epsilon(1e-12));

  // The matched query equals its only referring token; everything else is
  // orthogonal to both.
  const std::vector<GoldObject> single{gold({0.5, 0.5, 0.2, 0.2}, {1})};
  Eigen::MatrixXd qs = Eigen::MatrixXd::Zero(2, 3), ts = Eigen::MatrixXd::Zero(3, 3);
  qs(0, 0) = 1.0;
  qs(1, 1) = 1.0;
  ts(1, 0) = 1.0;
  ts(0, 2) = 1.0;
  ts(2, 2) = 1.0;
  CHECK(contrastive_alignment_loss(qs, ts, a, single, 1e-3) < 1e-12);
  CHECK(contrastive_alignment_loss(qs, ts, {}, {}, 0.07) == 0.0);
}

TEST_CASE("total loss on perfect predictions") {
  Eigen::MatrixXd dists = Eigen::MatrixXd::Zero(2, 5);
  dists(0, 3) = 1.0;
  dists(1, 4) = 1.0;  // unmatched query predicts no-object
  const NormBox b{0.4, 0.6, 0.3, 0.2};
  const GroundingOutput out = output({b, {0.5, 0.5, 0.1, 0.1}}, dists);
  const LossReport r = total_loss(out, {gold(b, {3})}, LossWeights{}, {0});
  CHECK(r.l1 == 0.0);
  CHECK(r.giou == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(r.token == 0.0);
}

TEST_CASE("token-only weights leave the token term") {
  Eigen::MatrixXd dists = Eigen::MatrixXd::Constant(2, 5, 0.2);
  const GroundingOutput out = output({{0.2, 0.2, 0.1, 0.1}, {0.7, 0.7, 0.3, 0.3}}, dists);
  const LossReport r = total_loss(out, {gold({0.5, 0.5, 0.2, 0.2}, {0, 1})}, {0, 0, 1, 0}, {1});
  CHECK(r.total == r.token);
  CHECK(r.l1 > 0.0);
}

TEST_CASE("one gold, two queries by hand") {
  Eigen::MatrixXd dists(2, 5);
  dists << 0.1, 0.4, 0.4, 0.05, 0.05,  //
      0.2, 0.2, 0.2, 0.2, 0.2;
  const GroundingOutput out = output({{0.5, 0.5, 0.5, 0.5}, {0.25, 0.25, 0.5, 0.5}}, dists);
  const std::vector<GoldObject> golds{gold({0.5, 0.5, 0.5, 0.5}, {1, 2})};
  const Assignment a = hungarian_assign(matching_cost(out, golds, LossWeights{}));
  REQUIRE(a == Assignment{0});
  const LossReport r = total_loss(out, golds, {5, 2, 1, 0}, a);
  // Matched: -ln 0.4. Unmatched: 0.1 * -ln 0.2 on the no-object slot.
  const double token = -std::log(0.4) - 0.1 * std::log(0.2);
  CHECK(r.token == doctest::Approx(token).epsilon(1e-12));
  CHECK(r.l1 == 0.0);
  CHECK(r.total == doctest::Approx(token).epsilon(1e-12));
}

TEST_CASE("gold objects expand multi-box chains") {
  DataPoint dp;
  dp.image_id = "g";
  dp.image_size = {100, 100};
  dp.dialogue = Dialogue("g", {"two", "kids", "and", "a", "dog"}, {Turn{{"are", "they", "?"}, {}}});
  dp.mentions = {{"m1", {0, 2}, MentionKind::NounPhrase, "c1"},
                 {"m2", {3, 5}, MentionKind::NounPhrase, "c2"},
                 {"m3", {6, 7}, MentionKind::Pronoun, "c1"}};
  dp.chains = {{"c1", {"m1", "m3"}, {"b1", "b2"}}, {"c2", {"m2"}, {"b3"}}};
  dp.boxes = {{"b1", Rect(0, 0, 10, 10), {100, 100}},
              {"b2", Rect(10, 0, 20, 10), {100, 100}},
              {"b3", Rect(50, 50, 100, 100), {100, 100}}};
  const auto golds = gold_objects(dp);
  REQUIRE(golds.size() == 3);
  CHECK(golds[0].positions == std::vector<int>{0, 1, 6});
  CHECK(golds[1].positions == golds[0].positions);
  CHECK(golds[2].positions == std::vector<int>{3, 4});
  CHECK(golds[2].box == NormBox{0.75, 0.75, 0.5, 0.5});
}
