/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "vdg/matchloss.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "vdg/error.hpp"

namespace vdg {

namespace {

constexpr double kLogFloor = 1e-12;

double check_weight(double w, const char* name) {
  if (!(w >= 0.0) || !std::isfinite(w)) {
    throw PreconditionError(std::string("loss weight ") + name + " must be >= 0");
  }
  return w;
}

// Pixel corners of a normalized prediction; may extend past the image.
std::array<double, 4> pixel_corners(const NormBox& b, ImageSize size) {
  return {(b.cx - 0.5 * b.w) * size.width, (b.cy - 0.5 * b.h) * size.height,
          (b.cx + 0.5 * b.w) * size.width, (b.cy + 0.5 * b.h) * size.height};
}

double box_giou(const NormBox& pred, const GoldObject& gold) {
  const auto p = pixel_corners(pred, gold.image_size);
  const Rect& g = gold.rect;
  return detail::giou_xyxy(p[0], p[1], p[2], p[3], g.x1(), g.y1(), g.x2(), g.y2());
}

double row_log_softmax_at(const Eigen::RowVectorXd& row, Eigen::Index idx) {
  const double m = row.maxCoeff();
  return row(idx) - m - std::log((row.array() - m).exp().sum());
}

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd y = x;
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double n = y.row(r).norm();
    y.row(r) /= std::max(n, 1e-12);
  }
  return y;
}

// Queries matched to golds that refer to each token.
std::map<int, std::vector<int>> queries_by_token(const Assignment& assignment,
                                                 const std::vector<GoldObject>& golds) {
  std::map<int, std::vector<int>> out;
  for (size_t g = 0; g < golds.size(); ++g) {
    for (int p : golds[g].positions) out[p].push_back(assignment[g]);
  }
  for (auto& [t, qs] : out) {
    std::sort(qs.begin(), qs.end());
    qs.erase(std::unique(qs.begin(), qs.end()), qs.end());
  }
  return out;
}

void check_assignment(const Assignment& assignment, const std::vector<GoldObject>& golds,
                      Eigen::Index queries) {
  if (assignment.size() != golds.size()) {
    throw PreconditionError("assignment does not cover every gold object");
  }
  std::set<int> used;
  for (int q : assignment) {
    if (q < 0 || q >= queries || !used.insert(q).second) {
      throw PreconditionError("assignment is not an injection into the queries");
    }
  }
}

}  // namespace

std::vector<GoldObject> gold_objects(const DataPoint& dp) {
  std::vector<GoldObject> out;
  for (const auto& chain : dp.chains) {
    std::set<int> positions;
    for (const auto& mid : chain.mention_ids) {
      const Mention* m = dp.find_mention(mid);
      if (m == nullptr) continue;
      for (int p = m->span.start; p < m->span.end; ++p) positions.insert(p);
    }
    if (positions.empty()) continue;
    for (const auto& bid : chain.box_ids) {
      const GoldBox* b = dp.find_box(bid);
      if (b == nullptr) continue;
      out.push_back({chain.id, b->id, b->rect, b->image_size,
                     to_norm_box(b->rect, b->image_size),
                     std::vector<int>(positions.begin(), positions.end())});
    }
  }
  return out;
}

Eigen::VectorXd soft_token_target(std::span<const int> positions, int L) {
  Eigen::VectorXd t = Eigen::VectorXd::Zero(L + 1);
  if (positions.empty()) {
    t(L) = 1.0;
    return t;
  }
  const double mass = 1.0 / static_cast<double>(positions.size());
  for (int p : positions) {
    if (p < 0 || p >= L) throw PreconditionError("token position outside [0, L)");
    t(p) += mass;
  }
  return t;
}

double grounding_loss(const Eigen::VectorXd& pred, const Eigen::VectorXd& target) {
  if (pred.size() != target.size()) {
    throw DimensionError("grounding_loss: distribution sizes differ");
  }
  double loss = 0.0;
  for (Eigen::Index p = 0; p < pred.size(); ++p) {
    if (target(p) != 0.0) loss -= target(p) * std::log(std::max(pred(p), kLogFloor));
  }
  return loss;
}

void LossWeights::validate() const {
  const double s = check_weight(l1, "l1") + check_weight(giou, "giou") +
                   check_weight(token, "token") + check_weight(align, "align");
  if (s == 0.0) throw PreconditionError("loss weights are all zero");
}

Eigen::MatrixXd matching_cost(const GroundingOutput& out, const std::vector<GoldObject>& golds,
                              const LossWeights& weights) {
  const auto N = static_cast<Eigen::Index>(out.boxes.size());
  const auto G = static_cast<Eigen::Index>(golds.size());
  if (G > N) throw PreconditionError("more gold objects than queries");
  const int L = static_cast<int>(out.token_dists.cols()) - 1;
  Eigen::MatrixXd cost(N, G);
  for (Eigen::Index g = 0; g < G; ++g) {
    const Eigen::VectorXd target = soft_token_target(golds[g].positions, L);
    for (Eigen::Index q = 0; q < N; ++q) {
      const NormBox& b = out.boxes[q];
      cost(q, g) = weights.token * grounding_loss(out.token_dists.row(q).transpose(), target) +
                   weights.l1 * l1_box_distance(b, golds[g].box) +
                   weights.giou * (1.0 - box_giou(b, golds[g]));
    }
  }
  return cost;
}

Assignment hungarian_assign(const Eigen::MatrixXd& cost) {
  // Shortest augmenting paths with potentials; golds are the rows of the
  // transposed problem so that rows <= columns.
  const int n = static_cast<int>(cost.cols());  // golds
  const int m = static_cast<int>(cost.rows());  // queries
  if (n > m) throw PreconditionError("more gold objects than queries");
  if (!cost.allFinite()) throw PreconditionError("cost matrix has non-finite entries");
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(j - 1, i0 - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment a(static_cast<size_t>(n), -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) a[static_cast<size_t>(p[j] - 1)] = j - 1;
  }
  return a;
}

double contrastive_alignment_loss(const Eigen::MatrixXd& query_states,
                                  const Eigen::MatrixXd& token_states,
                                  const Assignment& assignment,
                                  const std::vector<GoldObject>& golds, double temperature) {
  check_assignment(assignment, golds, query_states.rows());
  if (golds.empty()) return 0.0;
  const Eigen::MatrixXd sim =
      normalize_rows(query_states) * normalize_rows(token_states).transpose() / temperature;

  double o2t = 0.0;
  for (size_t g = 0; g < golds.size(); ++g) {
    const Eigen::RowVectorXd row = sim.row(assignment[g]);
    double acc = 0.0;
    for (int p : golds[g].positions) acc -= row_log_softmax_at(row, p);
    o2t += acc / static_cast<double>(golds[g].positions.size());
  }
  o2t /= static_cast<double>(golds.size());

  const auto by_token = queries_by_token(assignment, golds);
  double t2o = 0.0;
  for (const auto& [t, qs] : by_token) {
    const Eigen::RowVectorXd col = sim.col(t).transpose();
    double acc = 0.0;
    for (int q : qs) acc -= row_log_softmax_at(col, q);
    t2o += acc / static_cast<double>(qs.size());
  }
  t2o /= static_cast<double>(by_token.size());
  return 0.5 * (o2t + t2o);
}

LossReport total_loss(const GroundingOutput& out, const std::vector<GoldObject>& golds,
                      const LossWeights& weights, const Assignment& assignment,
                      const LossOptions& options) {
  const auto N = static_cast<Eigen::Index>(out.boxes.size());
  check_assignment(assignment, golds, N);
  const int L = static_cast<int>(out.token_dists.cols()) - 1;
  const double norm = std::max<double>(1.0, static_cast<double>(golds.size()));

  LossReport r;
  std::vector<char> matched(static_cast<size_t>(N), 0);
  for (size_t g = 0; g < golds.size(); ++g) {
    const int q = assignment[g];
    matched[q] = 1;
    r.l1 += l1_box_distance(out.boxes[q], golds[g].box);
    r.giou += 1.0 - box_giou(out.boxes[q], golds[g]);
    r.token += grounding_loss(out.token_dists.row(q).transpose(),
                              soft_token_target(golds[g].positions, L));
  }
  const Eigen::VectorXd no_object = soft_token_target({}, L);
  for (Eigen::Index q = 0; q < N; ++q) {
    if (!matched[q]) {
      r.token += options.eos_coef *
                 grounding_loss(out.token_dists.row(q).transpose(), no_object);
    }
  }
  r.l1 /= norm;
  r.giou /= norm;
  r.token /= norm;
  r.align = contrastive_alignment_loss(out.query_states, out.token_states, assignment, golds,
                                       options.temperature);
  r.total = weights.l1 * r.l1 + weights.giou * r.giou + weights.token * r.token +
            weights.align * r.align;
  return r;
}

LossVars total_loss_var(const GroundingVars& out, const std::vector<GoldObject>& golds,
                        const LossWeights& weights, const Assignment& assignment,
                        const LossOptions& options) {
  const Eigen::Index N = out.boxes.rows();
  check_assignment(assignment, golds, N);
  const Eigen::Index Lp1 = out.token_log_probs.cols();
  const int L = static_cast<int>(Lp1) - 1;
  const auto G = static_cast<Eigen::Index>(golds.size());
  const double norm = std::max<double>(1.0, static_cast<double>(G));

  // Soft-token term as one weighted sum over clamped log-probabilities.
  Eigen::MatrixXd token_w = Eigen::MatrixXd::Zero(N, Lp1);
  std::vector<char> matched(static_cast<size_t>(N), 0);
  for (Eigen::Index g = 0; g < G; ++g) {
    const int q = assignment[g];
    matched[q] = 1;
    token_w.row(q) = soft_token_target(golds[g].positions, L).transpose() / norm;
  }
  for (Eigen::Index q = 0; q < N; ++q) {
    if (!matched[q]) token_w(q, L) = options.eos_coef / norm;
  }
  const ag::Var logp = ag::maximum(
      out.token_log_probs, ag::constant(Eigen::MatrixXd::Constant(N, Lp1, std::log(kLogFloor))));
  const ag::Var token = ag::scale(ag::sum(ag::mul(ag::constant(std::move(token_w)), logp)), -1.0);

  LossVars result;
  ag::Var total = ag::scale(token, weights.token);

  if (G > 0) {
    std::vector<int> rows(assignment.begin(), assignment.end());
    const ag::Var pred = ag::gather_rows(out.boxes, rows);
    Eigen::MatrixXd gold_norm(G, 4), gold_px(G, 4), scale_px(G, 4);
    for (Eigen::Index g = 0; g < G; ++g) {
      const auto& o = golds[g];
      gold_norm.row(g) << o.box.cx, o.box.cy, o.box.w, o.box.h;
      gold_px.row(g) << o.rect.x1(), o.rect.y1(), o.rect.x2(), o.rect.y2();
      scale_px.row(g) << o.image_size.width, o.image_size.height, o.image_size.width,
          o.image_size.height;
    }
    const ag::Var l1 = ag::scale(
        ag::sum(ag::abs(ag::sub(pred, ag::constant(std::move(gold_norm))))), 1.0 / norm);

    // Corners in pixels: (c -/+ s/2) * size.
    const ag::Var centers = ag::slice_cols(pred, 0, 2);
    const ag::Var half = ag::scale(ag::slice_cols(pred, 2, 2), 0.5);
    const ag::Var corners = ag::mul(ag::concat_cols({ag::sub(centers, half), ag::add(centers, half)}),
                                    ag::constant(std::move(scale_px)));
    const ag::Var gc = ag::constant(std::move(gold_px));
    auto col = [](const ag::Var& v, int c) { return ag::slice_cols(v, c, 1); };
    const ag::Var px1 = col(corners, 0), py1 = col(corners, 1), px2 = col(corners, 2),
                  py2 = col(corners, 3);
    const ag::Var gx1 = col(gc, 0), gy1 = col(gc, 1), gx2 = col(gc, 2), gy2 = col(gc, 3);
    const ag::Var inter =
        ag::mul(ag::clamp_min(ag::sub(ag::minimum(px2, gx2), ag::maximum(px1, gx1)), 0.0),
                ag::clamp_min(ag::sub(ag::minimum(py2, gy2), ag::maximum(py1, gy1)), 0.0));
    const ag::Var area_p = ag::mul(ag::sub(px2, px1), ag::sub(py2, py1));
    const ag::Var area_g = ag::mul(ag::sub(gx2, gx1), ag::sub(gy2, gy1));
    const ag::Var uni = ag::sub(ag::add(area_p, area_g), inter);
    const ag::Var hull = ag::mul(ag::sub(ag::maximum(px2, gx2), ag::minimum(px1, gx1)),
                                 ag::sub(ag::maximum(py2, gy2), ag::minimum(py1, gy1)));
    const ag::Var giou_v = ag::sub(ag::div(inter, uni), ag::div(ag::sub(hull, uni), hull));
    const ag::Var giou_term =
        ag::scale(ag::add_scalar(ag::scale(ag::sum(giou_v), -1.0), static_cast<double>(G)),
                  1.0 / norm);

    // Alignment: log-softmax over tokens for matched queries, and over
    // queries for referring tokens.
    const int n = static_cast<int>(out.token_states.rows());
    const ag::Var sim = ag::scale(ag::matmul_nt(ag::l2_normalize_rows(out.query_states),
                                                ag::l2_normalize_rows(out.token_states)),
                                  1.0 / options.temperature);
    Eigen::MatrixXd w_o2t = Eigen::MatrixXd::Zero(N, n);
    for (Eigen::Index g = 0; g < G; ++g) {
      const double w = 1.0 / (static_cast<double>(golds[g].positions.size()) * G);
      for (int p : golds[g].positions) w_o2t(assignment[g], p) += w;
    }
    const auto by_token = queries_by_token(assignment, golds);
    Eigen::MatrixXd w_t2o = Eigen::MatrixXd::Zero(n, N);
    for (const auto& [t, qs] : by_token) {
      const double w = 1.0 / (static_cast<double>(qs.size()) * by_token.size());
      for (int q : qs) w_t2o(t, q) += w;
    }
    const ag::Var o2t =
        ag::sum(ag::mul(ag::constant(std::move(w_o2t)), ag::log_softmax_rows(sim)));
    const ag::Var t2o = ag::sum(
        ag::mul(ag::constant(std::move(w_t2o)), ag::log_softmax_rows(ag::transpose(sim))));
    const ag::Var align = ag::scale(ag::add(o2t, t2o), -0.5);

    total = ag::add(total, ag::scale(l1, weights.l1));
    total = ag::add(total, ag::scale(giou_term, weights.giou));
    total = ag::add(total, ag::scale(align, weights.align));
    result.report.l1 = l1.item();
    result.report.giou = giou_term.item();
    result.report.align = align.item();
  }
  result.report.token = token.item();
  result.report.total = total.item();
  result.total = total;
  return result;
}

}  // namespace vdg
