/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vdg/corpus.hpp"
#include "vdg/grounder.hpp"

namespace vdg {

/// One supervised target: a gold box together with every token position of
/// the chain that refers to it. A chain with k boxes yields k objects that
/// share the same positions.
struct GoldObject {
  std::string chain_id;
  std::string box_id;
  Rect rect;
  ImageSize image_size;
  NormBox box;
  std::vector<int> positions;  // sorted, unique
};

std::vector<GoldObject> gold_objects(const DataPoint& dp);

/// Uniform mass over `positions`; an empty set gives the no-object target
/// (all mass at index L).
Eigen::VectorXd soft_token_target(std::span<const int> positions, int L);

/// Soft cross-entropy -sum_p target[p] * log(max(pred[p], 1e-12)).
double grounding_loss(const Eigen::VectorXd& pred, const Eigen::VectorXd& target);

struct LossWeights {
  double l1 = 5.0;
  double giou = 2.0;
  double token = 1.0;
  double align = 1.0;

  /// Throws PreconditionError on negative or all-zero weights.
  void validate() const;
};

struct LossOptions {
  double eos_coef = 0.1;      // weight of no-object targets for unmatched queries
  double temperature = 0.07;  // alignment softmax temperature
};

/// (N x G): token cross-entropy, box L1 and 1 - GIoU (pixel space), weighted.
Eigen::MatrixXd matching_cost(const GroundingOutput& out, const std::vector<GoldObject>& golds,
                              const LossWeights& weights);

/// assignment[g] = query matched to gold g.
using Assignment = std::vector<int>;

/// Minimum-cost injective assignment of the G columns of an (N x G) cost
/// matrix to distinct rows. Throws PreconditionError when G > N or when a
/// cost is not finite.
Assignment hungarian_assign(const Eigen::MatrixXd& cost);

/// Symmetric InfoNCE over cosine similarities: each matched query against
/// all tokens, and each referring token against all queries.
double contrastive_alignment_loss(const Eigen::MatrixXd& query_states,
                                  const Eigen::MatrixXd& token_states,
                                  const Assignment& assignment,
                                  const std::vector<GoldObject>& golds, double temperature);

struct LossReport {
  double l1 = 0.0;
  double giou = 0.0;
  double token = 0.0;
  double align = 0.0;
  double total = 0.0;
};

LossReport total_loss(const GroundingOutput& out, const std::vector<GoldObject>& golds,
                      const LossWeights& weights, const Assignment& assignment,
                      const LossOptions& options = {});

struct LossVars {
  ag::Var total;
  LossReport report;
};

/// Differentiable counterpart of total_loss; the report carries the same
/// per-term values.
LossVars total_loss_var(const GroundingVars& out, const std::vector<GoldObject>& golds,
                        const LossWeights& weights, const Assignment& assignment,
                        const LossOptions& options = {});

}  // namespace vdg
