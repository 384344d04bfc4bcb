/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "vdg/corpus.hpp"
#include "vdg/evaluator.hpp"
#include "vdg/grounder.hpp"
#include "vdg/matchloss.hpp"

namespace vdg {

struct TrainConfig {
  double base_lr = 1e-5;
  double head_lr = 1e-4;
  double weight_decay = 1e-4;
  int batch_size = 16;
  double clip_norm = 0.1;
  int epochs = 40;
  uint64_t seed = 1;
  LossWeights weights;
  LossOptions loss;
  // Select the epoch with the best dev Recall@1; otherwise keep the last.
  bool select_on_dev = true;
  int eval_threads = 1;

  /// Settings for training the toy model from scratch on the synthetic
  /// corpus within a few minutes.
  static TrainConfig desk();
  static TrainConfig from_preset(const std::string& name);  // "standard" or "desk"

  void validate() const;
  nlohmann::json to_json() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  LossReport mean_loss;  // averaged over training datapoints
  double max_grad_norm = 0.0;  // largest pre-clip norm seen this epoch
  double dev_recall_at1 = -1.0;  // -1 when there is no dev split
};

struct RunRecord {
  uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_dev_recall_at1 = -1.0;
  std::string checkpoint;

  nlohmann::json to_json() const;
};

struct TrainResult {
  std::unique_ptr<Grounder> model;  // best weights restored
  RunRecord record;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains a fresh model. An empty vocabulary in `model_config` (only
/// "<unk>") is filled from the train split. Throws PreconditionError when
/// the train split is empty.
TrainResult train(const Corpus& corpus, ModelConfig model_config, const TrainConfig& config,
                  const GraphProvider& graphs = {}, const EpochCallback& on_epoch = {});

/// One optimisation step on a batch of datapoints: per-sample forward,
/// matching and loss, accumulated gradients scaled by 1 / batch size,
/// global clipping, then AdamW. Returns the summed loss reports and the
/// pre-clip gradient norm.
struct StepResult {
  LossReport loss_sum;
  double grad_norm = 0.0;
};
StepResult train_step(Grounder& model, nn::AdamW& optimizer, const TrainConfig& config,
                      const std::vector<const DataPoint*>& batch,
                      const GraphProvider& graphs = {});

}  // namespace vdg
