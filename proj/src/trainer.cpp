/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "vdg/trainer.hpp"

#include <cmath>
#include <numeric>

#include "vdg/error.hpp"

namespace vdg {

namespace {

void add_into(LossReport& acc, const LossReport& r, double w = 1.0) {
  acc.l1 += w * r.l1;
  acc.giou += w * r.giou;
  acc.token += w * r.token;
  acc.align += w * r.align;
  acc.total += w * r.total;
}

nlohmann::json loss_json(const LossReport& r) {
  return {{"l1", r.l1}, {"giou", r.giou}, {"token", r.token}, {"align", r.align},
          {"total", r.total}};
}

double dev_recall(const Grounder& model, const std::vector<DataPoint>& dev,
                  const GraphProvider& graphs, int threads) {
  const auto preds = predict_split(model, dev, graphs, threads);
  return evaluate(dev, preds, threads).at(Protocol::AnyBox, 1, MentionGroup::Overall);
}

}  // namespace

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.base_lr = 3e-4;
  c.head_lr = 1e-3;
  c.batch_size = 1;
  return c;
}

TrainConfig TrainConfig::from_preset(const std::string& name) {
  if (name == "standard") return TrainConfig{};
  if (name == "desk") return desk();
  throw PreconditionError("unknown training preset '" + name + "' (expected standard or desk)");
}

void TrainConfig::validate() const {
  if (!(base_lr >= 0.0) || !(head_lr >= 0.0) || !(weight_decay >= 0.0)) {
    throw PreconditionError("learning rates and weight decay must be non-negative");
  }
  if (batch_size < 1) throw PreconditionError("batch size must be positive");
  if (!(clip_norm > 0.0)) throw PreconditionError("clip norm must be positive");
  if (epochs < 1) throw PreconditionError("epoch count must be positive");
  weights.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"base_lr", base_lr},
          {"head_lr", head_lr},
          {"weight_decay", weight_decay},
          {"batch_size", batch_size},
          {"clip_norm", clip_norm},
          {"epochs", epochs},
          {"seed", seed},
          {"loss_weights",
           {{"l1", weights.l1}, {"giou", weights.giou}, {"token", weights.token},
            {"align", weights.align}}},
          {"eos_coef", loss.eos_coef},
          {"temperature", loss.temperature}};
}

nlohmann::json RunRecord::to_json() const {
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& e : epochs) {
    eps.push_back({{"epoch", e.epoch},
                   {"loss", loss_json(e.mean_loss)},
                   {"max_grad_norm", e.max_grad_norm},
                   {"dev_recall_at1", e.dev_recall_at1}});
  }
  return {{"seed", seed},
          {"epochs", eps},
          {"best_epoch", best_epoch},
          {"best_dev_recall_at1", best_dev_recall_at1},
          {"checkpoint", checkpoint}};
}

StepResult train_step(Grounder& model, nn::AdamW& optimizer, const TrainConfig& config,
                      const std::vector<const DataPoint*>& batch, const GraphProvider& graphs) {
  StepResult result;
  auto& store = model.params();
  store.zero_grad();
  const double share = 1.0 / static_cast<double>(batch.size());
  for (const DataPoint* dp : batch) {
    const std::optional<CorefGraph> graph = graphs ? graphs(*dp) : model.gold_graph(*dp);
    const GroundingVars vars = model.forward_graph(*dp, graph ? &*graph : nullptr);
    const auto golds = gold_objects(*dp);
    const GroundingOutput values = vars.values();
    const Assignment assignment =
        hungarian_assign(matching_cost(values, golds, config.weights));
    const LossVars loss = total_loss_var(vars, golds, config.weights, assignment, config.loss);
    ag::scale(loss.total, share).backward();
    add_into(result.loss_sum, loss.report);
  }
  result.grad_norm = nn::clip_grad_norm(store, config.clip_norm);
  optimizer.step();
  return result;
}

TrainResult train(const Corpus& corpus, ModelConfig model_config, const TrainConfig& config,
                  const GraphProvider& graphs, const EpochCallback& on_epoch) {
  config.validate();
  const auto& train_split = corpus.split("train");
  const auto& dev_split = corpus.split("dev");
  if (train_split.empty()) throw PreconditionError("the train split is empty");
  if (model_config.vocab.size() <= 1) model_config.vocab = build_vocab(train_split);

  TrainResult result;
  result.model = std::make_unique<Grounder>(model_config, config.seed);
  result.record.seed = config.seed;
  Grounder& model = *result.model;
  nn::AdamW optimizer(model.params(), {config.base_lr, config.head_lr, config.weight_decay,
                                       0.9, 0.999, 1e-8});
  nn::Rng order_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);

  std::vector<size_t> order(train_split.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::vector<ag::Matrix> best;
  const bool use_dev = config.select_on_dev && !dev_split.empty();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    order_rng.shuffle(order);
    EpochRecord rec;
    rec.epoch = epoch;
    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      std::vector<const DataPoint*> batch;
      for (size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        batch.push_back(&train_split[order[i]]);
      }
      const StepResult step = train_step(model, optimizer, config, batch, graphs);
      add_into(rec.mean_loss, step.loss_sum, 1.0 / static_cast<double>(order.size()));
      rec.max_grad_norm = std::max(rec.max_grad_norm, step.grad_norm);
    }
    if (use_dev) {
      rec.dev_recall_at1 = dev_recall(model, dev_split, graphs, config.eval_threads);
      if (rec.dev_recall_at1 > result.record.best_dev_recall_at1) {
        result.record.best_dev_recall_at1 = rec.dev_recall_at1;
        result.record.best_epoch = epoch;
        best = model.params().snapshot();
      }
    }
    result.record.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (use_dev) {
    model.params().restore(best);
  } else {
    result.record.best_epoch = config.epochs;
  }
  return result;
}

}  // namespace vdg
