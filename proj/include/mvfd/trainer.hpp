#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mvfd/dataset.hpp"
#include "mvfd/distill.hpp"
#include "mvfd/gate.hpp"
#include "mvfd/model.hpp"

// Training loop: Eq.-style total loss (three cross-entropy terms plus the
// multi-view distillation loss), Adam updates with weight decay added to the
// gradient, and per-step teacher freezing driven by the gate decisions.
// Everything is a pure function of (configs, seed, dataset).

namespace mvfd::train {

using numerics::Distribution;
using numerics::Tensor;

struct AblationFlags {
  bool use_top_branch = true;
  bool use_fusion = true;
  bool use_distill = true;
  bool use_gate = true;
};

struct TrainConfig {
  double learning_rate = 1e-3;   // grid defaults: 1e-2, 1e-3, 1e-4
  double weight_decay = 1e-4;    // grid defaults: 1e-3, 1e-4, 1e-5
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double temperature = 2.0;
  bool scale_by_t_squared = true;
  std::uint64_t seed = 7;
  dataset::AugmentPolicy augment;           // extra policy applies at rebalance
  AblationFlags ablation;
  model::FusionMode fusion_mode = model::FusionMode::Attention;
  bool rebalance = true;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  distill::DistillConfig distill_config() const {
    return {temperature, scale_by_t_squared};
  }
};

/// Architecture implied by the ablation flags.
model::ModelConfig effective_model_config(model::ModelConfig base, const TrainConfig& cfg);

struct LossReport {
  double ce1 = 0.0, ce2 = 0.0, ce3 = 0.0;
  double l_kd = 0.0;
  double total = 0.0;
};

/// Per-sample total loss; absent heads contribute zero terms. Empty logits
/// tensors mark absent heads.
LossReport total_loss(const Tensor& logits1, const Tensor& logits2,
                      const Tensor& logits3, std::size_t label, const TrainConfig& cfg);

struct AdamGroup {
  std::string name;
  std::vector<Tensor> m, v;
  std::uint64_t t = 0;  // per-group step count; frozen steps do not advance it
};

struct TrainState {
  model::ModelParams params;
  std::vector<AdamGroup> adam;  // aligned with model::param_groups order
  std::uint64_t epoch = 0;      // completed epochs
  std::uint64_t step = 0;       // completed optimizer steps
  model::ModelParams best_params;
  bool has_best = false;
  double best_val_accuracy = -1.0;
  std::uint64_t best_epoch = 0;
};

TrainState init_state(const model::ModelConfig& model_cfg, const TrainConfig& cfg);

struct HistoryRow {
  std::uint64_t epoch;
  std::string split;  // "train" or "validation"
  LossReport loss;
  double accuracy_pct;
};

struct GateLogRow {
  std::uint64_t step;
  std::string pair;
  double gap, epsilon, delta;
  bool freeze;
};

struct StepInfo {
  std::uint64_t step;
  std::uint64_t epoch;
  const std::vector<gate::GateDecision>& decisions;
  const std::set<std::string>& frozen_groups;
  const TrainState& state;
};
using StepObserver = std::function<void(const StepInfo&)>;

/// One optimizer step over a batch. Returns the batch-mean loss report and
/// appends gate decisions to `gate_log`. Aborts with a diagnostic naming the
/// first non-finite tensor if the loss is not finite.
LossReport train_step(std::span<const dataset::MultiViewSample> batch, TrainState& state,
                      const TrainConfig& cfg, std::vector<GateLogRow>* gate_log,
                      const StepObserver& observer = {},
                      std::size_t* correct_out = nullptr);

/// Adam update for every non-frozen group (exposed for the freeze-contract
/// tests). Gradients must already be accumulated; weight decay is added here.
void adam_update(TrainState& state, const TrainConfig& cfg,
                 const std::set<std::string>& frozen_groups);

struct EvalOutcome {
  std::vector<int> predictions;
  LossReport mean_loss;
  double accuracy_pct = 0.0;
};

/// Forward-only pass (no augmentation, no gate).
EvalOutcome evaluate(const model::ModelParams& params,
                     std::span<const dataset::MultiViewSample> samples,
                     const TrainConfig& cfg);

struct FitResult {
  TrainState state;
  std::vector<HistoryRow> history;
  std::vector<GateLogRow> gate_log;
};

/// Full training run; when `resume_from` is given, continues that state up to
/// cfg.epochs and reproduces the uninterrupted run bit-identically.
FitResult fit(const model::ModelConfig& model_cfg, const TrainConfig& cfg,
              const dataset::DatasetSplit& splits, const StepObserver& observer = {},
              const TrainState* resume_from = nullptr);

/// Predicted class = argmax of the fusion head (main head when no fusion);
/// ties break toward the lowest class index.
std::pair<int, model::ModelOutput> infer(const model::ModelParams& params,
                                         const dataset::MultiViewSample& sample);

std::size_t argmax_lowest(const Distribution& p);

// training-state snapshots (bit-exact round trip)
void save_state(const std::filesystem::path& path, const TrainState& state);
TrainState load_state(const std::filesystem::path& path);

// CSV emission (documented header rows)
void write_history_csv(const std::filesystem::path& path,
                       const std::vector<HistoryRow>& history);
void write_gate_log_csv(const std::filesystem::path& path,
                        const std::vector<GateLogRow>& log);

}  // namespace mvfd::train
