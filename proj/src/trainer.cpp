#include "mvfd/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "mvfd/checkpoint.hpp"

namespace mvfd::train {

using namespace mvfd::numerics;
using model::ForwardActs;
using model::ModelOutput;
using model::ModelParams;

model::ModelConfig effective_model_config(model::ModelConfig base, const TrainConfig& cfg) {
  base.with_top_branch = cfg.ablation.use_top_branch;
  if (!cfg.ablation.use_top_branch || !cfg.ablation.use_fusion)
    base.fusion = model::FusionMode::None;
  else
    base.fusion = cfg.fusion_mode;
  if (cfg.ablation.use_gate &&
      !(cfg.ablation.use_top_branch && cfg.ablation.use_fusion && cfg.ablation.use_distill))
    fail_invalid("trainer: the gate requires the top branch, fusion, and distillation");
  return base;
}

LossReport total_loss(const Tensor& logits1, const Tensor& logits2,
                      const Tensor& logits3, std::size_t label, const TrainConfig& cfg) {
  LossReport r;
  r.ce1 = cross_entropy(softmax_forward(logits1).data, label);
  if (logits2.numel() > 0)
    r.ce2 = cross_entropy(softmax_forward(logits2).data, label);
  if (logits3.numel() > 0)
    r.ce3 = cross_entropy(softmax_forward(logits3).data, label);
  if (cfg.ablation.use_distill) {
    if (logits3.numel() > 0 && logits2.numel() > 0)
      r.l_kd = distill::multiview_kd_loss(logits1, logits2, logits3,
                                          cfg.distill_config()).total;
    else if (logits2.numel() > 0)
      r.l_kd = distill::mutual_kd_loss(logits1, logits2, cfg.distill_config()).total;
  }
  r.total = r.ce1 + r.ce2 + r.ce3 + r.l_kd;
  return r;
}

TrainState init_state(const model::ModelConfig& model_cfg, const TrainConfig& cfg) {
  TrainState state;
  Rng rng = Rng::stream(cfg.seed, "init");
  state.params = model::init_params(effective_model_config(model_cfg, cfg), rng);
  for (auto& group : model::param_groups(state.params)) {
    AdamGroup slot;
    slot.name = group.name;
    for (Tensor* t : group.tensors) {
      slot.m.emplace_back(t->shape);
      slot.v.emplace_back(t->shape);
    }
    state.adam.push_back(std::move(slot));
  }
  return state;
}

namespace {

std::size_t label_of(const dataset::MultiViewSample& s) {
  if (s.label < 0 || s.label >= dataset::kNumClasses)
    fail_invalid(cat("trainer: label ", s.label, " out of range"));
  return static_cast<std::size_t>(s.label);
}

/// cross-entropy gradient routed through softmax, scaled by `upstream`
void ce_logit_grad(const Tensor& logits, const Distribution& probs, std::size_t label,
                   double upstream, std::vector<double>& g) {
  std::vector<double> gp(probs.size(), 0.0);
  cross_entropy_backward(probs, label, upstream, gp);
  softmax_backward(Tensor(logits.shape, probs), Tensor(logits.shape, gp), g);
}

std::string find_nonfinite(TrainState& state, const ModelOutput& out) {
  auto bad = [](const std::vector<double>& v) {
    for (double x : v)
      if (!std::isfinite(x)) return true;
    return false;
  };
  for (auto& group : model::param_groups(state.params)) {
    for (std::size_t i = 0; i < group.tensors.size(); ++i) {
      if (bad(group.tensors[i]->data)) return cat("param/", group.name, "/", i);
      if (group.tensors[i]->has_grad() && bad(group.tensors[i]->grad))
        return cat("grad/", group.name, "/", i);
    }
  }
  if (bad(out.logits1.data)) return "logits1";
  if (bad(out.logits2.data)) return "logits2";
  if (bad(out.logits3.data)) return "logits3";
  return "loss";
}

struct GateAccumulator {
  std::vector<Distribution> y1, y2, y3, y_true;

  void add(const ModelOutput& out, std::size_t label) {
    Distribution one_hot(out.y1.size(), 0.0);
    one_hot[label] = 1.0;
    y1.push_back(out.y1);
    y2.push_back(out.y2);
    y3.push_back(out.y3);
    y_true.push_back(std::move(one_hot));
  }
};

const std::set<std::string> kNoFrozen;

/// Groups whose updates a frozen teacher suspends.
void frozen_groups_of(gate::Module teacher, std::set<std::string>& out) {
  if (teacher == gate::Module::Fusion) {
    out.insert("attention");
    out.insert("head_fusion");
  } else if (teacher == gate::Module::Top) {
    out.insert("branch_top");
    out.insert("head_top");
  }
}

}  // namespace

void adam_update(TrainState& state, const TrainConfig& cfg,
                 const std::set<std::string>& frozen_groups) {
  auto groups = model::param_groups(state.params);
  if (groups.size() != state.adam.size())
    fail_runtime("trainer: optimizer state does not match the parameter groups");
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (frozen_groups.count(groups[g].name)) continue;
    AdamGroup& slot = state.adam[g];
    slot.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(slot.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(slot.t));
    for (std::size_t i = 0; i < groups[g].tensors.size(); ++i) {
      Tensor& p = *groups[g].tensors[i];
      if (!p.has_grad()) p.ensure_grad();
      const bool decay = groups[g].decay[i];
      for (std::size_t k = 0; k < p.numel(); ++k) {
        double grad = p.grad[k];
        if (decay && cfg.weight_decay != 0.0) grad += cfg.weight_decay * p.data[k];
        double& m = slot.m[i].data[k];
        double& v = slot.v[i].data[k];
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad;
        p.data[k] -= cfg.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
      }
    }
  }
}

LossReport train_step(std::span<const dataset::MultiViewSample> batch, TrainState& state,
                      const TrainConfig& cfg, std::vector<GateLogRow>* gate_log,
                      const StepObserver& observer, std::size_t* correct_out) {
  if (batch.empty()) fail_invalid("train_step: empty batch");
  const auto& flags = cfg.ablation;
  model::zero_grads(state.params);

  const double scale = 1.0 / static_cast<double>(batch.size());
  LossReport mean;
  GateAccumulator gate_stats;
  ModelOutput last_out;

  auto finite = [](const Tensor& t) {
    for (double v : t.data)
      if (!std::isfinite(v)) return false;
    return true;
  };

  for (const auto& sample : batch) {
    ForwardActs acts;
    ModelOutput out = model::forward_all(sample, state.params, &acts);
    const std::size_t label = label_of(sample);
    if (!finite(out.logits1) || !finite(out.logits2) || !finite(out.logits3))
      fail_runtime(cat("train_step: non-finite loss at step ", state.step,
                       "; first non-finite tensor: ", find_nonfinite(state, out)));
    if (correct_out &&
        argmax_lowest(out.y3.empty() ? out.y1 : out.y3) == label)
      ++*correct_out;

    LossReport sample_loss = total_loss(out.logits1, out.logits2, out.logits3, label, cfg);
    mean.ce1 += scale * sample_loss.ce1;
    mean.ce2 += scale * sample_loss.ce2;
    mean.ce3 += scale * sample_loss.ce3;
    mean.l_kd += scale * sample_loss.l_kd;
    mean.total += scale * sample_loss.total;

    std::vector<double> g1(out.logits1.numel(), 0.0);
    std::vector<double> g2(out.logits2.numel(), 0.0);
    std::vector<double> g3(out.logits3.numel(), 0.0);
    ce_logit_grad(out.logits1, out.y1, label, scale, g1);
    if (!g2.empty()) ce_logit_grad(out.logits2, out.y2, label, scale, g2);
    if (!g3.empty()) ce_logit_grad(out.logits3, out.y3, label, scale, g3);
    if (flags.use_distill) {
      if (!g3.empty() && !g2.empty())
        distill::multiview_kd_gradients(out.logits1, out.logits2, out.logits3,
                                        cfg.distill_config(), scale, g1, g2, g3);
      else if (!g2.empty())
        distill::mutual_kd_gradients(out.logits1, out.logits2, cfg.distill_config(),
                                     scale, g1, g2);
    }
    model::model_backward(state.params, acts,
                          Tensor(out.logits1.shape, g1),
                          g2.empty() ? Tensor() : Tensor(out.logits2.shape, g2),
                          g3.empty() ? Tensor() : Tensor(out.logits3.shape, g3));

    if (flags.use_gate) gate_stats.add(out, label);
    last_out = std::move(out);
  }

  if (!std::isfinite(mean.total))
    fail_runtime(cat("train_step: non-finite loss at step ", state.step,
                     "; first non-finite tensor: ", find_nonfinite(state, last_out)));

  std::vector<gate::GateDecision> decisions;
  std::set<std::string> frozen;
  if (flags.use_gate) {
    for (const auto& pair : {gate::kFusionTop, gate::kFusionMain, gate::kTopMain}) {
      const auto& yt = pair.teacher == gate::Module::Fusion ? gate_stats.y3 : gate_stats.y2;
      const auto& ys = pair.student == gate::Module::Top ? gate_stats.y2 : gate_stats.y1;
      decisions.push_back(gate::decide_batch(pair, yt, ys, gate_stats.y_true));
      if (decisions.back().freeze_teacher) frozen_groups_of(pair.teacher, frozen);
    }
  }

  adam_update(state, cfg, frozen);
  state.step += 1;

  if (gate_log) {
    for (const auto& d : decisions)
      gate_log->push_back(GateLogRow{state.step, gate::pair_name(d.pair), d.gap,
                                     d.epsilon, d.delta, d.freeze_teacher});
  }
  if (observer) observer(StepInfo{state.step, state.epoch, decisions, frozen, state});
  return mean;
}

EvalOutcome evaluate(const ModelParams& params,
                     std::span<const dataset::MultiViewSample> samples,
                     const TrainConfig& cfg) {
  EvalOutcome out;
  if (samples.empty()) return out;
  const double scale = 1.0 / static_cast<double>(samples.size());
  std::size_t correct = 0;
  for (const auto& sample : samples) {
    ModelOutput o = model::forward_all(sample, params);
    const std::size_t label = label_of(sample);
    LossReport r = total_loss(o.logits1, o.logits2, o.logits3, label, cfg);
    out.mean_loss.ce1 += scale * r.ce1;
    out.mean_loss.ce2 += scale * r.ce2;
    out.mean_loss.ce3 += scale * r.ce3;
    out.mean_loss.l_kd += scale * r.l_kd;
    out.mean_loss.total += scale * r.total;
    const auto pred = static_cast<int>(argmax_lowest(o.y3.empty() ? o.y1 : o.y3));
    out.predictions.push_back(pred);
    if (pred == sample.label) ++correct;
  }
  out.accuracy_pct = 100.0 * static_cast<double>(correct) /
                     static_cast<double>(samples.size());
  return out;
}

FitResult fit(const model::ModelConfig& model_cfg, const TrainConfig& cfg,
              const dataset::DatasetSplit& splits, const StepObserver& observer,
              const TrainState* resume_from) {
  if (splits.train.empty()) fail_invalid("fit: empty train split");

  FitResult result;
  if (resume_from)
    result.state = *resume_from;
  else
    result.state = init_state(model_cfg, cfg);
  TrainState& state = result.state;
  const model::ModelConfig& effective = state.params.cfg;

  // the extra augmentation (cutout / noise) is applied once, at rebalance;
  // per-epoch augmentation below is the base policy (resize + flip) only
  dataset::AugmentPolicy rebalance_policy = cfg.augment;
  dataset::AugmentPolicy base_policy = cfg.augment;
  base_policy.extra = dataset::AugmentPolicy::Extra::None;
  for (auto* p : {&rebalance_policy, &base_policy}) {
    p->resize_main_h = effective.main_h;
    p->resize_main_w = effective.main_w;
    p->resize_top_h = effective.top_h;
    p->resize_top_w = effective.top_w;
  }

  std::vector<dataset::MultiViewSample> train = splits.train;
  if (cfg.rebalance) {
    Rng rng = Rng::stream(cfg.seed, "rebalance");
    train = dataset::rebalance(train, rebalance_policy, rng);
  }

  for (std::uint64_t epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = Rng::stream(cfg.seed, "shuffle", epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    LossReport epoch_loss;
    std::size_t epoch_correct = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<dataset::MultiViewSample> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        Rng aug_rng = Rng::stream(cfg.seed, "augment", epoch, i);
        batch.push_back(dataset::augment(train[order[i]], base_policy, aug_rng));
      }
      LossReport r =
          train_step(batch, state, cfg, &result.gate_log, observer, &epoch_correct);
      const double w = static_cast<double>(batch.size());
      epoch_loss.ce1 += r.ce1 * w;
      epoch_loss.ce2 += r.ce2 * w;
      epoch_loss.ce3 += r.ce3 * w;
      epoch_loss.l_kd += r.l_kd * w;
      epoch_loss.total += r.total * w;
    }
    const double n = static_cast<double>(train.size());
    epoch_loss.ce1 /= n;
    epoch_loss.ce2 /= n;
    epoch_loss.ce3 /= n;
    epoch_loss.l_kd /= n;
    epoch_loss.total /= n;
    result.history.push_back(HistoryRow{epoch, "train", epoch_loss,
                                        100.0 * static_cast<double>(epoch_correct) / n});

    if (!splits.validation.empty()) {
      EvalOutcome val = evaluate(state.params, splits.validation, cfg);
      result.history.push_back(HistoryRow{epoch, "validation", val.mean_loss,
                                          val.accuracy_pct});
      if (val.accuracy_pct > state.best_val_accuracy) {
        state.best_val_accuracy = val.accuracy_pct;
        state.best_params = state.params;
        state.best_epoch = epoch;
        state.has_best = true;
      }
    }
    state.epoch = epoch + 1;
  }

  if (!state.has_best) {  // no validation split: final params are the best
    state.best_params = state.params;
    state.best_epoch = state.epoch == 0 ? 0 : state.epoch - 1;
    state.best_val_accuracy = 0.0;
    state.has_best = true;
  }
  return result;
}

std::size_t argmax_lowest(const Distribution& p) {
  if (p.empty()) fail_invalid("argmax: empty distribution");
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

std::pair<int, ModelOutput> infer(const ModelParams& params,
                                  const dataset::MultiViewSample& sample) {
  ModelOutput out = model::forward_all(sample, params);
  const auto& probs = out.y3.empty() ? out.y1 : out.y3;
  return {static_cast<int>(argmax_lowest(probs)), std::move(out)};
}

void save_state(const std::filesystem::path& path, const TrainState& state) {
  ckpt::Container c;
  c.strings["model_config"] = model::model_config_to_json(state.params.cfg);
  c.u64s["epoch"] = state.epoch;
  c.u64s["step"] = state.step;
  c.u64s["has_best"] = state.has_best ? 1 : 0;
  c.u64s["best_epoch"] = state.best_epoch;
  c.u64s["best_val_accuracy_bits"] = std::bit_cast<std::uint64_t>(state.best_val_accuracy);

  TrainState copy = state;
  auto groups = model::param_groups(copy.params);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    c.u64s[cat("adam_t/", groups[g].name)] = copy.adam[g].t;
    for (std::size_t i = 0; i < groups[g].tensors.size(); ++i) {
      Tensor t;
      t.shape = groups[g].tensors[i]->shape;
      t.data = groups[g].tensors[i]->data;
      c.tensors[cat("param/", groups[g].name, "/", i)] = t;
      c.tensors[cat("adam_m/", groups[g].name, "/", i)] = copy.adam[g].m[i];
      c.tensors[cat("adam_v/", groups[g].name, "/", i)] = copy.adam[g].v[i];
    }
  }
  if (state.has_best) {
    auto best_groups = model::param_groups(copy.best_params);
    for (auto& group : best_groups)
      for (std::size_t i = 0; i < group.tensors.size(); ++i) {
        Tensor t;
        t.shape = group.tensors[i]->shape;
        t.data = group.tensors[i]->data;
        c.tensors[cat("best/", group.name, "/", i)] = t;
      }
  }
  c.save(path);
}

TrainState load_state(const std::filesystem::path& path) {
  ckpt::Container c = ckpt::Container::load(path);
  const model::ModelConfig cfg = model::model_config_from_json(c.str("model_config"));

  TrainState state;
  Rng rng(0);
  state.params = model::init_params(cfg, rng);
  state.epoch = c.u64("epoch");
  state.step = c.u64("step");
  state.has_best = c.u64("has_best") != 0;
  state.best_epoch = c.u64("best_epoch");
  state.best_val_accuracy = std::bit_cast<double>(c.u64("best_val_accuracy_bits"));

  auto groups = model::param_groups(state.params);
  for (auto& group : groups) {
    AdamGroup slot;
    slot.name = group.name;
    slot.t = c.u64(cat("adam_t/", group.name));
    for (std::size_t i = 0; i < group.tensors.size(); ++i) {
      group.tensors[i]->data = c.tensor(cat("param/", group.name, "/", i)).data;
      slot.m.push_back(c.tensor(cat("adam_m/", group.name, "/", i)));
      slot.v.push_back(c.tensor(cat("adam_v/", group.name, "/", i)));
    }
    state.adam.push_back(std::move(slot));
  }
  if (state.has_best) {
    state.best_params = model::init_params(cfg, rng);
    for (auto& group : model::param_groups(state.best_params))
      for (std::size_t i = 0; i < group.tensors.size(); ++i)
        group.tensors[i]->data = c.tensor(cat("best/", group.name, "/", i)).data;
  }
  return state;
}

namespace {
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}
}  // namespace

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<HistoryRow>& history) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail_runtime(cat("cannot write ", path.string()));
  os << "epoch,split,ce1,ce2,ce3,l_kd,total,accuracy_pct\n";
  for (const auto& row : history)
    os << row.epoch << "," << row.split << "," << fmt(row.loss.ce1) << ","
       << fmt(row.loss.ce2) << "," << fmt(row.loss.ce3) << "," << fmt(row.loss.l_kd)
       << "," << fmt(row.loss.total) << "," << fmt(row.accuracy_pct) << "\n";
}

void write_gate_log_csv(const std::filesystem::path& path,
                        const std::vector<GateLogRow>& log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail_runtime(cat("cannot write ", path.string()));
  os << "step,pair,G,epsilon,delta,freeze\n";
  for (const auto& row : log)
    os << row.step << "," << row.pair << "," << fmt(row.gap) << "," << fmt(row.epsilon)
       << "," << fmt(row.delta) << "," << (row.freeze ? 1 : 0) << "\n";
}

}  // namespace mvfd::train
