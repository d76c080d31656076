#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mvfd/trainer.hpp"

using namespace mvfd::train;
using namespace mvfd::dataset;
using mvfd::Rng;
using mvfd::model::FusionMode;
using mvfd::model::ModelConfig;
using mvfd::numerics::Tensor;

namespace {

GenConfig bench_config() {
  GenConfig cfg;
  cfg.counts = {24, 24, 24, 9};
  cfg.main_h = cfg.main_w = 16;
  cfg.top_h = 16;
  cfg.top_w = 16;
  cfg.noise_level = 0.03;
  cfg.seed = 77;
  return cfg;
}

ModelConfig small_model() {
  ModelConfig cfg;
  cfg.main_h = cfg.main_w = 16;
  cfg.top_h = 16;
  cfg.top_w = 16;
  cfg.conv_channels = {4, 8};
  cfg.head_hidden = 4;
  cfg.attn_hidden = 4;
  return cfg;
}

TrainConfig quick_train(std::size_t epochs = 3) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  cfg.seed = 5;
  return cfg;
}

DatasetSplit bench_splits() {
  return split(generate(bench_config()), {0.6, 0.2, 0.2}, 11);
}

}  // namespace

TEST_CASE("total_loss adds up exactly") {
  TrainConfig cfg;
  Tensor z1({4}, {1.0, -0.5, 0.3, 0.0});
  Tensor z2({4}, {0.2, 0.7, -1.0, 0.4});
  Tensor z3({4}, {0.0, 0.1, 0.2, 0.3});
  auto r = total_loss(z1, z2, z3, 2, cfg);
  // independent recomputation of each term
  using namespace mvfd::numerics;
  const double ce1 = cross_entropy(softmax_forward(z1).data, 2);
  const double ce2 = cross_entropy(softmax_forward(z2).data, 2);
  const double ce3 = cross_entropy(softmax_forward(z3).data, 2);
  const double kd =
      mvfd::distill::multiview_kd_loss(z1, z2, z3, cfg.distill_config()).total;
  CHECK(r.total == doctest::Approx(ce1 + ce2 + ce3 + kd).epsilon(1e-12));
  CHECK(std::abs(r.total - (r.ce1 + r.ce2 + r.ce3 + r.l_kd)) < 1e-12);
}

TEST_CASE("total_loss: perfect one-hot heads cost nearly nothing") {
  TrainConfig cfg;
  Tensor z({4}, {40.0, 0.0, 0.0, 0.0});
  auto r = total_loss(z, z, z, 0, cfg);
  CHECK(r.l_kd == 0.0);
  CHECK(r.total < 1e-9);
}

TEST_CASE("total_loss: uniform heads cost 3 ln 4") {
  TrainConfig cfg;
  Tensor z({4});
  auto r = total_loss(z, z, z, 1, cfg);
  CHECK(r.ce1 == doctest::Approx(1.3862943611198906).epsilon(1e-12));
  CHECK(r.l_kd == 0.0);
  CHECK(r.total == doctest::Approx(4.1588830833596715).epsilon(1e-12));
}

TEST_CASE("total_loss: distillation toggles cleanly at agreement") {
  TrainConfig with;
  TrainConfig without;
  without.ablation.use_distill = false;
  without.ablation.use_gate = false;
  Tensor z({4}, {0.5, 0.1, -0.2, 0.9});
  CHECK(total_loss(z, z, z, 0, with).total ==
        doctest::Approx(total_loss(z, z, z, 0, without).total).epsilon(1e-15));
}

TEST_CASE("total_loss respects ablations") {
  TrainConfig cfg;
  cfg.ablation.use_top_branch = false;
  cfg.ablation.use_fusion = false;
  cfg.ablation.use_distill = false;
  cfg.ablation.use_gate = false;
  Tensor z1({4}, {1.0, 0.0, 0.0, 0.0});
  auto r = total_loss(z1, Tensor(), Tensor(), 0, cfg);
  CHECK(r.ce2 == 0.0);
  CHECK(r.ce3 == 0.0);
  CHECK(r.l_kd == 0.0);
  CHECK(r.total == doctest::Approx(r.ce1));

  // fusionless multi-view: mutual distillation only
  TrainConfig mv;
  mv.ablation.use_fusion = false;
  mv.ablation.use_gate = false;
  Tensor z2({4}, {0.0, 1.0, 0.0, 0.0});
  auto r2 = total_loss(z1, z2, Tensor(), 0, mv);
  CHECK(r2.ce3 == 0.0);
  CHECK(r2.l_kd ==
        doctest::Approx(mvfd::distill::mutual_kd_loss(z1, z2, mv.distill_config()).total));
}

TEST_CASE("effective model config follows the ablation flags") {
  ModelConfig base = small_model();
  TrainConfig cfg = quick_train();
  cfg.ablation = {false, false, false, false};
  auto a = effective_model_config(base, cfg);
  CHECK_FALSE(a.with_top_branch);
  CHECK(a.fusion == FusionMode::None);

  cfg.ablation = {true, true, false, false};
  cfg.fusion_mode = FusionMode::Sum;
  auto b = effective_model_config(base, cfg);
  CHECK(b.with_top_branch);
  CHECK(b.fusion == FusionMode::Sum);

  cfg.ablation = {true, true, true, true};
  cfg.fusion_mode = FusionMode::Attention;
  auto c = effective_model_config(base, cfg);
  CHECK(c.fusion == FusionMode::Attention);

  cfg.ablation = {true, false, true, true};  // gate without fusion
  CHECK_THROWS_AS(effective_model_config(base, cfg), std::invalid_argument);
}

TEST_CASE("adam update skips frozen groups and leaves their moments alone") {
  TrainConfig cfg = quick_train();
  auto state = init_state(small_model(), cfg);
  for (auto& group : mvfd::model::param_groups(state.params))
    for (Tensor* t : group.tensors) {
      t->ensure_grad();
      for (auto& g : t->grad) g = 0.25;  // nonzero everywhere
    }

  auto snapshot = [&](const std::string& name) {
    std::vector<double> out;
    for (auto& group : mvfd::model::param_groups(state.params))
      if (group.name == name)
        for (Tensor* t : group.tensors)
          out.insert(out.end(), t->data.begin(), t->data.end());
    return out;
  };
  auto frozen_before = snapshot("attention");
  auto live_before = snapshot("branch_main");

  adam_update(state, cfg, {"attention", "head_fusion"});

  CHECK(snapshot("attention") == frozen_before);  // bit-identical
  CHECK(snapshot("branch_main") != live_before);
  for (const auto& slot : state.adam) {
    if (slot.name == "attention" || slot.name == "head_fusion") {
      CHECK(slot.t == 0);
      for (const auto& m : slot.m)
        for (double v : m.data) CHECK(v == 0.0);
    } else {
      CHECK(slot.t == 1);
    }
  }
}

TEST_CASE("train_step with the gate disabled updates every group") {
  auto splits = bench_splits();
  TrainConfig cfg = quick_train();
  cfg.ablation.use_gate = false;
  auto state = init_state(small_model(), cfg);
  std::vector<double> before;
  for (auto& group : mvfd::model::param_groups(state.params))
    for (Tensor* t : group.tensors)
      before.insert(before.end(), t->data.begin(), t->data.end());

  std::span<const MultiViewSample> batch(splits.train.data(), 8);
  train_step(batch, state, cfg, nullptr);

  std::size_t idx = 0;
  bool group_changed = true;
  for (auto& group : mvfd::model::param_groups(state.params)) {
    bool changed = false;
    for (Tensor* t : group.tensors)
      for (double v : t->data)
        if (v != before[idx++]) changed = true;
    group_changed = group_changed && changed;
  }
  CHECK(group_changed);
  CHECK(state.step == 1);
}

TEST_CASE("non-finite parameters abort with the tensor named") {
  auto splits = bench_splits();
  TrainConfig cfg = quick_train();
  auto state = init_state(small_model(), cfg);
  state.params.head_main.w1.data[0] = std::numeric_limits<double>::infinity();
  std::span<const MultiViewSample> batch(splits.train.data(), 4);
  CHECK_THROWS_WITH_AS(train_step(batch, state, cfg, nullptr),
                       doctest::Contains("head_main"), std::runtime_error);
}

TEST_CASE("zero learning rate leaves parameters untouched across a fit") {
  auto splits = bench_splits();
  TrainConfig cfg = quick_train(2);
  cfg.learning_rate = 0.0;
  auto init = init_state(small_model(), cfg);
  auto result = fit(small_model(), cfg, splits);
  auto ga = mvfd::model::param_groups(init.params);
  auto gb = mvfd::model::param_groups(result.state.params);
  for (std::size_t g = 0; g < ga.size(); ++g)
    for (std::size_t i = 0; i < ga[g].tensors.size(); ++i)
      CHECK(ga[g].tensors[i]->data == gb[g].tensors[i]->data);
}

TEST_CASE("training reduces the train loss") {
  auto splits = bench_splits();
  TrainConfig cfg = quick_train(6);
  auto result = fit(small_model(), cfg, splits);
  const auto& history = result.history;
  REQUIRE(history.size() >= 4);
  double first = -1, last = -1;
  for (const auto& row : history) {
    if (row.split != "train") continue;
    if (first < 0) first = row.loss.total;
    last = row.loss.total;
  }
  CHECK(last < first);
}

TEST_CASE("fit is deterministic") {
  auto splits = bench_splits();
  TrainConfig cfg = quick_train(2);
  auto a = fit(small_model(), cfg, splits);
  auto b = fit(small_model(), cfg, splits);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].loss.total == b.history[i].loss.total);
    CHECK(a.history[i].accuracy_pct == b.history[i].accuracy_pct);
  }
  auto ga = mvfd::model::param_groups(a.state.params);
  auto gb = mvfd::model::param_groups(b.state.params);
  for (std::size_t g = 0; g < ga.size(); ++g)
    for (std::size_t i = 0; i < ga[g].tensors.size(); ++i)
      CHECK(ga[g].tensors[i]->data == gb[g].tensors[i]->data);
}

TEST_CASE("a state snapshot resumes bit-identically") {
  namespace fs = std::filesystem;
  auto splits = bench_splits();
  TrainConfig cfg4 = quick_train(4);
  TrainConfig cfg2 = quick_train(2);

  auto full = fit(small_model(), cfg4, splits);

  auto half = fit(small_model(), cfg2, splits);
  const fs::path path = fs::temp_directory_path() / "mvfd_test_state.ckpt";
  save_state(path, half.state);
  auto restored = load_state(path);
  CHECK(restored.epoch == 2);
  auto resumed = fit(small_model(), cfg4, splits, {}, &restored);

  auto ga = mvfd::model::param_groups(full.state.params);
  auto gb = mvfd::model::param_groups(resumed.state.params);
  REQUIRE(ga.size() == gb.size());
  for (std::size_t g = 0; g < ga.size(); ++g)
    for (std::size_t i = 0; i < ga[g].tensors.size(); ++i)
      CHECK(ga[g].tensors[i]->data == gb[g].tensors[i]->data);
  CHECK(full.state.step == resumed.state.step);
  CHECK(full.state.best_val_accuracy == resumed.state.best_val_accuracy);

  // resumed history covers epochs 2..3 and matches the uninterrupted run
  std::vector<HistoryRow> tail;
  for (const auto& row : full.history)
    if (row.epoch >= 2) tail.push_back(row);
  REQUIRE(tail.size() == resumed.history.size());
  for (std::size_t i = 0; i < tail.size(); ++i) {
    CHECK(tail[i].loss.total == resumed.history[i].loss.total);
    CHECK(tail[i].accuracy_pct == resumed.history[i].accuracy_pct);
  }
  fs::remove(path);
}

TEST_CASE("empty train split is rejected") {
  DatasetSplit splits;
  splits.validation = generate(bench_config());
  CHECK_THROWS_AS(fit(small_model(), quick_train(), splits), std::invalid_argument);
}

TEST_CASE("infer picks the fusion head argmax with lowest-index ties") {
  CHECK(argmax_lowest({0.1, 0.6, 0.2, 0.1}) == 1);
  CHECK(argmax_lowest({0.25, 0.25, 0.25, 0.25}) == 0);
  CHECK(argmax_lowest({0.1, 0.4, 0.4, 0.1}) == 1);

  // an all-zero model yields uniform y3 -> class 0
  TrainConfig cfg = quick_train();
  auto state = init_state(small_model(), cfg);
  for (auto& group : mvfd::model::param_groups(state.params))
    for (Tensor* t : group.tensors) t->data.assign(t->numel(), 0.0);
  auto splits = bench_splits();
  auto [cls, out] = infer(state.params, splits.test[0]);
  CHECK(cls == 0);
  CHECK(out.y3 == mvfd::numerics::Distribution({0.25, 0.25, 0.25, 0.25}));
}

TEST_CASE("inference is architecture-agnostic about training extras") {
  // identical parameters give identical predictions regardless of which
  // training-time machinery produced them
  auto splits = bench_splits();
  TrainConfig with_gate = quick_train(2);
  auto a = fit(small_model(), with_gate, splits);
  auto params_copy = a.state.params;
  auto [c1, o1] = infer(a.state.params, splits.test[3]);
  auto [c2, o2] = infer(params_copy, splits.test[3]);
  CHECK(c1 == c2);
  CHECK(o1.y3 == o2.y3);
}

TEST_CASE("case-A configuration ignores the top view entirely") {
  auto splits = bench_splits();
  TrainConfig cfg = quick_train(2);
  cfg.ablation = {false, false, false, false};
  auto result = fit(small_model(), cfg, splits);

  MultiViewSample probe = splits.test[0];
  auto [cls_a, out_a] = infer(result.state.params, probe);
  for (auto& v : probe.top_view.pix) v = 1.0 - v;
  auto [cls_b, out_b] = infer(result.state.params, probe);
  CHECK(cls_a == cls_b);
  CHECK(out_a.y1 == out_b.y1);
}

TEST_CASE("history csv is written with the documented header") {
  namespace fs = std::filesystem;
  auto splits = bench_splits();
  TrainConfig cfg = quick_train(1);
  auto result = fit(small_model(), cfg, splits);
  const fs::path path = fs::temp_directory_path() / "mvfd_test_history.csv";
  write_history_csv(path, result.history);
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  CHECK(header == "epoch,split,ce1,ce2,ce3,l_kd,total,accuracy_pct");
  fs::remove(path);
}
