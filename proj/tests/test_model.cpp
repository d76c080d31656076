#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "gradcheck.hpp"
#include "mvfd/model.hpp"

using namespace mvfd::model;
using namespace mvfd::dataset;
using mvfd::Rng;
using mvfd::numerics::Tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.main_h = cfg.main_w = 16;
  cfg.top_h = 16;
  cfg.top_w = 16;
  cfg.conv_channels = {4};
  cfg.head_hidden = 2;
  cfg.attn_hidden = 2;
  return cfg;
}

MultiViewSample random_sample(const ModelConfig& cfg, Rng& rng, int label = 0) {
  MultiViewSample s;
  s.label = label;
  s.main_view = Image(cfg.main_h, cfg.main_w);
  s.top_view = Image(cfg.top_h, cfg.top_w);
  for (auto& v : s.main_view.pix) v = rng.uniform(0.0, 1.0);
  for (auto& v : s.top_view.pix) v = rng.uniform(0.0, 1.0);
  return s;
}

}  // namespace

TEST_CASE("zero input with zero biases yields zero features") {
  Rng rng = Rng::stream(21, "init");
  auto params = init_params(tiny_config(), rng);
  MultiViewSample s;
  s.main_view = Image(16, 16);
  s.top_view = Image(16, 16);
  auto fs = extract_features(s, params);
  for (double v : fs.h_main.data) CHECK(v == 0.0);
  for (double v : fs.h_top.data) CHECK(v == 0.0);
}

TEST_CASE("branches are independent") {
  Rng rng = Rng::stream(22, "init");
  auto cfg = tiny_config();
  auto params = init_params(cfg, rng);
  auto sample = random_sample(cfg, rng);

  auto fs1 = extract_features(sample, params);
  auto out1 = forward_all(sample, params);
  MultiViewSample perturbed = sample;
  perturbed.top_view.pix[40] = 1.0 - perturbed.top_view.pix[40];
  auto fs2 = extract_features(perturbed, params);
  auto out2 = forward_all(perturbed, params);

  CHECK(fs1.h_main.data == fs2.h_main.data);  // bit-identical
  CHECK(out1.y1 == out2.y1);
  CHECK(out1.y2 != out2.y2);

  MultiViewSample perturbed_main = sample;
  perturbed_main.main_view.pix[17] = 1.0 - perturbed_main.main_view.pix[17];
  auto out3 = forward_all(perturbed_main, params);
  CHECK(out1.y2 == out3.y2);
}

TEST_CASE("forward is deterministic") {
  Rng rng = Rng::stream(23, "init");
  auto cfg = tiny_config();
  auto params = init_params(cfg, rng);
  auto sample = random_sample(cfg, rng);
  auto a = forward_all(sample, params);
  auto b = forward_all(sample, params);
  CHECK(a.y1 == b.y1);
  CHECK(a.y2 == b.y2);
  CHECK(a.y3 == b.y3);
  CHECK(a.features.h_main.data == b.features.h_main.data);
}

TEST_CASE("attention fusion: identical features give equal weights") {
  Rng rng = Rng::stream(24, "init");
  auto params = init_params(tiny_config(), rng);
  Tensor h({4}, {0.3, -0.2, 0.9, 0.1});
  auto [w, fused] = attend_fuse(h, h, params.attention);
  CHECK(w.alpha_main == 0.5);
  CHECK(w.alpha_top == 0.5);
  CHECK(fused.data == h.data);
}

TEST_CASE("attention weights sum to one and fused features are convex combinations") {
  Rng rng = Rng::stream(25, "init");
  auto params = init_params(tiny_config(), rng);
  for (int rep = 0; rep < 100; ++rep) {
    Tensor a({4}), b({4});
    for (auto& v : a.data) v = rng.uniform(-2.0, 2.0);
    for (auto& v : b.data) v = rng.uniform(-2.0, 2.0);
    auto [w, fused] = attend_fuse(a, b, params.attention);
    CHECK(w.alpha_main + w.alpha_top == 1.0);  // exact by construction
    CHECK(w.alpha_main > 0.0);
    CHECK(w.alpha_top > 0.0);
    for (std::size_t i = 0; i < fused.numel(); ++i) {
      const double lo = std::min(a.data[i], b.data[i]);
      const double hi = std::max(a.data[i], b.data[i]);
      CHECK(fused.data[i] >= lo - 1e-12);
      CHECK(fused.data[i] <= hi + 1e-12);
    }
  }
  Tensor bad({3});
  CHECK_THROWS_AS(attend_fuse(Tensor({4}), bad, params.attention), std::invalid_argument);
}

TEST_CASE("classify: zero feature with zero-initialized biases is uniform") {
  Rng rng = Rng::stream(26, "init");
  auto params = init_params(tiny_config(), rng);
  Tensor zero({4});
  auto p = classify(zero, params, Head::C1);
  CHECK(p == mvfd::numerics::Distribution({0.25, 0.25, 0.25, 0.25}));
  auto p3 = classify(zero, params, Head::C3);
  CHECK(p3 == mvfd::numerics::Distribution({0.25, 0.25, 0.25, 0.25}));
}

TEST_CASE("classify output sums to one; heads have independent parameters") {
  Rng rng = Rng::stream(27, "init");
  auto cfg = tiny_config();
  auto params = init_params(cfg, rng);
  auto sample = random_sample(cfg, rng);
  auto out = forward_all(sample, params);
  double sum = 0.0;
  for (double v : out.y3) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  auto before = out.y1;
  params.head_top.b2.data[0] += 0.5;  // C2-only perturbation
  auto after = forward_all(sample, params);
  CHECK(after.y1 == before);
  CHECK(after.y2 != out.y2);
}

TEST_CASE("absent heads are rejected") {
  Rng rng = Rng::stream(28, "init");
  auto cfg = tiny_config();
  cfg.with_top_branch = false;
  cfg.fusion = FusionMode::None;
  auto params = init_params(cfg, rng);
  CHECK_THROWS_AS(classify(Tensor({4}), params, Head::C2), std::invalid_argument);
  auto sample = random_sample(cfg, rng);
  auto out = forward_all(sample, params);
  CHECK(out.logits2.numel() == 0);
  CHECK(out.logits3.numel() == 0);
  CHECK(out.y1.size() == 4);
}

TEST_CASE("dim mismatches are rejected") {
  Rng rng = Rng::stream(29, "init");
  auto params = init_params(tiny_config(), rng);
  MultiViewSample s;
  s.main_view = Image(8, 8);
  s.top_view = Image(16, 16);
  CHECK_THROWS_WITH_AS(forward_all(s, params), doctest::Contains("main view"),
                       std::invalid_argument);
}

TEST_CASE("freshly initialized heads are near uniform") {
  // Empirical envelope of the init scale: across 1000 random inits on a fixed
  // random sample (default-sized model), the worst head-coordinate deviation
  // from 1/K observed is ~0.071; assert a 0.10 envelope and that typical
  // inits stay much closer.
  ModelConfig cfg;  // default 32x32 / 32x24, channels {8,16,32}
  Rng data_rng = Rng::stream(30, "sample");
  MultiViewSample sample = random_sample(cfg, data_rng);
  double worst = 0.0, sum = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Rng rng = Rng::stream(1000 + static_cast<std::uint64_t>(i), "init");
    auto params = init_params(cfg, rng);
    auto out = forward_all(sample, params);
    double w = 0.0;
    for (const auto* y : {&out.y1, &out.y2, &out.y3})
      for (double v : *y) w = std::max(w, std::abs(v - 0.25));
    worst = std::max(worst, w);
    sum += w;
  }
  CHECK(worst <= 0.10);
  CHECK(sum / 1000.0 <= 0.05);
}

TEST_CASE("model checkpoints round-trip bit-exactly") {
  namespace fs = std::filesystem;
  Rng rng = Rng::stream(31, "init");
  ModelConfig cfg = tiny_config();
  auto params = init_params(cfg, rng);
  const fs::path path = fs::temp_directory_path() / "mvfd_test_model.ckpt";
  save_checkpoint(path, params);
  auto loaded = load_checkpoint(path);
  CHECK(loaded.cfg == cfg);
  auto ga = param_groups(params);
  auto gb = param_groups(loaded);
  REQUIRE(ga.size() == gb.size());
  for (std::size_t g = 0; g < ga.size(); ++g) {
    CHECK(ga[g].name == gb[g].name);
    REQUIRE(ga[g].tensors.size() == gb[g].tensors.size());
    for (std::size_t i = 0; i < ga[g].tensors.size(); ++i)
      CHECK(ga[g].tensors[i]->data == gb[g].tensors[i]->data);
  }
  fs::remove(path);
}

TEST_CASE("full-model gradients match finite differences (width-4, 2-sample batch)") {
  // Pure cross-entropy objective on the three heads; the distillation terms
  // get their own detached-target check in the distillation tests.
  Rng rng = Rng::stream(32, "init");
  ModelConfig cfg = tiny_config();
  auto params = init_params(cfg, rng);
  std::vector<MultiViewSample> batch = {random_sample(cfg, rng, 1),
                                        random_sample(cfg, rng, 3)};

  auto loss = [&]() {
    double total = 0.0;
    for (const auto& s : batch) {
      auto out = forward_all(s, params);
      const auto label = static_cast<std::size_t>(s.label);
      total += mvfd::numerics::cross_entropy(out.y1, label);
      total += mvfd::numerics::cross_entropy(out.y2, label);
      total += mvfd::numerics::cross_entropy(out.y3, label);
    }
    return total / static_cast<double>(batch.size());
  };

  zero_grads(params);
  for (const auto& s : batch) {
    ForwardActs acts;
    auto out = forward_all(s, params, &acts);
    const auto label = static_cast<std::size_t>(s.label);
    const double scale = 1.0 / static_cast<double>(batch.size());
    auto logit_grad = [&](const mvfd::numerics::Distribution& probs) {
      std::vector<double> gp(probs.size(), 0.0), gz(probs.size(), 0.0);
      mvfd::numerics::cross_entropy_backward(probs, label, scale, gp);
      mvfd::numerics::softmax_backward(Tensor({probs.size()}, probs),
                                       Tensor({probs.size()}, gp), gz);
      return Tensor({probs.size()}, gz);
    };
    model_backward(params, acts, logit_grad(out.y1), logit_grad(out.y2),
                   logit_grad(out.y3));
  }

  double worst = 0.0;
  for (auto& group : param_groups(params)) {
    for (Tensor* t : group.tensors) {
      REQUIRE(t->has_grad());
      worst = std::max(worst, gradcheck::max_rel_err(t->data, loss, t->grad));
    }
  }
  CHECK(worst < 1e-3);
}
