#include "mvfd/model.hpp"

#include <cmath>

#include "json.hpp"
#include "mvfd/checkpoint.hpp"

namespace mvfd::model {

using namespace mvfd::numerics;

namespace {

/// Glorot-uniform weights, zero biases. Draw order is fixed by the canonical
/// group order so initialization is a pure function of (config, seed).
Tensor glorot(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out,
              Rng& rng) {
  Tensor t(std::move(shape));
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.data) v = rng.uniform(-a, a);
  return t;
}

BranchParams init_branch(const ModelConfig& cfg, Rng& rng) {
  BranchParams branch;
  std::size_t cin = 1;
  for (std::size_t cout : cfg.conv_channels) {
    ConvLayerParams layer;
    const std::size_t k2 = cfg.kernel * cfg.kernel;
    layer.w = glorot({cout, cin, cfg.kernel, cfg.kernel}, cin * k2, cout * k2, rng);
    layer.b = Tensor({cout});
    branch.layers.push_back(std::move(layer));
    cin = cout;
  }
  return branch;
}

MlpParams init_mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  MlpParams mlp;
  mlp.w1 = glorot({hidden, in}, in, hidden, rng);
  mlp.b1 = Tensor({hidden});
  mlp.w2 = glorot({out, hidden}, hidden, out, rng);
  mlp.b2 = Tensor({out});
  return mlp;
}

Tensor image_tensor(const dataset::Image& img) {
  Tensor t({1, img.h, img.w});
  t.data = img.pix;
  return t;
}

void check_dims(const dataset::Image& img, std::size_t h, std::size_t w, const char* view) {
  if (img.h != h || img.w != w)
    fail_invalid(cat("model: ", view, " is ", img.h, "x", img.w,
                     " but the model expects ", h, "x", w));
}

BranchActs branch_forward(const ModelConfig& cfg, const BranchParams& branch,
                          const dataset::Image& img) {
  BranchActs acts;
  acts.input = image_tensor(img);
  const Tensor* x = &acts.input;
  for (const auto& layer : branch.layers) {
    acts.conv_out.push_back(conv2d_forward(*x, layer.w, layer.b, cfg.stride, cfg.padding));
    acts.relu_out.push_back(relu_forward(acts.conv_out.back()));
    x = &acts.relu_out.back();
  }
  acts.pooled = global_avg_pool_forward(*x);
  return acts;
}

void branch_backward(const ModelConfig& cfg, BranchParams& branch, const BranchActs& acts,
                     const Tensor& g_pooled) {
  const std::size_t n = branch.layers.size();
  Tensor g(acts.relu_out.back().shape);
  global_avg_pool_backward(acts.relu_out.back().shape, g_pooled, g.data);
  for (std::size_t i = n; i-- > 0;) {
    Tensor g_pre(acts.conv_out[i].shape);
    relu_backward(acts.conv_out[i], g, g_pre.data);
    const Tensor& input = (i == 0) ? acts.input : acts.relu_out[i - 1];
    auto& layer = branch.layers[i];
    layer.w.ensure_grad();
    layer.b.ensure_grad();
    if (i == 0) {
      conv2d_backward(input, layer.w, cfg.stride, cfg.padding, g_pre, nullptr,
                      layer.w.grad, layer.b.grad);
    } else {
      Tensor g_in(input.shape);
      conv2d_backward(input, layer.w, cfg.stride, cfg.padding, g_pre, &g_in.data,
                      layer.w.grad, layer.b.grad);
      g = std::move(g_in);
    }
  }
}

MlpActs mlp_forward(const MlpParams& mlp, const Tensor& x) {
  MlpActs acts;
  acts.input = x;
  acts.hidden_pre = affine_forward(x, mlp.w1, mlp.b1);
  acts.hidden = relu_forward(acts.hidden_pre);
  acts.out = affine_forward(acts.hidden, mlp.w2, mlp.b2);
  return acts;
}

/// Accumulates parameter grads; adds the input gradient into *g_input.
void mlp_backward(MlpParams& mlp, const MlpActs& acts, const Tensor& g_out,
                  std::vector<double>* g_input) {
  mlp.w1.ensure_grad();
  mlp.b1.ensure_grad();
  mlp.w2.ensure_grad();
  mlp.b2.ensure_grad();
  Tensor g_hidden(acts.hidden.shape);
  affine_backward(acts.hidden, mlp.w2, g_out, &g_hidden.data, mlp.w2.grad, mlp.b2.grad);
  Tensor g_pre(acts.hidden_pre.shape);
  relu_backward(acts.hidden_pre, g_hidden, g_pre.data);
  affine_backward(acts.input, mlp.w1, g_pre, g_input, mlp.w1.grad, mlp.b1.grad);
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
  if (cfg.conv_channels.empty()) fail_invalid("model: conv_channels must be non-empty");
  if (cfg.fusion == FusionMode::Attention && !cfg.with_top_branch)
    fail_invalid("model: attention fusion requires the top branch");
  ModelParams p;
  p.cfg = cfg;
  const std::size_t d = cfg.feature_dim();
  p.branch_main = init_branch(cfg, rng);
  if (cfg.with_top_branch) p.branch_top = init_branch(cfg, rng);
  if (cfg.fusion == FusionMode::Attention)
    p.attention = init_mlp(d, cfg.attn_hidden, 1, rng);
  p.head_main = init_mlp(d, cfg.head_hidden, cfg.n_classes, rng);
  if (cfg.with_top_branch) p.head_top = init_mlp(d, cfg.head_hidden, cfg.n_classes, rng);
  if (cfg.fusion != FusionMode::None)
    p.head_fusion = init_mlp(d, cfg.head_hidden, cfg.n_classes, rng);
  return p;
}

std::vector<ParamGroup> param_groups(ModelParams& params) {
  std::vector<ParamGroup> groups;
  auto add_branch = [&](const std::string& name, BranchParams& branch) {
    ParamGroup g;
    g.name = name;
    for (auto& layer : branch.layers) {
      g.tensors.push_back(&layer.w);
      g.decay.push_back(true);
      g.tensors.push_back(&layer.b);
      g.decay.push_back(false);
    }
    groups.push_back(std::move(g));
  };
  auto add_mlp = [&](const std::string& name, MlpParams& mlp) {
    if (mlp.w1.numel() == 0) return;
    groups.push_back(ParamGroup{name,
                                {&mlp.w1, &mlp.b1, &mlp.w2, &mlp.b2},
                                {true, false, true, false}});
  };
  add_branch("branch_main", params.branch_main);
  if (!params.branch_top.layers.empty()) add_branch("branch_top", params.branch_top);
  add_mlp("attention", params.attention);
  add_mlp("head_main", params.head_main);
  add_mlp("head_top", params.head_top);
  add_mlp("head_fusion", params.head_fusion);
  return groups;
}

void zero_grads(ModelParams& params) {
  for (auto& group : param_groups(params))
    for (Tensor* t : group.tensors) t->zero_grad();
}

FeatureSet extract_features(const dataset::MultiViewSample& sample,
                            const ModelParams& params) {
  const auto& cfg = params.cfg;
  check_dims(sample.main_view, cfg.main_h, cfg.main_w, "main view");
  FeatureSet fs;
  fs.h_main = branch_forward(cfg, params.branch_main, sample.main_view).pooled;
  if (cfg.with_top_branch) {
    check_dims(sample.top_view, cfg.top_h, cfg.top_w, "top view");
    fs.h_top = branch_forward(cfg, params.branch_top, sample.top_view).pooled;
  }
  return fs;
}

std::pair<FusionWeights, Tensor> attend_fuse(const Tensor& h_main, const Tensor& h_top,
                                             const MlpParams& attention) {
  if (h_main.shape != h_top.shape)
    fail_invalid(cat("attend_fuse: feature lengths differ: ", shape_str(h_main.shape),
                     " vs ", shape_str(h_top.shape)));
  const double s_main = mlp_forward(attention, h_main).out.data[0];
  const double s_top = mlp_forward(attention, h_top).out.data[0];
  Tensor alpha = softmax_forward(Tensor({2}, {s_main, s_top}));
  FusionWeights w;
  w.alpha_main = alpha.data[0];
  w.alpha_top = 1.0 - w.alpha_main;  // exact complement
  Tensor fused = weighted_sum_forward(h_main, h_top, w.alpha_main, w.alpha_top);
  return {w, fused};
}

Distribution classify(const Tensor& feature, const ModelParams& params, Head head) {
  const MlpParams* mlp = nullptr;
  switch (head) {
    case Head::C1: mlp = &params.head_main; break;
    case Head::C2: mlp = &params.head_top; break;
    case Head::C3: mlp = &params.head_fusion; break;
  }
  if (mlp == nullptr || mlp->w1.numel() == 0)
    fail_invalid("classify: unknown or absent head");
  if (feature.numel() != params.cfg.feature_dim())
    fail_invalid(cat("classify: feature has ", feature.numel(), " entries, expected ",
                     params.cfg.feature_dim()));
  return softmax_forward(mlp_forward(*mlp, feature).out).data;
}

ModelOutput forward_all(const dataset::MultiViewSample& sample, const ModelParams& params,
                        ForwardActs* acts) {
  const auto& cfg = params.cfg;
  check_dims(sample.main_view, cfg.main_h, cfg.main_w, "main view");
  ForwardActs local;
  ForwardActs& a = acts ? *acts : local;

  a.main = branch_forward(cfg, params.branch_main, sample.main_view);
  ModelOutput out;
  out.features.h_main = a.main.pooled;

  if (cfg.with_top_branch) {
    check_dims(sample.top_view, cfg.top_h, cfg.top_w, "top view");
    a.top = branch_forward(cfg, params.branch_top, sample.top_view);
    out.features.h_top = a.top.pooled;
  }

  if (cfg.fusion == FusionMode::Attention) {
    a.attn_main = mlp_forward(params.attention, a.main.pooled);
    a.attn_top = mlp_forward(params.attention, a.top.pooled);
    Tensor alpha = softmax_forward(
        Tensor({2}, {a.attn_main.out.data[0], a.attn_top.out.data[0]}));
    a.alpha.alpha_main = alpha.data[0];
    a.alpha.alpha_top = 1.0 - alpha.data[0];
    a.h_fused = weighted_sum_forward(a.main.pooled, a.top.pooled, a.alpha.alpha_main,
                                     a.alpha.alpha_top);
    out.fusion = a.alpha;
    out.features.h_fused = a.h_fused;
  } else if (cfg.fusion == FusionMode::Sum) {
    a.h_fused = weighted_sum_forward(a.main.pooled, a.top.pooled, 1.0, 1.0);
    out.features.h_fused = a.h_fused;
  }

  a.head1 = mlp_forward(params.head_main, a.main.pooled);
  out.logits1 = a.head1.out;
  out.y1 = softmax_forward(out.logits1).data;
  if (cfg.with_top_branch) {
    a.head2 = mlp_forward(params.head_top, a.top.pooled);
    out.logits2 = a.head2.out;
    out.y2 = softmax_forward(out.logits2).data;
  }
  if (cfg.fusion != FusionMode::None) {
    a.head3 = mlp_forward(params.head_fusion, a.h_fused);
    out.logits3 = a.head3.out;
    out.y3 = softmax_forward(out.logits3).data;
  }
  return out;
}

void model_backward(ModelParams& params, const ForwardActs& acts, const Tensor& g_logits1,
                    const Tensor& g_logits2, const Tensor& g_logits3) {
  const auto& cfg = params.cfg;
  const std::size_t d = cfg.feature_dim();
  Tensor gh_main({d}), gh_top({d}), gh_fused({d});

  if (g_logits3.numel() > 0) {
    if (cfg.fusion == FusionMode::None)
      fail_invalid("model_backward: fusion head gradient given but fusion is disabled");
    mlp_backward(params.head_fusion, acts.head3, g_logits3, &gh_fused.data);
  }

  if (cfg.fusion == FusionMode::Attention) {
    double g_alpha_main = 0.0, g_alpha_top = 0.0;
    weighted_sum_backward(acts.main.pooled, acts.top.pooled, acts.alpha.alpha_main,
                          acts.alpha.alpha_top, gh_fused, gh_main.data, gh_top.data,
                          g_alpha_main, g_alpha_top);
    Tensor alpha({2}, {acts.alpha.alpha_main, acts.alpha.alpha_top});
    Tensor g_alpha({2}, {g_alpha_main, g_alpha_top});
    Tensor g_scores({2});
    softmax_backward(alpha, g_alpha, g_scores.data);
    mlp_backward(params.attention, acts.attn_main, Tensor({1}, {g_scores.data[0]}),
                 &gh_main.data);
    mlp_backward(params.attention, acts.attn_top, Tensor({1}, {g_scores.data[1]}),
                 &gh_top.data);
  } else if (cfg.fusion == FusionMode::Sum) {
    for (std::size_t i = 0; i < d; ++i) {
      gh_main.data[i] += gh_fused.data[i];
      gh_top.data[i] += gh_fused.data[i];
    }
  }

  if (g_logits1.numel() > 0)
    mlp_backward(params.head_main, acts.head1, g_logits1, &gh_main.data);
  if (g_logits2.numel() > 0) {
    if (!cfg.with_top_branch)
      fail_invalid("model_backward: top head gradient given without a top branch");
    mlp_backward(params.head_top, acts.head2, g_logits2, &gh_top.data);
  }

  branch_backward(cfg, params.branch_main, acts.main, gh_main);
  if (cfg.with_top_branch) branch_backward(cfg, params.branch_top, acts.top, gh_top);
}

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["main_dims"] = {cfg.main_h, cfg.main_w};
  j["top_dims"] = {cfg.top_h, cfg.top_w};
  j["conv_channels"] = cfg.conv_channels;
  j["kernel"] = cfg.kernel;
  j["stride"] = cfg.stride;
  j["padding"] = cfg.padding;
  j["head_hidden"] = cfg.head_hidden;
  j["attn_hidden"] = cfg.attn_hidden;
  j["n_classes"] = cfg.n_classes;
  j["with_top_branch"] = cfg.with_top_branch;
  j["fusion"] = cfg.fusion == FusionMode::Attention ? "attention"
                : cfg.fusion == FusionMode::Sum     ? "sum"
                                                    : "none";
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig cfg;
  const auto md = j.at("main_dims").get<std::array<std::size_t, 2>>();
  const auto td = j.at("top_dims").get<std::array<std::size_t, 2>>();
  cfg.main_h = md[0];
  cfg.main_w = md[1];
  cfg.top_h = td[0];
  cfg.top_w = td[1];
  cfg.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
  cfg.kernel = j.at("kernel").get<std::size_t>();
  cfg.stride = j.at("stride").get<std::size_t>();
  cfg.padding = j.at("padding").get<std::size_t>();
  cfg.head_hidden = j.at("head_hidden").get<std::size_t>();
  cfg.attn_hidden = j.at("attn_hidden").get<std::size_t>();
  cfg.n_classes = j.at("n_classes").get<std::size_t>();
  cfg.with_top_branch = j.at("with_top_branch").get<bool>();
  const std::string f = j.at("fusion").get<std::string>();
  cfg.fusion = f == "attention" ? FusionMode::Attention
               : f == "sum"     ? FusionMode::Sum
                                : FusionMode::None;
  return cfg;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  ckpt::Container c;
  c.strings["model_config"] = model_config_to_json(params.cfg);
  ModelParams copy = params;
  for (auto& group : param_groups(copy)) {
    for (std::size_t i = 0; i < group.tensors.size(); ++i) {
      Tensor t;
      t.shape = group.tensors[i]->shape;
      t.data = group.tensors[i]->data;
      c.tensors[cat("param/", group.name, "/", i)] = std::move(t);
    }
  }
  c.save(path);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  ckpt::Container c = ckpt::Container::load(path);
  ModelConfig cfg = model_config_from_json(c.str("model_config"));
  Rng rng(0);
  ModelParams params = init_params(cfg, rng);
  for (auto& group : param_groups(params)) {
    for (std::size_t i = 0; i < group.tensors.size(); ++i) {
      const Tensor& stored = c.tensor(cat("param/", group.name, "/", i));
      if (stored.shape != group.tensors[i]->shape)
        fail_runtime(cat("checkpoint tensor param/", group.name, "/", i, " has shape ",
                         shape_str(stored.shape), ", model expects ",
                         shape_str(group.tensors[i]->shape)));
      group.tensors[i]->data = stored.data;
    }
  }
  return params;
}

}  // namespace mvfd::model
