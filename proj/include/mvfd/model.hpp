#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mvfd/dataset.hpp"
#include "mvfd/ops.hpp"
#include "mvfd/rng.hpp"

// Two non-shared conv branches, a shared attention-scoring MLP with a joint
// softmax over the two view scores, and three independent classifier heads:
// main (C1), top (C2), fusion (C3). Backward passes are hand-chained through
// the op vocabulary and accumulate into each parameter's grad buffer.

namespace mvfd::model {

using numerics::Distribution;
using numerics::Tensor;

enum class FusionMode { None, Sum, Attention };

struct ModelConfig {
  std::size_t main_h = 32, main_w = 32;
  std::size_t top_h = 32, top_w = 24;
  std::vector<std::size_t> conv_channels = {8, 16, 32};
  std::size_t kernel = 3, stride = 2, padding = 1;
  std::size_t head_hidden = 16;
  std::size_t attn_hidden = 16;
  std::size_t n_classes = 4;
  bool with_top_branch = true;
  FusionMode fusion = FusionMode::Attention;

  std::size_t feature_dim() const { return conv_channels.back(); }
  bool operator==(const ModelConfig&) const = default;
};

struct ConvLayerParams {
  Tensor w;  // [Cout, Cin, k, k]
  Tensor b;  // [Cout]
};

/// One view branch; the two branches never share parameters.
struct BranchParams {
  std::vector<ConvLayerParams> layers;
};

/// Two-layer MLP, used for the classifier heads and the attention scorer.
struct MlpParams {
  Tensor w1, b1, w2, b2;
};

struct ModelParams {
  ModelConfig cfg;
  BranchParams branch_main;
  BranchParams branch_top;   // empty when !with_top_branch
  MlpParams attention;       // empty unless fusion == Attention
  MlpParams head_main;
  MlpParams head_top;        // empty when !with_top_branch
  MlpParams head_fusion;     // empty when fusion == None
};

ModelParams init_params(const ModelConfig& cfg, Rng& rng);

/// Canonical parameter-group enumeration (stable order), the unit of
/// checkpointing, optimizer state, and gate freezing.
struct ParamGroup {
  std::string name;
  std::vector<Tensor*> tensors;
  std::vector<bool> decay;  // weight-decay applies to weights, not biases
};
std::vector<ParamGroup> param_groups(ModelParams& params);

void zero_grads(ModelParams& params);

struct FeatureSet {
  Tensor h_main;
  Tensor h_top;                    // empty when no top branch
  std::optional<Tensor> h_fused;
};

struct FusionWeights {
  double alpha_main = 0.5;
  double alpha_top = 0.5;
};

struct PredictionTriple {
  Distribution y1, y2, y3;
};

// saved forward state for one sample
struct BranchActs {
  Tensor input;
  std::vector<Tensor> conv_out;   // pre-activation
  std::vector<Tensor> relu_out;   // post-activation
  Tensor pooled;
};

struct MlpActs {
  Tensor input, hidden_pre, hidden, out;
};

struct ForwardActs {
  BranchActs main, top;
  MlpActs attn_main, attn_top;
  FusionWeights alpha;
  Tensor h_fused;
  MlpActs head1, head2, head3;
};

struct ModelOutput {
  FeatureSet features;
  std::optional<FusionWeights> fusion;
  Tensor logits1, logits2, logits3;       // empty when the head is absent
  Distribution y1, y2, y3;                // softmax of the logits above
};

/// h_main = f1(main view), h_top = f2(top view); h_fused left empty.
FeatureSet extract_features(const dataset::MultiViewSample& sample,
                            const ModelParams& params);

/// Shared-MLP scores for both views, joint softmax, convex combination.
/// alpha_top is computed as 1 - alpha_main so the weights sum to 1 exactly.
std::pair<FusionWeights, Tensor> attend_fuse(const Tensor& h_main, const Tensor& h_top,
                                             const MlpParams& attention);

enum class Head { C1, C2, C3 };
Distribution classify(const Tensor& feature, const ModelParams& params, Head head);

ModelOutput forward_all(const dataset::MultiViewSample& sample, const ModelParams& params,
                        ForwardActs* acts = nullptr);

/// Accumulates parameter gradients for one sample given gradients with
/// respect to each head's logits (empty tensors for absent heads).
void model_backward(ModelParams& params, const ForwardActs& acts, const Tensor& g_logits1,
                    const Tensor& g_logits2, const Tensor& g_logits3);

// checkpoint container round-trip (bit-exact)
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace mvfd::model
