#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mvfd/tensor.hpp"

// Fixed differentiable op vocabulary: 2-D convolution, affine layer, ReLU,
// global average pooling, scalar-weighted sum, softmax, log-softmax, plus the
// scalar losses (cross-entropy, KL divergence). Backward functions accumulate
// into caller-provided gradient buffers; callers zero them first.

namespace mvfd::numerics {

using Distribution = std::vector<double>;

inline constexpr double kProbClamp = 1e-12;

bool is_distribution(const Distribution& p, double tol = 1e-9);
void validate_distribution(const Distribution& p, const char* name);

// --- conv2d: x [Cin,H,W], w [Cout,Cin,Kh,Kw], b [Cout] -> y [Cout,Ho,Wo]
//     Ho = (H + 2*pad - Kh) / stride + 1 (floored), zero padding.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                      std::size_t stride, std::size_t pad);
// gx may be null to skip the input gradient (first layer of a stack).
void conv2d_backward(const Tensor& x, const Tensor& w, std::size_t stride,
                     std::size_t pad, const Tensor& gy, std::vector<double>* gx,
                     std::vector<double>& gw, std::vector<double>& gb);

// --- affine: x [n], w [m,n], b [m] -> y = w x + b  [m]
Tensor affine_forward(const Tensor& x, const Tensor& w, const Tensor& b);
void affine_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                     std::vector<double>* gx, std::vector<double>& gw,
                     std::vector<double>& gb);

// --- relu (elementwise; subgradient 0 at the kink)
Tensor relu_forward(const Tensor& x);
void relu_backward(const Tensor& x, const Tensor& gy, std::vector<double>& gx);

// --- global average pool: x [C,H,W] -> y [C]
Tensor global_avg_pool_forward(const Tensor& x);
void global_avg_pool_backward(const std::vector<std::size_t>& x_shape,
                              const Tensor& gy, std::vector<double>& gx);

// --- weighted sum: y = wa * a + wb * b, scalars wa/wb are differentiable
Tensor weighted_sum_forward(const Tensor& a, const Tensor& b, double wa, double wb);
void weighted_sum_backward(const Tensor& a, const Tensor& b, double wa, double wb,
                           const Tensor& gy, std::vector<double>& ga,
                           std::vector<double>& gb, double& gwa, double& gwb);

// --- softmax / log-softmax over a 1-d tensor (max-shifted for stability)
Tensor softmax_forward(const Tensor& z);
void softmax_backward(const Tensor& p, const Tensor& gp, std::vector<double>& gz);
Tensor log_softmax_forward(const Tensor& z);
void log_softmax_backward(const Tensor& l, const Tensor& gl, std::vector<double>& gz);

// --- scalar losses over distributions (probabilities clamped at 1e-12
//     before every log)
double cross_entropy(const Distribution& pred, std::size_t label);
void cross_entropy_backward(const Distribution& pred, std::size_t label,
                            double upstream, std::vector<double>& gpred);

double kl_divergence(const Distribution& target, const Distribution& pred);
void kl_divergence_backward_pred(const Distribution& target, const Distribution& pred,
                                 double upstream, std::vector<double>& gpred);

// --- generic kind-tagged dispatch over the op vocabulary; used by the
//     gradient-check harness and anything that wants a uniform surface.
//     Input conventions (data inputs first, then parameters):
//       Conv2d:         {x, w, b}        (attrs: stride, pad)
//       Affine:         {x, w, b}
//       Relu:           {x}
//       GlobalAvgPool:  {x}
//       WeightedSum:    {a, b, wa[1], wb[1]}
//       Softmax:        {z}
//       LogSoftmax:     {z}
enum class OpKind { Conv2d, Affine, Relu, GlobalAvgPool, WeightedSum, Softmax, LogSoftmax };

const char* op_name(OpKind kind);

struct OpAttrs {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

Tensor forward_op(OpKind kind, const std::vector<Tensor>& inputs,
                  const OpAttrs& attrs = {});
// `inputs` doubles as the saved forward state; gradients are returned in
// input order.
std::vector<Tensor> backward_op(OpKind kind, const std::vector<Tensor>& inputs,
                                const Tensor& upstream, const OpAttrs& attrs = {});

}  // namespace mvfd::numerics
