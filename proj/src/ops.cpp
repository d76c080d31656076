#include "mvfd/ops.hpp"

#include <algorithm>
#include <cmath>

namespace mvfd::numerics {

namespace {

void require(bool cond, const std::string& m) {
  if (!cond) fail_invalid(m);
}

void check_ndim(const Tensor& t, std::size_t n, const char* op, const char* which) {
  if (t.ndim() != n)
    fail_invalid(cat(op, ": ", which, " must have ", n, " dims, got shape ",
                     shape_str(t.shape)));
}

}  // namespace

bool is_distribution(const Distribution& p, double tol) {
  if (p.empty()) return false;
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) <= tol;
}

void validate_distribution(const Distribution& p, const char* name) {
  if (!is_distribution(p))
    fail_invalid(cat(name, " is not a valid distribution (", p.size(),
                     " entries; need entries in [0,1] summing to 1)"));
}

// ---------------------------------------------------------------- conv2d

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                      std::size_t stride, std::size_t pad) {
  check_ndim(x, 3, "conv2d", "input");
  check_ndim(w, 4, "conv2d", "kernel");
  check_ndim(b, 1, "conv2d", "bias");
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  require(w.dim(1) == cin, cat("conv2d: kernel expects ", w.dim(1),
                               " input channels, input has ", cin));
  require(b.dim(0) == cout, cat("conv2d: bias has ", b.dim(0),
                                " entries, kernel has ", cout, " output channels"));
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(h + 2 * pad >= kh && wd + 2 * pad >= kw,
          cat("conv2d: kernel ", kh, "x", kw, " larger than padded input ",
              h + 2 * pad, "x", wd + 2 * pad));
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (wd + 2 * pad - kw) / stride + 1;

  Tensor y({cout, ho, wo});
  const double* xp = x.data.data();
  const double* wp = w.data.data();
  double* yp = y.data.data();
  for (std::size_t co = 0; co < cout; ++co) {
    const double bias = b.data[co];
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = bias;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double* xc = xp + ci * h * wd;
          const double* wc = wp + ((co * cin + ci) * kh) * kw;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            const double* xrow = xc + static_cast<std::size_t>(iy) * wd;
            const double* wrow = wc + ky * kw;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (ix < 0 || ix >= static_cast<long>(wd)) continue;
              acc += xrow[static_cast<std::size_t>(ix)] * wrow[kx];
            }
          }
        }
        yp[(co * ho + oy) * wo + ox] = acc;
      }
    }
  }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, std::size_t stride,
                     std::size_t pad, const Tensor& gy, std::vector<double>* gx,
                     std::vector<double>& gw, std::vector<double>& gb) {
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  check_ndim(gy, 3, "conv2d", "upstream gradient");
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (wd + 2 * pad - kw) / stride + 1;
  require(gy.shape == std::vector<std::size_t>({cout, ho, wo}),
          cat("conv2d: upstream gradient shape ", shape_str(gy.shape),
              " does not match output ", shape_str({cout, ho, wo})));
  require(gw.size() == w.numel() && gb.size() == cout &&
              (!gx || gx->size() == x.numel()),
          "conv2d: gradient buffers missing or mis-sized");

  const double* xp = x.data.data();
  const double* wp = w.data.data();
  const double* gp = gy.data.data();
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const double g = gp[(co * ho + oy) * wo + ox];
        gb[co] += g;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double* xc = xp + ci * h * wd;
          const std::size_t wbase = ((co * cin + ci) * kh) * kw;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (ix < 0 || ix >= static_cast<long>(wd)) continue;
              const std::size_t xi = ci * h * wd + static_cast<std::size_t>(iy) * wd +
                                     static_cast<std::size_t>(ix);
              gw[wbase + ky * kw + kx] += g * xc[static_cast<std::size_t>(iy) * wd +
                                                 static_cast<std::size_t>(ix)];
              if (gx) (*gx)[xi] += g * wp[wbase + ky * kw + kx];
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------- affine

Tensor affine_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_ndim(x, 1, "affine", "input");
  check_ndim(w, 2, "affine", "weight");
  check_ndim(b, 1, "affine", "bias");
  const std::size_t m = w.dim(0), n = w.dim(1);
  require(x.dim(0) == n, cat("affine: weight is ", m, "x", n, " but input has ",
                             x.dim(0), " entries"));
  require(b.dim(0) == m, cat("affine: bias has ", b.dim(0), " entries, weight rows ", m));
  Tensor y({m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = b.data[i];
    const double* wrow = w.data.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) acc += wrow[j] * x.data[j];
    y.data[i] = acc;
  }
  return y;
}

void affine_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                     std::vector<double>* gx, std::vector<double>& gw,
                     std::vector<double>& gb) {
  const std::size_t m = w.dim(0), n = w.dim(1);
  require(gy.numel() == m, cat("affine: upstream gradient has ", gy.numel(),
                               " entries, output has ", m));
  require(gw.size() == w.numel() && gb.size() == m && (!gx || gx->size() == n),
          "affine: gradient buffers missing or mis-sized");
  for (std::size_t i = 0; i < m; ++i) {
    const double g = gy.data[i];
    gb[i] += g;
    double* gwrow = gw.data() + i * n;
    const double* wrow = w.data.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      gwrow[j] += g * x.data[j];
      if (gx) (*gx)[j] += g * wrow[j];
    }
  }
}

// ---------------------------------------------------------------- relu

Tensor relu_forward(const Tensor& x) {
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
  return y;
}

void relu_backward(const Tensor& x, const Tensor& gy, std::vector<double>& gx) {
  require(gy.numel() == x.numel(),
          cat("relu: upstream gradient shape ", shape_str(gy.shape),
              " does not match input ", shape_str(x.shape)));
  require(gx.size() == x.numel(), "relu: gradient buffer mis-sized");
  for (std::size_t i = 0; i < x.numel(); ++i)
    if (x.data[i] > 0.0) gx[i] += gy.data[i];
}

// ------------------------------------------------------ global average pool

Tensor global_avg_pool_forward(const Tensor& x) {
  check_ndim(x, 3, "global_avg_pool", "input");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor y({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    const double* p = x.data.data() + ch * hw;
    for (std::size_t i = 0; i < hw; ++i) acc += p[i];
    y.data[ch] = acc / static_cast<double>(hw);
  }
  return y;
}

void global_avg_pool_backward(const std::vector<std::size_t>& x_shape,
                              const Tensor& gy, std::vector<double>& gx) {
  require(x_shape.size() == 3, "global_avg_pool: input shape must have 3 dims");
  const std::size_t c = x_shape[0], hw = x_shape[1] * x_shape[2];
  require(gy.numel() == c, cat("global_avg_pool: upstream gradient has ", gy.numel(),
                               " entries, expected ", c));
  require(gx.size() == c * hw, "global_avg_pool: gradient buffer mis-sized");
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double g = gy.data[ch] / static_cast<double>(hw);
    double* p = gx.data() + ch * hw;
    for (std::size_t i = 0; i < hw; ++i) p[i] += g;
  }
}

// ---------------------------------------------------------- weighted sum

Tensor weighted_sum_forward(const Tensor& a, const Tensor& b, double wa, double wb) {
  require(a.shape == b.shape, cat("weighted_sum: operand shapes differ: ",
                                  shape_str(a.shape), " vs ", shape_str(b.shape)));
  Tensor y(a.shape);
  for (std::size_t i = 0; i < a.numel(); ++i) y.data[i] = wa * a.data[i] + wb * b.data[i];
  return y;
}

void weighted_sum_backward(const Tensor& a, const Tensor& b, double wa, double wb,
                           const Tensor& gy, std::vector<double>& ga,
                           std::vector<double>& gb, double& gwa, double& gwb) {
  require(a.shape == b.shape && gy.shape == a.shape,
          cat("weighted_sum: gradient shape ", shape_str(gy.shape),
              " does not match operands ", shape_str(a.shape)));
  require(ga.size() == a.numel() && gb.size() == b.numel(),
          "weighted_sum: gradient buffers mis-sized");
  for (std::size_t i = 0; i < a.numel(); ++i) {
    ga[i] += wa * gy.data[i];
    gb[i] += wb * gy.data[i];
    gwa += gy.data[i] * a.data[i];
    gwb += gy.data[i] * b.data[i];
  }
}

// ------------------------------------------------------- softmax family

Tensor softmax_forward(const Tensor& z) {
  check_ndim(z, 1, "softmax", "input");
  const std::size_t n = z.numel();
  Tensor p({n});
  double mx = z.data[0];
  for (double v : z.data) mx = std::max(mx, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p.data[i] = std::exp(z.data[i] - mx);
    sum += p.data[i];
  }
  for (std::size_t i = 0; i < n; ++i) p.data[i] /= sum;
  return p;
}

void softmax_backward(const Tensor& p, const Tensor& gp, std::vector<double>& gz) {
  require(gp.numel() == p.numel(), "softmax: upstream gradient size mismatch");
  require(gz.size() == p.numel(), "softmax: gradient buffer mis-sized");
  double dot = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) dot += gp.data[i] * p.data[i];
  for (std::size_t i = 0; i < p.numel(); ++i)
    gz[i] += p.data[i] * (gp.data[i] - dot);
}

Tensor log_softmax_forward(const Tensor& z) {
  check_ndim(z, 1, "log_softmax", "input");
  const std::size_t n = z.numel();
  Tensor l({n});
  double mx = z.data[0];
  for (double v : z.data) mx = std::max(mx, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(z.data[i] - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < n; ++i) l.data[i] = z.data[i] - lse;
  return l;
}

void log_softmax_backward(const Tensor& l, const Tensor& gl, std::vector<double>& gz) {
  require(gl.numel() == l.numel(), "log_softmax: upstream gradient size mismatch");
  require(gz.size() == l.numel(), "log_softmax: gradient buffer mis-sized");
  double sum = 0.0;
  for (std::size_t i = 0; i < l.numel(); ++i) sum += gl.data[i];
  for (std::size_t i = 0; i < l.numel(); ++i)
    gz[i] += gl.data[i] - std::exp(l.data[i]) * sum;
}

// ------------------------------------------------------------ scalar losses

double cross_entropy(const Distribution& pred, std::size_t label) {
  validate_distribution(pred, "cross_entropy: pred");
  if (label >= pred.size())
    fail_invalid(cat("cross_entropy: label ", label, " out of range for ",
                     pred.size(), " classes"));
  return -std::log(std::max(pred[label], kProbClamp));
}

void cross_entropy_backward(const Distribution& pred, std::size_t label,
                            double upstream, std::vector<double>& gpred) {
  if (label >= pred.size())
    fail_invalid(cat("cross_entropy: label ", label, " out of range for ",
                     pred.size(), " classes"));
  require(gpred.size() == pred.size(), "cross_entropy: gradient buffer mis-sized");
  if (pred[label] > kProbClamp) gpred[label] += upstream * (-1.0 / pred[label]);
}

double kl_divergence(const Distribution& target, const Distribution& pred) {
  if (target.size() != pred.size())
    fail_invalid(cat("kl_divergence: length mismatch: target has ", target.size(),
                     " entries, pred has ", pred.size()));
  validate_distribution(target, "kl_divergence: target");
  validate_distribution(pred, "kl_divergence: pred");
  double acc = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    acc += target[i] * (std::log(std::max(target[i], kProbClamp)) -
                        std::log(std::max(pred[i], kProbClamp)));
  }
  return acc;
}

void kl_divergence_backward_pred(const Distribution& target, const Distribution& pred,
                                 double upstream, std::vector<double>& gpred) {
  if (target.size() != pred.size())
    fail_invalid(cat("kl_divergence: length mismatch: target has ", target.size(),
                     " entries, pred has ", pred.size()));
  require(gpred.size() == pred.size(), "kl_divergence: gradient buffer mis-sized");
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] > kProbClamp) gpred[i] += upstream * (-target[i] / pred[i]);
}

// ----------------------------------------------------------- generic dispatch

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Affine: return "affine";
    case OpKind::Relu: return "relu";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::WeightedSum: return "weighted_sum";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSoftmax: return "log_softmax";
  }
  return "unknown";
}

namespace {

void check_arity(OpKind kind, const std::vector<Tensor>& inputs, std::size_t n) {
  if (inputs.size() != n)
    fail_invalid(cat(op_name(kind), ": expected ", n, " saved input tensors, got ",
                     inputs.size()));
}

double scalar_of(OpKind kind, const Tensor& t, const char* which) {
  if (t.numel() != 1)
    fail_invalid(cat(op_name(kind), ": ", which, " must be a scalar tensor, got shape ",
                     shape_str(t.shape)));
  return t.data[0];
}

}  // namespace

Tensor forward_op(OpKind kind, const std::vector<Tensor>& inputs, const OpAttrs& attrs) {
  switch (kind) {
    case OpKind::Conv2d:
      check_arity(kind, inputs, 3);
      return conv2d_forward(inputs[0], inputs[1], inputs[2], attrs.stride, attrs.pad);
    case OpKind::Affine:
      check_arity(kind, inputs, 3);
      return affine_forward(inputs[0], inputs[1], inputs[2]);
    case OpKind::Relu:
      check_arity(kind, inputs, 1);
      return relu_forward(inputs[0]);
    case OpKind::GlobalAvgPool:
      check_arity(kind, inputs, 1);
      return global_avg_pool_forward(inputs[0]);
    case OpKind::WeightedSum: {
      check_arity(kind, inputs, 4);
      return weighted_sum_forward(inputs[0], inputs[1],
                                  scalar_of(kind, inputs[2], "wa"),
                                  scalar_of(kind, inputs[3], "wb"));
    }
    case OpKind::Softmax:
      check_arity(kind, inputs, 1);
      return softmax_forward(inputs[0]);
    case OpKind::LogSoftmax:
      check_arity(kind, inputs, 1);
      return log_softmax_forward(inputs[0]);
  }
  fail_invalid("forward_op: unknown op kind");
}

std::vector<Tensor> backward_op(OpKind kind, const std::vector<Tensor>& inputs,
                                const Tensor& upstream, const OpAttrs& attrs) {
  auto grad_like = [](const Tensor& t) {
    Tensor g(t.shape);
    return g;
  };
  switch (kind) {
    case OpKind::Conv2d: {
      check_arity(kind, inputs, 3);
      Tensor gx = grad_like(inputs[0]), gw = grad_like(inputs[1]), gb = grad_like(inputs[2]);
      conv2d_backward(inputs[0], inputs[1], attrs.stride, attrs.pad, upstream,
                      &gx.data, gw.data, gb.data);
      return {gx, gw, gb};
    }
    case OpKind::Affine: {
      check_arity(kind, inputs, 3);
      Tensor gx = grad_like(inputs[0]), gw = grad_like(inputs[1]), gb = grad_like(inputs[2]);
      affine_backward(inputs[0], inputs[1], upstream, &gx.data, gw.data, gb.data);
      return {gx, gw, gb};
    }
    case OpKind::Relu: {
      check_arity(kind, inputs, 1);
      Tensor gx = grad_like(inputs[0]);
      relu_backward(inputs[0], upstream, gx.data);
      return {gx};
    }
    case OpKind::GlobalAvgPool: {
      check_arity(kind, inputs, 1);
      Tensor gx = grad_like(inputs[0]);
      global_avg_pool_backward(inputs[0].shape, upstream, gx.data);
      return {gx};
    }
    case OpKind::WeightedSum: {
      check_arity(kind, inputs, 4);
      Tensor ga = grad_like(inputs[0]), gb = grad_like(inputs[1]);
      double gwa = 0.0, gwb = 0.0;
      weighted_sum_backward(inputs[0], inputs[1], scalar_of(kind, inputs[2], "wa"),
                            scalar_of(kind, inputs[3], "wb"), upstream, ga.data,
                            gb.data, gwa, gwb);
      return {ga, gb, Tensor::scalar(gwa), Tensor::scalar(gwb)};
    }
    case OpKind::Softmax: {
      check_arity(kind, inputs, 1);
      Tensor p = softmax_forward(inputs[0]);
      Tensor gz = grad_like(inputs[0]);
      softmax_backward(p, upstream, gz.data);
      return {gz};
    }
    case OpKind::LogSoftmax: {
      check_arity(kind, inputs, 1);
      Tensor l = log_softmax_forward(inputs[0]);
      Tensor gz = grad_like(inputs[0]);
      log_softmax_backward(l, upstream, gz.data);
      return {gz};
    }
  }
  fail_invalid("backward_op: unknown op kind");
}

}  // namespace mvfd::numerics
