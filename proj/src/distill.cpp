#include "mvfd/distill.hpp"

namespace mvfd::distill {

using namespace mvfd::numerics;

namespace {

Tensor scaled(const Tensor& logits, double t) {
  Tensor out = logits;
  for (auto& v : out.data) v /= t;
  return out;
}

void check_pair(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape != b.shape)
    fail_invalid(cat("kd: ", what, " logit lengths differ: ", shape_str(a.shape),
                     " vs ", shape_str(b.shape)));
}

}  // namespace

Distribution soften(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0))
    fail_invalid(cat("soften: temperature must be positive, got ", temperature));
  return softmax_forward(scaled(logits, temperature)).data;
}

double kd_term(const Tensor& learner_logits, const Tensor& target_logits,
               const DistillConfig& cfg) {
  check_pair(learner_logits, target_logits, "learner/target");
  const Distribution target = soften(target_logits, cfg.temperature);
  const Distribution learner = soften(learner_logits, cfg.temperature);
  const double scale =
      cfg.scale_by_t_squared ? cfg.temperature * cfg.temperature : 1.0;
  return scale * kl_divergence(target, learner);
}

void kd_term_grad_learner(const Tensor& learner_logits, const Tensor& target_logits,
                          const DistillConfig& cfg, double upstream,
                          std::vector<double>& g_learner) {
  check_pair(learner_logits, target_logits, "learner/target");
  const double t = cfg.temperature;
  if (!(t > 0.0)) fail_invalid(cat("soften: temperature must be positive, got ", t));
  const double scale = (cfg.scale_by_t_squared ? t * t : 1.0) * upstream;

  const Distribution target = soften(target_logits, t);
  Tensor learner = softmax_forward(scaled(learner_logits, t));

  // chain: KL wrt pred -> softmax -> 1/T logit scaling
  std::vector<double> gp(learner.numel(), 0.0);
  kl_divergence_backward_pred(target, learner.data, scale, gp);
  std::vector<double> gz(learner.numel(), 0.0);
  softmax_backward(learner, Tensor(learner.shape, gp), gz);
  for (std::size_t i = 0; i < gz.size(); ++i) g_learner[i] += gz[i] / t;
}

KdBreakdown multiview_kd_loss(const Tensor& logits1, const Tensor& logits2,
                              const Tensor& logits3, const DistillConfig& cfg) {
  KdBreakdown out;
  out.term_1_from_2 = kd_term(logits1, logits2, cfg);
  out.term_2_from_1 = kd_term(logits2, logits1, cfg);
  out.term_3_from_1 = kd_term(logits3, logits1, cfg);
  out.term_3_from_2 = kd_term(logits3, logits2, cfg);
  out.total = out.term_1_from_2 + out.term_2_from_1 + out.term_3_from_1 +
              out.term_3_from_2;
  return out;
}

KdBreakdown mutual_kd_loss(const Tensor& logits1, const Tensor& logits2,
                           const DistillConfig& cfg) {
  KdBreakdown out;
  out.term_1_from_2 = kd_term(logits1, logits2, cfg);
  out.term_2_from_1 = kd_term(logits2, logits1, cfg);
  out.total = out.term_1_from_2 + out.term_2_from_1;
  return out;
}

void multiview_kd_gradients(const Tensor& logits1, const Tensor& logits2,
                            const Tensor& logits3, const DistillConfig& cfg,
                            double upstream, std::vector<double>& g1,
                            std::vector<double>& g2, std::vector<double>& g3) {
  kd_term_grad_learner(logits1, logits2, cfg, upstream, g1);
  kd_term_grad_learner(logits2, logits1, cfg, upstream, g2);
  kd_term_grad_learner(logits3, logits1, cfg, upstream, g3);
  kd_term_grad_learner(logits3, logits2, cfg, upstream, g3);
}

void mutual_kd_gradients(const Tensor& logits1, const Tensor& logits2,
                         const DistillConfig& cfg, double upstream,
                         std::vector<double>& g1, std::vector<double>& g2) {
  kd_term_grad_learner(logits1, logits2, cfg, upstream, g1);
  kd_term_grad_learner(logits2, logits1, cfg, upstream, g2);
}

}  // namespace mvfd::distill
