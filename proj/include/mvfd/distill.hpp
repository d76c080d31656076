#pragma once

#include "mvfd/ops.hpp"

// Four-term mutual/fusion distillation over the three head outputs:
//   L_KD = D(y1,y2) + D(y2,y1) + D(y3,y1) + D(y3,y2)
// where D(a, b) softens both logit vectors at temperature T and measures
// KL(soften(b) || soften(a)); the first argument learns, the second is a
// detached target, so gradients never flow through the target side.

namespace mvfd::distill {

using numerics::Distribution;
using numerics::Tensor;

struct DistillConfig {
  double temperature = 2.0;
  bool scale_by_t_squared = true;
};

/// softmax(logits / T); rejects T <= 0.
Distribution soften(const Tensor& logits, double temperature);

/// One directed term: KL(soften(target) || soften(learner)), times T^2 when
/// configured.
double kd_term(const Tensor& learner_logits, const Tensor& target_logits,
               const DistillConfig& cfg);

/// Gradient of kd_term with respect to the learner logits only (the target is
/// detached by construction); accumulates upstream * d(term)/d(learner).
void kd_term_grad_learner(const Tensor& learner_logits, const Tensor& target_logits,
                          const DistillConfig& cfg, double upstream,
                          std::vector<double>& g_learner);

struct KdBreakdown {
  double term_1_from_2 = 0.0;  // D(y1, y2)
  double term_2_from_1 = 0.0;  // D(y2, y1)
  double term_3_from_1 = 0.0;  // D(y3, y1)
  double term_3_from_2 = 0.0;  // D(y3, y2)
  double total = 0.0;
};

/// Per-sample loss; batch reduction (arithmetic mean) is the trainer's job.
KdBreakdown multiview_kd_loss(const Tensor& logits1, const Tensor& logits2,
                              const Tensor& logits3, const DistillConfig& cfg);

/// The two mutual terms only, for configurations without a fusion head.
KdBreakdown mutual_kd_loss(const Tensor& logits1, const Tensor& logits2,
                           const DistillConfig& cfg);

/// Learner-side gradients of multiview_kd_loss, scaled by `upstream`.
void multiview_kd_gradients(const Tensor& logits1, const Tensor& logits2,
                            const Tensor& logits3, const DistillConfig& cfg,
                            double upstream, std::vector<double>& g1,
                            std::vector<double>& g2, std::vector<double>& g3);

void mutual_kd_gradients(const Tensor& logits1, const Tensor& logits2,
                         const DistillConfig& cfg, double upstream,
                         std::vector<double>& g1, std::vector<double>& g2);

}  // namespace mvfd::distill
