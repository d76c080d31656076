#pragma once

#include <span>
#include <string>

#include "mvfd/ops.hpp"

// Self-adaptive teacher gating. Per teacher-student pair the performance gap
// G = ||y_t - y_s||_1 is compared against the adaptive threshold
//   delta = d_s - eps * d_t,   eps = exp(-d_t / (d_s + d_t)),
// with d_x = ||y_x - y_true||_1. The teacher freezes for the step when
// G >= delta. During training the distances are batch means of the
// per-sample values; the formulas are applied to the means.

namespace mvfd::gate {

using numerics::Distribution;

enum class Module { Fusion, Top, Main };

const char* module_name(Module m);

/// Exactly three pairs exist: Fusion->Top, Fusion->Main, Top->Main.
struct TeacherStudentPair {
  Module teacher = Module::Fusion;
  Module student = Module::Top;
};

inline constexpr TeacherStudentPair kFusionTop{Module::Fusion, Module::Top};
inline constexpr TeacherStudentPair kFusionMain{Module::Fusion, Module::Main};
inline constexpr TeacherStudentPair kTopMain{Module::Top, Module::Main};

void validate_pair(const TeacherStudentPair& pair);
std::string pair_name(const TeacherStudentPair& pair);

/// L1 distance between two distributions.
double performance_gap(const Distribution& y_t, const Distribution& y_s);

/// eps = exp(-d_t / (d_s + d_t)); throws std::domain_error when
/// d_s + d_t == 0 (caller skips gating in that degenerate case).
double epsilon_from_distances(double d_t, double d_s);
double epsilon(const Distribution& y_t, const Distribution& y_s,
               const Distribution& y_true);

/// delta = d_s - eps * d_t.
double threshold_from_distances(double d_t, double d_s);
double threshold(const Distribution& y_t, const Distribution& y_s,
                 const Distribution& y_true);

struct GateDecision {
  TeacherStudentPair pair;
  double gap = 0.0;       // G
  double epsilon = 1.0;
  double delta = 0.0;
  bool freeze_teacher = false;
  bool degenerate = false;  // d_s + d_t == 0; eps/delta reported as 1/0
};

GateDecision decide_from_stats(const TeacherStudentPair& pair, double gap, double d_t,
                               double d_s);

GateDecision decide(const TeacherStudentPair& pair, const Distribution& y_t,
                    const Distribution& y_s, const Distribution& y_true);

/// Batch variant: per-sample G, d_t, d_s are averaged first, then the
/// epsilon/threshold formulas are applied to the means.
GateDecision decide_batch(const TeacherStudentPair& pair,
                          std::span<const Distribution> y_t,
                          std::span<const Distribution> y_s,
                          std::span<const Distribution> y_true);

}  // namespace mvfd::gate
