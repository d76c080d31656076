#include "mvfd/gate.hpp"

#include <cmath>

namespace mvfd::gate {

using namespace mvfd::numerics;

const char* module_name(Module m) {
  switch (m) {
    case Module::Fusion: return "fusion";
    case Module::Top: return "top";
    case Module::Main: return "main";
  }
  return "unknown";
}

void validate_pair(const TeacherStudentPair& pair) {
  const bool ok = (pair.teacher == Module::Fusion && pair.student == Module::Top) ||
                  (pair.teacher == Module::Fusion && pair.student == Module::Main) ||
                  (pair.teacher == Module::Top && pair.student == Module::Main);
  if (!ok)
    fail_invalid(cat("gate: invalid teacher-student pair ", module_name(pair.teacher),
                     "->", module_name(pair.student),
                     " (expected fusion-top, fusion-main, or top-main)"));
}

std::string pair_name(const TeacherStudentPair& pair) {
  return cat(module_name(pair.teacher), "-", module_name(pair.student));
}

double performance_gap(const Distribution& y_t, const Distribution& y_s) {
  if (y_t.size() != y_s.size())
    fail_invalid(cat("performance_gap: length mismatch: ", y_t.size(), " vs ",
                     y_s.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < y_t.size(); ++i) acc += std::abs(y_t[i] - y_s[i]);
  return acc;
}

double epsilon_from_distances(double d_t, double d_s) {
  if (d_s + d_t == 0.0)
    throw std::domain_error(
        "gate: degenerate case d_s + d_t == 0; caller skips gating");
  return std::exp(-d_t / (d_s + d_t));
}

double epsilon(const Distribution& y_t, const Distribution& y_s,
               const Distribution& y_true) {
  return epsilon_from_distances(performance_gap(y_t, y_true),
                                performance_gap(y_s, y_true));
}

double threshold_from_distances(double d_t, double d_s) {
  return d_s - epsilon_from_distances(d_t, d_s) * d_t;
}

double threshold(const Distribution& y_t, const Distribution& y_s,
                 const Distribution& y_true) {
  return threshold_from_distances(performance_gap(y_t, y_true),
                                  performance_gap(y_s, y_true));
}

GateDecision decide_from_stats(const TeacherStudentPair& pair, double gap, double d_t,
                               double d_s) {
  validate_pair(pair);
  GateDecision d;
  d.pair = pair;
  d.gap = gap;
  if (d_s + d_t == 0.0) {
    d.degenerate = true;
    d.epsilon = 1.0;
    d.delta = 0.0;
    d.freeze_teacher = false;
    return d;
  }
  d.epsilon = epsilon_from_distances(d_t, d_s);
  d.delta = d_s - d.epsilon * d_t;
  d.freeze_teacher = gap >= d.delta;  // freeze at the boundary
  return d;
}

GateDecision decide(const TeacherStudentPair& pair, const Distribution& y_t,
                    const Distribution& y_s, const Distribution& y_true) {
  return decide_from_stats(pair, performance_gap(y_t, y_s),
                           performance_gap(y_t, y_true),
                           performance_gap(y_s, y_true));
}

GateDecision decide_batch(const TeacherStudentPair& pair,
                          std::span<const Distribution> y_t,
                          std::span<const Distribution> y_s,
                          std::span<const Distribution> y_true) {
  if (y_t.size() != y_s.size() || y_t.size() != y_true.size() || y_t.empty())
    fail_invalid("gate: decide_batch needs equal, non-empty distribution lists");
  double gap = 0.0, d_t = 0.0, d_s = 0.0;
  for (std::size_t i = 0; i < y_t.size(); ++i) {
    gap += performance_gap(y_t[i], y_s[i]);
    d_t += performance_gap(y_t[i], y_true[i]);
    d_s += performance_gap(y_s[i], y_true[i]);
  }
  const double n = static_cast<double>(y_t.size());
  return decide_from_stats(pair, gap / n, d_t / n, d_s / n);
}

}  // namespace mvfd::gate
