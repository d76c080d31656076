#include <cmath>

#include "doctest.h"
#include "mvfd/gate.hpp"
#include "mvfd/rng.hpp"

using namespace mvfd::gate;
using mvfd::Rng;
using mvfd::numerics::Distribution;

namespace {

Distribution random_distribution(Rng& rng, std::size_t k = 4) {
  Distribution p(k);
  double sum = 0.0;
  for (auto& v : p) {
    v = rng.uniform(1e-3, 1.0);
    sum += v;
  }
  for (auto& v : p) v /= sum;
  return p;
}

Distribution one_hot(std::size_t k, std::size_t idx) {
  Distribution p(k, 0.0);
  p[idx] = 1.0;
  return p;
}

}  // namespace

TEST_CASE("performance gap is the L1 distance") {
  CHECK(performance_gap({0.25, 0.75}, {0.25, 0.75}) == 0.0);
  CHECK(performance_gap({0.7, 0.3}, {0.4, 0.6}) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(performance_gap(one_hot(4, 0), one_hot(4, 2)) == 2.0);
  CHECK_THROWS_AS(performance_gap({0.5, 0.5}, {1.0, 0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("epsilon formula") {
  CHECK(epsilon_from_distances(0.0, 0.5) == 1.0);
  CHECK(epsilon_from_distances(0.3, 0.3) ==
        doctest::Approx(0.6065306597126334).epsilon(1e-12));  // e^{-1/2}
  CHECK(epsilon_from_distances(0.4, 0.8) ==
        doctest::Approx(0.7165313105737893).epsilon(1e-12));  // e^{-1/3}
  CHECK_THROWS_AS(epsilon_from_distances(0.0, 0.0), std::domain_error);
}

TEST_CASE("threshold formula") {
  CHECK(threshold_from_distances(0.0, 0.9) == doctest::Approx(0.9));
  const double d = 0.37;
  CHECK(threshold_from_distances(d, d) ==
        doctest::Approx(d * 0.3934693402873666).epsilon(1e-12));  // d(1 - e^{-1/2})
  // worked case: y=[1,0], y_t=[0.7,0.3], y_s=[0.4,0.6]
  Distribution y = {1.0, 0.0}, yt = {0.7, 0.3}, ys = {0.4, 0.6};
  CHECK(threshold(yt, ys, y) == doctest::Approx(0.7700812136557263).epsilon(1e-9));
  CHECK(epsilon(yt, ys, y) == doctest::Approx(0.7165313105737893).epsilon(1e-9));
}

TEST_CASE("decide: worked case keeps both training") {
  Distribution y = {1.0, 0.0}, yt = {0.7, 0.3}, ys = {0.4, 0.6};
  auto d = decide(kFusionTop, yt, ys, y);
  CHECK(d.gap == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(d.epsilon == doctest::Approx(0.7165313105737893).epsilon(1e-9));
  CHECK(d.delta == doctest::Approx(0.7700812136557263).epsilon(1e-9));
  CHECK_FALSE(d.freeze_teacher);
  CHECK_FALSE(d.degenerate);
}

TEST_CASE("decide: a perfect teacher sits on the freeze boundary") {
  // d_t = 0 makes delta = d_s and G = ||y - y_s|| = d_s, so G >= delta fires.
  Distribution y = one_hot(4, 1);
  Distribution ys = {0.2, 0.5, 0.2, 0.1};
  auto d = decide(kFusionMain, y, ys, y);
  CHECK(d.epsilon == 1.0);
  CHECK(d.delta == doctest::Approx(performance_gap(ys, y)));
  CHECK(d.gap == doctest::Approx(d.delta));
  CHECK(d.freeze_teacher);
}

TEST_CASE("decide: equal teacher and student keep training") {
  Distribution y = one_hot(4, 0);
  Distribution p = {0.4, 0.3, 0.2, 0.1};
  auto d = decide(kTopMain, p, p, y);
  CHECK(d.gap == 0.0);
  CHECK(d.delta > 0.0);
  CHECK_FALSE(d.freeze_teacher);
}

TEST_CASE("decide: degenerate case reports eps=1, delta=0, no freeze") {
  Distribution y = one_hot(4, 2);
  auto d = decide(kFusionTop, y, y, y);
  CHECK(d.degenerate);
  CHECK(d.epsilon == 1.0);
  CHECK(d.delta == 0.0);
  CHECK_FALSE(d.freeze_teacher);
}

TEST_CASE("invalid pairs are rejected") {
  TeacherStudentPair bad{Module::Main, Module::Top};
  Distribution y = one_hot(4, 0);
  CHECK_THROWS_WITH_AS(decide(bad, y, y, y), doctest::Contains("pair"),
                       std::invalid_argument);
}

TEST_CASE("bound property: d_s - d_t <= delta < d_s, eps in (1/e, 1]") {
  // acceptance runs 1e5 triples; this is the fast sweep
  Rng rng = Rng::stream(51, "gateprop");
  const double e_inv = std::exp(-1.0);
  for (int i = 0; i < 10000; ++i) {
    Distribution y = one_hot(4, rng.below(4));
    Distribution yt = random_distribution(rng);
    Distribution ys = random_distribution(rng);
    const double d_t = performance_gap(yt, y), d_s = performance_gap(ys, y);
    if (d_t == 0.0 || d_s == 0.0) continue;
    const double eps = epsilon_from_distances(d_t, d_s);
    const double delta = threshold_from_distances(d_t, d_s);
    CHECK(eps > e_inv);
    CHECK(eps <= 1.0);
    CHECK(d_s - d_t <= delta + 1e-15);
    CHECK(delta < d_s);
  }
}

TEST_CASE("epsilon decreases strictly as d_t grows at fixed d_s") {
  const double d_s = 0.8;
  double prev = 2.0;
  for (double d_t : {0.05, 0.1, 0.2, 0.4, 0.8, 1.6}) {
    const double eps = epsilon_from_distances(d_t, d_s);
    CHECK(eps < prev);
    prev = eps;
  }
}

TEST_CASE("decide is a pure function of its inputs") {
  Rng rng = Rng::stream(52, "gatepure");
  Distribution y = one_hot(4, 1);
  Distribution yt = random_distribution(rng);
  Distribution ys = random_distribution(rng);
  auto a = decide(kFusionTop, yt, ys, y);
  auto b = decide(kFusionTop, yt, ys, y);
  CHECK(a.gap == b.gap);
  CHECK(a.epsilon == b.epsilon);
  CHECK(a.delta == b.delta);
  CHECK(a.freeze_teacher == b.freeze_teacher);
}

TEST_CASE("batch decisions average per-sample distances before the formulas") {
  Distribution y0 = one_hot(2, 0), y1 = one_hot(2, 0);
  std::vector<Distribution> yt = {{0.9, 0.1}, {0.7, 0.3}};
  std::vector<Distribution> ys = {{0.6, 0.4}, {0.4, 0.6}};
  std::vector<Distribution> yy = {y0, y1};
  auto d = decide_batch(kFusionTop, yt, ys, yy);
  // means: G = (0.6+0.6)/2 = 0.6, d_t = (0.2+0.6)/2 = 0.4, d_s = (0.8+1.2)/2 = 1.0
  const double eps = std::exp(-0.4 / 1.4);
  CHECK(d.gap == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(d.epsilon == doctest::Approx(eps).epsilon(1e-12));
  CHECK(d.delta == doctest::Approx(1.0 - eps * 0.4).epsilon(1e-12));
  CHECK_FALSE(d.freeze_teacher);
  CHECK_THROWS_AS(decide_batch(kFusionTop, {}, {}, {}), std::invalid_argument);
}
