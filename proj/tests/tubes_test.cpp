#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ktube/tubes.hpp"

using namespace ktube;

namespace {

Mat m1(double v) { return Mat::Constant(1, 1, v); }
Vec v1(double v) { return Vec::Constant(1, v); }

HPolytope interval(double lo, double hi) {
  Mat a(2, 1);
  a << 1, -1;
  Vec b(2);
  b << hi, -lo;
  return HPolytope(a, b);
}

Mat rotation_scaled(double rho, double angle) {
  Mat r(2, 2);
  r << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return rho * r;
}

HPolytope square(double half) {
  Mat a(4, 2);
  a << 1, 0, -1, 0, 0, 1, 0, -1;
  return HPolytope(a, Vec::Constant(4, half));
}

}  // namespace

TEST_CASE("state tube scalar geometric series") {
  Box w_hat(Vec::Zero(1), v1(0.1));
  Box d_err = Box::zero(1);
  Mat cumulative;
  auto tube = build_state_tube(m1(1.0), v1(1.0), v1(0.09), m1(0.5),
                               Mat::Identity(1, 1), w_hat, d_err, 4,
                               &cumulative);
  REQUIRE(tube.size() == 4);
  CHECK(tube[0].h_vec[0] == Catch::Approx(0.91));
  CHECK(tube[1].h_vec[0] == Catch::Approx(0.86));
  CHECK(tube[2].h_vec[0] == Catch::Approx(0.835));
  CHECK(tube[3].h_vec[0] == Catch::Approx(0.8225));
  CHECK(cumulative(0, 0) == Catch::Approx(0.09));
  CHECK(cumulative(3, 0) == Catch::Approx(1.0 - 0.8225));
}

TEST_CASE("no uncertainty leaves the constraint untouched") {
  auto tube =
      build_state_tube(m1(1.0), v1(1.0), v1(0.0), m1(0.5), Mat::Identity(1, 1),
                       Box::zero(1), Box::zero(1), 5);
  for (const auto& s : tube) CHECK(s.h_vec[0] == 1.0);
}

TEST_CASE("state tube includes the model error and lifts the rows") {
  // lifted dim 2, physical dim 1: F acts on the first coordinate only
  Mat phi(2, 2);
  phi << 0.5, 0.0, 0.2, 0.1;
  Mat d_mat(2, 1);
  d_mat << 1, 0;
  Box w_hat(Vec::Zero(1), v1(0.1));
  Box d_err(Vec::Zero(2), Vec::Constant(2, 0.01));
  auto tube = build_state_tube(m1(1.0), v1(1.0), v1(0.05), phi, d_mat, w_hat,
                               d_err, 2);
  REQUIRE(tube[0].h_mat.cols() == 2);
  CHECK(tube[0].h_mat(0, 0) == 1.0);
  CHECK(tube[0].h_mat(0, 1) == 0.0);
  // stage 1: 1 - eta - supp(D, e1) = 1 - 0.05 - 0.01
  CHECK(tube[0].h_vec[0] == Catch::Approx(0.94));
  // stage 2 subtracts supp(Phi D, e1) = 0.5*0.01 (+0*0.01) and supp(Phi DW, e1) = 0.05
  CHECK(tube[1].h_vec[0] == Catch::Approx(0.94 - 0.005 - 0.05));
}

TEST_CASE("tube nesting and summable increments") {
  Mat phi = rotation_scaled(0.7, 0.5);
  Box w_hat(Vec::Zero(2), Vec::Constant(2, 0.05));
  Box d_err(Vec::Zero(2), Vec::Constant(2, 0.01));
  Mat f(4, 2);
  f << 1, 0, -1, 0, 0, 1, 0, -1;
  Mat cumulative;
  auto tube = build_state_tube(f, Vec::Constant(4, 1.0), Vec::Zero(4), phi,
                               Mat::Identity(2, 2), w_hat, d_err, 8,
                               &cumulative);
  for (size_t j = 1; j < tube.size(); ++j)
    for (int l = 0; l < 4; ++l) CHECK(tube[j].h_vec[l] <= tube[j - 1].h_vec[l] + 1e-12);
  // stage increments shrink for a stable map
  const double inc_first = cumulative(1, 0) - cumulative(0, 0);
  const double inc_last = cumulative(7, 0) - cumulative(6, 0);
  CHECK(inc_last < inc_first);
  CHECK(inc_last >= 0.0);
}

TEST_CASE("input tube with zero gain never tightens") {
  Mat g(2, 1);
  g << 1, -1;
  auto tube = build_input_tube(g, Vec::Constant(2, 3.0), Mat::Zero(1, 2),
                               rotation_scaled(0.7, 0.3), Mat::Identity(2, 2),
                               Box(Vec::Zero(2), Vec::Constant(2, 0.1)),
                               Box::zero(2), 4);
  for (const auto& s : tube) CHECK(s.h_vec == Vec::Constant(2, 3.0));
}

TEST_CASE("input tube scalar hand case") {
  Mat g(2, 1);
  g << 1, -1;
  Box w_hat(Vec::Zero(1), v1(0.1));
  auto tube = build_input_tube(g, Vec::Constant(2, 1.0), m1(1.0), m1(0.5),
                               Mat::Identity(1, 1), w_hat, Box::zero(1), 3);
  // stage 0 untouched; stage 1 subtracts supp(K W) = 0.1; stage 2 adds 0.05
  CHECK(tube[0].h_vec[0] == Catch::Approx(1.0));
  CHECK(tube[1].h_vec[0] == Catch::Approx(0.9));
  CHECK(tube[2].h_vec[0] == Catch::Approx(0.85));
  CHECK(tube[2].h_vec[1] == Catch::Approx(0.85));
}

TEST_CASE("overwhelming uncertainty empties the tube") {
  Box w_hat(Vec::Zero(1), v1(2.0));
  Mat f(2, 1);
  f << 1, -1;
  CHECK_THROWS_AS(build_state_tube(f, Vec::Constant(2, 0.5), Vec::Zero(2),
                                   m1(0.5), Mat::Identity(1, 1), w_hat,
                                   Box::zero(1), 3),
                  Error);
}

TEST_CASE("terminal set trivial cases") {
  // zero dynamics, zero disturbance: the bound is already invariant
  HPolytope bound = interval(-1.0, 1.0);
  HPolytope omega = terminal_set(bound, m1(0.0), Box::zero(1));
  CHECK(omega.h_vec.isApprox(bound.h_vec));

  // scalar 0.5 s + w, |w| <= 0.2: 0.5 * 1 + 0.2 <= 1, already invariant
  omega = terminal_set(bound, m1(0.5), Box(Vec::Zero(1), v1(0.2)));
  CHECK(omega.h_vec.isApprox(bound.h_vec));
}

TEST_CASE("terminal set empty when the minimal invariant set is too big") {
  // limit set of |0.9 s| + 0.2 is [-2, 2], outside |s| <= 1
  CHECK_THROWS_AS(
      terminal_set(interval(-1.0, 1.0), m1(0.9), Box(Vec::Zero(1), v1(0.2))),
      Error);
}

TEST_CASE("terminal set for a rotation converges and is invariant") {
  Mat phi = rotation_scaled(0.8, 0.7);
  Box w(Vec::Zero(2), Vec::Constant(2, 0.05));
  HPolytope bound = square(1.0);
  HPolytope omega = terminal_set(bound, phi, w);

  // inside the stage bound
  for (int l = 0; l < bound.h_mat.rows(); ++l)
    CHECK(support(omega, Vec(bound.h_mat.row(l).transpose())) <=
          bound.h_vec[l] + 1e-9);

  InvarianceReport rep = verify_invariance(omega, phi, w, 10000);
  CHECK(rep.checked == 10000);
  CHECK(rep.violations == 0);
}

TEST_CASE("invariance check flags sets below the limit set") {
  // [-0.3, 0.3] loses to 0.5 s + w, |w| <= 0.2 (limit set [-0.4, 0.4])
  InvarianceReport rep = verify_invariance(
      interval(-0.3, 0.3), m1(0.5), Box(Vec::Zero(1), v1(0.2)), 2000);
  CHECK(rep.violations > 0);

  // zero dynamics and disturbance: trivially invariant
  rep = verify_invariance(interval(-0.3, 0.3), m1(0.0), Box::zero(1), 500);
  CHECK(rep.violations == 0);
}

TEST_CASE("reach generators accumulate the geometric series") {
  auto [center, gens] = reach_generators(m1(0.5), Box(Vec::Zero(1), v1(0.1)));
  CHECK(center[0] == Catch::Approx(0.0));
  CHECK(gens.cwiseAbs().sum() == Catch::Approx(0.2));  // 0.1 / (1 - 0.5)

  CHECK(zonotope_membership_margin(v1(0.19), center, gens) ==
        Catch::Approx(0.0).margin(1e-7));
  CHECK(zonotope_membership_margin(v1(0.25), center, gens) ==
        Catch::Approx(0.05).margin(1e-7));
  CHECK(zonotope_membership_margin(v1(-0.2), center, gens) ==
        Catch::Approx(0.0).margin(1e-7));
}

TEST_CASE("tube set json round trip") {
  TubeSet t;
  t.state = {interval(-1, 1), interval(-0.5, 0.5)};
  t.input = {interval(-2, 2)};
  t.terminal = interval(-0.25, 0.25);
  t.eta = v1(0.09);
  t.cumulative = Mat::Constant(2, 1, 0.1);
  TubeSet back = TubeSet::from_json(t.to_json());
  CHECK(back.state.size() == 2);
  CHECK(back.state[1].h_vec.isApprox(t.state[1].h_vec));
  CHECK(back.terminal.h_mat.isApprox(t.terminal.h_mat));
  CHECK(back.eta.isApprox(t.eta));
  CHECK(back.cumulative.isApprox(t.cumulative));
}
