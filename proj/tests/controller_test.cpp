#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "ktube/controller.hpp"

using namespace ktube;

namespace {

Vec v1(double v) { return Vec::Constant(1, v); }

HPolytope interval(double lo, double hi) {
  Mat a(2, 1);
  a << 1, -1;
  Vec b(2);
  b << hi, -lo;
  return HPolytope(a, b);
}

LiftedModel scalar_model(double a, double b) {
  LiftedModel m;
  m.dictionary = Dictionary::from_terms(1, {});
  m.a = Mat::Constant(1, 1, a);
  m.b = Mat::Constant(1, 1, b);
  return m;
}

// constant (untightened) scalar tube
TubeSet scalar_tube(int horizon, double s_bound, double u_bound,
                    double terminal_bound) {
  TubeSet t;
  for (int i = 0; i < horizon; ++i) {
    t.state.push_back(interval(-s_bound, s_bound));
    t.input.push_back(interval(-u_bound, u_bound));
  }
  t.terminal = interval(-terminal_bound, terminal_bound);
  t.eta = Vec::Zero(2);
  t.cumulative = Mat::Zero(horizon, 2);
  return t;
}

ControllerConfig scalar_controller(double a, double b, int horizon,
                                   double s_bound, double u_bound,
                                   double terminal_bound) {
  ControllerConfig cfg = synthesize(scalar_model(a, b), Mat::Identity(1, 1),
                                    Mat::Identity(1, 1));
  cfg.tube = scalar_tube(horizon, s_bound, u_bound, terminal_bound);
  cfg.horizon = horizon;
  cfg.validate();
  return cfg;
}

}  // namespace

TEST_CASE("synthesis trivial case") {
  LiftedModel m;
  m.dictionary = Dictionary::from_terms(2, {});
  m.a = Mat::Zero(2, 2);
  m.b = Mat::Identity(2, 2);
  ControllerConfig cfg = synthesize(m, Mat::Identity(2, 2), Mat::Identity(2, 2));
  CHECK(cfg.k_gain.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(cfg.p.isApprox(Mat::Identity(2, 2), 1e-10));
  CHECK(cfg.pi.isApprox(Mat(2.0 * Mat::Identity(2, 2)), 1e-10));
}

TEST_CASE("scalar synthesis against the hand riccati solution") {
  ControllerConfig cfg = synthesize(scalar_model(1.0, 1.0),
                                    Mat::Identity(1, 1), Mat::Identity(1, 1));
  const double golden = 0.5 * (1.0 + std::sqrt(5.0));
  CHECK(cfg.p(0, 0) == Catch::Approx(golden).margin(1e-9));
  CHECK(cfg.k_gain(0, 0) == Catch::Approx(-golden / (1.0 + golden)).margin(1e-9));
  CHECK(cfg.pi(0, 0) == Catch::Approx(1.0 + golden).margin(1e-9));
  CHECK(spectral_radius(cfg.phi()) < 1.0);
}

TEST_CASE("lifted weight is accepted at either dimension") {
  Dictionary d = Dictionary::from_terms(2, {"x1^2"});
  LiftedModel m;
  m.dictionary = d;
  m.a = 0.5 * Mat::Identity(3, 3);
  m.b = Mat::Zero(3, 1);
  m.b(0, 0) = 1.0;
  Mat q_small = Mat::Identity(2, 2);
  ControllerConfig small = synthesize(m, q_small, Mat::Identity(1, 1));
  CHECK(small.q_bar.rows() == 3);
  CHECK(small.q_bar(2, 2) == 0.0);
  ControllerConfig big = synthesize(m, Mat(Mat::Identity(3, 3)), Mat::Identity(1, 1));
  CHECK(big.q_bar(2, 2) == 1.0);
  CHECK_THROWS_AS(synthesize(m, Mat(Mat::Identity(4, 4)), Mat::Identity(1, 1)), Error);
}

TEST_CASE("origin is a fixed point of the mpc") {
  ControllerConfig cfg = scalar_controller(0.9, 1.0, 3, 1.0, 1.0, 0.5);
  MpcSolution sol = solve_mpc(cfg, Vec::Zero(1));
  REQUIRE(sol.feasible);
  CHECK(sol.objective == Catch::Approx(0.0).margin(1e-12));
  CHECK(sol.c_star.cwiseAbs().maxCoeff() < 1e-6);

  auto [u, step_sol] = control_step(cfg, Vec::Zero(1));
  CHECK(std::abs(u[0]) < 1e-6);
}

TEST_CASE("single stage matches a grid-search oracle") {
  ControllerConfig cfg = scalar_controller(0.9, 1.0, 1, 2.0, 1.0, 0.5);
  const double phi = cfg.phi()(0, 0);
  const double k = cfg.k_gain(0, 0);
  const double pi = cfg.pi(0, 0);

  for (double s0 : {1.2, -0.8, 0.3, -1.5}) {
    MpcSolution sol = solve_mpc(cfg, v1(s0));
    REQUIRE(sol.feasible);

    double best = 1e300, best_c = 0.0;
    for (double c = -2.0; c <= 2.0; c += 1e-4) {
      const double u = k * s0 + c;
      const double s1 = phi * s0 + c;
      if (std::abs(u) > 1.0 || std::abs(s1) > 0.5) continue;
      const double obj = pi * c * c;
      if (obj < best) {
        best = obj;
        best_c = c;
      }
    }
    REQUIRE(best < 1e300);
    CHECK(sol.c_star(0, 0) == Catch::Approx(best_c).margin(2e-4));
    CHECK(sol.objective == Catch::Approx(best).margin(1e-3));
  }
}

TEST_CASE("solution satisfies dynamics and tube constraints") {
  ControllerConfig cfg = scalar_controller(0.9, 1.0, 4, 1.5, 1.0, 0.4);
  const Mat phi = cfg.phi();
  for (double s0 : {1.4, -1.1, 0.9}) {
    MpcSolution sol = solve_mpc(cfg, v1(s0));
    REQUIRE(sol.feasible);
    for (int i = 0; i < cfg.horizon; ++i) {
      Vec pred = phi * sol.s_nominal.row(i).transpose() +
                 cfg.model.b * sol.c_star.row(i).transpose();
      CHECK((pred - sol.s_nominal.row(i + 1).transpose()).norm() < 1e-8);
      CHECK(contains(cfg.tube.state[i], Vec(sol.s_nominal.row(i + 1).transpose()),
                     1e-7));
      CHECK(contains(cfg.tube.input[i], Vec(sol.u_nominal.row(i).transpose()),
                     1e-7));
    }
    CHECK(contains(cfg.tube.terminal,
                   Vec(sol.s_nominal.row(cfg.horizon).transpose()), 1e-7));
    CHECK(candidate_feasible(cfg, v1(s0), sol.c_star));
  }
}

TEST_CASE("disturbance-free cost decreases along the closed loop") {
  ControllerConfig cfg = scalar_controller(0.95, 1.0, 4, 1.5, 1.0, 0.4);
  Vec s = v1(1.45);
  double prev = -1.0;
  for (int kstep = 0; kstep < 25; ++kstep) {
    MpcSolution sol = solve_mpc(cfg, s);
    REQUIRE(sol.feasible);
    if (prev >= 0.0) CHECK(sol.objective <= prev + 1e-8);
    prev = sol.objective;
    Vec u = cfg.k_gain * s + sol.c_star.row(0).transpose();
    s = cfg.model.a * s + cfg.model.b * u;
  }
  // corrections die out near the origin
  CHECK(std::abs(s[0]) < 0.4);
  CHECK(solve_mpc(cfg, s).c_star.cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("shifted candidate remains feasible under model dynamics") {
  ControllerConfig cfg = scalar_controller(0.9, 1.0, 4, 1.5, 1.0, 0.4);
  Vec s = v1(1.3);
  MpcSolution sol = solve_mpc(cfg, s);
  REQUIRE(sol.feasible);
  // advance one step along the nominal model
  Vec u = cfg.k_gain * s + sol.c_star.row(0).transpose();
  Vec s_next = cfg.model.a * s + cfg.model.b * u;
  Mat shifted = Mat::Zero(cfg.horizon, 1);
  shifted.topRows(cfg.horizon - 1) = sol.c_star.bottomRows(cfg.horizon - 1);
  CHECK(candidate_feasible(cfg, s_next, shifted));
}

TEST_CASE("states outside the feasible region are reported") {
  ControllerConfig cfg = scalar_controller(0.9, 1.0, 2, 1.0, 0.2, 0.3);
  MpcSolution sol = solve_mpc(cfg, v1(5.0));
  CHECK_FALSE(sol.feasible);
  CHECK(sol.violated_stage >= 0);
  CHECK_THROWS_AS(control_step(cfg, v1(5.0)), Error);
}

TEST_CASE("config validation catches mismatched tubes") {
  ControllerConfig cfg = scalar_controller(0.9, 1.0, 3, 1.0, 1.0, 0.5);
  cfg.horizon = 4;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
