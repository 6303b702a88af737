#pragma once

#include <vector>

#include "ktube/koopman.hpp"
#include "ktube/solvers.hpp"
#include "ktube/tubes.hpp"

namespace ktube {

// ---------------------------------------------------------------------------
// Feedback synthesis
// ---------------------------------------------------------------------------

struct ControllerConfig {
  LiftedModel model;
  TubeSet tube;
  Mat q_bar;   // lifted state weight
  Mat r;       // input weight
  Mat k_gain;  // u = K s
  Mat p;       // Lyapunov certificate
  Mat pi;      // R + B' P B
  int horizon = 0;

  Mat phi() const { return model.a + model.b * k_gain; }

  void validate() const {
    if (horizon < 1) throw Error("BadProblem", "horizon must be >= 1");
    if (static_cast<int>(tube.state.size()) != horizon ||
        static_cast<int>(tube.input.size()) != horizon)
      throw Error("BadProblem", "tube stages do not match the horizon");
    if (spectral_radius(phi()) >= 1.0)
      throw Error("Unstable", "feedback does not stabilize the model");
    const Mat lyap_res =
        p - phi().transpose() * p * phi() -
        (q_bar + k_gain.transpose() * r * k_gain);
    if (lyap_res.cwiseAbs().maxCoeff() > 1e-6)
      throw Error("BadProblem", "Lyapunov certificate residual too large");
  }
};

/// LQR synthesis on the lifted model. Q may be given in physical coordinates
/// (lifted through C) or directly at the lifted dimension.
inline ControllerConfig synthesize(const LiftedModel& model, const Mat& q,
                                   const Mat& r,
                                   const Tolerances& tol = default_tol()) {
  ControllerConfig cfg;
  cfg.model = model;
  const int n = model.lifted_dim();
  if (q.rows() == model.state_dim() && model.state_dim() != n) {
    Mat c = model.c_mat();
    cfg.q_bar = c.transpose() * q * c;
  } else if (q.rows() == n) {
    cfg.q_bar = q;
  } else {
    throw Error("BadProblem", "state weight dimension mismatch");
  }
  cfg.r = r;
  DareResult dare = solve_dare(model.a, model.b, cfg.q_bar, r, tol);
  cfg.k_gain = dare.k;
  Mat phi = model.a + model.b * cfg.k_gain;
  cfg.p = solve_discrete_lyapunov(
      phi, Mat(cfg.q_bar + cfg.k_gain.transpose() * r * cfg.k_gain), tol);
  cfg.pi = r + model.b.transpose() * cfg.p * model.b;
  return cfg;
}

// ---------------------------------------------------------------------------
// Condensed MPC program
// ---------------------------------------------------------------------------

struct MpcSolution {
  Mat c_star;        // N x n_u
  Mat s_nominal;     // (N+1) x n
  Mat u_nominal;     // N x n_u
  double objective = 0.0;
  SolveReport report;
  bool feasible = false;
  int violated_stage = -1;  // first stage past feasibility when infeasible
};

namespace detail {

// s_i = phi^i s0 + sum_j phi^(i-1-j) B c_j as an affine map of stacked c
struct CondensedDynamics {
  std::vector<Mat> state_maps;  // per stage i = 0..N: n x (N n_u)
  std::vector<Vec> state_offs;

  CondensedDynamics(const Mat& phi, const Mat& b, const Vec& s0, int horizon) {
    const int n = static_cast<int>(phi.rows());
    const int n_u = static_cast<int>(b.cols());
    Mat map = Mat::Zero(n, horizon * n_u);
    Vec off = s0;
    state_maps.push_back(map);
    state_offs.push_back(off);
    for (int i = 0; i < horizon; ++i) {
      map = phi * map;
      map.middleCols(i * n_u, n_u) += b;
      off = phi * off;
      state_maps.push_back(map);
      state_offs.push_back(off);
    }
  }
};

}  // namespace detail

/// Tube MPC step: minimizes sum_i c_i' Pi c_i over the correction sequence,
/// with the nominal rollout confined to the tightened stage sets and the
/// terminal invariant set.
inline MpcSolution solve_mpc(const ControllerConfig& cfg, const Vec& s_k,
                             const Tolerances& tol = default_tol()) {
  if (!s_k.allFinite()) throw Error("NonFinite", "lifted state not finite");
  const Mat phi = cfg.phi();
  const int n = static_cast<int>(phi.rows());
  const int n_u = static_cast<int>(cfg.model.b.cols());
  const int nh = cfg.horizon;
  const int nv = nh * n_u;
  detail::CondensedDynamics dyn(phi, cfg.model.b, s_k, nh);

  QpProblem qp;
  qp.quadratic = Mat::Zero(nv, nv);
  for (int i = 0; i < nh; ++i)
    qp.quadratic.block(i * n_u, i * n_u, n_u, n_u) = 2.0 * cfg.pi;
  qp.linear = Vec::Zero(nv);

  // rows: state stages 1..N, terminal at N, inputs 0..N-1
  int rows = static_cast<int>(cfg.tube.terminal.h_mat.rows());
  for (const auto& s : cfg.tube.state) rows += static_cast<int>(s.h_mat.rows());
  for (const auto& u : cfg.tube.input) rows += static_cast<int>(u.h_mat.rows());
  qp.ineq_a = Mat::Zero(rows, nv);
  qp.ineq_b = Vec::Zero(rows);
  std::vector<int> row_stage(rows);
  int row = 0;
  for (int i = 1; i <= nh; ++i) {
    const HPolytope& s = cfg.tube.state[i - 1];
    const int m = static_cast<int>(s.h_mat.rows());
    qp.ineq_a.middleRows(row, m) = s.h_mat * dyn.state_maps[i];
    qp.ineq_b.segment(row, m) = s.h_vec - s.h_mat * dyn.state_offs[i];
    for (int k = 0; k < m; ++k) row_stage[row + k] = i;
    row += m;
  }
  {
    const HPolytope& t = cfg.tube.terminal;
    const int m = static_cast<int>(t.h_mat.rows());
    qp.ineq_a.middleRows(row, m) = t.h_mat * dyn.state_maps[nh];
    qp.ineq_b.segment(row, m) = t.h_vec - t.h_mat * dyn.state_offs[nh];
    for (int k = 0; k < m; ++k) row_stage[row + k] = nh;
    row += m;
  }
  for (int i = 0; i < nh; ++i) {
    const HPolytope& u = cfg.tube.input[i];
    const int m = static_cast<int>(u.h_mat.rows());
    // u_i = K s_i + c_i
    Mat input_map = cfg.k_gain * dyn.state_maps[i];
    input_map.middleCols(i * n_u, n_u) += Mat::Identity(n_u, n_u);
    qp.ineq_a.middleRows(row, m) = u.h_mat * input_map;
    qp.ineq_b.segment(row, m) =
        u.h_vec - u.h_mat * (cfg.k_gain * dyn.state_offs[i]);
    for (int k = 0; k < m; ++k) row_stage[row + k] = i;
    row += m;
  }

  MpcSolution sol;
  sol.report = solve_qp(qp, tol);
  sol.feasible = sol.report.optimal();
  if (!sol.feasible) {
    if (sol.report.solution.size() == nv) {
      Vec viol = qp.ineq_a * sol.report.solution - qp.ineq_b;
      int worst;
      viol.maxCoeff(&worst);
      sol.violated_stage = row_stage[worst];
    }
    return sol;
  }

  const Vec c = sol.report.solution;
  sol.c_star = Mat(nh, n_u);
  for (int i = 0; i < nh; ++i)
    sol.c_star.row(i) = c.segment(i * n_u, n_u).transpose();
  sol.s_nominal = Mat(nh + 1, n);
  sol.u_nominal = Mat(nh, n_u);
  for (int i = 0; i <= nh; ++i)
    sol.s_nominal.row(i) =
        (dyn.state_maps[i] * c + dyn.state_offs[i]).transpose();
  for (int i = 0; i < nh; ++i)
    sol.u_nominal.row(i) =
        (cfg.k_gain * sol.s_nominal.row(i).transpose()).transpose() +
        sol.c_star.row(i);
  sol.objective = 0.0;
  for (int i = 0; i < nh; ++i) {
    Vec ci = sol.c_star.row(i).transpose();
    sol.objective += ci.dot(cfg.pi * ci);
  }
  return sol;
}

/// Direct constraint check of a candidate correction sequence from a given
/// lifted state (no optimization); used for the shifted-sequence telemetry.
inline bool candidate_feasible(const ControllerConfig& cfg, const Vec& s_k,
                               const Mat& c_seq, double tol = 1e-7) {
  const Mat phi = cfg.phi();
  Vec s = s_k;
  for (int i = 0; i < cfg.horizon; ++i) {
    Vec ci = c_seq.row(i).transpose();
    Vec u = cfg.k_gain * s + ci;
    if (!contains(cfg.tube.input[i], u, tol)) return false;
    s = phi * s + cfg.model.b * ci;
    if (!contains(cfg.tube.state[i], s, tol)) return false;
  }
  return contains(cfg.tube.terminal, s, tol);
}

/// One closed-loop control step: lift, solve, apply u = K s + c*_0.
inline std::pair<Vec, MpcSolution> control_step(const ControllerConfig& cfg,
                                                const Vec& x_k,
                                                const Tolerances& tol =
                                                    default_tol()) {
  Vec s = cfg.model.lift(x_k);
  MpcSolution sol = solve_mpc(cfg, s, tol);
  if (!sol.feasible)
    throw Error("InfeasibleAtState",
                "MPC infeasible (stage " +
                    std::to_string(sol.violated_stage) + ")");
  Vec u = cfg.k_gain * s + sol.c_star.row(0).transpose();
  if (!contains(cfg.tube.input[0], u, 1e-7))
    throw Error("BadProblem", "applied input escaped the admissible set");
  return {u, sol};
}

}  // namespace ktube
