#pragma once

#include <algorithm>
#include <vector>

#include "ktube/geometry.hpp"
#include "ktube/solvers.hpp"
#include "ktube/uncertainty.hpp"

namespace ktube {

// ---------------------------------------------------------------------------
// Worst-case CVaR backoff over a transport-distance ambiguity ball
// ---------------------------------------------------------------------------

/// One scalar backoff problem: the constraint-row direction a, the empirical
/// samples, the polyhedral disturbance support H xi <= h, the risk level and
/// the ambiguity-ball radius theta (type-1 distance, max-norm ground metric).
struct DroInstance {
  Vec a;
  Mat samples;  // N_s x n_xi
  HPolytope support;
  double alpha = 0.1;
  double theta = 0.0;
  // set when the support is a box, enabling the closed-form fast path
  bool box_support = false;
  Box support_box = Box::zero(1);

  int n_samples() const { return static_cast<int>(samples.rows()); }
  int dim() const { return static_cast<int>(samples.cols()); }

  static DroInstance from_box(const Vec& a, const Mat& samples, const Box& box,
                              double alpha, double theta) {
    DroInstance inst;
    inst.a = a;
    inst.samples = samples;
    inst.support = box.to_hpolytope();
    inst.alpha = alpha;
    inst.theta = theta;
    inst.box_support = true;
    inst.support_box = box;
    return inst;
  }

  void validate() const {
    if (alpha <= 0.0 || alpha >= 1.0)
      throw Error("BadProblem", "risk level must lie in (0, 1)");
    if (theta < 0.0) throw Error("BadProblem", "ball radius must be >= 0");
    if (samples.rows() < 1) throw Error("BadProblem", "need samples");
    if (a.size() != samples.cols())
      throw Error("BadProblem", "direction dimension mismatch");
    for (int l = 0; l < samples.rows(); ++l) {
      Vec xi = samples.row(l).transpose();
      if (((support.h_mat * xi - support.h_vec).array() > 1e-9).any())
        throw Error("BadProblem",
                    "sample " + std::to_string(l) + " outside the support");
    }
  }
};

struct BackoffResult {
  double eta = 0.0;
  SolveReport lp_report;
  bool clamped = false;   // eta hit the worst-case support bound
  bool used_lp = false;   // full LP route (false: closed-form fast path)
};

/// Empirical CVaR at tail level alpha: mean of the worst alpha-fraction,
/// interpolating when alpha * N is fractional.
inline double empirical_cvar(Vec z, double alpha) {
  if (alpha <= 0.0 || alpha > 1.0)
    throw Error("BadProblem", "CVaR level must lie in (0, 1]");
  std::sort(z.data(), z.data() + z.size(), std::greater<double>());
  const double mass = alpha * z.size();
  double acc = 0.0;
  int i = 0;
  for (; i + 1 <= static_cast<int>(mass); ++i) acc += z[i];
  const double frac = mass - static_cast<int>(mass);
  if (frac > 0.0 && i < z.size()) acc += frac * z[i];
  return acc / mass;
}

/// The distributionally robust CVaR program of the backoff row, transcribed
/// as one LP. Variables, in order:
///   eta, t, lambda, s_1..s_N, gamma_1..gamma_N (m each), r_1..r_N (d each)
/// where m = support rows and the r_l encode |a - H' gamma_l| coordinatewise.
inline LpProblem build_cvar_dro_lp(const DroInstance& inst) {
  inst.validate();
  const int n_s = inst.n_samples();
  const int d = inst.dim();
  const int m = static_cast<int>(inst.support.h_mat.rows());
  const int n_gamma = n_s * m;
  const int n_r = n_s * d;
  const int nv = 3 + n_s + n_gamma + n_r;
  const int s0 = 3, g0 = 3 + n_s, r0 = g0 + n_gamma;

  LpProblem lp;
  lp.cost = Vec::Zero(nv);
  lp.cost[0] = 1.0;  // min eta

  const int rows = 1 + n_s + 2 * n_r + n_s;
  lp.ineq_a = Mat::Zero(rows, nv);
  lp.ineq_b = Vec::Zero(rows);
  int row = 0;

  // lambda * theta + (1/N) sum s_l <= t * alpha
  lp.ineq_a(row, 2) = inst.theta;
  for (int l = 0; l < n_s; ++l) lp.ineq_a(row, s0 + l) = 1.0 / n_s;
  lp.ineq_a(row, 1) = -inst.alpha;
  ++row;

  // s_l >= -eta + t + (a - H' gamma_l)' xi_l + gamma_l' h
  for (int l = 0; l < n_s; ++l) {
    Vec xi = inst.samples.row(l).transpose();
    lp.ineq_a(row, 0) = -1.0;          // -eta
    lp.ineq_a(row, 1) = 1.0;           // +t
    lp.ineq_a(row, s0 + l) = -1.0;     // -s_l
    Vec gcoef = inst.support.h_vec - inst.support.h_mat * xi;
    for (int k = 0; k < m; ++k) lp.ineq_a(row, g0 + l * m + k) = gcoef[k];
    lp.ineq_b[row] = -inst.a.dot(xi);
    ++row;
  }

  // r_l >= +-(a - H' gamma_l) coordinatewise
  for (int l = 0; l < n_s; ++l)
    for (int j = 0; j < d; ++j) {
      lp.ineq_a(row, r0 + l * d + j) = -1.0;
      for (int k = 0; k < m; ++k)
        lp.ineq_a(row, g0 + l * m + k) = -inst.support.h_mat(k, j);
      lp.ineq_b[row] = -inst.a[j];
      ++row;
      lp.ineq_a(row, r0 + l * d + j) = -1.0;
      for (int k = 0; k < m; ++k)
        lp.ineq_a(row, g0 + l * m + k) = inst.support.h_mat(k, j);
      lp.ineq_b[row] = inst.a[j];
      ++row;
    }

  // sum_j r_lj <= lambda
  for (int l = 0; l < n_s; ++l) {
    for (int j = 0; j < d; ++j) lp.ineq_a(row, r0 + l * d + j) = 1.0;
    lp.ineq_a(row, 2) = -1.0;
    ++row;
  }

  // eta, lambda, s, gamma, r >= 0; t free
  lp.lower = Vec::Zero(nv);
  lp.lower[1] = -kInf;
  return lp;
}

namespace detail {

inline bool single_axis_direction(const Vec& a) {
  int nonzero = 0;
  for (int i = 0; i < a.size(); ++i)
    if (a[i] != 0.0) ++nonzero;
  return nonzero == 1;
}

}  // namespace detail

/// Optimal backoff for one constraint row. Box supports with an axis-aligned
/// direction take a closed-form path (the LP optimum reduces to the empirical
/// CVaR shifted by theta * ||a||_1 / alpha, clipped to [0, worst case]); all
/// other instances solve the full LP.
inline BackoffResult compute_backoff(const DroInstance& inst) {
  inst.validate();
  BackoffResult out;
  const double worst = inst.box_support ? support(inst.support_box, inst.a)
                                        : support(inst.support, inst.a);
  if (inst.a.cwiseAbs().maxCoeff() == 0.0) {
    out.eta = 0.0;
    out.lp_report.status = SolveStatus::Optimal;
    out.lp_report.objective = 0.0;
    return out;
  }
  if (inst.box_support && detail::single_axis_direction(inst.a)) {
    const Vec z = inst.samples * inst.a;
    const double cvar = empirical_cvar(z, inst.alpha);
    const double shifted =
        cvar + inst.theta * inst.a.lpNorm<1>() / inst.alpha;
    out.eta = std::max(0.0, std::min(worst, shifted));
    out.lp_report.status = SolveStatus::Optimal;
    out.lp_report.objective = out.eta;
  } else {
    out.used_lp = true;
    out.lp_report = solve_lp(build_cvar_dro_lp(inst));
    if (!out.lp_report.optimal())
      throw Error("BadProblem", std::string("backoff LP did not solve: ") +
                                    to_string(out.lp_report.status));
    out.eta = out.lp_report.solution[0];
  }
  out.clamped = std::abs(out.eta - worst) <= 1e-7;
  return out;
}

/// One backoff per row of F, with the direction restricted to the first n_x
/// lifted coordinates (where the disturbance enters).
inline Vec backoff_vector(const Mat& f_rows, const Vec& alpha,
                          const DisturbanceEstimate& est, double theta) {
  if (alpha.size() != f_rows.rows())
    throw Error("BadProblem", "need one risk level per constraint row");
  Vec eta(f_rows.rows());
  for (int j = 0; j < f_rows.rows(); ++j) {
    DroInstance inst = DroInstance::from_box(
        f_rows.row(j).transpose(), est.samples, est.support_box, alpha[j],
        theta);
    eta[j] = compute_backoff(inst).eta;
  }
  return eta;
}

}  // namespace ktube
