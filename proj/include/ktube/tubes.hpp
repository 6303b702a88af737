#pragma once

#include <random>
#include <vector>

#include "ktube/geometry.hpp"
#include "ktube/io.hpp"
#include "ktube/solvers.hpp"

namespace ktube {

// ---------------------------------------------------------------------------
// Tightened constraint tubes
// ---------------------------------------------------------------------------

struct TubeSet {
  std::vector<HPolytope> state;  // stages 1..N, in lifted coordinates
  std::vector<HPolytope> input;  // stages 0..N-1
  HPolytope terminal;            // invariant subset of the last state stage
  Vec eta;                       // stochastic backoff per state row
  Mat cumulative;                // N x n_F total tightening per stage/row

  int horizon() const { return static_cast<int>(state.size()); }

  Json to_json() const {
    Json j;
    auto poly = [](const HPolytope& p) {
      Json q;
      q["h_mat"] = mat_to_json(p.h_mat);
      q["h_vec"] = vec_to_json(p.h_vec);
      return q;
    };
    j["state"] = Json::array();
    for (const auto& p : state) j["state"].push_back(poly(p));
    j["input"] = Json::array();
    for (const auto& p : input) j["input"].push_back(poly(p));
    j["terminal"] = poly(terminal);
    j["eta"] = vec_to_json(eta);
    j["cumulative"] = mat_to_json(cumulative);
    return j;
  }

  static TubeSet from_json(const Json& j) {
    TubeSet t;
    auto poly = [](const Json& q) {
      return HPolytope(mat_from_json(q.at("h_mat")), vec_from_json(q.at("h_vec")));
    };
    for (const auto& q : j.at("state")) t.state.push_back(poly(q));
    for (const auto& q : j.at("input")) t.input.push_back(poly(q));
    t.terminal = poly(j.at("terminal"));
    t.eta = vec_from_json(j.at("eta"));
    t.cumulative = mat_from_json(j.at("cumulative"));
    return t;
  }
};

namespace detail {

inline bool polytope_nonempty(const HPolytope& p) {
  LpProblem lp;
  lp.cost = Vec::Zero(p.h_mat.cols());
  lp.ineq_a = p.h_mat;
  lp.ineq_b = p.h_vec;
  return solve_lp(lp).optimal();
}

}  // namespace detail

/// Stage sets {s : F C s <= f - eta - cumulative tightening}. The first stage
/// subtracts the stochastic backoff and the model-error support; later stages
/// add the supports of the propagated error sets.
inline std::vector<HPolytope> build_state_tube(const Mat& f_mat, const Vec& f_vec,
                                               const Vec& eta, const Mat& phi,
                                               const Mat& d_mat,
                                               const Box& w_hat,
                                               const Box& d_err, int horizon,
                                               Mat* cumulative = nullptr) {
  const int n = static_cast<int>(phi.rows());
  const int n_f = static_cast<int>(f_mat.rows());
  if (eta.size() != n_f) throw Error("BadProblem", "one backoff per row");
  if (spectral_radius(phi) >= 1.0)
    throw Error("Unstable", "closed-loop matrix is not stable");

  Mat fc = Mat::Zero(n_f, n);
  fc.leftCols(f_mat.cols()) = f_mat;
  Box lifted_w = linear_map_box(d_mat, w_hat);

  std::vector<HPolytope> tube;
  if (cumulative) *cumulative = Mat::Zero(horizon, n_f);
  Vec tighten(n_f);
  for (int l = 0; l < n_f; ++l)
    tighten[l] = eta[l] + support(d_err, fc.row(l).transpose());
  Mat phi_pow = Mat::Identity(n, n);
  for (int j = 1; j <= horizon; ++j) {
    if (j > 1) {
      phi_pow *= phi;
      Box err_j = linear_map_box(phi_pow, d_err);
      Box dist_j = linear_map_box(phi_pow, lifted_w);
      for (int l = 0; l < n_f; ++l) {
        Vec dir = fc.row(l).transpose();
        tighten[l] += support(err_j, dir) + support(dist_j, dir);
      }
    }
    if (cumulative) cumulative->row(j - 1) = tighten.transpose();
    HPolytope stage(fc, f_vec - tighten);
    if (!detail::polytope_nonempty(stage))
      throw Error("EmptyTube", "state tube empty at stage " + std::to_string(j));
    tube.push_back(std::move(stage));
  }
  return tube;
}

/// Input stage sets, tightened by the feedback acting on the propagated
/// errors: stage i subtracts the supports of K Phi^(m-1) (errors), m <= i.
inline std::vector<HPolytope> build_input_tube(const Mat& g_mat, const Vec& g_vec,
                                               const Mat& k_gain, const Mat& phi,
                                               const Mat& d_mat,
                                               const Box& w_hat,
                                               const Box& d_err, int horizon) {
  const int n = static_cast<int>(phi.rows());
  const int n_g = static_cast<int>(g_mat.rows());
  Box lifted_w = linear_map_box(d_mat, w_hat);

  std::vector<HPolytope> tube;
  Vec tighten = Vec::Zero(n_g);
  Mat phi_pow = Mat::Identity(n, n);
  for (int i = 0; i < horizon; ++i) {
    if (i > 0) {
      Box err_i = linear_map_box(k_gain * phi_pow, d_err);
      Box dist_i = linear_map_box(k_gain * phi_pow, lifted_w);
      for (int l = 0; l < n_g; ++l) {
        Vec dir = g_mat.row(l).transpose();
        tighten[l] += support(err_i, dir) + support(dist_i, dir);
      }
      phi_pow *= phi;
    }
    HPolytope stage(g_mat, g_vec - tighten);
    if (!detail::polytope_nonempty(stage))
      throw Error("EmptyTube", "input tube empty at stage " + std::to_string(i));
    tube.push_back(std::move(stage));
  }
  return tube;
}

namespace detail {

// drop rows implied by the others (support within tol of the bound)
inline HPolytope drop_redundant_rows(const HPolytope& p, double tol = 1e-9) {
  const int m = static_cast<int>(p.h_mat.rows());
  std::vector<int> keep;
  for (int i = 0; i < m; ++i) {
    Mat rest_a(m - 1, p.h_mat.cols());
    Vec rest_b(m - 1);
    int r = 0;
    for (int k = 0; k < m; ++k) {
      if (k == i) continue;
      rest_a.row(r) = p.h_mat.row(k);
      rest_b[r] = p.h_vec[k];
      ++r;
    }
    if (m == 1) {
      keep.push_back(i);
      continue;
    }
    HPolytope rest(rest_a, rest_b);
    bool redundant = false;
    try {
      redundant = support(rest, p.h_mat.row(i).transpose()) <= p.h_vec[i] + tol;
    } catch (const Error&) {
      redundant = false;  // unbounded in this direction: the row binds
    }
    if (!redundant) keep.push_back(i);
  }
  Mat a(keep.size(), p.h_mat.cols());
  Vec b(keep.size());
  for (size_t i = 0; i < keep.size(); ++i) {
    a.row(i) = p.h_mat.row(keep[i]);
    b[i] = p.h_vec[keep[i]];
  }
  return HPolytope(a, b);
}

}  // namespace detail

/// Center-generator set {c + G b : |b|_inf <= 1}; exact support evaluations
/// avoid the blow-up of repeatedly outer-boxing mapped sets.
struct Zonotope {
  Vec center;
  Mat gens;

  static Zonotope from_box(const Box& b) {
    return {b.center, Mat(b.halfwidth.asDiagonal())};
  }
  Zonotope mapped(const Mat& m) const { return {m * center, m * gens}; }
  double support(const Vec& a) const {
    return a.dot(center) + (gens.transpose() * a).cwiseAbs().sum();
  }
};

/// Maximal constraint-admissible robust invariant subset of `bound` for
/// s+ = Phi s + w, w in w_term, by the backward pre-set iteration.
inline HPolytope terminal_set(const HPolytope& bound, const Mat& phi,
                              const Zonotope& w_term, int max_iter = 500,
                              double tol = 1e-9) {
  if (spectral_radius(phi) >= 1.0)
    throw Error("Unstable", "terminal dynamics not stable");
  HPolytope omega = bound;
  for (int it = 0; it < max_iter; ++it) {
    // pre(Omega) rows: H Phi s <= h - sup_w H w
    Mat pre_a = omega.h_mat * phi;
    Vec pre_b = omega.h_vec;
    for (int l = 0; l < pre_b.size(); ++l)
      pre_b[l] -= w_term.support(omega.h_mat.row(l).transpose());

    // converged when Omega is already inside pre(Omega)
    bool invariant = true;
    for (int l = 0; l < pre_b.size() && invariant; ++l) {
      try {
        if (support(omega, pre_a.row(l).transpose()) > pre_b[l] + tol)
          invariant = false;
      } catch (const Error&) {
        invariant = false;  // unbounded: the pre-row adds information
      }
    }
    if (invariant) return omega;

    Mat next_a(omega.h_mat.rows() + pre_a.rows(), omega.h_mat.cols());
    next_a << omega.h_mat, pre_a;
    Vec next_b(omega.h_vec.size() + pre_b.size());
    next_b << omega.h_vec, pre_b;
    omega = detail::drop_redundant_rows(HPolytope(next_a, next_b), tol);
    if (!detail::polytope_nonempty(omega))
      throw Error("EmptyResult", "no invariant set inside the stage bound");
  }
  throw Error("NoConvergence",
              "invariant set iteration hit the iteration cap");
}

inline HPolytope terminal_set(const HPolytope& bound, const Mat& phi,
                              const Box& w_term, int max_iter = 500,
                              double tol = 1e-9) {
  return terminal_set(bound, phi, Zonotope::from_box(w_term), max_iter, tol);
}

struct InvarianceReport {
  int checked = 0;
  int violations = 0;
};

/// Sampling check of Phi * Omega + W inside Omega: rejection-sample Omega
/// inside its bounding box, push each point through the dynamics with every
/// vertex of the disturbance box.
inline InvarianceReport verify_invariance(const HPolytope& omega, const Mat& phi,
                                          const Box& w, int n_samples,
                                          std::uint64_t seed = 1) {
  const int n = static_cast<int>(phi.rows());
  Vec lo(n), hi(n);
  for (int i = 0; i < n; ++i) {
    Vec e = Vec::Zero(n);
    e[i] = 1.0;
    try {
      hi[i] = support(omega, e);
      lo[i] = -support(omega, Vec(-e));
    } catch (const Error&) {
      hi[i] = 10.0;
      lo[i] = -10.0;
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  InvarianceReport rep;
  const int n_vert = 1 << w.dim();
  int attempts = 0;
  while (rep.checked < n_samples && attempts < 1000 * n_samples) {
    ++attempts;
    Vec s(n);
    for (int i = 0; i < n; ++i) s[i] = lo[i] + (hi[i] - lo[i]) * u01(rng);
    if (!contains(omega, s)) continue;
    ++rep.checked;
    Vec base = phi * s;
    for (int v = 0; v < n_vert; ++v) {
      Vec pt = base + w.center;
      for (int i = 0; i < w.dim(); ++i)
        pt[i] += ((v >> i) & 1 ? 1.0 : -1.0) * w.halfwidth[i];
      if (!contains(omega, pt, 1e-7)) {
        ++rep.violations;
        break;
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Error reach sets (truncated infinite Minkowski sums of Phi^i * box)
// ---------------------------------------------------------------------------

/// Generator representation of sum_i Phi^i * box, truncated once the term
/// norm falls below tol: returns the total center and the generator columns.
inline std::pair<Vec, Mat> reach_generators(const Mat& phi, const Box& box,
                                            double tol = 1e-12,
                                            int max_terms = 500) {
  const int n = static_cast<int>(phi.rows());
  Vec center = Vec::Zero(n);
  std::vector<Vec> cols;
  Mat phi_pow = Mat::Identity(n, n);
  for (int i = 0; i < max_terms; ++i) {
    if (phi_pow.cwiseAbs().maxCoeff() * box.halfwidth.cwiseAbs().maxCoeff() <
            tol &&
        (phi_pow * box.center).cwiseAbs().maxCoeff() < tol && i > 0)
      break;
    center += phi_pow * box.center;
    for (int j = 0; j < n; ++j)
      if (box.halfwidth[j] != 0.0) cols.push_back(phi_pow.col(j) * box.halfwidth[j]);
    phi_pow *= phi;
  }
  Mat gens(n, cols.size());
  for (size_t j = 0; j < cols.size(); ++j) gens.col(j) = cols[j];
  return {center, gens};
}

/// Smallest max-norm residual r such that x = center + G b + r with |b| <= 1:
/// zero (up to tolerance) means x lies in the zonotope.
inline double zonotope_membership_margin(const Vec& x, const Vec& center,
                                         const Mat& gens) {
  const int n = static_cast<int>(x.size());
  const int m = static_cast<int>(gens.cols());
  // variables: b (m), t (1); residual bounded coordinatewise by t
  LpProblem lp;
  lp.cost = Vec::Zero(m + 1);
  lp.cost[m] = 1.0;
  lp.ineq_a = Mat::Zero(2 * n, m + 1);
  lp.ineq_b = Vec::Zero(2 * n);
  Vec rhs = x - center;
  for (int i = 0; i < n; ++i) {
    lp.ineq_a.row(i).head(m) = gens.row(i);
    lp.ineq_a(i, m) = -1.0;
    lp.ineq_b[i] = rhs[i];
    lp.ineq_a.row(n + i).head(m) = -gens.row(i);
    lp.ineq_a(n + i, m) = -1.0;
    lp.ineq_b[n + i] = -rhs[i];
  }
  lp.lower = Vec::Constant(m + 1, -1.0);
  lp.upper = Vec::Constant(m + 1, 1.0);
  lp.lower[m] = 0.0;
  lp.upper[m] = kInf;
  SolveReport r = solve_lp(lp);
  if (!r.optimal())
    throw Error("BadProblem", "zonotope membership LP failed");
  return r.objective;
}

}  // namespace ktube
