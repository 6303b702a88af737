#pragma once

#include <utility>

#include "ktube/common.hpp"
#include "ktube/solvers.hpp"

namespace ktube {

// Polyhedral sets in H-representation plus axis-aligned boxes. All values are
// immutable after construction; every operation is a pure function.

/// {x : Hx <= h}. Built nonempty by the library's constructors; emptiness is
/// checkable via a feasibility LP.
struct HPolytope {
  Mat h_mat;  // m x n
  Vec h_vec;  // m

  HPolytope() = default;
  HPolytope(Mat H, Vec h) : h_mat(std::move(H)), h_vec(std::move(h)) {
    if (h_mat.rows() < 1 || h_mat.cols() < 1 || h_mat.rows() != h_vec.size())
      throw Error("BadSet", "HPolytope dimension mismatch");
    for (int r = 0; r < h_mat.rows(); ++r)
      if (h_mat.row(r).cwiseAbs().maxCoeff() == 0.0)
        throw Error("BadSet", "HPolytope has an all-zero row");
  }

  int dim() const { return static_cast<int>(h_mat.cols()); }
  int rows() const { return static_cast<int>(h_mat.rows()); }
};

/// {center + e : |e_i| <= halfwidth_i}.
struct Box {
  Vec center;
  Vec halfwidth;

  Box() = default;
  Box(Vec c, Vec hw) : center(std::move(c)), halfwidth(std::move(hw)) {
    if (center.size() != halfwidth.size() || center.size() < 1)
      throw Error("BadSet", "Box dimension mismatch");
    if ((halfwidth.array() < 0).any())
      throw Error("BadSet", "Box halfwidth must be nonnegative");
  }

  static Box zero(int n) { return Box(Vec::Zero(n), Vec::Zero(n)); }

  int dim() const { return static_cast<int>(center.size()); }

  HPolytope to_hpolytope() const {
    const int n = dim();
    Mat h(2 * n, n);
    h << Mat::Identity(n, n), -Mat::Identity(n, n);
    Vec rhs(2 * n);
    rhs << center + halfwidth, halfwidth - center;
    return HPolytope(h, rhs);
  }
};

/// sup_{x in b} d'x, closed form.
inline double support(const Box& b, const Vec& direction) {
  if (direction.size() != b.dim())
    throw Error("BadSet", "support direction dimension mismatch");
  return direction.dot(b.center) +
         direction.cwiseAbs().dot(b.halfwidth);
}

/// sup_{x in p} d'x via LP. Throws Unbounded / Infeasible.
inline double support(const HPolytope& p, const Vec& direction,
                      const Tolerances& tol = default_tol()) {
  if (direction.size() != p.dim())
    throw Error("BadSet", "support direction dimension mismatch");
  LpProblem lp;
  lp.cost = -direction;
  lp.ineq_a = p.h_mat;
  lp.ineq_b = p.h_vec;
  const SolveReport rep = solve_lp(lp, tol);
  if (rep.status == SolveStatus::Unbounded)
    throw Error("Unbounded", "polytope support unbounded in this direction");
  if (rep.status == SolveStatus::Infeasible)
    throw Error("Infeasible", "polytope is empty");
  if (!rep.optimal()) throw Error("NoConvergence", "support LP did not converge");
  return -rep.objective;
}

/// Tightest axis-aligned box containing {Mx : x in b}.
inline Box linear_map_box(const Mat& m, const Box& b) {
  if (m.cols() != b.dim())
    throw Error("BadSet", "linear_map_box dimension mismatch");
  return Box(m * b.center, m.cwiseAbs() * b.halfwidth);
}

inline Box minkowski_sum_boxes(const Box& a, const Box& b) {
  if (a.dim() != b.dim())
    throw Error("BadSet", "minkowski_sum_boxes dimension mismatch");
  return Box(a.center + b.center, a.halfwidth + b.halfwidth);
}

/// p (-) b, exact row-wise via the box support function. Throws EmptyResult
/// when the difference is infeasible (over-tightened).
inline HPolytope pontryagin_diff_box(const HPolytope& p, const Box& b,
                                     const Tolerances& tol = default_tol()) {
  if (p.dim() != b.dim())
    throw Error("BadSet", "pontryagin_diff_box dimension mismatch");
  Vec h = p.h_vec;
  for (int r = 0; r < p.rows(); ++r)
    h[r] -= support(b, Vec(p.h_mat.row(r).transpose()));
  HPolytope result(p.h_mat, h);
  // Feasibility check (the builders promise nonemptiness).
  LpProblem lp;
  lp.cost = Vec::Zero(p.dim());
  lp.ineq_a = result.h_mat;
  lp.ineq_b = result.h_vec;
  if (solve_lp(lp, tol).status == SolveStatus::Infeasible)
    throw Error("EmptyResult", "Pontryagin difference is empty");
  return result;
}

/// Box (-) box, componentwise. Coordinates where the subtrahend dominates are
/// clamped to zero halfwidth; the flag reports whether clamping happened.
inline std::pair<Box, bool> pontryagin_diff_boxes(const Box& a, const Box& b) {
  if (a.dim() != b.dim())
    throw Error("BadSet", "pontryagin_diff_boxes dimension mismatch");
  Vec hw = a.halfwidth - b.halfwidth;
  bool clamped = false;
  for (int i = 0; i < hw.size(); ++i) {
    if (hw[i] < 0) {
      hw[i] = 0.0;
      clamped = true;
    }
  }
  return {Box(a.center - b.center, hw), clamped};
}

inline bool contains(const Box& b, const Vec& x, double tol = 1e-9) {
  if (x.size() != b.dim()) throw Error("BadSet", "contains dimension mismatch");
  return ((x - b.center).cwiseAbs().array() <= b.halfwidth.array() + tol).all();
}

inline bool contains(const HPolytope& p, const Vec& x, double tol = 1e-9) {
  if (x.size() != p.dim()) throw Error("BadSet", "contains dimension mismatch");
  return ((p.h_mat * x - p.h_vec).array() <= tol).all();
}

}  // namespace ktube
