#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "ktube/common.hpp"

namespace ktube {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Problem descriptions
// ---------------------------------------------------------------------------

/// min cost'x  s.t.  ineq_a x <= ineq_b,  eq_a x = eq_b,  lower <= x <= upper.
/// Empty bound vectors mean free variables; +-inf entries are allowed.
struct LpProblem {
  Vec cost;
  Mat ineq_a;  // may be 0 x n
  Vec ineq_b;
  Mat eq_a;  // may be 0 x n
  Vec eq_b;
  Vec lower;  // empty or size n
  Vec upper;  // empty or size n

  int num_vars() const { return static_cast<int>(cost.size()); }

  void validate() const {
    const int n = num_vars();
    if (n < 1) throw Error("BadProblem", "LP needs at least one variable");
    if (ineq_a.rows() != ineq_b.size() || (ineq_a.rows() > 0 && ineq_a.cols() != n))
      throw Error("BadProblem", "LP inequality dimensions inconsistent");
    if (eq_a.rows() != eq_b.size() || (eq_a.rows() > 0 && eq_a.cols() != n))
      throw Error("BadProblem", "LP equality dimensions inconsistent");
    if (lower.size() != 0 && lower.size() != n)
      throw Error("BadProblem", "LP lower bound size mismatch");
    if (upper.size() != 0 && upper.size() != n)
      throw Error("BadProblem", "LP upper bound size mismatch");
  }
};

/// min 1/2 x'Qx + c'x  s.t.  ineq_a x <= ineq_b,  eq_a x = eq_b.
/// quadratic must be symmetric PSD.
struct QpProblem {
  Mat quadratic;
  Vec linear;
  Mat ineq_a;
  Vec ineq_b;
  Mat eq_a;
  Vec eq_b;

  int num_vars() const { return static_cast<int>(linear.size()); }

  void validate() const {
    const int n = num_vars();
    if (n < 1) throw Error("BadProblem", "QP needs at least one variable");
    if (quadratic.rows() != n || quadratic.cols() != n)
      throw Error("BadProblem", "QP quadratic dimension mismatch");
    if ((quadratic - quadratic.transpose()).cwiseAbs().maxCoeff() > 1e-10)
      throw Error("BadProblem", "QP quadratic not symmetric");
    Eigen::LDLT<Mat> ldlt(quadratic);
    if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() < -1e-10).any())
      throw Error("BadProblem", "QP quadratic not positive semidefinite");
    if (ineq_a.rows() != ineq_b.size() || (ineq_a.rows() > 0 && ineq_a.cols() != n))
      throw Error("BadProblem", "QP inequality dimensions inconsistent");
    if (eq_a.rows() != eq_b.size() || (eq_a.rows() > 0 && eq_a.cols() != n))
      throw Error("BadProblem", "QP equality dimensions inconsistent");
  }
};

enum class SolveStatus { Optimal, Infeasible, Unbounded, MaxIter };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::Unbounded: return "Unbounded";
    case SolveStatus::MaxIter: return "MaxIter";
  }
  return "?";
}

struct SolveReport {
  SolveStatus status = SolveStatus::MaxIter;
  Vec solution;  // present iff status == Optimal (best iterate for MaxIter)
  double objective = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  double primal_residual = std::numeric_limits<double>::quiet_NaN();
  double dual_residual = std::numeric_limits<double>::quiet_NaN();

  bool optimal() const { return status == SolveStatus::Optimal; }
};

// ---------------------------------------------------------------------------
// Dense two-phase simplex
// ---------------------------------------------------------------------------

namespace detail {

// Tableau simplex over rows with b >= 0 and an explicit starting basis.
// Dantzig pricing with a switch to Bland's rule when the objective stalls.
class SimplexTableau {
 public:
  SimplexTableau(Mat table, std::vector<int> basis, double pivot_tol)
      : t_(std::move(table)), basis_(std::move(basis)), tol_(pivot_tol) {}

  // cost over all tableau columns (structural + slack + artificial).
  // Returns status; optimal basis and values left in the tableau.
  SolveStatus run(const Vec& cost, int max_iter, int* iters) {
    const int m = static_cast<int>(t_.rows());
    const int ncols = static_cast<int>(t_.cols()) - 1;
    // reduced cost row
    Eigen::RowVectorXd z = cost.transpose();
    double obj = 0.0;
    for (int r = 0; r < m; ++r) {
      if (cost[basis_[r]] != 0.0) {
        z -= cost[basis_[r]] * t_.row(r).head(ncols);
        obj += cost[basis_[r]] * t_(r, ncols);
      }
    }
    bool bland = false;
    int stall = 0;
    double last_obj = obj;
    for (int it = 0; it < max_iter; ++it) {
      ++*iters;
      int enter = -1;
      if (!bland) {
        double best = -tol_;
        for (int j = 0; j < ncols; ++j)
          if (z[j] < best) { best = z[j]; enter = j; }
      } else {
        for (int j = 0; j < ncols; ++j)
          if (z[j] < -tol_) { enter = j; break; }
      }
      if (enter < 0) return SolveStatus::Optimal;
      // ratio test
      int leave = -1;
      double best_ratio = kInf;
      for (int r = 0; r < m; ++r) {
        const double a = t_(r, enter);
        if (a > tol_) {
          const double ratio = t_(r, ncols) / a;
          if (ratio < best_ratio - 1e-12 ||
              (ratio < best_ratio + 1e-12 &&
               (leave < 0 || basis_[r] < basis_[leave]))) {
            best_ratio = ratio;
            leave = r;
          }
        }
      }
      if (leave < 0) return SolveStatus::Unbounded;
      pivot(leave, enter, &z, &obj);
      if (std::abs(obj - last_obj) < 1e-13) {
        if (++stall > 2 * m + 20) bland = true;
      } else {
        stall = 0;
        last_obj = obj;
      }
    }
    return SolveStatus::MaxIter;
  }

  void pivot(int row, int col, Eigen::RowVectorXd* z, double* obj) {
    const int m = static_cast<int>(t_.rows());
    t_.row(row) /= t_(row, col);
    for (int r = 0; r < m; ++r) {
      if (r == row) continue;
      const double f = t_(r, col);
      if (f != 0.0) t_.row(r) -= f * t_.row(row);
    }
    const double zf = (*z)[col];
    if (zf != 0.0) {
      *z -= zf * t_.row(row).head(z->size());
      *obj += zf * t_(row, static_cast<int>(t_.cols()) - 1);
    }
    basis_[row] = col;
  }

  Mat& table() { return t_; }
  std::vector<int>& basis() { return basis_; }

 private:
  Mat t_;
  std::vector<int> basis_;
  double tol_;
};

}  // namespace detail

inline SolveReport solve_lp(const LpProblem& p,
                            const Tolerances& tol = default_tol()) {
  p.validate();
  const int n = p.num_vars();

  // Variable transform to y >= 0. Each original variable maps to either a
  // shifted variable, a mirrored one, or a split pair.
  struct VarMap {
    int idx_pos;
    int idx_neg;    // -1 unless split
    double shift;   // x = shift + y (or shift - y when mirrored)
    bool mirrored;
  };
  std::vector<VarMap> vmap(n);
  int ny = 0;
  std::vector<std::pair<int, double>> extra_ub;  // y_idx <= value rows
  for (int i = 0; i < n; ++i) {
    const double lb = p.lower.size() ? p.lower[i] : -kInf;
    const double ub = p.upper.size() ? p.upper[i] : kInf;
    if (lb > ub + 1e-15) return {SolveStatus::Infeasible, {}, 0.0, 0};
    if (std::isfinite(lb)) {
      vmap[i] = {ny, -1, lb, false};
      if (std::isfinite(ub)) extra_ub.push_back({ny, ub - lb});
      ++ny;
    } else if (std::isfinite(ub)) {
      vmap[i] = {ny, -1, ub, true};  // x = ub - y
      ++ny;
    } else {
      vmap[i] = {ny, ny + 1, 0.0, false};  // x = y+ - y-
      ny += 2;
    }
  }

  const int m_ineq = static_cast<int>(p.ineq_a.rows()) + static_cast<int>(extra_ub.size());
  const int m_eq = static_cast<int>(p.eq_a.rows());
  const int m = m_ineq + m_eq;

  // Rows in y-space: [A | slack] y = b with slack only on inequality rows.
  Mat a = Mat::Zero(m, ny + m_ineq);
  Vec b = Vec::Zero(m);
  Vec cost_y = Vec::Zero(ny + m_ineq);
  double cost_const = 0.0;

  auto fill_row = [&](int row, const Eigen::RowVectorXd& arow, double rhs) {
    double r = rhs;
    for (int i = 0; i < n; ++i) {
      const double coef = arow[i];
      if (coef == 0.0) continue;
      r -= coef * vmap[i].shift;
      const double sgn = vmap[i].mirrored ? -coef : coef;
      a(row, vmap[i].idx_pos) += sgn;
      if (vmap[i].idx_neg >= 0) a(row, vmap[i].idx_neg) -= coef;
    }
    b[row] = r;
  };

  int row = 0;
  for (int r = 0; r < p.ineq_a.rows(); ++r, ++row) {
    fill_row(row, p.ineq_a.row(r), p.ineq_b[r]);
    a(row, ny + row) = 1.0;
  }
  for (const auto& [yi, val] : extra_ub) {
    a(row, yi) = 1.0;
    a(row, ny + row) = 1.0;
    b[row] = val;
    ++row;
  }
  for (int r = 0; r < m_eq; ++r, ++row) fill_row(row, p.eq_a.row(r), p.eq_b[r]);

  for (int i = 0; i < n; ++i) {
    const double c = p.cost[i];
    if (c == 0.0) continue;
    cost_const += c * vmap[i].shift;
    cost_y[vmap[i].idx_pos] += vmap[i].mirrored ? -c : c;
    if (vmap[i].idx_neg >= 0) cost_y[vmap[i].idx_neg] -= c;
  }

  // Flip rows to b >= 0, then append artificials as the starting basis.
  for (int r = 0; r < m; ++r) {
    if (b[r] < 0) {
      a.row(r) *= -1.0;
      b[r] = -b[r];
    }
  }
  const int total = ny + m_ineq + m;
  Mat table = Mat::Zero(std::max(m, 1), total + 1);
  if (m > 0) {
    table.block(0, 0, m, ny + m_ineq) = a;
    table.block(0, ny + m_ineq, m, m) = Mat::Identity(m, m);
    table.col(total) = b;
  }

  SolveReport rep;
  if (m == 0) {
    // No constraints at all: optimal iff no improving direction exists.
    for (int j = 0; j < ny; ++j)
      if (cost_y[j] < -tol.lp_pivot) {
        rep.status = SolveStatus::Unbounded;
        return rep;
      }
    rep.status = SolveStatus::Optimal;
    rep.solution = Vec::Zero(n);
    for (int i = 0; i < n; ++i) rep.solution[i] = vmap[i].shift;
    rep.objective = cost_const;
    rep.primal_residual = 0.0;
    return rep;
  }

  std::vector<int> basis(m);
  for (int r = 0; r < m; ++r) basis[r] = ny + m_ineq + r;
  detail::SimplexTableau simplex(std::move(table), std::move(basis), tol.lp_pivot);

  const int max_iter = 200 * (m + total) + 2000;
  int iters = 0;

  // Phase 1: minimize the sum of artificials.
  Vec phase1 = Vec::Zero(total);
  phase1.tail(m).setOnes();
  SolveStatus st = simplex.run(phase1, max_iter, &iters);
  rep.iterations = iters;
  double art_sum = 0.0;
  for (int r = 0; r < m; ++r)
    if (simplex.basis()[r] >= ny + m_ineq)
      art_sum += simplex.table()(r, total);
  if (st == SolveStatus::MaxIter) { rep.status = SolveStatus::MaxIter; return rep; }
  if (art_sum > 1e-7) { rep.status = SolveStatus::Infeasible; return rep; }

  // Drive remaining (degenerate) artificials out of the basis.
  for (int r = 0; r < m; ++r) {
    if (simplex.basis()[r] < ny + m_ineq) continue;
    int col = -1;
    for (int j = 0; j < ny + m_ineq; ++j)
      if (std::abs(simplex.table()(r, j)) > tol.lp_pivot) { col = j; break; }
    if (col >= 0) {
      Eigen::RowVectorXd dummy = Eigen::RowVectorXd::Zero(total);
      double dobj = 0.0;
      simplex.pivot(r, col, &dummy, &dobj);
    }
    // else: redundant row, leave the artificial at zero.
  }
  // Zero out artificial columns so phase 2 never re-enters them.
  simplex.table().block(0, ny + m_ineq, m, m).setZero();
  for (int r = 0; r < m; ++r)
    if (simplex.basis()[r] >= ny + m_ineq)
      simplex.table()(r, simplex.basis()[r]) = 1.0;

  // Phase 2.
  Vec phase2 = Vec::Zero(total);
  phase2.head(ny + m_ineq) = cost_y;
  st = simplex.run(phase2, max_iter, &iters);
  rep.iterations = iters;
  if (st != SolveStatus::Optimal) { rep.status = st; return rep; }

  Vec y = Vec::Zero(total);
  for (int r = 0; r < m; ++r) y[simplex.basis()[r]] = simplex.table()(r, total);
  rep.solution = Vec::Zero(n);
  for (int i = 0; i < n; ++i) {
    double v = vmap[i].shift;
    const double yp = y[vmap[i].idx_pos];
    v += vmap[i].mirrored ? -yp : yp;
    if (vmap[i].idx_neg >= 0) v -= y[vmap[i].idx_neg];
    rep.solution[i] = v;
  }
  rep.objective = p.cost.dot(rep.solution);
  double pr = 0.0;
  if (p.ineq_a.rows() > 0)
    pr = std::max(pr, (p.ineq_a * rep.solution - p.ineq_b).maxCoeff());
  if (p.eq_a.rows() > 0)
    pr = std::max(pr, (p.eq_a * rep.solution - p.eq_b).cwiseAbs().maxCoeff());
  rep.primal_residual = std::max(0.0, pr);
  rep.status = SolveStatus::Optimal;
  return rep;
}

// ---------------------------------------------------------------------------
// Operator-splitting QP (ADMM with adaptive penalty and active-set polish)
// ---------------------------------------------------------------------------

inline SolveReport solve_qp(const QpProblem& p,
                            const Tolerances& tol = default_tol()) {
  p.validate();
  const int n = p.num_vars();
  const int mi = static_cast<int>(p.ineq_a.rows());
  const int me = static_cast<int>(p.eq_a.rows());
  const int m = mi + me;

  SolveReport rep;
  if (m == 0) {
    Eigen::LDLT<Mat> ldlt(p.quadratic + 1e-14 * Mat::Identity(n, n));
    rep.solution = ldlt.solve(-p.linear);
    rep.objective = 0.5 * rep.solution.dot(p.quadratic * rep.solution) +
                    p.linear.dot(rep.solution);
    rep.status = SolveStatus::Optimal;
    rep.primal_residual = 0.0;
    rep.dual_residual = (p.quadratic * rep.solution + p.linear).cwiseAbs().maxCoeff();
    return rep;
  }

  Mat a(m, n);
  Vec lo(m), up(m);
  if (mi > 0) {
    a.topRows(mi) = p.ineq_a;
    lo.head(mi).setConstant(-kInf);
    up.head(mi) = p.ineq_b;
  }
  if (me > 0) {
    a.bottomRows(me) = p.eq_a;
    lo.tail(me) = p.eq_b;
    up.tail(me) = p.eq_b;
  }

  const double sigma = 1e-6;
  double rho = 0.1;
  auto factorize = [&](double r) {
    Mat kkt(n + m, n + m);
    kkt.topLeftCorner(n, n) = p.quadratic + sigma * Mat::Identity(n, n);
    kkt.topRightCorner(n, m) = a.transpose();
    kkt.bottomLeftCorner(m, n) = a;
    kkt.bottomRightCorner(m, m) = -(1.0 / r) * Mat::Identity(m, m);
    return Eigen::PartialPivLU<Mat>(kkt);
  };
  auto lu = factorize(rho);

  Vec x = Vec::Zero(n), z = Vec::Zero(m), y = Vec::Zero(m);
  const int max_iter = 40000;
  const double eps = 1e-10;
  int it = 0;
  bool converged = false;
  for (; it < max_iter; ++it) {
    Vec rhs(n + m);
    rhs.head(n) = sigma * x - p.linear;
    rhs.tail(m) = z - y / rho;
    Vec sol = lu.solve(rhs);
    const Vec x_new = sol.head(n);
    const Vec nu = sol.tail(m);
    const Vec z_tilde = z + (nu - y) / rho;
    const double alpha = 1.6;
    const Vec x_rel = alpha * x_new + (1 - alpha) * x;
    const Vec z_rel = alpha * z_tilde + (1 - alpha) * z;
    Vec z_new = (z_rel + y / rho).cwiseMax(lo).cwiseMin(up);
    y += rho * (z_rel - z_new);
    x = x_rel;
    const Vec ax = a * x;
    const double rp = (ax - z_new).cwiseAbs().maxCoeff();
    const double rd =
        (p.quadratic * x + p.linear + a.transpose() * y).cwiseAbs().maxCoeff();
    z = z_new;
    if (rp < eps && rd < eps) { converged = true; break; }
    if (it % 100 == 99 && rp > 1e-16 && rd > 1e-16) {
      const double ratio = std::sqrt(rp / rd);
      if (ratio > 5.0 || ratio < 0.2) {
        rho = std::clamp(rho * ratio, 1e-6, 1e6);
        lu = factorize(rho);
      }
    }
  }
  rep.iterations = it;

  // Active-set polish: resolve the equality-constrained KKT system on the
  // constraints ADMM identified as active.
  auto finish = [&](const Vec& xs, const Vec& ys) {
    rep.solution = xs;
    rep.objective = 0.5 * xs.dot(p.quadratic * xs) + p.linear.dot(xs);
    const Vec ax = a * xs;
    rep.primal_residual =
        std::max(0.0, std::max((lo - ax).maxCoeff(), (ax - up).maxCoeff()));
    rep.dual_residual =
        (p.quadratic * xs + p.linear + a.transpose() * ys).cwiseAbs().maxCoeff();
  };

  std::vector<int> active;
  for (int i = 0; i < m; ++i) {
    const bool at_up = std::isfinite(up[i]) && (up[i] - z[i] < 1e-6 || y[i] > 1e-8);
    const bool at_lo = std::isfinite(lo[i]) && (z[i] - lo[i] < 1e-6 || y[i] < -1e-8);
    if (i >= mi || at_up || at_lo) active.push_back(i);
  }
  const int k = static_cast<int>(active.size());
  bool polished = false;
  if (k <= n + me + 8) {  // keep the polish system well-posed
    Mat aa(k, n);
    Vec bb(k);
    for (int i = 0; i < k; ++i) {
      aa.row(i) = a.row(active[i]);
      bb[i] = (y[active[i]] >= 0 || active[i] >= mi) ? up[active[i]] : lo[active[i]];
    }
    Mat kkt = Mat::Zero(n + k, n + k);
    kkt.topLeftCorner(n, n) = p.quadratic;
    kkt.topRightCorner(n, k) = aa.transpose();
    kkt.bottomLeftCorner(k, n) = aa;
    Vec rhs(n + k);
    rhs.head(n) = -p.linear;
    rhs.tail(k) = bb;
    Eigen::FullPivLU<Mat> full(kkt);
    if (full.isInvertible() || full.rank() == n + k) {
      Vec sol = full.solve(rhs);
      const Vec xp = sol.head(n);
      Vec yp = Vec::Zero(m);
      bool ok = true;
      for (int i = 0; i < k; ++i) {
        yp[active[i]] = sol[n + i];
        if (active[i] < mi && sol[n + i] < -1e-7) ok = false;
      }
      const Vec axp = a * xp;
      for (int i = 0; i < m; ++i) {
        if (axp[i] > up[i] + tol.qp_kkt || axp[i] < lo[i] - tol.qp_kkt) ok = false;
      }
      if (ok) {
        finish(xp, yp);
        polished = true;
      }
    }
  }
  if (!polished) finish(x, y);

  if (rep.primal_residual < tol.qp_kkt && rep.dual_residual < tol.qp_kkt) {
    rep.status = SolveStatus::Optimal;
  } else if (!converged && rep.primal_residual > tol.qp_infeasible) {
    rep.status = SolveStatus::Infeasible;
  } else {
    rep.status = SolveStatus::MaxIter;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Riccati / Lyapunov synthesis
// ---------------------------------------------------------------------------

struct DareResult {
  Mat p;  // stabilizing DARE solution
  Mat k;  // feedback so that u = Kx stabilizes A + BK
  int iterations = 0;
  double residual = 0.0;
};

/// Fixed-point Riccati recursion. Q PSD, R PD, (A,B) stabilizable.
inline DareResult solve_dare(const Mat& a, const Mat& b, const Mat& q,
                             const Mat& r, const Tolerances& tol = default_tol()) {
  const int n = static_cast<int>(a.rows());
  if (a.cols() != n || b.rows() != n || q.rows() != n || q.cols() != n ||
      r.rows() != b.cols() || r.cols() != b.cols())
    throw Error("BadProblem", "DARE dimension mismatch");
  Eigen::LLT<Mat> rchol(r);
  if (rchol.info() != Eigen::Success)
    throw Error("BadProblem", "DARE weight R must be positive definite");

  Mat p = q;
  const int max_iter = 100000;
  int it = 0;
  for (; it < max_iter; ++it) {
    const Mat btp = b.transpose() * p;
    const Mat gain = (r + btp * b).ldlt().solve(btp * a);
    const Mat p_next =
        q + a.transpose() * p * a - a.transpose() * p * b * gain;
    const Mat sym = 0.5 * (p_next + p_next.transpose());
    const double diff = (sym - p).cwiseAbs().maxCoeff();
    p = sym;
    if (diff < tol.dare) break;
  }
  if (it == max_iter)
    throw Error("NoConvergence", "DARE fixed-point iteration did not converge");

  DareResult res;
  res.p = p;
  const Mat btp = b.transpose() * p;
  res.k = -(r + btp * b).ldlt().solve(btp * a);
  res.iterations = it;
  res.residual =
      (a.transpose() * p * a - p -
       (a.transpose() * p * b) * (r + btp * b).ldlt().solve(btp * a) + q)
          .norm();
  if (spectral_radius(a + b * res.k) >= 1.0)
    throw Error("NoConvergence", "DARE gain does not stabilize (A,B)");
  return res;
}

/// Solves P - Phi' P Phi = M for stable Phi and symmetric PSD M.
/// Direct Kronecker solve for n <= 60, truncated series otherwise.
inline Mat solve_discrete_lyapunov(const Mat& phi, const Mat& m,
                                   const Tolerances& tol = default_tol()) {
  const int n = static_cast<int>(phi.rows());
  if (phi.cols() != n || m.rows() != n || m.cols() != n)
    throw Error("BadProblem", "Lyapunov dimension mismatch");
  if (spectral_radius(phi) >= 1.0)
    throw Error("Unstable", "Lyapunov equation requires spectral radius < 1");

  Mat p;
  if (n <= 60) {
    const int n2 = n * n;
    Mat lhs = Mat::Identity(n2, n2);
    const Mat pt = phi.transpose();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        lhs.block(i * n, j * n, n, n) -= pt(i, j) * pt;  // kron(Phi', Phi')
    Eigen::Map<const Vec> mv(m.data(), n2);
    Vec pv = lhs.partialPivLu().solve(mv);
    p = Eigen::Map<Mat>(pv.data(), n, n);
  } else {
    p = m;
    Mat term = m;
    Mat phik = phi;
    for (int k = 0; k < 100000; ++k) {
      term = phik.transpose() * m * phik;
      p += term;
      if (term.cwiseAbs().maxCoeff() < 1e-15) break;
      phik = phi * phik;
    }
  }
  p = 0.5 * (p + p.transpose());
  const double res = (p - phi.transpose() * p * phi - m).norm();
  if (res > tol.lyapunov)
    throw Error("NoConvergence", "Lyapunov residual too large");
  return p;
}

}  // namespace ktube
