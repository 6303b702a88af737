#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ktube/common.hpp"
#include "ktube/io.hpp"
#include "ktube/solvers.hpp"

namespace ktube {

// ---------------------------------------------------------------------------
// Observable dictionaries
// ---------------------------------------------------------------------------

/// One monomial observable prod_i x_i^e_i, identified by its exponent vector.
struct Observable {
  std::string name;
  Eigen::VectorXi exponents;

  double raw_value(const Vec& x) const {
    double v = 1.0;
    for (int i = 0; i < exponents.size(); ++i)
      for (int k = 0; k < exponents[i]; ++k) v *= x[i];
    return v;
  }

  bool is_identity(int coord) const {
    if (exponents.sum() != 1) return false;
    return exponents[coord] == 1;
  }
};

/// Ordered observable list with the identity block first and the value at the
/// origin subtracted, so that lift(0) = 0 and the first n_x entries are x.
class Dictionary {
 public:
  /// Terms are monomial strings: "1", "x1", "x2^3", "x1*x2". Identity terms
  /// are hoisted to the front (added if missing); the rest keep their order.
  static Dictionary from_terms(int n_x, const std::vector<std::string>& terms) {
    Dictionary d;
    d.n_x_ = n_x;
    for (int i = 0; i < n_x; ++i) {
      Observable obs;
      obs.exponents = Eigen::VectorXi::Zero(n_x);
      obs.exponents[i] = 1;
      obs.name = "x" + std::to_string(i + 1);
      d.observables_.push_back(obs);
    }
    for (const auto& t : terms) {
      Observable obs = parse_term(n_x, t);
      if (obs.exponents.sum() == 1) continue;  // identity slot already present
      d.observables_.push_back(obs);
    }
    d.finish();
    return d;
  }

  /// All monomials of total degree 1..degree (identity block first), plus the
  /// constant slot when include_constant is set.
  static Dictionary monomials(int n_x, int degree, bool include_constant = false) {
    std::vector<std::string> terms;
    if (include_constant) terms.push_back("1");
    std::vector<int> expo(n_x, 0);
    // enumerate exponent vectors with 2 <= total degree <= degree
    std::function<void(int, int)> rec = [&](int pos, int remaining) {
      if (pos == n_x) {
        int total = 0;
        for (int e : expo) total += e;
        if (total >= 2) {
          std::string t;
          for (int i = 0; i < n_x; ++i) {
            if (expo[i] == 0) continue;
            if (!t.empty()) t += "*";
            t += "x" + std::to_string(i + 1);
            if (expo[i] > 1) t += "^" + std::to_string(expo[i]);
          }
          terms.push_back(t);
        }
        return;
      }
      for (int e = 0; e <= remaining; ++e) {
        expo[pos] = e;
        rec(pos + 1, remaining - e);
      }
      expo[pos] = 0;
    };
    rec(0, degree);
    return from_terms(n_x, terms);
  }

  int state_dim() const { return n_x_; }
  int lifted_dim() const { return static_cast<int>(observables_.size()); }
  const std::vector<Observable>& observables() const { return observables_; }

  /// s = Psi(x) - Psi(0); the first n_x entries equal x.
  Vec lift(const Vec& x) const {
    if (x.size() != n_x_) throw Error("BadSet", "lift dimension mismatch");
    if (!x.allFinite()) throw Error("NonFinite", "lift input is not finite");
    Vec s(lifted_dim());
    for (int i = 0; i < lifted_dim(); ++i)
      s[i] = observables_[i].raw_value(x) - shift_[i];
    return s;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& o : observables_) out.push_back(o.name);
    return out;
  }

  Json to_json() const {
    Json j;
    j["n_x"] = n_x_;
    j["terms"] = names();
    return j;
  }

  static Dictionary from_json(const Json& j) {
    return from_terms(j.at("n_x"), j.at("terms").get<std::vector<std::string>>());
  }

 private:
  static Observable parse_term(int n_x, const std::string& term) {
    Observable obs;
    obs.name = term;
    obs.exponents = Eigen::VectorXi::Zero(n_x);
    if (term == "1") return obs;
    std::stringstream ss(term);
    std::string factor;
    while (std::getline(ss, factor, '*')) {
      size_t caret = factor.find('^');
      std::string base = factor.substr(0, caret);
      int power = caret == std::string::npos
                      ? 1
                      : std::stoi(factor.substr(caret + 1));
      if (base.size() < 2 || base[0] != 'x')
        throw Error("BadFormat", "cannot parse observable term: " + term);
      int idx = std::stoi(base.substr(1)) - 1;
      if (idx < 0 || idx >= n_x)
        throw Error("BadFormat", "observable index out of range: " + term);
      obs.exponents[idx] += power;
    }
    return obs;
  }

  void finish() {
    shift_.resize(observables_.size());
    Vec zero = Vec::Zero(n_x_);
    for (size_t i = 0; i < observables_.size(); ++i)
      shift_[i] = observables_[i].raw_value(zero);
  }

  int n_x_ = 0;
  std::vector<Observable> observables_;
  std::vector<double> shift_;
};

// ---------------------------------------------------------------------------
// Datasets and the lifted model
// ---------------------------------------------------------------------------

/// (x_i, u_i, x_i^+) triples, one per row.
struct Dataset {
  Mat x;       // N x n_x
  Mat u;       // N x n_u
  Mat x_next;  // N x n_x

  int size() const { return static_cast<int>(x.rows()); }

  static Dataset from_csv(const std::string& path, int n_x, int n_u) {
    CsvTable t = read_csv(path);
    if (static_cast<int>(t.header.size()) != 2 * n_x + n_u)
      throw Error("BadFormat", "dataset CSV column count mismatch");
    Dataset d;
    d.x = t.data.leftCols(n_x);
    d.u = t.data.middleCols(n_x, n_u);
    d.x_next = t.data.rightCols(n_x);
    return d;
  }

  void to_csv(const std::string& path) const {
    std::vector<std::string> header;
    for (int i = 0; i < x.cols(); ++i) header.push_back("x" + std::to_string(i + 1));
    for (int i = 0; i < u.cols(); ++i) header.push_back("u" + std::to_string(i + 1));
    for (int i = 0; i < x.cols(); ++i) header.push_back("xp" + std::to_string(i + 1));
    Mat all(x.rows(), 2 * x.cols() + u.cols());
    all << x, u, x_next;
    write_csv(path, header, all);
  }
};

struct FitStats {
  double rms_residual = 0.0;
  double max_residual = 0.0;
  double gram_condition = 0.0;
  bool ridge_applied = false;
};

/// Lifted linear model s+ = As + Bu with x = Cs and D = [I; 0].
struct LiftedModel {
  Mat a;
  Mat b;
  Dictionary dictionary;
  FitStats stats;

  int lifted_dim() const { return static_cast<int>(a.rows()); }
  int state_dim() const { return dictionary.state_dim(); }
  int input_dim() const { return static_cast<int>(b.cols()); }

  Mat c_mat() const {
    Mat c = Mat::Zero(state_dim(), lifted_dim());
    c.leftCols(state_dim()).setIdentity();
    return c;
  }

  Mat d_mat() const {
    Mat d = Mat::Zero(lifted_dim(), state_dim());
    d.topRows(state_dim()).setIdentity();
    return d;
  }

  Vec lift(const Vec& x) const { return dictionary.lift(x); }

  Json to_json() const {
    Json j;
    j["a"] = mat_to_json(a);
    j["b"] = mat_to_json(b);
    j["dictionary"] = dictionary.to_json();
    j["rms_residual"] = stats.rms_residual;
    j["max_residual"] = stats.max_residual;
    j["gram_condition"] = stats.gram_condition;
    j["ridge_applied"] = stats.ridge_applied;
    return j;
  }

  static LiftedModel from_json(const Json& j) {
    LiftedModel m;
    m.a = mat_from_json(j.at("a"));
    m.b = mat_from_json(j.at("b"));
    m.dictionary = Dictionary::from_json(j.at("dictionary"));
    m.stats.rms_residual = j.at("rms_residual");
    m.stats.max_residual = j.at("max_residual");
    m.stats.gram_condition = j.at("gram_condition");
    m.stats.ridge_applied = j.at("ridge_applied");
    return m;
  }
};

/// Least-squares fit of (A, B) on lifted data. Degenerate regressors (e.g. a
/// constant observable zeroed by the origin shift) trigger a flagged ridge
/// fallback instead of failing.
inline LiftedModel fit_edmd(const Dictionary& dict, const Dataset& data,
                            const Tolerances& tol = default_tol()) {
  const int n = dict.lifted_dim();
  const int n_u = static_cast<int>(data.u.cols());
  const int m = data.size();
  if (m < n + n_u)
    throw Error("RankDeficient",
                "EDMD needs at least lifted_dim + input_dim samples");
  if (!data.x.allFinite() || !data.u.allFinite() || !data.x_next.allFinite())
    throw Error("NonFinite", "EDMD dataset contains non-finite values");

  Mat g(m, n + n_u);  // stacked regressor [Psi(x_j), u_j]
  Mat y(m, n);
  for (int j = 0; j < m; ++j) {
    g.row(j).head(n) = dict.lift(data.x.row(j).transpose()).transpose();
    g.row(j).tail(n_u) = data.u.row(j);
    y.row(j) = dict.lift(data.x_next.row(j).transpose()).transpose();
  }

  Mat gram = g.transpose() * g;
  Eigen::JacobiSVD<Mat> svd(gram);
  const double smax = svd.singularValues()[0];
  const double smin = svd.singularValues()[svd.singularValues().size() - 1];
  const double cond = smin > 0 ? smax / smin : kInf;

  LiftedModel model;
  model.dictionary = dict;
  model.stats.gram_condition = cond;
  Mat coeffs;  // (n + n_u) x n
  if (cond > tol.edmd_cond_limit) {
    model.stats.ridge_applied = true;
    Mat reg = gram + tol.edmd_ridge * Mat::Identity(n + n_u, n + n_u);
    coeffs = reg.ldlt().solve(g.transpose() * y);
  } else {
    coeffs = g.colPivHouseholderQr().solve(y);
  }
  model.a = coeffs.topRows(n).transpose();
  model.b = coeffs.bottomRows(n_u).transpose();

  const Mat resid = y - g * coeffs;
  model.stats.rms_residual = std::sqrt(resid.squaredNorm() / m);
  model.stats.max_residual = resid.cwiseAbs().maxCoeff();
  return model;
}

inline Vec predict_nominal(const LiftedModel& model, const Vec& s, const Vec& u) {
  if (s.size() != model.lifted_dim() || u.size() != model.input_dim())
    throw Error("BadSet", "predict_nominal dimension mismatch");
  return model.a * s + model.b * u;
}

}  // namespace ktube
