#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <numeric>
#include <random>

#include "ktube/koopman.hpp"

using namespace ktube;

namespace {

Dictionary cubic_dict() {
  return Dictionary::from_terms(
      2, {"1", "x1", "x2", "x1^2", "x2^2", "x1^3", "x2^3"});
}

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

double edmd_objective(const Dictionary& dict, const Dataset& d, const Mat& a,
                      const Mat& b) {
  double obj = 0.0;
  for (int j = 0; j < d.size(); ++j) {
    Vec s = dict.lift(d.x.row(j).transpose());
    Vec sp = dict.lift(d.x_next.row(j).transpose());
    obj += (sp - a * s - b * d.u.row(j).transpose()).squaredNorm();
  }
  return obj;
}

}  // namespace

TEST_CASE("dictionary structure") {
  Dictionary d = cubic_dict();
  CHECK(d.lifted_dim() == 7);
  CHECK(d.state_dim() == 2);
  // identity block first
  CHECK(d.lift(v2(0.3, -0.7)).head(2).isApprox(v2(0.3, -0.7)));
  // Psi(0) = 0 including the shifted constant slot
  CHECK(d.lift(Vec(Vec::Zero(2))).norm() == 0.0);
}

TEST_CASE("lift evaluates observables") {
  Dictionary d = cubic_dict();
  Vec s = cubic_dict().lift(v2(1, 2));
  // internal order: x1 x2 1 x1^2 x2^2 x1^3 x2^3
  CHECK(s[0] == Catch::Approx(1));
  CHECK(s[1] == Catch::Approx(2));
  CHECK(s[2] == Catch::Approx(0));  // constant slot after origin shift
  CHECK(s[3] == Catch::Approx(1));
  CHECK(s[4] == Catch::Approx(4));
  CHECK(s[5] == Catch::Approx(1));
  CHECK(s[6] == Catch::Approx(8));

  // nonlinearity witness
  CHECK(d.lift(v2(2, 0)) != 2.0 * d.lift(v2(1, 0)));

  Vec bad(2);
  bad << std::nan(""), 0.0;
  CHECK_THROWS_AS(d.lift(bad), Error);
}

TEST_CASE("monomial dictionary family") {
  Dictionary d = Dictionary::monomials(2, 3, true);
  CHECK(d.state_dim() == 2);
  // x1, x2, 1, and all degree-2..3 monomials: x1^2 x1x2 x2^2 x1^3 x1^2x2 x1x2^2 x2^3
  CHECK(d.lifted_dim() == 10);
  CHECK(d.lift(Vec(Vec::Zero(2))).norm() == 0.0);
}

TEST_CASE("edmd recovers an exact linear system") {
  // identity dictionary, data from s+ = A0 s + B0 u with no noise
  Dictionary d = Dictionary::from_terms(2, {});
  REQUIRE(d.lifted_dim() == 2);
  Mat a0(2, 2), b0(2, 1);
  a0 << 0.9, 0.1, -0.2, 0.8;
  b0 << 0.0, 1.0;

  std::mt19937 rng(71);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int n = 50;
  Dataset data;
  data.x = Mat(n, 2);
  data.u = Mat(n, 1);
  data.x_next = Mat(n, 2);
  for (int i = 0; i < n; ++i) {
    Vec x = v2(u(rng), u(rng));
    Vec in = Vec::Constant(1, u(rng));
    data.x.row(i) = x.transpose();
    data.u.row(i) = in.transpose();
    data.x_next.row(i) = (a0 * x + b0 * in).transpose();
  }
  LiftedModel m = fit_edmd(d, data);
  CHECK((m.a - a0).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((m.b - b0).cwiseAbs().maxCoeff() < 1e-10);
  CHECK_FALSE(m.stats.ridge_applied);
  CHECK(m.stats.max_residual < 1e-10);
}

TEST_CASE("edmd matches closed-form normal equations on a scalar problem") {
  Dictionary d = Dictionary::from_terms(1, {});
  Dataset data;
  data.x = Mat(5, 1);
  data.u = Mat(5, 1);
  data.x_next = Mat(5, 1);
  data.x << 1, 2, -1, 0.5, -2;
  data.u << 0.1, -0.3, 0.7, 0.0, 0.4;
  data.x_next << 0.9, 1.7, -0.4, 0.45, -1.6;

  LiftedModel m = fit_edmd(d, data);
  // oracle: (G'G)^-1 G'Y by hand
  Mat g(5, 2);
  g << data.x, data.u;
  Mat coeff = (g.transpose() * g).inverse() * g.transpose() * data.x_next;
  CHECK(m.a(0, 0) == Catch::Approx(coeff(0, 0)).margin(1e-10));
  CHECK(m.b(0, 0) == Catch::Approx(coeff(1, 0)).margin(1e-10));
}

TEST_CASE("edmd optimality and reorder equivariance") {
  Dictionary d = Dictionary::from_terms(2, {"x1^2"});
  std::mt19937 rng(73);
  std::normal_distribution<double> g(0.0, 1.0);
  const int n = 60;
  Dataset data;
  data.x = Mat::NullaryExpr(n, 2, [&](int, int) { return g(rng); });
  data.u = Mat::NullaryExpr(n, 1, [&](int, int) { return g(rng); });
  data.x_next = Mat::NullaryExpr(n, 2, [&](int, int) { return g(rng); });

  LiftedModel m = fit_edmd(d, data);
  const double base = edmd_objective(d, data, m.a, m.b);

  // no small random perturbation improves the objective
  for (int trial = 0; trial < 20; ++trial) {
    Mat da = Mat::NullaryExpr(3, 3, [&](int, int) { return g(rng); });
    Mat db = Mat::NullaryExpr(3, 1, [&](int, int) { return g(rng); });
    da *= 1e-4 / da.norm();
    db *= 1e-4 / db.norm();
    CHECK(edmd_objective(d, data, m.a + da, m.b + db) >= base - 1e-12);
  }

  // sample reordering leaves the fit unchanged
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Dataset shuffled = data;
  for (int i = 0; i < n; ++i) {
    shuffled.x.row(i) = data.x.row(perm[i]);
    shuffled.u.row(i) = data.u.row(perm[i]);
    shuffled.x_next.row(i) = data.x_next.row(perm[i]);
  }
  LiftedModel m2 = fit_edmd(d, shuffled);
  CHECK((m.a - m2.a).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((m.b - m2.b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("degenerate constant observable triggers flagged ridge") {
  Dictionary d = cubic_dict();  // contains the zeroed constant slot
  std::mt19937 rng(79);
  std::normal_distribution<double> g(0.0, 1.0);
  const int n = 200;
  Dataset data;
  data.x = Mat::NullaryExpr(n, 2, [&](int, int) { return g(rng); });
  data.u = Mat::NullaryExpr(n, 1, [&](int, int) { return g(rng); });
  data.x_next = Mat::NullaryExpr(n, 2, [&](int, int) { return 0.5 * g(rng); });
  LiftedModel m = fit_edmd(d, data);
  CHECK(m.stats.ridge_applied);
  CHECK(m.a.allFinite());
  CHECK(m.b.allFinite());
}

TEST_CASE("predict nominal") {
  LiftedModel m;
  m.dictionary = Dictionary::from_terms(2, {});
  m.a = Mat::Identity(2, 2);
  m.b = Mat::Zero(2, 1);
  Vec s = v2(0.4, -0.1);
  CHECK(predict_nominal(m, s, Vec::Zero(1)).isApprox(s));
  CHECK(predict_nominal(m, Vec(Vec::Zero(2)), Vec::Zero(1)).norm() == 0.0);

  std::mt19937 rng(83);
  std::normal_distribution<double> g(0.0, 1.0);
  m.a = Mat::NullaryExpr(2, 2, [&](int, int) { return g(rng); });
  m.b = Mat::NullaryExpr(2, 1, [&](int, int) { return g(rng); });
  Vec u = Vec::Constant(1, 0.7);
  CHECK(predict_nominal(m, s, u).isApprox(m.a * s + m.b * u));
}

TEST_CASE("c and d matrices") {
  LiftedModel m;
  m.dictionary = cubic_dict();
  m.a = Mat::Identity(7, 7);
  m.b = Mat::Zero(7, 1);
  CHECK((m.c_mat() * m.d_mat()).isApprox(Mat::Identity(2, 2)));
  // C * lift(x) = x
  Vec x = v2(1.3, -0.2);
  CHECK((m.c_mat() * m.lift(x)).isApprox(x));
}

TEST_CASE("dataset csv round trip and model json round trip") {
  Dataset d;
  d.x = Mat(2, 2);
  d.x << 1, 2, 3, 4;
  d.u = Mat(2, 1);
  d.u << -1, 0.5;
  d.x_next = Mat(2, 2);
  d.x_next << 0.1, 0.2, 0.3, 0.4;
  const std::string path = std::filesystem::temp_directory_path() / "ktube_ds.csv";
  d.to_csv(path);
  Dataset back = Dataset::from_csv(path, 2, 1);
  CHECK(back.x.isApprox(d.x));
  CHECK(back.u.isApprox(d.u));
  CHECK(back.x_next.isApprox(d.x_next));

  LiftedModel m;
  m.dictionary = cubic_dict();
  m.a = Mat::Random(7, 7);
  m.b = Mat::Random(7, 1);
  m.stats.rms_residual = 0.125;
  LiftedModel m2 = LiftedModel::from_json(m.to_json());
  CHECK(m2.a.isApprox(m.a));
  CHECK(m2.b.isApprox(m.b));
  CHECK(m2.stats.rms_residual == 0.125);
  CHECK(m2.dictionary.names() == m.dictionary.names());
}
