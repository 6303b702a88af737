#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ktube/harness.hpp"

using namespace ktube;

namespace {

std::string write_temp(const std::string& name, const std::string& text) {
  const std::string path =
      (std::filesystem::temp_directory_path() / name).string();
  std::ofstream out(path);
  out << text;
  return path;
}

const char* kMiniConfig = R"(
# comment line
seed = 7
out = out/mini

[plant]
field = cubic_spring
mass_spring_corrected = true
disturbance1 = uniform(-0.001, 0.001)
disturbance2 = uniform(-0.05, 0.05)

[dictionary]
terms = 1, x1^2, x2^2, x1^3, x2^3

[training]
trajectories = 120
length = 60

[estimation]
samples = 330

[dro]
radius = 1e-4
alpha = 0.1, 0.1, 0.1, 0.1

[constraints]
f_rows = 0 1; 0 -1; 1 0; -1 0
f_bounds = 0.6, 2.5, 2.5, 2.5
g_rows = 1; -1
g_bounds = 60, 60

[weights]
q = 100, 100, 1, 0.1, 0.1, 0.1, 0.1
r = 0.1

[mpc]
horizon = 5

[montecarlo]
runs = 4
steps = 10
x0 = -0.6, 0
threads = 2
)";

}  // namespace

TEST_CASE("sectioned key-value text parses into the expected tree") {
  Json j = parse_config_text(
      "top = 3\n[a]\nname = hello\nflag = true\nlist = 1, 2.5, 3\n"
      "# comment\nmat = 1 0; 0 1\n");
  CHECK(j.at("top").get<double>() == 3.0);
  CHECK(j.at("a").at("name").get<std::string>() == "hello");
  CHECK(j.at("a").at("flag").get<bool>() == true);
  CHECK(j.at("a").at("list").size() == 3);
  CHECK(j.at("a").at("list")[1].get<double>() == 2.5);
  Mat m = detail::json_to_mat(j.at("a").at("mat"));
  CHECK(m.isApprox(Mat::Identity(2, 2)));
  CHECK_THROWS_AS(parse_config_text("[unterminated\n"), Error);
  CHECK_THROWS_AS(parse_config_text("no equals sign\n"), Error);
}

TEST_CASE("text and json configs load to identical experiments") {
  std::string cfg_path = write_temp("ktube_mini.cfg", kMiniConfig);
  ExperimentConfig a = load_experiment(cfg_path);

  Json j = parse_config_text(kMiniConfig);
  std::string json_path = write_temp("ktube_mini.json", j.dump(2));
  ExperimentConfig b = load_experiment(json_path);

  CHECK(a.seed == 7);
  CHECK(a.seed == b.seed);
  CHECK(a.plant.disturbance[1].hi == b.plant.disturbance[1].hi);
  CHECK(a.dictionary == b.dictionary);
  CHECK(a.constraints.f_rows.isApprox(b.constraints.f_rows));
  CHECK(a.q_diag.isApprox(b.q_diag));
  CHECK(a.mc.x0.isApprox(b.mc.x0));
  CHECK(a.horizon == 5);
  std::remove(cfg_path.c_str());
  std::remove(json_path.c_str());
}

TEST_CASE("disturbance strings parse to the right spec") {
  DisturbanceSpec u = detail::parse_disturbance("uniform(-0.1, 0.2)");
  CHECK(u.kind == DisturbanceSpec::Kind::Uniform);
  CHECK(u.lo == -0.1);
  CHECK(u.hi == 0.2);
  DisturbanceSpec b = detail::parse_disturbance("beta(100, 100, 0.002, -0.001)");
  CHECK(b.kind == DisturbanceSpec::Kind::BetaAffine);
  auto [lo, hi] = b.support();
  CHECK(lo == Catch::Approx(-0.001));
  CHECK(hi == Catch::Approx(0.001));
  CHECK(detail::parse_disturbance("zero").kind == DisturbanceSpec::Kind::Zero);
  CHECK_THROWS_AS(detail::parse_disturbance("gauss(0,1)"), Error);
}

TEST_CASE("pipeline is deterministic and internally consistent") {
  std::string path = write_temp("ktube_pipe.cfg", kMiniConfig);
  ExperimentConfig cfg = load_experiment(path);
  std::remove(path.c_str());

  PipelineBundle b1 = run_pipeline(cfg);
  PipelineBundle b2 = run_pipeline(cfg);
  CHECK(b1.model.a.isApprox(b2.model.a));
  CHECK(b1.eta.isApprox(b2.eta));
  CHECK(b1.controller.k_gain.isApprox(b2.controller.k_gain));

  // tube shape: N state stages, N input stages, nonempty terminal set
  CHECK(b1.controller.tube.horizon() == cfg.horizon);
  CHECK(static_cast<int>(b1.controller.tube.input.size()) == cfg.horizon);
  CHECK(b1.controller.tube.terminal.h_mat.rows() > 0);
  // backoffs are nonnegative and below the worst-case support
  for (int l = 0; l < b1.eta.size(); ++l) {
    CHECK(b1.eta[l] >= 0.0);
    Vec row = cfg.constraints.f_rows.row(l).transpose();
    CHECK(b1.eta[l] <= support(b1.estimate.support_box, row) + 1e-12);
  }
  CHECK(b1.cert.valid());

  // a different seed changes the fitted model
  ExperimentConfig cfg2 = cfg;
  cfg2.seed = 99;
  PipelineBundle b3 = run_pipeline(cfg2);
  CHECK_FALSE(b1.model.a.isApprox(b3.model.a));
}

TEST_CASE("robust backoff dominates the distributional one") {
  std::string path = write_temp("ktube_rob.cfg", kMiniConfig);
  ExperimentConfig cfg = load_experiment(path);
  std::remove(path.c_str());
  PipelineBundle dro = run_pipeline(cfg, false);
  PipelineBundle rob = run_pipeline(cfg, true);
  for (int l = 0; l < dro.eta.size(); ++l) CHECK(rob.eta[l] >= dro.eta[l] - 1e-12);
  CHECK(rob.eta.maxCoeff() > dro.eta.maxCoeff());
}

TEST_CASE("montecarlo artifacts agree with a recount from the trajectory csv") {
  std::string path = write_temp("ktube_mc.cfg", kMiniConfig);
  ExperimentConfig cfg = load_experiment(path);
  std::remove(path.c_str());
  PipelineBundle b = run_pipeline(cfg);
  auto recs = run_montecarlo(b, cfg.mc.runs, cfg.mc.threads);
  MonteCarloReport rep = aggregate_runs(b, recs);

  const std::string dir =
      (std::filesystem::temp_directory_path() / "ktube_mc_out").string();
  write_montecarlo_artifacts(dir, b, recs, rep);

  // independent recount of the satisfaction rates from the raw trajectories
  CsvTable traj = read_csv(dir + "/trajectories.csv");
  CsvTable summary = read_csv(dir + "/summary.csv");
  const int n_f = static_cast<int>(cfg.constraints.f_rows.rows());
  Mat count = Mat::Zero(cfg.mc.steps + 1, n_f);
  Vec total = Vec::Zero(cfg.mc.steps + 1);
  for (int r = 0; r < traj.data.rows(); ++r) {
    const int k = static_cast<int>(traj.data(r, traj.col("step")));
    Vec x(2);
    x << traj.data(r, traj.col("x1")), traj.data(r, traj.col("x2"));
    total[k] += 1.0;
    for (int l = 0; l < n_f; ++l)
      if (cfg.constraints.f_rows.row(l).dot(x) <= cfg.constraints.f_bounds[l])
        count(k, l) += 1.0;
  }
  for (int k = 0; k <= cfg.mc.steps; ++k) {
    REQUIRE(total[k] > 0);
    for (int l = 0; l < n_f; ++l) {
      const double recount = count(k, l) / total[k];
      CHECK(summary.data(k, summary.col("sat_rate_" + std::to_string(l + 1))) ==
            Catch::Approx(recount).margin(1e-12));
    }
  }

  // svg plots exist and are well-formed enough to end with the closing tag
  std::ifstream svg(dir + "/x2.svg");
  REQUIRE(svg.good());
  std::stringstream ss;
  ss << svg.rdbuf();
  CHECK(ss.str().find("<svg") != std::string::npos);
  CHECK(ss.str().find("</svg>") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("sensitivity table layout and slope structure") {
  SensitivityConfig cfg;
  cfg.sample_counts = {5, 30};
  cfg.radii = {1e-2, 1e-3, 1e-4};
  cfg.seed = 3;
  SensitivityTable t = run_sensitivity(cfg);
  REQUIRE(t.eta.rows() == 2);
  REQUIRE(t.eta.cols() == 3);
  // wider radii can only increase the backoff
  for (int i = 0; i < 2; ++i)
    for (int j = 1; j < 3; ++j) CHECK(t.eta(i, j) <= t.eta(i, j - 1) + 1e-12);
  // unclamped columns differ by (theta_a - theta_b) / alpha
  for (int i = 0; i < 2; ++i)
    if (t.eta(i, 0) < 0.1 - 1e-9)
      CHECK(t.eta(i, 0) - t.eta(i, 1) ==
            Catch::Approx((1e-2 - 1e-3) / cfg.alpha).margin(1e-6));

  const std::string path =
      (std::filesystem::temp_directory_path() / "ktube_sens.csv").string();
  write_sensitivity_csv(path, t);
  CsvTable back = read_csv(path);
  CHECK(back.header.front() == "samples");
  CHECK(back.header.size() == 4);
  CHECK(back.data(0, 0) == 5);
  CHECK(back.data(1, 2) == Catch::Approx(t.eta(1, 1)));
  std::remove(path.c_str());
}
