#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "ktube/harness.hpp"

namespace fs = std::filesystem;
using namespace ktube;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitCheck = 4;

struct CommonOpts {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int runs = 0;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool needs_config = true) {
  auto* c = cmd->add_option("--config", o.config, "experiment config file");
  if (needs_config) c->required();
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "seed override")
      ->each([&](const std::string&) { o.seed_set = true; });
  cmd->add_option("--runs", o.runs, "Monte-Carlo run count override");
  cmd->add_option("--threads", o.threads, "worker thread count override");
}

ExperimentConfig load_with_overrides(const CommonOpts& o) {
  try {
    ExperimentConfig cfg = load_experiment(o.config);
    if (o.seed_set) cfg.seed = o.seed;
    if (!o.out.empty()) cfg.out = o.out;
    if (o.runs > 0) cfg.mc.runs = o.runs;
    if (o.threads > 0) cfg.mc.threads = o.threads;
    cfg.validate();
    return cfg;
  } catch (const Error& e) {
    throw Error("ConfigError", e.what());
  }
}

void write_bundle(const std::string& out_dir, const PipelineBundle& b) {
  fs::create_directories(out_dir);
  std::ofstream out(out_dir + "/bundle.json");
  if (!out) throw Error("IoError", "cannot write " + out_dir + "/bundle.json");
  out << b.to_json().dump(2) << "\n";
}

int run_pipeline_cmd(const CommonOpts& o) {
  ExperimentConfig cfg = load_with_overrides(o);
  PipelineBundle b = run_pipeline(cfg);
  write_bundle(cfg.out, b);
  std::cout << "pipeline ok: theta=" << b.theta
            << " eta=" << b.eta.transpose()
            << " terminal_rows=" << b.controller.tube.terminal.h_mat.rows()
            << "\n";
  return kExitOk;
}

int run_montecarlo_cmd(const CommonOpts& o, bool robust) {
  ExperimentConfig cfg = load_with_overrides(o);
  PipelineBundle b = run_pipeline(cfg, robust);
  write_bundle(cfg.out, b);
  auto recs = run_montecarlo(b, cfg.mc.runs, cfg.mc.threads);
  MonteCarloReport rep = aggregate_runs(b, recs);
  write_montecarlo_artifacts(cfg.out, b, recs, rep);
  std::cout << (robust ? "robust baseline" : "montecarlo") << " ok: runs="
            << rep.runs << " infeasible=" << rep.infeasible_count
            << " shift_failures=" << rep.shift_check_failures
            << " min_sat=" << rep.min_sat_rate.transpose()
            << " mean_solve_ms=" << rep.mean_solve_ms << "\n";
  return kExitOk;
}

int run_sensitivity_cmd(const CommonOpts& o) {
  SensitivityConfig cfg;
  try {
    Json j = load_config(o.config);
    if (o.seed_set) j["seed"] = static_cast<double>(o.seed);
    if (!o.out.empty()) j["out"] = o.out;
    cfg = SensitivityConfig::from_json(j);
  } catch (const Error& e) {
    throw Error("ConfigError", e.what());
  } catch (const Json::exception& e) {
    throw Error("ConfigError", e.what());
  }
  SensitivityTable t = run_sensitivity(cfg);
  fs::create_directories(cfg.out);
  write_sensitivity_csv(cfg.out + "/sensitivity.csv", t);
  std::cout << "sensitivity ok: " << t.sample_counts.size() << " x "
            << t.radii.size() << " table written\n";
  return kExitOk;
}

struct CheckThresholds {
  double min_sat = 0.88;
  double max_solve_ms = 50.0;
  double max_terminal_norm = 0.05;
  double max_terminal_margin = 1e-6;
};

int run_report_cmd(const std::string& out_dir, bool check,
                   const CheckThresholds& th) {
  std::ifstream in(out_dir + "/report.json");
  if (!in)
    throw Error("ConfigError", "cannot open " + out_dir + "/report.json");
  Json j = Json::parse(in);
  Vec min_sat = vec_from_json(j.at("min_sat_rate"));
  std::cout << "runs:                " << j.at("runs") << "\n"
            << "infeasible runs:     " << j.at("infeasible_count") << "\n"
            << "shift failures:      " << j.at("shift_check_failures") << "\n"
            << "min sat rate:        " << min_sat.transpose() << "\n"
            << "mean solve ms:       " << j.at("mean_solve_ms") << "\n"
            << "mean terminal norm:  " << j.at("mean_terminal_norm") << "\n"
            << "mean traj @T norm:   " << j.at("mean_traj_terminal_norm") << "\n"
            << "max terminal margin: " << j.at("max_terminal_margin") << "\n";
  if (!check) return kExitOk;

  bool ok = true;
  auto fail = [&](const std::string& what) {
    std::cout << "check failed: " << what << "\n";
    ok = false;
  };
  if (j.at("infeasible_count").get<int>() != 0) fail("infeasible runs");
  if (j.at("shift_check_failures").get<int>() != 0) fail("shifted candidates");
  if (min_sat.minCoeff() < th.min_sat) fail("satisfaction rate");
  if (j.at("mean_solve_ms").get<double>() >= th.max_solve_ms)
    fail("mean solve time");
  if (j.at("mean_traj_terminal_norm").get<double>() >= th.max_terminal_norm)
    fail("terminal norm");
  if (j.at("max_terminal_margin").get<double>() > th.max_terminal_margin)
    fail("terminal reach-set membership");
  std::cout << (ok ? "all checks passed\n" : "checks FAILED\n");
  return ok ? kExitOk : kExitCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"data-driven tube MPC toolkit"};
  app.require_subcommand(1);

  CommonOpts pipe_o, mc_o, sens_o, rob_o;
  auto* pipe = app.add_subcommand("pipeline", "run the offline pipeline");
  add_common(pipe, pipe_o);
  auto* mc = app.add_subcommand("montecarlo", "pipeline + closed-loop runs");
  add_common(mc, mc_o);
  auto* sens = app.add_subcommand("sensitivity", "backoff sensitivity table");
  add_common(sens, sens_o);
  auto* rob = app.add_subcommand("robust-baseline",
                                 "worst-case backoff comparison runs");
  add_common(rob, rob_o);

  std::string report_dir = "out";
  bool check = false;
  CheckThresholds th;
  auto* rep = app.add_subcommand("report", "summarize a run directory");
  rep->add_option("--out", report_dir, "run directory to summarize");
  rep->add_flag("--check", check, "exit nonzero when thresholds are violated");
  rep->add_option("--min-sat", th.min_sat, "minimum satisfaction rate");
  rep->add_option("--max-solve-ms", th.max_solve_ms, "mean solve time bound");
  rep->add_option("--max-terminal-norm", th.max_terminal_norm,
                  "mean terminal norm bound");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (pipe->parsed()) return run_pipeline_cmd(pipe_o);
    if (mc->parsed()) return run_montecarlo_cmd(mc_o, false);
    if (rob->parsed()) return run_montecarlo_cmd(rob_o, true);
    if (sens->parsed()) return run_sensitivity_cmd(sens_o);
    if (rep->parsed()) return run_report_cmd(report_dir, check, th);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == "ConfigError" ? kExitConfig : kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return kExitConfig;
}
