#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <thread>
#include <vector>

#include "ktube/config.hpp"
#include "ktube/controller.hpp"
#include "ktube/dro.hpp"
#include "ktube/plant.hpp"
#include "ktube/tubes.hpp"
#include "ktube/uncertainty.hpp"

namespace ktube {

// ---------------------------------------------------------------------------
// Offline pipeline: data -> fit -> uncertainty -> backoffs -> tubes -> gains
// ---------------------------------------------------------------------------

struct PipelineBundle {
  ExperimentConfig cfg;
  LiftedModel model;
  DisturbanceEstimate estimate;
  ModelErrorSets errors;
  HoeffdingCert cert;
  double theta = 0.0;
  Vec eta;
  ControllerConfig controller;
  int truncated_trajectories = 0;
  bool robust_backoff = false;

  Json to_json() const {
    Json j;
    j["seed"] = cfg.seed;
    j["theta"] = theta;
    j["eta"] = vec_to_json(eta);
    j["robust_backoff"] = robust_backoff;
    j["model"] = model.to_json();
    j["estimate"] = estimate.to_json();
    j["errors"] = errors.to_json();
    j["hoeffding"] = {{"epsilon_h", cert.epsilon_h},
                      {"delta_h", cert.delta_h},
                      {"required_n", cert.required_n},
                      {"actual_n", cert.actual_n},
                      {"valid", cert.valid()}};
    j["tube"] = controller.tube.to_json();
    j["k_gain"] = mat_to_json(controller.k_gain);
    j["p"] = mat_to_json(controller.p);
    j["pi"] = mat_to_json(controller.pi);
    j["truncated_trajectories"] = truncated_trajectories;
    return j;
  }
};

namespace detail {

template <typename Fn>
auto stage(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), "[stage " + name + "] " + e.what());
  }
}

}  // namespace detail

/// Runs every offline stage. With robust_backoff the stochastic backoff is
/// replaced by the worst-case support bound per constraint row.
inline PipelineBundle run_pipeline(const ExperimentConfig& cfg,
                                   bool robust_backoff = false) {
  cfg.validate();
  PipelineBundle b;
  b.cfg = cfg;
  b.robust_backoff = robust_backoff;

  Dataset train = detail::stage("training-data", [&] {
    return generate_training_data(cfg.plant, cfg.training, cfg.seed,
                                  &b.truncated_trajectories);
  });

  b.model = detail::stage("fit", [&] {
    Dictionary dict = Dictionary::from_terms(cfg.plant.state_dim(), cfg.dictionary);
    return fit_edmd(dict, train);
  });

  detail::stage("disturbance-estimation", [&] {
    Dataset d_w = generate_disturbance_data(cfg.plant, cfg.estimation.eps_x,
                                            cfg.estimation.samples,
                                            cfg.seed + 1);
    b.estimate = estimate_disturbances(d_w, cfg.estimation.lipschitz,
                                       cfg.estimation.eps_x);
    b.cert = hoeffding_certificate(cfg.estimation.eps_h, cfg.estimation.delta_h,
                                   cfg.estimation.samples);
    return 0;
  });

  detail::stage("model-errors", [&] {
    // restrict the residual hull to the operating region
    const double bound = cfg.estimation.error_state_bound;
    std::vector<int> keep;
    for (int i = 0; i < train.size(); ++i)
      if (train.x.row(i).cwiseAbs().maxCoeff() <= bound &&
          train.x_next.row(i).cwiseAbs().maxCoeff() <= bound)
        keep.push_back(i);
    if (keep.size() < 100)
      throw Error("BadProblem", "too few samples inside the operating region");
    Dataset sub;
    sub.x = Mat(keep.size(), train.x.cols());
    sub.u = Mat(keep.size(), train.u.cols());
    sub.x_next = Mat(keep.size(), train.x.cols());
    for (size_t i = 0; i < keep.size(); ++i) {
      sub.x.row(i) = train.x.row(keep[i]);
      sub.u.row(i) = train.u.row(keep[i]);
      sub.x_next.row(i) = train.x_next.row(keep[i]);
    }
    b.errors = extract_model_errors(b.model, sub, b.estimate);
    return 0;
  });

  detail::stage("backoff", [&] {
    const double lx_eps = cfg.dro.inflate_radius
                              ? cfg.estimation.lipschitz * cfg.estimation.eps_x
                              : 0.0;
    RadiusConfig rc;
    rc.configured = cfg.dro.radius;
    b.theta = wasserstein_radius(rc, lx_eps);
    const int n_f = static_cast<int>(cfg.constraints.f_rows.rows());
    if (robust_backoff) {
      b.eta = Vec(n_f);
      for (int l = 0; l < n_f; ++l)
        b.eta[l] = support(b.estimate.support_box,
                           Vec(cfg.constraints.f_rows.row(l).transpose()));
    } else {
      b.eta = backoff_vector(cfg.constraints.f_rows, cfg.dro.alpha, b.estimate,
                             b.theta);
    }
    return 0;
  });

  detail::stage("synthesis", [&] {
    Mat q = Mat(b.model.lifted_dim(), b.model.lifted_dim());
    if (cfg.q_diag.size() == b.model.lifted_dim())
      q = cfg.q_diag.asDiagonal();
    else if (cfg.q_diag.size() == cfg.plant.state_dim())
      q = Mat(Vec(cfg.q_diag).asDiagonal());
    else
      throw Error("BadProblem", "state weight dimension mismatch");
    b.controller = synthesize(b.model, q, Mat::Constant(1, 1, cfg.r_weight));
    return 0;
  });

  detail::stage("tubes", [&] {
    const Mat phi = b.controller.phi();
    const Mat d_mat = b.model.d_mat();
    TubeSet tube;
    tube.eta = b.eta;
    tube.state = build_state_tube(cfg.constraints.f_rows, cfg.constraints.f_bounds,
                                  b.eta, phi, d_mat, b.estimate.support_box,
                                  b.errors.model_error, cfg.horizon,
                                  &tube.cumulative);
    tube.input = build_input_tube(cfg.constraints.g_rows, cfg.constraints.g_bounds,
                                  b.controller.k_gain, phi, d_mat,
                                  b.estimate.support_box, b.errors.model_error,
                                  cfg.horizon);

    // terminal bound: last state stage plus input admissibility of u = K s
    Box total_err = minkowski_sum_boxes(
        b.errors.model_error, linear_map_box(d_mat, b.estimate.support_box));
    Mat phi_n = Mat::Identity(phi.rows(), phi.cols());
    for (int i = 0; i < cfg.horizon; ++i) phi_n *= phi;
    Zonotope w_term = Zonotope::from_box(total_err).mapped(phi_n);

    Mat phi_n1 = Mat::Identity(phi.rows(), phi.cols());
    for (int i = 0; i + 1 < cfg.horizon; ++i) phi_n1 *= phi;
    const HPolytope& last_state = tube.state.back();
    const HPolytope& last_input = tube.input.back();
    Mat gk = last_input.h_mat * b.controller.k_gain;
    Vec gk_b = last_input.h_vec;
    Zonotope prop_err = Zonotope::from_box(total_err)
                            .mapped(b.controller.k_gain * phi_n1);
    for (int l = 0; l < gk_b.size(); ++l)
      gk_b[l] -= prop_err.support(Vec(last_input.h_mat.row(l).transpose()));
    Mat bound_a(last_state.h_mat.rows() + gk.rows(), phi.cols());
    bound_a << last_state.h_mat, gk;
    Vec bound_b(last_state.h_vec.size() + gk_b.size());
    bound_b << last_state.h_vec, gk_b;

    tube.terminal = terminal_set(HPolytope(bound_a, bound_b), phi, w_term);
    b.controller.tube = std::move(tube);
    b.controller.horizon = cfg.horizon;
    b.controller.validate();
    return 0;
  });

  return b;
}

// ---------------------------------------------------------------------------
// Closed-loop Monte-Carlo evaluation
// ---------------------------------------------------------------------------

struct RunRecord {
  Mat states;       // (T+1) x n_x, NaN past an infeasibility
  Mat inputs;       // T x n_u
  Vec solve_ms;     // T
  Vec objectives;   // T
  int infeasible_at = -1;
  int shift_violations = 0;
};

struct MonteCarloReport {
  Mat sat_rate;      // (T+1) x n_F satisfaction rate of F x <= f per step
  Mat mean_traj;     // (T+1) x n_x
  Mat q90_traj;      // (T+1) x n_x upper 90th percentile per coordinate
  Mat terminal_states;  // runs x n_x
  int runs = 0;
  int infeasible_count = 0;
  int shift_check_failures = 0;
  double mean_solve_ms = 0.0;
  double std_solve_ms = 0.0;
  double mean_terminal_norm = 0.0;       // average of per-run ||x_T||
  double mean_traj_terminal_norm = 0.0;  // ||mean trajectory at T||
  double max_terminal_margin = 0.0;  // reach-set membership residual
  Vec min_sat_rate;  // per F row, over all steps

  Json to_json() const {
    Json j;
    j["runs"] = runs;
    j["infeasible_count"] = infeasible_count;
    j["shift_check_failures"] = shift_check_failures;
    j["mean_solve_ms"] = mean_solve_ms;
    j["std_solve_ms"] = std_solve_ms;
    j["mean_terminal_norm"] = mean_terminal_norm;
    j["mean_traj_terminal_norm"] = mean_traj_terminal_norm;
    j["max_terminal_margin"] = max_terminal_margin;
    j["min_sat_rate"] = vec_to_json(min_sat_rate);
    return j;
  }
};

/// Simulates one closed-loop trajectory and checks the shifted candidate
/// sequence at every consecutive step.
inline RunRecord simulate_run(const PipelineBundle& b, const Vec& x0, int steps,
                              std::uint64_t run_seed) {
  const ControllerConfig& cc = b.controller;
  const int n_x = b.cfg.plant.state_dim();
  RunRecord rec;
  rec.states = Mat::Constant(steps + 1, n_x,
                             std::numeric_limits<double>::quiet_NaN());
  rec.inputs = Mat::Zero(steps, 1);
  rec.solve_ms = Vec::Zero(steps);
  rec.objectives = Vec::Zero(steps);

  Rng rng(run_seed);
  Vec x = x0;
  rec.states.row(0) = x.transpose();
  for (int k = 0; k < steps; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    Vec u;
    MpcSolution sol;
    try {
      std::tie(u, sol) = control_step(cc, x);
    } catch (const Error&) {
      rec.infeasible_at = k;
      break;
    }
    const auto t1 = std::chrono::steady_clock::now();
    rec.solve_ms[k] =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
    rec.inputs.row(k) = u.transpose();
    rec.objectives[k] = sol.objective;

    x = step(b.cfg.plant, x, u, rng);
    rec.states.row(k + 1) = x.transpose();

    Mat shifted = Mat::Zero(cc.horizon, sol.c_star.cols());
    shifted.topRows(cc.horizon - 1) = sol.c_star.bottomRows(cc.horizon - 1);
    if (!candidate_feasible(cc, cc.model.lift(x), shifted))
      ++rec.shift_violations;
  }
  return rec;
}

inline MonteCarloReport aggregate_runs(const PipelineBundle& b,
                                       const std::vector<RunRecord>& recs) {
  const ExperimentConfig& cfg = b.cfg;
  const int steps = cfg.mc.steps;
  const int n_x = cfg.plant.state_dim();
  const int n_f = static_cast<int>(cfg.constraints.f_rows.rows());
  MonteCarloReport rep;
  rep.runs = static_cast<int>(recs.size());
  rep.sat_rate = Mat::Zero(steps + 1, n_f);
  rep.mean_traj = Mat::Zero(steps + 1, n_x);
  rep.q90_traj = Mat::Zero(steps + 1, n_x);
  rep.terminal_states = Mat::Zero(recs.size(), n_x);

  double ms_sum = 0.0, ms_sq = 0.0;
  int ms_n = 0;
  for (int k = 0; k <= steps; ++k) {
    int valid = 0;
    std::vector<std::vector<double>> coords(n_x);
    for (const auto& r : recs) {
      Vec x = r.states.row(k).transpose();
      if (!x.allFinite()) continue;
      ++valid;
      rep.mean_traj.row(k) += x.transpose();
      for (int c = 0; c < n_x; ++c) coords[c].push_back(x[c]);
      for (int l = 0; l < n_f; ++l)
        if (cfg.constraints.f_rows.row(l).dot(x) <= cfg.constraints.f_bounds[l])
          rep.sat_rate(k, l) += 1.0;
    }
    if (valid > 0) {
      rep.mean_traj.row(k) /= valid;
      rep.sat_rate.row(k) /= valid;
      for (int c = 0; c < n_x; ++c) {
        std::sort(coords[c].begin(), coords[c].end());
        const size_t idx = static_cast<size_t>(0.9 * (coords[c].size() - 1));
        rep.q90_traj(k, c) = coords[c][idx];
      }
    }
  }
  rep.min_sat_rate = Vec::Constant(n_f, 1.0);
  for (int k = 0; k <= steps; ++k)
    for (int l = 0; l < n_f; ++l)
      rep.min_sat_rate[l] = std::min(rep.min_sat_rate[l], rep.sat_rate(k, l));

  double norm_sum = 0.0;
  for (size_t i = 0; i < recs.size(); ++i) {
    const auto& r = recs[i];
    if (r.infeasible_at >= 0) ++rep.infeasible_count;
    rep.shift_check_failures += r.shift_violations;
    const int run_steps = r.infeasible_at >= 0 ? r.infeasible_at : steps;
    for (int k = 0; k < run_steps; ++k) {
      ms_sum += r.solve_ms[k];
      ms_sq += r.solve_ms[k] * r.solve_ms[k];
      ++ms_n;
    }
    Vec xt = r.states.row(steps).transpose();
    rep.terminal_states.row(i) = xt.transpose();
    if (xt.allFinite()) norm_sum += xt.norm();
  }
  if (ms_n > 0) {
    rep.mean_solve_ms = ms_sum / ms_n;
    rep.std_solve_ms = std::sqrt(std::max(0.0, ms_sq / ms_n -
                                                   rep.mean_solve_ms *
                                                       rep.mean_solve_ms));
  }
  if (!recs.empty()) rep.mean_terminal_norm = norm_sum / recs.size();
  rep.mean_traj_terminal_norm = rep.mean_traj.row(steps).norm();

  // terminal states against the projected asymptotic error reach set
  const Mat phi = b.controller.phi();
  Box total_err = minkowski_sum_boxes(
      b.errors.model_error,
      linear_map_box(b.model.d_mat(), b.estimate.support_box));
  auto [center, gens] = reach_generators(phi, total_err);
  Mat c_mat = b.model.c_mat();
  Vec c_center = c_mat * center;
  Mat c_gens = c_mat * gens;
  for (size_t i = 0; i < recs.size(); ++i) {
    Vec xt = rep.terminal_states.row(i).transpose();
    if (!xt.allFinite()) continue;
    rep.max_terminal_margin =
        std::max(rep.max_terminal_margin,
                 zonotope_membership_margin(xt, c_center, c_gens));
  }
  return rep;
}

inline std::vector<RunRecord> run_montecarlo(const PipelineBundle& b, int runs,
                                             int threads) {
  std::vector<RunRecord> recs(runs);
  const std::uint64_t base = split_seed(b.cfg.seed, 0x6d63);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int r = next.fetch_add(1); r < runs; r = next.fetch_add(1))
      recs[r] = simulate_run(b, b.cfg.mc.x0, b.cfg.mc.steps,
                             split_seed(base, r));
  };
  std::vector<std::thread> pool;
  const int n_threads = std::max(1, std::min(threads, runs));
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return recs;
}

// ---------------------------------------------------------------------------
// Artifact output
// ---------------------------------------------------------------------------

inline void write_trajectories_csv(const std::string& path,
                                   const std::vector<RunRecord>& recs) {
  int rows = 0;
  for (const auto& r : recs)
    for (int k = 0; k < r.states.rows(); ++k)
      if (r.states.row(k).allFinite()) ++rows;
  const int n_x = static_cast<int>(recs.front().states.cols());
  std::vector<std::string> header = {"run", "step"};
  for (int c = 0; c < n_x; ++c) header.push_back("x" + std::to_string(c + 1));
  header.push_back("u1");
  header.push_back("solve_ms");
  header.push_back("objective");
  Mat data(rows, header.size());
  int row = 0;
  for (size_t i = 0; i < recs.size(); ++i) {
    const auto& r = recs[i];
    for (int k = 0; k < r.states.rows(); ++k) {
      if (!r.states.row(k).allFinite()) continue;
      data(row, 0) = static_cast<double>(i);
      data(row, 1) = k;
      data.row(row).segment(2, n_x) = r.states.row(k);
      data(row, 2 + n_x) = k < r.inputs.rows() ? r.inputs(k, 0) : 0.0;
      data(row, 3 + n_x) = k < r.solve_ms.size() ? r.solve_ms[k] : 0.0;
      data(row, 4 + n_x) = k < r.objectives.size() ? r.objectives[k] : 0.0;
      ++row;
    }
  }
  write_csv(path, header, data);
}

inline void write_summary_csv(const std::string& path,
                              const MonteCarloReport& rep) {
  const int n_x = static_cast<int>(rep.mean_traj.cols());
  const int n_f = static_cast<int>(rep.sat_rate.cols());
  std::vector<std::string> header = {"step"};
  for (int c = 0; c < n_x; ++c) header.push_back("mean_x" + std::to_string(c + 1));
  for (int c = 0; c < n_x; ++c) header.push_back("q90_x" + std::to_string(c + 1));
  for (int l = 0; l < n_f; ++l) header.push_back("sat_rate_" + std::to_string(l + 1));
  Mat data(rep.mean_traj.rows(), header.size());
  for (int k = 0; k < rep.mean_traj.rows(); ++k) {
    data(k, 0) = k;
    data.row(k).segment(1, n_x) = rep.mean_traj.row(k);
    data.row(k).segment(1 + n_x, n_x) = rep.q90_traj.row(k);
    data.row(k).segment(1 + 2 * n_x, n_f) = rep.sat_rate.row(k);
  }
  write_csv(path, header, data);
}

inline void write_montecarlo_artifacts(const std::string& out_dir,
                                       const PipelineBundle& b,
                                       const std::vector<RunRecord>& recs,
                                       const MonteCarloReport& rep) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  write_trajectories_csv(out_dir + "/trajectories.csv", recs);
  write_summary_csv(out_dir + "/summary.csv", rep);
  {
    Json j = rep.to_json();
    j["eta"] = vec_to_json(b.eta);
    j["theta"] = b.theta;
    j["robust_backoff"] = b.robust_backoff;
    j["seed"] = b.cfg.seed;
    std::ofstream out(out_dir + "/report.json");
    out << j.dump(2) << "\n";
  }
  // constraint plot over the monitored coordinate (first F row)
  const int n_f = static_cast<int>(b.cfg.constraints.f_rows.rows());
  for (int c = 0; c < rep.mean_traj.cols(); ++c) {
    std::vector<SvgSeries> series;
    SvgSeries mean{"mean", "#2a7d2a", {}};
    SvgSeries q90{"q90", "#2a4d9d", {}};
    for (int k = 0; k < rep.mean_traj.rows(); ++k) {
      mean.y.push_back(rep.mean_traj(k, c));
      q90.y.push_back(rep.q90_traj(k, c));
    }
    series.push_back(mean);
    series.push_back(q90);
    std::vector<double> refs;
    for (int l = 0; l < n_f; ++l) {
      Vec row = b.cfg.constraints.f_rows.row(l).transpose();
      if (row[c] == 1.0 && row.lpNorm<1>() == 1.0)
        refs.push_back(b.cfg.constraints.f_bounds[l]);
    }
    write_svg_chart(out_dir + "/x" + std::to_string(c + 1) + ".svg",
                    "x" + std::to_string(c + 1) + " over time", series, refs);
  }
}

// ---------------------------------------------------------------------------
// Backoff sensitivity table
// ---------------------------------------------------------------------------

struct SensitivityConfig {
  std::vector<int> sample_counts = {5, 10, 100, 500, 1000};
  std::vector<double> radii = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7};
  DisturbanceSpec distribution = DisturbanceSpec::uniform(-0.1, 0.1);
  double alpha = 0.1;
  std::uint64_t seed = 1;
  std::string out = "out";

  static SensitivityConfig from_json(const Json& j) {
    SensitivityConfig c;
    const Json& s = j.contains("sensitivity") ? j.at("sensitivity") : j;
    if (s.contains("samples")) {
      c.sample_counts.clear();
      for (const auto& v : s.at("samples"))
        c.sample_counts.push_back(static_cast<int>(v.get<double>()));
    }
    if (s.contains("radii")) {
      c.radii.clear();
      for (const auto& v : s.at("radii")) c.radii.push_back(v.get<double>());
    }
    if (s.contains("distribution"))
      c.distribution =
          detail::parse_disturbance(s.at("distribution").get<std::string>());
    c.alpha = s.value("alpha", c.alpha);
    c.seed = static_cast<std::uint64_t>(j.value("seed", 1.0));
    c.out = j.value("out", c.out);
    return c;
  }
};

struct SensitivityTable {
  std::vector<int> sample_counts;
  std::vector<double> radii;
  Mat eta;  // rows = sample counts, cols = radii
};

/// One backoff per (sample count, radius) cell; each row draws a fresh sample
/// set that is shared across the radius columns so that column differences
/// isolate the radius effect.
inline SensitivityTable run_sensitivity(const SensitivityConfig& cfg) {
  SensitivityTable t;
  t.sample_counts = cfg.sample_counts;
  t.radii = cfg.radii;
  t.eta = Mat::Zero(cfg.sample_counts.size(), cfg.radii.size());
  auto [lo, hi] = cfg.distribution.support();
  Box box(Vec::Constant(1, 0.5 * (lo + hi)), Vec::Constant(1, 0.5 * (hi - lo)));
  for (size_t i = 0; i < cfg.sample_counts.size(); ++i) {
    Rng rng(split_seed(cfg.seed, i));
    Mat samples(cfg.sample_counts[i], 1);
    for (int k = 0; k < cfg.sample_counts[i]; ++k)
      samples(k, 0) = cfg.distribution.sample(rng);
    for (size_t j = 0; j < cfg.radii.size(); ++j) {
      DroInstance inst = DroInstance::from_box(
          Vec::Constant(1, 1.0), samples, box, cfg.alpha, cfg.radii[j]);
      t.eta(i, j) = compute_backoff(inst).eta;
    }
  }
  return t;
}

inline void write_sensitivity_csv(const std::string& path,
                                  const SensitivityTable& t) {
  std::vector<std::string> header = {"samples"};
  for (double r : t.radii) {
    std::ostringstream os;
    os << r;
    header.push_back(os.str());
  }
  Mat data(t.sample_counts.size(), header.size());
  for (size_t i = 0; i < t.sample_counts.size(); ++i) {
    data(i, 0) = t.sample_counts[i];
    for (size_t j = 0; j < t.radii.size(); ++j) data(i, j + 1) = t.eta(i, j);
  }
  write_csv(path, header, data);
}

}  // namespace ktube
