#pragma once

#include <cmath>
#include <iostream>

#include "ktube/common.hpp"
#include "ktube/geometry.hpp"
#include "ktube/koopman.hpp"

namespace ktube {

// ---------------------------------------------------------------------------
// Disturbance support estimation
// ---------------------------------------------------------------------------

/// Disturbance samples w_hat_i = x_i^+ collected near the origin under zero
/// input, plus the outer-approximated support box.
struct DisturbanceEstimate {
  Mat samples;      // N_w x n_x
  Box support_box;  // componentwise hull expanded by L_x * eps_x per side
  double epsilon_x = 0.0;
  double lipschitz_lx = 0.0;

  double estimation_error_bound() const { return lipschitz_lx * epsilon_x; }

  Json to_json() const {
    Json j;
    j["samples"] = mat_to_json(samples);
    j["support_center"] = vec_to_json(support_box.center);
    j["support_halfwidth"] = vec_to_json(support_box.halfwidth);
    j["epsilon_x"] = epsilon_x;
    j["lipschitz_lx"] = lipschitz_lx;
    return j;
  }

  static DisturbanceEstimate from_json(const Json& j) {
    DisturbanceEstimate e;
    e.samples = mat_from_json(j.at("samples"));
    e.support_box = Box(vec_from_json(j.at("support_center")),
                        vec_from_json(j.at("support_halfwidth")));
    e.epsilon_x = j.at("epsilon_x");
    e.lipschitz_lx = j.at("lipschitz_lx");
    return e;
  }
};

/// Componentwise hull box of the rows of a sample matrix.
inline Box hull_box(const Mat& samples) {
  if (samples.rows() == 0) throw Error("BadSet", "hull of an empty sample set");
  Vec lo = samples.colwise().minCoeff().transpose();
  Vec hi = samples.colwise().maxCoeff().transpose();
  return Box(0.5 * (lo + hi), 0.5 * (hi - lo));
}

/// The one-step successor states are taken as disturbance samples; the error
/// of that estimate is bounded by L_x * ||x_i||, so the hull is expanded by
/// L_x * eps_x per side to outer-approximate the true support.
inline DisturbanceEstimate estimate_disturbances(const Dataset& d_w,
                                                 double lipschitz_lx,
                                                 double eps_x) {
  for (int i = 0; i < d_w.size(); ++i)
    if (d_w.x.row(i).norm() > eps_x + 1e-12)
      throw Error("SampleOutsideRadius",
                  "estimation sample " + std::to_string(i) +
                      " outside the configured radius");
  DisturbanceEstimate e;
  e.samples = d_w.x_next;
  e.epsilon_x = eps_x;
  e.lipschitz_lx = lipschitz_lx;
  Box hull = hull_box(e.samples);
  e.support_box =
      Box(hull.center,
          hull.halfwidth.array() + lipschitz_lx * eps_x);
  return e;
}

// ---------------------------------------------------------------------------
// Lifted modeling-error sets
// ---------------------------------------------------------------------------

/// Hull of the lifted one-step residuals and its decomposition into a
/// disturbance part D*W_hat and a modeling-error part.
struct ModelErrorSets {
  Box total_hull;   // lifted-space hull of the residuals
  Box model_error;  // total_hull minus the mapped disturbance support
  Mat samples;      // N x n residuals
  bool clamped = false;

  Json to_json() const {
    Json j;
    j["total_center"] = vec_to_json(total_hull.center);
    j["total_halfwidth"] = vec_to_json(total_hull.halfwidth);
    j["model_center"] = vec_to_json(model_error.center);
    j["model_halfwidth"] = vec_to_json(model_error.halfwidth);
    j["clamped"] = clamped;
    return j;
  }
};

/// Residuals w_bar_i = Psi(x_i^+) - (A Psi(x_i) + B u_i); the model-error box
/// is the hull minus the lifted disturbance support. Coordinates where the
/// disturbance dominates are clamped to a zero halfwidth with a warning.
inline ModelErrorSets extract_model_errors(const LiftedModel& model,
                                           const Dataset& data,
                                           const DisturbanceEstimate& est) {
  const int n = model.lifted_dim();
  ModelErrorSets out;
  out.samples = Mat(data.size(), n);
  for (int i = 0; i < data.size(); ++i) {
    Vec s = model.lift(data.x.row(i).transpose());
    Vec sp = model.lift(data.x_next.row(i).transpose());
    out.samples.row(i) =
        (sp - model.a * s - model.b * data.u.row(i).transpose()).transpose();
  }
  out.total_hull = hull_box(out.samples);
  Box lifted_w = linear_map_box(model.d_mat(), est.support_box);
  auto [diff, clamped] = pontryagin_diff_boxes(out.total_hull, lifted_w);
  out.model_error = diff;
  out.clamped = clamped;
  if (clamped)
    std::cerr << "warning: disturbance support exceeds the residual hull in "
                 "some coordinate; model-error halfwidth clamped to zero\n";
  return out;
}

// ---------------------------------------------------------------------------
// Sample-size certificate and ambiguity radius
// ---------------------------------------------------------------------------

struct HoeffdingCert {
  double epsilon_h = 0.0;
  double delta_h = 0.0;
  int required_n = 0;
  int actual_n = 0;

  bool valid() const { return actual_n >= required_n; }
};

inline int hoeffding_required_samples(double eps_h, double delta_h) {
  if (eps_h <= 0.0 || eps_h >= 1.0 || delta_h <= 0.0 || delta_h >= 1.0)
    throw Error("DomainError", "Hoeffding parameters must lie in (0, 1)");
  return static_cast<int>(
      std::ceil(-std::log(delta_h / 2.0) / (2.0 * eps_h * eps_h)));
}

inline HoeffdingCert hoeffding_certificate(double eps_h, double delta_h,
                                           int actual_n) {
  HoeffdingCert c;
  c.epsilon_h = eps_h;
  c.delta_h = delta_h;
  c.required_n = hoeffding_required_samples(eps_h, delta_h);
  c.actual_n = actual_n;
  return c;
}

struct RadiusConfig {
  double configured = 1e-4;
  bool use_formula = false;  // concentration-rate path, needs c1 and c2
  double c1 = 1.0, c2 = 1.0;
  double beta = 0.05;
  int n_samples = 0;
  int dim = 1;
};

/// Ambiguity-ball radius. The default path returns the configured
/// (cross-validated) radius; the formula path evaluates the concentration
/// bound. Both are inflated by the estimation error L_x * eps_x.
inline double wasserstein_radius(const RadiusConfig& cfg, double lx_eps) {
  if (!cfg.use_formula) return cfg.configured + lx_eps;
  if (cfg.n_samples <= 0)
    throw Error("BadProblem", "radius formula needs a sample count");
  const double expo = 1.0 / std::max(cfg.dim, 2);
  const double base =
      std::log(cfg.c1 / cfg.beta) / (cfg.c2 * cfg.n_samples);
  return std::pow(std::max(base, 0.0), expo) + lx_eps;
}

}  // namespace ktube
