#pragma once

#include <chrono>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ktube/common.hpp"
#include "ktube/geometry.hpp"
#include "ktube/koopman.hpp"

namespace ktube {

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Disturbance specs
// ---------------------------------------------------------------------------

/// Per-coordinate disturbance: zero, uniform(lo, hi) or an affinely mapped
/// Beta draw scale * Beta(alpha, beta) + shift.
struct DisturbanceSpec {
  enum class Kind { Zero, Uniform, BetaAffine };
  Kind kind = Kind::Zero;
  double lo = 0.0, hi = 0.0;                           // Uniform
  double alpha = 1.0, beta = 1.0, scale = 1.0, shift = 0.0;  // BetaAffine

  static DisturbanceSpec zero() { return {}; }
  static DisturbanceSpec uniform(double lo, double hi) {
    DisturbanceSpec d;
    d.kind = Kind::Uniform;
    d.lo = lo;
    d.hi = hi;
    return d;
  }
  static DisturbanceSpec beta_affine(double alpha, double beta, double scale,
                                     double shift) {
    DisturbanceSpec d;
    d.kind = Kind::BetaAffine;
    d.alpha = alpha;
    d.beta = beta;
    d.scale = scale;
    d.shift = shift;
    return d;
  }

  double sample(Rng& rng) const {
    switch (kind) {
      case Kind::Zero:
        return 0.0;
      case Kind::Uniform:
        return std::uniform_real_distribution<double>(lo, hi)(rng);
      case Kind::BetaAffine: {
        // Beta via two Gamma draws (shape method).
        std::gamma_distribution<double> ga(alpha, 1.0), gb(beta, 1.0);
        const double a = ga(rng), b = gb(rng);
        return scale * (a / (a + b)) + shift;
      }
    }
    return 0.0;
  }

  /// Declared support interval [min, max].
  std::pair<double, double> support() const {
    switch (kind) {
      case Kind::Zero:
        return {0.0, 0.0};
      case Kind::Uniform:
        return {lo, hi};
      case Kind::BetaAffine:
        return {std::min(shift, scale + shift), std::max(shift, scale + shift)};
    }
    return {0.0, 0.0};
  }

  Json to_json() const {
    Json j;
    switch (kind) {
      case Kind::Zero:
        j["kind"] = "zero";
        break;
      case Kind::Uniform:
        j["kind"] = "uniform";
        j["lo"] = lo;
        j["hi"] = hi;
        break;
      case Kind::BetaAffine:
        j["kind"] = "beta_affine";
        j["alpha"] = alpha;
        j["beta"] = beta;
        j["scale"] = scale;
        j["shift"] = shift;
        break;
    }
    return j;
  }

  static DisturbanceSpec from_json(const Json& j) {
    const std::string kind = j.at("kind");
    if (kind == "zero") return zero();
    if (kind == "uniform") return uniform(j.at("lo"), j.at("hi"));
    if (kind == "beta_affine")
      return beta_affine(j.at("alpha"), j.at("beta"), j.at("scale"), j.at("shift"));
    throw Error("BadFormat", "unknown disturbance kind " + kind);
  }
};

// ---------------------------------------------------------------------------
// Ground-truth plant
// ---------------------------------------------------------------------------

/// Continuous-time vector field, discretized with RK4 or explicit Euler.
/// Field "cubic_spring": dx1 = x1 (or x2 when mass_spring_corrected),
/// dx2 = -x1^3 - damping*x2 + input_gain*u. Field "linear_decay": dx = -x + Bu
/// with B = [0; input_gain].
struct PlantSpec {
  std::string field = "cubic_spring";
  bool mass_spring_corrected = false;
  double damping = 1.5;
  double input_gain = 0.5;
  double dt = 0.1;
  std::string integrator = "rk4";  // "rk4" | "euler"
  std::vector<DisturbanceSpec> disturbance;  // one per state coordinate

  int state_dim() const { return 2; }
  int input_dim() const { return 1; }

  void validate() const {
    if (dt <= 0) throw Error("BadProblem", "sampling period must be positive");
    if (integrator != "rk4" && integrator != "euler")
      throw Error("BadProblem", "unknown integrator " + integrator);
    if (field != "cubic_spring" && field != "linear_decay")
      throw Error("BadProblem", "unknown vector field " + field);
    if (static_cast<int>(disturbance.size()) != state_dim())
      throw Error("BadProblem", "need one disturbance spec per coordinate");
  }

  Vec vector_field(const Vec& x, const Vec& u) const {
    Vec dx(2);
    if (field == "linear_decay") {
      dx = -x;
      dx[1] += input_gain * u[0];
    } else {
      dx[0] = mass_spring_corrected ? x[1] : x[0];
      dx[1] = -x[0] * x[0] * x[0] - damping * x[1] + input_gain * u[0];
    }
    return dx;
  }

  /// Declared disturbance support as a box (Assumption: bounded support).
  Box disturbance_support() const {
    Vec c(state_dim()), hw(state_dim());
    for (int i = 0; i < state_dim(); ++i) {
      auto [lo, hi] = disturbance[i].support();
      c[i] = 0.5 * (lo + hi);
      hw[i] = 0.5 * (hi - lo);
    }
    return Box(c, hw);
  }

  Json to_json() const {
    Json j;
    j["field"] = field;
    j["mass_spring_corrected"] = mass_spring_corrected;
    j["damping"] = damping;
    j["input_gain"] = input_gain;
    j["dt"] = dt;
    j["integrator"] = integrator;
    Json d = Json::array();
    for (const auto& spec : disturbance) d.push_back(spec.to_json());
    j["disturbance"] = d;
    return j;
  }

  static PlantSpec from_json(const Json& j) {
    PlantSpec s;
    s.field = j.value("field", s.field);
    s.mass_spring_corrected = j.value("mass_spring_corrected", false);
    s.damping = j.value("damping", s.damping);
    s.input_gain = j.value("input_gain", s.input_gain);
    s.dt = j.value("dt", s.dt);
    s.integrator = j.value("integrator", s.integrator);
    for (const auto& d : j.at("disturbance"))
      s.disturbance.push_back(DisturbanceSpec::from_json(d));
    s.validate();
    return s;
  }
};

inline Vec sample_disturbance(const PlantSpec& spec, Rng& rng) {
  Vec w(spec.state_dim());
  for (int i = 0; i < spec.state_dim(); ++i) w[i] = spec.disturbance[i].sample(rng);
  return w;
}

/// One noiseless discretization step x -> f_d(x, u).
inline Vec integrate(const PlantSpec& spec, const Vec& x, const Vec& u) {
  if (!x.allFinite() || !u.allFinite())
    throw Error("NonFinite", "plant step input not finite");
  const double h = spec.dt;
  if (spec.integrator == "euler") return x + h * spec.vector_field(x, u);
  const Vec k1 = spec.vector_field(x, u);
  const Vec k2 = spec.vector_field(x + 0.5 * h * k1, u);
  const Vec k3 = spec.vector_field(x + 0.5 * h * k2, u);
  const Vec k4 = spec.vector_field(x + h * k3, u);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// x+ = f_d(x, u) + w with w sampled per coordinate.
inline Vec step(const PlantSpec& spec, const Vec& x, const Vec& u, Rng& rng) {
  Vec next = integrate(spec, x, u) + sample_disturbance(spec, rng);
  if (!next.allFinite()) throw Error("NonFinite", "plant step diverged");
  return next;
}

// ---------------------------------------------------------------------------
// Data generation
// ---------------------------------------------------------------------------

struct TrainingProtocol {
  int n_traj = 500;
  int traj_len = 100;
  double init_std = 1.5;
  double input_mean = -7.0;
  double input_std = 5.0;
  double safety_bound = 4.0;  // trajectory truncated when |x|_inf leaves this
};

/// Random-excitation rollouts; trajectories are truncated (and the remainder
/// dropped) once the state leaves the safety box.
inline Dataset generate_training_data(const PlantSpec& spec,
                                      const TrainingProtocol& proto,
                                      std::uint64_t seed,
                                      int* truncated_count = nullptr) {
  spec.validate();
  const int n_x = spec.state_dim();
  std::vector<Vec> xs, us, xps;
  int truncated = 0;
  for (int tr = 0; tr < proto.n_traj; ++tr) {
    Rng rng(split_seed(seed, tr));
    std::normal_distribution<double> init(0.0, proto.init_std);
    std::normal_distribution<double> pol(proto.input_mean, proto.input_std);
    Vec x(n_x);
    for (int i = 0; i < n_x; ++i) x[i] = init(rng);
    for (int t = 0; t < proto.traj_len; ++t) {
      Vec u(1);
      u[0] = pol(rng);
      Vec xp = step(spec, x, u, rng);
      if (xp.cwiseAbs().maxCoeff() > proto.safety_bound) {
        ++truncated;
        break;
      }
      xs.push_back(x);
      us.push_back(u);
      xps.push_back(xp);
      x = xp;
    }
  }
  if (truncated_count) *truncated_count = truncated;
  Dataset d;
  d.x = Mat(xs.size(), n_x);
  d.u = Mat(xs.size(), 1);
  d.x_next = Mat(xs.size(), n_x);
  for (size_t i = 0; i < xs.size(); ++i) {
    d.x.row(i) = xs[i].transpose();
    d.u.row(i) = us[i].transpose();
    d.x_next.row(i) = xps[i].transpose();
  }
  return d;
}

/// Zero-input one-step pairs started within ||x|| <= eps_x of the origin.
inline Dataset generate_disturbance_data(const PlantSpec& spec, double eps_x,
                                         int n, std::uint64_t seed) {
  spec.validate();
  const int n_x = spec.state_dim();
  Rng rng(split_seed(seed, 0x9d));
  std::uniform_real_distribution<double> u01(-1.0, 1.0);
  Dataset d;
  d.x = Mat(n, n_x);
  d.u = Mat::Zero(n, 1);
  d.x_next = Mat(n, n_x);
  Vec zero_u = Vec::Zero(1);
  for (int i = 0; i < n; ++i) {
    Vec x(n_x);
    do {
      for (int k = 0; k < n_x; ++k) x[k] = eps_x * u01(rng);
    } while (x.norm() > eps_x);
    d.x.row(i) = x.transpose();
    d.x_next.row(i) = step(spec, x, zero_u, rng).transpose();
  }
  return d;
}

// ---------------------------------------------------------------------------
// Closed-loop records
// ---------------------------------------------------------------------------

struct Trajectory {
  Mat states;        // (T+1) x n_x
  Mat inputs;        // T x n_u
  Mat disturbances;  // T x n_x
  Vec objectives;    // T
  Vec solve_ms;      // T
  int infeasible_at = -1;  // first step the MPC reported infeasible, or -1

  int length() const { return static_cast<int>(inputs.rows()); }
};

}  // namespace ktube
