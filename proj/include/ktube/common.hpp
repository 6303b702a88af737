#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ktube {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Runtime error carrying a short machine-readable code ("Unbounded",
/// "EmptyTube", ...) plus a human message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(code + ": " + what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

/// Central numeric tolerances. Defaults are used everywhere unless a caller
/// overrides a specific field.
struct Tolerances {
  double membership = 1e-9;     // set membership slack
  double set_compare = 1e-7;    // set equality / inclusion comparisons
  double lp_feasibility = 1e-8;
  double lp_pivot = 1e-9;
  double qp_kkt = 1e-7;
  double qp_infeasible = 1e-6;
  double dare = 1e-12;
  double lyapunov = 1e-9;
  double edmd_cond_limit = 1e12;
  double edmd_ridge = 1e-8;
  double rpi_fixpoint = 1e-9;
};

inline const Tolerances& default_tol() {
  static const Tolerances t{};
  return t;
}

inline double spectral_radius(const Mat& m) {
  return m.eigenvalues().cwiseAbs().maxCoeff();
}

/// splitmix64, used to derive independent per-trajectory RNG streams from a
/// single experiment seed.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + (index + 1) * 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace ktube
