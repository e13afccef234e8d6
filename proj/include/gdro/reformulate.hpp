#ifndef GDRO_REFORMULATE_HPP
#define GDRO_REFORMULATE_HPP

// Compiles a GdroModel into a ConicProgram. Variables, in order:
//   x (n), Lambda (svec, p(p+1)/2), q (p), t, s0,
//   then per piece k (1-based names):
//     DRO1     -
//     DRO2     w_k, z_k
//     GDRO*.1  v_k, z_k
//     GDRO*.2  v_k, w_k, z1_k, z2_k
//   then r (GDRO2 only) and theta (theta-search only).
// Cones, in order: Lambda PSD(p); objective-norm SOC(p+1); per piece the
// PSD(p+1) block followed by its SOCs; r >= 0; X rows; theta-search rows.

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "gdro/conic.hpp"
#include "gdro/model.hpp"
#include "gdro/solver.hpp"

namespace gdro {

ConicProgram reformulate(const GdroModel& m);

/// Minimum theta such that the model's objective stays within
/// v_target + epsilon. theta becomes a variable; only GDRO1 variants keep
/// this a single conic program (GDRO2 would need r * theta).
ConicProgram build_theta_search(const GdroModel& m, double v_target, double epsilon);

/// Appends Zero rows fixing x to the given point.
ConicProgram pin_decision(const ConicProgram& prog, const Eigen::VectorXd& x);

inline std::string piece_name(const char* base, std::size_t k) {
  return std::string(base) + "_" + std::to_string(k + 1);
}

struct ModelSolution {
  Eigen::VectorXd x;
  Eigen::MatrixXd Lambda;
  Eigen::VectorXd q;
  double t = 0;
  double s0 = 0;
  std::vector<Eigen::VectorXd> v, w;
  std::vector<double> z, z2;  // z holds z_k or z1_k
  double r = 0;
  double theta = 0;
  /// Solver objective c^T z.
  double objective = 0;
  /// Objective re-evaluated from the named parts with the exact norm term.
  double objective_check = 0;
};

/// Throws StatusNotOptimal unless raw.status is Optimal.
ModelSolution recover_solution(const GdroModel& m, const ConicProgram& prog, const Solution& raw);

/// Solves reformulate(m) and recovers the named parts.
ModelSolution solve_model(const GdroModel& m, const SolverSettings& settings = {});

struct SpotCheck {
  double max_residual = 0;
  int samples = 0;
};

/// Samples xi in the sample space (Mahalanobis shells around mu_bar, out to
/// `reach` times the core radius when the space is R^p) and evaluates
///   h(x, xi) - xi^T Lambda xi - q^T xi - t - r theta dist(xi, core),
/// which the reformulation requires to be <= 0 (r = 1 for GDRO1, theta = 0 for DRO).
SpotCheck spot_check(const GdroModel& m, const ModelSolution& sol, int count, std::uint64_t seed,
                     double reach = 100.0);

}  // namespace gdro

#endif  // GDRO_REFORMULATE_HPP
