#ifndef GDRO_SOLVER_HPP
#define GDRO_SOLVER_HPP

#include <Eigen/Dense>

#include <functional>
#include <string_view>

#include "gdro/conic.hpp"

namespace gdro {

struct IterationLog {
  int iter = 0;
  double mu = 0;
  double gap = 0;
  double pres = 0;
  double dres = 0;
};

struct SolverSettings {
  int max_iters = 200;
  double tol_gap = 1e-8;
  double tol_feas = 1e-8;
  double step_fraction = 0.99;
  /// Optional per-iteration sink.
  std::function<void(const IterationLog&)> log;

  void validate() const;
};

enum class SolveStatus { Optimal, PrimalInfeasible, DualInfeasible, IterLimit, NumericalFailure };

std::string_view to_string(SolveStatus s);

struct Residuals {
  double primal = 0;  // ||A z + s - b|| / (1 + ||b||)
  double dual = 0;    // ||A^T y + c|| / (1 + ||c||)
  double gap = 0;     // |c^T z + b^T y| / (1 + |c^T z|)
};

/// Primal (z, s) and dual y for
///   min c^T z  s.t.  A z + s = b, s in K      (primal)
///   max -b^T y s.t.  A^T y + c = 0, y in K*   (dual)
/// PrimalInfeasible: y is a Farkas certificate normalized to b^T y = -1.
/// DualInfeasible: (z, s) is a ray with c^T z = -1, A z + s = 0.
struct Solution {
  SolveStatus status = SolveStatus::NumericalFailure;
  Eigen::VectorXd z;
  Eigen::VectorXd s;
  Eigen::VectorXd y;
  double obj_primal = 0;
  double obj_dual = 0;
  Residuals residuals;
  int iterations = 0;
};

/// Homogeneous self-dual interior-point method with Nesterov-Todd scaling
/// and Mehrotra predictor-corrector steps.
Solution solve(const ConicProgram& prog, const SolverSettings& settings = {});

struct CertificateReport {
  double primal_res = 0;
  double dual_res = 0;
  double gap_res = 0;
  /// Smallest cone-membership margin of s and y (negative means outside).
  double primal_cone_margin = 0;
  double dual_cone_margin = 0;
  /// ||A^T y|| / |b^T y| for a primal infeasibility certificate.
  double farkas_primal = 0;
  /// ||A z + s|| / |c^T z| for a dual infeasibility certificate.
  double farkas_dual = 0;
};

/// Recomputes residuals in extended precision.
CertificateReport check_certificate(const ConicProgram& prog, const Solution& sol);

/// Per-cone membership margin: min s_i, s_0 - ||s_1||, lambda_min, or
/// -max|s_i| for the zero cone. `dual` treats the zero cone as free.
double cone_margin(const ConicProgram& prog, const Eigen::VectorXd& v, bool dual);

}  // namespace gdro

#endif  // GDRO_SOLVER_HPP
