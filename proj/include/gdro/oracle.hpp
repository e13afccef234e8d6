#ifndef GDRO_ORACLE_HPP
#define GDRO_ORACLE_HPP

// Discretized worst-case expectation over distributions supported on a
// grid. Any grid distribution meeting the moment constraints is feasible
// for the inner sup, so the value lower-bounds the reformulation at the
// same x.

#include <Eigen/Dense>

#include <vector>

#include "gdro/model.hpp"
#include "gdro/solver.hpp"

namespace gdro {

struct Grid {
  std::vector<Eigen::VectorXd> points;
  Eigen::VectorXd lo, hi;  // bounding box that was gridded
  int per_axis = 0;
  /// True when the sample space is R^p and the box is a truncation of it.
  bool truncated = false;
};

/// Tensor grid with `per_axis` points per coordinate over the bounding box of
/// the sample space (mu0 +- 10 sqrt(diag sigma0) for R^p), keeping only points
/// inside the space. Grids with per_axis = 10k + 1 on the same box are nested.
Grid make_grid(const GdroModel& m, int per_axis);

struct OracleResult {
  double value = 0;
  Eigen::VectorXd weights;  // one per grid point
};

/// max sum_j w_j f_j over grid distributions w meeting the mean and covariance
/// constraints (and the expected-distance budget for GDRO2). f_j is
/// penalized_h for GDRO1 and evaluate_h otherwise. Throws GridTooCoarse when
/// no grid distribution is feasible, StatusNotOptimal on solver failure.
OracleResult worst_case_discrete(const GdroModel& m, const Eigen::VectorXd& x, const Grid& grid,
                                 const SolverSettings& settings = {});

struct DualValue {
  SolveStatus status = SolveStatus::NumericalFailure;
  double value = 0;
};

/// Optimum of the reformulation with x pinned by Zero rows.
DualValue fixed_x_dual_value(const GdroModel& m, const Eigen::VectorXd& x,
                             const SolverSettings& settings = {});

}  // namespace gdro

#endif  // GDRO_ORACLE_HPP
