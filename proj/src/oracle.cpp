#include "gdro/oracle.hpp"

#include <cmath>

#include "gdro/reformulate.hpp"

namespace gdro {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Grid make_grid(const GdroModel& m, int per_axis) {
  m.validate();
  if (per_axis < 1) throw Error(ErrorCode::DomainError, "grid needs at least one point per axis");
  const Index p = m.p();
  if (p > 3) throw Error(ErrorCode::DomainError, "grid oracle is limited to p <= 3");
  const VectorXd sd = m.moments.sigma0.matrix().diagonal().cwiseSqrt();

  Grid g;
  g.per_axis = per_axis;
  if (m.space) {
    const VectorXd half = std::sqrt(m.space->radius_sq) * sd;
    g.lo = m.space->center - half;
    g.hi = m.space->center + half;
  } else {
    g.lo = m.moments.mu0 - 10.0 * sd;
    g.hi = m.moments.mu0 + 10.0 * sd;
    g.truncated = true;
  }

  Index total = 1;
  for (Index i = 0; i < p; ++i) total *= per_axis;
  std::vector<int> idx(std::size_t(p), 0);
  for (Index n = 0; n < total; ++n) {
    Index rest = n;
    VectorXd pt(p);
    for (Index i = 0; i < p; ++i) {
      const int k = int(rest % per_axis);
      rest /= per_axis;
      const double f = per_axis == 1 ? 0.5 : double(k) / double(per_axis - 1);
      pt(i) = g.lo(i) + f * (g.hi(i) - g.lo(i));
    }
    if (m.space && m.space->form(pt) > m.space->radius_sq * (1.0 + 1e-12)) continue;
    g.points.push_back(std::move(pt));
  }
  return g;
}

OracleResult worst_case_discrete(const GdroModel& m, const VectorXd& x, const Grid& grid,
                                 const SolverSettings& settings) {
  m.validate();
  const Index p = m.p();
  const Index N = Index(grid.points.size());
  if (N < 1) throw Error(ErrorCode::GridTooCoarse, "empty grid");
  if (x.size() != m.n()) throw Error(ErrorCode::DimensionMismatch, "x has wrong length");
  const MomentInfo& mo = m.moments;
  const bool gdro2 = is_gdro2(m.variant);

  // The weights are the dual multipliers of the program
  //   min t  s.t.  for every j:
  //     t + sqrt(g1) a0 + a^T u_j + Lambda.(g2 S0 - d_j d_j^T) + r (d0 - theta dist_j) >= f_j,
  //   -(a0, a) in SOC, -Lambda PSD, -r >= 0,
  // with d_j = xi_j - mu0 and u_j = L^{-1} d_j; its dual is the grid problem.
  const Index nl = svec_size(p);
  const Index col_t = 0, col_a = 1, col_l = 2 + p, col_r = col_l + nl;
  const Index nvars = col_r + (gdro2 ? 1 : 0);
  const Index row_soc = N, row_psd = N + p + 1, row_d = row_psd + nl;
  const Index nrows = row_d + (gdro2 ? 1 : 0);

  ConicProgram prog;
  prog.c = VectorXd::Zero(nvars);
  prog.c(col_t) = 1.0;
  prog.A = MatrixXd::Zero(nrows, nvars);
  prog.b = VectorXd::Zero(nrows);
  prog.cones = {{ConeKind::Nonnegative, N}, {ConeKind::SecondOrder, p + 1}, {ConeKind::PSD, p}};
  if (gdro2) prog.cones.push_back({ConeKind::Nonnegative, 1});
  prog.var_map = {{"t", col_t, 1}, {"a", col_a, p + 1}, {"Lambda", col_l, nl}};
  if (gdro2) prog.var_map.push_back({"r", col_r, 1});

  const MatrixXd& l = mo.sigma0_sqrt;
  const double sg1 = std::sqrt(mo.gamma1);
  const MatrixXd g2s = mo.gamma2 * mo.sigma0.matrix();
  for (Index j = 0; j < N; ++j) {
    const VectorXd& xi = grid.points[std::size_t(j)];
    const VectorXd d = xi - mo.mu0;
    const VectorXd u = l.triangularView<Eigen::Lower>().solve(d);
    prog.A(j, col_t) = -1.0;
    prog.A(j, col_a) = -sg1;
    prog.A.block(j, col_a + 1, 1, p) = -u.transpose();
    prog.A.block(j, col_l, 1, nl) = -svec(MatrixXd(g2s - d * d.transpose())).transpose();
    if (gdro2) {
      const double dist = m.theta == 0.0 ? 0.0 : ellipsoid_distance(xi, *m.core);
      prog.A(j, col_r) = m.theta * dist - *m.d0;
    }
    prog.b(j) = -(is_gdro1(m.variant) ? penalized_h(m, x, xi) : evaluate_h(m, x, xi));
  }
  for (Index i = 0; i <= p; ++i) prog.A(row_soc + i, col_a + i) = 1.0;
  for (Index i = 0; i < nl; ++i) prog.A(row_psd + i, col_l + i) = 1.0;
  if (gdro2) prog.A(row_d, col_r) = 1.0;

  const Solution sol = solve(prog, settings);
  if (sol.status == SolveStatus::DualInfeasible)
    throw Error(ErrorCode::GridTooCoarse, "no grid distribution satisfies the moment constraints");
  if (sol.status != SolveStatus::Optimal)
    throw Error(ErrorCode::StatusNotOptimal,
                "grid oracle solve ended with " + std::string(to_string(sol.status)));
  OracleResult out;
  out.weights = sol.y.head(N);
  out.value = -prog.b.dot(sol.y);
  return out;
}

DualValue fixed_x_dual_value(const GdroModel& m, const VectorXd& x, const SolverSettings& settings) {
  const ConicProgram prog = pin_decision(reformulate(m), x);
  const Solution sol = solve(prog, settings);
  return {sol.status, sol.obj_primal};
}

}  // namespace gdro
