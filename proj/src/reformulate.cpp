#include "gdro/reformulate.hpp"

#include <cmath>
#include <limits>

#include "gdro/stats.hpp"

namespace gdro {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Layout {
  Index x = -1, lam = -1, q = -1, t = -1, s0 = -1, r = -1, theta = -1;
  std::vector<Index> v, w, zv, zw;
};

// Row i of (Lambda mu) as coefficients on svec(Lambda).
MatrixXd lambda_times(const VectorXd& mu) {
  const Index p = mu.size();
  MatrixXd d = MatrixXd::Zero(p, svec_size(p));
  const double inv_r2 = 1.0 / std::sqrt(2.0);
  for (Index j = 0; j < p; ++j) {
    d(j, svec_index(p, j, j)) = mu(j);
    for (Index i = j + 1; i < p; ++i) {
      const Index idx = svec_index(p, i, j);
      d(i, idx) += mu(j) * inv_r2;
      d(j, idx) += mu(i) * inv_r2;
    }
  }
  return d;
}

// Coefficients of the objective t + Lambda.C + sqrt(gamma1) s0 + q^T mu0 + d0 r.
void objective_terms(const GdroModel& m, const Layout& lay, Index nvars, VectorXd& c) {
  const MomentInfo& mo = m.moments;
  c = VectorXd::Zero(nvars);
  c(lay.t) = 1.0;
  const MatrixXd cm = mo.gamma2 * mo.sigma0.matrix() + mo.mu0 * mo.mu0.transpose();
  c.segment(lay.lam, svec_size(m.p())) = svec(cm);
  c.segment(lay.q, m.p()) = mo.mu0;
  c(lay.s0) = std::sqrt(mo.gamma1);
  if (lay.r >= 0) c(lay.r) = *m.d0;
}

enum class ThetaMode { Fixed, Variable };

ConicProgram compile(const GdroModel& m, ThetaMode mode, double v_target, double epsilon) {
  m.validate();
  const Index n = m.n(), p = m.p();
  const Index K = Index(m.pieces.size());
  const MomentInfo& mo = m.moments;
  const MatrixXd& l = mo.sigma0_sqrt;
  if (l.rows() != p || l.cols() != p)
    throw Error(ErrorCode::SingularCovariance, "moments carry no covariance factor");

  const bool has_v = is_gdro(m.variant);
  const bool has_w = has_bounded_space(m.variant);
  const bool two = has_v && has_w;
  const VectorXd mu_bar = m.core ? m.core->center : (m.space ? m.space->center : mo.mu0);
  const double gv = m.core ? m.core->radius_sq : 0.0;
  const double gw = m.space ? m.space->radius_sq : 0.0;

  ProgramBuilder pb;
  Layout lay;
  lay.x = pb.add_variables("x", n);
  lay.lam = pb.add_variables("Lambda", svec_size(p));
  lay.q = pb.add_variables("q", p);
  lay.t = pb.add_variables("t", 1);
  lay.s0 = pb.add_variables("s0", 1);
  for (Index k = 0; k < K; ++k) {
    const auto kk = std::size_t(k);
    if (has_v) lay.v.push_back(pb.add_variables(piece_name("v", kk), p));
    if (has_w) lay.w.push_back(pb.add_variables(piece_name("w", kk), p));
    if (has_v) lay.zv.push_back(pb.add_variables(piece_name(two ? "z1" : "z", kk), 1));
    if (has_w) lay.zw.push_back(pb.add_variables(piece_name(two ? "z2" : "z", kk), 1));
  }
  if (is_gdro2(m.variant)) lay.r = pb.add_variables("r", 1);
  if (mode == ThetaMode::Variable) lay.theta = pb.add_variables("theta", 1);

  VectorXd obj;
  objective_terms(m, lay, pb.num_vars(), obj);
  if (mode == ThetaMode::Fixed) {
    for (Index j = 0; j < obj.size(); ++j)
      if (obj(j) != 0.0) pb.set_cost(j, obj(j));
  } else {
    pb.set_cost(lay.theta, 1.0);
  }

  // Lambda in S^p_+.
  {
    const Index row = pb.add_cone({ConeKind::PSD, p});
    for (Index i = 0; i < svec_size(p); ++i) pb.add_coef(row + i, lay.lam + i, -1.0);
  }

  // s0 >= ||L^T (q + 2 Lambda mu0)||.
  {
    const Index row = pb.add_cone({ConeKind::SecondOrder, p + 1});
    pb.add_coef(row, lay.s0, -1.0);
    const MatrixXd lt_d = 2.0 * l.transpose() * lambda_times(mo.mu0);
    for (Index i = 0; i < p; ++i) {
      for (Index j = 0; j < p; ++j) pb.add_coef(row + 1 + i, lay.q + j, -l(j, i));
      for (Index idx = 0; idx < lt_d.cols(); ++idx) pb.add_coef(row + 1 + i, lay.lam + idx, -lt_d(i, idx));
    }
  }

  const double inv_r2 = 1.0 / std::sqrt(2.0);
  auto radius_cone = [&](Index vec, Index z, double gamma) {
    const Index row = pb.add_cone({ConeKind::SecondOrder, p + 1});
    pb.add_coef(row, z, -1.0);
    const double sg = std::sqrt(gamma);
    for (Index i = 0; i < p; ++i)
      for (Index j = 0; j < p; ++j) pb.add_coef(row + 1 + i, vec + j, -sg * l(j, i));
  };

  for (Index k = 0; k < K; ++k) {
    const PiecewisePiece& pc = m.pieces[std::size_t(k)];
    const auto kk = std::size_t(k);
    const Index d = p + 1;
    const Index row = pb.add_cone({ConeKind::PSD, d});
    for (Index j = 0; j < p; ++j)
      for (Index i = j; i < p; ++i)
        pb.add_coef(row + svec_index(d, i, j), lay.lam + svec_index(p, i, j), -1.0);
    // off-diagonal column: (1/2)(v + w + q - G x - g), scaled by sqrt(2) in svec
    for (Index j = 0; j < p; ++j) {
      const Index rr = row + svec_index(d, p, j);
      if (has_v) pb.add_coef(rr, lay.v[kk] + j, -inv_r2);
      if (has_w) pb.add_coef(rr, lay.w[kk] + j, -inv_r2);
      pb.add_coef(rr, lay.q + j, -inv_r2);
      for (Index c = 0; c < n; ++c) pb.add_coef(rr, lay.x + c, pc.G(j, c) * inv_r2);
      pb.set_rhs(rr, -pc.g(j) * inv_r2);
    }
    // corner: t - h^T x - c - mu_bar^T (v + w) - z
    const Index rc = row + svec_index(d, p, p);
    pb.add_coef(rc, lay.t, -1.0);
    for (Index c = 0; c < n; ++c) pb.add_coef(rc, lay.x + c, pc.h(c));
    for (Index j = 0; j < p; ++j) {
      if (has_v) pb.add_coef(rc, lay.v[kk] + j, mu_bar(j));
      if (has_w) pb.add_coef(rc, lay.w[kk] + j, mu_bar(j));
    }
    if (has_v) pb.add_coef(rc, lay.zv[kk], 1.0);
    if (has_w) pb.add_coef(rc, lay.zw[kk], 1.0);
    pb.set_rhs(rc, -pc.c);

    if (has_v) radius_cone(lay.v[kk], lay.zv[kk], gv);
    if (has_w) radius_cone(lay.w[kk], lay.zw[kk], gw);
    if (has_v) {
      // ||v_k|| <= theta, r theta, or the theta variable
      const Index rt = pb.add_cone({ConeKind::SecondOrder, p + 1});
      if (mode == ThetaMode::Variable) {
        pb.add_coef(rt, lay.theta, -1.0);
      } else if (lay.r >= 0) {
        pb.add_coef(rt, lay.r, -m.theta);
      } else {
        pb.set_rhs(rt, m.theta);
      }
      for (Index j = 0; j < p; ++j) pb.add_coef(rt + 1 + j, lay.v[kk] + j, -1.0);
    }
  }

  if (lay.r >= 0) {
    const Index row = pb.add_cone({ConeKind::Nonnegative, 1});
    pb.add_coef(row, lay.r, -1.0);
  }

  if (m.X.a_eq.rows() > 0) {
    const Index row = pb.add_cone({ConeKind::Zero, m.X.a_eq.rows()});
    for (Index i = 0; i < m.X.a_eq.rows(); ++i) {
      for (Index c = 0; c < n; ++c) pb.add_coef(row + i, lay.x + c, m.X.a_eq(i, c));
      pb.set_rhs(row + i, m.X.b_eq(i));
    }
  }
  if (m.X.a_ineq.rows() > 0) {
    const Index row = pb.add_cone({ConeKind::Nonnegative, m.X.a_ineq.rows()});
    for (Index i = 0; i < m.X.a_ineq.rows(); ++i) {
      for (Index c = 0; c < n; ++c) pb.add_coef(row + i, lay.x + c, m.X.a_ineq(i, c));
      pb.set_rhs(row + i, m.X.b_ineq(i));
    }
  }

  if (mode == ThetaMode::Variable) {
    const Index row = pb.add_cone({ConeKind::Nonnegative, 2});
    pb.add_coef(row, lay.theta, -1.0);
    for (Index j = 0; j < obj.size(); ++j) pb.add_coef(row + 1, j, obj(j));
    pb.set_rhs(row + 1, v_target + epsilon);
  }
  return pb.build();
}

}  // namespace

ConicProgram reformulate(const GdroModel& m) { return compile(m, ThetaMode::Fixed, 0.0, 0.0); }

ConicProgram build_theta_search(const GdroModel& m, double v_target, double epsilon) {
  if (!is_gdro1(m.variant))
    throw Error(ErrorCode::InvalidModel,
                "theta search as one conic program needs a GDRO1 variant, got " +
                    std::string(to_string(m.variant)));
  if (!(epsilon > 0) || !std::isfinite(v_target))
    throw Error(ErrorCode::InvalidModel, "theta search needs epsilon > 0 and a finite target");
  return compile(m, ThetaMode::Variable, v_target, epsilon);
}

ConicProgram pin_decision(const ConicProgram& prog, const Eigen::VectorXd& x) {
  const VarSpan& xs = prog.span("x");
  if (x.size() != xs.length) throw Error(ErrorCode::DimensionMismatch, "pinned x has wrong length");
  ConicProgram out = prog;
  const Index rows = prog.num_rows(), n = xs.length;
  out.A.conservativeResize(rows + n, Eigen::NoChange);
  out.A.bottomRows(n).setZero();
  out.b.conservativeResize(rows + n);
  for (Index i = 0; i < n; ++i) {
    out.A(rows + i, xs.offset + i) = 1.0;
    out.b(rows + i) = x(i);
  }
  out.cones.push_back({ConeKind::Zero, n});
  return out;
}

ModelSolution recover_solution(const GdroModel& m, const ConicProgram& prog, const Solution& raw) {
  if (raw.status != SolveStatus::Optimal)
    throw Error(ErrorCode::StatusNotOptimal,
                "solver status " + std::string(to_string(raw.status)) + ", no solution to recover");
  const MomentInfo& mo = m.moments;
  ModelSolution s;
  const VectorXd& z = raw.z;
  s.x = prog.extract(z, "x");
  s.Lambda = smat_dense(prog.extract(z, "Lambda"));
  s.q = prog.extract(z, "q");
  s.t = prog.scalar(z, "t");
  s.s0 = prog.scalar(z, "s0");
  const bool two = is_gdro(m.variant) && has_bounded_space(m.variant);
  for (std::size_t k = 0; k < m.pieces.size(); ++k) {
    if (prog.has_span(piece_name("v", k))) s.v.push_back(prog.extract(z, piece_name("v", k)));
    if (prog.has_span(piece_name("w", k))) s.w.push_back(prog.extract(z, piece_name("w", k)));
    if (two) {
      s.z.push_back(prog.scalar(z, piece_name("z1", k)));
      s.z2.push_back(prog.scalar(z, piece_name("z2", k)));
    } else if (prog.has_span(piece_name("z", k))) {
      s.z.push_back(prog.scalar(z, piece_name("z", k)));
    }
  }
  s.r = prog.has_span("r") ? prog.scalar(z, "r") : 0.0;
  s.theta = prog.has_span("theta") ? prog.scalar(z, "theta") : m.theta;

  const double linear = s.t +
                        (s.Lambda.cwiseProduct(mo.gamma2 * mo.sigma0.matrix() +
                                               mo.mu0 * mo.mu0.transpose()))
                            .sum() +
                        s.q.dot(mo.mu0) + (m.d0 ? *m.d0 * s.r : 0.0);
  const double norm = (mo.sigma0_sqrt.transpose() * (s.q + 2.0 * s.Lambda * mo.mu0)).norm();
  s.objective = linear + std::sqrt(mo.gamma1) * s.s0;
  s.objective_check = linear + std::sqrt(mo.gamma1) * norm;
  return s;
}

ModelSolution solve_model(const GdroModel& m, const SolverSettings& settings) {
  const ConicProgram prog = reformulate(m);
  return recover_solution(m, prog, solve(prog, settings));
}

SpotCheck spot_check(const GdroModel& m, const ModelSolution& sol, int count, std::uint64_t seed,
                     double reach) {
  const Index p = m.p();
  const MatrixXd& l = m.moments.sigma0_sqrt;
  const VectorXd center = m.core ? m.core->center : (m.space ? m.space->center : m.moments.mu0);
  const double gref = m.core ? m.core->radius_sq : m.moments.gamma1;
  const double weight = is_gdro2(m.variant) ? sol.r * m.theta : (is_gdro1(m.variant) ? sol.theta : 0.0);

  CounterRng rng(seed, 0x5907);
  SpotCheck out;
  out.max_residual = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < count; ++i) {
    VectorXd u(p);
    for (Index j = 0; j < p; ++j) u(j) = rng.normal();
    u.normalize();
    double rho;
    if (m.space) {
      // every tenth point on the boundary, the rest spread radially
      rho = (i % 10 == 0) ? m.space->radius_sq : m.space->radius_sq * rng.uniform();
    } else {
      rho = gref * std::exp(rng.uniform(std::log(1e-4), std::log(reach)));
    }
    const VectorXd xi = center + std::sqrt(rho) * (l * u);
    double res = evaluate_h(m, sol.x, xi) - xi.dot(sol.Lambda * xi) - sol.q.dot(xi) - sol.t;
    if (weight != 0.0) res -= weight * ellipsoid_distance(xi, *m.core);
    out.max_residual = std::max(out.max_residual, res);
    ++out.samples;
  }
  return out;
}

}  // namespace gdro
