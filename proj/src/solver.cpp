#include "gdro/solver.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "gdro/numerics.hpp"

namespace gdro {

void SolverSettings::validate() const {
  if (max_iters < 1) throw Error(ErrorCode::DomainError, "max_iters must be >= 1");
  if (!(tol_gap > 0) || !(tol_feas > 0))
    throw Error(ErrorCode::DomainError, "solver tolerances must be positive");
  if (!(step_fraction > 0 && step_fraction < 1))
    throw Error(ErrorCode::DomainError, "step_fraction must lie in (0,1)");
}

std::string_view to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::PrimalInfeasible: return "PrimalInfeasible";
    case SolveStatus::DualInfeasible: return "DualInfeasible";
    case SolveStatus::IterLimit: return "IterLimit";
    case SolveStatus::NumericalFailure: return "NumericalFailure";
  }
  return "NumericalFailure";
}

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kInf = std::numeric_limits<double>::infinity();

// A non-zero cone inside the stacked inequality space.
struct Block {
  ConeKind kind;
  Index off;
  Index len;
  Index dim;  // matrix dimension for PSD
};

// Nesterov-Todd scaling of one block: W z = W^{-T} s = lambda.
struct BlockScaling {
  VectorXd w;       // Nonnegative: W = diag(w)
  double beta = 1;  // SecondOrder: W = beta (2 v v^T - J)
  VectorXd v;
  MatrixXd r;       // PSD: W(U) = R^T U R
  MatrixXd rinv;
  VectorXd lam;     // scaled point; PSD stores eigenvalues of the diagonal lambda
};

using Scaling = std::vector<BlockScaling>;

// ---- per-block linear algebra -------------------------------------------------

VectorXd soc_w(const BlockScaling& sc, const VectorXd& u) {
  VectorXd out = 2.0 * sc.v.dot(u) * sc.v;
  out(0) -= u(0);
  out.tail(u.size() - 1) += u.tail(u.size() - 1);
  return sc.beta * out;
}

VectorXd soc_winv(const BlockScaling& sc, const VectorXd& u) {
  VectorXd jv = sc.v;
  jv.tail(jv.size() - 1) *= -1.0;
  VectorXd out = 2.0 * jv.dot(u) * jv;
  out(0) -= u(0);
  out.tail(u.size() - 1) += u.tail(u.size() - 1);
  return out / sc.beta;
}

enum class Op { W, Wt, Winv, Wtinv };

VectorXd apply_block(const Block& blk, const BlockScaling& sc, Op op, const VectorXd& u) {
  switch (blk.kind) {
    case ConeKind::Nonnegative:
      return (op == Op::W || op == Op::Wt) ? VectorXd(sc.w.cwiseProduct(u))
                                           : VectorXd(u.cwiseQuotient(sc.w));
    case ConeKind::SecondOrder:
      return (op == Op::W || op == Op::Wt) ? soc_w(sc, u) : soc_winv(sc, u);
    case ConeKind::PSD: {
      const MatrixXd m = smat_dense(u);
      switch (op) {
        case Op::W: return svec(MatrixXd(sc.r.transpose() * m * sc.r));
        case Op::Wt: return svec(MatrixXd(sc.r * m * sc.r.transpose()));
        case Op::Winv: return svec(MatrixXd(sc.rinv.transpose() * m * sc.rinv));
        case Op::Wtinv: return svec(MatrixXd(sc.rinv * m * sc.rinv.transpose()));
      }
      break;
    }
    case ConeKind::Zero: break;
  }
  return u;
}

VectorXd apply(const std::vector<Block>& blocks, const Scaling& sc, Op op, const VectorXd& u) {
  VectorXd out(u.size());
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const Block& b = blocks[k];
    out.segment(b.off, b.len) = apply_block(b, sc[k], op, u.segment(b.off, b.len));
  }
  return out;
}

VectorXd unit(const std::vector<Block>& blocks, Index m) {
  VectorXd e = VectorXd::Zero(m);
  for (const auto& b : blocks) {
    switch (b.kind) {
      case ConeKind::Nonnegative: e.segment(b.off, b.len).setOnes(); break;
      case ConeKind::SecondOrder: e(b.off) = 1.0; break;
      case ConeKind::PSD:
        for (Index j = 0; j < b.dim; ++j) e(b.off + svec_index(b.dim, j, j)) = 1.0;
        break;
      case ConeKind::Zero: break;
    }
  }
  return e;
}

// Jordan product a o b.
VectorXd jordan(const std::vector<Block>& blocks, const VectorXd& a, const VectorXd& b) {
  VectorXd out(a.size());
  for (const auto& blk : blocks) {
    const auto x = a.segment(blk.off, blk.len);
    const auto y = b.segment(blk.off, blk.len);
    auto o = out.segment(blk.off, blk.len);
    switch (blk.kind) {
      case ConeKind::Nonnegative: o = x.cwiseProduct(y); break;
      case ConeKind::SecondOrder:
        o(0) = x.dot(y);
        o.tail(blk.len - 1) = x(0) * y.tail(blk.len - 1) + y(0) * x.tail(blk.len - 1);
        break;
      case ConeKind::PSD: {
        const MatrixXd xm = smat_dense(VectorXd(x)), ym = smat_dense(VectorXd(y));
        o = svec(MatrixXd(0.5 * (xm * ym + ym * xm)));
        break;
      }
      case ConeKind::Zero: break;
    }
  }
  return out;
}

// Solves lambda o x = v for x.
VectorXd lambda_solve(const std::vector<Block>& blocks, const Scaling& sc, const VectorXd& v) {
  VectorXd out(v.size());
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const Block& blk = blocks[k];
    const VectorXd& lam = sc[k].lam;
    const auto y = v.segment(blk.off, blk.len);
    auto o = out.segment(blk.off, blk.len);
    switch (blk.kind) {
      case ConeKind::Nonnegative: o = y.cwiseQuotient(lam); break;
      case ConeKind::SecondOrder: {
        const double l0 = lam(0);
        const auto l1 = lam.tail(blk.len - 1);
        const double det = l0 * l0 - l1.squaredNorm();
        const double x0 = (l0 * y(0) - l1.dot(y.tail(blk.len - 1))) / det;
        o(0) = x0;
        o.tail(blk.len - 1) = (y.tail(blk.len - 1) - x0 * l1) / l0;
        break;
      }
      case ConeKind::PSD: {
        Index idx = 0;
        for (Index j = 0; j < blk.dim; ++j)
          for (Index i = j; i < blk.dim; ++i, ++idx) o(idx) = 2.0 * y(idx) / (lam(i) + lam(j));
        break;
      }
      case ConeKind::Zero: break;
    }
  }
  return out;
}

// lambda_min(S) for S = smat(u).
double psd_min_eig(const VectorXd& u) { return sym_eig(smat_dense(u)).values(0); }

// Smallest t with u + t e in the cone (negative when u is interior).
double interior_shift(const std::vector<Block>& blocks, const VectorXd& u) {
  double t = -kInf;
  for (const auto& b : blocks) {
    const auto x = u.segment(b.off, b.len);
    switch (b.kind) {
      case ConeKind::Nonnegative: t = std::max(t, -x.minCoeff()); break;
      case ConeKind::SecondOrder: t = std::max(t, x.tail(b.len - 1).norm() - x(0)); break;
      case ConeKind::PSD: t = std::max(t, -psd_min_eig(VectorXd(x))); break;
      case ConeKind::Zero: break;
    }
  }
  return t;
}

// Largest alpha with u + alpha du in the cone; u must be interior.
double max_step(const std::vector<Block>& blocks, const VectorXd& u, const VectorXd& du) {
  double alpha = kInf;
  for (const auto& b : blocks) {
    const auto x = u.segment(b.off, b.len);
    const auto d = du.segment(b.off, b.len);
    switch (b.kind) {
      case ConeKind::Nonnegative:
        for (Index i = 0; i < b.len; ++i)
          if (d(i) < 0) alpha = std::min(alpha, -x(i) / d(i));
        break;
      case ConeKind::SecondOrder: {
        const auto x1 = x.tail(b.len - 1);
        const auto d1 = d.tail(b.len - 1);
        const double qa = d(0) * d(0) - d1.squaredNorm();
        const double qb = 2.0 * (x(0) * d(0) - x1.dot(d1));
        const double qc = std::max(x(0) * x(0) - x1.squaredNorm(), 0.0);
        if (d(0) < 0) alpha = std::min(alpha, -x(0) / d(0));
        const double scale = std::max({std::abs(qa), std::abs(qb), qc, 1e-300});
        if (std::abs(qa) <= 1e-14 * scale) {
          if (qb < 0) alpha = std::min(alpha, -qc / qb);
        } else {
          const double disc = qb * qb - 4.0 * qa * qc;
          if (disc >= 0) {
            const double sq = std::sqrt(disc);
            const double qq = -0.5 * (qb + (qb >= 0 ? sq : -sq));
            for (double root : {qq / qa, qq != 0 ? qc / qq : kInf})
              if (root > 0) alpha = std::min(alpha, root);
          }
        }
        break;
      }
      case ConeKind::PSD: {
        const MatrixXd xm = smat_dense(VectorXd(x));
        Eigen::LLT<MatrixXd> llt(xm);
        if (llt.info() != Eigen::Success) return 0.0;
        const MatrixXd l = llt.matrixL();
        MatrixXd tmp = l.triangularView<Eigen::Lower>().solve(smat_dense(VectorXd(d)));
        tmp = l.triangularView<Eigen::Lower>().solve(MatrixXd(tmp.transpose()));
        const double lmin = sym_eig(MatrixXd(0.5 * (tmp + tmp.transpose()))).values(0);
        if (lmin < 0) alpha = std::min(alpha, -1.0 / lmin);
        break;
      }
      case ConeKind::Zero: break;
    }
  }
  return alpha;
}

bool compute_scaling(const std::vector<Block>& blocks, const VectorXd& s, const VectorXd& z,
                     Scaling& out) {
  out.assign(blocks.size(), BlockScaling{});
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const Block& b = blocks[k];
    BlockScaling& sc = out[k];
    const VectorXd sk = s.segment(b.off, b.len);
    const VectorXd zk = z.segment(b.off, b.len);
    switch (b.kind) {
      case ConeKind::Nonnegative:
        if ((sk.array() <= 0).any() || (zk.array() <= 0).any()) return false;
        sc.w = (sk.array() / zk.array()).sqrt();
        sc.lam = (sk.array() * zk.array()).sqrt();
        break;
      case ConeKind::SecondOrder: {
        const double sn = sk.tail(b.len - 1).norm(), zn = zk.tail(b.len - 1).norm();
        const double sa = (sk(0) - sn) * (sk(0) + sn);
        const double za = (zk(0) - zn) * (zk(0) + zn);
        if (!(sa > 0) || !(za > 0) || sk(0) <= 0 || zk(0) <= 0) return false;
        const double an = std::sqrt(sa), bn = std::sqrt(za);
        sc.beta = std::sqrt(an / bn);
        const double cc = std::sqrt((sk.dot(zk) / an / bn + 1.0) / 2.0);
        VectorXd v = -zk / bn;
        v(0) *= -1.0;
        v += sk / an;
        v /= 2.0 * cc;
        v(0) += 1.0;
        v /= std::sqrt(2.0 * v(0));
        sc.v = v;
        sc.lam = soc_w(sc, zk);
        break;
      }
      case ConeKind::PSD: {
        Eigen::LLT<MatrixXd> ls(smat_dense(sk)), lz(smat_dense(zk));
        if (ls.info() != Eigen::Success || lz.info() != Eigen::Success) return false;
        const MatrixXd lsm = ls.matrixL(), lzm = lz.matrixL();
        Eigen::JacobiSVD<MatrixXd> svd(lzm.transpose() * lsm, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const VectorXd sv = svd.singularValues();
        if (!(sv.minCoeff() > 0)) return false;
        const VectorXd isq = sv.cwiseSqrt().cwiseInverse();
        sc.r = lsm * svd.matrixV() * isq.asDiagonal();
        sc.rinv = isq.asDiagonal() * svd.matrixU().transpose() * lzm.transpose();
        sc.lam = sv;
        break;
      }
      case ConeKind::Zero: break;
    }
  }
  return true;
}

// lambda as a stacked vector (PSD blocks expanded to svec of the diagonal).
VectorXd lambda_vector(const std::vector<Block>& blocks, const Scaling& sc, Index m) {
  VectorXd out = VectorXd::Zero(m);
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const Block& b = blocks[k];
    if (b.kind == ConeKind::PSD) {
      for (Index j = 0; j < b.dim; ++j) out(b.off + svec_index(b.dim, j, j)) = sc[k].lam(j);
    } else {
      out.segment(b.off, b.len) = sc[k].lam;
    }
  }
  return out;
}

// KKT solver for
//   A^T uy + G^T dz = r1,   A ux = r2,   G ux - W^T W dz = r3.
// Works on the scaled form with Gs = W^{-T} G and us = W dz:
//   A^T uy + Gs^T us = r1,  A ux = r2,  Gs ux - us = W^{-T} r3,
// eliminating us. The reduced matrix Gs^T Gs = R^T R is factored by
// Cholesky, or, when `accurate` is requested, R comes from a Householder QR
// of Gs so the squared condition number is avoided.
class KktSolver {
 public:
  KktSolver(const MatrixXd& g, const MatrixXd& a, const std::vector<Block>& blocks)
      : g_(g), a_(a), blocks_(blocks) {}

  bool factor(const Scaling& sc, bool accurate) {
    sc_ = &sc;
    const Index n = g_.cols(), m = g_.rows(), me = a_.rows();
    gs_.resize(m, n);
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
      const Block& b = blocks_[k];
      for (Index j = 0; j < n; ++j) {
        const VectorXd col = g_.block(b.off, j, b.len, 1);
        if (col.isZero(0.0)) {
          gs_.block(b.off, j, b.len, 1).setZero();
        } else {
          gs_.block(b.off, j, b.len, 1) = apply_block(b, sc[k], Op::Wtinv, col);
        }
      }
    }
    if (!gs_.allFinite()) return false;
    bool factored = false;
    if (!accurate) {
      MatrixXd hm = MatrixXd::Zero(n, n);
      hm.selfadjointView<Eigen::Lower>().rankUpdate(gs_.transpose());
      hm.diagonal().array() += 1e-13 * std::max(1.0, hm.diagonal().maxCoeff());
      chol_.compute(hm);
      if (chol_.info() == Eigen::Success) {
        r_ = chol_.matrixU();
        factored = true;
      }
    }
    if (!factored) {
      // A tiny ridge keeps R invertible when Gs lacks full column rank;
      // refinement against the unregularized system removes its effect.
      MatrixXd stacked(m + n, n);
      stacked.topRows(m) = gs_;
      stacked.bottomRows(n) =
          (1e-9 * std::max(1.0, gs_.cwiseAbs().maxCoeff())) * MatrixXd::Identity(n, n);
      qr_.compute(stacked);
      r_ = qr_.matrixQR().topRows(n).triangularView<Eigen::Upper>();
    }
    if (!r_.allFinite()) return false;
    if (me > 0) {
      y_ = r_.transpose().triangularView<Eigen::Lower>().solve(MatrixXd(a_.transpose()));
      MatrixXd s = y_.transpose() * y_;
      s.diagonal().array() += 1e-14 * std::max(1.0, s.diagonal().maxCoeff());
      schur_.compute(s);
      if (schur_.info() != Eigen::Success) return false;
    }
    return true;
  }

  bool solve(const VectorXd& r1, const VectorXd& r2, const VectorXd& r3, VectorXd& ux,
             VectorXd& uy, VectorXd& dz) const {
    const Index n = g_.cols(), me = a_.rows(), m = g_.rows();
    const VectorXd t3 = apply(blocks_, *sc_, Op::Wtinv, r3);
    ux = VectorXd::Zero(n);
    uy = VectorXd::Zero(me);
    VectorXd us = VectorXd::Zero(m);
    VectorXd e1 = r1, e2 = r2, e3 = t3;
    for (int pass = 0; pass < 3; ++pass) {
      VectorXd cx, cy, cs;
      reduced(e1, e2, e3, cx, cy, cs);
      ux += cx;
      uy += cy;
      us += cs;
      e1 = r1 - a_.transpose() * uy - gs_.transpose() * us;
      e2 = r2 - a_ * ux;
      e3 = t3 - (gs_ * ux - us);
    }
    dz = apply(blocks_, *sc_, Op::Winv, us);
    return ux.allFinite() && uy.allFinite() && dz.allFinite();
  }

 private:
  void reduced(const VectorXd& r1, const VectorXd& r2, const VectorXd& t3, VectorXd& ux,
               VectorXd& uy, VectorXd& us) const {
    // (Gs^T Gs) ux + A^T uy = r1 + Gs^T t3,  A ux = r2
    const VectorXd f = r1 + gs_.transpose() * t3;
    const VectorXd rf = r_.transpose().triangularView<Eigen::Lower>().solve(f);
    VectorXd rhs = rf;
    if (a_.rows() > 0) {
      uy = schur_.solve(VectorXd(y_.transpose() * rf - r2));
      rhs -= y_ * uy;
    } else {
      uy.resize(0);
    }
    ux = r_.triangularView<Eigen::Upper>().solve(rhs);
    us = gs_ * ux - t3;
  }

  const MatrixXd& g_;
  const MatrixXd& a_;
  const std::vector<Block>& blocks_;
  const Scaling* sc_ = nullptr;
  MatrixXd gs_;
  MatrixXd r_;
  MatrixXd y_;
  Eigen::HouseholderQR<MatrixXd> qr_;
  Eigen::LLT<MatrixXd> chol_;
  Eigen::LDLT<MatrixXd> schur_;
};

Scaling identity_scaling(const std::vector<Block>& blocks) {
  Scaling sc(blocks.size());
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const Block& b = blocks[k];
    switch (b.kind) {
      case ConeKind::Nonnegative:
        sc[k].w = VectorXd::Ones(b.len);
        sc[k].lam = VectorXd::Ones(b.len);
        break;
      case ConeKind::SecondOrder:
        sc[k].beta = 1.0;
        sc[k].v = VectorXd::Zero(b.len);
        sc[k].v(0) = 1.0;
        sc[k].lam = VectorXd::Zero(b.len);
        sc[k].lam(0) = 1.0;
        break;
      case ConeKind::PSD:
        sc[k].r = MatrixXd::Identity(b.dim, b.dim);
        sc[k].rinv = MatrixXd::Identity(b.dim, b.dim);
        sc[k].lam = VectorXd::Ones(b.dim);
        break;
      case ConeKind::Zero: break;
    }
  }
  return sc;
}

}  // namespace

Solution solve(const ConicProgram& prog, const SolverSettings& settings) {
  settings.validate();
  prog.validate();

  const Index n = prog.num_vars();

  // Split rows: zero-cone rows become equalities, the rest the cone space.
  std::vector<Index> eq_rows, cone_rows;
  std::vector<Block> blocks;
  Index degree = 0;
  {
    Index row = 0;
    for (const auto& k : prog.cones) {
      if (k.kind == ConeKind::Zero) {
        for (Index r = 0; r < k.rows(); ++r) {
          // Presolve: an all-zero equality row with zero rhs carries no information.
          if (prog.A.row(row + r).isZero(0.0) && prog.b(row + r) == 0.0) continue;
          eq_rows.push_back(row + r);
        }
      } else {
        blocks.push_back({k.kind, Index(cone_rows.size()), k.rows(),
                          k.kind == ConeKind::PSD ? k.size : 0});
        for (Index r = 0; r < k.rows(); ++r) cone_rows.push_back(row + r);
        degree += k.degree();
      }
      row += k.rows();
    }
  }
  const Index me = Index(eq_rows.size()), m = Index(cone_rows.size());
  MatrixXd aeq(me, n), g(m, n);
  VectorXd beq(me), h(m);
  for (Index i = 0; i < me; ++i) {
    aeq.row(i) = prog.A.row(eq_rows[std::size_t(i)]);
    beq(i) = prog.b(eq_rows[std::size_t(i)]);
  }
  for (Index i = 0; i < m; ++i) {
    g.row(i) = prog.A.row(cone_rows[std::size_t(i)]);
    h(i) = prog.b(cone_rows[std::size_t(i)]);
  }
  const VectorXd& c = prog.c;
  const double bnorm = std::sqrt(beq.squaredNorm() + h.squaredNorm());
  const double cnorm = c.norm();
  const VectorXd e = unit(blocks, m);

  Solution sol;
  auto finish = [&](SolveStatus st, const VectorXd& x, const VectorXd& s, const VectorXd& yeq,
                    const VectorXd& z, double scale_primal, double scale_dual) {
    sol.status = st;
    sol.z = x * scale_primal;
    sol.s = VectorXd::Zero(prog.num_rows());
    sol.y = VectorXd::Zero(prog.num_rows());
    for (Index i = 0; i < m; ++i) {
      sol.s(cone_rows[std::size_t(i)]) = s(i) * scale_primal;
      sol.y(cone_rows[std::size_t(i)]) = z(i) * scale_dual;
    }
    for (Index i = 0; i < me; ++i) sol.y(eq_rows[std::size_t(i)]) = yeq(i) * scale_dual;
    sol.obj_primal = c.dot(sol.z);
    sol.obj_dual = -prog.b.dot(sol.y);
    const CertificateReport rep = check_certificate(prog, sol);
    sol.residuals = {rep.primal_res, rep.dual_res, rep.gap_res};
    return sol;
  };

  VectorXd x(n), yeq(me), z(m), s(m);
  double tau = 1.0, kappa = 1.0;

  KktSolver kkt(g, aeq, blocks);
  {
    const Scaling ident = identity_scaling(blocks);
    if (!kkt.factor(ident, true)) return finish(SolveStatus::NumericalFailure, x, s, yeq, z, 0, 0);
    VectorXd ux, uy, dz;
    if (!kkt.solve(VectorXd::Zero(n), beq, h, ux, uy, dz))
      return finish(SolveStatus::NumericalFailure, x, s, yeq, z, 0, 0);
    x = ux;
    s = -dz;
    if (!kkt.solve(-c, VectorXd::Zero(me), VectorXd::Zero(m), ux, uy, dz))
      return finish(SolveStatus::NumericalFailure, x, s, yeq, z, 0, 0);
    yeq = uy;
    z = dz;
    const double ts = interior_shift(blocks, s);
    if (ts >= -1e-8 * std::max(1.0, s.norm())) s += (1.0 + ts) * e;
    const double tz = interior_shift(blocks, z);
    if (tz >= -1e-8 * std::max(1.0, z.norm())) z += (1.0 + tz) * e;
  }

  Scaling sc;
  for (int iter = 0;; ++iter) {
    sol.iterations = iter;
    const VectorXd rx = -(aeq.transpose() * yeq + g.transpose() * z + c * tau);
    const VectorXd ry = aeq * x - beq * tau;
    const VectorXd rz = s + g * x - h * tau;
    const double cx = c.dot(x), by = beq.dot(yeq), hz = h.dot(z);
    const double rt = kappa + cx + by + hz;

    const double pcost = cx / tau, dcost = -(by + hz) / tau;
    const double pres = std::sqrt(ry.squaredNorm() + rz.squaredNorm()) / tau / (1.0 + bnorm);
    const double dres = rx.norm() / tau / (1.0 + cnorm);
    const double gapres = std::abs(pcost - dcost) / (1.0 + std::abs(pcost));
    const double compl_gap = s.dot(z) / (tau * tau) / (1.0 + std::abs(pcost));
    const double mu = (s.dot(z) + tau * kappa) / double(degree + 1);

    if (settings.log) settings.log({iter, mu, std::max(gapres, compl_gap), pres, dres});

    if (pres <= settings.tol_feas && dres <= settings.tol_feas && gapres <= settings.tol_gap &&
        compl_gap <= settings.tol_gap)
      return finish(SolveStatus::Optimal, x, s, yeq, z, 1.0 / tau, 1.0 / tau);

    if (by + hz < 0) {
      const double pinf =
          (aeq.transpose() * yeq + g.transpose() * z).norm() / std::max(1.0, cnorm) / (-(by + hz));
      if (pinf <= settings.tol_feas)
        return finish(SolveStatus::PrimalInfeasible, x, s, yeq, z, 0.0, 1.0 / (-(by + hz)));
    }
    if (cx < 0) {
      const double dinf =
          std::sqrt((aeq * x).squaredNorm() + (g * x + s).squaredNorm()) / std::max(1.0, bnorm) / (-cx);
      if (dinf <= settings.tol_feas)
        return finish(SolveStatus::DualInfeasible, x, s, yeq, z, 1.0 / (-cx), 0.0);
    }
    if (iter >= settings.max_iters)
      return finish(SolveStatus::IterLimit, x, s, yeq, z, 1.0 / tau, 1.0 / tau);

    // Cholesky on the normal equations is accurate enough far from the
    // optimum; QR takes over once any residual is small.
    const bool accurate = std::min({pres, dres, std::max(gapres, compl_gap)}) < 1e-4;
    if (!compute_scaling(blocks, s, z, sc) || !kkt.factor(sc, accurate))
      return finish(SolveStatus::NumericalFailure, x, s, yeq, z, 1.0 / tau, 1.0 / tau);
    const VectorXd lam = lambda_vector(blocks, sc, m);
    const VectorXd lamsq = jordan(blocks, lam, lam);
    const double lamg = std::sqrt(tau * kappa);
    const double dg = std::sqrt(kappa / tau);

    VectorXd x1, y1, dz1;
    if (!kkt.solve(-c, beq, h, x1, y1, dz1))
      return finish(SolveStatus::NumericalFailure, x, s, yeq, z, 1.0 / tau, 1.0 / tau);
    const double denom1 = c.dot(x1) + beq.dot(y1) + h.dot(dz1) - dg * dg;

    struct Direction {
      VectorXd dx, dy, dz, ds, us, uz;
      double dtau = 0, dkappa = 0, utau = 0, ukappa = 0;
    };

    // Solves the linearized embedding for right-hand sides
    // (bx, by, bz, btau) = f * (rx, ry, rz, rt) and complementarity targets bs, bkappa.
    auto direction = [&](double f, const VectorXd& bs, double bkappa, Direction& d) {
      const VectorXd sv = -lambda_solve(blocks, sc, bs);
      VectorXd x0, y0, dz0;
      if (!kkt.solve(f * rx, -f * ry, VectorXd(-f * rz - apply(blocks, sc, Op::Wt, sv)), x0, y0, dz0))
        return false;
      const double num = -f * rt + dg * bkappa / lamg - (c.dot(x0) + beq.dot(y0) + h.dot(dz0));
      d.dtau = num / denom1;
      d.dx = x0 + d.dtau * x1;
      d.dy = y0 + d.dtau * y1;
      d.dz = dz0 + d.dtau * dz1;
      d.uz = apply(blocks, sc, Op::W, d.dz);
      // ds from the linearized primal rows; Wt (sv - uz) would amplify the
      // KKT error by ||W|| once the scaling becomes ill-conditioned.
      d.ds = h * d.dtau - f * rz - g * d.dx;
      d.us = apply(blocks, sc, Op::Wtinv, d.ds);
      d.utau = dg * d.dtau;
      d.ukappa = -bkappa / lamg - d.utau;
      d.dkappa = dg * d.ukappa;
      return d.dx.allFinite() && d.ds.allFinite() && std::isfinite(d.dtau);
    };

    auto step_to_boundary = [&](const Direction& d) {
      double a = std::min(max_step(blocks, s, d.ds), max_step(blocks, z, d.dz));
      if (d.dtau < 0) a = std::min(a, -tau / d.dtau);
      if (d.dkappa < 0) a = std::min(a, -kappa / d.dkappa);
      return a;
    };

    Direction aff;
    if (!direction(1.0, lamsq, lamg * lamg, aff))
      return finish(SolveStatus::NumericalFailure, x, s, yeq, z, 1.0 / tau, 1.0 / tau);
    const double alpha_aff = std::min(1.0, step_to_boundary(aff));
    const double sigma = std::pow(1.0 - alpha_aff, 3.0);

    const VectorXd bs = lamsq + jordan(blocks, aff.us, aff.uz) - sigma * mu * e;
    const double bk = lamg * lamg + aff.utau * aff.ukappa - sigma * mu;
    Direction cor;
    if (!direction(1.0 - sigma, bs, bk, cor))
      return finish(SolveStatus::NumericalFailure, x, s, yeq, z, 1.0 / tau, 1.0 / tau);
    const double alpha = std::min(1.0, settings.step_fraction * step_to_boundary(cor));
    if (!(alpha > 1e-14))
      return finish(SolveStatus::NumericalFailure, x, s, yeq, z, 1.0 / tau, 1.0 / tau);

    x += alpha * cor.dx;
    yeq += alpha * cor.dy;
    z += alpha * cor.dz;
    s += alpha * cor.ds;
    tau += alpha * cor.dtau;
    kappa += alpha * cor.dkappa;
  }
}

double cone_margin(const ConicProgram& prog, const Eigen::VectorXd& v, bool dual) {
  double margin = kInf;
  Index row = 0;
  for (const auto& k : prog.cones) {
    const VectorXd x = v.segment(row, k.rows());
    switch (k.kind) {
      case ConeKind::Zero:
        if (!dual) margin = std::min(margin, -x.cwiseAbs().maxCoeff());
        break;
      case ConeKind::Nonnegative: margin = std::min(margin, x.minCoeff()); break;
      case ConeKind::SecondOrder:
        margin = std::min(margin, x(0) - x.tail(k.size - 1).norm());
        break;
      case ConeKind::PSD: margin = std::min(margin, psd_min_eig(x)); break;
    }
    row += k.rows();
  }
  return margin;
}

CertificateReport check_certificate(const ConicProgram& prog, const Solution& sol) {
  using LD = long double;
  using VecL = Vec<LD>;
  using MatL = Mat<LD>;
  const MatL a = prog.A.cast<LD>();
  const VecL b = prog.b.cast<LD>(), c = prog.c.cast<LD>();
  const VecL z = sol.z.size() == prog.num_vars() ? VecL(sol.z.cast<LD>()) : VecL::Zero(prog.num_vars());
  const VecL s = sol.s.size() == prog.num_rows() ? VecL(sol.s.cast<LD>()) : VecL::Zero(prog.num_rows());
  const VecL y = sol.y.size() == prog.num_rows() ? VecL(sol.y.cast<LD>()) : VecL::Zero(prog.num_rows());

  CertificateReport rep;
  const LD cz = c.dot(z), by = b.dot(y);
  rep.primal_res = double((a * z + s - b).norm() / (1 + b.norm()));
  rep.dual_res = double((a.transpose() * y + c).norm() / (1 + c.norm()));
  rep.gap_res = double(std::abs(cz + by) / (1 + std::abs(cz)));
  rep.primal_cone_margin = cone_margin(prog, sol.s.size() ? sol.s : VectorXd::Zero(prog.num_rows()), false);
  rep.dual_cone_margin = cone_margin(prog, sol.y.size() ? sol.y : VectorXd::Zero(prog.num_rows()), true);
  rep.farkas_primal = by != 0 ? double((a.transpose() * y).norm() / std::abs(by)) : double(kInf);
  rep.farkas_dual = cz != 0 ? double((a * z + s).norm() / std::abs(cz)) : double(kInf);
  return rep;
}

}  // namespace gdro
