#include "gdro/model.hpp"

#include <cmath>
#include <limits>

namespace gdro {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::DRO1: return "DRO1";
    case Variant::DRO2: return "DRO2";
    case Variant::GDRO1_1: return "GDRO1.1";
    case Variant::GDRO1_2: return "GDRO1.2";
    case Variant::GDRO2_1: return "GDRO2.1";
    case Variant::GDRO2_2: return "GDRO2.2";
  }
  return "DRO1";
}

Variant variant_from_string(std::string_view name) {
  std::string key(name);
  for (char& ch : key)
    if (ch == '_') ch = '.';
  for (Variant v : {Variant::DRO1, Variant::DRO2, Variant::GDRO1_1, Variant::GDRO1_2,
                    Variant::GDRO2_1, Variant::GDRO2_2})
    if (key == to_string(v)) return v;
  throw Error(ErrorCode::InvalidModel, "unknown variant '" + std::string(name) + "'");
}

PolyhedronX PolyhedronX::simplex(Eigen::Index n) {
  PolyhedronX x;
  x.a_eq = Eigen::MatrixXd::Ones(1, n);
  x.b_eq = Eigen::VectorXd::Ones(1);
  x.a_ineq = -Eigen::MatrixXd::Identity(n, n);
  x.b_ineq = Eigen::VectorXd::Zero(n);
  return x;
}

PolyhedronX PolyhedronX::unconstrained(Eigen::Index n) {
  PolyhedronX x;
  x.a_eq.resize(0, n);
  x.b_eq.resize(0);
  x.a_ineq.resize(0, n);
  x.b_ineq.resize(0);
  x.free = true;
  return x;
}

bool PolyhedronX::contains(const Eigen::VectorXd& x, double tol) const {
  if (a_eq.rows() > 0 && ((a_eq * x - b_eq).array().abs() > tol).any()) return false;
  if (a_ineq.rows() > 0 && ((a_ineq * x - b_ineq).array() > tol).any()) return false;
  return true;
}

void PolyhedronX::validate(Eigen::Index n) const {
  if (a_eq.cols() != n && a_eq.rows() > 0)
    throw Error(ErrorCode::DimensionMismatch, "X equality matrix has wrong column count");
  if (a_ineq.cols() != n && a_ineq.rows() > 0)
    throw Error(ErrorCode::DimensionMismatch, "X inequality matrix has wrong column count");
  if (a_eq.rows() != b_eq.size() || a_ineq.rows() != b_ineq.size())
    throw Error(ErrorCode::DimensionMismatch, "X right-hand side has wrong length");
  if (a_eq.rows() + a_ineq.rows() == 0 && !free)
    throw Error(ErrorCode::InvalidModel, "X has no constraints and is not marked free");
}

namespace {

bool same_shape(const Ellipsoidd& e, const SymMatrixd& sigma0_inv) {
  const double scale = 1.0 + sigma0_inv.matrix().cwiseAbs().maxCoeff();
  return (e.shape_inv.matrix() - sigma0_inv.matrix()).cwiseAbs().maxCoeff() <= 1e-9 * scale;
}

void check_ellipsoid(const Ellipsoidd& e, const MomentInfo& m, const char* what) {
  if (e.dim() != m.dim() || e.shape_inv.dim() != m.dim())
    throw Error(ErrorCode::DimensionMismatch, std::string(what) + " dimension differs from p");
  if (!(e.radius_sq > 0) || !std::isfinite(e.radius_sq))
    throw Error(ErrorCode::InvalidModel, std::string(what) + " radius must be positive");
  if (!same_shape(e, m.sigma0_inv))
    throw Error(ErrorCode::InvalidModel, std::string(what) + " shape must equal sigma0^{-1}");
}

}  // namespace

void GdroModel::validate() const {
  moments.validate();
  if (pieces.empty()) throw Error(ErrorCode::InvalidModel, "at least one piece is required");
  const Eigen::Index nn = n(), pp = p();
  for (const auto& pc : pieces) {
    if (pc.G.rows() != pp || pc.G.cols() != nn || pc.g.size() != pp || pc.h.size() != nn)
      throw Error(ErrorCode::DimensionMismatch, "piece dimensions inconsistent with (n, p)");
    if (!pc.G.allFinite() || !pc.g.allFinite() || !pc.h.allFinite() || !std::isfinite(pc.c))
      throw Error(ErrorCode::InvalidModel, "piece data must be finite");
  }
  X.validate(nn);
  if (!(theta >= 0) || !std::isfinite(theta))
    throw Error(ErrorCode::InvalidModel, "theta must be finite and >= 0");

  if (is_gdro(variant) && !core)
    throw Error(ErrorCode::MissingCoreSet, std::string(to_string(variant)) + " needs a core set");
  if (has_bounded_space(variant) && !space)
    throw Error(ErrorCode::InvalidModel, std::string(to_string(variant)) + " needs a sample space");
  if (!has_bounded_space(variant) && space)
    throw Error(ErrorCode::InvalidModel,
                std::string(to_string(variant)) + " has sample space R^p; remove 'space'");
  if (is_gdro2(variant) && !d0)
    throw Error(ErrorCode::InvalidModel, std::string(to_string(variant)) + " needs d0");
  if (!is_gdro2(variant) && d0)
    throw Error(ErrorCode::InvalidModel, "d0 is only meaningful for GDRO2 variants");
  if (d0 && (!(*d0 >= 0) || !std::isfinite(*d0)))
    throw Error(ErrorCode::InvalidModel, "d0 must be finite and >= 0");

  if (core) check_ellipsoid(*core, moments, "core");
  if (space) check_ellipsoid(*space, moments, "space");
  if (core && space && is_gdro(variant)) {
    if (!(core->radius_sq < space->radius_sq))
      throw Error(ErrorCode::InvalidModel, "core radius must be smaller than space radius");
    if ((core->center - space->center).cwiseAbs().maxCoeff() >
        1e-12 * (1.0 + core->center.cwiseAbs().maxCoeff()))
      throw Error(ErrorCode::InvalidModel, "core and space must share the center mu_bar");
  }
}

Ellipsoidd concentric_ellipsoid(const MomentInfo& m, const Eigen::VectorXd& mu_bar,
                                double radius_sq) {
  if (mu_bar.size() != m.dim()) throw Error(ErrorCode::DimensionMismatch, "mu_bar has wrong size");
  return Ellipsoidd{mu_bar, m.sigma0_inv, radius_sq};
}

GdroModel portfolio_model(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Variant variant,
                          const MomentInfo& moments, std::optional<Ellipsoidd> core,
                          std::optional<Ellipsoidd> space, double theta,
                          std::optional<double> d0) {
  if (a.size() != b.size() || a.size() < 1)
    throw Error(ErrorCode::DimensionMismatch, "utility slopes and offsets must have equal length K >= 1");
  if (!a.allFinite() || !b.allFinite())
    throw Error(ErrorCode::DimensionMismatch, "utility data must be finite");
  const Eigen::Index n = moments.dim();
  GdroModel m;
  m.variant = variant;
  m.moments = moments;
  m.core = std::move(core);
  m.space = std::move(space);
  m.theta = theta;
  m.d0 = d0;
  m.X = PolyhedronX::simplex(n);
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    PiecewisePiece pc;
    pc.G = -a(k) * Eigen::MatrixXd::Identity(n, n);
    pc.g = Eigen::VectorXd::Zero(n);
    pc.h = Eigen::VectorXd::Zero(n);
    pc.c = -b(k);
    m.pieces.push_back(std::move(pc));
  }
  m.validate();
  return m;
}

double evaluate_h(const GdroModel& m, const Eigen::VectorXd& x, const Eigen::VectorXd& xi) {
  if (x.size() != m.n() || xi.size() != m.p())
    throw Error(ErrorCode::DimensionMismatch, "evaluate_h argument sizes");
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& pc : m.pieces) best = std::max(best, pc.slope(x).dot(xi) + pc.offset(x));
  return best;
}

double penalized_h(const GdroModel& m, const Eigen::VectorXd& x, const Eigen::VectorXd& xi) {
  if (!m.core) throw Error(ErrorCode::MissingCoreSet, "penalized_h needs a core set");
  const double h = evaluate_h(m, x, xi);
  if (m.theta == 0.0) return h;
  return h - m.theta * ellipsoid_distance(xi, *m.core);
}

}  // namespace gdro
