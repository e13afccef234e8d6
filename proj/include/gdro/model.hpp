#ifndef GDRO_MODEL_HPP
#define GDRO_MODEL_HPP

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gdro/numerics.hpp"
#include "gdro/stats.hpp"

namespace gdro {

/// DRO1/DRO2: classical DRO on R^p / on a sample-space ellipsoid.
/// GDRO1_*: distance penalty in the objective. GDRO2_*: expected distance
/// bounded by d0. Suffix _1 means sample space R^p, _2 a bounded ellipsoid.
enum class Variant { DRO1, DRO2, GDRO1_1, GDRO1_2, GDRO2_1, GDRO2_2 };

std::string_view to_string(Variant v);
/// Accepts "GDRO1.1" and "GDRO1_1" spellings.
Variant variant_from_string(std::string_view name);

constexpr bool is_gdro(Variant v) { return v != Variant::DRO1 && v != Variant::DRO2; }
constexpr bool is_gdro1(Variant v) { return v == Variant::GDRO1_1 || v == Variant::GDRO1_2; }
constexpr bool is_gdro2(Variant v) { return v == Variant::GDRO2_1 || v == Variant::GDRO2_2; }
constexpr bool has_bounded_space(Variant v) {
  return v == Variant::DRO2 || v == Variant::GDRO1_2 || v == Variant::GDRO2_2;
}

/// One affine piece a(x)^T xi + b(x) with a(x) = G x + g and b(x) = h^T x + c.
struct PiecewisePiece {
  Eigen::MatrixXd G;  // p x n
  Eigen::VectorXd g;  // p
  Eigen::VectorXd h;  // n
  double c = 0;

  Eigen::VectorXd slope(const Eigen::VectorXd& x) const { return G * x + g; }
  double offset(const Eigen::VectorXd& x) const { return h.dot(x) + c; }
};

/// { x : a_eq x = b_eq, a_ineq x <= b_ineq }.
struct PolyhedronX {
  Eigen::MatrixXd a_eq;
  Eigen::VectorXd b_eq;
  Eigen::MatrixXd a_ineq;
  Eigen::VectorXd b_ineq;
  bool free = false;

  static PolyhedronX simplex(Eigen::Index n);
  static PolyhedronX unconstrained(Eigen::Index n);

  bool contains(const Eigen::VectorXd& x, double tol = 1e-9) const;
  void validate(Eigen::Index n) const;
};

struct GdroModel {
  Variant variant = Variant::DRO1;
  std::vector<PiecewisePiece> pieces;
  PolyhedronX X;
  MomentInfo moments;
  std::optional<Ellipsoidd> core;
  std::optional<Ellipsoidd> space;
  double theta = 0;
  std::optional<double> d0;

  Eigen::Index n() const { return pieces.empty() ? 0 : pieces.front().G.cols(); }
  Eigen::Index p() const { return moments.dim(); }

  /// Throws InvalidModel / DimensionMismatch / MissingCoreSet.
  void validate() const;
};

/// E(gamma) = { xi : (xi - mu_bar)^T sigma0^{-1} (xi - mu_bar) <= gamma }.
Ellipsoidd concentric_ellipsoid(const MomentInfo& m, const Eigen::VectorXd& mu_bar,
                                double radius_sq);

/// Portfolio instance: maximize the worst-case expected utility
/// min_k { a_k xi^T x + b_k } over the simplex, recast as minimizing
/// max_k { -a_k xi^T x - b_k }.
GdroModel portfolio_model(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Variant variant,
                          const MomentInfo& moments, std::optional<Ellipsoidd> core,
                          std::optional<Ellipsoidd> space, double theta,
                          std::optional<double> d0);

/// max_k (G_k x + g_k)^T xi + h_k^T x + c_k
double evaluate_h(const GdroModel& m, const Eigen::VectorXd& x, const Eigen::VectorXd& xi);

/// evaluate_h - theta * dist(xi, core). Throws MissingCoreSet without a core.
double penalized_h(const GdroModel& m, const Eigen::VectorXd& x, const Eigen::VectorXd& xi);

}  // namespace gdro

#endif  // GDRO_MODEL_HPP
