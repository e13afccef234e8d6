#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "gdro/model.hpp"

using namespace gdro;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MomentInfo unit_moments(int p, double g1 = 0.5, double g2 = 2.0) {
  return with_radii(moments_from(VectorXd::Zero(p), SymMatrixd::identity(p)), g1, g2);
}

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(Eigen::Index(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_CASE("portfolio pieces") {
  const MomentInfo mo = unit_moments(2);
  const GdroModel one = portfolio_model(vec({1}), vec({0}), Variant::DRO1, mo, {}, {}, 0, {});
  CHECK(one.pieces.size() == 1);
  CHECK(one.pieces[0].G.isApprox(-MatrixXd::Identity(2, 2)));
  CHECK(one.pieces[0].c == 0.0);
  CHECK(evaluate_h(one, vec({0.3, 0.7}), vec({2, 1})) == doctest::Approx(-1.3));

  const GdroModel two = portfolio_model(vec({1, 2}), vec({0, -1}), Variant::DRO1, mo, {}, {}, 0, {});
  CHECK(evaluate_h(two, vec({1, 0}), vec({3, 0})) == doctest::Approx(-3.0));
  CHECK(two.X.contains(vec({0.5, 0.5})));
  CHECK_FALSE(two.X.contains(vec({0.7, 0.7})));
  CHECK_THROWS_AS(portfolio_model(vec({1, 2}), vec({0}), Variant::DRO1, mo, {}, {}, 0, {}), Error);
}

TEST_CASE("evaluate_h ties and zero piece") {
  GdroModel m;
  m.moments = unit_moments(2);
  m.X = PolyhedronX::unconstrained(2);
  PiecewisePiece zero{MatrixXd::Zero(2, 2), VectorXd::Zero(2), VectorXd::Zero(2), 0.0};
  m.pieces = {zero};
  m.validate();
  CHECK(evaluate_h(m, vec({1, 2}), vec({3, 4})) == 0.0);

  // pieces xi_1 and -xi_1 cross at xi_1 = 0
  PiecewisePiece up{MatrixXd::Zero(2, 2), vec({1, 0}), VectorXd::Zero(2), 0.0};
  PiecewisePiece down{MatrixXd::Zero(2, 2), vec({-1, 0}), VectorXd::Zero(2), 0.0};
  m.pieces = {up, down};
  CHECK(evaluate_h(m, vec({0, 0}), vec({0, 5})) == 0.0);
  CHECK(evaluate_h(m, vec({0, 0}), vec({-2, 5})) == 2.0);
}

TEST_CASE("evaluate_h is convex in xi") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 10);
  std::normal_distribution<double> n(0, 5);
  VectorXd a(5), b(5);
  for (int k = 0; k < 5; ++k) {
    a(k) = u(rng);
    b(k) = u(rng);
  }
  const GdroModel m = portfolio_model(a, b, Variant::DRO1, unit_moments(4), {}, {}, 0, {});
  const VectorXd x = VectorXd::Constant(4, 0.25);
  for (int t = 0; t < 500; ++t) {
    VectorXd p(4), q(4);
    for (int i = 0; i < 4; ++i) {
      p(i) = n(rng);
      q(i) = n(rng);
    }
    const double mid = evaluate_h(m, x, 0.5 * (p + q));
    CHECK(std::isfinite(mid));
    CHECK(mid <= 0.5 * (evaluate_h(m, x, p) + evaluate_h(m, x, q)) + 1e-12);
  }
}

TEST_CASE("penalized_h") {
  const MomentInfo mo = unit_moments(1);
  const Ellipsoidd core = concentric_ellipsoid(mo, VectorXd::Zero(1), 1.0);  // [-1, 1]
  GdroModel m = portfolio_model(vec({1, 2}), vec({0, -1}), Variant::GDRO1_1, mo, core, {}, 2.0, {});
  const VectorXd x = vec({1});
  CHECK(penalized_h(m, x, vec({3})) == doctest::Approx(evaluate_h(m, x, vec({3})) - 4.0));
  CHECK(penalized_h(m, x, vec({0.5})) == evaluate_h(m, x, vec({0.5})));
  m.theta = 0;
  CHECK(penalized_h(m, x, vec({7})) == evaluate_h(m, x, vec({7})));

  const GdroModel plain = portfolio_model(vec({1}), vec({0}), Variant::DRO1, mo, {}, {}, 0, {});
  try {
    penalized_h(plain, x, vec({1}));
    FAIL("expected MissingCoreSet");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingCoreSet);
  }
}

TEST_CASE("penalized_h <= evaluate_h with equality on the core") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0, 3);
  const MomentInfo mo = unit_moments(3);
  const Ellipsoidd core = concentric_ellipsoid(mo, VectorXd::Zero(3), 2.0);
  const GdroModel m = portfolio_model(vec({1, 3, 5}), vec({2, 1, 0}), Variant::GDRO1_1, mo, core, {}, 1.5, {});
  const VectorXd x = VectorXd::Constant(3, 1.0 / 3);
  for (int t = 0; t < 1000; ++t) {
    VectorXd xi(3);
    for (int i = 0; i < 3; ++i) xi(i) = n(rng);
    const double ph = penalized_h(m, x, xi), h = evaluate_h(m, x, xi);
    CHECK(ph <= h);
    if (core.form(xi) <= core.radius_sq) CHECK(std::abs(ph - h) <= 1e-10);
    else CHECK(ph < h);
  }
}

TEST_CASE("validation rejects invalid combinations") {
  const MomentInfo mo = unit_moments(2);
  const VectorXd mu = VectorXd::Zero(2);
  const Ellipsoidd small = concentric_ellipsoid(mo, mu, 1.0);
  const Ellipsoidd large = concentric_ellipsoid(mo, mu, 4.0);
  const VectorXd a = vec({1, 2}), b = vec({0, 1});
  auto make = [&](Variant v, std::optional<Ellipsoidd> c, std::optional<Ellipsoidd> s, double th,
                  std::optional<double> d0) { return portfolio_model(a, b, v, mo, c, s, th, d0); };

  CHECK_NOTHROW(make(Variant::DRO1, {}, {}, 0, {}));
  CHECK_NOTHROW(make(Variant::DRO2, {}, large, 0, {}));
  CHECK_NOTHROW(make(Variant::GDRO1_1, small, {}, 1, {}));
  CHECK_NOTHROW(make(Variant::GDRO1_2, small, large, 1, {}));
  CHECK_NOTHROW(make(Variant::GDRO2_1, small, {}, 1, 0.5));
  CHECK_NOTHROW(make(Variant::GDRO2_2, small, large, 1, 0.5));

  // Each invalid combination, enumerated over all variants.
  for (Variant v : {Variant::DRO1, Variant::DRO2, Variant::GDRO1_1, Variant::GDRO1_2,
                    Variant::GDRO2_1, Variant::GDRO2_2}) {
    const std::optional<Ellipsoidd> core = is_gdro(v) ? std::optional(small) : std::nullopt;
    const std::optional<Ellipsoidd> space = has_bounded_space(v) ? std::optional(large) : std::nullopt;
    const std::optional<double> d0 = is_gdro2(v) ? std::optional(0.5) : std::nullopt;
    CHECK_THROWS_AS(make(v, core, space, -1.0, d0), Error);
    if (is_gdro(v)) CHECK_THROWS_AS(make(v, std::nullopt, space, 1, d0), Error);
    if (has_bounded_space(v)) CHECK_THROWS_AS(make(v, core, std::nullopt, 1, d0), Error);
    else CHECK_THROWS_AS(make(v, core, large, 1, d0), Error);
    if (is_gdro2(v)) {
      CHECK_THROWS_AS(make(v, core, space, 1, std::nullopt), Error);
      CHECK_THROWS_AS(make(v, core, space, 1, -0.1), Error);
    } else {
      CHECK_THROWS_AS(make(v, core, space, 1, 0.5), Error);
    }
    if (is_gdro(v) && has_bounded_space(v)) {
      CHECK_THROWS_AS(make(v, large, small, 1, d0), Error);
      CHECK_THROWS_AS(make(v, small, small, 1, d0), Error);
      const Ellipsoidd shifted = concentric_ellipsoid(mo, vec({1, 0}), 4.0);
      CHECK_THROWS_AS(make(v, small, shifted, 1, d0), Error);
    }
  }
  // core shape must be sigma0^{-1}
  Ellipsoidd warped = small;
  warped.shape_inv = SymMatrixd(MatrixXd(2 * MatrixXd::Identity(2, 2)));
  CHECK_THROWS_AS(make(Variant::GDRO1_1, warped, {}, 1, {}), Error);
  CHECK(variant_from_string("GDRO1.2") == Variant::GDRO1_2);
  CHECK(variant_from_string("GDRO2_1") == Variant::GDRO2_1);
  CHECK_THROWS_AS(variant_from_string("GDRO3"), Error);
}
