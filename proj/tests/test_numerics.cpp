#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "gdro/numerics.hpp"

using namespace gdro;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_sym(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = n(rng);
  return 0.5 * (a + a.transpose());
}

MatrixXd random_pd(int d, std::mt19937_64& rng) {
  MatrixXd a = random_sym(d, rng);
  return a * a.transpose() + 0.5 * MatrixXd::Identity(d, d);
}

}  // namespace

TEST_CASE("svec of small matrices") {
  CHECK(svec(MatrixXd::Identity(2, 2)).isApprox(Eigen::Vector3d(1, 0, 1)));
  MatrixXd s(2, 2);
  s << 1, 2, 2, 3;
  const VectorXd v = svec(s);
  CHECK(v(0) == 1.0);
  CHECK(v(1) == doctest::Approx(2 * std::sqrt(2.0)).epsilon(1e-15));
  CHECK(v(2) == 3.0);
  CHECK(v.dot(v) == doctest::Approx((s * s).trace()).epsilon(1e-14));
  CHECK(v.dot(v) == doctest::Approx(18.0).epsilon(1e-14));
}

TEST_CASE("svec is an isometry and smat inverts it") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 1 + trial % 7;
    const MatrixXd s = random_sym(d, rng), t = random_sym(d, rng);
    const double lhs = svec(s).dot(svec(t));
    const double rhs = (s * t).trace();
    CHECK(std::abs(lhs - rhs) <= 1e-12 * s.norm() * t.norm());
    CHECK((smat_dense(svec(s)) - s).norm() <= 4e-16 * s.norm());
  }
  CHECK(svec_dim(10) == 4);
  CHECK_THROWS_AS(svec_dim(5), Error);
  CHECK(svec_index(3, 2, 1) == 4);
}

TEST_CASE("factor_sqrt") {
  CHECK(factor_sqrt(SymMatrixd::identity(3)).isApprox(MatrixXd::Identity(3, 3)));
  MatrixXd d = MatrixXd::Zero(2, 2);
  d.diagonal() << 4, 9;
  const MatrixXd l = factor_sqrt(SymMatrixd(d));
  CHECK(l(0, 0) == 2.0);
  CHECK(l(1, 1) == 3.0);
  CHECK(l(1, 0) == 0.0);

  std::mt19937_64 rng(5);
  for (int d2 : {2, 5, 11}) {
    const SymMatrixd s(random_pd(d2, rng));
    const MatrixXd f = factor_sqrt(s);
    CHECK((f * f.transpose() - s.matrix()).norm() <= 1e-12 * s.matrix().norm());
    CHECK(f.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().norm() == 0.0);
  }
  MatrixXd sing = MatrixXd::Ones(2, 2);
  CHECK_THROWS_AS(factor_sqrt(SymMatrixd(sing)), Error);
  const SymMatrixd s(random_pd(4, rng));
  CHECK((spd_inverse(s).matrix() * s.matrix() - MatrixXd::Identity(4, 4)).norm() < 1e-10);
}

TEST_CASE("sym_eig") {
  MatrixXd d = MatrixXd::Zero(2, 2);
  d.diagonal() << 2, 1;
  auto e = sym_eig(d);
  CHECK(e.values(0) == doctest::Approx(1.0));
  CHECK(e.values(1) == doctest::Approx(2.0));

  MatrixXd swap(2, 2);
  swap << 0, 1, 1, 0;
  e = sym_eig(swap);
  CHECK(e.values(0) == doctest::Approx(-1.0));
  CHECK(e.values(1) == doctest::Approx(1.0));

  std::mt19937_64 rng(17);
  for (int d2 : {3, 8, 20, 40}) {
    const MatrixXd s = random_sym(d2, rng);
    const auto r = sym_eig(s);
    const MatrixXd& v = r.vectors;
    CHECK((s * v - v * r.values.asDiagonal()).norm() <= 1e-10 * s.norm());
    CHECK((v.transpose() * v - MatrixXd::Identity(d2, d2)).norm() <= 1e-10);
    for (int i = 1; i < d2; ++i) CHECK(r.values(i - 1) <= r.values(i));
  }
}

TEST_CASE("ellipsoid distance examples") {
  Ellipsoidd ball{VectorXd::Zero(3), SymMatrixd::identity(3), 4.0};
  CHECK(ellipsoid_distance(VectorXd(VectorXd::Zero(3)), ball) == 0.0);
  VectorXd pt = VectorXd::Zero(3);
  pt(1) = 5;
  CHECK(ellipsoid_distance(pt, ball) == doctest::Approx(3.0).epsilon(1e-10));

  MatrixXd shape = MatrixXd::Zero(2, 2);
  shape.diagonal() << 1, 0.25;
  Ellipsoidd e{VectorXd::Zero(2), SymMatrixd(shape), 1.0};
  const double d = ellipsoid_distance(VectorXd(Eigen::Vector2d(3, 0)), e);
  // Dense boundary minimization as the reference.
  double best = 1e300;
  for (int k = 0; k < 200000; ++k) {
    const double t = 2 * M_PI * k / 200000.0;
    best = std::min(best, std::hypot(3 - std::cos(t), 2 * std::sin(t)));
  }
  CHECK(d == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(std::abs(d - best) < 1e-8);
}

TEST_CASE("ellipsoid distance lower-bounds surface distances") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 10; ++trial) {
    const int p = 2 + trial % 3;
    const MatrixXd shape = random_pd(p, rng);
    VectorXd c(p);
    for (int i = 0; i < p; ++i) c(i) = n(rng);
    Ellipsoidd e{c, SymMatrixd(shape), 1.0 + trial};
    VectorXd x(p);
    for (int i = 0; i < p; ++i) x(i) = c(i) + 6 * n(rng);
    const double d = ellipsoid_distance(x, e);
    const double form = e.form(x);
    CHECK((d == 0.0) == (form <= e.radius_sq + 1e-10));
    // Surface points: y = c + sqrt(r) L^{-T} u with |u| = 1 where L L^T = shape.
    const MatrixXd l = factor_sqrt(SymMatrixd(shape));
    double closest = 1e300;
    for (int k = 0; k < 1000; ++k) {
      VectorXd u(p);
      for (int i = 0; i < p; ++i) u(i) = n(rng);
      u.normalize();
      const VectorXd y = c + std::sqrt(e.radius_sq) * l.transpose().triangularView<Eigen::Upper>().solve(u);
      CHECK(e.form(y) == doctest::Approx(e.radius_sq).epsilon(1e-9));
      closest = std::min(closest, (x - y).norm());
    }
    CHECK(d <= closest + 1e-10);
  }
}

TEST_CASE("ellipsoid membership boundary") {
  Ellipsoidd ball{VectorXd::Zero(2), SymMatrixd::identity(2), 1.0};
  CHECK(ellipsoid_distance(VectorXd(Eigen::Vector2d(1, 0)), ball) == 0.0);
  CHECK(ellipsoid_distance(VectorXd(Eigen::Vector2d(1 + 1e-6, 0)), ball) ==
        doctest::Approx(1e-6).epsilon(1e-4));
}
