#ifndef GDRO_NUMERICS_HPP
#define GDRO_NUMERICS_HPP

// Dense symmetric-matrix kit: svec/smat, Cholesky factor, cyclic Jacobi
// eigensolver, and Euclidean distance to an ellipsoid. Everything here is
// templated on the scalar so the same code runs in double and long double.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gdro/error.hpp"

namespace gdro {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Symmetric matrix with the lower triangle authoritative. Construction
/// mirrors the lower triangle into the upper one, so `matrix()` is always
/// exactly symmetric.
template <typename Scalar>
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(Eigen::Index dim) : m_(Mat<Scalar>::Zero(dim, dim)) {
    if (dim < 1) throw Error(ErrorCode::DimensionMismatch, "SymMatrix dimension must be >= 1");
  }

  template <typename Derived>
  explicit SymMatrix(const Eigen::MatrixBase<Derived>& m) : m_(m) {
    if (m_.rows() != m_.cols() || m_.rows() < 1)
      throw Error(ErrorCode::DimensionMismatch, "SymMatrix requires a non-empty square matrix");
    m_.template triangularView<Eigen::StrictlyUpper>() = m_.transpose();
  }

  static SymMatrix identity(Eigen::Index dim) {
    return SymMatrix(Mat<Scalar>::Identity(dim, dim));
  }

  Eigen::Index dim() const { return m_.rows(); }
  const Mat<Scalar>& matrix() const { return m_; }
  Scalar operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

  /// Sets both (i,j) and (j,i).
  void set(Eigen::Index i, Eigen::Index j, Scalar v) {
    m_(i, j) = v;
    m_(j, i) = v;
  }

 private:
  Mat<Scalar> m_;
};

using SymMatrixd = SymMatrix<double>;

/// Length of the svec of a d x d symmetric matrix.
constexpr Eigen::Index svec_size(Eigen::Index d) { return d * (d + 1) / 2; }

/// Inverse of svec_size; throws when `len` is not triangular.
inline Eigen::Index svec_dim(Eigen::Index len) {
  auto d = static_cast<Eigen::Index>(std::llround((std::sqrt(8.0 * double(len) + 1.0) - 1.0) / 2.0));
  if (svec_size(d) != len)
    throw Error(ErrorCode::DimensionMismatch, "length " + std::to_string(len) + " is not d(d+1)/2");
  return d;
}

/// Position of entry (i,j), i >= j, in the column-major lower-triangle svec.
constexpr Eigen::Index svec_index(Eigen::Index d, Eigen::Index i, Eigen::Index j) {
  return j * d - j * (j - 1) / 2 + (i - j);
}

/// Isometric vectorization: column-major lower triangle, off-diagonal
/// entries scaled by sqrt(2) so svec(S).dot(svec(T)) == trace(S T).
template <typename Derived>
Vec<typename Derived::Scalar> svec(const Eigen::MatrixBase<Derived>& s) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index d = s.rows();
  const Scalar r2 = std::sqrt(Scalar(2));
  Vec<Scalar> out(svec_size(d));
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < d; ++j) {
    out(k++) = s(j, j);
    for (Eigen::Index i = j + 1; i < d; ++i) out(k++) = r2 * s(i, j);
  }
  return out;
}

template <typename Scalar>
Vec<Scalar> svec(const SymMatrix<Scalar>& s) {
  return svec(s.matrix());
}

/// Inverse of svec, returned as a plain dense symmetric matrix.
template <typename Derived>
Mat<typename Derived::Scalar> smat_dense(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index d = svec_dim(v.size());
  const Scalar inv_r2 = Scalar(1) / std::sqrt(Scalar(2));
  Mat<Scalar> m(d, d);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < d; ++j) {
    m(j, j) = v(k++);
    for (Eigen::Index i = j + 1; i < d; ++i) {
      m(i, j) = inv_r2 * v(k++);
      m(j, i) = m(i, j);
    }
  }
  return m;
}

template <typename Derived>
SymMatrix<typename Derived::Scalar> smat(const Eigen::MatrixBase<Derived>& v) {
  return SymMatrix<typename Derived::Scalar>(smat_dense(v));
}

/// Lower-triangular L with L L^T = S. A pivot at or below
/// 1e-12 * trace(S) / d is reported as NotPositiveDefinite.
template <typename Scalar>
Mat<Scalar> factor_sqrt(const SymMatrix<Scalar>& s) {
  const Eigen::Index d = s.dim();
  const Mat<Scalar>& a = s.matrix();
  const Scalar tol = Scalar(1e-12) * std::abs(a.trace()) / Scalar(d);
  Mat<Scalar> l = Mat<Scalar>::Zero(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    Scalar pivot = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(pivot > tol))
      throw Error(ErrorCode::NotPositiveDefinite,
                  "pivot " + std::to_string(double(pivot)) + " at column " + std::to_string(j));
    l(j, j) = std::sqrt(pivot);
    for (Eigen::Index i = j + 1; i < d; ++i)
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
  }
  return l;
}

/// Inverse of a positive definite matrix through its Cholesky factor.
template <typename Scalar>
SymMatrix<Scalar> spd_inverse(const SymMatrix<Scalar>& s) {
  const Mat<Scalar> l = factor_sqrt(s);
  Mat<Scalar> linv = l.template triangularView<Eigen::Lower>().solve(
      Mat<Scalar>::Identity(s.dim(), s.dim()));
  return SymMatrix<Scalar>(Mat<Scalar>(linv.transpose() * linv));
}

template <typename Scalar>
struct SymEig {
  Vec<Scalar> values;   // ascending
  Mat<Scalar> vectors;  // columns are eigenvectors
};

/// Cyclic Jacobi eigensolver. Throws NoConvergence after 50*d sweeps.
template <typename Derived>
SymEig<typename Derived::Scalar> sym_eig(const Eigen::MatrixBase<Derived>& s_in) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index d = s_in.rows();
  Mat<Scalar> a = s_in;
  Mat<Scalar> v = Mat<Scalar>::Identity(d, d);
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  const Scalar scale = std::max(a.norm(), std::numeric_limits<Scalar>::min());
  const int max_sweeps = 50 * static_cast<int>(std::max<Eigen::Index>(d, 1));

  bool converged = d < 2;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    Scalar off = 0;
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index i = j + 1; i < d; ++i) off += a(i, j) * a(i, j);
    if (std::sqrt(off) <= eps * scale) {
      converged = true;
      break;
    }
    for (Eigen::Index p = 0; p < d - 1; ++p) {
      for (Eigen::Index q = p + 1; q < d; ++q) {
        const Scalar apq = a(p, q);
        if (std::abs(apq) <= std::numeric_limits<Scalar>::min()) continue;
        const Scalar tau = (a(q, q) - a(p, p)) / (2 * apq);
        const Scalar t = (tau >= 0 ? Scalar(1) : Scalar(-1)) /
                         (std::abs(tau) + std::sqrt(Scalar(1) + tau * tau));
        const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
        const Scalar sn = t * c;
        for (Eigen::Index k = 0; k < d; ++k) {
          const Scalar akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < d; ++k) {
          const Scalar apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0;
        for (Eigen::Index k = 0; k < d; ++k) {
          const Scalar vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }
  if (!converged) throw Error(ErrorCode::NoConvergence, "Jacobi sweep limit reached");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < d; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index x, Eigen::Index y) { return a(x, x) < a(y, y); });
  SymEig<Scalar> out{Vec<Scalar>(d), Mat<Scalar>(d, d)};
  for (Eigen::Index k = 0; k < d; ++k) {
    out.values(k) = a(order[std::size_t(k)], order[std::size_t(k)]);
    out.vectors.col(k) = v.col(order[std::size_t(k)]);
  }
  return out;
}

template <typename Scalar>
SymEig<Scalar> sym_eig(const SymMatrix<Scalar>& s) {
  return sym_eig(s.matrix());
}

/// E = { y : (y - center)^T shape_inv (y - center) <= radius_sq }.
template <typename Scalar>
struct Ellipsoid {
  Vec<Scalar> center;
  SymMatrix<Scalar> shape_inv;
  Scalar radius_sq{1};

  Eigen::Index dim() const { return center.size(); }

  /// Mahalanobis-type quadratic form of `point` about the center.
  Scalar form(const Vec<Scalar>& point) const {
    const Vec<Scalar> u = point - center;
    return u.dot(shape_inv.matrix() * u);
  }

  void validate() const {
    if (center.size() != shape_inv.dim())
      throw Error(ErrorCode::DimensionMismatch, "ellipsoid center and shape disagree");
    if (!(radius_sq > 0)) throw Error(ErrorCode::InvalidSpec, "ellipsoid radius must be positive");
    factor_sqrt(shape_inv);
  }
};

using Ellipsoidd = Ellipsoid<double>;

/// Euclidean distance from `point` to the ellipsoid `e` (0 inside).
/// Outside points solve the secular equation
///   sum_i d_i u_i^2 / (1 + lambda d_i)^2 = radius_sq
/// in the eigenbasis of shape_inv with Newton steps kept inside a
/// bisection bracket.
template <typename Scalar>
Scalar ellipsoid_distance(const Vec<Scalar>& point, const Ellipsoid<Scalar>& e) {
  const Vec<Scalar> u = point - e.center;
  if (u.dot(e.shape_inv.matrix() * u) <= e.radius_sq) return Scalar(0);

  const SymEig<Scalar> eig = sym_eig(e.shape_inv);
  const Vec<Scalar> ut = eig.vectors.transpose() * u;
  const Vec<Scalar>& dv = eig.values;
  const Scalar r = e.radius_sq;

  auto secular = [&](Scalar lam, Scalar* deriv) {
    Scalar f = -r, df = 0;
    for (Eigen::Index i = 0; i < ut.size(); ++i) {
      const Scalar den = Scalar(1) + lam * dv(i);
      const Scalar num = dv(i) * ut(i) * ut(i);
      f += num / (den * den);
      df -= 2 * num * dv(i) / (den * den * den);
    }
    if (deriv) *deriv = df;
    return f;
  };

  Scalar lo = 0;
  Scalar hi = std::sqrt((ut.array().square() / dv.array()).sum() / r);
  Scalar lam = 0;
  const Scalar tol = Scalar(1e-10) * r;
  bool done = false;
  for (int it = 0; it < 500; ++it) {
    Scalar df = 0;
    const Scalar f = secular(lam, &df);
    if (std::abs(f) <= tol) {
      done = true;
      break;
    }
    if (f > 0) lo = lam; else hi = lam;
    Scalar next = lam - f / df;
    if (!(next > lo && next < hi)) next = Scalar(0.5) * (lo + hi);
    if (hi - lo <= std::numeric_limits<Scalar>::epsilon() * std::max(Scalar(1), hi)) {
      done = true;
      lam = next;
      break;
    }
    lam = next;
  }
  if (!done) throw Error(ErrorCode::NoConvergence, "ellipsoid distance secular equation");

  Scalar dist_sq = 0;
  for (Eigen::Index i = 0; i < ut.size(); ++i) {
    const Scalar step = ut(i) * lam * dv(i) / (Scalar(1) + lam * dv(i));
    dist_sq += step * step;
  }
  return std::sqrt(dist_sq);
}

}  // namespace gdro

#endif  // GDRO_NUMERICS_HPP
