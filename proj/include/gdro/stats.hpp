#ifndef GDRO_STATS_HPP
#define GDRO_STATS_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "gdro/numerics.hpp"

namespace gdro {

enum class Distribution { Normal, UniformBox, UniformEllipsoid, External };

std::string_view to_string(Distribution d);
Distribution distribution_from_string(std::string_view name);

/// M x p matrix of realizations, one sample per row.
struct SampleSet {
  Eigen::MatrixXd samples;
  std::uint64_t seed = 0;
  Distribution distribution = Distribution::External;

  Eigen::Index count() const { return samples.rows(); }
  Eigen::Index dim() const { return samples.cols(); }
  void validate() const;
};

/// Sample mean and covariance (1/M divisor) with the factors every
/// reformulation needs.
struct SampleMoments {
  Eigen::VectorXd mu0;
  SymMatrixd sigma0;
  Eigen::MatrixXd sigma0_sqrt;  // lower L with L L^T = sigma0
  SymMatrixd sigma0_inv;
};

struct MomentInfo {
  Eigen::VectorXd mu0;
  SymMatrixd sigma0;
  Eigen::MatrixXd sigma0_sqrt;
  SymMatrixd sigma0_inv;
  double gamma1 = 0;
  double gamma2 = 0;

  Eigen::Index dim() const { return mu0.size(); }
  void validate() const;
};

/// Builds factors for a given mean/covariance pair. Throws SingularCovariance.
SampleMoments moments_from(const Eigen::VectorXd& mu0, const SymMatrixd& sigma0);
SampleMoments estimate_moments(const SampleSet& s);
MomentInfo with_radii(const SampleMoments& m, double gamma1, double gamma2);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
/// CDF of the F(d1, d2) distribution.
double f_cdf(double q, int d1, int d2);
/// Quantile of F(d1, d2): the q with f_cdf(q) == prob.
double f_quantile(double prob, int d1, int d2);

struct GammaPair {
  double gamma1 = 0;
  double gamma2 = 0;
};

/// Wishart lower-edge constants used by gamma_normal.
struct WishartEdge {
  double mu_minus = 0;
  double sigma_minus = 0;
  double a() const { return mu_minus - sigma_minus; }
};
WishartEdge wishart_lower_edge(int m, int p);

/// Confidence radii under normal sampling:
///   gamma1 = p/(M-p) * F^{-1}_{F(p, M-p)}(1 - alpha)
///   gamma2 = gamma1 + M / (mu^- - sigma^-)  with (m, p) = (M-1, p).
GammaPair gamma_normal(int m, int p, double alpha);

/// Confidence radii for samples with bounded Mahalanobis support radius R.
GammaPair gamma_bounded(int m, int p, double delta, double r);

/// Smallest gamma such that every sample lies in
/// { xi : (xi - mu_bar)^T sigma0_inv (xi - mu_bar) <= gamma }.
double min_enclosing_gamma(const SampleSet& s, const Eigen::VectorXd& mu_bar,
                           const SymMatrixd& sigma0_inv);

/// Counter-based generator: output k is a pure function of (seed, stream, k),
/// so replications with distinct stream ids never share state.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal through Box-Muller.
  double normal();

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::optional<double> spare_;
};

struct DistributionSpec {
  Distribution kind = Distribution::UniformBox;
  /// Every coordinate of the mean / ellipsoid center.
  double center = 10.0;
  /// Normal: covariance = variance * I.
  double variance = 100.0 / 3.0;
  /// Uniform box: [box_lo, box_hi]^p.
  double box_lo = 0.0;
  double box_hi = 20.0;
  /// Uniform ellipsoid { (xi-c)^T shape^{-1} (xi-c) <= radius_sq }.
  double radius_sq = 200.0;
  Eigen::MatrixXd shape;
  /// Additive N(eps e, perturb_variance I) with eps ~ U(-0.5, 0.5) once per set.
  bool perturb = true;
  double perturb_variance = 0.5;
};

/// B^T B + 0.1 I with B a seeded p x p standard-normal matrix.
Eigen::MatrixXd make_ellipsoid_shape(int p, std::uint64_t seed);

/// Throws InvalidSpec when the ellipsoid shape is not positive definite.
SampleSet generate(const DistributionSpec& spec, int m, int p, std::uint64_t seed,
                   std::uint64_t stream = 0);

void write_csv(std::ostream& out, const SampleSet& s);
SampleSet read_csv(std::istream& in);
SampleSet read_csv_file(const std::string& path);

}  // namespace gdro

#endif  // GDRO_STATS_HPP
