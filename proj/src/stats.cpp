#include "gdro/stats.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <vector>

namespace gdro {

std::string_view to_string(Distribution d) {
  switch (d) {
    case Distribution::Normal: return "normal";
    case Distribution::UniformBox: return "uniform_box";
    case Distribution::UniformEllipsoid: return "uniform_ellipsoid";
    case Distribution::External: return "external";
  }
  return "external";
}

Distribution distribution_from_string(std::string_view name) {
  if (name == "normal") return Distribution::Normal;
  if (name == "uniform_box") return Distribution::UniformBox;
  if (name == "uniform_ellipsoid") return Distribution::UniformEllipsoid;
  if (name == "external") return Distribution::External;
  throw Error(ErrorCode::InvalidSpec, "unknown distribution '" + std::string(name) + "'");
}

void SampleSet::validate() const {
  if (samples.rows() < 2) throw Error(ErrorCode::InvalidSampleSize, "need at least 2 samples");
  if (samples.cols() < 1) throw Error(ErrorCode::DimensionMismatch, "samples need p >= 1");
  if (!samples.allFinite()) throw Error(ErrorCode::DomainError, "non-finite sample entry");
}

void MomentInfo::validate() const {
  if (sigma0.dim() != mu0.size() || sigma0_sqrt.rows() != mu0.size() ||
      sigma0_inv.dim() != mu0.size())
    throw Error(ErrorCode::DimensionMismatch, "moment dimensions disagree");
  if (!(gamma1 > 0) || !(gamma2 > gamma1))
    throw Error(ErrorCode::InvalidModel, "moment radii must satisfy gamma2 > gamma1 > 0");
}

SampleMoments moments_from(const Eigen::VectorXd& mu0, const SymMatrixd& sigma0) {
  if (mu0.size() != sigma0.dim())
    throw Error(ErrorCode::DimensionMismatch, "mean and covariance dimensions disagree");
  SampleMoments out;
  out.mu0 = mu0;
  out.sigma0 = sigma0;
  try {
    out.sigma0_sqrt = factor_sqrt(sigma0);
  } catch (const Error& e) {
    throw Error(ErrorCode::SingularCovariance, e.what());
  }
  const Eigen::MatrixXd linv = out.sigma0_sqrt.triangularView<Eigen::Lower>().solve(
      Eigen::MatrixXd::Identity(sigma0.dim(), sigma0.dim()));
  out.sigma0_inv = SymMatrixd(Eigen::MatrixXd(linv.transpose() * linv));
  return out;
}

SampleMoments estimate_moments(const SampleSet& s) {
  s.validate();
  const double m = static_cast<double>(s.count());
  const Eigen::VectorXd mu0 = s.samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = s.samples.rowwise() - mu0.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / m;
  return moments_from(mu0, SymMatrixd(cov));
}

MomentInfo with_radii(const SampleMoments& m, double gamma1, double gamma2) {
  MomentInfo out{m.mu0, m.sigma0, m.sigma0_sqrt, m.sigma0_inv, gamma1, gamma2};
  out.validate();
  return out;
}

namespace {

// Continued fraction for the incomplete beta function (modified Lentz).
double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) return h;
  }
  throw Error(ErrorCode::NoConvergence, "incomplete beta continued fraction");
}

double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0) || !(b > 0)) throw Error(ErrorCode::DomainError, "beta parameters must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double front = std::exp(a * std::log(x) + b * std::log1p(-x) - log_beta(a, b));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double f_cdf(double q, int d1, int d2) {
  if (d1 < 1 || d2 < 1) throw Error(ErrorCode::DomainError, "F degrees of freedom must be >= 1");
  if (q <= 0.0) return 0.0;
  const double x = d1 * q / (d1 * q + d2);
  return incomplete_beta(0.5 * d1, 0.5 * d2, x);
}

double f_quantile(double prob, int d1, int d2) {
  if (!(prob > 0.0 && prob < 1.0))
    throw Error(ErrorCode::DomainError, "probability must lie in (0,1)");
  if (d1 < 1 || d2 < 1) throw Error(ErrorCode::DomainError, "F degrees of freedom must be >= 1");

  // Work on the beta variable x = d1 q / (d1 q + d2) in (0,1).
  const double a = 0.5 * d1, b = 0.5 * d2;
  const double lb = log_beta(a, b);
  double lo = 0.0, hi = 1.0, x = 0.5;
  for (int it = 0; it < 400; ++it) {
    const double f = incomplete_beta(a, b, x) - prob;
    if (std::abs(f) <= 1e-15) break;
    if (f < 0) lo = x; else hi = x;
    const double dens = std::exp((a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - lb);
    double next = x - f / dens;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) {
      x = next;
      break;
    }
    x = next;
  }
  return d2 * x / (d1 * (1.0 - x));
}

WishartEdge wishart_lower_edge(int m, int p) {
  if (m < 1 || p < 1) throw Error(ErrorCode::InvalidSampleSize, "wishart dimensions must be >= 1");
  WishartEdge e;
  const double sm = std::sqrt(double(m)), sp = std::sqrt(double(p));
  e.mu_minus = (sm - sp) * (sm - sp);
  e.sigma_minus = std::sqrt(e.mu_minus) * std::cbrt(1.0 / sp - 1.0 / sm);
  return e;
}

GammaPair gamma_normal(int m, int p, double alpha) {
  if (p < 1 || m <= p)
    throw Error(ErrorCode::InvalidSampleSize,
                "need M > p (M=" + std::to_string(m) + ", p=" + std::to_string(p) + ")");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::DomainError, "alpha must lie in (0,1)");
  const WishartEdge edge = wishart_lower_edge(m - 1, p);
  if (!(edge.a() > 0.0))
    throw Error(ErrorCode::InvalidSampleSize, "Wishart lower edge mu^- - sigma^- is not positive");
  GammaPair g;
  g.gamma1 = double(p) / double(m - p) * f_quantile(1.0 - alpha, p, m - p);
  g.gamma2 = g.gamma1 + double(m) / edge.a();
  return g;
}

GammaPair gamma_bounded(int m, int p, double delta, double r) {
  if (!(delta > 0.0 && delta < 1.0)) throw Error(ErrorCode::DomainError, "delta must lie in (0,1)");
  if (p < 1 || m < 1) throw Error(ErrorCode::InvalidSampleSize, "M and p must be >= 1");
  const double r2 = r * r, r4 = r2 * r2;
  if (!(r4 >= p)) throw Error(ErrorCode::SampleSizeTooSmall, "support radius needs R^4 >= p");
  const double root = std::sqrt(1.0 - p / r4);
  const double bound = r4 * std::pow(root + std::sqrt(std::log(2.0 / delta)), 2);
  if (!(m > bound))
    throw Error(ErrorCode::SampleSizeTooSmall,
                "M=" + std::to_string(m) + " does not exceed " + std::to_string(bound));
  const double alpha = r2 / std::sqrt(double(m)) * (root + std::sqrt(std::log(4.0 / delta)));
  const double beta = r2 / double(m) * std::pow(2.0 + std::sqrt(2.0 * std::log(2.0 / delta)), 2);
  const double denom = 1.0 - alpha - beta;
  if (!(denom > 0.0)) throw Error(ErrorCode::SampleSizeTooSmall, "1 - alpha - beta <= 0");
  return {beta / denom, (1.0 + beta) / denom};
}

double min_enclosing_gamma(const SampleSet& s, const Eigen::VectorXd& mu_bar,
                           const SymMatrixd& sigma0_inv) {
  if (s.dim() != mu_bar.size() || sigma0_inv.dim() != mu_bar.size())
    throw Error(ErrorCode::DimensionMismatch, "min_enclosing_gamma dimensions disagree");
  double best = 0.0;
  for (Eigen::Index i = 0; i < s.count(); ++i) {
    const Eigen::VectorXd u = s.samples.row(i).transpose() - mu_bar;
    best = std::max(best, u.dot(sigma0_inv.matrix() * u));
  }
  return best;
}

namespace {

std::uint64_t splitmix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream)
    : key_(splitmix(splitmix(seed) ^ (stream * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL))) {}

std::uint64_t CounterRng::next_u64() {
  return splitmix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_);
}

double CounterRng::uniform() {
  return (double(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double CounterRng::normal() {
  if (spare_) {
    const double v = *spare_;
    spare_.reset();
    return v;
  }
  const double u1 = uniform(), u2 = uniform();
  const double rad = std::sqrt(-2.0 * std::log(u1));
  const double ang = 2.0 * std::numbers::pi * u2;
  spare_ = rad * std::sin(ang);
  return rad * std::cos(ang);
}

Eigen::MatrixXd make_ellipsoid_shape(int p, std::uint64_t seed) {
  CounterRng rng(seed, 0xE111);
  Eigen::MatrixXd b(p, p);
  for (int j = 0; j < p; ++j)
    for (int i = 0; i < p; ++i) b(i, j) = rng.normal();
  return b.transpose() * b + 0.1 * Eigen::MatrixXd::Identity(p, p);
}

SampleSet generate(const DistributionSpec& spec, int m, int p, std::uint64_t seed,
                   std::uint64_t stream) {
  if (m < 1 || p < 1) throw Error(ErrorCode::InvalidSpec, "M and p must be >= 1");
  CounterRng rng(seed, stream);
  SampleSet out;
  out.seed = seed;
  out.distribution = spec.kind;
  out.samples.resize(m, p);

  switch (spec.kind) {
    case Distribution::Normal: {
      if (!(spec.variance > 0)) throw Error(ErrorCode::InvalidSpec, "normal variance must be > 0");
      const double sd = std::sqrt(spec.variance);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < p; ++j) out.samples(i, j) = spec.center + sd * rng.normal();
      break;
    }
    case Distribution::UniformBox: {
      if (!(spec.box_hi > spec.box_lo)) throw Error(ErrorCode::InvalidSpec, "empty box");
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < p; ++j) out.samples(i, j) = rng.uniform(spec.box_lo, spec.box_hi);
      break;
    }
    case Distribution::UniformEllipsoid: {
      if (spec.shape.rows() != p || spec.shape.cols() != p)
        throw Error(ErrorCode::InvalidSpec, "ellipsoid shape must be p x p");
      if (!(spec.radius_sq > 0)) throw Error(ErrorCode::InvalidSpec, "ellipsoid radius must be > 0");
      Eigen::MatrixXd l;
      try {
        l = factor_sqrt(SymMatrixd(spec.shape));
      } catch (const Error& e) {
        throw Error(ErrorCode::InvalidSpec, std::string("ellipsoid shape: ") + e.what());
      }
      const double scale = std::sqrt(spec.radius_sq);
      Eigen::VectorXd dir(p);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < p; ++j) dir(j) = rng.normal();
        const double radius = std::pow(rng.uniform(), 1.0 / p);
        const Eigen::VectorXd ball = dir.normalized() * radius;
        out.samples.row(i) =
            (Eigen::VectorXd::Constant(p, spec.center) + scale * (l * ball)).transpose();
      }
      break;
    }
    case Distribution::External:
      throw Error(ErrorCode::InvalidSpec, "external samples cannot be generated");
  }

  if (spec.perturb) {
    const double eps = rng.uniform(-0.5, 0.5);
    const double sd = std::sqrt(spec.perturb_variance);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < p; ++j) out.samples(i, j) += eps + sd * rng.normal();
  }
  return out;
}

void write_csv(std::ostream& out, const SampleSet& s) {
  for (Eigen::Index j = 0; j < s.dim(); ++j) out << (j ? "," : "") << 'x' << (j + 1);
  out << '\n';
  std::ostringstream cell;
  cell.imbue(std::locale::classic());
  for (Eigen::Index i = 0; i < s.count(); ++i) {
    for (Eigen::Index j = 0; j < s.dim(); ++j) {
      cell.str("");
      cell << std::setprecision(17) << s.samples(i, j);
      out << (j ? "," : "") << cell.str();
    }
    out << '\n';
  }
}

SampleSet read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, "empty CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) header.push_back(field);
  }
  const auto p = static_cast<Eigen::Index>(header.size());
  for (Eigen::Index j = 0; j < p; ++j)
    if (header[std::size_t(j)] != "x" + std::to_string(j + 1))
      throw Error(ErrorCode::ParseError, "header field " + std::to_string(j + 1) + " must be x" +
                                             std::to_string(j + 1));
  if (p < 1) throw Error(ErrorCode::ParseError, "CSV header has no columns");

  std::vector<double> values;
  Eigen::Index rows = 0;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    Eigen::Index cols = 0;
    while (std::getline(ss, field, ',')) {
      std::istringstream num(field);
      num.imbue(std::locale::classic());
      double v = 0;
      if (!(num >> v) || !(num >> std::ws).eof())
        throw Error(ErrorCode::ParseError,
                    "line " + std::to_string(line_no) + ": bad number '" + field + "'");
      values.push_back(v);
      ++cols;
    }
    if (cols != p)
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected " +
                                             std::to_string(p) + " fields");
    ++rows;
  }
  SampleSet s;
  s.distribution = Distribution::External;
  s.samples = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), rows, p);
  return s;
}

SampleSet read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  return read_csv(in);
}

}  // namespace gdro
