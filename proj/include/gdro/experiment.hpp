#ifndef GDRO_EXPERIMENT_HPP
#define GDRO_EXPERIMENT_HPP

// Seeded portfolio experiments: config parsing, per-replication instances,
// sweeps over theta or radius multipliers, theta selection, and output
// writers (CSV, JSON, SVG).

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gdro/model.hpp"
#include "gdro/solver.hpp"
#include "gdro/stats.hpp"

namespace gdro {

enum class SweepAxis { Core, Space };

struct GammaMethod {
  std::string method = "normal";  // normal | bounded
  double alpha = 0.05;
  double delta = 0.05;
  double radius = 0;  // R for the bounded method
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  int n = 10;
  int p = 10;
  int K = 5;
  int M = 30;
  DistributionSpec distribution;
  /// Seed of the ellipsoid shape when distribution.kind is UniformEllipsoid.
  std::uint64_t shape_seed = 1;
  std::vector<Variant> variants;
  std::vector<double> theta = {0.0};
  std::optional<double> d0;
  std::vector<double> core_mult = {1.0};
  std::vector<double> space_mult = {100.0};
  SweepAxis sweep = SweepAxis::Core;
  int reps = 20;
  GammaMethod gammas;
  /// Empty means mu_bar = sample mean.
  Eigen::VectorXd mu_bar;
  double epsilon = 0.01;
  /// Utility coefficients a_k, b_k ~ U(lo, hi).
  double utility_lo = 0.0;
  double utility_hi = 10.0;
  SolverSettings solver;
  int threads = 0;  // 0: hardware concurrency
  /// false writes solve_ms as 0 so repeated runs are byte-identical.
  bool record_timing = true;
  /// Samples CSV for the gammas command.
  std::string samples_file;

  /// Throws Error(ParseError) naming the offending field path.
  void validate() const;
};

/// Named multiplier grids.
///   unbounded_prose  0.25 0.5 0.75 1 3 25 49 100 225 400 625
///   unbounded_table  0.25 0.5 0.75 1 9 25 49 100 225 400 625
///   bounded_space    1 9 25 49 100 225 400 625
///   bounded_core     0.25 0.5 0.75 1 9 25 49 100
std::vector<double> multiplier_preset(std::string_view name);

/// Strict JSON reader: unknown fields, wrong types and missing required
/// fields throw Error(ParseError) with a "config.field" path.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::string& path);

/// Data of one replication. Samples use stream 2 rep, utility coefficients
/// stream 2 rep + 1, both under the config seed.
struct Instance {
  int rep = 0;
  std::uint64_t seed = 0;
  SampleSet samples;
  MomentInfo moments;
  Eigen::VectorXd mu_bar;
  Eigen::VectorXd a, b;
};

Instance make_instance(const ExperimentConfig& cfg, int rep);

/// One model configuration. Multipliers scale gamma1; an absent
/// space_mult means R^p, an absent core_mult means no core set.
struct Cell {
  Variant variant = Variant::DRO1;
  std::optional<double> theta;
  std::optional<double> d0;
  std::optional<double> core_mult;
  std::optional<double> space_mult;

  std::string key() const;
  friend bool operator==(const Cell& x, const Cell& y) { return x.key() == y.key(); }
};

GdroModel build_model(const Instance& inst, const Cell& cell);

/// The single cell `solve` runs: first theta, core and space multipliers;
/// DRO2 takes the space multiplier as its radius.
Cell single_cell(const ExperimentConfig& cfg, Variant v);

struct RunRecord {
  Cell cell;
  int rep = 0;
  std::uint64_t seed = 0;
  double objective = 0;
  SolveStatus status = SolveStatus::NumericalFailure;
  int iterations = 0;
  double solve_ms = 0;
  Eigen::VectorXd x;
  /// Largest semi-infinite constraint residual over the spot-check samples
  /// (0 when not checked).
  double spot_residual = 0;
};

RunRecord run_cell(const Instance& inst, const Cell& cell, const SolverSettings& settings,
                   int spot_samples = 0);

struct Aggregate {
  Cell cell;
  int count = 0;  // Optimal rows only
  double mean = 0;
  double variance = 0;  // 1/(count-1) divisor
};

struct SweepResult {
  std::vector<RunRecord> rows;
  std::vector<Aggregate> aggregates;

  const Aggregate& at(const Cell& c) const;
};

std::vector<Aggregate> aggregate(const std::vector<RunRecord>& rows);

/// Cells of a theta sweep: every GDRO variant at every theta, plus the DRO1,
/// DRO2(core) and DRO2(space) reference lines.
std::vector<Cell> theta_sweep_cells(const ExperimentConfig& cfg);

/// Cells of a radius sweep along cfg.sweep. DRO2's radius follows the swept
/// multiplier; DRO1 and DRO2 at the fixed space are added as references.
std::vector<Cell> radius_sweep_cells(const ExperimentConfig& cfg);

/// Runs every cell on every replication; replications run concurrently.
SweepResult run_sweep(const ExperimentConfig& cfg, const std::vector<Cell>& cells,
                      int spot_samples = 0);

struct ThetaRecord {
  Variant variant = Variant::GDRO1_1;
  double core_mult = 1;
  std::optional<double> space_mult;
  int rep = 0;
  std::uint64_t seed = 0;
  double v_target = 0;
  double theta = 0;
  double objective_at_theta = 0;
  SolveStatus status = SolveStatus::NumericalFailure;
  /// Re-solve at theta meets v_target + epsilon (within 1e-6).
  bool verified = false;
  /// "conic" (one theta-search program) or "bisection".
  std::string method;
};

/// Smallest theta with v(variant, theta) <= v(DRO2, core) + epsilon.
/// GDRO1 variants solve one conic program and fall back to bisection when
/// it fails numerically; GDRO2 variants bisect on theta.
ThetaRecord find_theta(const Instance& inst, Variant variant, double core_mult,
                       std::optional<double> space_mult, std::optional<double> d0,
                       double epsilon, const SolverSettings& settings);

/// find_theta over every GDRO variant, core multiplier and replication.
std::vector<ThetaRecord> run_theta_search(const ExperimentConfig& cfg);

void write_rows_csv(std::ostream& out, const SweepResult& r, bool record_timing = true);
void write_summary_csv(std::ostream& out, const SweepResult& r);
/// Radius-sweep table: one line per (statistic, variant), multipliers as columns.
void write_table_csv(std::ostream& out, const SweepResult& r, SweepAxis axis);
void write_theta_csv(std::ostream& out, const std::vector<ThetaRecord>& recs);

/// Reads rows and summary CSVs and throws ParseError when a summary line
/// disagrees with the recomputation from rows.
SweepResult load_sweep(std::istream& rows_csv, std::istream& summary_csv);

struct Series {
  std::string label;
  std::vector<double> x, y;
  bool dashed = false;
};

/// Minimal line chart: axes, ticks, one polyline per series, legend.
void write_svg(std::ostream& out, const std::vector<Series>& series, const std::string& title,
               const std::string& xlabel, const std::string& ylabel);

/// Mean curves per GDRO variant over theta, DRO references as horizontal lines.
std::vector<Series> theta_series(const SweepResult& r);

std::string format_double(double v);

}  // namespace gdro

#endif  // GDRO_EXPERIMENT_HPP
