// Command-line front end: solve, sweep-theta, sweep-radius, find-theta, gammas.
// Exit codes: 0 success, 2 infeasible, 3 numerical failure, 4 invalid input.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "gdro/experiment.hpp"
#include "gdro/reformulate.hpp"

namespace fs = std::filesystem;
using namespace gdro;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kInfeasible = 2;
constexpr int kNumerical = 3;
constexpr int kInvalid = 4;

int exit_code(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return kOk;
    case SolveStatus::PrimalInfeasible:
    case SolveStatus::DualInfeasible: return kInfeasible;
    default: return kNumerical;
  }
}

// Worst status wins: numerical failure over infeasibility over success.
int combine(int a, int b) {
  if (a == kNumerical || b == kNumerical) return kNumerical;
  return std::max(a, b);
}

struct Options {
  std::string config;
  std::string out = ".";
  std::optional<int> reps;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool no_timing = false;
  // gammas
  std::string samples;
  std::optional<std::string> method;
  std::optional<double> alpha, delta, radius;
};

ExperimentConfig load(const Options& o) {
  ExperimentConfig cfg = load_config(o.config);
  if (o.reps) cfg.reps = *o.reps;
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  if (o.no_timing) cfg.record_timing = false;
  cfg.validate();
  return cfg;
}

std::ofstream open_out(const Options& o, const std::string& name) {
  fs::create_directories(o.out);
  const fs::path path = fs::path(o.out) / name;
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
  return f;
}

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json cell_json(const Cell& c) {
  json j;
  j["variant"] = std::string(to_string(c.variant));
  auto put = [&](const char* k, const std::optional<double>& v) { j[k] = v ? json(*v) : json(nullptr); };
  put("theta", c.theta);
  put("d0", c.d0);
  put("core_mult", c.core_mult);
  put("space_mult", c.space_mult);
  return j;
}

int sweep_status(const SweepResult& r) {
  int code = kOk;
  for (const auto& row : r.rows) code = combine(code, exit_code(row.status));
  return code;
}

int cmd_solve(const Options& o) {
  const ExperimentConfig cfg = load(o);
  if (cfg.variants.size() != 1)
    throw Error(ErrorCode::ParseError, "config.variants: solve needs exactly one variant");
  const Instance inst = make_instance(cfg, 0);
  const Cell cell = single_cell(cfg, cfg.variants.front());
  const RunRecord rec = run_cell(inst, cell, cfg.solver);

  std::printf("variant    %s\n", std::string(to_string(cell.variant)).c_str());
  std::printf("status     %s\n", std::string(to_string(rec.status)).c_str());
  std::printf("objective  %s\n", format_double(rec.objective).c_str());
  std::printf("iterations %d\n", rec.iterations);
  if (rec.x.size()) {
    std::printf("x         ");
    for (Eigen::Index i = 0; i < rec.x.size(); ++i) std::printf(" %.10g", rec.x(i));
    std::printf("\n");
  }

  json rep;
  rep["command"] = "solve";
  rep["seed"] = cfg.seed;
  rep["cell"] = cell_json(cell);
  rep["status"] = std::string(to_string(rec.status));
  rep["objective"] = rec.status == SolveStatus::Optimal ? json(rec.objective) : json(nullptr);
  rep["iterations"] = rec.iterations;
  rep["solve_ms"] = cfg.record_timing ? rec.solve_ms : 0.0;
  rep["x"] = vec_json(rec.x);
  rep["gamma1"] = inst.moments.gamma1;
  rep["gamma2"] = inst.moments.gamma2;
  rep["a"] = vec_json(inst.a);
  rep["b"] = vec_json(inst.b);
  open_out(o, "report.json") << rep.dump(2) << '\n';
  return exit_code(rec.status);
}

void print_summary(const SweepResult& r) {
  std::printf("%-8s %8s %6s %10s %10s %5s %20s %14s\n", "variant", "theta", "d0", "core_mult",
              "space_mult", "count", "mean", "variance");
  auto s = [](const std::optional<double>& v) { return v ? format_double(*v).substr(0, 10) : std::string("-"); };
  for (const auto& a : r.aggregates)
    std::printf("%-8s %8s %6s %10s %10s %5d %20.12g %14.6g\n",
                std::string(to_string(a.cell.variant)).c_str(), s(a.cell.theta).c_str(),
                s(a.cell.d0).c_str(), s(a.cell.core_mult).c_str(), s(a.cell.space_mult).c_str(),
                a.count, a.mean, a.variance);
}

void write_sweep(const Options& o, const ExperimentConfig& cfg, const SweepResult& r,
                 const char* command) {
  {
    auto f = open_out(o, "rows.csv");
    write_rows_csv(f, r, cfg.record_timing);
  }
  {
    auto f = open_out(o, "summary.csv");
    write_summary_csv(f, r);
  }
  json rep;
  rep["command"] = command;
  rep["seed"] = cfg.seed;
  rep["reps"] = cfg.reps;
  rep["distribution"] = std::string(to_string(cfg.distribution.kind));
  if (cfg.distribution.kind == Distribution::UniformEllipsoid) rep["shape_seed"] = cfg.shape_seed;
  json cells = json::array();
  for (const auto& a : r.aggregates) {
    json c = cell_json(a.cell);
    c["count"] = a.count;
    c["mean"] = a.mean;
    c["variance"] = a.variance;
    cells.push_back(c);
  }
  rep["cells"] = cells;
  open_out(o, "report.json") << rep.dump(2) << '\n';
}

int cmd_sweep_theta(const Options& o) {
  const ExperimentConfig cfg = load(o);
  const SweepResult r = run_sweep(cfg, theta_sweep_cells(cfg));
  write_sweep(o, cfg, r, "sweep-theta");
  auto f = open_out(o, "theta.svg");
  write_svg(f, theta_series(r), "Optimal objective value versus theta", "theta",
            "mean optimal value");
  print_summary(r);
  return sweep_status(r);
}

int cmd_sweep_radius(const Options& o) {
  const ExperimentConfig cfg = load(o);
  const SweepResult r = run_sweep(cfg, radius_sweep_cells(cfg));
  write_sweep(o, cfg, r, "sweep-radius");
  auto f = open_out(o, "table.csv");
  write_table_csv(f, r, cfg.sweep);
  print_summary(r);
  return sweep_status(r);
}

int cmd_find_theta(const Options& o) {
  const ExperimentConfig cfg = load(o);
  const auto recs = run_theta_search(cfg);
  {
    auto f = open_out(o, "theta.csv");
    write_theta_csv(f, recs);
  }
  int code = kOk;
  std::printf("%-8s %10s %5s %20s %20s %-10s %s\n", "variant", "core_mult", "rep", "v_target", "theta",
              "method", "status");
  for (const auto& r : recs) {
    code = combine(code, exit_code(r.status));
    if (r.status == SolveStatus::Optimal && !r.verified) code = kNumerical;
    std::printf("%-8s %10g %5d %20.12g %20.12g %-10s %s%s\n", std::string(to_string(r.variant)).c_str(),
                r.core_mult, r.rep, r.v_target, r.theta, r.method.c_str(), std::string(to_string(r.status)).c_str(),
                r.status == SolveStatus::Optimal && !r.verified ? " (unverified)" : "");
  }
  return code;
}

int cmd_gammas(const Options& o) {
  ExperimentConfig cfg;
  bool have_cfg = !o.config.empty();
  if (have_cfg) cfg = load_config(o.config);
  std::string samples = o.samples.empty() ? cfg.samples_file : o.samples;
  if (samples.empty()) throw Error(ErrorCode::ParseError, "gammas needs --samples or config.samples");
  GammaMethod gm = cfg.gammas;
  if (o.method) gm.method = *o.method;
  if (o.alpha) gm.alpha = *o.alpha;
  if (o.delta) gm.delta = *o.delta;
  if (o.radius) gm.radius = *o.radius;

  const SampleSet s = read_csv_file(samples);
  const int m = int(s.count()), p = int(s.dim());
  GammaPair g;
  if (gm.method == "normal") g = gamma_normal(m, p, gm.alpha);
  else if (gm.method == "bounded") g = gamma_bounded(m, p, gm.delta, gm.radius);
  else throw Error(ErrorCode::ParseError, "method: expected normal or bounded");

  // A degenerate set whose rows all coincide has no covariance; every row
  // then sits at the center, so the enclosing radius is 0.
  double tilde = 0;
  const bool constant = (s.samples.rowwise() - s.samples.row(0)).cwiseAbs().maxCoeff() == 0.0;
  if (!constant) {
    const SampleMoments sm = estimate_moments(s);
    const Eigen::VectorXd mu_bar = cfg.mu_bar.size() ? cfg.mu_bar : sm.mu0;
    tilde = min_enclosing_gamma(s, mu_bar, sm.sigma0_inv);
  }
  std::printf("M           %d\np           %d\nmethod      %s\n", m, p, gm.method.c_str());
  std::printf("gamma1      %s\ngamma2      %s\ngamma_tilde %s\n", format_double(g.gamma1).c_str(),
              format_double(g.gamma2).c_str(), format_double(tilde).c_str());
  json rep{{"command", "gammas"}, {"M", m}, {"p", p}, {"method", gm.method},
           {"gamma1", g.gamma1}, {"gamma2", g.gamma2}, {"gamma_tilde", tilde}};
  open_out(o, "gammas.json") << rep.dump(2) << '\n';
  return kOk;
}

int error_exit(const Error& e) {
  std::fprintf(stderr, "error: %s\n", e.what());
  switch (e.code()) {
    case ErrorCode::StatusNotOptimal:
    case ErrorCode::NoConvergence:
    case ErrorCode::NotPositiveDefinite: return kNumerical;
    default: return kInvalid;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Globalized distributionally robust optimization experiments"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", o.config, "experiment config (JSON)");
    if (config_required) c->required();
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--reps", o.reps, "number of replications")->check(CLI::PositiveNumber);
    sub->add_option("--seed", o.seed, "base seed");
    sub->add_option("--threads", o.threads, "worker threads (0: all cores)");
    sub->add_flag("--no-timing", o.no_timing, "write solve_ms as 0 for byte-identical output");
  };
  auto* solve_cmd = app.add_subcommand("solve", "solve one model");
  auto* theta_cmd = app.add_subcommand("sweep-theta", "objective versus theta");
  auto* radius_cmd = app.add_subcommand("sweep-radius", "objective versus core or space radius");
  auto* find_cmd = app.add_subcommand("find-theta", "smallest theta meeting v(DRO2) + epsilon");
  auto* gammas_cmd = app.add_subcommand("gammas", "confidence radii from a samples CSV");
  for (auto* s : {solve_cmd, theta_cmd, radius_cmd, find_cmd}) common(s, true);
  common(gammas_cmd, false);
  gammas_cmd->add_option("--samples", o.samples, "samples CSV (header x1..xp)");
  gammas_cmd->add_option("--method", o.method, "normal or bounded");
  gammas_cmd->add_option("--alpha", o.alpha, "significance level (normal)");
  gammas_cmd->add_option("--delta", o.delta, "confidence parameter (bounded)");
  gammas_cmd->add_option("--R", o.radius, "support radius (bounded)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInvalid;
  }

  try {
    if (solve_cmd->parsed()) return cmd_solve(o);
    if (theta_cmd->parsed()) return cmd_sweep_theta(o);
    if (radius_cmd->parsed()) return cmd_sweep_radius(o);
    if (find_cmd->parsed()) return cmd_find_theta(o);
    if (gammas_cmd->parsed()) return cmd_gammas(o);
  } catch (const Error& e) {
    return error_exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInvalid;
  }
  return kInvalid;
}
