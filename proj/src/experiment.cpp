#include "gdro/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "gdro/reformulate.hpp"

namespace gdro {

using nlohmann::json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::string opt_str(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

[[noreturn]] void config_error(const std::string& path, const std::string& msg) {
  throw Error(ErrorCode::ParseError, path + ": " + msg);
}

// Object reader that remembers which keys were consumed so leftovers can be
// reported as unknown fields.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) config_error(path_, "expected an object");
  }

  const json* get(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) config_error(path(it.key()), "unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

double as_number(const json& v, const std::string& path) {
  if (!v.is_number()) config_error(path, "expected a number");
  return v.get<double>();
}

long long as_integer(const json& v, const std::string& path) {
  if (!v.is_number_integer()) config_error(path, "expected an integer");
  return v.get<long long>();
}

bool as_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) config_error(path, "expected true or false");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) config_error(path, "expected a string");
  return v.get<std::string>();
}

// number | [numbers] | preset name | {"from", "to", "count"}
std::vector<double> as_grid(const json& v, const std::string& path) {
  std::vector<double> out;
  if (v.is_number()) {
    out.push_back(v.get<double>());
  } else if (v.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i)
      out.push_back(as_number(v[i], path + "[" + std::to_string(i) + "]"));
  } else if (v.is_string()) {
    try {
      out = multiplier_preset(v.get<std::string>());
    } catch (const Error&) {
      config_error(path, "unknown preset '" + v.get<std::string>() + "'");
    }
  } else if (v.is_object()) {
    Fields f(v, path);
    const json* from = f.get("from");
    const json* to = f.get("to");
    const json* count = f.get("count");
    f.finish();
    if (!from || !to || !count) config_error(path, "range needs from, to and count");
    const double a = as_number(*from, f.path("from"));
    const double b = as_number(*to, f.path("to"));
    const long long n = as_integer(*count, f.path("count"));
    if (n < 1) config_error(f.path("count"), "must be >= 1");
    for (long long i = 0; i < n; ++i)
      out.push_back(n == 1 ? a : a + (b - a) * double(i) / double(n - 1));
  } else {
    config_error(path, "expected a number, an array, a preset name or a range");
  }
  if (out.empty()) config_error(path, "grid is empty");
  return out;
}

void read_distribution(const json& v, const std::string& path, ExperimentConfig& cfg) {
  auto kind = [&](const std::string& name, const std::string& p) {
    try {
      const Distribution d = distribution_from_string(name);
      if (d == Distribution::External) config_error(p, "external samples cannot be generated");
      return d;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ParseError) throw;
      config_error(p, "unknown distribution '" + name + "'");
    }
  };
  if (v.is_string()) {
    cfg.distribution.kind = kind(v.get<std::string>(), path);
    return;
  }
  Fields f(v, path);
  if (const json* k = f.get("kind")) cfg.distribution.kind = kind(as_string(*k, f.path("kind")), f.path("kind"));
  else config_error(f.path("kind"), "required");
  if (const json* c = f.get("center")) cfg.distribution.center = as_number(*c, f.path("center"));
  if (const json* c = f.get("variance")) cfg.distribution.variance = as_number(*c, f.path("variance"));
  if (const json* c = f.get("box")) {
    if (!c->is_array() || c->size() != 2) config_error(f.path("box"), "expected [lo, hi]");
    cfg.distribution.box_lo = as_number((*c)[0], f.path("box") + "[0]");
    cfg.distribution.box_hi = as_number((*c)[1], f.path("box") + "[1]");
  }
  if (const json* c = f.get("radius_sq")) cfg.distribution.radius_sq = as_number(*c, f.path("radius_sq"));
  if (const json* c = f.get("perturb")) cfg.distribution.perturb = as_bool(*c, f.path("perturb"));
  if (const json* c = f.get("perturb_variance"))
    cfg.distribution.perturb_variance = as_number(*c, f.path("perturb_variance"));
  if (const json* c = f.get("shape_seed"))
    cfg.shape_seed = static_cast<std::uint64_t>(as_integer(*c, f.path("shape_seed")));
  f.finish();
}

void read_solver(const json& v, const std::string& path, SolverSettings& s) {
  Fields f(v, path);
  if (const json* c = f.get("max_iters")) s.max_iters = int(as_integer(*c, f.path("max_iters")));
  if (const json* c = f.get("tol_gap")) s.tol_gap = as_number(*c, f.path("tol_gap"));
  if (const json* c = f.get("tol_feas")) s.tol_feas = as_number(*c, f.path("tol_feas"));
  if (const json* c = f.get("step_fraction")) s.step_fraction = as_number(*c, f.path("step_fraction"));
  f.finish();
}

MomentInfo instance_moments(const ExperimentConfig& cfg, const SampleSet& s) {
  const SampleMoments sm = estimate_moments(s);
  GammaPair g;
  if (cfg.gammas.method == "bounded")
    g = gamma_bounded(int(s.count()), int(s.dim()), cfg.gammas.delta, cfg.gammas.radius);
  else
    g = gamma_normal(int(s.count()), int(s.dim()), cfg.gammas.alpha);
  return with_radii(sm, g.gamma1, g.gamma2);
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

// Runs fn(rep) for every replication on a small pool of threads.
void parallel_reps(int reps, int threads, const std::function<void(int)>& fn) {
  int n = threads > 0 ? threads : int(std::max(1u, std::thread::hardware_concurrency()));
  n = std::min(n, reps);
  if (n <= 1) {
    for (int r = 0; r < reps; ++r) fn(r);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::vector<std::thread> pool;
  for (int t = 0; t < n; ++t)
    pool.emplace_back([&, t] {
      try {
        for (int r = next++; r < reps; r = next++) fn(r);
      } catch (...) {
        errors[std::size_t(t)] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void push_unique(std::vector<Cell>& cells, const Cell& c) {
  if (std::find(cells.begin(), cells.end(), c) == cells.end()) cells.push_back(c);
}

Cell gdro_cell(const ExperimentConfig& cfg, Variant v, double theta, double core,
               double space) {
  Cell c{v, theta, std::nullopt, core, std::nullopt};
  if (is_gdro2(v)) c.d0 = cfg.d0;
  if (has_bounded_space(v)) c.space_mult = space;
  return c;
}

Cell dro1_cell() { return Cell{Variant::DRO1, std::nullopt, std::nullopt, std::nullopt, std::nullopt}; }
Cell dro2_cell(double mult) { return Cell{Variant::DRO2, std::nullopt, std::nullopt, std::nullopt, mult}; }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

SolveStatus status_from_string(const std::string& s) {
  for (auto st : {SolveStatus::Optimal, SolveStatus::PrimalInfeasible, SolveStatus::DualInfeasible,
                  SolveStatus::IterLimit, SolveStatus::NumericalFailure})
    if (to_string(st) == s) return st;
  throw Error(ErrorCode::ParseError, "unknown status '" + s + "'");
}

const char* kRowsHeader =
    "variant,theta,d0,core_mult,space_mult,rep,seed,objective,status,iterations,solve_ms";
const char* kSummaryHeader = "variant,theta,d0,core_mult,space_mult,count,mean,variance";

}  // namespace

std::vector<double> multiplier_preset(std::string_view name) {
  if (name == "unbounded_prose") return {0.25, 0.5, 0.75, 1, 3, 25, 49, 100, 225, 400, 625};
  if (name == "unbounded_table") return {0.25, 0.5, 0.75, 1, 9, 25, 49, 100, 225, 400, 625};
  if (name == "bounded_space") return {1, 9, 25, 49, 100, 225, 400, 625};
  if (name == "bounded_core") return {0.25, 0.5, 0.75, 1, 9, 25, 49, 100};
  throw Error(ErrorCode::InvalidSpec, "unknown multiplier preset '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
  auto positive = [](const std::vector<double>& g, const char* path) {
    if (g.empty()) config_error(path, "grid is empty");
    for (double v : g)
      if (!(v > 0) || !std::isfinite(v)) config_error(path, "multipliers must be positive");
  };
  if (n < 1 || p < 1) config_error("config.p", "dimensions must be >= 1");
  if (n != p) config_error("config.n", "portfolio models need n == p");
  if (K < 1) config_error("config.K", "must be >= 1");
  if (M < 2) config_error("config.M", "must be >= 2");
  if (reps < 1) config_error("config.reps", "must be >= 1");
  if (variants.empty()) config_error("config.variants", "at least one variant required");
  if (theta.empty()) config_error("config.theta", "grid is empty");
  for (double t : theta)
    if (!(t >= 0) || !std::isfinite(t)) config_error("config.theta", "must be >= 0");
  positive(core_mult, "config.core_mult");
  positive(space_mult, "config.space_mult");
  if (!(epsilon > 0)) config_error("config.epsilon", "must be > 0");
  if (!(utility_hi > utility_lo)) config_error("config.utility", "hi must exceed lo");
  if (gammas.method != "normal" && gammas.method != "bounded")
    config_error("config.gammas.method", "expected normal or bounded");
  if (!(gammas.alpha > 0 && gammas.alpha < 1)) config_error("config.alpha", "must lie in (0, 1)");
  if (gammas.method == "bounded") {
    if (!(gammas.delta > 0 && gammas.delta < 1)) config_error("config.gammas.delta", "must lie in (0, 1)");
    if (!(gammas.radius > 0)) config_error("config.gammas.R", "required for the bounded method");
  } else if (M <= p) {
    config_error("config.M", "normal radii need M > p");
  }
  if (mu_bar.size() != 0 && mu_bar.size() != p) config_error("config.mu_bar", "length must equal p");
  for (Variant v : variants) {
    if (is_gdro2(v) && !d0)
      config_error("config.d0", "required for " + std::string(to_string(v)));
    if (is_gdro(v) && has_bounded_space(v))
      for (double c : core_mult)
        for (double s : space_mult)
          if (!(c < s))
            config_error("config.core_mult",
                         "core multiplier " + format_double(c) + " must be below space multiplier " +
                             format_double(s) + " for " + std::string(to_string(v)));
  }
  if (d0 && !(*d0 >= 0)) config_error("config.d0", "must be >= 0");
  try {
    solver.validate();
  } catch (const Error& e) {
    config_error("config.solver", e.what());
  }
}

ExperimentConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    config_error("config", std::string("invalid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  Fields f(j, "config");
  auto integer = [&](const char* key, auto& dst, long long lo) {
    if (const json* v = f.get(key)) {
      const long long x = as_integer(*v, f.path(key));
      if (x < lo) config_error(f.path(key), "must be >= " + std::to_string(lo));
      dst = static_cast<std::remove_reference_t<decltype(dst)>>(x);
    }
  };
  integer("seed", cfg.seed, 0);
  integer("n", cfg.n, 1);
  integer("p", cfg.p, 1);
  integer("K", cfg.K, 1);
  integer("M", cfg.M, 2);
  integer("reps", cfg.reps, 1);
  integer("threads", cfg.threads, 0);
  if (const json* v = f.get("distribution")) read_distribution(*v, f.path("distribution"), cfg);
  if (const json* v = f.get("variants")) {
    std::vector<json> names;
    if (v->is_array()) names.assign(v->begin(), v->end());
    else names.push_back(*v);
    for (std::size_t i = 0; i < names.size(); ++i) {
      const std::string path = f.path("variants") + (v->is_array() ? "[" + std::to_string(i) + "]" : "");
      try {
        cfg.variants.push_back(variant_from_string(as_string(names[i], path)));
      } catch (const Error& e) {
        if (e.code() == ErrorCode::ParseError) throw;
        config_error(path, "unknown variant '" + names[i].get<std::string>() + "'");
      }
    }
  } else {
    config_error(f.path("variants"), "required");
  }
  if (const json* v = f.get("theta")) cfg.theta = as_grid(*v, f.path("theta"));
  if (const json* v = f.get("d0")) cfg.d0 = as_number(*v, f.path("d0"));
  if (const json* v = f.get("core_mult")) cfg.core_mult = as_grid(*v, f.path("core_mult"));
  if (const json* v = f.get("space_mult")) cfg.space_mult = as_grid(*v, f.path("space_mult"));
  if (const json* v = f.get("sweep")) {
    const std::string s = as_string(*v, f.path("sweep"));
    if (s == "core") cfg.sweep = SweepAxis::Core;
    else if (s == "space") cfg.sweep = SweepAxis::Space;
    else config_error(f.path("sweep"), "expected core or space");
  }
  if (const json* v = f.get("alpha")) cfg.gammas.alpha = as_number(*v, f.path("alpha"));
  if (const json* v = f.get("gammas")) {
    Fields g(*v, f.path("gammas"));
    if (const json* m = g.get("method")) cfg.gammas.method = as_string(*m, g.path("method"));
    if (const json* m = g.get("delta")) cfg.gammas.delta = as_number(*m, g.path("delta"));
    if (const json* m = g.get("R")) cfg.gammas.radius = as_number(*m, g.path("R"));
    g.finish();
  }
  if (const json* v = f.get("mu_bar")) {
    if (v->is_string()) {
      if (v->get<std::string>() != "sample_mean")
        config_error(f.path("mu_bar"), "expected \"sample_mean\" or an explicit vector");
    } else if (v->is_array()) {
      cfg.mu_bar.resize(Eigen::Index(v->size()));
      for (std::size_t i = 0; i < v->size(); ++i)
        cfg.mu_bar(Eigen::Index(i)) = as_number((*v)[i], f.path("mu_bar") + "[" + std::to_string(i) + "]");
    } else {
      config_error(f.path("mu_bar"), "expected \"sample_mean\" or an explicit vector");
    }
  }
  if (const json* v = f.get("epsilon")) cfg.epsilon = as_number(*v, f.path("epsilon"));
  if (const json* v = f.get("utility")) {
    Fields u(*v, f.path("utility"));
    if (const json* m = u.get("lo")) cfg.utility_lo = as_number(*m, u.path("lo"));
    if (const json* m = u.get("hi")) cfg.utility_hi = as_number(*m, u.path("hi"));
    u.finish();
  }
  if (const json* v = f.get("solver")) read_solver(*v, f.path("solver"), cfg.solver);
  if (const json* v = f.get("record_timing")) cfg.record_timing = as_bool(*v, f.path("record_timing"));
  if (const json* v = f.get("samples")) cfg.samples_file = as_string(*v, f.path("samples"));
  f.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

Instance make_instance(const ExperimentConfig& cfg, int rep) {
  Instance inst;
  inst.rep = rep;
  inst.seed = cfg.seed;
  DistributionSpec spec = cfg.distribution;
  if (spec.kind == Distribution::UniformEllipsoid && spec.shape.size() == 0)
    spec.shape = make_ellipsoid_shape(cfg.p, cfg.shape_seed);
  inst.samples = generate(spec, cfg.M, cfg.p, cfg.seed, 2 * std::uint64_t(rep));
  inst.moments = instance_moments(cfg, inst.samples);
  inst.mu_bar = cfg.mu_bar.size() ? cfg.mu_bar : inst.moments.mu0;
  CounterRng rng(cfg.seed, 2 * std::uint64_t(rep) + 1);
  inst.a.resize(cfg.K);
  inst.b.resize(cfg.K);
  for (int k = 0; k < cfg.K; ++k) {
    inst.a(k) = rng.uniform(cfg.utility_lo, cfg.utility_hi);
    inst.b(k) = rng.uniform(cfg.utility_lo, cfg.utility_hi);
  }
  return inst;
}

std::string Cell::key() const {
  return std::string(to_string(variant)) + "," + opt_str(theta) + "," + opt_str(d0) + "," +
         opt_str(core_mult) + "," + opt_str(space_mult);
}

GdroModel build_model(const Instance& inst, const Cell& cell) {
  const MomentInfo& mo = inst.moments;
  auto ellipsoid = [&](const std::optional<double>& mult) -> std::optional<Ellipsoidd> {
    if (!mult) return std::nullopt;
    return concentric_ellipsoid(mo, inst.mu_bar, *mult * mo.gamma1);
  };
  return portfolio_model(inst.a, inst.b, cell.variant, mo, ellipsoid(cell.core_mult),
                         ellipsoid(cell.space_mult), cell.theta.value_or(0.0), cell.d0);
}

Cell single_cell(const ExperimentConfig& cfg, Variant v) {
  if (v == Variant::DRO1) return dro1_cell();
  if (v == Variant::DRO2) return dro2_cell(cfg.space_mult.front());
  return gdro_cell(cfg, v, cfg.theta.front(), cfg.core_mult.front(), cfg.space_mult.front());
}

RunRecord run_cell(const Instance& inst, const Cell& cell, const SolverSettings& settings,
                   int spot_samples) {
  RunRecord rec;
  rec.cell = cell;
  rec.rep = inst.rep;
  rec.seed = inst.seed;
  const GdroModel m = build_model(inst, cell);
  const ConicProgram prog = reformulate(m);
  const auto t0 = std::chrono::steady_clock::now();
  const Solution sol = solve(prog, settings);
  rec.solve_ms = elapsed_ms(t0);
  rec.status = sol.status;
  rec.iterations = sol.iterations;
  rec.objective = std::numeric_limits<double>::quiet_NaN();
  if (sol.status == SolveStatus::Optimal) {
    const ModelSolution ms = recover_solution(m, prog, sol);
    rec.objective = ms.objective;
    rec.x = ms.x;
    if (spot_samples > 0)
      rec.spot_residual =
          spot_check(m, ms, spot_samples, inst.seed * 1000003u + std::uint64_t(inst.rep)).max_residual;
  }
  return rec;
}

const Aggregate& SweepResult::at(const Cell& c) const {
  const std::string k = c.key();
  for (const auto& a : aggregates)
    if (a.cell.key() == k) return a;
  throw Error(ErrorCode::InvalidModel, "no aggregate for cell " + k);
}

std::vector<Aggregate> aggregate(const std::vector<RunRecord>& rows) {
  std::vector<Aggregate> out;
  std::map<std::string, std::size_t> index;
  std::vector<std::vector<double>> values;
  for (const auto& r : rows) {
    const std::string k = r.cell.key();
    auto it = index.find(k);
    if (it == index.end()) {
      it = index.emplace(k, out.size()).first;
      out.push_back(Aggregate{r.cell});
      values.emplace_back();
    }
    if (r.status == SolveStatus::Optimal) values[it->second].push_back(r.objective);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& v = values[i];
    out[i].count = int(v.size());
    double sum = 0;
    for (double x : v) sum += x;
    out[i].mean = v.empty() ? std::numeric_limits<double>::quiet_NaN() : sum / double(v.size());
    double ss = 0;
    for (double x : v) ss += (x - out[i].mean) * (x - out[i].mean);
    out[i].variance = v.size() > 1 ? ss / double(v.size() - 1) : 0.0;
  }
  return out;
}

std::vector<Cell> theta_sweep_cells(const ExperimentConfig& cfg) {
  const double core = cfg.core_mult.front();
  const double space = cfg.space_mult.front();
  std::vector<Cell> cells;
  for (Variant v : cfg.variants) {
    if (!is_gdro(v)) continue;
    for (double th : cfg.theta) push_unique(cells, gdro_cell(cfg, v, th, core, space));
  }
  push_unique(cells, dro1_cell());
  push_unique(cells, dro2_cell(core));
  push_unique(cells, dro2_cell(space));
  return cells;
}

std::vector<Cell> radius_sweep_cells(const ExperimentConfig& cfg) {
  const double theta = cfg.theta.front();
  const double core = cfg.core_mult.front();
  const double space = cfg.space_mult.front();
  const bool core_axis = cfg.sweep == SweepAxis::Core;
  const auto& grid = core_axis ? cfg.core_mult : cfg.space_mult;
  std::vector<Cell> cells;
  for (double m : grid)
    for (Variant v : cfg.variants) {
      if (v == Variant::DRO1) continue;
      if (v == Variant::DRO2) {
        push_unique(cells, dro2_cell(m));
        continue;
      }
      if (!core_axis && !has_bounded_space(v)) continue;
      push_unique(cells, gdro_cell(cfg, v, theta, core_axis ? m : core, core_axis ? space : m));
    }
  // References for the ordering checks.
  push_unique(cells, dro1_cell());
  bool bounded = false;
  for (Variant v : cfg.variants)
    if (is_gdro(v) && has_bounded_space(v)) bounded = true;
  if (core_axis) {
    if (bounded) push_unique(cells, dro2_cell(space));
  } else {
    push_unique(cells, dro2_cell(core));
    for (Variant v : cfg.variants)
      if (is_gdro(v) && !has_bounded_space(v)) push_unique(cells, gdro_cell(cfg, v, theta, core, space));
  }
  return cells;
}

SweepResult run_sweep(const ExperimentConfig& cfg, const std::vector<Cell>& cells,
                      int spot_samples) {
  std::vector<std::vector<RunRecord>> by_rep(static_cast<std::size_t>(cfg.reps));
  parallel_reps(cfg.reps, cfg.threads, [&](int rep) {
    const Instance inst = make_instance(cfg, rep);
    auto& out = by_rep[std::size_t(rep)];
    for (const Cell& c : cells) out.push_back(run_cell(inst, c, cfg.solver, spot_samples));
  });
  SweepResult r;
  for (std::size_t c = 0; c < cells.size(); ++c)
    for (const auto& rep : by_rep) r.rows.push_back(rep[c]);
  r.aggregates = aggregate(r.rows);
  return r;
}

ThetaRecord find_theta(const Instance& inst, Variant variant, double core_mult,
                       std::optional<double> space_mult, std::optional<double> d0,
                       double epsilon, const SolverSettings& settings) {
  if (!is_gdro(variant))
    throw Error(ErrorCode::InvalidModel, "theta search needs a GDRO variant");
  ThetaRecord rec;
  rec.variant = variant;
  rec.core_mult = core_mult;
  rec.space_mult = has_bounded_space(variant) ? space_mult : std::nullopt;
  rec.rep = inst.rep;
  rec.seed = inst.seed;

  const RunRecord target = run_cell(inst, dro2_cell(core_mult), settings);
  if (target.status != SolveStatus::Optimal) {
    rec.status = target.status;
    return rec;
  }
  rec.v_target = target.objective;
  const double bound = rec.v_target + epsilon;

  Cell cell{variant, 0.0, is_gdro2(variant) ? d0 : std::nullopt, core_mult, rec.space_mult};
  auto value_at = [&](double th) {
    cell.theta = th;
    return run_cell(inst, cell, settings);
  };

  // v(theta) is nonincreasing; bracket, then bisect to a relative 1e-7.
  auto bisect = [&] {
    rec.method = "bisection";
    RunRecord at = value_at(0.0);
    rec.status = at.status;
    if (at.status != SolveStatus::Optimal) return;
    if (at.objective <= bound) {
      rec.theta = 0.0;
      return;
    }
    double lo = 0.0;
    double hi = 1.0;
    for (;;) {
      at = value_at(hi);
      if (at.status != SolveStatus::Optimal) {
        rec.status = at.status;
        return;
      }
      if (at.objective <= bound) break;
      lo = hi;
      hi *= 2.0;
      if (hi > 1e6) {
        rec.status = SolveStatus::PrimalInfeasible;
        return;
      }
    }
    while (hi - lo > 1e-7 * std::max(1.0, hi)) {
      const double mid = 0.5 * (lo + hi);
      at = value_at(mid);
      if (at.status != SolveStatus::Optimal) {
        rec.status = at.status;
        return;
      }
      (at.objective <= bound ? hi : lo) = mid;
    }
    rec.theta = hi;
  };

  if (is_gdro1(variant)) {
    const GdroModel m = build_model(inst, cell);
    const ConicProgram prog = build_theta_search(m, rec.v_target, epsilon);
    const Solution sol = solve(prog, settings);
    rec.method = "conic";
    rec.status = sol.status;
    if (sol.status == SolveStatus::Optimal) {
      rec.theta = std::max(0.0, prog.scalar(sol.z, "theta"));
    } else if (sol.status == SolveStatus::NumericalFailure || sol.status == SolveStatus::IterLimit) {
      // The bound row's multiplier grows like 1/|v'(theta)|, which can
      // defeat the interior-point method where v flattens.
      bisect();
    }
  } else {
    bisect();
  }
  if (rec.status != SolveStatus::Optimal) return rec;
  const RunRecord check = value_at(rec.theta);
  rec.objective_at_theta = check.objective;
  rec.verified = check.status == SolveStatus::Optimal && check.objective <= bound + 1e-6;
  return rec;
}

std::vector<ThetaRecord> run_theta_search(const ExperimentConfig& cfg) {
  std::vector<Variant> variants;
  for (Variant v : cfg.variants)
    if (is_gdro(v)) variants.push_back(v);
  if (variants.empty())
    throw Error(ErrorCode::ParseError, "config.variants: theta search needs a GDRO variant");
  std::vector<std::vector<ThetaRecord>> by_rep(static_cast<std::size_t>(cfg.reps));
  parallel_reps(cfg.reps, cfg.threads, [&](int rep) {
    const Instance inst = make_instance(cfg, rep);
    for (Variant v : variants)
      for (double c : cfg.core_mult)
        by_rep[std::size_t(rep)].push_back(
            find_theta(inst, v, c, cfg.space_mult.front(), cfg.d0, cfg.epsilon, cfg.solver));
  });
  std::vector<ThetaRecord> out;
  const std::size_t per = by_rep.front().size();
  for (std::size_t i = 0; i < per; ++i)
    for (const auto& rep : by_rep) out.push_back(rep[i]);
  return out;
}

void write_rows_csv(std::ostream& out, const SweepResult& r, bool record_timing) {
  out << kRowsHeader << '\n';
  for (const auto& row : r.rows)
    out << row.cell.key() << ',' << row.rep << ',' << row.seed << ',' << format_double(row.objective)
        << ',' << to_string(row.status) << ',' << row.iterations << ','
        << format_double(record_timing ? row.solve_ms : 0.0) << '\n';
}

void write_summary_csv(std::ostream& out, const SweepResult& r) {
  out << kSummaryHeader << '\n';
  for (const auto& a : r.aggregates)
    out << a.cell.key() << ',' << a.count << ',' << format_double(a.mean) << ','
        << format_double(a.variance) << '\n';
}

void write_table_csv(std::ostream& out, const SweepResult& r, SweepAxis axis) {
  // Swept value of a cell, if it has one along this axis.
  auto swept = [&](const Cell& c) -> std::optional<double> {
    if (c.variant == Variant::DRO2) return c.space_mult;
    if (!is_gdro(c.variant)) return std::nullopt;
    return axis == SweepAxis::Core ? c.core_mult : c.space_mult;
  };
  std::vector<double> grid;
  std::vector<Variant> order;
  for (const auto& a : r.aggregates) {
    if (std::find(order.begin(), order.end(), a.cell.variant) == order.end())
      order.push_back(a.cell.variant);
    if (auto v = swept(a.cell); v && a.cell.variant != Variant::DRO2 &&
                                std::find(grid.begin(), grid.end(), *v) == grid.end())
      grid.push_back(*v);
  }
  if (grid.empty())
    for (const auto& a : r.aggregates)
      if (auto v = swept(a.cell); v && std::find(grid.begin(), grid.end(), *v) == grid.end())
        grid.push_back(*v);
  std::sort(grid.begin(), grid.end());

  out << "statistic,variant";
  for (double g : grid) out << ',' << format_double(g);
  out << '\n';
  for (const char* stat : {"mean", "variance"})
    for (Variant v : order) {
      std::vector<const Aggregate*> row(grid.size(), nullptr);
      std::vector<const Aggregate*> fixed;
      for (const auto& a : r.aggregates) {
        if (a.cell.variant != v) continue;
        const auto s = swept(a.cell);
        auto it = s ? std::find(grid.begin(), grid.end(), *s) : grid.end();
        if (it != grid.end() && !row[std::size_t(it - grid.begin())])
          row[std::size_t(it - grid.begin())] = &a;
        else
          fixed.push_back(&a);
      }
      auto value = [&](const Aggregate* a) {
        return std::string(stat) == "mean" ? a->mean : a->variance;
      };
      if (std::any_of(row.begin(), row.end(), [](auto* a) { return a != nullptr; })) {
        out << stat << ',' << to_string(v);
        for (auto* a : row) out << ',' << (a ? format_double(value(a)) : "");
        out << '\n';
      }
      // Cells that do not move with the axis repeat across every column.
      for (auto* a : fixed) {
        out << stat << ',' << to_string(v);
        if (a->cell.space_mult) out << " space " << format_double(*a->cell.space_mult);
        if (a->cell.core_mult) out << " core " << format_double(*a->cell.core_mult);
        for (std::size_t i = 0; i < grid.size(); ++i) out << ',' << format_double(value(a));
        out << '\n';
      }
    }
}

void write_theta_csv(std::ostream& out, const std::vector<ThetaRecord>& recs) {
  out << "variant,core_mult,space_mult,rep,seed,v_target,theta,objective_at_theta,status,verified,method\n";
  for (const auto& r : recs)
    out << to_string(r.variant) << ',' << format_double(r.core_mult) << ',' << opt_str(r.space_mult)
        << ',' << r.rep << ',' << r.seed << ',' << format_double(r.v_target) << ','
        << format_double(r.theta) << ',' << format_double(r.objective_at_theta) << ','
        << to_string(r.status) << ',' << (r.verified ? "true" : "false") << ',' << r.method << '\n';
}

SweepResult load_sweep(std::istream& rows_csv, std::istream& summary_csv) {
  std::string line;
  if (!std::getline(rows_csv, line) || line != kRowsHeader)
    throw Error(ErrorCode::ParseError, "rows CSV header mismatch");
  SweepResult r;
  int lineno = 1;
  auto cell_of = [](const std::vector<std::string>& f) {
    return Cell{variant_from_string(f[0]), parse_opt(f[1]), parse_opt(f[2]), parse_opt(f[3]),
                parse_opt(f[4])};
  };
  while (std::getline(rows_csv, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 11)
      throw Error(ErrorCode::ParseError, "rows CSV line " + std::to_string(lineno) + ": expected 11 fields");
    RunRecord rec;
    rec.cell = cell_of(f);
    rec.rep = std::stoi(f[5]);
    rec.seed = std::stoull(f[6]);
    rec.objective = std::stod(f[7]);
    rec.status = status_from_string(f[8]);
    rec.iterations = std::stoi(f[9]);
    rec.solve_ms = std::stod(f[10]);
    r.rows.push_back(std::move(rec));
  }
  r.aggregates = aggregate(r.rows);

  if (!std::getline(summary_csv, line) || line != kSummaryHeader)
    throw Error(ErrorCode::ParseError, "summary CSV header mismatch");
  lineno = 1;
  std::size_t seen = 0;
  while (std::getline(summary_csv, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 8)
      throw Error(ErrorCode::ParseError, "summary CSV line " + std::to_string(lineno) + ": expected 8 fields");
    const Aggregate& a = r.at(cell_of(f));
    const int count = std::stoi(f[5]);
    const double mean = std::stod(f[6]);
    const double var = std::stod(f[7]);
    auto same = [](double x, double y) {
      return (std::isnan(x) && std::isnan(y)) || std::abs(x - y) <= 1e-12 * (1 + std::abs(y));
    };
    if (count != a.count || !same(mean, a.mean) || !same(var, a.variance))
      throw Error(ErrorCode::ParseError, "summary CSV line " + std::to_string(lineno) +
                                             " disagrees with the rows for cell " + a.cell.key());
    ++seen;
  }
  if (seen != r.aggregates.size())
    throw Error(ErrorCode::ParseError, "summary CSV does not cover every cell");
  return r;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::vector<double> ticks(double lo, double hi, int target) {
  const double span = hi - lo;
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * step; t += step)
    out.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
  return out;
}

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

void write_svg(std::ostream& out, const std::vector<Series>& series, const std::string& title,
               const std::string& xlabel, const std::string& ylabel) {
  const double W = 760, H = 480, left = 70, right = 200, top = 40, bottom = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!(x1 > x0)) { x0 -= 1; x1 += 1; }
  if (!(y1 > y0)) { y0 -= 1; y1 += 1; }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  const double pw = W - left - right, ph = H - top - bottom;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + (y1 - y) / (y1 - y0) * ph; };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << xml_escape(title) << "</text>\n";
  out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : ticks(x0, x1, 6))
    out << "<line x1=\"" << sx(t) << "\" y1=\"" << top + ph << "\" x2=\"" << sx(t) << "\" y2=\""
        << top + ph + 5 << "\" stroke=\"black\"/><text x=\"" << sx(t) << "\" y=\"" << top + ph + 18
        << "\" text-anchor=\"middle\">" << short_num(t) << "</text>\n";
  for (double t : ticks(y0, y1, 6))
    out << "<line x1=\"" << left - 5 << "\" y1=\"" << sy(t) << "\" x2=\"" << left << "\" y2=\""
        << sy(t) << "\" stroke=\"black\"/><text x=\"" << left - 8 << "\" y=\"" << sy(t) + 4
        << "\" text-anchor=\"end\">" << short_num(t) << "</text>\n";
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
      << xml_escape(xlabel) << "</text>\n";
  out << "<text x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << top + ph / 2 << ")\">" << xml_escape(ylabel) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = palette[k % 8];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
    if (s.dashed) out << " stroke-dasharray=\"6 4\"";
    out << " points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (std::isfinite(s.y[i])) out << sx(s.x[i]) << ',' << sy(s.y[i]) << ' ';
    out << "\"/>\n";
    const double ly = top + 10 + 18 * double(k);
    out << "<line x1=\"" << W - right + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - right + 40
        << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"1.5\""
        << (s.dashed ? " stroke-dasharray=\"6 4\"" : "") << "/><text x=\"" << W - right + 46
        << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.label) << "</text>\n";
  }
  out << "</svg>\n";
}

std::vector<Series> theta_series(const SweepResult& r) {
  std::vector<Series> curves, refs;
  double tmin = std::numeric_limits<double>::infinity(), tmax = -tmin;
  for (const auto& a : r.aggregates)
    if (a.cell.theta) {
      tmin = std::min(tmin, *a.cell.theta);
      tmax = std::max(tmax, *a.cell.theta);
    }
  if (!std::isfinite(tmin)) { tmin = 0; tmax = 1; }
  for (const auto& a : r.aggregates) {
    if (a.cell.theta) {
      const std::string label(to_string(a.cell.variant));
      auto it = std::find_if(curves.begin(), curves.end(), [&](const Series& s) { return s.label == label; });
      if (it == curves.end()) {
        curves.push_back(Series{label, {}, {}, false});
        it = curves.end() - 1;
      }
      it->x.push_back(*a.cell.theta);
      it->y.push_back(a.mean);
    } else {
      std::string label = a.cell.variant == Variant::DRO1
                              ? "v(DRO1)"
                              : "v(DRO2, " + short_num(a.cell.space_mult.value_or(0)) + " gamma1)";
      refs.push_back(Series{label, {tmin, tmax}, {a.mean, a.mean}, true});
    }
  }
  for (auto& s : curves) {
    std::vector<std::size_t> idx(s.x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](auto i, auto j) { return s.x[i] < s.x[j]; });
    Series t{s.label, {}, {}, false};
    for (auto i : idx) {
      t.x.push_back(s.x[i]);
      t.y.push_back(s.y[i]);
    }
    s = t;
  }
  curves.insert(curves.end(), refs.begin(), refs.end());
  return curves;
}

}  // namespace gdro
