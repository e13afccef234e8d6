#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gdro/experiment.hpp"

namespace fs = std::filesystem;
using namespace gdro;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("gdro_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path p = workdir() / name;
  std::ofstream(p) << text;
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(const std::string& args) {
  const std::string cmd = std::string(GDRO_CLI) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string parse_error(const std::string& json) {
  try {
    parse_config(json).validate();
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    return e.what();
  }
  return "";
}

const char* kSmall = R"({
  "seed": 3, "n": 3, "p": 3, "K": 3, "M": 30,
  "distribution": "uniform_box",
  "variants": ["GDRO1.1", "GDRO2.1"],
  "theta": {"from": 0, "to": 4, "count": 3},
  "d0": 0.5,
  "reps": 3
})";

}  // namespace

TEST_CASE("config errors name the field path") {
  CHECK(parse_error(R"({"variants": "DRO1", "solver": {"max_iter": 3}})").find("config.solver.max_iter") !=
        std::string::npos);
  CHECK(parse_error(R"({"variants": "DRO1", "sead": 3})").find("config.sead") != std::string::npos);
  CHECK(parse_error(R"({"variants": ["GDRO2.1"], "theta": 1})").find("config.d0") != std::string::npos);
  CHECK(parse_error(R"({"variants": "DRO1", "reps": "many"})").find("config.reps") != std::string::npos);
  CHECK(parse_error(R"({"variants": "DRO1", "n": 5, "p": 4})") != "");
  CHECK(parse_error(R"({"variants": "DRO1", "M": 10, "p": 10, "n": 10})") != "");
  CHECK(parse_error(R"({"variants": "GDRO1.2", "core_mult": 9, "space_mult": 4})") != "");
  CHECK(parse_error("{not json") != "");
}

TEST_CASE("grids and presets") {
  CHECK(multiplier_preset("unbounded_table") ==
        std::vector<double>{0.25, 0.5, 0.75, 1, 9, 25, 49, 100, 225, 400, 625});
  CHECK(multiplier_preset("unbounded_prose") ==
        std::vector<double>{0.25, 0.5, 0.75, 1, 3, 25, 49, 100, 225, 400, 625});
  CHECK(multiplier_preset("bounded_space") == std::vector<double>{1, 9, 25, 49, 100, 225, 400, 625});
  CHECK(multiplier_preset("bounded_core") == std::vector<double>{0.25, 0.5, 0.75, 1, 9, 25, 49, 100});
  CHECK_THROWS_AS(multiplier_preset("nope"), Error);

  const ExperimentConfig cfg = parse_config(kSmall);
  CHECK(cfg.theta == std::vector<double>{0, 2, 4});
  CHECK(cfg.variants.size() == 2);
  CHECK(cfg.d0 == 0.5);
  const ExperimentConfig preset = parse_config(R"({"variants": "DRO2", "core_mult": "unbounded_table"})");
  CHECK(preset.core_mult.size() == 11);
}

TEST_CASE("instances are deterministic per rep") {
  const ExperimentConfig cfg = parse_config(kSmall);
  const Instance a = make_instance(cfg, 1), b = make_instance(cfg, 1), c = make_instance(cfg, 2);
  CHECK(a.samples.samples == b.samples.samples);
  CHECK(a.a == b.a);
  CHECK(a.samples.samples != c.samples.samples);
  CHECK(a.a.minCoeff() >= 0);
  CHECK(a.a.maxCoeff() <= 10);
}

TEST_CASE("aggregate uses optimal rows and the n-1 divisor") {
  Cell cell;
  cell.variant = Variant::DRO1;
  std::vector<RunRecord> rows(4);
  const double obj[] = {1, 2, 4, 100};
  for (int i = 0; i < 4; ++i) {
    rows[i].cell = cell;
    rows[i].rep = i;
    rows[i].objective = obj[i];
    rows[i].status = i < 3 ? SolveStatus::Optimal : SolveStatus::IterLimit;
  }
  const std::vector<Aggregate> agg = aggregate(rows);
  REQUIRE(agg.size() == 1);
  CHECK(agg[0].count == 3);
  CHECK(agg[0].mean == doctest::Approx(7.0 / 3));
  CHECK(agg[0].variance == doctest::Approx((16.0 / 9 + 1.0 / 9 + 25.0 / 9) / 2));
}

TEST_CASE("rows and summary round trip through load_sweep") {
  const ExperimentConfig cfg = parse_config(kSmall);
  const SweepResult r = run_sweep(cfg, theta_sweep_cells(cfg));
  std::ostringstream rows, summary;
  write_rows_csv(rows, r, false);
  write_summary_csv(summary, r);
  CHECK(rows.str().rfind("variant,theta,d0,core_mult,space_mult,rep,seed,objective,status,iterations,solve_ms\n", 0) == 0);

  std::istringstream ri(rows.str()), si(summary.str());
  const SweepResult back = load_sweep(ri, si);
  CHECK(back.rows.size() == r.rows.size());
  for (const Aggregate& a : r.aggregates) {
    const Aggregate& b = back.at(a.cell);
    CHECK(b.count == a.count);
    CHECK(b.mean == a.mean);
    CHECK(b.variance == a.variance);
  }

  // tamper with one summary mean
  std::string bad = summary.str();
  const std::size_t line2 = bad.find('\n') + 1;
  const std::size_t comma = bad.rfind(',', bad.find('\n', line2));
  const std::size_t mean_start = bad.rfind(',', comma - 1) + 1;
  bad.replace(mean_start, comma - mean_start, "12345");
  std::istringstream ri2(rows.str()), si2(bad);
  CHECK_THROWS_AS(load_sweep(ri2, si2), Error);
}

TEST_CASE("absent parameters are empty CSV fields") {
  const ExperimentConfig cfg = parse_config(kSmall);
  const SweepResult r = run_sweep(cfg, theta_sweep_cells(cfg));
  std::ostringstream summary;
  write_summary_csv(summary, r);
  CHECK(summary.str().find("\nDRO1,,,,,3,") != std::string::npos);
}

TEST_CASE("cli exit codes") {
  const fs::path good = write_file("good.json", kSmall);
  const fs::path solve = write_file("solve.json", R"({"n": 3, "p": 3, "K": 2, "variants": "GDRO1.1", "theta": 1})");
  const fs::path short_iters =
      write_file("iters.json", R"({"n": 3, "p": 3, "K": 2, "variants": "DRO1", "solver": {"max_iters": 2}})");
  const fs::path no_d0 = write_file("nod0.json", R"({"variants": "GDRO2.1", "theta": 1})");
  const fs::path broken = write_file("broken.json", "{");
  const std::string out = " --out " + (workdir() / "out").string();

  CHECK(run("solve --config " + solve.string() + out) == 0);
  CHECK(fs::exists(workdir() / "out" / "report.json"));
  CHECK(run("solve --config " + short_iters.string() + out) == 3);
  CHECK(run("solve --config " + no_d0.string() + out) == 4);
  CHECK(run("solve --config " + broken.string() + out) == 4);
  CHECK(run("solve --config " + (workdir() / "missing.json").string() + out) == 4);
  CHECK(run("solve --config " + good.string() + out) == 4);  // two variants
  CHECK(run("frobnicate") == 4);
  CHECK(run("solve --config " + good.string() + " --reps -1") == 4);
}

TEST_CASE("sweep output is byte-identical without timing") {
  const fs::path cfg = write_file("sweep.json", kSmall);
  const fs::path a = workdir() / "a", b = workdir() / "b";
  REQUIRE(run("sweep-theta --no-timing --threads 2 --config " + cfg.string() + " --out " + a.string()) == 0);
  REQUIRE(run("sweep-theta --no-timing --threads 1 --config " + cfg.string() + " --out " + b.string()) == 0);
  for (const char* f : {"rows.csv", "summary.csv", "theta.svg"}) {
    CAPTURE(f);
    CHECK(read_file(a / f) == read_file(b / f));
    CHECK(read_file(a / f).size() > 0);
  }
  CHECK(read_file(a / "theta.svg").rfind("<svg", 0) == 0);
}

TEST_CASE("gammas command") {
  const fs::path out = workdir() / "g";
  std::string csv = "x1,x2,x3\n";
  for (int i = 0; i < 3; ++i) csv += "1,2,3\n";
  const fs::path few = write_file("few.csv", csv);
  CHECK(run("gammas --samples " + few.string() + " --out " + out.string()) == 4);

  std::string same = "x1,x2\n";
  for (int i = 0; i < 30; ++i) same += "1,2\n";
  const fs::path flat = write_file("flat.csv", same);
  REQUIRE(run("gammas --samples " + flat.string() + " --out " + out.string()) == 0);
  CHECK(read_file(out / "gammas.json").find("\"gamma_tilde\": 0.0") != std::string::npos);

  SampleSet s = generate(DistributionSpec{}, 30, 10, 5);
  std::ostringstream ten;
  write_csv(ten, s);
  const fs::path normal = write_file("ten.csv", ten.str());
  REQUIRE(run("gammas --samples " + normal.string() + " --alpha 0.05 --out " + out.string()) == 0);
  const std::string g = read_file(out / "gammas.json");
  CHECK(g.find("\"gamma1\": 1.17393878") != std::string::npos);
  CHECK(run("gammas --samples " + normal.string() + " --method bounded --out " + out.string()) == 4);
}

TEST_CASE("find_theta returns the smallest verified theta") {
  const ExperimentConfig cfg = parse_config(kSmall);
  const Instance inst = make_instance(cfg, 0);
  for (Variant v : {Variant::GDRO1_1, Variant::GDRO2_1}) {
    CAPTURE(to_string(v));
    const ThetaRecord r = find_theta(inst, v, 1.0, std::nullopt, 0.5, 0.01, cfg.solver);
    REQUIRE(r.status == SolveStatus::Optimal);
    CHECK(r.verified);
    CHECK(r.method == (is_gdro1(v) ? "conic" : "bisection"));
    REQUIRE(r.theta > 0);
    Cell c;
    c.variant = v;
    c.theta = r.theta * 0.99;
    c.core_mult = 1.0;
    if (is_gdro2(v)) c.d0 = 0.5;
    const RunRecord below = run_cell(inst, c, cfg.solver);
    CHECK(below.objective > r.v_target + 0.01);
  }
}
