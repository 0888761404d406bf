#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "misspec/bounds.hpp"
#include "misspec/config.hpp"
#include "misspec/error.hpp"
#include "misspec/parallel.hpp"
#include "misspec/runner.hpp"
#include "misspec/stats.hpp"

using namespace misspec;
using namespace misspec::runner;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("misspec_runner_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string run_command(const std::string& cmd, int* status) {
  std::string out;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[512];
  while (fgets(buf, sizeof buf, pipe)) out += buf;
  const int rc = pclose(pipe);
  *status = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  return out;
}

ExperimentConfig tiny_bounds_config() {
  ExperimentConfig c;
  c.alpha_grid = {0.05};
  c.epsilon_grid = {0.1};
  c.d_grid = {10};
  c.n_grid = {100};
  c.seeds = {0};
  c.suites = {"bounds"};
  return c;
}

}  // namespace

TEST_CASE("defaults and planned cells") {
  const ExperimentConfig c;
  CHECK(planned_cells(c) == 120);
  CHECK_NOTHROW(c.validate());
  CHECK(experiment_config_from(Config::parse_string("")).alpha_grid == c.alpha_grid);
  CHECK(known_suites().size() == 6);
}

TEST_CASE("config parsing") {
  const auto cfg = experiment_config_from(Config::parse_string(
      "[experiment]\nalpha = 0.1\nseeds = 3,4\nsuites = bounds, d2\ntrials = 50\n[protocols]\ntau = 0.7\n", "x.ini"));
  CHECK(cfg.alpha_grid == std::vector<double>{0.1});
  CHECK(cfg.seeds == std::vector<std::int64_t>{3, 4});
  CHECK(cfg.suites == std::vector<std::string>{"bounds", "d2"});
  CHECK(cfg.trials == 50);
  CHECK(cfg.tau == 0.7);
  CHECK(planned_cells(cfg) == 1 * 2 * 2 * 2);

  auto error_of = [](const std::string& text) -> ConfigError {
    try {
      (void)experiment_config_from(Config::parse_string(text, "bad.ini"));
    } catch (const ConfigError& e) {
      return e;
    }
    FAIL("expected a config error");
    return ConfigError("", 0, "", "");
  };
  const auto unknown = error_of("[experiment]\nalpha = 0.1\nalhpa = 0.2\n");
  CHECK(unknown.line() == 3);
  CHECK(unknown.key() == "experiment.alhpa");
  const auto bad_suite = error_of("[experiment]\n\nsuites = bounds,plots\n");
  CHECK(bad_suite.line() == 3);
  CHECK(bad_suite.key() == "experiment.suites");
  const auto bad_number = error_of("[fit]\nstep = fast\n");
  CHECK(bad_number.line() == 2);
  CHECK(error_of("[experiment]\nseeds = 1,1\n").key() == "experiment.seeds");
  CHECK(error_of("[experiment]\nalpha = 0.6\nshift = 1\n").key() == "experiment.shift");
}

TEST_CASE("empty suite selection writes nothing") {
  auto c = tiny_bounds_config();
  c.suites.clear();
  const auto dir = scratch("empty");
  const auto s = run_suite(c, dir);
  CHECK(s.exit_code == 0);
  CHECK(s.files.empty());
  CHECK_FALSE(fs::exists(dir));
}

TEST_CASE("single-cell bounds run matches the bounds module") {
  const auto dir = scratch("bounds");
  const auto s = run_suite(tiny_bounds_config(), dir);
  CHECK(s.exit_code == 0);
  CHECK(s.cells == 1);
  const auto t = read_csv_file(dir / "bounds.csv");
  REQUIRE(t.rows.size() == 1);
  bounds::BoundParameters p;
  p.n = 100;
  p.alpha = 0.05;
  p.epsilon = 0.1;
  p.gamma = 0.05;
  p.eta = 0.05 * 0.5;
  p.tau = 0.5;
  p.delta = 0.05;
  const auto r = bounds::bound_report(p);
  const auto& row = t.rows[0];
  CHECK(row[t.column("kappa")] == format_double(r.kappa));
  CHECK(row[t.column("lower_gap")] == format_double(r.lower_gap));
  CHECK(row[t.column("Q_majority")] == format_double(r.query_budget));
  CHECK(row[t.column("Q_noisy")] == format_double(r.noisy_query_budget));
  CHECK(row[t.column("sprt_hits")] == format_double(r.sprt_hits));
  CHECK(row[t.column("seed")] == "0");
  for (const char* f : {"SCHEMA", "summary.json", "failures.csv", "bounds_aggregate.csv"}) CHECK(fs::exists(dir / f));
  CHECK(slurp(dir / "SCHEMA").find("lower_gap") != std::string::npos);
  CHECK(slurp(dir / "summary.json").find("\"exit_code\": 0") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("aggregation over seeds") {
  Table merged;
  merged.header = {"alpha", "seed", "x"};
  for (int s = 0; s < 10; ++s) merged.rows.push_back({"0.1", std::to_string(s), std::to_string(s * s)});
  merged.rows.push_back({"0.2", "0", "5"});
  const auto agg = aggregate_over_seeds(merged, 2);
  CHECK(agg.header == std::vector<std::string>{"alpha", "seeds", "x_median", "x_p05", "x_p95"});
  REQUIRE(agg.rows.size() == 2);
  std::vector<double> xs;
  for (int s = 0; s < 10; ++s) xs.push_back(s * s);
  CHECK(agg.rows[0][1] == "10");
  CHECK(agg.rows[0][2] == format_double(median(xs)));
  CHECK(std::stod(agg.rows[0][2]) == 20.5);
  CHECK(std::stod(agg.rows[0][3]) == doctest::Approx(0.45 * 1 + 0.0));
  CHECK(std::stod(agg.rows[0][4]) == doctest::Approx(64 + 0.55 * 17));
  CHECK(agg.rows[1][2] == "5");
}

TEST_CASE("overlays") {
  Table routing;
  routing.header = {"alpha", "epsilon", "gamma", "eta", "draws"};
  routing.rows = {{"0.05", "0.1", "0.05", "0.005", "2300"}, {"0.05", "0.1", "0.05", "0.025", "700"}};
  const auto q = emit_overlay(routing, OverlayKind::routing_Q);
  CHECK(q.rows.size() == routing.rows.size());
  CHECK(q.header.back() == "overlay_routing_Q");
  CHECK(std::stod(q.rows[0].back()) == doctest::Approx(2302.58509299404568).epsilon(1e-12));

  Table lb;
  lb.header = {"n", "alpha", "epsilon", "gamma"};
  lb.rows = {{"0", "0.05", "0.1", "0.3"}, {"100", "0.05", "0.1", "1"}};
  const auto l = emit_overlay(lb, OverlayKind::lower_bound);
  CHECK(std::stod(l.rows[0].back()) == doctest::Approx(0.075));
  CHECK(std::stod(l.rows[1].back()) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));

  Table missing;
  missing.header = {"alpha", "epsilon"};
  CHECK_THROWS_AS(emit_overlay(missing, OverlayKind::lower_bound), SchemaError);
  CHECK_THROWS_AS(emit_overlay(missing, OverlayKind::routing_Q), SchemaError);
  CHECK_THROWS_AS(parse_overlay_kind("curve"), std::invalid_argument);
}

TEST_CASE("CSV round trip") {
  std::istringstream in("a,b\n1,2\n3,4\n");
  const auto t = read_csv(in);
  CHECK(t.rows.size() == 2);
  std::ostringstream out;
  write_csv(out, t);
  CHECK(out.str() == "a,b\n1,2\n3,4\n");
  std::istringstream ragged("a,b\n1\n");
  CHECK_THROWS_AS(read_csv(ragged), SchemaError);
  CHECK_THROWS_AS(t.column("c"), SchemaError);
}

TEST_CASE("output directory override") {
  unsetenv("MISSPEC_LAB_OUT");
  CHECK(resolve_output_dir("flag") == "flag");
  setenv("MISSPEC_LAB_OUT", "/tmp/override", 1);
  CHECK(resolve_output_dir("flag") == "/tmp/override");
  unsetenv("MISSPEC_LAB_OUT");
  CHECK_FALSE(version_string().empty());
}

TEST_CASE("runs are identical across worker counts") {
  ExperimentConfig c;
  c.alpha_grid = {0.1};
  c.epsilon_grid = {0.1};
  c.d_grid = {5};
  c.n_grid = {200};
  c.seeds = {0, 1, 2};
  c.trials = 50;
  c.eval_trials = 2000;
  c.fit.iterations = 20;
  c.suites = {"bounds", "minimax", "sprt", "d1", "d2", "d3"};
  // d1 fits on n_grid-sized transcripts, so keep them small.
  const auto a = scratch("jobs1");
  const auto b = scratch("jobs3");
  set_worker_count(1);
  const auto sa = run_suite(c, a);
  set_worker_count(3);
  const auto sb = run_suite(c, b);
  set_worker_count(1);
  CHECK(sa.exit_code == 0);
  CHECK(sa.files == sb.files);
  for (const auto& f : sa.files) CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("command line") {
  const char* cli = std::getenv("MISSPEC_LAB_CLI");
  if (!cli) {
    MESSAGE("MISSPEC_LAB_CLI not set; skipping command-line checks");
    return;
  }
  int status = 0;
  const auto dry = run_command(std::string(cli) + " run-suite --dry-run", &status);
  CHECK(status == 0);
  CHECK(dry.find("planned cells: 120") != std::string::npos);

  const auto kappa = run_command(std::string(cli) + " kappa --epsilon 0.1", &status);
  CHECK(status == 0);
  CHECK(kappa.find("0.0810930216216328") != std::string::npos);

  const auto dir = scratch("cli");
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "bad.ini");
    cfg << "[experiment]\nalpha = 0.1\ntrails = 5\n";
  }
  const auto err = run_command(std::string(cli) + " --config " + (dir / "bad.ini").string() + " run-suite 2>&1", &status);
  CHECK(status == 3);
  CHECK(err.find(":3") != std::string::npos);
  CHECK(err.find("experiment.trails") != std::string::npos);
  fs::remove_all(dir);
}
