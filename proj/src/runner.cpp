#include "misspec/runner.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "misspec/bounds.hpp"
#include "misspec/error.hpp"
#include "misspec/parallel.hpp"
#include "misspec/protocols.hpp"

#ifndef MISSPEC_VERSION
#define MISSPEC_VERSION "unknown"
#endif

namespace misspec::runner {

namespace fs = std::filesystem;

namespace {

struct Cell {
  std::size_t index = 0;
  double alpha = 0.0;
  double epsilon = 0.0;
  std::int64_t d = 0;
  std::int64_t seed = 0;
};

const std::vector<std::string> kCellColumns{"alpha", "epsilon", "d", "seed"};

struct SuiteTable {
  std::vector<std::string> keys;
  std::vector<std::string> metrics;
  std::vector<std::pair<std::vector<std::string>, std::vector<double>>> rows;

  void add(std::vector<std::string> key, std::vector<double> values) { rows.emplace_back(std::move(key), std::move(values)); }
};

std::string fmt(double v) { return format_double(v); }
std::string fmt(std::int64_t v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }

// Column documentation for the SCHEMA file.
const std::map<std::string, std::string>& column_docs() {
  static const std::map<std::string, std::string> docs{
      {"alpha", "hard-set mass of the cell"},
      {"epsilon", "Massart bias on the hard set"},
      {"d", "context dimension"},
      {"seed", "seed of the cell (grid value)"},
      {"n", "rounds or transcript size"},
      {"gamma", "separation (alpha in the synthetic environment)"},
      {"eta", "target gap"},
      {"tau", "flagger true-positive rate"},
      {"delta", "SPRT error target"},
      {"kappa", "per-hit KL 4 eps atanh(2 eps)"},
      {"kl_budget", "n alpha kappa"},
      {"lower_gap", "(gamma/4) exp(-n alpha kappa)"},
      {"Q_majority", "log(gamma/eta) / (2 alpha eps^2)"},
      {"Q_noisy", "Q_majority / tau"},
      {"sprt_hits", "log((1-delta)/delta) / kappa"},
      {"policy", "query or evaluation policy label"},
      {"error", "empirical error rate"},
      {"error_se", "standard error of error"},
      {"kl", "mean realized transcript KL"},
      {"bh_floor", "(1/4) exp(-kl)"},
      {"flagger", "oracle or noisy(tau,phi)"},
      {"stopped_at", "mean hits at stopping"},
      {"stopped_se", "standard error of stopped_at"},
      {"draws", "mean contexts drawn"},
      {"draws_se", "standard error of draws"},
      {"bound", "log((1-delta)/delta) / kappa"},
      {"T", "ceil(log(gamma/eta) / (2 eps^2)) flagged queries"},
      {"overlay_q", "log(gamma/eta) / (2 alpha eps^2)"},
      {"noisy_q", "overlay_q / tau"},
      {"predicted_draws", "T / (alpha tau + (1-alpha) phi)"},
      {"kept_fraction", "pooled fraction of queries that hit the hard set"},
      {"lambda", "policy temperature"},
      {"true_value", "V_w(pi_lambda) in the evaluation world"},
      {"proxy_value", "E[r_hat(x, pi_lambda(x))]"},
      {"true_gap", "V_w(pi^w) - V_w(pi_lambda)"},
      {"proxy_gap", "V_hat(pi^w) - V_hat(pi_lambda)"},
      {"hard_mass", "hard mass of the exp(lambda s_hat) tilt"},
      {"factor", "shift factor rho"},
      {"alpha_shifted", "(1 + rho) alpha"},
      {"reweighted", "importance-reweighted value"},
      {"decomposition", "(1-a) E[r|easy] + a E[r|hard]"},
      {"direct", "value on a fresh shifted sample"},
      {"direct_se", "standard error of direct"},
      {"gap", "1 - direct"},
      {"predicted_slope", "alpha (E[r|hard] - E[r|easy])"},
      {"cell", "cell index"},
      {"suite", "suite name"},
      {"message", "error message"},
  };
  return docs;
}

std::string describe(const std::string& column) {
  for (const char* suffix : {"_median", "_p05", "_p95"}) {
    const std::string s(suffix);
    if (column.size() > s.size() && column.ends_with(s)) {
      const auto base = column.substr(0, column.size() - s.size());
      const auto it = column_docs().find(base);
      if (it != column_docs().end()) return it->second + " (" + s.substr(1) + " over seeds)";
    }
  }
  const auto it = column_docs().find(column);
  return it == column_docs().end() ? "" : it->second;
}

SuiteTable run_bounds(const ExperimentConfig& cfg, const Cell& cell) {
  SuiteTable t{{"n", "gamma", "eta", "tau", "delta"},
               {"kappa", "kl_budget", "lower_gap", "Q_majority", "Q_noisy", "sprt_hits"},
               {}};
  for (auto n : cfg.n_grid) {
    bounds::BoundParameters p;
    p.n = static_cast<std::uint64_t>(n);
    p.alpha = cell.alpha;
    p.epsilon = cell.epsilon;
    p.gamma = cell.alpha;
    p.eta = cell.alpha * cfg.eta_grid.front();
    p.tau = cfg.tau;
    p.phi = cfg.phi;
    p.delta = cfg.delta;
    const auto r = bounds::bound_report(p);
    t.add({fmt(n), fmt(p.gamma), fmt(p.eta), fmt(p.tau), fmt(p.delta)},
          {r.kappa, r.kl_budget, r.lower_gap, r.query_budget, r.noisy_query_budget, r.sprt_hits});
  }
  return t;
}

SuiteTable run_minimax(const ExperimentConfig& cfg, const Cell& cell, const EnvironmentSpec& env,
                       const ChannelSpec& ch, RandomStream& rng) {
  SuiteTable t{{"n", "gamma", "policy"}, {"error", "error_se", "kl", "bh_floor"}, {}};
  for (auto n : cfg.n_grid) {
    const auto r = simulate_minimax_test(env, ch, static_cast<std::size_t>(n), MinimaxAlways{}, cfg.trials, rng);
    t.add({fmt(n), fmt(cell.alpha), "always"}, {r.error.value, r.error.se, r.kl.value, r.bh_floor});
  }
  return t;
}

SuiteTable run_sprt(const ExperimentConfig& cfg, const EnvironmentSpec& env, const ChannelSpec& ch, RandomStream& rng) {
  SuiteTable t{{"delta", "flagger"}, {"error", "error_se", "stopped_at", "stopped_se", "draws", "bound"}, {}};
  const auto s = run_sprt_trials(env, WorldSign::plus, ch, OracleFlagger{}, cfg.delta, cfg.trials, rng);
  t.add({fmt(cfg.delta), "oracle"},
        {s.error.value, s.error.se, s.stopped_at.value, s.stopped_at.se, s.draws.value,
         bounds::sprt_expected_hits(cfg.delta, ch.epsilon)});
  return t;
}

SuiteTable run_d3(const ExperimentConfig& cfg, const Cell& cell, const EnvironmentSpec& env, const ChannelSpec& ch,
                  RandomStream& rng) {
  SuiteTable t{{"flagger", "gamma", "eta", "T"},
               {"overlay_q", "noisy_q", "predicted_draws", "draws", "draws_se", "error", "error_se", "kept_fraction"},
               {}};
  std::vector<double> etas;
  for (double f : cfg.eta_grid) etas.push_back(f * cell.alpha);
  const std::vector<std::pair<std::string, FlaggerSpec>> flaggers{
      {"oracle", OracleFlagger{}},
      {"noisy(" + fmt(cfg.tau) + ";" + fmt(cfg.phi) + ")", NoisyFlagger{cfg.tau, cfg.phi}}};
  for (const auto& [label, flagger] : flaggers) {
    const auto rows = diagnostic_d3_routing(env, WorldSign::plus, ch, flagger, etas, cell.alpha, cfg.trials, rng);
    for (const auto& r : rows)
      t.add({label, fmt(cell.alpha), fmt(r.eta), fmt(static_cast<std::uint64_t>(r.T))},
            {r.overlay_q, r.noisy_q, r.predicted_draws, r.summary.draws.value, r.summary.draws.se, r.summary.error.value,
             r.summary.error.se, r.summary.kept_hit_fraction.value});
  }
  return t;
}

SuiteTable run_d1_suite(const ExperimentConfig& cfg, const EnvironmentSpec& env, const ChannelSpec& ch,
                        RandomStream& rng) {
  SuiteTable t{{"policy", "n", "lambda"}, {"true_value", "proxy_value", "true_gap", "proxy_gap", "hard_mass"}, {}};
  const std::vector<std::pair<std::string, QueryPolicy>> policies{
      {"always", AlwaysQuery{}},
      {"threshold", RoutedQuery{ScoreThresholdFlagger{MixturePosteriorScore{}, 0.5}}}};
  for (const auto& [label, policy] : policies)
    for (auto n : cfg.n_grid) {
      const auto transcript = collect_transcript(env, WorldSign::minus, ch, static_cast<std::size_t>(n), policy, rng);
      const auto fit = fit_preference_score(transcript, cfg.fit);
      const auto curve = diagnostic_d1(env, WorldSign::minus, fit.score, cfg.lambda_grid, cfg.eval_trials, rng);
      for (std::size_t k = 0; k < curve.grid.size(); ++k)
        t.add({label, fmt(n), fmt(curve.grid[k])},
              {curve.true_value[k].value, curve.proxy_value[k].value, curve.true_gap[k].value, curve.proxy_gap[k].value,
               curve.hard_mass[k]});
    }
  return t;
}

SuiteTable run_d2_suite(const ExperimentConfig& cfg, const EnvironmentSpec& env, RandomStream& rng) {
  SuiteTable t{{"policy", "factor", "alpha_shifted"},
               {"reweighted", "decomposition", "direct", "direct_se", "gap", "predicted_slope"},
               {}};
  const auto report = diagnostic_d2_shift(env, WorldSign::minus, OptimalPolicy{WorldSign::plus}, cfg.shift_grid,
                                          cfg.eval_trials, rng);
  for (const auto& p : report.points)
    t.add({"optimal(+)", fmt(p.factor), fmt(p.alpha_shifted)},
          {p.reweighted.value, p.decomposition.value, p.direct.value, p.direct.se, 1.0 - p.direct.value,
           report.predicted_slope.value});
  return t;
}

SuiteTable run_one(const std::string& suite, std::size_t suite_index, const ExperimentConfig& cfg, const Cell& cell) {
  RandomStream rng(hash64({cfg.master_seed, static_cast<std::uint64_t>(cell.index), static_cast<std::uint64_t>(cell.seed),
                           static_cast<std::uint64_t>(suite_index)}));
  if (suite == "bounds") return run_bounds(cfg, cell);
  const auto env = make_environment(static_cast<std::size_t>(cell.d), cell.alpha, cfg.center_scale, cfg.direction_seed);
  const auto ch = make_channel(cell.epsilon);
  if (suite == "minimax") return run_minimax(cfg, cell, env, ch, rng);
  if (suite == "sprt") return run_sprt(cfg, env, ch, rng);
  if (suite == "d1") return run_d1_suite(cfg, env, ch, rng);
  if (suite == "d2") return run_d2_suite(cfg, env, rng);
  if (suite == "d3") return run_d3(cfg, cell, env, ch, rng);
  throw std::invalid_argument("unknown suite '" + suite + "'");
}

std::vector<std::string> cell_values(const Cell& c) { return {fmt(c.alpha), fmt(c.epsilon), fmt(c.d), fmt(c.seed)}; }

std::string cell_name(std::size_t index) {
  std::string digits = std::to_string(index);
  return "cell_" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits + ".csv";
}

void write_atomic(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string to_csv(const Table& t) {
  std::ostringstream out;
  write_csv(out, t);
  return out.str();
}

template <class T>
std::vector<std::string> stringify(const std::vector<T>& values) {
  std::vector<std::string> out;
  for (const auto& v : values) out.push_back(fmt(v));
  return out;
}

void check_known_keys(const ConfigSection& section, const std::set<std::string>& allowed) {
  for (const auto& [key, _] : section.entries())
    if (!allowed.count(key)) section.fail(key, "unknown key");
}


}  // namespace

const std::vector<std::string>& known_suites() {
  static const std::vector<std::string> suites{"bounds", "minimax", "sprt", "d1", "d2", "d3"};
  return suites;
}

void ExperimentConfig::validate(const std::string& source) const {
  auto invalid = [&](const std::string& key, const std::string& message) {
    throw ConfigError(source, 0, key, message);
  };
  if (alpha_grid.empty() || epsilon_grid.empty() || d_grid.empty() || n_grid.empty() || lambda_grid.empty() ||
      shift_grid.empty() || eta_grid.empty() || seeds.empty())
    invalid("experiment", "all grids must be nonempty");
  for (double a : alpha_grid)
    if (!(a > 0.0 && a < 1.0)) invalid("experiment.alpha", "alpha must lie in (0, 1)");
  for (double e : epsilon_grid)
    if (!(e > 0.0 && e <= bounds::kEpsilonMax)) invalid("experiment.epsilon", "epsilon must lie in (0, 0.49]");
  for (auto d : d_grid)
    if (d < 1) invalid("experiment.d", "dimension must be at least 1");
  for (auto n : n_grid)
    if (n < 1) invalid("experiment.n", "n must be at least 1");
  for (double l : lambda_grid)
    if (!(l >= 0.0)) invalid("experiment.lambda", "lambda must be nonnegative");
  for (double f : shift_grid)
    for (double a : alpha_grid)
      if (!(f >= 0.0) || (1.0 + f) * a > 1.0) invalid("experiment.shift", "shifted hard mass must lie in [alpha, 1]");
  for (double e : eta_grid)
    if (!(e > 0.0 && e < 1.0)) invalid("experiment.eta", "eta fractions must lie in (0, 1)");
  if (trials == 0) invalid("experiment.trials", "trials must be at least 1");
  std::set<std::int64_t> distinct(seeds.begin(), seeds.end());
  if (distinct.size() != seeds.size()) invalid("experiment.seeds", "seeds must be distinct");
  for (const auto& s : suites)
    if (std::find(known_suites().begin(), known_suites().end(), s) == known_suites().end())
      invalid("experiment.suites", "unknown suite '" + s + "'");
  if (!(tau > 0.0 && tau <= 1.0) || !(phi >= 0.0 && phi <= 1.0)) invalid("protocols", "tau in (0, 1], phi in [0, 1]");
  if (!(delta > 0.0 && delta < 0.5)) invalid("protocols.delta", "delta must lie in (0, 0.5)");
  if (eval_trials == 0) invalid("fit.eval_trials", "eval_trials must be at least 1");
}

ExperimentConfig experiment_config_from(const Config& config) {
  ExperimentConfig c;
  const auto& ex = config.section("experiment");
  check_known_keys(ex, {"alpha", "epsilon", "d", "n", "lambda", "shift", "eta", "trials", "seeds", "output_dir",
                        "suites", "master_seed"});
  if (ex.has("alpha")) c.alpha_grid = ex.get_doubles("alpha");
  if (ex.has("epsilon")) c.epsilon_grid = ex.get_doubles("epsilon");
  if (ex.has("d")) c.d_grid = ex.get_ints("d");
  if (ex.has("n")) c.n_grid = ex.get_ints("n");
  if (ex.has("lambda")) c.lambda_grid = ex.get_doubles("lambda");
  if (ex.has("shift")) c.shift_grid = ex.get_doubles("shift");
  if (ex.has("eta")) c.eta_grid = ex.get_doubles("eta");
  if (ex.has("trials")) {
    const auto v = ex.get_int("trials");
    if (v < 1) ex.fail("trials", "must be at least 1");
    c.trials = static_cast<std::size_t>(v);
  }
  if (ex.has("seeds")) c.seeds = ex.get_ints("seeds");
  c.output_dir = ex.get_or("output_dir", c.output_dir);
  if (ex.has("suites")) {
    // An explicitly empty list selects nothing.
    c.suites = ex.get_list("suites");
    for (const auto& s : c.suites)
      if (std::find(known_suites().begin(), known_suites().end(), s) == known_suites().end())
        ex.fail("suites", "unknown suite '" + s + "'");
  }
  if (ex.has("master_seed")) c.master_seed = static_cast<std::uint64_t>(ex.get_int("master_seed"));

  const auto& env = config.section("environment");
  check_known_keys(env, {"center_scale", "direction_seed"});
  c.center_scale = env.get_double_or("center_scale", c.center_scale);
  c.direction_seed = static_cast<std::uint64_t>(env.get_int_or("direction_seed", static_cast<std::int64_t>(c.direction_seed)));

  const auto& proto = config.section("protocols");
  check_known_keys(proto, {"delta", "tau", "phi"});
  c.delta = proto.get_double_or("delta", c.delta);
  c.tau = proto.get_double_or("tau", c.tau);
  c.phi = proto.get_double_or("phi", c.phi);

  const auto& fit = config.section("fit");
  check_known_keys(fit, {"iterations", "step", "l2", "eval_trials"});
  c.fit.iterations = static_cast<std::size_t>(fit.get_int_or("iterations", static_cast<std::int64_t>(c.fit.iterations)));
  c.fit.step = fit.get_double_or("step", c.fit.step);
  c.fit.l2 = fit.get_double_or("l2", c.fit.l2);
  c.eval_trials = static_cast<std::size_t>(fit.get_int_or("eval_trials", static_cast<std::int64_t>(c.eval_trials)));

  c.validate(config.source());
  return c;
}

std::size_t planned_cells(const ExperimentConfig& c) {
  return c.alpha_grid.size() * c.epsilon_grid.size() * c.d_grid.size() * c.seeds.size();
}

RunSummary run_suite(const ExperimentConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  RunSummary summary;
  std::vector<Cell> cells;
  for (double a : cfg.alpha_grid)
    for (double e : cfg.epsilon_grid)
      for (auto d : cfg.d_grid)
        for (auto s : cfg.seeds) cells.push_back({cells.size(), a, e, d, s});
  summary.cells = cells.size();
  if (cfg.suites.empty()) return summary;

  struct Failure {
    std::size_t cell;
    std::string suite;
    std::string message;
  };
  auto results = parallel_map(cells.size(), [&](std::size_t ci) {
    std::vector<Failure> failures;
    std::vector<std::optional<SuiteTable>> tables(cfg.suites.size());
    for (std::size_t si = 0; si < cfg.suites.size(); ++si) {
      const auto suite_index = static_cast<std::size_t>(
          std::find(known_suites().begin(), known_suites().end(), cfg.suites[si]) - known_suites().begin());
      try {
        SuiteTable t = run_one(cfg.suites[si], suite_index, cfg, cells[ci]);
        Table csv;
        csv.header = kCellColumns;
        csv.header.insert(csv.header.end(), t.keys.begin(), t.keys.end());
        csv.header.insert(csv.header.end(), t.metrics.begin(), t.metrics.end());
        for (const auto& [key, values] : t.rows) {
          auto row = cell_values(cells[ci]);
          row.insert(row.end(), key.begin(), key.end());
          for (double v : values) row.push_back(fmt(v));
          csv.rows.push_back(std::move(row));
        }
        write_atomic(out_dir / "cells" / cfg.suites[si] / cell_name(ci), to_csv(csv));
        tables[si] = std::move(t);
      } catch (const std::exception& e) {
        failures.push_back({ci, cfg.suites[si], e.what()});
      }
    }
    return std::make_pair(std::move(tables), std::move(failures));
  });

  std::vector<Failure> failures;
  for (auto& [tables, f] : results) failures.insert(failures.end(), f.begin(), f.end());
  summary.failures = failures.size();

  std::ostringstream schema;
  schema << "# Column reference for the files of this run. Every CSV starts with a header row.\n";
  std::vector<std::string> files;
  auto document = [&](const std::string& file, const std::vector<std::string>& header) {
    schema << "\n" << file << "\n";
    for (const auto& col : header) schema << "  " << col << ": " << describe(col) << "\n";
  };

  for (std::size_t si = 0; si < cfg.suites.size(); ++si) {
    const std::string& suite = cfg.suites[si];
    const SuiteTable* layout = nullptr;
    for (const auto& [tables, _] : results)
      if (tables[si]) {
        layout = &*tables[si];
        break;
      }
    if (!layout) continue;
    Table merged;
    merged.header = kCellColumns;
    merged.header.insert(merged.header.end(), layout->keys.begin(), layout->keys.end());
    merged.header.insert(merged.header.end(), layout->metrics.begin(), layout->metrics.end());
    // Merge the per-cell files in cell-key order.
    std::vector<fs::path> parts;
    for (const auto& entry : fs::directory_iterator(out_dir / "cells" / suite))
      if (entry.path().extension() == ".csv") parts.push_back(entry.path());
    std::sort(parts.begin(), parts.end());
    for (const auto& p : parts) {
      const auto t = read_csv_file(p);
      if (t.header != merged.header) throw SchemaError("cell file " + p.string() + " has an unexpected header");
      merged.rows.insert(merged.rows.end(), t.rows.begin(), t.rows.end());
    }
    write_atomic(out_dir / (suite + ".csv"), to_csv(merged));
    files.push_back(suite + ".csv");
    document(suite + ".csv", merged.header);
    const auto agg = aggregate_over_seeds(merged, kCellColumns.size() + layout->keys.size());
    write_atomic(out_dir / (suite + "_aggregate.csv"), to_csv(agg));
    files.push_back(suite + "_aggregate.csv");
    document(suite + "_aggregate.csv", agg.header);
    for (const auto& p : parts) files.push_back((fs::path("cells") / suite / p.filename()).generic_string());
  }

  Table fail_table;
  fail_table.header = {"cell", "alpha", "epsilon", "d", "seed", "suite", "message"};
  std::sort(failures.begin(), failures.end(), [&](const Failure& a, const Failure& b) {
    return std::tie(a.cell, a.suite) < std::tie(b.cell, b.suite);
  });
  for (const auto& f : failures) {
    auto row = std::vector<std::string>{std::to_string(f.cell)};
    const auto cv = cell_values(cells[f.cell]);
    row.insert(row.end(), cv.begin(), cv.end());
    row.push_back(f.suite);
    std::string msg = f.message;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    row.push_back(msg);
    fail_table.rows.push_back(std::move(row));
  }
  write_atomic(out_dir / "failures.csv", to_csv(fail_table));
  files.push_back("failures.csv");
  document("failures.csv", fail_table.header);

  write_atomic(out_dir / "SCHEMA", schema.str());
  files.push_back("SCHEMA");
  files.push_back("summary.json");
  std::sort(files.begin(), files.end());

  summary.exit_code = failures.empty() ? 0 : 2;
  summary.files = files;

  nlohmann::ordered_json j;
  j["version"] = version_string();
  auto& c = j["config"];
  c["alpha"] = stringify(cfg.alpha_grid);
  c["epsilon"] = stringify(cfg.epsilon_grid);
  c["d"] = stringify(cfg.d_grid);
  c["n"] = stringify(cfg.n_grid);
  c["lambda"] = stringify(cfg.lambda_grid);
  c["shift"] = stringify(cfg.shift_grid);
  c["eta"] = stringify(cfg.eta_grid);
  c["trials"] = cfg.trials;
  c["seeds"] = stringify(cfg.seeds);
  c["suites"] = cfg.suites;
  c["master_seed"] = cfg.master_seed;
  c["center_scale"] = fmt(cfg.center_scale);
  c["direction_seed"] = cfg.direction_seed;
  c["delta"] = fmt(cfg.delta);
  c["tau"] = fmt(cfg.tau);
  c["phi"] = fmt(cfg.phi);
  c["fit_iterations"] = cfg.fit.iterations;
  c["fit_step"] = fmt(cfg.fit.step);
  c["fit_l2"] = fmt(cfg.fit.l2);
  c["eval_trials"] = cfg.eval_trials;
  j["cells"] = summary.cells;
  j["failures"] = summary.failures;
  j["exit_code"] = summary.exit_code;
  j["files"] = files;
  write_atomic(out_dir / "summary.json", j.dump(2) + "\n");
  return summary;
}

// ---------------------------------------------------------------------------

std::size_t Table::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw SchemaError("missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

Table read_csv(std::istream& in) {
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty CSV: missing header");
  t.header = split(line, ',');
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != t.header.size())
      throw SchemaError("CSV row " + std::to_string(row) + " has " + std::to_string(cells.size()) + " fields, expected " +
                        std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

Table read_csv_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open " + path.string());
  return read_csv(in);
}

void write_csv(std::ostream& out, const Table& table) {
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
}

Table aggregate_over_seeds(const Table& merged, std::size_t key_columns) {
  const std::size_t seed_col = merged.column("seed");
  if (key_columns > merged.header.size() || seed_col >= key_columns)
    throw SchemaError("aggregate: seed must be a key column");
  Table out;
  for (std::size_t c = 0; c < key_columns; ++c)
    if (c != seed_col) out.header.push_back(merged.header[c]);
  out.header.push_back("seeds");
  for (std::size_t c = key_columns; c < merged.header.size(); ++c)
    for (const char* s : {"_median", "_p05", "_p95"}) out.header.push_back(merged.header[c] + s);

  std::vector<std::vector<std::string>> order;
  std::map<std::vector<std::string>, std::vector<std::vector<double>>> groups;
  for (const auto& row : merged.rows) {
    std::vector<std::string> key;
    for (std::size_t c = 0; c < key_columns; ++c)
      if (c != seed_col) key.push_back(row[c]);
    auto [it, inserted] = groups.try_emplace(key, merged.header.size() - key_columns);
    if (inserted) order.push_back(key);
    for (std::size_t c = key_columns; c < row.size(); ++c) {
      const auto v = parse_double(row[c]);
      if (!v) throw SchemaError("aggregate: non-numeric metric '" + row[c] + "'");
      it->second[c - key_columns].push_back(*v);
    }
  }
  for (const auto& key : order) {
    const auto& metrics = groups.at(key);
    auto row = key;
    row.push_back(std::to_string(metrics.empty() ? 0 : metrics.front().size()));
    for (const auto& values : metrics) {
      row.push_back(format_double(median(values)));
      row.push_back(format_double(quantile(values, 0.05)));
      row.push_back(format_double(quantile(values, 0.95)));
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

OverlayKind parse_overlay_kind(const std::string& text) {
  if (text == "lower_bound") return OverlayKind::lower_bound;
  if (text == "routing_Q") return OverlayKind::routing_Q;
  throw std::invalid_argument("overlay kind must be lower_bound or routing_Q, got '" + text + "'");
}

Table emit_overlay(const Table& results, OverlayKind kind) {
  Table out = results;
  auto number = [](const std::string& cell, const std::string& column) {
    const auto v = parse_double(cell);
    if (!v) throw SchemaError("column '" + column + "' holds non-numeric '" + cell + "'");
    return *v;
  };
  if (kind == OverlayKind::lower_bound) {
    const auto cn = results.column("n"), ca = results.column("alpha"), ce = results.column("epsilon"),
               cg = results.column("gamma");
    out.header.push_back("overlay_lower_bound");
    for (auto& row : out.rows) {
      const double n = number(row[cn], "n");
      row.push_back(format_double(number(row[cg], "gamma") / 4.0 *
                                  std::exp(-n * number(row[ca], "alpha") * bounds::kappa(number(row[ce], "epsilon")))));
    }
  } else {
    const auto ca = results.column("alpha"), ce = results.column("epsilon"), cg = results.column("gamma"),
               ch = results.column("eta");
    out.header.push_back("overlay_routing_Q");
    for (auto& row : out.rows) {
      const double a = number(row[ca], "alpha");
      const double e = number(row[ce], "epsilon");
      row.push_back(format_double(std::log(number(row[cg], "gamma") / number(row[ch], "eta")) / (2.0 * a * e * e)));
    }
  }
  return out;
}

std::string resolve_output_dir(const std::string& flag_value) {
  if (const char* env = std::getenv("MISSPEC_LAB_OUT"); env && *env) return env;
  return flag_value;
}

std::string version_string() { return MISSPEC_VERSION; }

}  // namespace misspec::runner
