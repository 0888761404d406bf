#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "misspec/config.hpp"
#include "misspec/learner.hpp"

namespace misspec::runner {

// Suites a run can select: bounds, minimax, sprt, d1, d2, d3.
const std::vector<std::string>& known_suites();

struct ExperimentConfig {
  std::vector<double> alpha_grid{0.01, 0.05, 0.1};
  std::vector<double> epsilon_grid{0.05, 0.1};
  std::vector<std::int64_t> d_grid{10, 50};
  std::vector<std::int64_t> n_grid{1000, 10000};
  std::vector<double> lambda_grid{0, 1, 2, 5, 10, 20, 50};
  std::vector<double> shift_grid{0, 0.5, 1};
  std::vector<double> eta_grid{0.5, 0.1, 0.01};  // fractions of gamma
  std::size_t trials = 200;
  std::vector<std::int64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::string output_dir = "results";
  std::vector<std::string> suites{"bounds", "minimax", "sprt", "d1", "d2", "d3"};
  std::uint64_t master_seed = 0;

  double center_scale = 0.5;
  std::uint64_t direction_seed = 0;
  double delta = 0.05;
  double tau = 0.5;
  double phi = 0.1;
  FitOptions fit;
  std::size_t eval_trials = 20000;

  // Throws ConfigError (line 0) on violated invariants.
  void validate(const std::string& source = "<experiment>") const;
};

// Sections: [experiment] grids, trials, seeds, output_dir, suites,
// master_seed; [environment] center_scale, direction_seed; [protocols]
// delta, tau, phi; [fit] iterations, step, l2, eval_trials. Unknown keys are
// rejected with their line.
ExperimentConfig experiment_config_from(const Config& config);

// |alpha| |eps| |d| |seeds|.
std::size_t planned_cells(const ExperimentConfig& config);

struct RunSummary {
  std::size_t cells = 0;
  std::size_t failures = 0;
  std::vector<std::string> files;  // relative to the output directory, sorted
  int exit_code = 0;               // 0, or 2 when some cell failed
};

// Writes per-cell files under cells/<suite>/, merged <suite>.csv,
// <suite>_aggregate.csv (median, p05, p95 over seeds), failures.csv, SCHEMA
// and summary.json. An empty suite selection writes nothing.
RunSummary run_suite(const ExperimentConfig& config, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// CSV tables

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Throws SchemaError for a missing column.
  std::size_t column(const std::string& name) const;
};

Table read_csv(std::istream& in);
Table read_csv_file(const std::filesystem::path& path);
void write_csv(std::ostream& out, const Table& table);

// Rows grouped by every key column except `seed`; each metric becomes
// <metric>_median, <metric>_p05, <metric>_p95.
Table aggregate_over_seeds(const Table& merged, std::size_t key_columns);

enum class OverlayKind { lower_bound, routing_Q };
OverlayKind parse_overlay_kind(const std::string& text);

// Appends the theoretical column to every row: (gamma / 4) exp(-n alpha
// kappa(eps)) needs n, alpha, epsilon, gamma; log(gamma / eta) / (2 alpha
// eps^2) needs alpha, epsilon, gamma, eta. Throws SchemaError otherwise.
Table emit_overlay(const Table& results, OverlayKind kind);

// MISSPEC_LAB_OUT when set, otherwise `flag_value`.
std::string resolve_output_dir(const std::string& flag_value);

// git describe of the source tree at configure time.
std::string version_string();

}  // namespace misspec::runner
