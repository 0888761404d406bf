#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

// Closed-form information bounds and query budgets. All logarithms are
// natural; KL quantities are in nats.
namespace misspec::bounds {

// Largest bias accepted anywhere: keeps atanh(2 eps) finite with margin.
inline constexpr double kEpsilonMax = 0.49;

// atanh with the log form near |z| -> 1.
double atanh_stable(double z);

// Per-hit KL between Ber(1/2 + eps) and Ber(1/2 - eps): 4 eps atanh(2 eps).
double kappa(double epsilon);
// 8 eps^2 / (1 - 4 eps^2), an upper bound on kappa for eps in [0, 1/2).
double kappa_upper(double epsilon);

// (gamma / 4) exp(-n alpha kappa(eps)): minimax value-gap floor.
double lower_bound_gap(double gamma, std::uint64_t n, double alpha, double epsilon);

// Bayes-error floor (1/4) exp(-kl) under equal priors.
double bh_bayes_error(double kl);

struct MajorityBudget {
  double hits = 0.0;     // T
  double queries = 0.0;  // Q = T / alpha
};
MajorityBudget majority_query_budget(double alpha, double epsilon, double gamma, double eta);

// log(gamma / eta) / (2 alpha tau eps^2).
double noisy_oracle_budget(double alpha, double tau, double epsilon, double gamma, double eta);

// (gamma / 4) exp(-n alpha K) for an average per-hit KL K.
double hetero_lower_bound(double gamma, std::uint64_t n, double alpha, double mean_kappa);

struct HardComponent {
  double alpha = 0.0;
  double epsilon = 0.0;
};
// n * sum_j alpha_j kappa(eps_j).
double mixture_kl_budget(std::uint64_t n, std::span<const HardComponent> components);

// log((1 - delta) / delta) / kappa(eps).
double sprt_expected_hits(double delta, double epsilon);

struct SignErrorFloor {
  double sign_error = 0.0;    // (1/4) exp(-n alpha kappa)
  double disagreement = 0.0;  // alpha * sign_error
};
SignErrorFloor sign_error_floor(std::uint64_t n, double alpha, double epsilon);

// (1 / (alpha tau)) log((1 - delta) / delta) / kappa(eps).
double maps_sequential_cost(double alpha, double tau, double epsilon, double delta);

struct BoundParameters {
  std::uint64_t n = 0;
  double alpha = 0.05;
  double epsilon = 0.1;
  double gamma = 0.05;
  double eta = 0.005;
  double tau = 1.0;
  double phi = 0.0;
  double delta = 0.05;
};

struct BoundReport {
  BoundParameters parameters;
  double kappa = 0.0;
  double kl_budget = 0.0;  // n alpha kappa
  double lower_gap = 0.0;
  double query_budget = 0.0;  // majority Q
  double noisy_query_budget = 0.0;
  double sprt_hits = 0.0;
};

BoundReport bound_report(const BoundParameters& p);

// CSV header and row for the `bounds` subcommand.
std::string bound_report_header();
std::string bound_report_row(const BoundReport& r);

}  // namespace misspec::bounds
