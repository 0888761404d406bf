#include "misspec/bounds.hpp"

#include <cmath>
#include <stdexcept>

#include "misspec/config.hpp"

namespace misspec::bounds {

namespace {

void check_epsilon(double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= kEpsilonMax))
    throw std::invalid_argument("epsilon must lie in [0, 0.49]");
}

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string(name) + " must lie in [0, 1]");
}

void check_delta(double delta) {
  if (!(delta > 0.0 && delta < 0.5)) throw std::invalid_argument("delta must lie in (0, 0.5)");
}

double log_odds_threshold(double delta) { return std::log((1.0 - delta) / delta); }

}  // namespace

double atanh_stable(double z) {
  if (std::abs(z) > 0.9) return 0.5 * std::log((1.0 + z) / (1.0 - z));
  return std::atanh(z);
}

double kappa(double epsilon) {
  check_epsilon(epsilon);
  return 4.0 * epsilon * atanh_stable(2.0 * epsilon);
}

double kappa_upper(double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 0.5)) throw std::invalid_argument("kappa_upper: epsilon must lie in [0, 0.5)");
  return 8.0 * epsilon * epsilon / (1.0 - 4.0 * epsilon * epsilon);
}

double lower_bound_gap(double gamma, std::uint64_t n, double alpha, double epsilon) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
  check_probability(alpha, "alpha");
  return 0.25 * gamma * std::exp(-static_cast<double>(n) * alpha * kappa(epsilon));
}

double bh_bayes_error(double kl) {
  if (!(kl >= 0.0)) throw std::invalid_argument("KL must be nonnegative");
  return 0.25 * std::exp(-kl);
}

MajorityBudget majority_query_budget(double alpha, double epsilon, double gamma, double eta) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
  if (!(epsilon > 0.0 && epsilon <= kEpsilonMax)) throw std::invalid_argument("epsilon must lie in (0, 0.49]");
  if (!(eta > 0.0 && eta < gamma)) throw std::invalid_argument("eta must lie in (0, gamma)");
  const double hits = std::log(gamma / eta) / (2.0 * epsilon * epsilon);
  return {hits, hits / alpha};
}

double noisy_oracle_budget(double alpha, double tau, double epsilon, double gamma, double eta) {
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must lie in (0, 1]");
  return majority_query_budget(alpha, epsilon, gamma, eta).queries / tau;
}

double hetero_lower_bound(double gamma, std::uint64_t n, double alpha, double mean_kappa) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
  if (!(mean_kappa >= 0.0)) throw std::invalid_argument("mean per-hit KL must be nonnegative");
  check_probability(alpha, "alpha");
  return 0.25 * gamma * std::exp(-static_cast<double>(n) * alpha * mean_kappa);
}

double mixture_kl_budget(std::uint64_t n, std::span<const HardComponent> components) {
  double mass = 0.0;
  double rate = 0.0;
  for (const auto& c : components) {
    if (!(c.alpha >= 0.0)) throw std::invalid_argument("component mass must be nonnegative");
    mass += c.alpha;
    rate += c.alpha * kappa(c.epsilon);
  }
  if (mass > 1.0 + 1e-12) throw std::invalid_argument("component masses sum above 1");
  return static_cast<double>(n) * rate;
}

double sprt_expected_hits(double delta, double epsilon) {
  check_delta(delta);
  const double k = kappa(epsilon);
  if (k <= 0.0) throw std::invalid_argument("sprt_expected_hits: epsilon must be positive");
  return log_odds_threshold(delta) / k;
}

SignErrorFloor sign_error_floor(std::uint64_t n, double alpha, double epsilon) {
  check_probability(alpha, "alpha");
  const double p = 0.25 * std::exp(-static_cast<double>(n) * alpha * kappa(epsilon));
  return {p, alpha * p};
}

double maps_sequential_cost(double alpha, double tau, double epsilon, double delta) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must lie in (0, 1]");
  return sprt_expected_hits(delta, epsilon) / (alpha * tau);
}

BoundReport bound_report(const BoundParameters& p) {
  BoundReport r;
  r.parameters = p;
  r.kappa = kappa(p.epsilon);
  r.kl_budget = static_cast<double>(p.n) * p.alpha * r.kappa;
  r.lower_gap = lower_bound_gap(p.gamma, p.n, p.alpha, p.epsilon);
  r.query_budget = majority_query_budget(p.alpha, p.epsilon, p.gamma, p.eta).queries;
  r.noisy_query_budget = noisy_oracle_budget(p.alpha, p.tau, p.epsilon, p.gamma, p.eta);
  r.sprt_hits = sprt_expected_hits(p.delta, p.epsilon);
  return r;
}

std::string bound_report_header() {
  return "n,alpha,epsilon,gamma,eta,tau,delta,kappa,kl_budget,lower_gap,Q_majority,Q_noisy,sprt_hits";
}

std::string bound_report_row(const BoundReport& r) {
  const auto& p = r.parameters;
  std::string row = std::to_string(p.n);
  for (double v : {p.alpha, p.epsilon, p.gamma, p.eta, p.tau, p.delta, r.kappa, r.kl_budget, r.lower_gap,
                   r.query_budget, r.noisy_query_budget, r.sprt_hits}) {
    row += ',';
    row += format_double(v);
  }
  return row;
}

}  // namespace misspec::bounds
