#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "misspec/channel.hpp"
#include "misspec/env.hpp"
#include "misspec/protocols.hpp"
#include "misspec/random.hpp"
#include "misspec/stats.hpp"
#include "misspec/tilting.hpp"

namespace misspec {

// n rounds of the query policy. Queried rounds carry a label from `ch` in
// world `w_true` and the action that label favors.
Transcript collect_transcript(const EnvironmentSpec& env, WorldSign w_true, const ChannelSpec& ch, std::size_t n,
                              const QueryPolicy& policy, RandomStream& rng);

struct FitOptions {
  std::size_t iterations = 500;
  double step = 0.1;
  double l2 = 1e-4;
};

struct PreferenceFit {
  LinearScore score;
  std::vector<double> loss_history;  // loss before each iteration, then the final loss
  std::size_t labeled = 0;
};

// L2-regularized logistic regression of z = +1 (label prefers a1) / -1 on
// [x; 1] by full-batch gradient descent on the mean loss. Steps that would
// raise the loss are halved; iteration stops early once no step lowers it.
// Throws InsufficientData without labels.
PreferenceFit fit_preference_score(const Transcript& transcript, const FitOptions& options = {});

// pi_lambda(a1 | x) = sigmoid(lambda * score(x)); throws for lambda < 0.
PolicySpec policy_lambda(const ScoreFunction& score, double lambda);

// Proxy rewards r_hat(x, a1) = s_hat(x) / 2, r_hat(x, a0) = -s_hat(x) / 2.
double proxy_reward(double s_hat, double prob_a1);

struct DiagnosticCurve {
  std::vector<double> grid;
  std::vector<Estimate> true_value;
  std::vector<Estimate> proxy_value;
  std::vector<double> hard_mass;
  std::vector<Estimate> true_gap;   // V_w(pi^w) - V_w(pi_lambda)
  std::vector<Estimate> proxy_gap;  // V_hat(pi^w) - V_hat(pi_lambda)
  std::vector<double> proxy_cov;    // Cov_mu(r_hat(X, pi_lambda(X)), s_hat(X))
};

// Gap versus temperature. All grid points share one context sample.
// hard_mass is the hard-set mass of the exp(lambda s_hat) tilt of that sample.
DiagnosticCurve diagnostic_d1(const EnvironmentSpec& env, WorldSign w_eval, const ScoreFunction& score,
                              std::span<const double> lambda_grid, std::size_t trials, RandomStream& rng);

// First k with proxy_gap[k+1] < proxy_gap[k] and true_gap[k+1] > true_gap[k].
std::optional<std::size_t> find_divergence(const DiagnosticCurve& curve);

struct D1Config {
  EnvironmentSpec env;
  ChannelSpec channel;
  WorldSign w_true = WorldSign::minus;
  std::size_t n = 100000;
  FitOptions fit;
  std::vector<double> lambda_grid{0, 1, 2, 5, 10, 20, 50, 100, 200};
  std::size_t eval_trials = 100000;
};

// alpha = 0.1, eps = 0.1, d = 10, n = 1e5, labels from world -1.
D1Config d1_reference_config();

struct D1Result {
  std::uint64_t seed = 0;
  PreferenceFit fit;
  DiagnosticCurve curve;
  std::optional<std::size_t> divergence;
};

// Always-query transcript, proxy fit, then diagnostic_d1 in world w_true.
D1Result run_d1(const D1Config& config, std::uint64_t seed);

struct ShiftPoint {
  double factor = 0.0;
  double alpha_shifted = 0.0;
  Estimate reweighted;     // importance-reweighted base sample
  Estimate decomposition;  // (1 - a) E[r | easy] + a E[r | hard]
  Estimate direct;         // fresh sample from the shifted mixture
};

struct ShiftReport {
  Estimate easy_mean;
  Estimate hard_mean;
  Estimate predicted_slope;  // alpha (E[r | hard] - E[r | easy])
  std::vector<ShiftPoint> points;
  // (direct[k+1] - direct[k]) / (factor[k+1] - factor[k]) with its SE
  std::vector<Estimate> slopes;
};

// Hard mass (1 + factor) alpha with unchanged conditionals. Throws
// std::invalid_argument when a factor is negative or the mass exceeds 1.
ShiftReport diagnostic_d2_shift(const EnvironmentSpec& env, WorldSign w, const PolicySpec& pi,
                                std::span<const double> shift_factors, std::size_t trials, RandomStream& rng);

struct RoutingRow {
  double eta = 0.0;
  std::size_t T = 0;
  double overlay_q = 0.0;        // log(gamma / eta) / (2 alpha eps^2)
  double noisy_q = 0.0;          // overlay_q / tau
  double predicted_draws = 0.0;  // T / (alpha tau + (1 - alpha) phi)
  ProtocolSummary summary;
};

// T = ceil(log(gamma / eta) / (2 eps^2)) per eta, with `trials` majority runs.
std::vector<RoutingRow> diagnostic_d3_routing(const EnvironmentSpec& env, WorldSign w_true, const ChannelSpec& ch,
                                              const FlaggerSpec& flagger, std::span<const double> eta_targets,
                                              double gamma, std::size_t trials, RandomStream& rng);

struct LowerBoundPoint {
  std::uint64_t n = 0;
  double bound = 0.0;
};

struct EstimateReport {
  Estimate alpha_hat;
  Estimate epsilon_hat;
  Estimate gamma_hat;
  std::size_t audit_size = 0;
  std::size_t adjudicated_size = 0;
  std::vector<LowerBoundPoint> lower_bound;  // (gamma_hat / 4) exp(-n alpha_hat kappa(eps_hat))
};

struct FlaggerCorrection {
  double tau = 1.0;
  double phi = 0.0;
};

// Audit contexts give alpha_hat (flag rate, corrected by the rates when
// supplied) and gamma_hat (flagged margin between pi^+ and pi^-, divided by
// tau); adjudicated hard comparisons give eps_hat. Throws InsufficientData
// for an empty audit.
EstimateReport estimate_parameters(const EnvironmentSpec& env, WorldSign w_true, const ChannelSpec& ch,
                                   const FlaggerSpec& flagger, std::optional<FlaggerCorrection> rates,
                                   std::size_t audit_size, std::size_t adjudicated_size,
                                   std::span<const std::uint64_t> n_grid, RandomStream& rng);

// ---------------------------------------------------------------------------
// Multi-objective trade-off. Atoms carry `S` (0/1) and `g<j>_a<a>` for
// objectives j = 1..m and actions a = 0..A-1.

struct TradeoffCheck {
  double lhs = 0.0;         // sum_j E[g_j(pi^(j))] - E[g_j(pi)]
  double alpha_s = 0.0;
  double min_margin = 0.0;  // min_j m_j
  std::size_t k = 0;        // fewest objectives any action misses on S
  double rhs = 0.0;         // alpha_S min_j m_j
  double rhs_general = 0.0; // k alpha_S min_j m_j
};

// Throws InvalidInstance when the three optimal actions do not disagree
// pairwise on S (objectives == 3) or attributes are missing.
TradeoffCheck multiobjective_gap_check(const DiscreteMeasure& mu, std::size_t objectives, std::size_t actions,
                                       std::span<const int> policy);

// Random instance with pairwise-disagreeing optima on S.
DiscreteMeasure random_tradeoff_instance(std::size_t atoms, std::size_t objectives, std::size_t actions,
                                         RandomStream& rng);

// Optimal action of objective j (1-based) per atom.
std::vector<int> objective_optimal_policy(const DiscreteMeasure& mu, std::size_t objective, std::size_t actions);

struct DivergencePoint {
  double lambda = 0.0;
  double delta_pv = 0.0;    // E_{q_lambda}[r_hat - r_w]
  double d_delta = 0.0;     // centered finite difference
  double covariance = 0.0;  // Cov_{q_lambda}(r_hat - r_w, s_hat)
};

struct DivergenceReport {
  std::vector<DivergencePoint> points;
  bool increasing_where_positive = true;
};

DivergenceReport proxy_true_divergence(const DiscreteMeasure& mu, std::span<const double> s_hat,
                                       std::span<const double> r_hat, std::span<const double> r_w,
                                       std::span<const double> lambda_grid, double step = 1e-4);

}  // namespace misspec
