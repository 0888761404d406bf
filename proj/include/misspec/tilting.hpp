#pragma once

#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace misspec {

// Finite-support probability measure whose atoms carry named real attributes
// (score values, hard-set flags, per-action rewards, ...).
class DiscreteMeasure {
 public:
  // Weights must be nonnegative, finite, and sum to 1 within 1e-9; they are
  // renormalized exactly.
  explicit DiscreteMeasure(std::vector<double> weights);
  // Accepts any nonnegative masses with a positive total.
  static DiscreteMeasure from_masses(std::vector<double> masses);
  static DiscreteMeasure uniform(std::size_t atoms);

  std::size_t size() const noexcept { return weights_.size(); }
  std::span<const double> weights() const noexcept { return weights_; }

  void set_attribute(const std::string& name, std::vector<double> values);
  bool has_attribute(std::string_view name) const;
  // Throws std::invalid_argument for unknown names.
  std::span<const double> attribute(std::string_view name) const;
  std::vector<std::string> attribute_names() const;

  // Same atoms and attributes, new weights.
  DiscreteMeasure reweighted(std::vector<double> weights) const;

  double expectation(std::span<const double> f) const;
  double covariance(std::span<const double> f, std::span<const double> g) const;
  double variance(std::span<const double> f) const { return covariance(f, f); }

 private:
  DiscreteMeasure() = default;
  void check_size(std::span<const double> f) const;

  std::vector<double> weights_;
  std::map<std::string, std::vector<double>, std::less<>> attributes_;
};

// CSV with a `weight` column first, then one column per attribute.
DiscreteMeasure read_measure_csv(std::istream& in);
void write_measure_csv(std::ostream& out, const DiscreteMeasure& mu);

// Weighted moments over an explicit weight vector.
double weighted_mean(std::span<const double> w, std::span<const double> f);
double weighted_covariance(std::span<const double> w, std::span<const double> f, std::span<const double> g);

struct TiltState {
  double lambda = 0.0;
  double log_partition = 0.0;  // A(lambda)
  double mean_s = 0.0;         // A'(lambda)
  double var_s = 0.0;          // A''(lambda)
};

// A(lambda) = log sum_i w_i exp(lambda s_i), max-shifted.
double log_partition(const DiscreteMeasure& mu, std::span<const double> s, double lambda);
std::vector<double> tilted_weights(const DiscreteMeasure& mu, std::span<const double> s, double lambda);
DiscreteMeasure tilt(const DiscreteMeasure& mu, std::span<const double> s, double lambda);
TiltState tilt_state(const DiscreteMeasure& mu, std::span<const double> s, double lambda);

double tilt_expectation(const DiscreteMeasure& mu, std::span<const double> s, std::span<const double> f,
                        double lambda);
// d/dlambda E_{q_lambda}[f] = Cov_{q_lambda}(f, s).
double tilt_derivative(const DiscreteMeasure& mu, std::span<const double> s, std::span<const double> f,
                       double lambda);

struct TiltKl {
  double forward = 0.0;  // KL(q_lambda || mu) = lambda A' - A
  double reverse = 0.0;  // KL(mu || q_lambda) = A - lambda E_mu[s]
};
TiltKl kl_tilt(const DiscreteMeasure& mu, std::span<const double> s, double lambda);

struct HardMassPoint {
  double lambda = 0.0;
  double rho = 0.0;                    // q_lambda(hard)
  double drho = 0.0;                   // Cov_{q_lambda}(H, s)
  std::optional<double> dlog_rho;      // drho / rho; empty when rho == 0
  double var_s = 0.0;                  // A''(lambda)
};

std::vector<HardMassPoint> hard_mass_curve(const DiscreteMeasure& mu, std::span<const double> s,
                                           std::span<const double> hard, std::span<const double> lambda_grid);

struct IProjection {
  double lambda_star = 0.0;
  double achieved_mean = 0.0;
  int iterations = 0;
};

// Solves A'(lambda) = m by bracket expansion and bisection. Throws
// InfeasibleMoment unless m lies strictly between the smallest and largest
// s over atoms with positive weight.
IProjection i_projection(const DiscreteMeasure& mu, std::span<const double> s, double m, double tol = 1e-10);

// ---------------------------------------------------------------------------
// Vector tilting with k statistics.

double vector_log_partition(const DiscreteMeasure& mu, std::span<const std::span<const double>> s,
                            std::span<const double> theta);
std::vector<double> vector_tilted_weights(const DiscreteMeasure& mu, std::span<const std::span<const double>> s,
                                          std::span<const double> theta);
// Cov_{q_theta}(f, s_j) for each j.
std::vector<double> vector_tilt_gradient(const DiscreteMeasure& mu, std::span<const std::span<const double>> s,
                                         std::span<const double> f, std::span<const double> theta);
// E_{q_theta}[s]: gradient of A.
std::vector<double> vector_tilt_mean(const DiscreteMeasure& mu, std::span<const std::span<const double>> s,
                                     std::span<const double> theta);
// Covariance matrix of s under q_theta (row-major k x k): Hessian of A.
std::vector<double> vector_tilt_hessian(const DiscreteMeasure& mu, std::span<const std::span<const double>> s,
                                        std::span<const double> theta);

// ---------------------------------------------------------------------------
// Randomized policy pi_lambda(a1 | x) = sigmoid(lambda s(x)).

struct PolicyRandomizationDerivative {
  double analytic_fd = 0.0;       // centered difference of E_mu[r(X, pi_lambda(X))]
  double exact_derivative = 0.0;  // E_mu[(r1 - r0) sigma'(lambda s) s]
  double paper_covariance = 0.0;  // Cov_mu(r(X, pi_lambda(X)), s(X))
};

PolicyRandomizationDerivative policy_randomization_derivative(const DiscreteMeasure& mu,
                                                              std::span<const double> reward_a0,
                                                              std::span<const double> reward_a1,
                                                              std::span<const double> s, double lambda,
                                                              double step = 1e-4);

}  // namespace misspec
