#pragma once

#include <istream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "misspec/tilting.hpp"

namespace misspec::maps {

struct WeightedAttribute {
  std::string attribute;
  double weight = 0.0;
};

// t = w0 s0 + sum_i w_i s_i - sum_j beta_j g_j, evaluated per atom.
struct ShapedScoreSpec {
  std::string base_attribute = "s";
  double base_weight = 1.0;
  std::vector<WeightedAttribute> aux;
  std::vector<WeightedAttribute> penalties;  // weight holds beta_j

  // Throws std::invalid_argument when every weight is zero.
  void validate() const;
};

// Throws std::invalid_argument for attributes missing from mu.
std::vector<double> shaped_score(const ShapedScoreSpec& spec, const DiscreteMeasure& mu);

// Shaping spec file: `s0 = <attr>`, `w0 = <w>`, `aux_<attr> = <w>`,
// `beta_<attr> = <beta>`, one per line, `#` comments.
ShapedScoreSpec read_shaping_spec(std::istream& in, const std::string& source = "<shaping>");

// alpha (1 - alpha) (tau - phi) = Cov(H, h_hat) for a flagger with rates (tau, phi).
double flagger_covariance(double alpha, double tau, double phi);

// cov_Hg / flagger_covariance(...). Throws NoCancellation when tau == phi.
double beta_star(double cov_Hg, double alpha, double tau, double phi);

// Cov_mu(H, t) = rho_t'(0).
double drift_at_zero(const DiscreteMeasure& mu, std::span<const double> t, std::span<const double> hard);

struct DriftDecomposition {
  double base = 0.0;                  // w0 Cov(H, s0)
  std::vector<double> aux;            // w_i Cov(H, s_i)
  std::vector<double> penalties;      // -beta_j Cov(H, g_j)
  double total = 0.0;                 // sum of the terms
  double direct = 0.0;                // Cov(H, t) for the assembled t
};

DriftDecomposition drift_decomposition(const ShapedScoreSpec& spec, const DiscreteMeasure& mu,
                                       std::span<const double> hard);

struct OrthogonalProjection {
  std::vector<double> t;      // centered r_delta - beta * centered H
  double beta = 0.0;          // Cov(H, r_delta) / Var(H)
  double r_center = 0.0;      // E_mu[r_delta]
  double hard_center = 0.0;   // E_mu[H]
  double preserved = 0.0;     // Var(r_delta) - Cov(H, r_delta)^2 / Var(H)
};

// Throws std::invalid_argument when Var_mu(H) == 0.
OrthogonalProjection orthogonal_projection_shaping(const DiscreteMeasure& mu, std::span<const double> r_delta,
                                                   std::span<const double> hard);

// lambda^2 var_t / 2.
double temperature_kl_small(double lambda, double var_t);

struct DriftPoint {
  double lambda = 0.0;
  double rho = 0.0;
  double drift = 0.0;   // Cov_{q_lambda}(H, t)
  double kl_forward = 0.0;
};

struct DriftLimitReport {
  double drift_at_zero = 0.0;
  std::vector<DriftPoint> points;
  // Cov_mu(H, t) vanishes but the drift is nonzero somewhere on the grid.
  bool first_order_only = false;
  // rho strictly increases between consecutive grid points where the drift stays positive.
  bool increasing_where_positive = true;
  // rho strictly decreases between consecutive grid points where the drift stays negative.
  bool decreasing_where_negative = true;
};

DriftLimitReport drift_limit_report(const DiscreteMeasure& mu, std::span<const double> t,
                                    std::span<const double> hard, std::span<const double> lambda_grid);

}  // namespace misspec::maps
