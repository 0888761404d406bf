#include "misspec/maps.hpp"

#include <cmath>
#include <stdexcept>

#include "misspec/config.hpp"
#include "misspec/error.hpp"

namespace misspec::maps {

namespace {

constexpr double kZeroDrift = 1e-12;

}  // namespace

void ShapedScoreSpec::validate() const {
  bool any = base_weight != 0.0;
  for (const auto& a : aux) any = any || a.weight != 0.0;
  for (const auto& p : penalties) any = any || p.weight != 0.0;
  if (!any) throw std::invalid_argument("shaped score has no nonzero term");
}

std::vector<double> shaped_score(const ShapedScoreSpec& spec, const DiscreteMeasure& mu) {
  spec.validate();
  std::vector<double> t(mu.size(), 0.0);
  auto add = [&](const std::string& name, double weight) {
    const auto values = mu.attribute(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += weight * values[i];
  };
  if (spec.base_weight != 0.0) add(spec.base_attribute, spec.base_weight);
  for (const auto& a : spec.aux) add(a.attribute, a.weight);
  for (const auto& p : spec.penalties) add(p.attribute, -p.weight);
  return t;
}

ShapedScoreSpec read_shaping_spec(std::istream& in, const std::string& source) {
  const auto cfg = Config::parse(in, source);
  const auto& section = cfg.section("");
  ShapedScoreSpec spec;
  spec.base_attribute = section.get_or("s0", "s");
  spec.base_weight = section.get_double_or("w0", 1.0);
  for (const auto& [key, entry] : section.entries()) {
    if (key == "s0" || key == "w0") continue;
    if (key.starts_with("aux_") && key.size() > 4)
      spec.aux.push_back({key.substr(4), section.get_double(key)});
    else if (key.starts_with("beta_") && key.size() > 5)
      spec.penalties.push_back({key.substr(5), section.get_double(key)});
    else
      section.fail(key, "unknown shaping key");
  }
  spec.validate();
  return spec;
}

double flagger_covariance(double alpha, double tau, double phi) {
  for (double p : {alpha, tau, phi})
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("flagger_covariance: arguments must be probabilities");
  return alpha * (1.0 - alpha) * (tau - phi);
}

double beta_star(double cov_Hg, double alpha, double tau, double phi) {
  if (tau == phi) throw NoCancellation("beta_star: flagger with tau == phi cannot cancel the drift");
  const double c = flagger_covariance(alpha, tau, phi);
  if (c == 0.0) throw NoCancellation("beta_star: flagger covariance is zero (alpha in {0, 1})");
  return cov_Hg / c;
}

double drift_at_zero(const DiscreteMeasure& mu, std::span<const double> t, std::span<const double> hard) {
  return mu.covariance(hard, t);
}

DriftDecomposition drift_decomposition(const ShapedScoreSpec& spec, const DiscreteMeasure& mu,
                                       std::span<const double> hard) {
  DriftDecomposition out;
  if (spec.base_weight != 0.0) out.base = spec.base_weight * mu.covariance(hard, mu.attribute(spec.base_attribute));
  out.total = out.base;
  for (const auto& a : spec.aux) {
    out.aux.push_back(a.weight * mu.covariance(hard, mu.attribute(a.attribute)));
    out.total += out.aux.back();
  }
  for (const auto& p : spec.penalties) {
    out.penalties.push_back(-p.weight * mu.covariance(hard, mu.attribute(p.attribute)));
    out.total += out.penalties.back();
  }
  out.direct = drift_at_zero(mu, shaped_score(spec, mu), hard);
  return out;
}

OrthogonalProjection orthogonal_projection_shaping(const DiscreteMeasure& mu, std::span<const double> r_delta,
                                                   std::span<const double> hard) {
  const double var_h = mu.variance(hard);
  if (!(var_h > 0.0)) throw std::invalid_argument("orthogonal_projection_shaping: Var(H) must be positive");
  OrthogonalProjection out;
  out.r_center = mu.expectation(r_delta);
  out.hard_center = mu.expectation(hard);
  const double cov = mu.covariance(hard, r_delta);
  out.beta = cov / var_h;
  out.t.resize(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i)
    out.t[i] = (r_delta[i] - out.r_center) - out.beta * (hard[i] - out.hard_center);
  out.preserved = mu.variance(r_delta) - cov * cov / var_h;
  return out;
}

double temperature_kl_small(double lambda, double var_t) {
  if (!(var_t >= 0.0)) throw std::invalid_argument("temperature_kl_small: variance must be nonnegative");
  return 0.5 * lambda * lambda * var_t;
}

DriftLimitReport drift_limit_report(const DiscreteMeasure& mu, std::span<const double> t,
                                    std::span<const double> hard, std::span<const double> lambda_grid) {
  DriftLimitReport report;
  report.drift_at_zero = drift_at_zero(mu, t, hard);
  for (double lambda : lambda_grid) {
    const auto q = tilted_weights(mu, t, lambda);
    DriftPoint p;
    p.lambda = lambda;
    p.rho = weighted_mean(q, hard);
    p.drift = weighted_covariance(q, hard, t);
    p.kl_forward = kl_tilt(mu, t, lambda).forward;
    report.points.push_back(p);
  }
  const bool zero_start = std::abs(report.drift_at_zero) <= kZeroDrift;
  for (const auto& p : report.points)
    if (zero_start && p.lambda != 0.0 && std::abs(p.drift) > kZeroDrift) report.first_order_only = true;
  for (std::size_t k = 1; k < report.points.size(); ++k) {
    const auto& a = report.points[k - 1];
    const auto& b = report.points[k];
    if (!(b.lambda > a.lambda)) continue;
    if (a.drift > 0.0 && b.drift > 0.0 && !(b.rho > a.rho)) report.increasing_where_positive = false;
    if (a.drift < 0.0 && b.drift < 0.0 && !(b.rho < a.rho)) report.decreasing_where_negative = false;
  }
  return report;
}

}  // namespace misspec::maps
