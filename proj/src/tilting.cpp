#include "misspec/tilting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "misspec/config.hpp"
#include "misspec/env.hpp"
#include "misspec/error.hpp"

namespace misspec {

namespace {

void check_same_size(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("attribute length does not match the measure");
}

double positive_max(std::span<const double> w, std::span<const double> s, double lambda) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w[i] > 0.0) m = std::max(m, lambda * s[i]);
  return m;
}

// Tilted weights w_i exp(lambda s_i - A) normalized to sum exactly 1, and A.
std::vector<double> tilt_weights_impl(std::span<const double> w, std::span<const double> s, double lambda,
                                      double* log_z) {
  check_same_size(w, s);
  if (w.empty()) throw std::invalid_argument("empty measure");
  const double shift = positive_max(w, s, lambda);
  std::vector<double> q(w.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] <= 0.0) continue;
    q[i] = w[i] * std::exp(lambda * s[i] - shift);
    total += q[i];
  }
  for (auto& v : q) v /= total;
  if (log_z) *log_z = shift + std::log(total);
  return q;
}

std::vector<double> combine(std::span<const std::span<const double>> s, std::span<const double> theta,
                            std::size_t atoms) {
  if (s.empty()) throw std::invalid_argument("vector tilt needs at least one statistic");
  if (s.size() != theta.size()) throw std::invalid_argument("vector tilt: theta and statistics differ in dimension");
  std::vector<double> t(atoms, 0.0);
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (s[j].size() != atoms) throw std::invalid_argument("vector tilt: statistic length does not match the measure");
    for (std::size_t i = 0; i < atoms; ++i) t[i] += theta[j] * s[j][i];
  }
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// DiscreteMeasure

DiscreteMeasure::DiscreteMeasure(std::vector<double> weights) {
  if (weights.empty()) throw std::invalid_argument("DiscreteMeasure: no atoms");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("DiscreteMeasure: weights must be finite and nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("DiscreteMeasure: weights must sum to 1");
  for (auto& w : weights) w /= total;
  weights_ = std::move(weights);
}

DiscreteMeasure DiscreteMeasure::from_masses(std::vector<double> masses) {
  double total = 0.0;
  for (double m : masses) {
    if (!(m >= 0.0) || !std::isfinite(m)) throw std::invalid_argument("DiscreteMeasure: masses must be finite and nonnegative");
    total += m;
  }
  if (!(total > 0.0)) throw std::invalid_argument("DiscreteMeasure: total mass must be positive");
  for (auto& m : masses) m /= total;
  return DiscreteMeasure(std::move(masses));
}

DiscreteMeasure DiscreteMeasure::uniform(std::size_t atoms) {
  if (atoms == 0) throw std::invalid_argument("DiscreteMeasure: no atoms");
  return DiscreteMeasure(std::vector<double>(atoms, 1.0 / static_cast<double>(atoms)));
}

void DiscreteMeasure::check_size(std::span<const double> f) const {
  if (f.size() != weights_.size()) throw std::invalid_argument("attribute length does not match the measure");
}

void DiscreteMeasure::set_attribute(const std::string& name, std::vector<double> values) {
  check_size(values);
  attributes_[name] = std::move(values);
}

bool DiscreteMeasure::has_attribute(std::string_view name) const { return attributes_.find(name) != attributes_.end(); }

std::span<const double> DiscreteMeasure::attribute(std::string_view name) const {
  const auto it = attributes_.find(name);
  if (it == attributes_.end()) throw std::invalid_argument("unknown attribute '" + std::string(name) + "'");
  return it->second;
}

std::vector<std::string> DiscreteMeasure::attribute_names() const {
  std::vector<std::string> names;
  for (const auto& [name, _] : attributes_) names.push_back(name);
  return names;
}

DiscreteMeasure DiscreteMeasure::reweighted(std::vector<double> weights) const {
  check_size(weights);
  DiscreteMeasure out(std::move(weights));
  out.attributes_ = attributes_;
  return out;
}

double DiscreteMeasure::expectation(std::span<const double> f) const { return weighted_mean(weights_, f); }

double DiscreteMeasure::covariance(std::span<const double> f, std::span<const double> g) const {
  return weighted_covariance(weights_, f, g);
}

double weighted_mean(std::span<const double> w, std::span<const double> f) {
  check_same_size(w, f);
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w[i] > 0.0) s += w[i] * f[i];
  return s;
}

double weighted_covariance(std::span<const double> w, std::span<const double> f, std::span<const double> g) {
  check_same_size(w, f);
  check_same_size(w, g);
  // Two-pass centered form.
  const double mf = weighted_mean(w, f);
  const double mg = weighted_mean(w, g);
  double c = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w[i] > 0.0) c += w[i] * (f[i] - mf) * (g[i] - mg);
  return c;
}

DiscreteMeasure read_measure_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("measure CSV: missing header");
  const auto header = split(line, ',');
  if (header.empty() || header[0] != "weight") throw SchemaError("measure CSV: first column must be 'weight'");
  std::vector<double> weights;
  std::vector<std::vector<double>> columns(header.size() - 1);
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != header.size())
      throw SchemaError("measure CSV: row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                        " fields, expected " + std::to_string(header.size()));
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const auto v = parse_double(cells[j]);
      if (!v) throw SchemaError("measure CSV: row " + std::to_string(row) + " has a non-numeric field");
      if (j == 0)
        weights.push_back(*v);
      else
        columns[j - 1].push_back(*v);
    }
  }
  auto mu = DiscreteMeasure::from_masses(std::move(weights));
  for (std::size_t j = 1; j < header.size(); ++j) mu.set_attribute(header[j], std::move(columns[j - 1]));
  return mu;
}

void write_measure_csv(std::ostream& out, const DiscreteMeasure& mu) {
  const auto names = mu.attribute_names();
  out << "weight";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < mu.size(); ++i) {
    out << format_double(mu.weights()[i]);
    for (const auto& n : names) out << ',' << format_double(mu.attribute(n)[i]);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Scalar tilting

double log_partition(const DiscreteMeasure& mu, std::span<const double> s, double lambda) {
  double log_z = 0.0;
  tilt_weights_impl(mu.weights(), s, lambda, &log_z);
  return log_z;
}

std::vector<double> tilted_weights(const DiscreteMeasure& mu, std::span<const double> s, double lambda) {
  return tilt_weights_impl(mu.weights(), s, lambda, nullptr);
}

DiscreteMeasure tilt(const DiscreteMeasure& mu, std::span<const double> s, double lambda) {
  return mu.reweighted(tilted_weights(mu, s, lambda));
}

TiltState tilt_state(const DiscreteMeasure& mu, std::span<const double> s, double lambda) {
  TiltState st;
  st.lambda = lambda;
  const auto q = tilt_weights_impl(mu.weights(), s, lambda, &st.log_partition);
  st.mean_s = weighted_mean(q, s);
  st.var_s = weighted_covariance(q, s, s);
  return st;
}

double tilt_expectation(const DiscreteMeasure& mu, std::span<const double> s, std::span<const double> f,
                        double lambda) {
  return weighted_mean(tilted_weights(mu, s, lambda), f);
}

double tilt_derivative(const DiscreteMeasure& mu, std::span<const double> s, std::span<const double> f,
                       double lambda) {
  return weighted_covariance(tilted_weights(mu, s, lambda), f, s);
}

TiltKl kl_tilt(const DiscreteMeasure& mu, std::span<const double> s, double lambda) {
  // Both divergences are invariant to shifting s; centering under mu keeps
  // lambda A' and A small when lambda is small.
  const double mean = mu.expectation(s);
  std::vector<double> centered(s.begin(), s.end());
  for (auto& v : centered) v -= mean;
  double a = 0.0;
  const auto q = tilt_weights_impl(mu.weights(), centered, lambda, &a);
  const double a_prime = weighted_mean(q, centered);
  return {lambda * a_prime - a, a};
}

std::vector<HardMassPoint> hard_mass_curve(const DiscreteMeasure& mu, std::span<const double> s,
                                           std::span<const double> hard, std::span<const double> lambda_grid) {
  check_same_size(mu.weights(), hard);
  for (double h : hard)
    if (h != 0.0 && h != 1.0) throw std::invalid_argument("hard_mass_curve: H must be 0/1 per atom");
  std::vector<HardMassPoint> out;
  out.reserve(lambda_grid.size());
  for (double lambda : lambda_grid) {
    const auto q = tilted_weights(mu, s, lambda);
    HardMassPoint p;
    p.lambda = lambda;
    p.rho = weighted_mean(q, hard);
    p.drho = weighted_covariance(q, hard, s);
    p.var_s = weighted_covariance(q, s, s);
    if (p.rho > 0.0) p.dlog_rho = p.drho / p.rho;
    out.push_back(p);
  }
  return out;
}

IProjection i_projection(const DiscreteMeasure& mu, std::span<const double> s, double m, double tol) {
  check_same_size(mu.weights(), s);
  double lo_s = std::numeric_limits<double>::infinity();
  double hi_s = -lo_s;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (mu.weights()[i] > 0.0) {
      lo_s = std::min(lo_s, s[i]);
      hi_s = std::max(hi_s, s[i]);
    }
  if (!(m > lo_s && m < hi_s)) throw InfeasibleMoment("i_projection: moment outside the attainable open range");

  auto mean_at = [&](double lambda) { return weighted_mean(tilted_weights(mu, s, lambda), s); };
  constexpr int kMaxIterations = 200;
  IProjection out;
  const double m0 = mu.expectation(s);
  if (std::abs(m0 - m) <= tol) {
    out.achieved_mean = m0;
    return out;
  }
  // A' is nondecreasing, so bracket on the side of the target and bisect.
  const double dir = m > m0 ? 1.0 : -1.0;
  double inner = 0.0;
  double outer = dir;
  int it = 0;
  while ((mean_at(outer) - m) * dir < 0.0 && it < kMaxIterations) {
    inner = outer;
    outer *= 2.0;
    ++it;
  }
  double best = 0.0;
  double best_mean = m0;
  while (it < kMaxIterations) {
    ++it;
    const double mid = 0.5 * (inner + outer);
    const double value = mean_at(mid);
    best = mid;
    best_mean = value;
    if (std::abs(value - m) <= tol) break;
    if ((value - m) * dir < 0.0)
      inner = mid;
    else
      outer = mid;
  }
  out.lambda_star = best;
  out.achieved_mean = best_mean;
  out.iterations = it;
  return out;
}

// ---------------------------------------------------------------------------
// Vector tilting

double vector_log_partition(const DiscreteMeasure& mu, std::span<const std::span<const double>> s,
                            std::span<const double> theta) {
  const auto t = combine(s, theta, mu.size());
  return log_partition(mu, t, 1.0);
}

std::vector<double> vector_tilted_weights(const DiscreteMeasure& mu, std::span<const std::span<const double>> s,
                                          std::span<const double> theta) {
  const auto t = combine(s, theta, mu.size());
  return tilted_weights(mu, t, 1.0);
}

std::vector<double> vector_tilt_gradient(const DiscreteMeasure& mu, std::span<const std::span<const double>> s,
                                         std::span<const double> f, std::span<const double> theta) {
  const auto q = vector_tilted_weights(mu, s, theta);
  std::vector<double> grad(s.size());
  for (std::size_t j = 0; j < s.size(); ++j) grad[j] = weighted_covariance(q, f, s[j]);
  return grad;
}

std::vector<double> vector_tilt_mean(const DiscreteMeasure& mu, std::span<const std::span<const double>> s,
                                     std::span<const double> theta) {
  const auto q = vector_tilted_weights(mu, s, theta);
  std::vector<double> mean(s.size());
  for (std::size_t j = 0; j < s.size(); ++j) mean[j] = weighted_mean(q, s[j]);
  return mean;
}

std::vector<double> vector_tilt_hessian(const DiscreteMeasure& mu, std::span<const std::span<const double>> s,
                                        std::span<const double> theta) {
  const auto q = vector_tilted_weights(mu, s, theta);
  const std::size_t k = s.size();
  std::vector<double> h(k * k);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a; b < k; ++b) h[a * k + b] = h[b * k + a] = weighted_covariance(q, s[a], s[b]);
  return h;
}

PolicyRandomizationDerivative policy_randomization_derivative(const DiscreteMeasure& mu,
                                                              std::span<const double> reward_a0,
                                                              std::span<const double> reward_a1,
                                                              std::span<const double> s, double lambda,
                                                              double step) {
  check_same_size(mu.weights(), reward_a0);
  check_same_size(mu.weights(), reward_a1);
  check_same_size(mu.weights(), s);
  const std::size_t n = mu.size();
  auto policy_reward = [&](double l) {
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(l * s[i]);
      r[i] = p * reward_a1[i] + (1.0 - p) * reward_a0[i];
    }
    return r;
  };
  PolicyRandomizationDerivative out;
  out.analytic_fd =
      (mu.expectation(policy_reward(lambda + step)) - mu.expectation(policy_reward(lambda - step))) / (2.0 * step);
  std::vector<double> slope(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = sigmoid(lambda * s[i]);
    slope[i] = (reward_a1[i] - reward_a0[i]) * p * (1.0 - p) * s[i];
  }
  out.exact_derivative = mu.expectation(slope);
  out.paper_covariance = mu.covariance(policy_reward(lambda), s);
  return out;
}

}  // namespace misspec
