#include "misspec/learner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "misspec/bounds.hpp"
#include "misspec/error.hpp"
#include "misspec/parallel.hpp"

namespace misspec {

namespace {

double softplus(double u) { return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u)); }

struct LossEval {
  double loss = 0.0;
  std::vector<double> grad;
};

class LogisticObjective {
 public:
  LogisticObjective(std::vector<double> features, std::vector<double> targets, std::size_t dim, double l2)
      : x_(std::move(features)), z_(std::move(targets)), dim_(dim), l2_(l2) {}

  LossEval operator()(const std::vector<double>& w) const {
    LossEval out;
    out.grad.assign(dim_, 0.0);
    const std::size_t m = z_.size();
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = &x_[i * dim_];
      double margin = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) margin += w[j] * row[j];
      margin *= z_[i];
      total += softplus(-margin);
      const double coef = -z_[i] * sigmoid(-margin);
      for (std::size_t j = 0; j < dim_; ++j) out.grad[j] += coef * row[j];
    }
    const double inv = 1.0 / static_cast<double>(m);
    double norm2 = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
      out.grad[j] = out.grad[j] * inv + l2_ * w[j];
      norm2 += w[j] * w[j];
    }
    out.loss = total * inv + 0.5 * l2_ * norm2;
    return out;
  }

 private:
  std::vector<double> x_;
  std::vector<double> z_;
  std::size_t dim_;
  double l2_;
};

std::string objective_key(std::size_t j, std::size_t a) {
  return "g" + std::to_string(j) + "_a" + std::to_string(a);
}

std::vector<std::vector<std::span<const double>>> objective_columns(const DiscreteMeasure& mu,
                                                                    std::size_t objectives, std::size_t actions) {
  std::vector<std::vector<std::span<const double>>> g(objectives);
  for (std::size_t j = 0; j < objectives; ++j)
    for (std::size_t a = 0; a < actions; ++a) {
      const auto key = objective_key(j + 1, a);
      if (!mu.has_attribute(key)) throw InvalidInstance("trade-off instance lacks attribute '" + key + "'");
      g[j].push_back(mu.attribute(key));
    }
  return g;
}

int argmax_action(const std::vector<std::span<const double>>& g, std::size_t atom) {
  int best = 0;
  for (std::size_t a = 1; a < g.size(); ++a)
    if (g[a][atom] > g[static_cast<std::size_t>(best)][atom]) best = static_cast<int>(a);
  return best;
}

}  // namespace

Transcript collect_transcript(const EnvironmentSpec& env, WorldSign w_true, const ChannelSpec& ch, std::size_t n,
                              const QueryPolicy& policy, RandomStream& rng) {
  if (n == 0) throw std::invalid_argument("collect_transcript: n must be at least 1");
  env.validate();
  ch.validate();
  Transcript transcript;
  transcript.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    TranscriptRecord rec;
    rec.t = t;
    rec.context = sample_context(env, rng);
    rec.queried = std::visit(
        [&](const auto& p) -> bool {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, AlwaysQuery>)
            return true;
          else if constexpr (std::is_same_v<P, NeverQuery>)
            return false;
          else if constexpr (std::is_same_v<P, RoutedQuery>)
            return flags(p.flagger, env, rec.context, rng);
          else
            return p.decide(rec.context, transcript);
        },
        policy);
    if (rec.queried) {
      const LabelBit y = pairwise_label(rec.context, w_true, ch, rng);
      const Action better = optimal_action(env, w_true, rec.context);
      rec.label = y;
      rec.preferred = y == LabelBit::favors_better ? better : other(better);
    }
    transcript.push_back(std::move(rec));
  }
  return transcript;
}

PreferenceFit fit_preference_score(const Transcript& transcript, const FitOptions& options) {
  if (!(options.step > 0.0) || !(options.l2 >= 0.0)) throw std::invalid_argument("fit: step must be positive, l2 nonnegative");
  std::size_t dim = 0;
  std::vector<double> features;
  std::vector<double> targets;
  for (const auto& rec : transcript) {
    if (!rec.queried || !rec.preferred) continue;
    if (dim == 0) dim = rec.context.x.size() + 1;
    if (rec.context.x.size() + 1 != dim) throw std::invalid_argument("fit: contexts differ in dimension");
    features.insert(features.end(), rec.context.x.begin(), rec.context.x.end());
    features.push_back(1.0);
    targets.push_back(*rec.preferred == Action::a1 ? 1.0 : -1.0);
  }
  if (targets.empty()) throw InsufficientData("fit_preference_score: transcript has no labeled records");

  PreferenceFit fit;
  fit.labeled = targets.size();
  const LogisticObjective objective(std::move(features), std::move(targets), dim, options.l2);
  std::vector<double> w(dim, 0.0);
  LossEval current = objective(w);
  std::vector<double> trial(dim);
  for (std::size_t it = 0; it < options.iterations; ++it) {
    fit.loss_history.push_back(current.loss);
    bool moved = false;
    double eta = options.step;
    for (int halving = 0; halving < 20 && !moved; ++halving, eta *= 0.5) {
      for (std::size_t j = 0; j < dim; ++j) trial[j] = w[j] - eta * current.grad[j];
      LossEval next = objective(trial);
      if (next.loss <= current.loss) {
        w = trial;
        current = std::move(next);
        moved = true;
      }
    }
    // No step lowers the loss at working precision: converged.
    if (!moved) break;
  }
  fit.loss_history.push_back(current.loss);
  fit.score.weights = std::move(w);
  return fit;
}

PolicySpec policy_lambda(const ScoreFunction& score, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("policy_lambda: lambda must be nonnegative");
  return LogisticPolicy{score, lambda};
}

double proxy_reward(double s_hat, double prob_a1) { return (prob_a1 - 0.5) * s_hat; }

DiagnosticCurve diagnostic_d1(const EnvironmentSpec& env, WorldSign w_eval, const ScoreFunction& score,
                              std::span<const double> lambda_grid, std::size_t trials, RandomStream& rng) {
  if (trials == 0) throw std::invalid_argument("diagnostic_d1: trials must be at least 1");
  for (double l : lambda_grid)
    if (!(l >= 0.0)) throw std::invalid_argument("diagnostic_d1: lambda grid must be nonnegative");
  const auto contexts = sample_contexts(env, trials, rng);
  const std::size_t n = contexts.size();
  std::vector<double> s(n), best_reward(n), best_proxy(n);
  std::vector<char> a1_better(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = evaluate_score(score, env, contexts[i]);
    a1_better[i] = optimal_action(env, w_eval, contexts[i]) == Action::a1;
    best_reward[i] = 1.0;
    best_proxy[i] = proxy_reward(s[i], a1_better[i] ? 1.0 : 0.0);
  }

  struct Point {
    Estimate true_value, proxy_value, true_gap, proxy_gap;
    double hard_mass = 0.0;
    double proxy_cov = 0.0;
  };
  auto points = parallel_map(lambda_grid.size(), [&](std::size_t k) {
    const double lambda = lambda_grid[k];
    MeanAccumulator v, vp, g, gp;
    double shift = -std::numeric_limits<double>::infinity();
    for (double si : s) shift = std::max(shift, lambda * si);
    double z = 0.0, zh = 0.0;
    std::vector<double> rp(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double p1 = sigmoid(lambda * s[i]);
      const double r = a1_better[i] ? p1 : 1.0 - p1;
      rp[i] = proxy_reward(s[i], p1);
      v.add(r);
      vp.add(rp[i]);
      g.add(best_reward[i] - r);
      gp.add(best_proxy[i] - rp[i]);
      const double e = std::exp(lambda * s[i] - shift);
      z += e;
      if (contexts[i].hard) zh += e;
    }
    Point p{v.estimate(), vp.estimate(), g.estimate(), gp.estimate(), zh / z, 0.0};
    const auto uniform = std::vector<double>(n, 1.0 / static_cast<double>(n));
    p.proxy_cov = weighted_covariance(uniform, rp, s);
    return p;
  });

  DiagnosticCurve curve;
  curve.grid.assign(lambda_grid.begin(), lambda_grid.end());
  for (const auto& p : points) {
    curve.true_value.push_back(p.true_value);
    curve.proxy_value.push_back(p.proxy_value);
    curve.true_gap.push_back(p.true_gap);
    curve.proxy_gap.push_back(p.proxy_gap);
    curve.hard_mass.push_back(p.hard_mass);
    curve.proxy_cov.push_back(p.proxy_cov);
  }
  return curve;
}

std::optional<std::size_t> find_divergence(const DiagnosticCurve& curve) {
  for (std::size_t k = 0; k + 1 < curve.grid.size(); ++k)
    if (curve.proxy_gap[k + 1].value < curve.proxy_gap[k].value && curve.true_gap[k + 1].value > curve.true_gap[k].value)
      return k;
  return std::nullopt;
}

D1Config d1_reference_config() {
  D1Config c;
  c.env = make_environment(10, 0.1, 0.5, 0);
  c.channel = make_channel(0.1);
  return c;
}

D1Result run_d1(const D1Config& config, std::uint64_t seed) {
  RandomStream data = RandomStream::substream(seed, 0);
  RandomStream eval = RandomStream::substream(seed, 1);
  D1Result out;
  out.seed = seed;
  const auto transcript = collect_transcript(config.env, config.w_true, config.channel, config.n, AlwaysQuery{}, data);
  out.fit = fit_preference_score(transcript, config.fit);
  out.curve = diagnostic_d1(config.env, config.w_true, out.fit.score, config.lambda_grid, config.eval_trials, eval);
  out.divergence = find_divergence(out.curve);
  return out;
}

ShiftReport diagnostic_d2_shift(const EnvironmentSpec& env, WorldSign w, const PolicySpec& pi,
                                std::span<const double> shift_factors, std::size_t trials, RandomStream& rng) {
  if (trials == 0) throw std::invalid_argument("diagnostic_d2_shift: trials must be at least 1");
  const double alpha = env.alpha;
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("diagnostic_d2_shift: alpha must lie in (0, 1)");
  for (double f : shift_factors)
    if (!(f >= 0.0) || (1.0 + f) * alpha > 1.0)
      throw std::invalid_argument("diagnostic_d2_shift: shifted hard mass must lie in [alpha, 1]");

  const auto contexts = sample_contexts(env, trials, rng);
  std::vector<double> r(contexts.size());
  MeanAccumulator easy, hard;
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    r[i] = expected_reward(env, w, pi, contexts[i]);
    (contexts[i].hard ? hard : easy).add(r[i]);
  }
  if (easy.count() < 2 || hard.count() < 2) throw InsufficientData("diagnostic_d2_shift: too few samples in a component");

  ShiftReport report;
  report.easy_mean = easy.estimate();
  report.hard_mean = hard.estimate();
  report.predicted_slope = {alpha * (hard.mean() - easy.mean()),
                            alpha * std::hypot(report.hard_mean.se, report.easy_mean.se)};
  for (double f : shift_factors) {
    ShiftPoint p;
    p.factor = f;
    p.alpha_shifted = (1.0 + f) * alpha;
    const double we = (1.0 - p.alpha_shifted) / (1.0 - alpha);
    const double wh = p.alpha_shifted / alpha;
    MeanAccumulator rw;
    for (std::size_t i = 0; i < contexts.size(); ++i) rw.add((contexts[i].hard ? wh : we) * r[i]);
    p.reweighted = rw.estimate();
    const double a = p.alpha_shifted;
    p.decomposition = {(1.0 - a) * easy.mean() + a * hard.mean(),
                       std::hypot((1.0 - a) * report.easy_mean.se, a * report.hard_mean.se)};
    p.direct = value(with_alpha(env, a), w, pi, trials, rng);
    report.points.push_back(p);
  }
  for (std::size_t k = 0; k + 1 < report.points.size(); ++k) {
    const auto& lo = report.points[k];
    const auto& hi = report.points[k + 1];
    const double dr = hi.factor - lo.factor;
    if (dr == 0.0) continue;
    report.slopes.push_back({(hi.direct.value - lo.direct.value) / dr, std::hypot(hi.direct.se, lo.direct.se) / std::abs(dr)});
  }
  return report;
}

std::vector<RoutingRow> diagnostic_d3_routing(const EnvironmentSpec& env, WorldSign w_true, const ChannelSpec& ch,
                                              const FlaggerSpec& flagger, std::span<const double> eta_targets,
                                              double gamma, std::size_t trials, RandomStream& rng) {
  const double alpha = env.alpha;
  const double eps = ch.epsilon;
  double tau = 1.0, phi = 0.0;
  if (const auto* noisy = std::get_if<NoisyFlagger>(&flagger)) {
    tau = noisy->tau;
    phi = noisy->phi;
  } else if (const auto* thr = std::get_if<ScoreThresholdFlagger>(&flagger)) {
    const auto rates = threshold_flagger_rates(thr->score, env, thr->threshold, 100000, rng);
    tau = rates.tau.value;
    phi = rates.phi.value;
  }
  std::vector<RoutingRow> rows;
  for (double eta : eta_targets) {
    if (!(eta > 0.0 && eta < gamma)) throw std::invalid_argument("diagnostic_d3_routing: need 0 < eta < gamma");
    RoutingRow row;
    row.eta = eta;
    const double hits = std::log(gamma / eta) / (2.0 * eps * eps);
    row.T = static_cast<std::size_t>(std::ceil(hits - 1e-12));
    row.overlay_q = hits / alpha;
    row.noisy_q = row.overlay_q / tau;
    row.predicted_draws = static_cast<double>(row.T) / (alpha * tau + (1.0 - alpha) * phi);
    row.summary = run_majority_trials(env, w_true, ch, flagger, row.T, trials, rng);
    rows.push_back(row);
  }
  return rows;
}

EstimateReport estimate_parameters(const EnvironmentSpec& env, WorldSign w_true, const ChannelSpec& ch,
                                   const FlaggerSpec& flagger, std::optional<FlaggerCorrection> rates,
                                   std::size_t audit_size, std::size_t adjudicated_size,
                                   std::span<const std::uint64_t> n_grid, RandomStream& rng) {
  if (audit_size == 0) throw InsufficientData("estimate_parameters: empty audit set");
  if (adjudicated_size == 0) throw InsufficientData("estimate_parameters: no adjudicated hard comparisons");
  if (rates && rates->tau == rates->phi) throw NoCancellation("estimate_parameters: flagger rates tau == phi");

  EstimateReport report;
  report.audit_size = audit_size;
  report.adjudicated_size = adjudicated_size;

  const auto audit = sample_contexts(env, audit_size, rng);
  RandomStream flag_rng(rng.fork());
  std::size_t flagged = 0;
  MeanAccumulator margin;
  for (const auto& c : audit) {
    const bool f = flags(flagger, env, c, flag_rng);
    flagged += f;
    double m = 0.0;
    if (f)
      m = std::abs(reward(env, WorldSign::plus, c, optimal_action(env, WorldSign::plus, c)) -
                   reward(env, WorldSign::plus, c, optimal_action(env, WorldSign::minus, c)));
    margin.add(m);
  }
  const double rate = static_cast<double>(flagged) / static_cast<double>(audit_size);
  const double tau = rates ? rates->tau : 1.0;
  const double phi = rates ? rates->phi : 0.0;
  report.alpha_hat = {std::clamp((rate - phi) / (tau - phi), 0.0, 1.0), binomial_se(rate, audit_size) / std::abs(tau - phi)};
  report.gamma_hat = {margin.mean() / tau, margin.se() / tau};

  const auto hard = sample_contexts(with_alpha(env, 1.0), adjudicated_size, rng);
  RandomStream label_rng(rng.fork());
  std::size_t ones = 0;
  for (const auto& c : hard) ones += bit_value(pairwise_label(c, w_true, ch, label_rng));
  const double p = static_cast<double>(ones) / static_cast<double>(adjudicated_size);
  report.epsilon_hat = {std::abs(p - 0.5), binomial_se(p, adjudicated_size)};

  const double k = bounds::kappa(std::min(report.epsilon_hat.value, bounds::kEpsilonMax));
  for (auto n : n_grid)
    report.lower_bound.push_back(
        {n, report.gamma_hat.value / 4.0 * std::exp(-static_cast<double>(n) * report.alpha_hat.value * k)});
  return report;
}

TradeoffCheck multiobjective_gap_check(const DiscreteMeasure& mu, std::size_t objectives, std::size_t actions,
                                       std::span<const int> policy) {
  if (objectives == 0 || actions < 2) throw InvalidInstance("trade-off check needs objectives >= 1 and actions >= 2");
  if (policy.size() != mu.size()) throw std::invalid_argument("policy must assign one action per atom");
  for (int a : policy)
    if (a < 0 || static_cast<std::size_t>(a) >= actions) throw std::invalid_argument("policy action out of range");
  if (!mu.has_attribute("S")) throw InvalidInstance("trade-off instance lacks attribute 'S'");
  const auto g = objective_columns(mu, objectives, actions);
  const auto in_s = mu.attribute("S");
  const auto w = mu.weights();

  TradeoffCheck out;
  std::vector<double> margins(objectives, std::numeric_limits<double>::infinity());
  std::size_t k = std::numeric_limits<std::size_t>::max();
  bool any_s = false;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    std::vector<int> opt(objectives);
    for (std::size_t j = 0; j < objectives; ++j) {
      opt[j] = argmax_action(g[j], i);
      out.lhs += w[i] * (g[j][static_cast<std::size_t>(opt[j])][i] - g[j][static_cast<std::size_t>(policy[i])][i]);
    }
    if (in_s[i] == 0.0 || w[i] <= 0.0) continue;
    any_s = true;
    out.alpha_s += w[i];
    if (objectives == 3 && (opt[0] == opt[1] || opt[0] == opt[2] || opt[1] == opt[2]))
      throw InvalidInstance("optimal actions do not disagree pairwise on S at atom " + std::to_string(i));
    for (std::size_t j = 0; j < objectives; ++j) {
      const double best = g[j][static_cast<std::size_t>(opt[j])][i];
      double runner_up = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < actions; ++a)
        if (static_cast<int>(a) != opt[j]) runner_up = std::max(runner_up, g[j][a][i]);
      margins[j] = std::min(margins[j], best - runner_up);
    }
    for (std::size_t a = 0; a < actions; ++a) {
      std::size_t missed = 0;
      for (std::size_t j = 0; j < objectives; ++j) missed += opt[j] != static_cast<int>(a);
      k = std::min(k, missed);
    }
  }
  if (!any_s) return out;
  out.min_margin = *std::min_element(margins.begin(), margins.end());
  out.k = k;
  out.rhs = out.alpha_s * out.min_margin;
  out.rhs_general = static_cast<double>(k) * out.rhs;
  return out;
}

DiscreteMeasure random_tradeoff_instance(std::size_t atoms, std::size_t objectives, std::size_t actions,
                                         RandomStream& rng) {
  if (atoms == 0) throw std::invalid_argument("random_tradeoff_instance: no atoms");
  if (actions < objectives) throw std::invalid_argument("random_tradeoff_instance: need actions >= objectives");
  std::vector<double> masses(atoms);
  for (auto& m : masses) m = -std::log(1.0 - rng.uniform());
  auto mu = DiscreteMeasure::from_masses(std::move(masses));
  std::vector<double> s(atoms);
  for (auto& v : s) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  s[0] = 1.0;
  std::vector<std::vector<std::vector<double>>> g(objectives,
                                                  std::vector<std::vector<double>>(actions, std::vector<double>(atoms)));
  std::vector<std::size_t> order(actions);
  for (std::size_t i = 0; i < atoms; ++i) {
    for (auto& obj : g)
      for (auto& col : obj) col[i] = rng.uniform();
    if (s[i] == 0.0) continue;
    // Distinct optimal actions: a shuffled prefix of the action set.
    for (std::size_t a = 0; a < actions; ++a) order[a] = a;
    for (std::size_t a = actions - 1; a > 0; --a) std::swap(order[a], order[static_cast<std::size_t>(rng.uniform() * (a + 1)) % (a + 1)]);
    for (std::size_t j = 0; j < objectives; ++j) {
      double top = 0.0;
      for (std::size_t a = 0; a < actions; ++a) top = std::max(top, g[j][a][i]);
      g[j][order[j]][i] = top + 0.05 + 0.95 * rng.uniform();
    }
  }
  mu.set_attribute("S", std::move(s));
  for (std::size_t j = 0; j < objectives; ++j)
    for (std::size_t a = 0; a < actions; ++a) mu.set_attribute(objective_key(j + 1, a), std::move(g[j][a]));
  return mu;
}

std::vector<int> objective_optimal_policy(const DiscreteMeasure& mu, std::size_t objective, std::size_t actions) {
  if (objective == 0) throw std::invalid_argument("objectives are numbered from 1");
  std::vector<std::span<const double>> g;
  for (std::size_t a = 0; a < actions; ++a) g.push_back(mu.attribute(objective_key(objective, a)));
  std::vector<int> pi(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) pi[i] = argmax_action(g, i);
  return pi;
}

DivergenceReport proxy_true_divergence(const DiscreteMeasure& mu, std::span<const double> s_hat,
                                       std::span<const double> r_hat, std::span<const double> r_w,
                                       std::span<const double> lambda_grid, double step) {
  if (r_hat.size() != r_w.size() || r_hat.size() != mu.size())
    throw std::invalid_argument("proxy_true_divergence: attribute lengths differ");
  std::vector<double> f(r_hat.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = r_hat[i] - r_w[i];
  DivergenceReport report;
  for (double lambda : lambda_grid) {
    DivergencePoint p;
    p.lambda = lambda;
    p.delta_pv = tilt_expectation(mu, s_hat, f, lambda);
    p.d_delta = (tilt_expectation(mu, s_hat, f, lambda + step) - tilt_expectation(mu, s_hat, f, lambda - step)) / (2.0 * step);
    p.covariance = tilt_derivative(mu, s_hat, f, lambda);
    report.points.push_back(p);
  }
  for (std::size_t k = 0; k + 1 < report.points.size(); ++k) {
    const auto& a = report.points[k];
    const auto& b = report.points[k + 1];
    if (b.lambda > a.lambda && a.covariance > 0.0 && b.covariance > 0.0 && !(b.delta_pv > a.delta_pv))
      report.increasing_where_positive = false;
  }
  return report;
}

}  // namespace misspec
