#include "misspec/env.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "misspec/config.hpp"
#include "misspec/parallel.hpp"

namespace misspec {

namespace {

constexpr std::size_t kBlock = 8192;

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += format_double(v[i]);
  }
  return out;
}

// Runs `visit(context, acc)` over `trials` contexts drawn in fixed-size blocks
// and merges the per-block accumulators in block order.
template <class Acc, class Visit>
Acc accumulate_contexts(const EnvironmentSpec& env, std::size_t trials, RandomStream& rng, Visit visit) {
  const std::uint64_t base = rng.fork();
  const std::size_t blocks = (trials + kBlock - 1) / kBlock;
  auto partial = parallel_map(blocks, [&](std::size_t b) {
    RandomStream stream = RandomStream::substream(base, b);
    Acc acc;
    const std::size_t end = std::min(trials, (b + 1) * kBlock);
    for (std::size_t i = b * kBlock; i < end; ++i) visit(sample_context(env, stream), acc);
    return acc;
  });
  Acc total;
  for (auto& p : partial) total.merge(p);
  return total;
}

struct SplitAccumulator {
  MeanAccumulator overall, easy, hard;
  void merge(const SplitAccumulator& o) {
    overall.merge(o.overall);
    easy.merge(o.easy);
    hard.merge(o.hard);
  }
};

void require_trials(std::size_t trials) {
  if (trials == 0) throw std::invalid_argument("trials must be at least 1");
}

}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void EnvironmentSpec::validate() const {
  if (d == 0) throw std::invalid_argument("environment: d must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("environment: alpha must lie in [0, 1]");
  if (hard_center.size() != d || theta.size() != d || upsilon.size() != d)
    throw std::invalid_argument("environment: vectors must have length d");
  for (const auto* v : {&hard_center, &theta, &upsilon})
    for (double e : *v)
      if (!std::isfinite(e)) throw std::invalid_argument("environment: non-finite entry");
  if (std::abs(norm2(theta) - 1.0) > 1e-12) throw std::invalid_argument("environment: theta must be a unit vector");
  if (std::abs(norm2(upsilon) - 1.0) > 1e-12) throw std::invalid_argument("environment: upsilon must be a unit vector");
  if (std::abs(dot(theta, upsilon)) > 1e-12) throw std::invalid_argument("environment: theta and upsilon must be orthogonal");
}

std::vector<std::vector<double>> auto_orthonormal(std::size_t d, std::size_t count, std::uint64_t seed) {
  if (count > d) throw std::invalid_argument("auto_orthonormal: more directions than dimensions");
  RandomStream rng(hash64({seed, 0x6f7274686fULL}));
  std::vector<std::vector<double>> basis;
  while (basis.size() < count) {
    std::vector<double> v(d);
    for (auto& e : v) e = rng.normal();
    // Two Gram-Schmidt passes keep the residual overlap at rounding level.
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : basis) {
        const double proj = dot(v, b);
        for (std::size_t i = 0; i < d; ++i) v[i] -= proj * b[i];
      }
    const double n = norm2(v);
    if (n < 1e-8) continue;
    for (auto& e : v) e /= n;
    basis.push_back(std::move(v));
  }
  return basis;
}

EnvironmentSpec make_environment(std::size_t d, double alpha, double center_scale, std::uint64_t direction_seed) {
  EnvironmentSpec env;
  env.d = d;
  env.alpha = alpha;
  env.hard_center.assign(d, center_scale);
  if (d < 2) throw std::invalid_argument("make_environment: need d >= 2 for orthogonal directions");
  auto basis = auto_orthonormal(d, 2, direction_seed);
  env.theta = std::move(basis[0]);
  env.upsilon = std::move(basis[1]);
  env.validate();
  return env;
}

EnvironmentSpec with_alpha(const EnvironmentSpec& env, double alpha) {
  EnvironmentSpec out = env;
  out.alpha = alpha;
  out.validate();
  return out;
}

EnvironmentSpec environment_from_config(const ConfigSection& section) {
  EnvironmentSpec env;
  const auto d = section.get_int("d");
  if (d <= 0) section.fail("d", "must be a positive integer");
  env.d = static_cast<std::size_t>(d);
  env.alpha = section.get_double("alpha");

  const std::string center = section.get_or("hard_center", "ones-scaled:0");
  if (center.rfind("ones-scaled:", 0) == 0) {
    const auto c = parse_double(center.substr(12));
    if (!c) section.fail("hard_center", "bad ones-scaled factor");
    env.hard_center.assign(env.d, *c);
  } else {
    env.hard_center = section.get_doubles("hard_center");
  }

  auto direction = [&](const char* key, std::size_t index) -> std::vector<double> {
    const std::string text = section.get_or(key, "auto-orthonormal:0");
    if (text.rfind("auto-orthonormal:", 0) == 0) {
      const auto seed = parse_double(text.substr(17));
      if (!seed || *seed < 0) section.fail(key, "bad auto-orthonormal seed");
      return auto_orthonormal(env.d, 2, static_cast<std::uint64_t>(*seed))[index];
    }
    return section.get_doubles(key);
  };
  env.theta = direction("theta", 0);
  env.upsilon = direction("upsilon", 1);
  // An explicit theta next to an auto upsilon: re-orthogonalize upsilon.
  if (env.theta.size() == env.d && env.upsilon.size() == env.d && std::abs(dot(env.theta, env.upsilon)) > 1e-12 &&
      section.get_or("upsilon", "auto-orthonormal:0").rfind("auto-orthonormal:", 0) == 0) {
    for (int pass = 0; pass < 2; ++pass) {
      const double proj = dot(env.upsilon, env.theta);
      for (std::size_t i = 0; i < env.d; ++i) env.upsilon[i] -= proj * env.theta[i];
    }
    const double n = norm2(env.upsilon);
    for (auto& e : env.upsilon) e /= n;
  }
  try {
    env.validate();
  } catch (const std::invalid_argument& e) {
    section.fail("d", e.what());
  }
  return env;
}

ConfigSection environment_to_config(const EnvironmentSpec& env) {
  ConfigSection s("environment", "<generated>");
  s.set("d", std::to_string(env.d));
  s.set("alpha", format_double(env.alpha));
  s.set("hard_center", join(env.hard_center));
  s.set("theta", join(env.theta));
  s.set("upsilon", join(env.upsilon));
  return s;
}

ContextSample sample_context(const EnvironmentSpec& env, RandomStream& rng) {
  ContextSample c;
  c.hard = rng.uniform() < env.alpha;
  c.x.resize(env.d);
  for (std::size_t i = 0; i < env.d; ++i) c.x[i] = rng.normal() + (c.hard ? env.hard_center[i] : 0.0);
  return c;
}

double reward_diff(const EnvironmentSpec& env, WorldSign w, const ContextSample& c) {
  if (!c.hard) return sign_plus(dot(env.theta, c.x));
  return static_cast<double>(sign_of(w)) * sign_plus(dot(env.upsilon, c.x));
}

Action optimal_action(const EnvironmentSpec& env, WorldSign w, const ContextSample& c) {
  return reward_diff(env, w, c) >= 0.0 ? Action::a1 : Action::a0;
}

double reward(const EnvironmentSpec& env, WorldSign w, const ContextSample& c, Action a) {
  return optimal_action(env, w, c) == a ? 1.0 : 0.0;
}

double sigmoid(double u) noexcept {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

double evaluate_score(const ScoreFunction& score, const EnvironmentSpec& env, const ContextSample& c) {
  struct Visitor {
    const EnvironmentSpec& env;
    const ContextSample& c;
    double operator()(const LinearScore& s) const {
      if (s.weights.size() != c.x.size() + 1)
        throw std::invalid_argument("linear score: expected d + 1 weights");
      double v = s.weights.back();
      for (std::size_t i = 0; i < c.x.size(); ++i) v += s.weights[i] * c.x[i];
      return v;
    }
    double operator()(const OracleMarginScore& s) const { return reward_diff(env, s.w, c); }
    double operator()(const MixturePosteriorScore&) const {
      if (env.alpha <= 0.0) return 0.0;
      if (env.alpha >= 1.0) return 1.0;
      // log N(x; mu_h, I) - log N(x; 0, I) = mu_h.x - |mu_h|^2 / 2
      const double logit = std::log(env.alpha / (1.0 - env.alpha)) + dot(env.hard_center, c.x) -
                           0.5 * dot(env.hard_center, env.hard_center);
      return sigmoid(logit);
    }
  };
  return std::visit(Visitor{env, c}, score);
}

double prob_a1(const PolicySpec& pi, const EnvironmentSpec& env, const ContextSample& c) {
  struct Visitor {
    const EnvironmentSpec& env;
    const ContextSample& c;
    double operator()(const OptimalPolicy& p) const { return optimal_action(env, p.w, c) == Action::a1 ? 1.0 : 0.0; }
    double operator()(const LogisticPolicy& p) const {
      if (p.lambda == 0.0) return 0.5;
      return sigmoid(p.lambda * evaluate_score(p.score, env, c));
    }
    double operator()(const ConstantPolicy& p) const { return p.a == Action::a1 ? 1.0 : 0.0; }
  };
  return std::visit(Visitor{env, c}, pi);
}

double expected_reward(const EnvironmentSpec& env, WorldSign w, const PolicySpec& pi, const ContextSample& c) {
  const double p1 = prob_a1(pi, env, c);
  return optimal_action(env, w, c) == Action::a1 ? p1 : 1.0 - p1;
}

Estimate value(const EnvironmentSpec& env, WorldSign w, const PolicySpec& pi, std::size_t trials, RandomStream& rng) {
  return conditional_value(env, w, pi, trials, rng).overall;
}

ConditionalValue conditional_value(const EnvironmentSpec& env, WorldSign w, const PolicySpec& pi, std::size_t trials,
                                   RandomStream& rng) {
  require_trials(trials);
  env.validate();
  const auto acc = accumulate_contexts<SplitAccumulator>(env, trials, rng, [&](const ContextSample& c, SplitAccumulator& a) {
    const double r = expected_reward(env, w, pi, c);
    a.overall.add(r);
    (c.hard ? a.hard : a.easy).add(r);
  });
  return {acc.overall.estimate(), acc.easy.estimate(), acc.hard.estimate(), acc.easy.count(), acc.hard.count()};
}

Estimate separation_gamma(const EnvironmentSpec& env, std::size_t trials, RandomStream& rng) {
  require_trials(trials);
  env.validate();
  struct Acc {
    MeanAccumulator m;
    void merge(const Acc& o) { m.merge(o.m); }
  };
  const auto acc = accumulate_contexts<Acc>(env, trials, rng, [&](const ContextSample& c, Acc& a) {
    if (!c.hard) {
      a.m.add(0.0);
      return;
    }
    const double gap = std::abs(reward(env, WorldSign::plus, c, optimal_action(env, WorldSign::plus, c)) -
                                reward(env, WorldSign::plus, c, optimal_action(env, WorldSign::minus, c)));
    a.m.add(gap);
  });
  return acc.m.estimate();
}

std::vector<ContextSample> sample_contexts(const EnvironmentSpec& env, std::size_t trials, RandomStream& rng) {
  const std::uint64_t base = rng.fork();
  const std::size_t blocks = (trials + kBlock - 1) / kBlock;
  auto parts = parallel_map(blocks, [&](std::size_t b) {
    RandomStream stream = RandomStream::substream(base, b);
    std::vector<ContextSample> out;
    const std::size_t end = std::min(trials, (b + 1) * kBlock);
    out.reserve(end - b * kBlock);
    for (std::size_t i = b * kBlock; i < end; ++i) out.push_back(sample_context(env, stream));
    return out;
  });
  std::vector<ContextSample> all;
  all.reserve(trials);
  for (auto& p : parts)
    for (auto& c : p) all.push_back(std::move(c));
  return all;
}

}  // namespace misspec
