#include "misspec/channel.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "misspec/bounds.hpp"
#include "misspec/config.hpp"

namespace misspec {

namespace {

void check_bias(double eps) {
  if (!(eps > 0.0 && eps <= bounds::kEpsilonMax)) throw std::invalid_argument("channel epsilon must lie in (0, 0.49]");
}

}  // namespace

double ChannelSpec::epsilon_at(const ContextSample& c) const {
  if (!heterogeneous) return epsilon;
  const double e = heterogeneous(c);
  check_bias(e);
  return e;
}

void ChannelSpec::validate() const {
  check_bias(epsilon);
  if (!(easy_bias >= 0.0 && easy_bias <= bounds::kEpsilonMax))
    throw std::invalid_argument("easy_bias must lie in [0, 0.49]");
}

ChannelSpec make_channel(double epsilon) {
  ChannelSpec ch;
  ch.epsilon = epsilon;
  ch.validate();
  return ch;
}

ChannelSpec linear_heterogeneous_channel(const EnvironmentSpec& env, double lo, double hi) {
  check_bias(lo);
  check_bias(hi);
  ChannelSpec ch;
  ch.epsilon = 0.5 * (lo + hi);
  const std::vector<double> upsilon = env.upsilon;
  const double offset = dot(env.upsilon, env.hard_center);
  ch.heterogeneous = [upsilon, offset, lo, hi](const ContextSample& c) {
    const double q = normal_cdf(dot(upsilon, c.x) - offset);
    return lo + (hi - lo) * q;
  };
  return ch;
}

ChannelSpec channel_from_config(const ConfigSection& section, const EnvironmentSpec& env) {
  ChannelSpec ch;
  ch.epsilon = section.get_double_or("epsilon", 0.1);
  ch.easy_bias = section.get_double_or("easy_bias", 0.0);
  try {
    ch.validate();
  } catch (const std::invalid_argument& e) {
    section.fail("epsilon", e.what());
  }
  if (section.has("epsilon_hetero")) {
    const std::string spec = section.get("epsilon_hetero");
    if (spec.rfind("linear:", 0) != 0) section.fail("epsilon_hetero", "expected linear:<lo>,<hi>");
    const auto parts = split(spec.substr(7), ',');
    if (parts.size() != 2) section.fail("epsilon_hetero", "expected linear:<lo>,<hi>");
    const auto lo = parse_double(parts[0]);
    const auto hi = parse_double(parts[1]);
    if (!lo || !hi) section.fail("epsilon_hetero", "bad bias range");
    try {
      auto hetero = linear_heterogeneous_channel(env, *lo, *hi);
      hetero.easy_bias = ch.easy_bias;
      return hetero;
    } catch (const std::invalid_argument& e) {
      section.fail("epsilon_hetero", e.what());
    }
  }
  return ch;
}

LabelBit pairwise_label(const ContextSample& c, WorldSign w, const ChannelSpec& ch, RandomStream& rng) {
  const double p = c.hard ? 0.5 + sign_of(w) * ch.epsilon_at(c) : 0.5 + ch.easy_bias;
  return rng.uniform() < p ? LabelBit::favors_better : LabelBit::disfavors_better;
}

double rating_per_hit_kl(double m, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("sigma must be positive and finite");
  if (!(m >= 0.0) || !std::isfinite(m)) throw std::invalid_argument("m must be nonnegative and finite");
  return m * m / (2.0 * sigma * sigma);
}

Estimate mean_hard_kappa(const EnvironmentSpec& env, const ChannelSpec& ch, std::size_t samples, RandomStream& rng) {
  if (samples == 0) throw std::invalid_argument("samples must be at least 1");
  if (!ch.heterogeneous) return {bounds::kappa(ch.epsilon), 0.0};
  const EnvironmentSpec hard_only = with_alpha(env, 1.0);
  MeanAccumulator acc;
  for (const auto& c : sample_contexts(hard_only, samples, rng)) acc.add(bounds::kappa(ch.epsilon_at(c)));
  return acc.estimate();
}

}  // namespace misspec
