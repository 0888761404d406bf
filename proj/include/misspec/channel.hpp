#pragma once

#include <cstdint>
#include <functional>

#include "misspec/env.hpp"
#include "misspec/random.hpp"
#include "misspec/stats.hpp"

namespace misspec {

class ConfigSection;

// Whether a pairwise label favors the truly better action.
enum class LabelBit : std::uint8_t { disfavors_better = 0, favors_better = 1 };

constexpr int bit_value(LabelBit y) noexcept { return static_cast<int>(y); }

// Massart-biased preference channel. On hard contexts the label favors the
// better action with probability 1/2 + w eps (or 1/2 + w eps(x)); off the hard
// set it is a fair coin unless `easy_bias` is set.
struct ChannelSpec {
  double epsilon = 0.1;
  // Optional per-context bias on the hard set, values in (0, 0.49].
  std::function<double(const ContextSample&)> heterogeneous;
  // Off by default. When positive, easy labels favor the better action with
  // probability 1/2 + easy_bias in both worlds.
  double easy_bias = 0.0;

  double epsilon_at(const ContextSample& c) const;
  void validate() const;
};

ChannelSpec make_channel(double epsilon);

// eps(x) = lo + (hi - lo) * q(x) with q the quantile of upsilon.x under the
// hard component, i.e. Phi(upsilon.x - upsilon.mu_h).
ChannelSpec linear_heterogeneous_channel(const EnvironmentSpec& env, double lo, double hi);

// Keys: epsilon; optional epsilon_hetero = "linear:<lo>,<hi>"; optional easy_bias.
ChannelSpec channel_from_config(const ConfigSection& section, const EnvironmentSpec& env);

LabelBit pairwise_label(const ContextSample& c, WorldSign w, const ChannelSpec& ch, RandomStream& rng);

// Per-hit KL m^2 / (2 sigma^2) for the subgaussian rating surrogate.
double rating_per_hit_kl(double m, double sigma);

// Monte Carlo K = E[kappa(eps(X)) | hard].
Estimate mean_hard_kappa(const EnvironmentSpec& env, const ChannelSpec& ch, std::size_t samples, RandomStream& rng);

}  // namespace misspec
