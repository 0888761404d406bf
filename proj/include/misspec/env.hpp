#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "misspec/random.hpp"
#include "misspec/stats.hpp"

namespace misspec {

class ConfigSection;

enum class WorldSign : int { plus = 1, minus = -1 };

constexpr int sign_of(WorldSign w) noexcept { return static_cast<int>(w); }
constexpr WorldSign opposite(WorldSign w) noexcept {
  return w == WorldSign::plus ? WorldSign::minus : WorldSign::plus;
}

enum class Action : std::uint8_t { a0 = 0, a1 = 1 };

constexpr Action other(Action a) noexcept { return a == Action::a0 ? Action::a1 : Action::a0; }

// Two-world synthetic environment: contexts come from
// (1 - alpha) N(0, I) + alpha N(hard_center, I); the second component is the
// hard set. theta drives rewards off the hard set, upsilon on it.
struct EnvironmentSpec {
  std::size_t d = 0;
  double alpha = 0.0;
  std::vector<double> hard_center;
  std::vector<double> theta;
  std::vector<double> upsilon;

  // Throws std::invalid_argument. alpha is accepted on the closed interval
  // [0, 1] so the degenerate single-component environments stay expressible.
  void validate() const;
};

// hard_center = scale * (1, ..., 1); theta, upsilon orthonormal from `direction_seed`.
EnvironmentSpec make_environment(std::size_t d, double alpha, double center_scale,
                                 std::uint64_t direction_seed);

// Two orthonormal directions drawn from a seeded Gaussian and Gram-Schmidt.
std::vector<std::vector<double>> auto_orthonormal(std::size_t d, std::size_t count, std::uint64_t seed);

// Copy of env with a different hard mass; conditionals unchanged.
EnvironmentSpec with_alpha(const EnvironmentSpec& env, double alpha);

// Keys: d, alpha, hard_center (list or ones-scaled:<c>), theta and upsilon
// (list or auto-orthonormal:<seed>).
EnvironmentSpec environment_from_config(const ConfigSection& section);
// Inverse of environment_from_config with explicit vectors.
ConfigSection environment_to_config(const EnvironmentSpec& env);

struct ContextSample {
  std::vector<double> x;
  bool hard = false;  // mixture component that generated x
};

double dot(std::span<const double> a, std::span<const double> b);

ContextSample sample_context(const EnvironmentSpec& env, RandomStream& rng);

// sign(0) := +1.
constexpr double sign_plus(double v) noexcept { return v >= 0.0 ? 1.0 : -1.0; }

// r_w(x, a1) - r_w(x, a0), always in {-1, +1}.
double reward_diff(const EnvironmentSpec& env, WorldSign w, const ContextSample& c);
Action optimal_action(const EnvironmentSpec& env, WorldSign w, const ContextSample& c);
// r_w(x, a) in {0, 1}: 1 for the better action.
double reward(const EnvironmentSpec& env, WorldSign w, const ContextSample& c, Action a);

// ---------------------------------------------------------------------------
// Scores and policies

struct LinearScore {
  std::vector<double> weights;  // length d + 1, bias last
};
// Reward advantage of a1 under world w: reward_diff(env, w, c).
struct OracleMarginScore {
  WorldSign w = WorldSign::plus;
};
// Posterior probability of the hard component under the known mixture.
struct MixturePosteriorScore {};

using ScoreFunction = std::variant<LinearScore, OracleMarginScore, MixturePosteriorScore>;

double evaluate_score(const ScoreFunction& score, const EnvironmentSpec& env, const ContextSample& c);

struct OptimalPolicy {
  WorldSign w = WorldSign::plus;
};
// Chooses a1 with probability sigmoid(lambda * score(x)).
struct LogisticPolicy {
  ScoreFunction score;
  double lambda = 0.0;
};
struct ConstantPolicy {
  Action a = Action::a1;
};

using PolicySpec = std::variant<OptimalPolicy, LogisticPolicy, ConstantPolicy>;

double sigmoid(double u) noexcept;
double prob_a1(const PolicySpec& pi, const EnvironmentSpec& env, const ContextSample& c);
// E_{a ~ pi(x)} r_w(x, a).
double expected_reward(const EnvironmentSpec& env, WorldSign w, const PolicySpec& pi, const ContextSample& c);

// ---------------------------------------------------------------------------
// Monte Carlo estimators. Trials are split into fixed blocks with their own
// substreams, so results are identical for any worker count.

Estimate value(const EnvironmentSpec& env, WorldSign w, const PolicySpec& pi, std::size_t trials,
               RandomStream& rng);

struct ConditionalValue {
  Estimate overall;
  Estimate easy;
  Estimate hard;
  std::size_t easy_count = 0;
  std::size_t hard_count = 0;
};

// Same draws as `value`, additionally split by hard-set membership.
ConditionalValue conditional_value(const EnvironmentSpec& env, WorldSign w, const PolicySpec& pi,
                                   std::size_t trials, RandomStream& rng);

// gamma = E[|r_+(x, pi^+(x)) - r_+(x, pi^-(x))| 1{hard}].
Estimate separation_gamma(const EnvironmentSpec& env, std::size_t trials, RandomStream& rng);

// Draws `trials` contexts in fixed blocks; shared by the estimators above.
std::vector<ContextSample> sample_contexts(const EnvironmentSpec& env, std::size_t trials, RandomStream& rng);

}  // namespace misspec
