#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "misspec/config.hpp"
#include "misspec/env.hpp"
#include "misspec/error.hpp"
#include "misspec/parallel.hpp"
#include "misspec/stats.hpp"

using namespace misspec;

namespace {

ContextSample at(const EnvironmentSpec& env, bool hard, double theta_dot, double upsilon_dot) {
  ContextSample c;
  c.hard = hard;
  c.x.assign(env.d, 0.0);
  for (std::size_t i = 0; i < env.d; ++i) c.x[i] = theta_dot * env.theta[i] + upsilon_dot * env.upsilon[i];
  return c;
}

}  // namespace

TEST_CASE("hard-set membership follows alpha") {
  RandomStream rng(1);
  for (const auto& c : sample_contexts(make_environment(4, 0.0, 1.0, 0), 5000, rng)) REQUIRE_FALSE(c.hard);
  for (const auto& c : sample_contexts(make_environment(4, 1.0, 1.0, 0), 5000, rng)) REQUIRE(c.hard);

  const auto env = make_environment(3, 0.05, 1.0, 0);
  const auto sample = sample_contexts(env, 1000000, rng);
  std::size_t hard = 0;
  for (const auto& c : sample) hard += c.hard;
  CHECK(std::abs(hard / 1e6 - 0.05) < 0.001);
}

TEST_CASE("directions are orthonormal and seeded") {
  const auto a = make_environment(10, 0.1, 0.5, 3);
  const auto b = make_environment(10, 0.1, 0.5, 3);
  CHECK(a.theta == b.theta);
  CHECK(std::abs(dot(a.theta, a.upsilon)) < 1e-12);
  CHECK(dot(a.theta, a.theta) == doctest::Approx(1.0));
  CHECK(make_environment(10, 0.1, 0.5, 4).theta != a.theta);
  CHECK_THROWS_AS(make_environment(1, 0.1, 0.5, 0), std::invalid_argument);
  CHECK_THROWS_AS(with_alpha(a, 1.5), std::invalid_argument);
}

TEST_CASE("reward difference and optimal actions") {
  const auto env = make_environment(5, 0.1, 0.5, 0);
  CHECK(reward_diff(env, WorldSign::minus, at(env, false, 2.3, 0.0)) == 1.0);
  CHECK(reward_diff(env, WorldSign::minus, at(env, true, 0.0, 0.7)) == -1.0);
  CHECK(reward_diff(env, WorldSign::plus, at(env, true, 0.0, -0.7)) == -1.0);
  CHECK(reward_diff(env, WorldSign::plus, at(env, false, 0.0, 0.0)) == 1.0);

  CHECK(optimal_action(env, WorldSign::minus, at(env, false, 1.0, 0.0)) == Action::a1);
  CHECK(optimal_action(env, WorldSign::plus, at(env, true, 0.0, 1.0)) == Action::a1);
  CHECK(optimal_action(env, WorldSign::minus, at(env, true, 0.0, 1.0)) == Action::a0);
  const auto c = at(env, true, 0.0, 1.0);
  CHECK(reward(env, WorldSign::plus, c, Action::a1) == 1.0);
  CHECK(reward(env, WorldSign::plus, c, Action::a0) == 0.0);
}

TEST_CASE("worlds disagree exactly on the hard set") {
  const auto env = make_environment(4, 0.05, 1.0, 2);
  RandomStream rng(9);
  std::size_t disagree = 0;
  const auto sample = sample_contexts(env, 1000000, rng);
  for (const auto& c : sample) {
    const bool d = optimal_action(env, WorldSign::plus, c) != optimal_action(env, WorldSign::minus, c);
    REQUIRE(d == c.hard);
    disagree += d;
  }
  CHECK(std::abs(disagree / 1e6 - 0.05) < 0.001);
}

TEST_CASE("policy values") {
  const auto env = make_environment(4, 0.1, 1.0, 0);
  RandomStream rng(5);
  const auto best = value(env, WorldSign::plus, OptimalPolicy{WorldSign::plus}, 10000, rng);
  CHECK(best.value == 1.0);
  CHECK(best.se == 0.0);
  const auto wrong = value(env, WorldSign::plus, OptimalPolicy{WorldSign::minus}, 1000000, rng);
  CHECK(std::abs(wrong.value - 0.9) < 0.002);
  const auto constant = value(env, WorldSign::plus, ConstantPolicy{Action::a1}, 200000, rng);
  const double hard_a1 = normal_cdf(dot(env.upsilon, env.hard_center));
  CHECK(std::abs(constant.value - (0.9 * 0.5 + 0.1 * hard_a1)) < 3 * constant.se);
  CHECK_THROWS_AS(value(env, WorldSign::plus, ConstantPolicy{}, 0, rng), std::invalid_argument);

  const auto split = conditional_value(env, WorldSign::plus, OptimalPolicy{WorldSign::minus}, 100000, rng);
  CHECK(split.hard.value == 0.0);
  CHECK(split.easy.value == 1.0);
  CHECK(split.easy_count + split.hard_count == 100000);
}

TEST_CASE("separation equals alpha") {
  RandomStream rng(11);
  const auto g = separation_gamma(make_environment(3, 0.05, 1.0, 0), 1000000, rng);
  CHECK(std::abs(g.value - 0.05) < 0.001);
  CHECK(g.value <= 0.05 + 3 * g.se);
  CHECK(separation_gamma(make_environment(3, 0.0, 1.0, 0), 1000, rng).value == 0.0);
  CHECK_THROWS_AS(separation_gamma(make_environment(3, 0.1, 1.0, 0), 0, rng), std::invalid_argument);
}

TEST_CASE("estimates do not depend on the worker count") {
  const auto env = make_environment(6, 0.1, 0.5, 0);
  RandomStream a(77), b(77);
  set_worker_count(1);
  const auto one = value(env, WorldSign::plus, ConstantPolicy{}, 50000, a);
  set_worker_count(4);
  const auto four = value(env, WorldSign::plus, ConstantPolicy{}, 50000, b);
  set_worker_count(1);
  CHECK(one.value == four.value);
  CHECK(one.se == four.se);
}

TEST_CASE("scores and policies") {
  const auto env = make_environment(3, 0.1, 4.0 / std::sqrt(3.0), 0);
  ContextSample c;
  c.x = {0.0, 0.0, 0.0};
  CHECK(evaluate_score(LinearScore{{1, 2, 3, 0.5}}, env, c) == 0.5);
  CHECK_THROWS_AS(evaluate_score(LinearScore{{1, 2}}, env, c), std::invalid_argument);
  // Posterior odds at the origin: alpha/(1-alpha) * exp(-|mu|^2/2) = exp(-8)/9.
  CHECK(evaluate_score(MixturePosteriorScore{}, env, c) == doctest::Approx(sigmoid(std::log(1.0 / 9.0) - 8.0)));
  CHECK(prob_a1(LogisticPolicy{LinearScore{{0, 0, 0, 3}}, 0.0}, env, c) == 0.5);
  CHECK(prob_a1(LogisticPolicy{LinearScore{{0, 0, 0, 1}}, 60.0}, env, c) > 1 - 1e-9);
  CHECK(sigmoid(-800) == 0.0);
  CHECK(sigmoid(800) == 1.0);
}

TEST_CASE("environment config round trip") {
  const auto env = make_environment(4, 0.2, 0.5, 1);
  const auto back = environment_from_config(environment_to_config(env));
  CHECK(back.alpha == env.alpha);
  CHECK(back.theta == env.theta);
  CHECK(back.upsilon == env.upsilon);
  CHECK(back.hard_center == env.hard_center);

  const auto cfg = Config::parse_string("[environment]\nd = 4\nalpha = 0.1\nhard_center = ones-scaled:2\n", "env.ini");
  const auto e = environment_from_config(cfg.section("environment"));
  CHECK(e.hard_center == std::vector<double>(4, 2.0));
  CHECK(std::abs(dot(e.theta, e.upsilon)) < 1e-12);

  const auto bad = Config::parse_string("[environment]\nd = 4\nalpha = 1.5\n", "env.ini");
  CHECK_THROWS_AS(environment_from_config(bad.section("environment")), ConfigError);
}
