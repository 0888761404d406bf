#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "misspec/bounds.hpp"
#include "misspec/error.hpp"
#include "misspec/learner.hpp"
#include "misspec/protocols.hpp"

using namespace misspec;

TEST_CASE("majority vote error respects Hoeffding") {
  const auto env = make_environment(3, 0.2, 1.0, 0);
  RandomStream rng(1);
  const auto s = run_majority_trials(env, WorldSign::plus, make_channel(0.1), OracleFlagger{}, 50, 10000, rng);
  CHECK(s.error.value <= std::exp(-1.0) + 3 * s.error.se);
  CHECK(s.queries.value == 50.0);
  CHECK(s.hits.value == 50.0);
  CHECK(s.kept_hit_fraction.value == 1.0);
}

TEST_CASE("oracle routing draws T / alpha contexts on average") {
  const auto env = make_environment(3, 0.05, 1.0, 0);
  RandomStream rng(2);
  const auto s = run_majority_trials(env, WorldSign::minus, make_channel(0.1), OracleFlagger{}, 100, 10000, rng);
  CHECK(std::abs(s.draws.value - 2000.0) <= 3 * s.draws.se);
}

TEST_CASE("a flagger that never fires stops with no progress") {
  const auto env = make_environment(3, 0.05, 1.0, 0);
  RandomStream rng(3);
  CHECK_THROWS_AS(run_majority_routed(env, WorldSign::plus, make_channel(0.1), NoisyFlagger{0.0, 0.0}, 5, rng, 1000),
                  NoProgress);
  CHECK_THROWS_AS(run_sprt_routed(env, WorldSign::plus, make_channel(0.1), NoisyFlagger{0.0, 0.0}, 0.1, rng, 100, 1000),
                  NoProgress);
  CHECK_THROWS_AS(run_majority_routed(env, WorldSign::plus, make_channel(0.1), OracleFlagger{}, 0, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(run_majority_routed(env, WorldSign::plus, make_channel(0.1), NoisyFlagger{1.5, 0.0}, 3, rng),
                  std::invalid_argument);
}

TEST_CASE("SPRT stopping at a loose threshold") {
  const auto env = make_environment(3, 0.3, 1.0, 0);
  RandomStream rng(4);
  // delta = 0.4 puts the threshold exactly one step up the likelihood lattice.
  const auto s = run_sprt_trials(env, WorldSign::plus, make_channel(0.1), OracleFlagger{}, 0.4, 10000, rng);
  CHECK(s.stopped_at.value <= bounds::sprt_expected_hits(0.4, 0.1) + 3 * s.stopped_at.se);
  CHECK(s.error.value <= 0.4 + 3 * s.error.se);
  CHECK_THROWS_AS(run_sprt_trials(env, WorldSign::plus, make_channel(0.1), OracleFlagger{}, 0.5, 10, rng),
                  std::invalid_argument);
}

TEST_CASE("SPRT truncation decides by the running sign") {
  const auto env = make_environment(3, 1.0, 1.0, 0);
  RandomStream rng(5);
  const auto o = run_sprt_routed(env, WorldSign::plus, make_channel(0.01), OracleFlagger{}, 1e-6, rng, 3);
  CHECK(o.stopped_at == 3);
  CHECK(o.hits == 3);
}

TEST_CASE("transcript KL") {
  const auto ch = make_channel(0.1);
  CHECK(transcript_kl({}, ch) == 0.0);
  Transcript t;
  for (int i = 0; i < 10; ++i) {
    TranscriptRecord r;
    r.t = i;
    r.context.hard = i < 7;
    r.queried = true;
    r.label = LabelBit::favors_better;
    t.push_back(r);
  }
  CHECK(transcript_kl(t, ch) == doctest::Approx(0.567651151351430).epsilon(1e-12));
  std::ostringstream out;
  write_transcript_csv(out, t);
  CHECK(out.str().rfind("t,hard,queried,label\n0,1,1,1\n", 0) == 0);

  const auto env = make_environment(3, 0.05, 1.0, 0);
  MeanAccumulator kl;
  RandomStream rng(6);
  for (int i = 0; i < 10000; ++i) kl.add(transcript_kl(collect_transcript(env, WorldSign::plus, ch, 200, AlwaysQuery{}, rng), ch));
  CHECK(std::abs(kl.mean() - 0.810930216216329) <= 3 * kl.se());
}

TEST_CASE("label log ratio") {
  CHECK(label_log_ratio(LabelBit::favors_better, 0.1) == doctest::Approx(std::log(1.5)));
  CHECK(label_log_ratio(LabelBit::disfavors_better, 0.1) == doctest::Approx(-std::log(1.5)));
}

TEST_CASE("two-world test error") {
  const auto env = make_environment(3, 0.05, 1.0, 0);
  const auto ch = make_channel(0.1);
  RandomStream rng(7);
  const auto none = simulate_minimax_test(env, ch, 0, MinimaxAlways{}, 20000, rng);
  CHECK(std::abs(none.error.value - 0.5) <= 3 * none.error.se);
  CHECK(none.kl.value == 0.0);
  CHECK(none.bh_floor == 0.25);

  const auto r = simulate_minimax_test(env, ch, 100, MinimaxAlways{}, 20000, rng);
  CHECK(r.error.value >= 1.0 / 6.0 - 3 * r.error.se);
  CHECK(std::abs(r.kl.value - std::log(1.5)) <= 4 * r.kl.se);

  const auto routed = simulate_minimax_test(env, ch, 100, MinimaxRouted{OracleFlagger{}}, 5000, rng);
  CHECK(routed.kl.value == doctest::Approx(100 * bounds::kappa(0.1)));
  CHECK(routed.error.value < r.error.value);
}

TEST_CASE("threshold flagger rates") {
  const auto env = make_environment(3, 0.1, 4.0 / std::sqrt(3.0), 0);
  RandomStream rng(8);
  const auto lo = threshold_flagger_rates(MixturePosteriorScore{}, env, -std::numeric_limits<double>::infinity(), 1000, rng);
  CHECK(lo.tau.value == 1.0);
  CHECK(lo.phi.value == 1.0);
  CHECK(lo.keep.value == 1.0);
  const auto hi = threshold_flagger_rates(MixturePosteriorScore{}, env, std::numeric_limits<double>::infinity(), 1000, rng);
  CHECK(hi.tau.value == 0.0);
  CHECK(hi.keep.value == 0.0);
  const auto mid = threshold_flagger_rates(MixturePosteriorScore{}, env, 0.5, 100000, rng);
  CHECK(mid.tau.se <= 0.005);
  CHECK(mid.phi.se <= 0.005);
  // Posterior > 1/2 iff mu.x > |mu|^2/2 + log 9, a Gaussian tail along mu.
  const double cut = (8.0 + std::log(9.0)) / 4.0;
  CHECK(std::abs(mid.tau.value - normal_cdf(4.0 - cut)) <= 4 * mid.tau.se);
  CHECK(std::abs(mid.phi.value - normal_cdf(-cut)) <= 4 * mid.phi.se + 1e-4);
  CHECK_THROWS_AS(threshold_flagger_rates(MixturePosteriorScore{}, make_environment(3, 0.0, 1.0, 0), 0.5, 100, rng),
                  InsufficientData);
}
