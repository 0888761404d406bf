#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <variant>
#include <vector>

#include "misspec/channel.hpp"
#include "misspec/env.hpp"
#include "misspec/random.hpp"
#include "misspec/stats.hpp"

namespace misspec {

// One round of an adaptive interaction. `preferred` is the action the label
// favors, kept alongside the bit so a preference model can be fit later.
struct TranscriptRecord {
  std::size_t t = 0;
  ContextSample context;
  bool queried = false;
  std::optional<LabelBit> label;
  std::optional<Action> preferred;
};

using Transcript = std::vector<TranscriptRecord>;

// CSV: t,hard,queried,label (label empty when not queried).
void write_transcript_csv(std::ostream& out, const Transcript& transcript);

// ---------------------------------------------------------------------------
// Flaggers

struct OracleFlagger {};
// Flags hard contexts with probability tau and easy ones with probability phi,
// independently per context.
struct NoisyFlagger {
  double tau = 1.0;
  double phi = 0.0;
};
struct ScoreThresholdFlagger {
  ScoreFunction score;
  double threshold = 0.5;
};

using FlaggerSpec = std::variant<OracleFlagger, NoisyFlagger, ScoreThresholdFlagger>;

bool flags(const FlaggerSpec& flagger, const EnvironmentSpec& env, const ContextSample& c, RandomStream& rng);

// ---------------------------------------------------------------------------
// Query policies for n-round interactions

struct AlwaysQuery {};
struct NeverQuery {};
struct RoutedQuery {
  FlaggerSpec flagger;
};
// Deterministic in (context, history); may look at earlier labels.
struct HistoryQuery {
  std::function<bool(const ContextSample&, const Transcript&)> decide;
};

using QueryPolicy = std::variant<AlwaysQuery, NeverQuery, RoutedQuery, HistoryQuery>;

// ---------------------------------------------------------------------------
// Sequential protocols

inline constexpr std::uint64_t kDefaultDrawCap = 10'000'000;

struct ProtocolOutcome {
  WorldSign decision = WorldSign::plus;
  std::uint64_t total_draws = 0;
  std::uint64_t queries_issued = 0;
  std::uint64_t hits = 0;        // queried contexts that are truly hard
  std::uint64_t stopped_at = 0;  // hits at stopping (sequential tests)
  double kl_spent = 0.0;         // sum of per-hit KL over queried hard contexts
};

// Draws contexts, queries every flagged one, and stops after T queries.
// Decides by the sign of sum(Z_i - 1/2); a zero sum decides +1. Throws
// NoProgress after `draw_cap` consecutive draws without a flag.
ProtocolOutcome run_majority_routed(const EnvironmentSpec& env, WorldSign w_true, const ChannelSpec& ch,
                                    const FlaggerSpec& flagger, std::size_t T, RandomStream& rng,
                                    std::uint64_t draw_cap = kDefaultDrawCap);

// Wald SPRT on hits with thresholds a = log(delta/(1-delta)), b = -a. At
// `hit_cap` hits the test is truncated and decides by the sign of L.
ProtocolOutcome run_sprt_routed(const EnvironmentSpec& env, WorldSign w_true, const ChannelSpec& ch,
                                const FlaggerSpec& flagger, double delta, RandomStream& rng,
                                std::size_t hit_cap = 1'000'000, std::uint64_t draw_cap = kDefaultDrawCap);

// Chain-rule KL of a transcript: kappa(eps(x)) summed over queried hard rounds.
double transcript_kl(const Transcript& transcript, const ChannelSpec& ch);

// Log-likelihood ratio log P(y | +) / P(y | -) of one hard-set label.
double label_log_ratio(LabelBit y, double epsilon);

// ---------------------------------------------------------------------------
// Trial batches

struct ProtocolSummary {
  std::size_t trials = 0;
  Estimate error;           // fraction of wrong decisions
  Estimate draws;           // total_draws
  Estimate queries;         // queries_issued
  Estimate hits;            // hits
  Estimate stopped_at;      // stopped_at
  Estimate kl_spent;
  Estimate kept_hit_fraction;  // pooled hits / queries, binomial SE
};

ProtocolSummary run_majority_trials(const EnvironmentSpec& env, WorldSign w_true, const ChannelSpec& ch,
                                    const FlaggerSpec& flagger, std::size_t T, std::size_t trials, RandomStream& rng,
                                    std::uint64_t draw_cap = kDefaultDrawCap);

ProtocolSummary run_sprt_trials(const EnvironmentSpec& env, WorldSign w_true, const ChannelSpec& ch,
                                const FlaggerSpec& flagger, double delta, std::size_t trials, RandomStream& rng,
                                std::size_t hit_cap = 1'000'000, std::uint64_t draw_cap = kDefaultDrawCap);

// ---------------------------------------------------------------------------
// Two-world test

struct MinimaxAlways {};
// Spends the n-query budget on flagged contexts only.
struct MinimaxRouted {
  FlaggerSpec flagger;
};
using MinimaxQueryPolicy = std::variant<MinimaxAlways, MinimaxRouted>;

struct MinimaxResult {
  std::size_t trials = 0;
  Estimate error;    // empirical Bayes error of the likelihood-ratio test
  Estimate kl;       // realized transcript KL
  double bh_floor = 0.0;  // bh_bayes_error(mean realized KL)
};

// Each trial draws w uniformly, runs n queries, and decides by the sign of the
// exact log-likelihood ratio over queried hard rounds (zero decides +1).
MinimaxResult simulate_minimax_test(const EnvironmentSpec& env, const ChannelSpec& ch, std::size_t n,
                                    const MinimaxQueryPolicy& policy, std::size_t trials, RandomStream& rng,
                                    std::uint64_t draw_cap = kDefaultDrawCap);

struct FlaggerRates {
  Estimate tau;   // Pr(u >= t | hard)
  Estimate phi;   // Pr(u >= t | easy)
  Estimate keep;  // Pr(u >= t)
};

FlaggerRates threshold_flagger_rates(const ScoreFunction& score, const EnvironmentSpec& env, double threshold,
                                     std::size_t trials, RandomStream& rng);

}  // namespace misspec
