#include "misspec/protocols.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "misspec/bounds.hpp"
#include "misspec/error.hpp"
#include "misspec/parallel.hpp"

namespace misspec {

namespace {

// Log-likelihood ratio accumulator. With a constant bias every increment is
// +-log((1/2+eps)/(1/2-eps)), so the net count is tracked exactly and ties
// stay exact ties.
class LogRatio {
 public:
  explicit LogRatio(const ChannelSpec& ch)
      : hetero_(static_cast<bool>(ch.heterogeneous)), step_(label_log_ratio(LabelBit::favors_better, ch.epsilon)) {}

  void add(LabelBit y, double eps) {
    if (hetero_)
      sum_ += label_log_ratio(y, eps);
    else
      net_ += y == LabelBit::favors_better ? 1 : -1;
  }
  double value() const { return hetero_ ? sum_ : static_cast<double>(net_) * step_; }
  // Sign with exact zero for balanced homogeneous counts.
  int sign() const {
    if (!hetero_) return net_ > 0 ? 1 : (net_ < 0 ? -1 : 0);
    return sum_ > 0.0 ? 1 : (sum_ < 0.0 ? -1 : 0);
  }

 private:
  bool hetero_;
  double step_;
  long long net_ = 0;
  double sum_ = 0.0;
};

WorldSign decide(int sign) { return sign >= 0 ? WorldSign::plus : WorldSign::minus; }

[[noreturn]] void no_progress(std::uint64_t cap) {
  throw NoProgress("routed protocol: no flagged context in " + std::to_string(cap) + " draws");
}

template <class Run>
ProtocolSummary summarize(std::size_t trials, WorldSign w_true, RandomStream& rng, Run run) {
  if (trials == 0) throw std::invalid_argument("trials must be at least 1");
  const std::uint64_t base = rng.fork();
  const auto outcomes = parallel_map(trials, [&](std::size_t i) {
    RandomStream stream = RandomStream::substream(base, i);
    return run(stream);
  });
  MeanAccumulator error, draws, queries, hits, stopped, kl;
  std::uint64_t total_hits = 0;
  std::uint64_t total_queries = 0;
  for (const auto& o : outcomes) {
    error.add(o.decision != w_true ? 1.0 : 0.0);
    draws.add(static_cast<double>(o.total_draws));
    queries.add(static_cast<double>(o.queries_issued));
    hits.add(static_cast<double>(o.hits));
    stopped.add(static_cast<double>(o.stopped_at));
    kl.add(o.kl_spent);
    total_hits += o.hits;
    total_queries += o.queries_issued;
  }
  ProtocolSummary s;
  s.trials = trials;
  s.error = error.estimate();
  s.draws = draws.estimate();
  s.queries = queries.estimate();
  s.hits = hits.estimate();
  s.stopped_at = stopped.estimate();
  s.kl_spent = kl.estimate();
  const double frac = total_queries ? static_cast<double>(total_hits) / static_cast<double>(total_queries) : 0.0;
  s.kept_hit_fraction = {frac, binomial_se(frac, total_queries)};
  return s;
}

}  // namespace

void write_transcript_csv(std::ostream& out, const Transcript& transcript) {
  out << "t,hard,queried,label\n";
  for (const auto& r : transcript) {
    out << r.t << ',' << (r.context.hard ? 1 : 0) << ',' << (r.queried ? 1 : 0) << ',';
    if (r.queried && r.label) out << bit_value(*r.label);
    out << '\n';
  }
}

bool flags(const FlaggerSpec& flagger, const EnvironmentSpec& env, const ContextSample& c, RandomStream& rng) {
  struct Visitor {
    const EnvironmentSpec& env;
    const ContextSample& c;
    RandomStream& rng;
    bool operator()(const OracleFlagger&) const { return c.hard; }
    bool operator()(const NoisyFlagger& f) const { return rng.uniform() < (c.hard ? f.tau : f.phi); }
    bool operator()(const ScoreThresholdFlagger& f) const { return evaluate_score(f.score, env, c) >= f.threshold; }
  };
  if (const auto* noisy = std::get_if<NoisyFlagger>(&flagger)) {
    if (!(noisy->tau >= 0.0 && noisy->tau <= 1.0 && noisy->phi >= 0.0 && noisy->phi <= 1.0))
      throw std::invalid_argument("noisy flagger rates must lie in [0, 1]");
  }
  return std::visit(Visitor{env, c, rng}, flagger);
}

double label_log_ratio(LabelBit y, double epsilon) {
  const double step = std::log((0.5 + epsilon) / (0.5 - epsilon));
  return y == LabelBit::favors_better ? step : -step;
}

ProtocolOutcome run_majority_routed(const EnvironmentSpec& env, WorldSign w_true, const ChannelSpec& ch,
                                    const FlaggerSpec& flagger, std::size_t T, RandomStream& rng,
                                    std::uint64_t draw_cap) {
  if (T == 0) throw std::invalid_argument("run_majority_routed: T must be at least 1");
  ProtocolOutcome out;
  long long balance = 0;  // 2 * sum(Z_i - 1/2)
  std::uint64_t idle = 0;
  while (out.queries_issued < T) {
    const ContextSample c = sample_context(env, rng);
    ++out.total_draws;
    if (!flags(flagger, env, c, rng)) {
      if (++idle >= draw_cap) no_progress(draw_cap);
      continue;
    }
    idle = 0;
    const LabelBit y = pairwise_label(c, w_true, ch, rng);
    ++out.queries_issued;
    balance += y == LabelBit::favors_better ? 1 : -1;
    if (c.hard) {
      ++out.hits;
      out.kl_spent += bounds::kappa(ch.epsilon_at(c));
    }
  }
  out.stopped_at = out.hits;
  out.decision = decide(balance > 0 ? 1 : (balance < 0 ? -1 : 0));
  return out;
}

ProtocolOutcome run_sprt_routed(const EnvironmentSpec& env, WorldSign w_true, const ChannelSpec& ch,
                                const FlaggerSpec& flagger, double delta, RandomStream& rng, std::size_t hit_cap,
                                std::uint64_t draw_cap) {
  if (!(delta > 0.0 && delta < 0.5)) throw std::invalid_argument("run_sprt_routed: delta must lie in (0, 0.5)");
  if (hit_cap == 0) throw std::invalid_argument("run_sprt_routed: hit_cap must be at least 1");
  const double upper = std::log((1.0 - delta) / delta);
  const double lower = -upper;
  // Absorbs rounding when a threshold sits exactly on the likelihood lattice.
  const double slack = 1e-12 * upper;
  ProtocolOutcome out;
  LogRatio L(ch);
  std::uint64_t idle = 0;
  while (out.hits < hit_cap) {
    const ContextSample c = sample_context(env, rng);
    ++out.total_draws;
    if (!flags(flagger, env, c, rng)) {
      if (++idle >= draw_cap) no_progress(draw_cap);
      continue;
    }
    idle = 0;
    const LabelBit y = pairwise_label(c, w_true, ch, rng);
    ++out.queries_issued;
    if (!c.hard) continue;
    const double eps = ch.epsilon_at(c);
    ++out.hits;
    out.kl_spent += bounds::kappa(eps);
    L.add(y, eps);
    const double l = L.value();
    if (l >= upper - slack) {
      out.stopped_at = out.hits;
      out.decision = WorldSign::plus;
      return out;
    }
    if (l <= lower + slack) {
      out.stopped_at = out.hits;
      out.decision = WorldSign::minus;
      return out;
    }
  }
  out.stopped_at = out.hits;
  out.decision = decide(L.sign());
  return out;
}

double transcript_kl(const Transcript& transcript, const ChannelSpec& ch) {
  double kl = 0.0;
  for (const auto& r : transcript)
    if (r.queried && r.context.hard) kl += bounds::kappa(ch.epsilon_at(r.context));
  return kl;
}

ProtocolSummary run_majority_trials(const EnvironmentSpec& env, WorldSign w_true, const ChannelSpec& ch,
                                    const FlaggerSpec& flagger, std::size_t T, std::size_t trials, RandomStream& rng,
                                    std::uint64_t draw_cap) {
  return summarize(trials, w_true, rng, [&](RandomStream& stream) {
    return run_majority_routed(env, w_true, ch, flagger, T, stream, draw_cap);
  });
}

ProtocolSummary run_sprt_trials(const EnvironmentSpec& env, WorldSign w_true, const ChannelSpec& ch,
                                const FlaggerSpec& flagger, double delta, std::size_t trials, RandomStream& rng,
                                std::size_t hit_cap, std::uint64_t draw_cap) {
  return summarize(trials, w_true, rng, [&](RandomStream& stream) {
    return run_sprt_routed(env, w_true, ch, flagger, delta, stream, hit_cap, draw_cap);
  });
}

MinimaxResult simulate_minimax_test(const EnvironmentSpec& env, const ChannelSpec& ch, std::size_t n,
                                    const MinimaxQueryPolicy& policy, std::size_t trials, RandomStream& rng,
                                    std::uint64_t draw_cap) {
  if (trials == 0) throw std::invalid_argument("trials must be at least 1");
  env.validate();
  ch.validate();
  struct Trial {
    bool wrong = false;
    double kl = 0.0;
  };
  const std::uint64_t base = rng.fork();
  const auto results = parallel_map(trials, [&](std::size_t i) {
    RandomStream stream = RandomStream::substream(base, i);
    const WorldSign w = stream.bernoulli(0.5) ? WorldSign::plus : WorldSign::minus;
    LogRatio L(ch);
    Trial t;
    auto observe = [&](const ContextSample& c) {
      const LabelBit y = pairwise_label(c, w, ch, stream);
      if (!c.hard) return;
      const double eps = ch.epsilon_at(c);
      L.add(y, eps);
      t.kl += bounds::kappa(eps);
    };
    if (std::holds_alternative<MinimaxAlways>(policy)) {
      for (std::size_t r = 0; r < n; ++r) observe(sample_context(env, stream));
    } else {
      const auto& flagger = std::get<MinimaxRouted>(policy).flagger;
      std::size_t queries = 0;
      std::uint64_t idle = 0;
      while (queries < n) {
        const ContextSample c = sample_context(env, stream);
        if (!flags(flagger, env, c, stream)) {
          if (++idle >= draw_cap) no_progress(draw_cap);
          continue;
        }
        idle = 0;
        ++queries;
        observe(c);
      }
    }
    t.wrong = decide(L.sign()) != w;
    return t;
  });
  MeanAccumulator error, kl;
  for (const auto& t : results) {
    error.add(t.wrong ? 1.0 : 0.0);
    kl.add(t.kl);
  }
  MinimaxResult out;
  out.trials = trials;
  out.error = error.estimate();
  out.kl = kl.estimate();
  out.bh_floor = bounds::bh_bayes_error(out.kl.value);
  return out;
}

FlaggerRates threshold_flagger_rates(const ScoreFunction& score, const EnvironmentSpec& env, double threshold,
                                     std::size_t trials, RandomStream& rng) {
  if (trials == 0) throw std::invalid_argument("trials must be at least 1");
  std::size_t hard = 0, easy = 0, hard_kept = 0, easy_kept = 0;
  for (const auto& c : sample_contexts(env, trials, rng)) {
    const bool keep = evaluate_score(score, env, c) >= threshold;
    if (c.hard) {
      ++hard;
      hard_kept += keep;
    } else {
      ++easy;
      easy_kept += keep;
    }
  }
  if (hard == 0 || easy == 0)
    throw InsufficientData("threshold_flagger_rates: no samples in one mixture component");
  const double tau = static_cast<double>(hard_kept) / static_cast<double>(hard);
  const double phi = static_cast<double>(easy_kept) / static_cast<double>(easy);
  const double keep = static_cast<double>(hard_kept + easy_kept) / static_cast<double>(trials);
  return {{tau, binomial_se(tau, hard)}, {phi, binomial_se(phi, easy)}, {keep, binomial_se(keep, trials)}};
}

}  // namespace misspec
