#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "misspec/bounds.hpp"
#include "misspec/config.hpp"
#include "misspec/env.hpp"
#include "misspec/error.hpp"
#include "misspec/learner.hpp"
#include "misspec/maps.hpp"
#include "misspec/parallel.hpp"
#include "misspec/protocols.hpp"
#include "misspec/runner.hpp"
#include "misspec/tilting.hpp"

using namespace misspec;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::string out;
  bool dry_run = false;
};

std::string fmt(double v) { return format_double(v); }

std::string join_row(std::initializer_list<std::string> cells) {
  std::string out;
  for (const auto& c : cells) {
    if (!out.empty()) out += ',';
    out += c;
  }
  return out;
}

// Writes <out>/<name>.csv, or stdout without an output directory.
void emit(const Globals& g, const std::string& name, const std::string& content) {
  const std::string dir = runner::resolve_output_dir(g.out);
  if (dir.empty()) {
    std::cout << content;
    return;
  }
  fs::create_directories(dir);
  const fs::path path = fs::path(dir) / (name + ".csv");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  std::cerr << "wrote " << path.string() << "\n";
}

struct EnvOptions {
  std::size_t d = 10;
  double alpha = 0.05;
  double epsilon = 0.1;
  double center_scale = 0.5;
  std::uint64_t direction_seed = 0;
};

void add_env_options(CLI::App* cmd, EnvOptions& o) {
  cmd->add_option("--d", o.d, "context dimension")->capture_default_str();
  cmd->add_option("--alpha", o.alpha, "hard-set mass")->capture_default_str();
  cmd->add_option("--epsilon", o.epsilon, "Massart bias")->capture_default_str();
  cmd->add_option("--center-scale", o.center_scale, "hard center = scale * (1, ..., 1)")->capture_default_str();
  cmd->add_option("--direction-seed", o.direction_seed, "seed for theta and upsilon")->capture_default_str();
}

// [environment] and [channel] from --config take precedence over flags.
std::pair<EnvironmentSpec, ChannelSpec> build_env(const Globals& g, const EnvOptions& o) {
  if (!g.config_path.empty()) {
    const auto cfg = Config::load(g.config_path);
    if (cfg.has_section("environment")) {
      auto env = environment_from_config(cfg.section("environment"));
      auto ch = cfg.has_section("channel") ? channel_from_config(cfg.section("channel"), env) : make_channel(o.epsilon);
      return {env, ch};
    }
  }
  return {make_environment(o.d, o.alpha, o.center_scale, o.direction_seed), make_channel(o.epsilon)};
}

FlaggerSpec make_flagger(double tau, double phi) {
  if (tau == 1.0 && phi == 0.0) return OracleFlagger{};
  return NoisyFlagger{tau, phi};
}

DiscreteMeasure load_measure(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open measure file " + path);
  return read_measure_csv(in);
}

std::string csv_block(const std::string& header, const std::vector<std::string>& rows) {
  std::string out = header + "\n";
  for (const auto& r : rows) out += r + "\n";
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"misspec_lab: misspecified-feedback bounds, protocols, tilting and diagnostics"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "INI configuration file");
  app.add_option("--seed", g.seed, "master seed")->capture_default_str();
  app.add_option("--jobs", g.jobs, "worker threads")->capture_default_str();
  app.add_option("--out", g.out, "output directory (MISSPEC_LAB_OUT overrides)");
  app.add_flag("--dry-run", g.dry_run, "print the plan without running");

  // bounds
  auto* bounds_cmd = app.add_subcommand("bounds", "closed-form bounds and budgets");
  std::vector<std::uint64_t> bounds_n{100};
  bounds::BoundParameters bp;
  std::optional<double> bounds_gamma, bounds_eta;
  bounds_cmd->add_option("--n", bounds_n, "rounds (list)")->delimiter(',');
  bounds_cmd->add_option("--alpha", bp.alpha)->capture_default_str();
  bounds_cmd->add_option("--epsilon", bp.epsilon)->capture_default_str();
  bounds_cmd->add_option("--gamma", bounds_gamma, "separation (default alpha)");
  bounds_cmd->add_option("--eta", bounds_eta, "target gap (default gamma / 10)");
  bounds_cmd->add_option("--tau", bp.tau)->capture_default_str();
  bounds_cmd->add_option("--phi", bp.phi)->capture_default_str();
  bounds_cmd->add_option("--delta", bp.delta)->capture_default_str();

  // kappa
  auto* kappa_cmd = app.add_subcommand("kappa", "per-hit KL and its quadratic upper bound");
  std::vector<double> kappa_eps{0.1};
  kappa_cmd->add_option("--epsilon", kappa_eps, "biases (list)")->delimiter(',');

  // minimax
  auto* minimax_cmd = app.add_subcommand("minimax", "two-world likelihood-ratio test simulation");
  EnvOptions mm_env;
  std::size_t mm_n = 100, mm_trials = 10000;
  std::string mm_policy = "always";
  add_env_options(minimax_cmd, mm_env);
  minimax_cmd->add_option("--n", mm_n)->capture_default_str();
  minimax_cmd->add_option("--trials", mm_trials)->capture_default_str();
  minimax_cmd->add_option("--policy", mm_policy, "always or routed")->check(CLI::IsMember({"always", "routed"}));

  // route
  auto* route_cmd = app.add_subcommand("route", "flagger-routed majority test");
  EnvOptions rt_env;
  std::size_t rt_T = 50, rt_trials = 1000;
  double rt_tau = 1.0, rt_phi = 0.0;
  std::string rt_transcript;
  add_env_options(route_cmd, rt_env);
  route_cmd->add_option("--T", rt_T, "flagged queries")->capture_default_str();
  route_cmd->add_option("--trials", rt_trials)->capture_default_str();
  route_cmd->add_option("--tau", rt_tau)->capture_default_str();
  route_cmd->add_option("--phi", rt_phi)->capture_default_str();

  // sprt
  auto* sprt_cmd = app.add_subcommand("sprt", "sequential probability ratio test on routed hits");
  EnvOptions sp_env;
  double sp_delta = 0.05, sp_tau = 1.0, sp_phi = 0.0;
  std::size_t sp_trials = 1000;
  add_env_options(sprt_cmd, sp_env);
  sprt_cmd->add_option("--delta", sp_delta)->capture_default_str();
  sprt_cmd->add_option("--tau", sp_tau)->capture_default_str();
  sprt_cmd->add_option("--phi", sp_phi)->capture_default_str();
  sprt_cmd->add_option("--trials", sp_trials)->capture_default_str();

  // tilt-scan
  auto* tilt_cmd = app.add_subcommand("tilt-scan", "log-partition, hard mass and KL over a lambda grid");
  std::string tilt_measure, tilt_score = "s", tilt_hard = "H";
  std::vector<double> tilt_grid{0, 0.5, 1, 2};
  tilt_cmd->add_option("--measure", tilt_measure, "measure CSV (weight first)")->required();
  tilt_cmd->add_option("--score", tilt_score, "tilting attribute")->capture_default_str();
  tilt_cmd->add_option("--hard", tilt_hard, "hard-set attribute")->capture_default_str();
  tilt_cmd->add_option("--lambda-grid", tilt_grid)->delimiter(',');

  // maps-scan
  auto* maps_cmd = app.add_subcommand("maps-scan", "shaped-score drift over a lambda grid");
  std::string maps_measure, maps_spec, maps_hard = "H";
  std::vector<double> maps_grid{0, 0.5, 1, 2};
  maps_cmd->add_option("--measure", maps_measure, "measure CSV")->required();
  maps_cmd->add_option("--spec", maps_spec, "shaping spec file")->required();
  maps_cmd->add_option("--hard", maps_hard)->capture_default_str();
  maps_cmd->add_option("--lambda-grid", maps_grid)->delimiter(',');

  // diagnostics
  auto* diag_cmd = app.add_subcommand("diagnostics", "learner diagnostics D1-D3, estimators, trade-off, divergence");
  std::string diag_suite;
  EnvOptions dg_env;
  dg_env.alpha = 0.1;
  std::size_t dg_n = 100000, dg_trials = 100000, dg_instances = 1000, dg_atoms = 6;
  std::vector<double> dg_lambda{0, 1, 2, 5, 10, 20, 50, 100, 200};
  std::vector<double> dg_shift{0, 0.5, 1};
  std::vector<double> dg_eta;
  std::vector<std::uint64_t> dg_seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<std::uint64_t> dg_audit{1000, 10000, 100000};
  std::vector<std::uint64_t> dg_ngrid{0, 100, 1000, 10000};
  double dg_tau = 1.0, dg_phi = 0.0;
  std::string dg_measure;
  diag_cmd->add_option("--suite", diag_suite)->required()->check(
      CLI::IsMember({"d1", "d2", "d3", "estimate", "tri", "divergence"}));
  add_env_options(diag_cmd, dg_env);
  diag_cmd->add_option("--n", dg_n, "transcript size (d1)")->capture_default_str();
  diag_cmd->add_option("--trials", dg_trials, "Monte Carlo contexts or protocol runs")->capture_default_str();
  diag_cmd->add_option("--lambda-grid", dg_lambda)->delimiter(',');
  diag_cmd->add_option("--shift", dg_shift, "shift factors (d2)")->delimiter(',');
  diag_cmd->add_option("--eta", dg_eta, "target gaps (d3; default gamma/2, gamma/10, gamma/100)")->delimiter(',');
  diag_cmd->add_option("--seeds", dg_seeds, "seeds (d1)")->delimiter(',');
  diag_cmd->add_option("--audit", dg_audit, "audit sizes (estimate)")->delimiter(',');
  diag_cmd->add_option("--n-grid", dg_ngrid, "lower-bound n grid (estimate)")->delimiter(',');
  diag_cmd->add_option("--tau", dg_tau)->capture_default_str();
  diag_cmd->add_option("--phi", dg_phi)->capture_default_str();
  diag_cmd->add_option("--instances", dg_instances, "random instances (tri)")->capture_default_str();
  diag_cmd->add_option("--atoms", dg_atoms, "atoms per instance (tri)")->capture_default_str();
  diag_cmd->add_option("--measure", dg_measure, "measure CSV with s_hat, r_hat, r_w (divergence)");

  // run-suite
  auto* suite_cmd = app.add_subcommand("run-suite", "run the experiment grid from --config");

  // emit-overlay
  auto* overlay_cmd = app.add_subcommand("emit-overlay", "append theoretical curves to a results CSV");
  std::string ov_results, ov_kind;
  overlay_cmd->add_option("--results", ov_results, "results CSV")->required();
  overlay_cmd->add_option("--kind", ov_kind, "lower_bound or routing_Q")->required();

  CLI11_PARSE(app, argc, argv);
  set_worker_count(g.jobs);
  RandomStream rng(g.seed);

  try {
    if (*bounds_cmd) {
      bp.gamma = bounds_gamma.value_or(bp.alpha);
      bp.eta = bounds_eta.value_or(bp.gamma / 10.0);
      std::vector<std::string> rows;
      for (auto n : bounds_n) {
        bp.n = n;
        rows.push_back(bounds::bound_report_row(bounds::bound_report(bp)));
      }
      emit(g, "bounds", csv_block(bounds::bound_report_header(), rows));
    } else if (*kappa_cmd) {
      std::vector<std::string> rows;
      for (double e : kappa_eps)
        rows.push_back(join_row({fmt(e), fmt(bounds::kappa(e)), fmt(bounds::kappa_upper(e)),
                                 fmt(e > 0 ? bounds::kappa(e) / (8 * e * e) : 1.0)}));
      emit(g, "kappa", csv_block("epsilon,kappa,kappa_upper,kappa_over_8eps2", rows));
    } else if (*minimax_cmd) {
      const auto [env, ch] = build_env(g, mm_env);
      MinimaxQueryPolicy policy = MinimaxAlways{};
      if (mm_policy == "routed") policy = MinimaxRouted{OracleFlagger{}};
      const auto r = simulate_minimax_test(env, ch, mm_n, policy, mm_trials, rng);
      const double floor = bounds::bh_bayes_error(static_cast<double>(mm_n) * env.alpha * bounds::kappa(ch.epsilon));
      emit(g, "minimax",
           csv_block("n,alpha,epsilon,policy,trials,error,error_se,kl,bh_floor_realized,bh_floor_budget",
                     {join_row({std::to_string(mm_n), fmt(env.alpha), fmt(ch.epsilon), mm_policy, std::to_string(mm_trials),
                                fmt(r.error.value), fmt(r.error.se), fmt(r.kl.value), fmt(r.bh_floor), fmt(floor)})}));
    } else if (*route_cmd) {
      const auto [env, ch] = build_env(g, rt_env);
      const auto s = run_majority_trials(env, WorldSign::plus, ch, make_flagger(rt_tau, rt_phi), rt_T, rt_trials, rng);
      const double flag_rate = env.alpha * rt_tau + (1.0 - env.alpha) * rt_phi;
      emit(g, "route",
           csv_block("T,alpha,epsilon,tau,phi,trials,error,error_se,error_bound,draws,draws_se,predicted_draws,hits,"
                     "kept_fraction,kept_fraction_se,kept_fraction_predicted",
                     {join_row({std::to_string(rt_T), fmt(env.alpha), fmt(ch.epsilon), fmt(rt_tau), fmt(rt_phi),
                                std::to_string(rt_trials), fmt(s.error.value), fmt(s.error.se),
                                fmt(std::exp(-2.0 * static_cast<double>(rt_T) * ch.epsilon * ch.epsilon)),
                                fmt(s.draws.value), fmt(s.draws.se), fmt(static_cast<double>(rt_T) / flag_rate),
                                fmt(s.hits.value), fmt(s.kept_hit_fraction.value), fmt(s.kept_hit_fraction.se),
                                fmt(env.alpha * rt_tau / flag_rate)})}));
    } else if (*sprt_cmd) {
      const auto [env, ch] = build_env(g, sp_env);
      const auto s = run_sprt_trials(env, WorldSign::plus, ch, make_flagger(sp_tau, sp_phi), sp_delta, sp_trials, rng);
      emit(g, "sprt",
           csv_block("delta,alpha,epsilon,tau,phi,trials,error,error_se,stopped_at,stopped_se,bound,draws",
                     {join_row({fmt(sp_delta), fmt(env.alpha), fmt(ch.epsilon), fmt(sp_tau), fmt(sp_phi),
                                std::to_string(sp_trials), fmt(s.error.value), fmt(s.error.se), fmt(s.stopped_at.value),
                                fmt(s.stopped_at.se), fmt(bounds::sprt_expected_hits(sp_delta, ch.epsilon)),
                                fmt(s.draws.value)})}));
    } else if (*tilt_cmd) {
      const auto mu = load_measure(tilt_measure);
      const auto s = mu.attribute(tilt_score);
      const auto h = mu.attribute(tilt_hard);
      std::vector<std::string> rows;
      for (const auto& p : hard_mass_curve(mu, s, h, tilt_grid)) {
        const auto st = tilt_state(mu, s, p.lambda);
        rows.push_back(join_row({fmt(p.lambda), fmt(st.log_partition), fmt(st.mean_s), fmt(p.rho), fmt(p.drho),
                                 fmt(kl_tilt(mu, s, p.lambda).forward)}));
      }
      emit(g, "tilt_scan", csv_block("lambda,A,Aprime,rho,drho,kl_fwd", rows));
    } else if (*maps_cmd) {
      const auto mu = load_measure(maps_measure);
      std::ifstream spec_in(maps_spec);
      if (!spec_in) throw std::runtime_error("cannot open shaping spec " + maps_spec);
      const auto spec = maps::read_shaping_spec(spec_in, maps_spec);
      const auto t = maps::shaped_score(spec, mu);
      const auto report = maps::drift_limit_report(mu, t, mu.attribute(maps_hard), maps_grid);
      std::vector<std::string> rows;
      for (const auto& p : report.points)
        rows.push_back(join_row({fmt(p.lambda), fmt(p.rho), fmt(p.drift), fmt(p.kl_forward)}));
      emit(g, "maps_scan", csv_block("lambda,rho_t,drift,kl_fwd", rows));
    } else if (*diag_cmd) {
      if (diag_suite == "d1") {
        auto cfg = d1_reference_config();
        cfg.env = make_environment(dg_env.d, dg_env.alpha, dg_env.center_scale, dg_env.direction_seed);
        cfg.channel = make_channel(dg_env.epsilon);
        if (!g.config_path.empty()) std::tie(cfg.env, cfg.channel) = build_env(g, dg_env);
        cfg.n = dg_n;
        cfg.lambda_grid = dg_lambda;
        cfg.eval_trials = dg_trials;
        const auto results = parallel_map(dg_seeds.size(), [&](std::size_t i) { return run_d1(cfg, dg_seeds[i]); });
        std::vector<std::string> rows;
        for (const auto& r : results)
          for (std::size_t k = 0; k < r.curve.grid.size(); ++k)
            rows.push_back(join_row({std::to_string(r.seed), fmt(r.curve.grid[k]), fmt(r.curve.true_value[k].value),
                                     fmt(r.curve.true_value[k].se), fmt(r.curve.proxy_value[k].value),
                                     fmt(r.curve.proxy_value[k].se), fmt(r.curve.true_gap[k].value),
                                     fmt(r.curve.proxy_gap[k].value), fmt(r.curve.hard_mass[k]),
                                     fmt(r.curve.proxy_cov[k]),
                                     r.divergence && *r.divergence == k ? "1" : "0"}));
        emit(g, "d1",
             csv_block("seed,lambda,true_value,true_se,proxy_value,proxy_se,true_gap,proxy_gap,hard_mass,proxy_cov,"
                       "divergence_start",
                       rows));
      } else if (diag_suite == "d2") {
        const auto [env, ch] = build_env(g, dg_env);
        const auto report = diagnostic_d2_shift(env, WorldSign::minus, OptimalPolicy{WorldSign::plus}, dg_shift,
                                                dg_trials, rng);
        std::vector<std::string> rows;
        for (const auto& p : report.points)
          rows.push_back(join_row({fmt(p.factor), fmt(p.alpha_shifted), fmt(p.reweighted.value), fmt(p.reweighted.se),
                                   fmt(p.decomposition.value), fmt(p.decomposition.se), fmt(p.direct.value),
                                   fmt(p.direct.se), fmt(report.predicted_slope.value)}));
        emit(g, "d2",
             csv_block("factor,alpha_shifted,reweighted,reweighted_se,decomposition,decomposition_se,direct,direct_se,"
                       "predicted_slope",
                       rows));
      } else if (diag_suite == "d3") {
        const auto [env, ch] = build_env(g, dg_env);
        const double gamma = env.alpha;
        if (dg_eta.empty()) dg_eta = {gamma / 2, gamma / 10, gamma / 100};
        const auto table = diagnostic_d3_routing(env, WorldSign::plus, ch, make_flagger(dg_tau, dg_phi), dg_eta, gamma,
                                                 std::min<std::size_t>(dg_trials, 1000), rng);
        std::vector<std::string> rows;
        for (const auto& r : table)
          rows.push_back(join_row({fmt(env.alpha), fmt(ch.epsilon), fmt(gamma), fmt(r.eta), std::to_string(r.T),
                                   fmt(r.overlay_q), fmt(r.noisy_q), fmt(r.predicted_draws), fmt(r.summary.draws.value),
                                   fmt(r.summary.draws.se), fmt(r.summary.error.value), fmt(r.summary.error.se)}));
        emit(g, "d3",
             csv_block("alpha,epsilon,gamma,eta,T,overlay_q,noisy_q,predicted_draws,draws,draws_se,error,error_se", rows));
      } else if (diag_suite == "estimate") {
        const auto [env, ch] = build_env(g, dg_env);
        std::optional<FlaggerCorrection> rates;
        if (!(dg_tau == 1.0 && dg_phi == 0.0)) rates = FlaggerCorrection{dg_tau, dg_phi};
        std::vector<std::string> rows;
        for (auto size : dg_audit) {
          const auto r = estimate_parameters(env, WorldSign::plus, ch, make_flagger(dg_tau, dg_phi), rates, size, size,
                                             dg_ngrid, rng);
          const auto sz = std::to_string(size);
          rows.push_back(join_row({sz, "alpha_hat", "", fmt(r.alpha_hat.value), fmt(r.alpha_hat.se)}));
          rows.push_back(join_row({sz, "epsilon_hat", "", fmt(r.epsilon_hat.value), fmt(r.epsilon_hat.se)}));
          rows.push_back(join_row({sz, "gamma_hat", "", fmt(r.gamma_hat.value), fmt(r.gamma_hat.se)}));
          for (const auto& p : r.lower_bound)
            rows.push_back(join_row({sz, "lower_bound", std::to_string(p.n), fmt(p.bound), ""}));
        }
        emit(g, "estimate", csv_block("audit_size,quantity,n,value,se", rows));
      } else if (diag_suite == "tri") {
        std::vector<std::string> rows;
        for (std::size_t i = 0; i < dg_instances; ++i) {
          auto inst_rng = RandomStream::substream(g.seed, i);
          const auto mu = random_tradeoff_instance(dg_atoms, 3, 3, inst_rng);
          for (std::size_t j = 0; j <= 3; ++j) {
            std::vector<int> pi;
            std::string label;
            if (j < 3) {
              pi = objective_optimal_policy(mu, j + 1, 3);
              label = "pi" + std::to_string(j + 1);
            } else {
              for (std::size_t a = 0; a < mu.size(); ++a) pi.push_back(static_cast<int>(inst_rng.uniform() * 3) % 3);
              label = "random";
            }
            const auto c = multiobjective_gap_check(mu, 3, 3, pi);
            rows.push_back(join_row({std::to_string(i), label, fmt(c.lhs), fmt(c.rhs), fmt(c.rhs_general),
                                     std::to_string(c.k), c.lhs >= c.rhs_general - 1e-12 ? "1" : "0"}));
          }
        }
        emit(g, "tri", csv_block("instance,policy,lhs,rhs,rhs_general,k,holds", rows));
      } else if (diag_suite == "divergence") {
        if (dg_measure.empty()) throw std::invalid_argument("--measure is required for the divergence suite");
        const auto mu = load_measure(dg_measure);
        const auto report = proxy_true_divergence(mu, mu.attribute("s_hat"), mu.attribute("r_hat"), mu.attribute("r_w"),
                                                  dg_lambda);
        std::vector<std::string> rows;
        for (const auto& p : report.points)
          rows.push_back(join_row({fmt(p.lambda), fmt(p.delta_pv), fmt(p.d_delta), fmt(p.covariance)}));
        emit(g, "divergence", csv_block("lambda,delta_pv,d_delta,covariance", rows));
      }
    } else if (*suite_cmd) {
      runner::ExperimentConfig cfg;
      if (!g.config_path.empty()) cfg = runner::experiment_config_from(Config::load(g.config_path));
      if (app.count("--seed") > 0) cfg.master_seed = g.seed;
      if (g.dry_run) {
        std::cout << "planned cells: " << runner::planned_cells(cfg) << "\n";
        std::cout << "suites: " << cfg.suites.size() << "\n";
        return 0;
      }
      const std::string out = runner::resolve_output_dir(g.out.empty() ? cfg.output_dir : g.out);
      const auto summary = runner::run_suite(cfg, out);
      std::cerr << "cells " << summary.cells << ", failures " << summary.failures << ", files "
                << summary.files.size() << " in " << out << "\n";
      return summary.exit_code;
    } else if (*overlay_cmd) {
      const auto table = runner::read_csv_file(ov_results);
      const auto overlay = runner::emit_overlay(table, runner::parse_overlay_kind(ov_kind));
      std::ostringstream os;
      runner::write_csv(os, overlay);
      emit(g, "overlay_" + ov_kind, os.str());
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
