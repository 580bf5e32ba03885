#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rcsl_lab/bounds.hpp"
#include "rcsl_lab/data_io.hpp"
#include "rcsl_lab/parallel.hpp"
#include "rcsl_lab/rcsl.hpp"
#include "rcsl_lab/rng.hpp"

namespace rcsl_lab {

// Randomized near-deterministic instance families for certification runs.
//
// The fully random family perturbs both rewards and transitions; on most such
// instances the return-coverage assumptions of the reduction bounds genuinely
// fail at some visited state (a reward slip makes the remaining target
// unreachable) and the checks report not-applicable. The coverage-friendly
// family keeps rewards deterministic with both a 0- and a 1-reward action at
// every state and puts the noise in transitions only, so every remaining
// target stays achievable and the reduction bounds stay applicable. The suite
// alternates between the two.
struct RandomInstanceConfig {
  int min_states{2}, max_states{8};
  int min_actions{2}, max_actions{4};
  int min_horizon{2}, max_horizon{10};
  double max_eps{0.05};
  bool deterministic_only{false};  // forces eps = 0 (for the exact corollary)
  bool alternate_friendly{true};   // even indices use the friendly family
};

struct CertifyInstance {
  Mdp mdp;
  DataMixture mixture;
  MarkovPolicy pi_a;  // extra random policies for the occupancy lemma
  MarkovPolicy pi_b;
  double rho{0.25};
  std::uint64_t seed{0};
  // Conditioning for thm1/thm2-style checks; skeleton-optimal when absent.
  bool has_f{false};
  ConditioningFunction f;

  ConditioningFunction conditioning() const {
    return has_f ? f : optimal_conditioning(mdp);
  }
};

namespace certify_detail {

inline MarkovPolicy random_policy(SplitMix64& rng, int S, int A, double min_prob) {
  std::vector<double> rows(static_cast<std::size_t>(S) * A);
  for (int s = 0; s < S; ++s) {
    double sum = 0.0;
    for (int a = 0; a < A; ++a) {
      const double v = min_prob + rng.next_unit();
      rows[static_cast<std::size_t>(s) * A + a] = v;
      sum += v;
    }
    for (int a = 0; a < A; ++a) rows[static_cast<std::size_t>(s) * A + a] /= sum;
  }
  return MarkovPolicy::stationary_rows(S, A, std::move(rows));
}

}  // namespace certify_detail

// Instance `index` of a master seed: a random deterministic skeleton perturbed
// by per-(s,a) noise of total mass <= max_eps, with a full-support behavior so
// the skeleton-optimal return keeps positive coverage.
inline CertifyInstance random_instance(const RandomInstanceConfig& cfg,
                                       std::uint64_t master, std::uint64_t index) {
  CertifyInstance inst;
  inst.seed = derive_stream_seed(master, index);
  SplitMix64 rng(inst.seed);

  const int S = cfg.min_states +
                static_cast<int>(rng.next() % (cfg.max_states - cfg.min_states + 1));
  const int A = cfg.min_actions +
                static_cast<int>(rng.next() % (cfg.max_actions - cfg.min_actions + 1));
  const int H = cfg.min_horizon +
                static_cast<int>(rng.next() % (cfg.max_horizon - cfg.min_horizon + 1));

  Mdp& m = inst.mdp;
  m.num_states = S;
  m.num_actions = A;
  m.horizon = H;
  m.reward_quantum = Rational(1, 2);  // reward values in {0, 0.5, 1}
  m.initial_dist.assign(S, 0.0);
  const int n_init = 1 + static_cast<int>(rng.next() % std::min(S, 3));
  for (int i = 0; i < n_init; ++i) m.initial_dist[rng.next() % S] += 1.0;
  {
    double sum = 0.0;
    for (double v : m.initial_dist) sum += v;
    for (double& v : m.initial_dist) v /= sum;
  }

  const bool friendly =
      cfg.alternate_friendly && !cfg.deterministic_only && index % 2 == 0;
  if (friendly) m.reward_quantum = Rational(1, 1);

  m.kernel.resize(static_cast<std::size_t>(S) * A);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      const int det_next = static_cast<int>(rng.next() % S);
      std::int64_t det_units = static_cast<std::int64_t>(rng.next() % 3);
      if (friendly) det_units = a < 2 ? a : static_cast<std::int64_t>(rng.next() % 2);
      const double eps_sa =
          cfg.deterministic_only ? 0.0 : rng.next_unit() * cfg.max_eps;
      std::vector<std::pair<int, double>> ts{{det_next, 1.0}};
      std::vector<std::pair<std::int64_t, double>> rs{{det_units, 1.0}};
      if (eps_sa > 0.0) {
        // Split the deviation between a stray transition and a stray reward so
        // the joint mode stays at the skeleton outcome. The friendly family
        // keeps all the noise in the transitions.
        const double d1 =
            friendly ? eps_sa : eps_sa * rng.next_unit() * 0.5;
        const double d2 =
            friendly ? 0.0 : eps_sa * 0.5 - d1 + eps_sa * 0.5 * rng.next_unit();
        const int stray_next = static_cast<int>(rng.next() % S);
        const std::int64_t stray_units = static_cast<std::int64_t>(rng.next() % 3);
        if (stray_next != det_next && d1 > 0.0)
          ts = {{det_next, 1.0 - d1}, {stray_next, d1}};
        if (!friendly && stray_units != det_units && d2 > 0.0)
          rs = {{det_units, 1.0 - d2}, {stray_units, d2}};
      }
      m.kernel[m.sa(s, a)] = product_kernel(ts, rs);
    }
  }

  inst.mixture =
      DataMixture::single(m, certify_detail::random_policy(rng, S, A, 0.15));
  inst.pi_a = certify_detail::random_policy(rng, S, A, 0.0);
  inst.pi_b = certify_detail::random_policy(rng, S, A, 0.0);
  const double rho_grid[5] = {0.05, 0.1, 0.25, 0.5, 0.9};
  inst.rho = rho_grid[rng.next() % 5];
  return inst;
}

// One certification record: every applicable bound must hold.
struct CertifyRecord {
  std::uint64_t index{0};
  std::vector<BoundReport> reports;

  bool violated() const {
    for (const auto& r : reports)
      if (r.applicable() && !r.holds) return true;
    return false;
  }
};

struct CertifySummary {
  std::size_t instances{0};
  std::size_t violations{0};
  std::size_t not_applicable{0};
  std::size_t checks{0};
};

// Bound ids: thm1, cor1.1, cor1.2, thm2, cor2-reduction, lemma1, thm3-topbc,
// thm4-topbc, or "all".
inline CertifyRecord certify_instance(const CertifyInstance& inst,
                                      const std::string& bound_id,
                                      std::int64_t fit_n = 1000,
                                      double fit_smoothing = 1.0) {
  CertifyRecord rec;
  const auto want = [&](const std::string& id) {
    return bound_id == "all" || bound_id == id;
  };

  if (want("thm1")) {
    rec.reports.push_back(
        check_theorem1(inst.mdp, inst.mixture, inst.conditioning()));
  }
  if (want("cor1.1")) rec.reports.push_back(check_corollary1(inst.mdp, inst.mixture));
  if (want("cor1.2")) rec.reports.push_back(check_corollary12(inst.mdp, inst.mixture));

  if (want("thm2") || want("cor2-reduction")) {
    const auto f = inst.conditioning();
    const auto data =
        generate(inst.mdp, inst.mixture, fit_n, mix64(inst.seed)).trajectories;
    const auto fit = fit_empirical_rcsl(data, fit_smoothing, inst.mdp.num_states,
                                        inst.mdp.num_actions);
    if (want("thm2"))
      rec.reports.push_back(
          check_theorem2(inst.mdp, inst.mixture, f, fit.policy, "thm2"));
    if (want("cor2-reduction"))
      rec.reports.push_back(check_theorem2(inst.mdp, inst.mixture, f, fit.policy,
                                           "cor2-reduction"));
  }

  if (want("lemma1"))
    rec.reports.push_back(check_lemma1(inst.mdp, inst.pi_a, inst.pi_b));

  if (want("thm3-topbc") || want("thm4-topbc")) {
    if (want("thm4-topbc")) {
      const auto data =
          generate(inst.mdp, inst.mixture, fit_n, mix64(inst.seed ^ 0xABCD)).trajectories;
      const auto bc = fit_top_bc(data, inst.rho, fit_smoothing,
                                 inst.mdp.num_states, inst.mdp.num_actions);
      auto out = check_topbc_bounds(inst.mdp, inst.mixture, inst.rho, &bc);
      if (want("thm3-topbc")) rec.reports.push_back(out.thm3);
      rec.reports.push_back(out.thm4);
    } else {
      auto out = check_topbc_bounds(inst.mdp, inst.mixture, inst.rho, nullptr);
      rec.reports.push_back(out.thm3);
    }
  }
  return rec;
}

// Runs the randomized suite; records come back ordered by instance index
// regardless of the worker pool. A violation anywhere is a failed run.
inline std::vector<CertifyRecord> certify_random_suite(
    const std::string& bound_id, std::size_t n, std::uint64_t master_seed,
    RandomInstanceConfig cfg = {}, std::int64_t fit_n = 1000,
    double fit_smoothing = 1.0, int workers = 0) {
  // the exact-optimality corollary only ever applies to deterministic MDPs
  if (bound_id == "cor1.2") cfg.deterministic_only = true;
  std::vector<CertifyRecord> records(n);
  parallel_for(
      n,
      [&](std::size_t i) {
        const auto inst = random_instance(cfg, master_seed, i);
        records[i] = certify_instance(inst, bound_id, fit_n, fit_smoothing);
        records[i].index = i;
      },
      workers);
  return records;
}

inline CertifySummary summarize(const std::vector<CertifyRecord>& records) {
  CertifySummary s;
  s.instances = records.size();
  for (const auto& rec : records) {
    s.violations += rec.violated() ? 1 : 0;
    for (const auto& r : rec.reports) {
      ++s.checks;
      if (!r.applicable()) ++s.not_applicable;
    }
  }
  return s;
}

}  // namespace rcsl_lab
