#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "rcsl_lab/baselines.hpp"
#include "rcsl_lab/conditionals.hpp"
#include "rcsl_lab/rcsl.hpp"

#include <json.hpp>

namespace rcsl_lab {

using ordered_json = nlohmann::ordered_json;

constexpr double kSlackTolerance = -1e-9;
constexpr double kInf = std::numeric_limits<double>::infinity();

// All constants of one theorem instance: both sides of the inequality, the
// slack, and which assumption failed if any. Infinite constants make the right
// side infinite, so the bound holds vacuously and the report says why.
struct BoundReport {
  std::string bound_id;
  ordered_json constants;
  double lhs{0.0};
  double rhs{0.0};
  double slack{0.0};
  bool holds{false};
  std::string assumption_failure;  // empty when all assumptions hold
  ordered_json diagnostics;

  bool applicable() const { return assumption_failure.empty(); }

  void finish() {
    slack = rhs - lhs;
    holds = slack >= kSlackTolerance || std::isinf(rhs);
  }

  ordered_json to_json() const {
    ordered_json j;
    j["bound_id"] = bound_id;
    j["constants"] = constants;
    j["lhs"] = lhs;
    j["rhs"] = rhs;
    j["slack"] = std::isinf(slack) ? ordered_json("inf") : ordered_json(slack);
    j["holds"] = holds;
    j["applicable"] = applicable();
    j["assumption_failure"] = assumption_failure;
    j["diagnostics"] = diagnostics;
    return j;
  }
};

// Exact coverage and occupancy-mismatch constants for a conditioning function.
// alpha over initial states feeds the alignment bound; alpha over every
// (timestep, pair, target) the idealized policy visits feeds the reduction
// bound, as does C_f. Unreachable-under-data pairs count as zero coverage.
struct CoverageConstants {
  double alpha_f_initial{1.0};
  double alpha_f_all{1.0};       // min over everything pi_f visits
  double alpha_f_weighted{1.0};  // d_{pi_f}-weighted mean coverage, diagnostics
  double C_f{0.0};
  double J_pif{0.0};
  double Ef{0.0};
  double fallback_mass{0.0};
  int argmin_initial_state{-1};
  ordered_json argmin_all;   // {t, state, cum_units, target_units}
  ordered_json argmax_ratio; // {state, cum_units}
};

inline CoverageConstants coverage_constants(ExactRcsl& r) {
  auto& proc = *r.process;
  const int H = proc.horizon();
  CoverageConstants cc;

  const auto mu = proc.mixture().initial_marginal(proc.base().num_states);
  for (int s1 = 0; s1 < proc.base().num_states; ++s1) {
    if (mu[s1] <= 0.0) continue;
    const int pair = proc.aug().index_of(s1, 0);
    const auto target = r.f.initial_target(s1);
    const double p =
        target == kNoTarget ? 0.0 : proc.data_p_eq(1, pair, target);
    if (cc.argmin_initial_state < 0 || p < cc.alpha_f_initial) {
      cc.alpha_f_initial = p;
      cc.argmin_initial_state = s1;
    }
  }

  const auto ev = evaluate_conditioned(proc, r.policy, r.f, RolloutFallback::Behavior);
  cc.J_pif = ev.J;
  cc.Ef = expected_initial_target(proc, r.f);
  cc.fallback_mass = ev.fallback_mass;

  std::vector<double> d_pif(proc.aug().mdp.num_states, 0.0);
  bool first = true;
  cc.alpha_f_weighted = 0.0;
  for (int t = 1; t <= H; ++t) {
    for (const auto& [key, w] : ev.levels[t - 1]) {
      if (w <= 0.0) continue;
      const int pair = ConditionedEval::unpack_pair(key);
      const auto rem = ConditionedEval::unpack_rem(key);
      d_pif[pair] += w / H;
      double p = 0.0;
      if (rem != kNoTarget && proc.data_occupancy(t, pair) > 0.0)
        p = proc.data_p_eq(t, pair, rem);
      cc.alpha_f_weighted += w / H * p;
      if (first || p < cc.alpha_f_all) {
        cc.alpha_f_all = p;
        cc.argmin_all = {{"t", t},
                         {"state", proc.aug().base_state[pair]},
                         {"cum_units", proc.aug().cum_units[pair]},
                         {"target_units", rem == kNoTarget ? -1 : rem}};
        first = false;
      }
    }
  }

  cc.C_f = 0.0;
  for (int pair = 0; pair < proc.aug().mdp.num_states; ++pair) {
    if (d_pif[pair] <= 0.0) continue;
    const double db = proc.data_marginal(pair);
    const double ratio = db > 0.0 ? d_pif[pair] / db : kInf;
    if (ratio > cc.C_f) {
      cc.C_f = ratio;
      cc.argmax_ratio = {{"state", proc.aug().base_state[pair]},
                         {"cum_units", proc.aug().cum_units[pair]}};
    }
  }
  return cc;
}

inline CoverageConstants coverage_constants(const Mdp& m, const DataMixture& mix,
                                            ConditioningFunction f) {
  auto r = exact_rcsl(m, mix, std::move(f));
  return coverage_constants(r);
}

// E[f(s1)] - J(pi_f) <= eps (1/alpha_f + 2) H^2, with alpha_f over initial states.
inline BoundReport check_theorem1(const Mdp& m, const DataMixture& mix,
                                  const ConditioningFunction& f) {
  BoundReport rep;
  rep.bound_id = "thm1";
  const double eps = extract_skeleton(m).epsilon;
  const int H = m.horizon;

  {
    DataProcess probe(m, mix);
    if (const auto bad = validate_conditioning(f, m, probe.aug()); !bad.empty()) {
      rep.assumption_failure = "conditioning function inconsistent: " + bad.front();
      rep.rhs = kInf;
      rep.finish();
      return rep;
    }
  }

  auto r = exact_rcsl(m, mix, f);
  const auto cc = coverage_constants(r);
  rep.constants = {{"eps", eps},
                   {"alpha_f_initial", cc.alpha_f_initial},
                   {"H", H},
                   {"Ef", cc.Ef},
                   {"J_pif", cc.J_pif}};
  rep.diagnostics = {{"argmin_initial_state", cc.argmin_initial_state},
                     {"fallback_mass", cc.fallback_mass}};
  rep.lhs = cc.Ef - cc.J_pif;
  if (cc.alpha_f_initial <= 0.0) {
    rep.assumption_failure = "return coverage: alpha_f = 0 at an initial state";
    rep.rhs = kInf;
  } else {
    rep.rhs = eps * (1.0 / cc.alpha_f_initial + 2.0) * H * H;
  }
  rep.finish();
  return rep;
}

// J(pi*) - J(pi_f) <= eps (1/alpha_f + 3) H^2 with the skeleton-optimal
// conditioning function.
inline BoundReport check_corollary1(const Mdp& m, const DataMixture& mix) {
  BoundReport rep;
  rep.bound_id = "cor1.1";
  const double eps = extract_skeleton(m).epsilon;
  const int H = m.horizon;
  auto r = exact_rcsl(m, mix, optimal_conditioning(m));
  const auto cc = coverage_constants(r);

  Mdp with_mu = m;
  with_mu.initial_dist = mix.initial_marginal(m.num_states);
  const double j_star = optimal_value(with_mu);

  rep.constants = {{"eps", eps},
                   {"alpha_f_initial", cc.alpha_f_initial},
                   {"H", H},
                   {"J_star", j_star},
                   {"J_pif", cc.J_pif}};
  rep.lhs = j_star - cc.J_pif;
  if (cc.alpha_f_initial <= 0.0) {
    rep.assumption_failure = "return coverage: alpha_f = 0 at an initial state";
    rep.rhs = kInf;
  } else {
    rep.rhs = eps * (1.0 / cc.alpha_f_initial + 3.0) * H * H;
  }
  rep.finish();
  return rep;
}

// Exact-optimality corollary: deterministic MDP, optimal-value conditioning,
// positive coverage imply J(pi_f) = J(pi*).
inline BoundReport check_corollary12(const Mdp& m, const DataMixture& mix) {
  BoundReport rep;
  rep.bound_id = "cor1.2";
  const double eps = extract_skeleton(m).epsilon;
  if (eps > 0.0) {
    rep.assumption_failure = "near determinism: eps > 0";
    rep.rhs = kInf;
    rep.finish();
    return rep;
  }
  auto r = exact_rcsl(m, mix, optimal_conditioning(m));
  const auto cc = coverage_constants(r);
  Mdp with_mu = m;
  with_mu.initial_dist = mix.initial_marginal(m.num_states);
  const double j_star = optimal_value(with_mu);
  rep.constants = {{"eps", eps},
                   {"alpha_f_initial", cc.alpha_f_initial},
                   {"J_star", j_star},
                   {"J_pif", cc.J_pif}};
  if (cc.alpha_f_initial <= 0.0) {
    rep.assumption_failure = "return coverage: alpha_f = 0 at an initial state";
    rep.rhs = kInf;
    rep.finish();
    return rep;
  }
  rep.lhs = std::abs(j_star - cc.J_pif);
  rep.rhs = 0.0;
  rep.finish();
  return rep;
}

// J(pi_f) - J(pihat_f) <= (C_f / alpha_f) H^2 sqrt(2 L(pihat)).
inline BoundReport check_theorem2(const Mdp& m, const DataMixture& mix,
                                  const ConditioningFunction& f,
                                  const ConditionedPolicy& pihat,
                                  const std::string& bound_id = "thm2") {
  BoundReport rep;
  rep.bound_id = bound_id;
  const int H = m.horizon;
  auto r = exact_rcsl(m, mix, f);
  const auto cc = coverage_constants(r);
  const double L = expected_kl_loss(*r.process, pihat);
  const double j_hat = evaluate_conditioned(*r.process, pihat, f,
                                            RolloutFallback::Behavior)
                           .J;
  rep.constants = {{"alpha_f_all", cc.alpha_f_all},
                   {"alpha_f_weighted", cc.alpha_f_weighted},
                   {"C_f", std::isinf(cc.C_f) ? ordered_json("inf") : ordered_json(cc.C_f)},
                   {"H", H},
                   {"L", std::isinf(L) ? ordered_json("inf") : ordered_json(L)},
                   {"J_pif", cc.J_pif},
                   {"J_pihat", j_hat}};
  rep.diagnostics = {{"argmin_coverage", cc.argmin_all},
                     {"argmax_occupancy_ratio", cc.argmax_ratio},
                     {"fallback_mass", cc.fallback_mass}};
  rep.lhs = cc.J_pif - j_hat;
  if (cc.alpha_f_all <= 0.0) {
    rep.assumption_failure = "return coverage: alpha_f = 0 on a visited state";
    rep.rhs = kInf;
  } else if (std::isinf(cc.C_f)) {
    rep.assumption_failure = "occupancy mismatch: C_f infinite";
    rep.rhs = kInf;
  } else {
    rep.rhs = cc.C_f / cc.alpha_f_all * H * H * std::sqrt(2.0 * L);
  }
  rep.finish();
  return rep;
}

// ||d_pi - d_pi'||_1 <= 2H E_{s ~ d_pi}[ TV(pi(.|s) || pi'(.|s)) ].
inline BoundReport check_lemma1(const Mdp& m, const MarkovPolicy& pi,
                                const MarkovPolicy& pi2) {
  BoundReport rep;
  rep.bound_id = "lemma1";
  const int H = m.horizon;
  const auto prof1 = occupancies(m, pi);
  const auto prof2 = occupancies(m, pi2);

  rep.lhs = 0.0;
  for (int s = 0; s < m.num_states; ++s)
    rep.lhs += std::abs(prof1.averaged[s] - prof2.averaged[s]);

  double expected_tv = 0.0;  // E_{s ~ d_pi}[TV], with d_pi the averaged marginal
  for (int t = 1; t <= H; ++t) {
    for (int s = 0; s < m.num_states; ++s) {
      const double w = prof1.per_step[t - 1][s];
      if (w <= 0.0) continue;
      const auto r1 = pi.row(t, s);
      const auto r2 = pi2.row(t, s);
      double tv = 0.0;
      for (int a = 0; a < m.num_actions; ++a) tv += std::abs(r1[a] - r2[a]);
      expected_tv += w / H * 0.5 * tv;
    }
  }
  rep.rhs = 2.0 * H * expected_tv;
  rep.constants = {{"H", H}, {"expected_tv", expected_tv}};
  rep.finish();
  return rep;
}

// Top-%BC alignment and reduction bounds. Returns {thm3 report, thm4 report};
// the thm4 report is present only when a fitted policy is supplied.
struct TopBcCheck {
  BoundReport thm3;
  BoundReport thm4;
  bool has_thm4{false};
  QuantileSpec spec;
};

inline TopBcCheck check_topbc_bounds(const Mdp& m, const DataMixture& mix,
                                     double rho,
                                     const EmpiricalBc* pihat = nullptr) {
  TopBcCheck out;
  const double eps = extract_skeleton(m).epsilon;
  const int H = m.horizon;
  auto top = exact_top_bc(m, mix, rho);
  out.spec = top.spec;
  auto& proc = *top.process;
  const auto& am = proc.aug();
  const auto lifted_mu = am.lift_initial(mix.initial_marginal(m.num_states));
  const auto prof = occupancies_fn(am.mdp, as_decision_fn(top.policy), lifted_mu);
  const double j_rho = evaluate_fn(am.mdp, as_decision_fn(top.policy), lifted_mu);
  const double g_rho_value = m.reward_quantum.scale(top.spec.g_rho_units);

  out.thm3.bound_id = "thm3-topbc";
  out.thm3.constants = {{"eps", eps},
                        {"rho", rho},
                        {"g_rho_units", top.spec.g_rho_units},
                        {"alpha_rho", top.spec.alpha_rho},
                        {"H", H},
                        {"J_pirho", j_rho}};
  out.thm3.diagnostics = {{"unsupported_pairs", top.spec.num_unsupported_pairs}};
  out.thm3.lhs = g_rho_value - j_rho;
  if (top.spec.alpha_rho <= 0.0) {
    out.thm3.assumption_failure = "tail coverage: alpha_rho = 0 on a visited state";
    out.thm3.rhs = kInf;
  } else {
    out.thm3.rhs = eps * (1.0 / top.spec.alpha_rho + 2.0) * H * H;
  }
  out.thm3.finish();

  if (pihat == nullptr) return out;
  out.has_thm4 = true;

  // Tail-conditioned state distribution q(t, pair) = P_data(pair at t | g >= g_rho).
  const double p_tail_total = proc.data_return_dist().tail_units(top.spec.g_rho_units);
  double c_rho = 0.0;
  double loss = 0.0;
  bool tail_defined = p_tail_total > 0.0;
  ordered_json argmax;
  if (tail_defined) {
    std::vector<double> d_rho(am.mdp.num_states, 0.0);
    std::vector<double> q(am.mdp.num_states, 0.0);
    std::vector<double> dist(m.num_actions);
    for (int t = 1; t <= H; ++t) {
      for (int pair = 0; pair < am.mdp.num_states; ++pair) {
        d_rho[pair] += prof.per_step[t - 1][pair] / H;
        const double occ = proc.data_occupancy(t, pair);
        if (occ <= 0.0) continue;
        const double tail =
            proc.data_p_tail(t, pair, top.spec.g_rho_units - am.cum_units[pair]);
        if (tail <= 0.0) continue;
        const double w = occ * tail / (H * p_tail_total);
        q[pair] += w;
        const auto pi_row = top.policy.row(t, pair);
        const auto hat = pihat->query(t, am.base_state[pair], am.cum_units[pair]);
        double kl = 0.0;
        for (int a = 0; a < m.num_actions; ++a) {
          if (pi_row[a] <= 0.0) continue;
          if (hat[a] <= 0.0) {
            kl = kInf;
            break;
          }
          kl += pi_row[a] * std::log(pi_row[a] / hat[a]);
        }
        loss += std::isinf(kl) ? kInf : w * kl;
      }
    }
    for (int pair = 0; pair < am.mdp.num_states; ++pair) {
      if (d_rho[pair] <= 0.0) continue;
      const double ratio = q[pair] > 0.0 ? d_rho[pair] / q[pair] : kInf;
      if (ratio > c_rho) {
        c_rho = ratio;
        argmax = {{"state", am.base_state[pair]}, {"cum_units", am.cum_units[pair]}};
      }
    }
  }

  const double j_hat = evaluate_fn(
      am.mdp,
      [&](int t, int pair, std::span<double> pi_out) {
        const auto hat = pihat->query(t, am.base_state[pair], am.cum_units[pair]);
        std::copy(hat.begin(), hat.end(), pi_out.begin());
      },
      lifted_mu);

  out.thm4.bound_id = "thm4-topbc";
  out.thm4.constants = {
      {"rho", rho},
      {"C_rho", std::isinf(c_rho) ? ordered_json("inf") : ordered_json(c_rho)},
      {"H", H},
      {"L_rho", std::isinf(loss) ? ordered_json("inf") : ordered_json(loss)},
      {"J_pirho", j_rho},
      {"J_pihat", j_hat}};
  out.thm4.diagnostics = {{"argmax_occupancy_ratio", argmax}};
  out.thm4.lhs = j_rho - j_hat;
  if (!tail_defined) {
    out.thm4.assumption_failure = "tail event has zero probability";
    out.thm4.rhs = kInf;
  } else if (std::isinf(c_rho)) {
    out.thm4.assumption_failure = "occupancy mismatch: C_rho infinite";
    out.thm4.rhs = kInf;
  } else {
    out.thm4.rhs = c_rho * H * H * std::sqrt(2.0 * loss);
  }
  out.thm4.finish();
  return out;
}

}  // namespace rcsl_lab
