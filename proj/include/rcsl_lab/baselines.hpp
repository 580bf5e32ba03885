#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <unordered_map>
#include <vector>

#include "rcsl_lab/conditionals.hpp"
#include "rcsl_lab/rcsl.hpp"

namespace rcsl_lab {

// Quantile data for top-%BC: g_rho is the 1-rho quantile of the trajectory
// return distribution (largest grid value whose upper tail still carries mass
// >= rho), alpha_rho the worst-case per-state tail coverage over pairs the
// idealized tail policy actually visits.
struct QuantileSpec {
  double rho{1.0};
  std::int64_t g_rho_units{0};
  double alpha_rho{0.0};
  int num_unsupported_pairs{0};  // pairs where the tail conditional fell back
};

inline std::int64_t return_quantile_units(const ReturnDistribution& rd, double rho) {
  std::int64_t g = 0;
  double tail = 0.0;
  for (std::int64_t u = static_cast<std::int64_t>(rd.p.size()) - 1; u >= 0; --u) {
    tail += rd.p[static_cast<std::size_t>(u)];
    if (tail >= rho - 1e-12) {
      g = u;
      break;
    }
  }
  return g;
}

// The idealized top-%BC policy pi_rho(a|s) = P_data(a | s, g >= g_rho) over
// augmented pairs, with the behavior marginal filled in where the tail event
// has zero probability. Also returns the populated QuantileSpec.
struct ExactTopBc {
  std::shared_ptr<DataProcess> process;
  MarkovPolicy policy;  // per-timestep rows over pairs, completion baked in
  QuantileSpec spec;
};

inline ExactTopBc exact_top_bc(const Mdp& m, const DataMixture& mix, double rho) {
  if (rho <= 0.0 || rho > 1.0)
    throw std::invalid_argument("exact_top_bc: rho must be in (0, 1]");
  ExactTopBc r;
  r.process = std::make_shared<DataProcess>(m, mix);
  auto& proc = *r.process;
  const Mdp& amdp = proc.aug().mdp;
  const int H = amdp.horizon;
  const int A = amdp.num_actions;
  const int P = amdp.num_states;

  r.spec.rho = rho;
  r.spec.g_rho_units = return_quantile_units(proc.data_return_dist(), rho);

  std::vector<double> rows(static_cast<std::size_t>(H) * P * A, 0.0);
  std::vector<double> dist(A);
  for (int t = 1; t <= H; ++t) {
    for (int pair = 0; pair < P; ++pair) {
      const std::size_t base = (static_cast<std::size_t>(t - 1) * P + pair) * A;
      const std::int64_t rem = r.spec.g_rho_units - proc.aug().cum_units[pair];
      bool ok = false;
      if (proc.data_occupancy(t, pair) > 0.0) {
        ok = proc.tail_conditional(t, pair, rem, dist);
        if (!ok) {
          ++r.spec.num_unsupported_pairs;
          proc.action_marginal(t, pair, dist);
          ok = true;
        }
      }
      if (!ok) {
        std::fill(dist.begin(), dist.end(), 1.0 / A);
      }
      std::copy(dist.begin(), dist.end(), rows.begin() + base);
    }
  }
  r.policy = MarkovPolicy::per_timestep(P, A, H, std::move(rows));

  // Coverage over the pairs pi_rho itself visits.
  const auto prof = occupancies_fn(
      amdp, as_decision_fn(r.policy),
      proc.aug().lift_initial(mix.initial_marginal(m.num_states)));
  double alpha = 1.0;
  for (int t = 1; t <= H; ++t) {
    for (int pair = 0; pair < P; ++pair) {
      if (prof.per_step[t - 1][pair] <= 0.0) continue;
      double tail = 0.0;
      if (proc.data_occupancy(t, pair) > 0.0)
        tail = proc.data_p_tail(t, pair,
                                r.spec.g_rho_units - proc.aug().cum_units[pair]);
      alpha = std::min(alpha, tail);
    }
  }
  r.spec.alpha_rho = alpha;
  return r;
}

inline ExactTopBc exact_top_bc(const Mdp& m, const MarkovPolicy& behavior,
                               double rho) {
  return exact_top_bc(m, DataMixture::single(m, behavior), rho);
}

// ----- empirical BC / top-%BC -----

// Count-based behavior cloning over (timestep, state, cumulative units) keys
// with additive smoothing; unseen keys fall back to the pooled state marginal,
// then uniform.
class EmpiricalBc {
 public:
  EmpiricalBc(int num_states, int num_actions, double smoothing)
      : num_states_(num_states), num_actions_(num_actions), smoothing_(smoothing),
        pooled_sa_(static_cast<std::size_t>(num_states) * num_actions, 0),
        pooled_s_(num_states, 0) {}

  void observe(const Trajectory& tau) {
    std::int64_t c = 0;
    for (int t = 1; t <= static_cast<int>(tau.states.size()); ++t) {
      const int s = tau.states[t - 1];
      const int a = tau.actions[t - 1];
      cell_[cell_key(t, s, c, a)] += 1;
      group_[group_key(t, s, c)] += 1;
      pooled_sa_[static_cast<std::size_t>(s) * num_actions_ + a] += 1;
      pooled_s_[s] += 1;
      c += tau.reward_units[t - 1];
    }
  }

  std::vector<double> query(int t, int s, std::int64_t c) const {
    std::vector<double> out(num_actions_, 0.0);
    const auto git = group_.find(group_key(t, s, c));
    if (git != group_.end()) {
      const double den = git->second + smoothing_ * num_actions_;
      for (int a = 0; a < num_actions_; ++a) {
        const auto it = cell_.find(cell_key(t, s, c, a));
        out[a] = ((it == cell_.end() ? 0.0 : it->second) + smoothing_) / den;
      }
      return out;
    }
    if (pooled_s_[s] > 0) {
      for (int a = 0; a < num_actions_; ++a)
        out[a] = static_cast<double>(
                     pooled_sa_[static_cast<std::size_t>(s) * num_actions_ + a]) /
                 pooled_s_[s];
      return out;
    }
    std::fill(out.begin(), out.end(), 1.0 / num_actions_);
    return out;
  }

 private:
  static std::uint64_t group_key(int t, int s, std::int64_t c) {
    return (static_cast<std::uint64_t>(t) << 56) |
           (static_cast<std::uint64_t>(static_cast<std::uint32_t>(s)) << 30) |
           (static_cast<std::uint64_t>(c) << 5);
  }
  static std::uint64_t cell_key(int t, int s, std::int64_t c, int a) {
    return group_key(t, s, c) | static_cast<std::uint64_t>(a);
  }

  int num_states_;
  int num_actions_;
  double smoothing_;
  std::unordered_map<std::uint64_t, std::uint32_t> cell_;
  std::unordered_map<std::uint64_t, std::uint32_t> group_;
  std::vector<std::int64_t> pooled_sa_;
  std::vector<std::int64_t> pooled_s_;
};

// Indices of the top ceil(rho * N) trajectories by (return desc, index asc).
inline std::vector<std::size_t> top_fraction_indices(
    const std::vector<Trajectory>& data, double rho) {
  const auto n = data.size();
  const auto keep =
      static_cast<std::size_t>(std::ceil(rho * static_cast<double>(n)));
  if (keep < 1) throw std::invalid_argument("top fraction keeps no trajectories");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return data[a].total_units() > data[b].total_units();
  });
  idx.resize(std::min(keep, n));
  return idx;
}

inline EmpiricalBc fit_top_bc(const std::vector<Trajectory>& data, double rho,
                              double smoothing, int num_states, int num_actions) {
  if (data.empty()) throw std::invalid_argument("fit_top_bc: empty dataset");
  EmpiricalBc bc(num_states, num_actions, smoothing);
  for (const auto i : top_fraction_indices(data, rho)) bc.observe(data[i]);
  return bc;
}

inline EmpiricalBc fit_bc(const std::vector<Trajectory>& data, double smoothing,
                          int num_states, int num_actions) {
  return fit_top_bc(data, 1.0, smoothing, num_states, num_actions);
}

// ----- certainty-equivalent offline dynamic programming -----

// Count-based MLE model of the transition kernel and mean rewards.
struct EmpiricalModel {
  int num_states{0};
  int num_actions{0};
  std::vector<std::int64_t> n_sa;
  std::vector<double> mean_reward_value;                     // per (s,a)
  std::vector<std::unordered_map<int, double>> transition;   // per (s,a): s' -> p

  std::size_t sa(int s, int a) const {
    return static_cast<std::size_t>(s) * num_actions + a;
  }
};

inline EmpiricalModel fit_model(const std::vector<Trajectory>& data,
                                const Mdp& shape) {
  EmpiricalModel em;
  em.num_states = shape.num_states;
  em.num_actions = shape.num_actions;
  em.n_sa.assign(static_cast<std::size_t>(shape.num_states) * shape.num_actions, 0);
  em.mean_reward_value.assign(em.n_sa.size(), 0.0);
  std::vector<std::unordered_map<int, std::int64_t>> counts(em.n_sa.size());
  std::vector<std::int64_t> reward_units(em.n_sa.size(), 0);
  for (const auto& tau : data) {
    for (std::size_t t = 0; t < tau.states.size(); ++t) {
      const auto k = em.sa(tau.states[t], tau.actions[t]);
      ++em.n_sa[k];
      reward_units[k] += tau.reward_units[t];
      const int next = t + 1 < tau.states.size() ? tau.states[t + 1] : -1;
      if (next >= 0) ++counts[k][next];
    }
  }
  em.transition.resize(em.n_sa.size());
  for (std::size_t k = 0; k < em.n_sa.size(); ++k) {
    if (em.n_sa[k] == 0) continue;
    em.mean_reward_value[k] =
        shape.reward_quantum.scale(reward_units[k]) / em.n_sa[k];
    std::int64_t n_next = 0;
    for (const auto& [s2, n] : counts[k]) n_next += n;
    for (const auto& [s2, n] : counts[k])
      em.transition[k][s2] = static_cast<double>(n) / n_next;
  }
  return em;
}

// Finite-horizon Q-iteration on an empirical model. Unseen (s,a) take the
// pessimistic value floor and never win greedy ties; a state with no seen
// action at all falls back to action 0 at floor value.
inline MarkovPolicy q_iteration(const EmpiricalModel& em, int horizon,
                                double value_floor = 0.0) {
  const int S = em.num_states;
  const int A = em.num_actions;
  std::vector<double> value(S, 0.0);
  std::vector<int> greedy(static_cast<std::size_t>(horizon) * S, 0);
  for (int t = horizon; t >= 1; --t) {
    std::vector<double> next_value(S, value_floor);
    for (int s = 0; s < S; ++s) {
      double best = value_floor;
      int best_a = 0;
      bool any_seen = false;
      for (int a = 0; a < A; ++a) {
        const auto k = em.sa(s, a);
        if (em.n_sa[k] == 0) continue;
        double q = em.mean_reward_value[k];
        for (const auto& [s2, p] : em.transition[k]) q += p * value[s2];
        if (!any_seen || q > best + 1e-15) {
          best = q;
          best_a = a;
        }
        any_seen = true;
      }
      next_value[s] = any_seen ? best : value_floor;
      greedy[static_cast<std::size_t>(t - 1) * S + s] = best_a;
    }
    value.swap(next_value);
  }
  return MarkovPolicy::deterministic(S, A, horizon, greedy);
}

inline MarkovPolicy offline_q_iteration(const std::vector<Trajectory>& data,
                                        const Mdp& shape,
                                        double value_floor = 0.0) {
  if (data.empty()) throw std::invalid_argument("offline_q_iteration: empty dataset");
  return q_iteration(fit_model(data, shape), shape.horizon, value_floor);
}

}  // namespace rcsl_lab
