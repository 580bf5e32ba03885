#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "rcsl_lab/mdp.hpp"

namespace rcsl_lab {

struct UnsupportedStateError : std::runtime_error {
  int timestep;
  int state;
  UnsupportedStateError(int t, int s)
      : std::runtime_error("state " + std::to_string(s) + " unreachable at step " +
                           std::to_string(t)),
        timestep(t),
        state(s) {}
};

// Exact distribution of the future return from (timestep, state[, action]),
// as a dense vector over the integer unit grid 0..max.
struct ReturnDistribution {
  int timestep{1};
  int state{0};
  int action{-1};  // -1: marginal over the policy's action
  std::vector<double> p;

  double prob_units(std::int64_t u) const {
    if (u < 0 || u >= static_cast<std::int64_t>(p.size())) return 0.0;
    return p[static_cast<std::size_t>(u)];
  }
  double tail_units(std::int64_t u) const {
    double acc = 0.0;
    for (std::int64_t v = std::max<std::int64_t>(u, 0);
         v < static_cast<std::int64_t>(p.size()); ++v)
      acc += p[static_cast<std::size_t>(v)];
    return acc;
  }
  double mean_units() const {
    double acc = 0.0;
    for (std::size_t u = 0; u < p.size(); ++u) acc += static_cast<double>(u) * p[u];
    return acc;
  }
  int support_size() const {
    int n = 0;
    for (double v : p) n += (v > 0.0);
    return n;
  }
};

namespace detail {

// One backward level of state return distributions at a fixed timestep:
// level[s] is a dense grid vector of size width.
using ReturnLevel = std::vector<std::vector<double>>;

inline ReturnLevel terminal_level(int num_states, std::size_t width) {
  ReturnLevel level(num_states, std::vector<double>(width, 0.0));
  for (auto& v : level) v[0] = 1.0;
  return level;
}

inline std::vector<double> action_return_dist(const Mdp& m, const ReturnLevel& next,
                                              int s, int a, std::size_t width) {
  std::vector<double> g(width, 0.0);
  for (const auto& o : m.outcomes(s, a)) {
    if (o.prob <= 0.0) continue;
    const auto& gn = next[o.next];
    const auto shift = static_cast<std::size_t>(o.reward_units);
    for (std::size_t u = 0; u + shift < width; ++u) {
      if (gn[u] > 0.0) g[u + shift] += o.prob * gn[u];
    }
  }
  return g;
}

inline ReturnLevel step_back(const Mdp& m, const MarkovPolicy& policy, int t,
                             const ReturnLevel& next, std::size_t width) {
  ReturnLevel level(m.num_states, std::vector<double>(width, 0.0));
  for (int s = 0; s < m.num_states; ++s) {
    const auto pi = policy.row(t, s);
    for (int a = 0; a < m.num_actions; ++a) {
      if (pi[a] <= 0.0) continue;
      const auto ga = action_return_dist(m, next, s, a, width);
      for (std::size_t u = 0; u < width; ++u) level[s][u] += pi[a] * ga[u];
    }
  }
  return level;
}

}  // namespace detail

// Backward induction with convolution on the integer return grid. Rolls two
// levels, so memory stays at 2 * S * grid.
inline ReturnDistribution return_dist(const Mdp& m, const MarkovPolicy& policy,
                                      int timestep, int state, int action = -1) {
  if (timestep < 1 || timestep > m.horizon)
    throw std::invalid_argument("return_dist: timestep out of range");
  const std::size_t width =
      static_cast<std::size_t>((m.horizon - timestep + 1) * m.max_reward_units()) + 1;
  auto level = detail::terminal_level(m.num_states, width);
  for (int t = m.horizon; t > timestep; --t)
    level = detail::step_back(m, policy, t, level, width);

  ReturnDistribution rd;
  rd.timestep = timestep;
  rd.state = state;
  rd.action = action;
  rd.p = action >= 0 ? detail::action_return_dist(m, level, state, action, width)
                     : detail::step_back(m, policy, timestep, level, width)[state];
  return rd;
}

// Trajectory-return distribution under the initial distribution.
inline ReturnDistribution trajectory_return_dist(const Mdp& m,
                                                 const MarkovPolicy& policy) {
  const std::size_t width = static_cast<std::size_t>(m.max_return_units()) + 1;
  auto level = detail::terminal_level(m.num_states, width);
  for (int t = m.horizon; t >= 1; --t)
    level = detail::step_back(m, policy, t, level, width);
  ReturnDistribution rd;
  rd.p.assign(width, 0.0);
  for (int s = 0; s < m.num_states; ++s) {
    if (m.initial_dist[s] <= 0.0) continue;
    for (std::size_t u = 0; u < width; ++u) rd.p[u] += m.initial_dist[s] * level[s][u];
  }
  return rd;
}

// Per-timestep state distributions plus their average marginal.
struct OccupancyProfile {
  std::vector<std::vector<double>> per_step;  // [t-1][s]
  std::vector<double> averaged;               // (1/H) sum_t per_step[t]

  double average(int s) const { return averaged[s]; }
};

// Decision rule abstraction so exact forward passes work uniformly for Markov
// policies, conditioned policies, and learned tables.
using DecisionFn =
    std::function<void(int t, int s, std::span<double> out_action_probs)>;

inline DecisionFn as_decision_fn(const MarkovPolicy& p) {
  return [&p](int t, int s, std::span<double> out) {
    const auto row = p.row(t, s);
    std::copy(row.begin(), row.end(), out.begin());
  };
}

inline OccupancyProfile occupancies_fn(const Mdp& m, const DecisionFn& rule,
                                       std::span<const double> initial = {}) {
  OccupancyProfile prof;
  prof.per_step.assign(m.horizon, std::vector<double>(m.num_states, 0.0));
  prof.averaged.assign(m.num_states, 0.0);
  std::vector<double> cur(initial.empty()
                              ? m.initial_dist
                              : std::vector<double>(initial.begin(), initial.end()));
  std::vector<double> pi(m.num_actions);
  for (int t = 1; t <= m.horizon; ++t) {
    prof.per_step[t - 1] = cur;
    std::vector<double> nxt(m.num_states, 0.0);
    for (int s = 0; s < m.num_states; ++s) {
      if (cur[s] <= 0.0) continue;
      rule(t, s, pi);
      for (int a = 0; a < m.num_actions; ++a) {
        if (pi[a] <= 0.0) continue;
        const double w = cur[s] * pi[a];
        for (const auto& o : m.outcomes(s, a)) nxt[o.next] += w * o.prob;
      }
    }
    cur.swap(nxt);
  }
  for (int t = 0; t < m.horizon; ++t)
    for (int s = 0; s < m.num_states; ++s)
      prof.averaged[s] += prof.per_step[t][s] / m.horizon;
  return prof;
}

inline OccupancyProfile occupancies(const Mdp& m, const MarkovPolicy& policy) {
  return occupancies_fn(m, as_decision_fn(policy));
}

// J(pi) through the occupancy route: sum_t E_{d^t} E[r].
inline double evaluate_fn(const Mdp& m, const DecisionFn& rule,
                          std::span<const double> initial = {}) {
  const auto prof = occupancies_fn(m, rule, initial);
  double j = 0.0;
  std::vector<double> pi(m.num_actions);
  for (int t = 1; t <= m.horizon; ++t) {
    for (int s = 0; s < m.num_states; ++s) {
      const double w = prof.per_step[t - 1][s];
      if (w <= 0.0) continue;
      rule(t, s, pi);
      for (int a = 0; a < m.num_actions; ++a)
        if (pi[a] > 0.0) j += w * pi[a] * m.expected_reward_value(s, a);
    }
  }
  return j;
}

inline double evaluate(const Mdp& m, const MarkovPolicy& policy) {
  return evaluate_fn(m, as_decision_fn(policy));
}

// Same quantity through the distributional route; the two are compared as a
// dual-formula oracle in tests.
inline double evaluate_via_return_dist(const Mdp& m, const MarkovPolicy& policy) {
  return m.reward_quantum.scale(1) * trajectory_return_dist(m, policy).mean_units();
}

// Finite-horizon value iteration; greedy ties break toward the lowest action
// index. Returns the deterministic optimal policy as a per-timestep table.
inline MarkovPolicy optimal_policy(const Mdp& m) {
  std::vector<double> value(m.num_states, 0.0);
  std::vector<int> greedy(static_cast<std::size_t>(m.horizon) * m.num_states, 0);
  for (int t = m.horizon; t >= 1; --t) {
    std::vector<double> next_value(m.num_states, 0.0);
    for (int s = 0; s < m.num_states; ++s) {
      double best = -1.0;
      int best_a = 0;
      for (int a = 0; a < m.num_actions; ++a) {
        double q = 0.0;
        for (const auto& o : m.outcomes(s, a))
          q += o.prob * (m.reward_value(o.reward_units) + value[o.next]);
        if (q > best + 1e-15) {
          best = q;
          best_a = a;
        }
      }
      next_value[s] = best;
      greedy[static_cast<std::size_t>(t - 1) * m.num_states + s] = best_a;
    }
    value.swap(next_value);
  }
  return MarkovPolicy::deterministic(m.num_states, m.num_actions, m.horizon, greedy);
}

inline double optimal_value(const Mdp& m) { return evaluate(m, optimal_policy(m)); }

// A dataset-generating process: a convex mixture of (initial distribution,
// behavior policy) pairs over a shared MDP.
struct DataMixture {
  struct Component {
    double weight{1.0};
    std::vector<double> initial_dist;
    MarkovPolicy behavior;
  };
  std::vector<Component> components;

  static DataMixture single(const Mdp& m, MarkovPolicy behavior) {
    DataMixture mix;
    mix.components.push_back({1.0, m.initial_dist, std::move(behavior)});
    return mix;
  }

  std::vector<double> initial_marginal(int num_states) const {
    std::vector<double> mu(num_states, 0.0);
    for (const auto& c : components)
      for (int s = 0; s < num_states; ++s) mu[s] += c.weight * c.initial_dist[s];
    return mu;
  }
};

inline std::vector<std::string> validate(const DataMixture& mix) {
  std::vector<std::string> report;
  double wsum = 0.0;
  for (const auto& c : mix.components) {
    if (c.weight < 0.0) report.push_back("mixture weight is negative");
    wsum += c.weight;
    double musum = 0.0;
    for (double v : c.initial_dist) {
      if (v < 0.0) report.push_back("component initial_dist has negative entry");
      musum += v;
    }
    if (!detail::sums_to_one(musum))
      report.push_back("component initial_dist does not sum to 1");
    const auto sub = validate(c.behavior);
    report.insert(report.end(), sub.begin(), sub.end());
  }
  if (!detail::sums_to_one(wsum)) report.push_back("mixture weights do not sum to 1");
  return report;
}

// Conditionals of the data process at a (timestep, state): the action marginal
// P_data(a|s_t) and the joint P_data(a, g_future|s_t). Component weights are
// re-weighted by each component's probability of being at `state` at step t.
struct MixtureConditional {
  std::vector<double> action_marginal;       // [a]
  std::vector<std::vector<double>> joint;    // [a][future units]
};

inline MixtureConditional mixture_conditionals(const Mdp& m, const DataMixture& mix,
                                               int timestep, int state) {
  const std::size_t width =
      static_cast<std::size_t>((m.horizon - timestep + 1) * m.max_reward_units()) + 1;
  MixtureConditional out;
  out.action_marginal.assign(m.num_actions, 0.0);
  out.joint.assign(m.num_actions, std::vector<double>(width, 0.0));

  double total_reach = 0.0;
  for (const auto& c : mix.components) {
    const auto prof = occupancies_fn(m, as_decision_fn(c.behavior), c.initial_dist);
    const double reach = c.weight * prof.per_step[timestep - 1][state];
    if (reach <= 0.0) continue;
    total_reach += reach;

    const auto pi = c.behavior.row(timestep, state);
    const std::size_t aw = width;
    auto level = detail::terminal_level(m.num_states, aw);
    for (int t = m.horizon; t > timestep; --t)
      level = detail::step_back(m, c.behavior, t, level, aw);
    for (int a = 0; a < m.num_actions; ++a) {
      if (pi[a] <= 0.0) continue;
      out.action_marginal[a] += reach * pi[a];
      const auto ga = detail::action_return_dist(m, level, state, a, aw);
      for (std::size_t u = 0; u < aw; ++u) out.joint[a][u] += reach * pi[a] * ga[u];
    }
  }
  if (total_reach <= 0.0) throw UnsupportedStateError(timestep, state);
  for (auto& v : out.action_marginal) v /= total_reach;
  for (auto& row : out.joint)
    for (auto& v : row) v /= total_reach;
  return out;
}

}  // namespace rcsl_lab
