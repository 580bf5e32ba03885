#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcsl_lab/rational.hpp"
#include "rcsl_lab/rng.hpp"

namespace rcsl_lab {

constexpr double kProbTolerance = 1e-12;

// One joint outcome of acting: successor state plus reward in quantum units.
// Base MDPs built from separate transition/reward distributions carry the
// product kernel; cumulative-reward augmentation produces correlated entries,
// which is why the kernel is joint rather than two marginals.
struct Outcome {
  int next{0};
  std::int64_t reward_units{0};
  double prob{0.0};
};

// Finite-horizon tabular MDP. Rewards live on the exact grid
// {0, q, 2q, ...} with q = reward_quantum, so returns are integers in units
// and never accumulate floating-point error. Absorbing states are ordinary
// states whose kernel is a self-loop with reward 0.
struct Mdp {
  int num_states{0};
  int num_actions{0};
  int horizon{0};
  Rational reward_quantum{1, 1};
  std::vector<double> initial_dist;
  std::vector<std::vector<Outcome>> kernel;  // indexed by s * num_actions + a

  std::size_t sa(int s, int a) const {
    return static_cast<std::size_t>(s) * num_actions + a;
  }
  std::span<const Outcome> outcomes(int s, int a) const { return kernel[sa(s, a)]; }

  std::int64_t max_reward_units() const {
    std::int64_t m = 0;
    for (const auto& row : kernel)
      for (const auto& o : row) m = std::max(m, o.reward_units);
    return m;
  }

  // Largest representable trajectory return, in units.
  std::int64_t max_return_units() const { return horizon * max_reward_units(); }

  double reward_value(std::int64_t units) const { return reward_quantum.scale(units); }

  double expected_reward_value(int s, int a) const {
    double v = 0.0;
    for (const auto& o : outcomes(s, a)) v += o.prob * reward_value(o.reward_units);
    return v;
  }
};

// Builds the product kernel from separate next-state and reward distributions,
// which is the form the on-disk format uses.
inline std::vector<Outcome> product_kernel(
    std::span<const std::pair<int, double>> transitions,
    std::span<const std::pair<std::int64_t, double>> rewards) {
  std::vector<Outcome> out;
  out.reserve(transitions.size() * rewards.size());
  for (const auto& [next, tp] : transitions)
    for (const auto& [units, rp] : rewards)
      if (tp * rp > 0.0) out.push_back({next, units, tp * rp});
  return out;
}

// Policy as per-(timestep, state) rows over actions. Stationary policies store
// a single block of rows. Timesteps are 1-based throughout.
struct MarkovPolicy {
  int num_states{0};
  int num_actions{0};
  int horizon{1};  // meaningful only when stationary == false
  bool stationary{true};
  std::vector<double> probs;

  static MarkovPolicy uniform(int num_states, int num_actions) {
    MarkovPolicy p;
    p.num_states = num_states;
    p.num_actions = num_actions;
    p.probs.assign(static_cast<std::size_t>(num_states) * num_actions,
                   1.0 / num_actions);
    return p;
  }

  static MarkovPolicy stationary_rows(int num_states, int num_actions,
                                      std::vector<double> rows) {
    MarkovPolicy p;
    p.num_states = num_states;
    p.num_actions = num_actions;
    p.probs = std::move(rows);
    return p;
  }

  static MarkovPolicy per_timestep(int num_states, int num_actions, int horizon,
                                   std::vector<double> rows) {
    MarkovPolicy p;
    p.num_states = num_states;
    p.num_actions = num_actions;
    p.horizon = horizon;
    p.stationary = false;
    p.probs = std::move(rows);
    return p;
  }

  // Deterministic greedy policy from per-(t,s) chosen actions.
  static MarkovPolicy deterministic(int num_states, int num_actions, int horizon,
                                    const std::vector<int>& action_of) {
    std::vector<double> rows(
        static_cast<std::size_t>(horizon) * num_states * num_actions, 0.0);
    for (int t = 0; t < horizon; ++t)
      for (int s = 0; s < num_states; ++s)
        rows[(static_cast<std::size_t>(t) * num_states + s) * num_actions +
             action_of[static_cast<std::size_t>(t) * num_states + s]] = 1.0;
    return per_timestep(num_states, num_actions, horizon, std::move(rows));
  }

  std::span<const double> row(int t, int s) const {
    const std::size_t base =
        stationary
            ? static_cast<std::size_t>(s) * num_actions
            : (static_cast<std::size_t>(t - 1) * num_states + s) * num_actions;
    return {probs.data() + base, static_cast<std::size_t>(num_actions)};
  }

  double prob(int t, int s, int a) const { return row(t, s)[a]; }

  std::span<double> mutable_row(int t, int s) {
    const std::size_t base =
        stationary
            ? static_cast<std::size_t>(s) * num_actions
            : (static_cast<std::size_t>(t - 1) * num_states + s) * num_actions;
    return {probs.data() + base, static_cast<std::size_t>(num_actions)};
  }
};

// Modal deterministic dynamics of a near-deterministic MDP, together with the
// worst-case per-step deviation probability.
struct DeterministicSkeleton {
  std::vector<int> det_next;                // per (s,a)
  std::vector<std::int64_t> det_reward_units;  // per (s,a)
  double epsilon{0.0};
};

struct Trajectory {
  std::vector<int> states;
  std::vector<int> actions;
  std::vector<std::int64_t> reward_units;

  std::int64_t total_units() const {
    std::int64_t g = 0;
    for (auto u : reward_units) g += u;
    return g;
  }
};

namespace detail {
inline bool sums_to_one(double sum) { return std::abs(sum - 1.0) <= kProbTolerance; }
}  // namespace detail

// Report-style validation: returns the list of violated invariants, empty if
// the MDP is well formed.
inline std::vector<std::string> validate(const Mdp& m) {
  std::vector<std::string> report;
  if (m.num_states < 1) report.push_back("num_states must be >= 1");
  if (m.num_actions < 1) report.push_back("num_actions must be >= 1");
  if (m.horizon < 1) report.push_back("horizon must be >= 1");
  if (!report.empty()) return report;

  if (static_cast<int>(m.initial_dist.size()) != m.num_states) {
    report.push_back("initial_dist has wrong size");
  } else {
    double sum = 0.0;
    for (int s = 0; s < m.num_states; ++s) {
      if (m.initial_dist[s] < 0.0)
        report.push_back("initial_dist[" + std::to_string(s) + "] is negative");
      sum += m.initial_dist[s];
    }
    if (!detail::sums_to_one(sum)) report.push_back("initial_dist does not sum to 1");
  }

  if (m.kernel.size() != static_cast<std::size_t>(m.num_states) * m.num_actions) {
    report.push_back("kernel has wrong size");
    return report;
  }
  for (int s = 0; s < m.num_states; ++s) {
    for (int a = 0; a < m.num_actions; ++a) {
      const auto& row = m.kernel[m.sa(s, a)];
      const std::string where = "(" + std::to_string(s) + "," + std::to_string(a) + ")";
      if (row.empty()) {
        report.push_back("kernel row " + where + " is empty");
        continue;
      }
      double sum = 0.0;
      for (const auto& o : row) {
        if (o.prob < 0.0) report.push_back("kernel row " + where + " has negative prob");
        if (o.next < 0 || o.next >= m.num_states)
          report.push_back("kernel row " + where + " has out-of-range next state");
        if (o.reward_units < 0)
          report.push_back("reward at " + where + " is negative");
        else if (m.reward_quantum.scale(o.reward_units) > 1.0 + 1e-12)
          report.push_back("reward at " + where + " exceeds 1");
        sum += o.prob;
      }
      if (!detail::sums_to_one(sum))
        report.push_back("kernel row " + where + " sums to " + std::to_string(sum));
    }
  }
  return report;
}

inline std::vector<std::string> validate(const MarkovPolicy& p) {
  std::vector<std::string> report;
  const int blocks = p.stationary ? 1 : p.horizon;
  if (p.probs.size() !=
      static_cast<std::size_t>(blocks) * p.num_states * p.num_actions) {
    report.push_back("policy rows have wrong size");
    return report;
  }
  for (int t = 1; t <= blocks; ++t) {
    for (int s = 0; s < p.num_states; ++s) {
      double sum = 0.0;
      for (double v : p.row(t, s)) {
        if (v < 0.0)
          report.push_back("policy row (" + std::to_string(t) + "," +
                           std::to_string(s) + ") has negative entry");
        sum += v;
      }
      if (!detail::sums_to_one(sum))
        report.push_back("policy row (" + std::to_string(t) + "," +
                         std::to_string(s) + ") does not sum to 1");
    }
  }
  return report;
}

inline void require_valid(const Mdp& m) {
  const auto report = validate(m);
  if (!report.empty()) throw std::invalid_argument("invalid MDP: " + report.front());
}

// Joint-mode skeleton. Ties break toward the lexicographically smallest
// (next state, reward units) outcome so repeated runs agree.
inline DeterministicSkeleton extract_skeleton(const Mdp& m) {
  DeterministicSkeleton sk;
  sk.det_next.resize(m.kernel.size());
  sk.det_reward_units.resize(m.kernel.size());
  sk.epsilon = 0.0;
  for (int s = 0; s < m.num_states; ++s) {
    for (int a = 0; a < m.num_actions; ++a) {
      const auto row = m.outcomes(s, a);
      const Outcome* best = &row[0];
      for (const auto& o : row) {
        if (o.prob > best->prob + kProbTolerance) {
          best = &o;
        } else if (std::abs(o.prob - best->prob) <= kProbTolerance) {
          if (o.next < best->next ||
              (o.next == best->next && o.reward_units < best->reward_units))
            best = &o;
        }
      }
      sk.det_next[m.sa(s, a)] = best->next;
      sk.det_reward_units[m.sa(s, a)] = best->reward_units;
      sk.epsilon = std::max(sk.epsilon, 1.0 - best->prob);
    }
  }
  return sk;
}

// Deterministic MDP that follows the skeleton outcomes exactly.
inline Mdp skeleton_mdp(const Mdp& m) {
  const auto sk = extract_skeleton(m);
  Mdp d = m;
  for (std::size_t i = 0; i < m.kernel.size(); ++i)
    d.kernel[i] = {Outcome{sk.det_next[i], sk.det_reward_units[i], 1.0}};
  return d;
}

inline Trajectory sample_trajectory(const Mdp& m, const MarkovPolicy& policy,
                                    std::uint64_t seed) {
  SplitMix64 rng(seed);
  Trajectory tau;
  tau.states.resize(m.horizon);
  tau.actions.resize(m.horizon);
  tau.reward_units.resize(m.horizon);
  int s = rng.categorical(m.initial_dist);
  for (int t = 1; t <= m.horizon; ++t) {
    const int a = rng.categorical(policy.row(t, s));
    const auto row = m.outcomes(s, a);
    const double u = rng.next_unit();
    double acc = 0.0;
    const Outcome* picked = &row[0];
    for (const auto& o : row) {
      if (o.prob <= 0.0) continue;
      picked = &o;
      acc += o.prob;
      if (u < acc) break;
    }
    tau.states[t - 1] = s;
    tau.actions[t - 1] = a;
    tau.reward_units[t - 1] = picked->reward_units;
    s = picked->next;
  }
  return tau;
}

}  // namespace rcsl_lab
