#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "rcsl_lab/exact.hpp"
#include "rcsl_lab/mdp.hpp"

namespace rcsl_lab {

// Product MDP over (base state, cumulative reward units so far), restricted to
// pairs reachable from the initial states within the horizon. Rewards correlate
// exactly with the cumulative component of the successor, which makes
// "condition on total return" and "decrement the target by observed reward"
// the same mechanism.
struct AugmentedMdp {
  Mdp mdp;  // states are pair indices
  std::vector<int> base_state;
  std::vector<std::int64_t> cum_units;
  std::unordered_map<std::uint64_t, int> index;

  static std::uint64_t key(int s, std::int64_t c) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(s)) << 32) |
           static_cast<std::uint64_t>(c);
  }

  int index_of(int s, std::int64_t c) const {
    const auto it = index.find(key(s, c));
    return it == index.end() ? -1 : it->second;
  }

  int num_pairs() const { return mdp.num_states; }

  // Lifts a base-state policy: rows copied per (pair, timestep).
  MarkovPolicy lift(const MarkovPolicy& p) const {
    const int blocks = p.stationary ? 1 : p.horizon;
    std::vector<double> rows(static_cast<std::size_t>(blocks) * num_pairs() *
                             mdp.num_actions);
    for (int t = 1; t <= blocks; ++t) {
      for (int g = 0; g < num_pairs(); ++g) {
        const auto src = p.row(t, base_state[g]);
        const std::size_t base =
            (static_cast<std::size_t>(t - 1) * num_pairs() + g) * mdp.num_actions;
        std::copy(src.begin(), src.end(), rows.begin() + base);
      }
    }
    if (p.stationary)
      return MarkovPolicy::stationary_rows(num_pairs(), mdp.num_actions,
                                           std::move(rows));
    return MarkovPolicy::per_timestep(num_pairs(), mdp.num_actions, p.horizon,
                                      std::move(rows));
  }

  // Initial distribution over pairs for a base initial distribution: all mass
  // sits at cumulative 0.
  std::vector<double> lift_initial(std::span<const double> base_mu) const {
    std::vector<double> mu(num_pairs(), 0.0);
    for (int s = 0; s < static_cast<int>(base_mu.size()); ++s) {
      if (base_mu[s] <= 0.0) continue;
      mu[index_of(s, 0)] += base_mu[s];
    }
    return mu;
  }
};

// `initial_supports` lets mixtures contribute their initial states to the
// reachable set; by default only the MDP's own initial distribution seeds it.
inline AugmentedMdp augment_with_cumulative_reward(
    const Mdp& m, const std::vector<std::vector<double>>& initial_supports = {}) {
  AugmentedMdp am;
  am.mdp.num_actions = m.num_actions;
  am.mdp.horizon = m.horizon;
  am.mdp.reward_quantum = m.reward_quantum;

  auto intern = [&am](int s, std::int64_t c) {
    const auto k = AugmentedMdp::key(s, c);
    const auto it = am.index.find(k);
    if (it != am.index.end()) return it->second;
    const int id = static_cast<int>(am.base_state.size());
    am.index.emplace(k, id);
    am.base_state.push_back(s);
    am.cum_units.push_back(c);
    return id;
  };

  std::vector<int> frontier;
  auto seed_from = [&](std::span<const double> mu) {
    for (int s = 0; s < m.num_states; ++s)
      if (mu[s] > 0.0) {
        const int before = static_cast<int>(am.base_state.size());
        const int id = intern(s, 0);
        if (id == before) frontier.push_back(id);
      }
  };
  seed_from(m.initial_dist);
  for (const auto& mu : initial_supports) seed_from(mu);

  // Pairs first occupied at step H+1 exist only as kernel targets; they get
  // absorbing kernels below.
  std::vector<int> level_of(am.base_state.size(), 1);
  for (std::size_t i = 0; i < frontier.size(); ++i) {
    const int g = frontier[i];
    if (level_of[g] > m.horizon) continue;
    const int s = am.base_state[g];
    const std::int64_t c = am.cum_units[g];
    for (int a = 0; a < m.num_actions; ++a) {
      for (const auto& o : m.outcomes(s, a)) {
        if (o.prob <= 0.0) continue;
        const int before = static_cast<int>(am.base_state.size());
        const int child = intern(o.next, c + o.reward_units);
        if (child == before) {
          level_of.push_back(level_of[g] + 1);
          frontier.push_back(child);
        } else {
          level_of[child] = std::min(level_of[child], level_of[g] + 1);
        }
      }
    }
  }

  am.mdp.num_states = static_cast<int>(am.base_state.size());
  am.mdp.kernel.resize(static_cast<std::size_t>(am.mdp.num_states) * m.num_actions);
  for (int g = 0; g < am.mdp.num_states; ++g) {
    const int s = am.base_state[g];
    const std::int64_t c = am.cum_units[g];
    for (int a = 0; a < m.num_actions; ++a) {
      auto& row = am.mdp.kernel[am.mdp.sa(g, a)];
      if (level_of[g] > m.horizon) {
        row = {Outcome{g, 0, 1.0}};
        continue;
      }
      std::unordered_map<std::uint64_t, double> merged;
      for (const auto& o : m.outcomes(s, a)) {
        if (o.prob <= 0.0) continue;
        merged[AugmentedMdp::key(o.next, c + o.reward_units)] += o.prob;
      }
      row.reserve(merged.size());
      for (const auto& o : m.outcomes(s, a)) {
        if (o.prob <= 0.0) continue;
        const auto k = AugmentedMdp::key(o.next, c + o.reward_units);
        const auto it = merged.find(k);
        if (it == merged.end()) continue;
        row.push_back({am.index.at(k), o.reward_units, it->second});
        merged.erase(it);
      }
    }
  }

  am.mdp.initial_dist = am.lift_initial(m.initial_dist);
  return am;
}

inline AugmentedMdp augment_with_cumulative_reward(const Mdp& m,
                                                   const DataMixture& mix) {
  std::vector<std::vector<double>> supports;
  supports.reserve(mix.components.size());
  for (const auto& c : mix.components) supports.push_back(c.initial_dist);
  return augment_with_cumulative_reward(m, supports);
}

}  // namespace rcsl_lab
