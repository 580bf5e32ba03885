#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "rcsl_lab/augmented.hpp"
#include "rcsl_lab/exact.hpp"
#include "rcsl_lab/mdp.hpp"

namespace rcsl_lab {

// Exact conditional engine for a data-generating process over one MDP.
//
// Everything conditions on augmented pairs (state, cumulative units), where
// "total return = target" at a pair with cumulative c is the event
// "future return = target - c". Point and tail probabilities of the future
// return satisfy a backward recursion in which the queried value decrements
// exactly by the observed reward, so they are computed on demand and memoized
// per (component, timestep, pair, value) instead of materializing full return
// distributions.
//
// Mixture conditionals re-weight components by their probability of occupying
// the queried pair at the queried timestep.
class DataProcess {
 public:
  DataProcess(const Mdp& base, DataMixture mix)
      : base_(base), mix_(std::move(mix)), am_(augment_with_cumulative_reward(base, mix_)) {
    const int n = static_cast<int>(mix_.components.size());
    lifted_.reserve(n);
    occ_.reserve(n);
    for (const auto& c : mix_.components) {
      lifted_.push_back(am_.lift(c.behavior));
      occ_.push_back(occupancies_fn(am_.mdp, as_decision_fn(lifted_.back()),
                                    am_.lift_initial(c.initial_dist))
                         .per_step);
    }
  }

  DataProcess(const Mdp& base, const MarkovPolicy& behavior)
      : DataProcess(base, DataMixture::single(base, behavior)) {}

  const Mdp& base() const { return base_; }
  const AugmentedMdp& aug() const { return am_; }
  const DataMixture& mixture() const { return mix_; }
  int num_components() const { return static_cast<int>(mix_.components.size()); }
  int horizon() const { return base_.horizon; }
  int num_actions() const { return base_.num_actions; }

  const MarkovPolicy& lifted_behavior(int comp) const { return lifted_[comp]; }

  // w_m * P_m(pair at step t), unnormalized.
  double state_weight(int comp, int t, int pair) const {
    return mix_.components[comp].weight * occ_[comp][t - 1][pair];
  }

  // P_data(pair at step t) = sum_m w_m P_m.
  double data_occupancy(int t, int pair) const {
    double acc = 0.0;
    for (int c = 0; c < num_components(); ++c) acc += state_weight(c, t, pair);
    return acc;
  }

  // Time-averaged data marginal over pairs.
  double data_marginal(int pair) const {
    double acc = 0.0;
    for (int t = 1; t <= horizon(); ++t) acc += data_occupancy(t, pair);
    return acc / horizon();
  }

  // P_m(g_future = rem | pair at step t) under component comp's behavior.
  double p_eq(int comp, int t, int pair, std::int64_t rem) {
    if (rem < 0) return 0.0;
    if (t > horizon()) return rem == 0 ? 1.0 : 0.0;
    const auto k = memo_key(comp, t, pair, rem);
    if (const auto it = eq_memo_.find(k); it != eq_memo_.end()) return it->second;
    const auto row = lifted_[comp].row(t, pair);
    double acc = 0.0;
    for (int a = 0; a < num_actions(); ++a)
      if (row[a] > 0.0) acc += row[a] * p_eq_action(comp, t, pair, a, rem);
    eq_memo_.emplace(k, acc);
    return acc;
  }

  double p_eq_action(int comp, int t, int pair, int a, std::int64_t rem) {
    if (rem < 0 || t > horizon()) return 0.0;
    double acc = 0.0;
    for (const auto& o : am_.mdp.outcomes(pair, a))
      if (o.prob > 0.0) acc += o.prob * p_eq(comp, t + 1, o.next, rem - o.reward_units);
    return acc;
  }

  // P_m(g_future >= rem | pair at step t).
  double p_tail(int comp, int t, int pair, std::int64_t rem) {
    if (rem <= 0) return 1.0;
    if (t > horizon()) return 0.0;
    const auto k = memo_key(comp, t, pair, rem);
    if (const auto it = tail_memo_.find(k); it != tail_memo_.end()) return it->second;
    const auto row = lifted_[comp].row(t, pair);
    double acc = 0.0;
    for (int a = 0; a < num_actions(); ++a)
      if (row[a] > 0.0) acc += row[a] * p_tail_action(comp, t, pair, a, rem);
    tail_memo_.emplace(k, acc);
    return acc;
  }

  double p_tail_action(int comp, int t, int pair, int a, std::int64_t rem) {
    if (rem <= 0) return 1.0;
    if (t > horizon()) return 0.0;
    double acc = 0.0;
    for (const auto& o : am_.mdp.outcomes(pair, a))
      if (o.prob > 0.0)
        acc += o.prob * p_tail(comp, t + 1, o.next, rem - o.reward_units);
    return acc;
  }

  // Data-level versions, re-weighted by reach probability.
  double data_p_eq(int t, int pair, std::int64_t rem) {
    double num = 0.0, den = 0.0;
    for (int c = 0; c < num_components(); ++c) {
      const double w = state_weight(c, t, pair);
      if (w <= 0.0) continue;
      den += w;
      num += w * p_eq(c, t, pair, rem);
    }
    if (den <= 0.0) throw UnsupportedStateError(t, pair);
    return num / den;
  }

  double data_p_tail(int t, int pair, std::int64_t rem) {
    double num = 0.0, den = 0.0;
    for (int c = 0; c < num_components(); ++c) {
      const double w = state_weight(c, t, pair);
      if (w <= 0.0) continue;
      den += w;
      num += w * p_tail(c, t, pair, rem);
    }
    if (den <= 0.0) throw UnsupportedStateError(t, pair);
    return num / den;
  }

  // P_data(a | pair at step t).
  void action_marginal(int t, int pair, std::span<double> out) const {
    double den = 0.0;
    std::fill(out.begin(), out.end(), 0.0);
    for (int c = 0; c < num_components(); ++c) {
      const double w = state_weight(c, t, pair);
      if (w <= 0.0) continue;
      den += w;
      const auto row = lifted_[c].row(t, pair);
      for (int a = 0; a < num_actions(); ++a) out[a] += w * row[a];
    }
    if (den <= 0.0) throw UnsupportedStateError(t, pair);
    for (auto& v : out) v /= den;
  }

  // P_data(a | pair at step t, g_future = rem). Returns false when the
  // conditioning event has probability zero.
  bool rcsl_conditional(int t, int pair, std::int64_t rem, std::span<double> out) {
    double den = 0.0;
    std::fill(out.begin(), out.end(), 0.0);
    for (int c = 0; c < num_components(); ++c) {
      const double w = state_weight(c, t, pair);
      if (w <= 0.0) continue;
      const auto row = lifted_[c].row(t, pair);
      for (int a = 0; a < num_actions(); ++a) {
        if (row[a] <= 0.0) continue;
        const double mass = w * row[a] * p_eq_action(c, t, pair, a, rem);
        out[a] += mass;
        den += mass;
      }
    }
    if (den <= 0.0) return false;
    for (auto& v : out) v /= den;
    return true;
  }

  // P_data(a | pair at step t, g_future >= rem).
  bool tail_conditional(int t, int pair, std::int64_t rem, std::span<double> out) {
    double den = 0.0;
    std::fill(out.begin(), out.end(), 0.0);
    for (int c = 0; c < num_components(); ++c) {
      const double w = state_weight(c, t, pair);
      if (w <= 0.0) continue;
      const auto row = lifted_[c].row(t, pair);
      for (int a = 0; a < num_actions(); ++a) {
        if (row[a] <= 0.0) continue;
        const double mass = w * row[a] * p_tail_action(c, t, pair, a, rem);
        out[a] += mass;
        den += mass;
      }
    }
    if (den <= 0.0) return false;
    for (auto& v : out) v /= den;
    return true;
  }

  // Remaining-target values with positive support at (t, pair), ascending.
  std::vector<std::int64_t> supported_targets(int t, int pair) {
    std::vector<std::int64_t> out;
    const std::int64_t maxu =
        (horizon() - t + 1) * base_.max_reward_units();
    for (std::int64_t u = 0; u <= maxu; ++u) {
      double mass = 0.0;
      for (int c = 0; c < num_components(); ++c) {
        const double w = state_weight(c, t, pair);
        if (w <= 0.0) continue;
        mass += w * p_eq(c, t, pair, u);
      }
      if (mass > 0.0) out.push_back(u);
    }
    return out;
  }

  // Trajectory-return distribution of the data process, in units.
  ReturnDistribution data_return_dist() const {
    ReturnDistribution mixd;
    mixd.p.assign(static_cast<std::size_t>(base_.max_return_units()) + 1, 0.0);
    for (int c = 0; c < num_components(); ++c) {
      Mdp with_mu = base_;
      with_mu.initial_dist = mix_.components[c].initial_dist;
      const auto rd = trajectory_return_dist(with_mu, mix_.components[c].behavior);
      for (std::size_t u = 0; u < rd.p.size() && u < mixd.p.size(); ++u)
        mixd.p[u] += mix_.components[c].weight * rd.p[u];
    }
    return mixd;
  }

 private:
  static std::uint64_t memo_key(int comp, int t, int pair, std::int64_t rem) {
    return (static_cast<std::uint64_t>(comp) << 58) |
           (static_cast<std::uint64_t>(t) << 50) |
           (static_cast<std::uint64_t>(static_cast<std::uint32_t>(pair)) << 24) |
           static_cast<std::uint64_t>(rem);
  }

  Mdp base_;
  DataMixture mix_;
  AugmentedMdp am_;
  std::vector<MarkovPolicy> lifted_;
  std::vector<std::vector<std::vector<double>>> occ_;  // [comp][t-1][pair]
  std::unordered_map<std::uint64_t, double> eq_memo_;
  std::unordered_map<std::uint64_t, double> tail_memo_;
};

}  // namespace rcsl_lab
