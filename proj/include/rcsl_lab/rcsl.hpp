#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "rcsl_lab/conditionals.hpp"

namespace rcsl_lab {

struct UnsupportedTargetError : std::runtime_error {
  int timestep;
  int state;
  std::int64_t target_units;
  UnsupportedTargetError(int t, int s, std::int64_t target)
      : std::runtime_error("unsupported target " + std::to_string(target) +
                           " at state " + std::to_string(s) + ", step " +
                           std::to_string(t)),
        timestep(t),
        state(s),
        target_units(target) {}
};

struct HistorySizeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Sentinel for "no target defined along this branch" (table mode gaps,
// negative decremented targets are representable directly).
constexpr std::int64_t kNoTarget = std::numeric_limits<std::int64_t>::min();

// Per-state return target. Constant mode fixes the target at each initial
// state and decrements it by observed reward, which the cumulative-reward
// augmentation makes consistent by construction. Table mode assigns explicit
// remaining targets to (state, cumulative) pairs and must be validated against
// the skeleton dynamics.
struct ConditioningFunction {
  enum class Mode { Constant, Table };
  Mode mode{Mode::Constant};
  std::int64_t broadcast_target{0};               // constant mode, all initial states
  std::vector<std::int64_t> per_initial_targets;  // optional override, size S
  std::unordered_map<std::uint64_t, std::int64_t> table;  // key(s,c) -> units

  static ConditioningFunction constant(std::int64_t target_units) {
    ConditioningFunction f;
    f.broadcast_target = target_units;
    return f;
  }

  static ConditioningFunction constant_per_initial(std::vector<std::int64_t> targets) {
    ConditioningFunction f;
    f.per_initial_targets = std::move(targets);
    return f;
  }

  static ConditioningFunction from_table(
      const std::vector<std::tuple<int, std::int64_t, std::int64_t>>& entries) {
    ConditioningFunction f;
    f.mode = Mode::Table;
    for (const auto& [s, c, units] : entries)
      f.table[AugmentedMdp::key(s, c)] = units;
    return f;
  }

  std::int64_t initial_target(int s1) const {
    if (mode == Mode::Table) {
      const auto it = table.find(AugmentedMdp::key(s1, 0));
      return it == table.end() ? kNoTarget : it->second;
    }
    if (!per_initial_targets.empty()) return per_initial_targets[s1];
    return broadcast_target;
  }

  // Remaining target when about to act at pair (s, c), given the rolled-down
  // value for constant mode.
  std::int64_t remaining_at(int s, std::int64_t c, std::int64_t rolled) const {
    if (mode == Mode::Table) {
      const auto it = table.find(AugmentedMdp::key(s, c));
      return it == table.end() ? kNoTarget : it->second;
    }
    return rolled;
  }
};

// Table-mode consistency check against the deterministic skeleton: along every
// skeleton transition out of a pair that carries a target, the target must
// drop by exactly the skeleton reward. Constant mode is consistent by
// construction and returns an empty report.
inline std::vector<std::string> validate_conditioning(const ConditioningFunction& f,
                                                      const Mdp& m,
                                                      const AugmentedMdp& am) {
  std::vector<std::string> report;
  if (f.mode != ConditioningFunction::Mode::Table) return report;
  const auto sk = extract_skeleton(m);
  for (const auto& [key, units] : f.table) {
    const int s = static_cast<int>(key >> 32);
    const auto c = static_cast<std::int64_t>(key & 0xFFFFFFFFULL);
    if (am.index_of(s, c) < 0) continue;  // unreachable entries are inert
    for (int a = 0; a < m.num_actions; ++a) {
      const int s2 = sk.det_next[m.sa(s, a)];
      const std::int64_t r = sk.det_reward_units[m.sa(s, a)];
      if (am.index_of(s2, c + r) < 0) continue;
      const auto it = f.table.find(AugmentedMdp::key(s2, c + r));
      if (it == f.table.end()) continue;
      if (units != it->second + r)
        report.push_back("inconsistent targets across skeleton step (" +
                         std::to_string(s) + "," + std::to_string(c) + ") -a" +
                         std::to_string(a) + "-> (" + std::to_string(s2) + "," +
                         std::to_string(c + r) + ")");
    }
  }
  return report;
}

enum class Provenance { Exact, Empirical, FallbackComposite };

// A policy queried as pi(a | timestep, state, cumulative units, remaining
// target units). Exact policies are undefined (nullopt) exactly where the
// conditioning event has zero probability; empirical policies are total
// through their fallback chain but still expose which targets they have
// support for, so snap-mode rollouts work for both kinds.
struct ConditionedPolicy {
  Provenance provenance{Provenance::Exact};
  int num_actions{0};
  std::function<std::optional<std::vector<double>>(int, int, std::int64_t,
                                                   std::int64_t)>
      fn;
  // Ascending remaining-target values with support at (t, s, c); unset means
  // the caller should ask the data process instead.
  std::function<std::vector<std::int64_t>(int, int, std::int64_t)> targets_fn;

  std::optional<std::vector<double>> query(int t, int s, std::int64_t c,
                                           std::int64_t rem) const {
    if (rem == kNoTarget) return std::nullopt;
    return fn(t, s, c, rem);
  }

  std::vector<double> query_strict(int t, int s, std::int64_t c,
                                   std::int64_t rem) const {
    auto out = query(t, s, c, rem);
    if (!out) throw UnsupportedTargetError(t, s, rem);
    return *out;
  }
};

// The idealized infinite-data RCSL policy: behavior re-weighted by the
// probability of the targeted future return.
struct ExactRcsl {
  std::shared_ptr<DataProcess> process;
  ConditioningFunction f;
  ConditionedPolicy policy;
};

inline ExactRcsl exact_rcsl(const Mdp& m, const DataMixture& mix,
                            ConditioningFunction f) {
  ExactRcsl r;
  r.process = std::make_shared<DataProcess>(m, mix);
  if (const auto report = validate_conditioning(f, m, r.process->aug());
      !report.empty())
    throw std::invalid_argument("conditioning function: " + report.front());
  r.f = std::move(f);
  r.policy.provenance = Provenance::Exact;
  r.policy.num_actions = m.num_actions;
  r.policy.fn = [proc = r.process](int t, int s, std::int64_t c,
                                   std::int64_t rem)
      -> std::optional<std::vector<double>> {
    const int pair = proc->aug().index_of(s, c);
    if (pair < 0) return std::nullopt;
    std::vector<double> out(proc->num_actions());
    if (!proc->rcsl_conditional(t, pair, rem, out)) return std::nullopt;
    return out;
  };
  return r;
}

inline ExactRcsl exact_rcsl(const Mdp& m, const MarkovPolicy& behavior,
                            ConditioningFunction f) {
  return exact_rcsl(m, DataMixture::single(m, behavior), std::move(f));
}

// Total policy: the exact conditionals where defined, the data process's
// action marginal (uniform when even that is undefined) elsewhere.
inline ConditionedPolicy with_behavior_completion(const ExactRcsl& r) {
  ConditionedPolicy pol;
  pol.provenance = Provenance::FallbackComposite;
  pol.num_actions = r.policy.num_actions;
  pol.fn = [proc = r.process, inner = r.policy](
               int t, int s, std::int64_t c,
               std::int64_t rem) -> std::optional<std::vector<double>> {
    if (auto out = inner.query(t, s, c, rem)) return out;
    std::vector<double> marg(inner.num_actions, 1.0 / inner.num_actions);
    const int pair = proc->aug().index_of(s, c);
    if (pair >= 0) {
      try {
        proc->action_marginal(t, pair, marg);
      } catch (const UnsupportedStateError&) {
      }
    }
    return marg;
  };
  return pol;
}

// f(s1) = return of the skeleton-optimal deterministic policy rolled out under
// the skeleton dynamics from each initial state, in units.
inline ConditioningFunction optimal_conditioning(const Mdp& m) {
  const Mdp det = skeleton_mdp(m);
  const MarkovPolicy greedy = optimal_policy(det);
  std::vector<std::int64_t> targets(m.num_states, 0);
  for (int s1 = 0; s1 < m.num_states; ++s1) {
    int s = s1;
    std::int64_t g = 0;
    for (int t = 1; t <= m.horizon; ++t) {
      int a = 0;
      const auto row = greedy.row(t, s);
      for (int i = 0; i < m.num_actions; ++i)
        if (row[i] > 0.5) a = i;
      const auto& o = det.outcomes(s, a)[0];
      g += o.reward_units;
      s = o.next;
    }
    targets[s1] = g;
  }
  return ConditioningFunction::constant_per_initial(std::move(targets));
}

// ----- exact evaluation of conditioned policies -----

enum class RolloutFallback { Error, Behavior, Snap };

struct ConditionedEval {
  double J{0.0};
  // Visit weight of (pair, remaining target) per timestep; pack is
  // (pair << 32) | uint32(rem).
  std::vector<std::unordered_map<std::uint64_t, double>> levels;
  double fallback_mass{0.0};

  static std::uint64_t pack(int pair, std::int64_t rem) {
    const std::int32_t r32 =
        rem == kNoTarget ? std::numeric_limits<std::int32_t>::min()
                         : static_cast<std::int32_t>(rem);
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(pair)) << 32) |
           static_cast<std::uint32_t>(r32);
  }
  static int unpack_pair(std::uint64_t k) { return static_cast<int>(k >> 32); }
  static std::int64_t unpack_rem(std::uint64_t k) {
    const auto r32 = static_cast<std::int32_t>(k & 0xFFFFFFFFULL);
    return r32 == std::numeric_limits<std::int32_t>::min() ? kNoTarget : r32;
  }
};

// Exact forward pass of a conditioned policy over the augmented MDP, tracking
// the remaining target alongside the pair (they may dissociate under Snap).
// Undefined queries fall back per `fb`: Error throws, Behavior follows the
// data process's action marginal (uniform where even that is undefined), Snap
// first moves the target to the nearest supported value, ties toward larger.
inline ConditionedEval evaluate_conditioned(DataProcess& proc,
                                            const ConditionedPolicy& pol,
                                            const ConditioningFunction& f,
                                            RolloutFallback fb) {
  const Mdp& amdp = proc.aug().mdp;
  const int H = amdp.horizon;
  const int A = amdp.num_actions;
  ConditionedEval ev;
  ev.levels.resize(H);

  std::unordered_map<std::uint64_t, double> cur;
  const auto mu = proc.mixture().initial_marginal(proc.base().num_states);
  for (int s1 = 0; s1 < proc.base().num_states; ++s1) {
    if (mu[s1] <= 0.0) continue;
    const int pair = proc.aug().index_of(s1, 0);
    cur[ConditionedEval::pack(pair, f.initial_target(s1))] += mu[s1];
  }

  std::vector<double> pi(A);
  for (int t = 1; t <= H; ++t) {
    ev.levels[t - 1] = cur;
    std::unordered_map<std::uint64_t, double> nxt;
    for (const auto& [key, w] : cur) {
      const int pair = ConditionedEval::unpack_pair(key);
      std::int64_t rem = ConditionedEval::unpack_rem(key);
      const int s = proc.aug().base_state[pair];
      const std::int64_t c = proc.aug().cum_units[pair];
      if (f.mode == ConditioningFunction::Mode::Table)
        rem = f.remaining_at(s, c, rem);

      if (fb == RolloutFallback::Snap && rem != kNoTarget) {
        std::vector<std::int64_t> supported;
        if (pol.targets_fn) {
          supported = pol.targets_fn(t, s, c);
        } else if (const int p = proc.aug().index_of(s, c); p >= 0) {
          supported = proc.supported_targets(t, p);
        }
        if (!supported.empty() &&
            !std::binary_search(supported.begin(), supported.end(), rem)) {
          std::int64_t best = kNoTarget;
          for (const auto v : supported) {
            if (best == kNoTarget ||
                std::llabs(v - rem) < std::llabs(best - rem) ||
                (std::llabs(v - rem) == std::llabs(best - rem) && v > best))
              best = v;
          }
          rem = best;
        }
      }
      auto dist = pol.query(t, s, c, rem);
      if (!dist) {
        if (fb == RolloutFallback::Error) throw UnsupportedTargetError(t, s, rem);
        ev.fallback_mass += w;
        try {
          proc.action_marginal(t, pair, pi);
          dist = std::vector<double>(pi.begin(), pi.end());
        } catch (const UnsupportedStateError&) {
          dist = std::vector<double>(A, 1.0 / A);
        }
      }
      for (int a = 0; a < A; ++a) {
        const double pa = (*dist)[a];
        if (pa <= 0.0) continue;
        ev.J += w * pa * amdp.expected_reward_value(pair, a);
        for (const auto& o : amdp.outcomes(pair, a)) {
          if (o.prob <= 0.0) continue;
          const std::int64_t child_rem =
              rem == kNoTarget ? kNoTarget : rem - o.reward_units;
          nxt[ConditionedEval::pack(o.next, child_rem)] += w * pa * o.prob;
        }
      }
    }
    cur.swap(nxt);
  }
  return ev;
}

// J(pi_f) with the behavior completion at undefined states; the completion
// mass is reported alongside.
inline ConditionedEval rollout_value(ExactRcsl& r,
                                     RolloutFallback fb = RolloutFallback::Behavior) {
  return evaluate_conditioned(*r.process, r.policy, r.f, fb);
}

// E[f(s1)] under the data process's initial distribution, in reward value.
inline double expected_initial_target(const DataProcess& proc,
                                      const ConditioningFunction& f) {
  const auto mu = proc.mixture().initial_marginal(proc.base().num_states);
  double acc = 0.0;
  for (int s = 0; s < proc.base().num_states; ++s) {
    if (mu[s] <= 0.0) continue;
    const auto target = f.initial_target(s);
    if (target == kNoTarget)
      throw UnsupportedTargetError(1, s, target);
    acc += mu[s] * proc.base().reward_quantum.scale(target);
  }
  return acc;
}

// ----- finite-sample tabular RCSL -----

// Count table for the tabular maximum-likelihood RCSL fit, keyed by
// (timestep, state, cumulative units, remaining target units, action).
// Fallbacks for unseen keys: empirical behavior marginal, then uniform.
class EmpiricalRcsl {
 public:
  EmpiricalRcsl(int num_states, int num_actions, double smoothing)
      : num_states_(num_states), num_actions_(num_actions), smoothing_(smoothing),
        behavior_sa_(static_cast<std::size_t>(num_states) * num_actions, 0),
        behavior_s_(num_states, 0) {}

  void observe(const Trajectory& tau) {
    const std::int64_t total = tau.total_units();
    std::int64_t c = 0;
    for (int t = 1; t <= static_cast<int>(tau.states.size()); ++t) {
      const int s = tau.states[t - 1];
      const int a = tau.actions[t - 1];
      cell_[cell_key(t, s, c, total - c, a)] += 1;
      if (group_[group_key(t, s, c, total - c)]++ == 0)
        group_targets_[prefix_key(t, s, c)].push_back(
            static_cast<std::int32_t>(total - c));
      behavior_sa_[static_cast<std::size_t>(s) * num_actions_ + a] += 1;
      behavior_s_[s] += 1;
      c += tau.reward_units[t - 1];
    }
    ++n_traj_;
  }

  // Targets observed at (t, s, c), ascending.
  std::vector<std::int64_t> supported_targets(int t, int s, std::int64_t c) const {
    const auto it = group_targets_.find(prefix_key(t, s, c));
    if (it == group_targets_.end()) return {};
    std::vector<std::int64_t> out(it->second.begin(), it->second.end());
    std::sort(out.begin(), out.end());
    return out;
  }

  std::int64_t num_trajectories() const { return n_traj_; }
  double smoothing() const { return smoothing_; }

  bool seen(int t, int s, std::int64_t c, std::int64_t rem) const {
    return group_.count(group_key(t, s, c, rem)) > 0;
  }

  std::vector<double> query(int t, int s, std::int64_t c, std::int64_t rem) const {
    std::vector<double> out(num_actions_, 0.0);
    const auto git = group_.find(group_key(t, s, c, rem));
    if (git != group_.end()) {
      const double den = git->second + smoothing_ * num_actions_;
      for (int a = 0; a < num_actions_; ++a) {
        const auto it = cell_.find(cell_key(t, s, c, rem, a));
        const double n = it == cell_.end() ? 0.0 : it->second;
        out[a] = (n + smoothing_) / den;
      }
      return out;
    }
    if (behavior_s_[s] > 0) {
      for (int a = 0; a < num_actions_; ++a)
        out[a] = static_cast<double>(
                     behavior_sa_[static_cast<std::size_t>(s) * num_actions_ + a]) /
                 behavior_s_[s];
      return out;
    }
    std::fill(out.begin(), out.end(), 1.0 / num_actions_);
    return out;
  }

  // Empirical negative log likelihood of the fit on a dataset; +inf when an
  // observed action has probability zero under `rule`.
  template <typename Rule>
  static double nll(const std::vector<Trajectory>& data, const Rule& rule) {
    double acc = 0.0;
    for (const auto& tau : data) {
      const std::int64_t total = tau.total_units();
      std::int64_t c = 0;
      for (int t = 1; t <= static_cast<int>(tau.states.size()); ++t) {
        const double p = rule(t, tau.states[t - 1], c, total - c)[tau.actions[t - 1]];
        if (p <= 0.0) return std::numeric_limits<double>::infinity();
        acc -= std::log(p);
        c += tau.reward_units[t - 1];
      }
    }
    return acc;
  }

 private:
  static std::uint64_t group_key(int t, int s, std::int64_t c, std::int64_t rem) {
    if (rem < 0) rem = (1LL << 17) - 1;  // negative remainders are never observed
    return (static_cast<std::uint64_t>(t) << 56) |
           (static_cast<std::uint64_t>(static_cast<std::uint32_t>(s)) << 38) |
           (static_cast<std::uint64_t>(c) << 21) |
           (static_cast<std::uint64_t>(rem) << 4);
  }
  static std::uint64_t cell_key(int t, int s, std::int64_t c, std::int64_t rem,
                                int a) {
    return group_key(t, s, c, rem) | static_cast<std::uint64_t>(a);
  }
  static std::uint64_t prefix_key(int t, int s, std::int64_t c) {
    return (static_cast<std::uint64_t>(t) << 56) |
           (static_cast<std::uint64_t>(static_cast<std::uint32_t>(s)) << 38) |
           (static_cast<std::uint64_t>(c) << 21);
  }

  int num_states_;
  int num_actions_;
  double smoothing_;
  std::unordered_map<std::uint64_t, std::uint32_t> cell_;
  std::unordered_map<std::uint64_t, std::uint32_t> group_;
  std::unordered_map<std::uint64_t, std::vector<std::int32_t>> group_targets_;
  std::vector<std::int64_t> behavior_sa_;
  std::vector<std::int64_t> behavior_s_;
  std::int64_t n_traj_{0};
};

struct FittedRcsl {
  std::shared_ptr<EmpiricalRcsl> table;
  ConditionedPolicy policy;
};

inline FittedRcsl fit_empirical_rcsl(const std::vector<Trajectory>& data,
                                     double smoothing, int num_states,
                                     int num_actions) {
  if (data.empty()) throw std::invalid_argument("fit_empirical_rcsl: empty dataset");
  FittedRcsl fit;
  fit.table = std::make_shared<EmpiricalRcsl>(num_states, num_actions, smoothing);
  for (const auto& tau : data) fit.table->observe(tau);
  fit.policy.provenance = Provenance::Empirical;
  fit.policy.num_actions = num_actions;
  fit.policy.fn = [table = fit.table](int t, int s, std::int64_t c, std::int64_t rem)
      -> std::optional<std::vector<double>> { return table->query(t, s, c, rem); };
  fit.policy.targets_fn = [table = fit.table](int t, int s, std::int64_t c) {
    return table->supported_targets(t, s, c);
  };
  return fit;
}

// ----- expected KL loss (Reduction-to-SL objective) -----

// L(pihat) = E_{s ~ data marginal} E_{g ~ P_data(.|s)}
//                [ KL(P_data(.|s,g) || pihat(.|s,g)) ]
// computed exactly by a rolling backward sweep of per-component return
// distributions over the augmented pairs. Returns +inf if pihat puts zero mass
// where the data conditional is positive.
inline double expected_kl_loss(DataProcess& proc, const ConditionedPolicy& pihat) {
  const Mdp& amdp = proc.aug().mdp;
  const int H = amdp.horizon;
  const int A = amdp.num_actions;
  const int P = amdp.num_states;
  const int C = proc.num_components();
  const std::size_t width = static_cast<std::size_t>(amdp.max_return_units()) + 1;

  std::vector<detail::ReturnLevel> next(C);
  for (int c = 0; c < C; ++c) next[c] = detail::terminal_level(P, width);

  double loss = 0.0;
  std::vector<std::vector<double>> gact(A);  // per-action dists at current pair/comp
  for (int t = H; t >= 1; --t) {
    std::vector<detail::ReturnLevel> cur(C);
    for (int c = 0; c < C; ++c)
      cur[c].assign(P, std::vector<double>(width, 0.0));

    for (int pair = 0; pair < P; ++pair) {
      const double occ = proc.data_occupancy(t, pair);
      // action-conditional future-return dists, mixed over components
      std::vector<double> mix_state(width, 0.0);
      std::vector<std::vector<double>> mix_joint(A, std::vector<double>(width, 0.0));
      double wsum = 0.0;
      for (int c = 0; c < C; ++c) {
        const auto row = proc.lifted_behavior(c).row(t, pair);
        bool any = false;
        for (int a = 0; a < A; ++a) {
          if (row[a] <= 0.0) {
            gact[a].clear();
            continue;
          }
          gact[a] = detail::action_return_dist(amdp, next[c], pair, a, width);
          any = true;
        }
        if (any) {
          auto& dst = cur[c][pair];
          for (int a = 0; a < A; ++a) {
            if (gact[a].empty()) continue;
            for (std::size_t u = 0; u < width; ++u)
              dst[u] += row[a] * gact[a][u];
          }
        }
        const double w = proc.state_weight(c, t, pair);
        if (w <= 0.0) continue;
        wsum += w;
        for (int a = 0; a < A; ++a) {
          if (gact[a].empty()) continue;
          for (std::size_t u = 0; u < width; ++u) {
            const double m = w * row[a] * gact[a][u];
            mix_joint[a][u] += m;
            mix_state[u] += m;
          }
        }
      }
      if (occ <= 0.0 || wsum <= 0.0) continue;

      const int s = proc.aug().base_state[pair];
      const std::int64_t cu = proc.aug().cum_units[pair];
      for (std::size_t u = 0; u < width; ++u) {
        if (mix_state[u] <= 0.0) continue;
        const double pg = mix_state[u] / wsum;
        const auto pihat_dist =
            pihat.query(t, s, cu, static_cast<std::int64_t>(u));
        double kl = 0.0;
        for (int a = 0; a < A; ++a) {
          const double pa = mix_joint[a][u] / mix_state[u];
          if (pa <= 0.0) continue;
          const double qa = pihat_dist ? (*pihat_dist)[a] : 0.0;
          if (qa <= 0.0) return std::numeric_limits<double>::infinity();
          kl += pa * std::log(pa / qa);
        }
        loss += occ / H * pg * kl;
      }
    }
    next.swap(cur);
  }
  return loss;
}

// ----- history-conditioned (DT-style) exact variant, tiny horizons only -----

// Conditionals over full histories by exhaustive trajectory enumeration.
class HistoryRcsl {
 public:
  HistoryRcsl(const Mdp& m, const DataMixture& mix, std::int64_t target_units,
              std::size_t cap = 200000)
      : num_actions_(m.num_actions), target_(target_units) {
    if (m.horizon > 8)
      throw std::invalid_argument("exact_history_rcsl: horizon must be <= 8");
    const auto mu = mix.initial_marginal(m.num_states);
    for (int s1 = 0; s1 < m.num_states; ++s1) {
      if (mu[s1] <= 0.0) continue;
      Trajectory tau;
      std::vector<double> comp_probs(mix.components.size());
      for (std::size_t c = 0; c < mix.components.size(); ++c)
        comp_probs[c] =
            mix.components[c].weight * mix.components[c].initial_dist[s1];
      expand(m, mix, s1, 1, tau, comp_probs, cap);
    }
  }

  std::int64_t target_units() const { return target_; }
  std::size_t support_size() const { return support_.size(); }

  // Action conditional after observing `states`/`actions`/`units` so far;
  // `states` carries one more entry (the current state). Returns nullopt when
  // no data trajectory matches the history with total return == target.
  std::optional<std::vector<double>> query(std::span<const int> states,
                                           std::span<const int> actions,
                                           std::span<const std::int64_t> units) const {
    const std::size_t t = actions.size();  // 0-based step about to act
    std::vector<double> out(num_actions_, 0.0);
    double den = 0.0;
    for (const auto& [tau, w] : support_) {
      if (tau.total_units() != target_) continue;
      if (tau.states.size() <= t) continue;
      bool match = tau.states[t] == states[t];
      for (std::size_t i = 0; match && i < t; ++i)
        match = tau.states[i] == states[i] && tau.actions[i] == actions[i] &&
                tau.reward_units[i] == units[i];
      if (!match) continue;
      out[tau.actions[t]] += w;
      den += w;
    }
    if (den <= 0.0) return std::nullopt;
    for (auto& v : out) v /= den;
    return out;
  }

 private:
  void expand(const Mdp& m, const DataMixture& mix, int s, int t, Trajectory& tau,
              const std::vector<double>& comp_probs, std::size_t cap) {
    if (t > m.horizon) {
      double w = 0.0;
      for (double p : comp_probs) w += p;
      if (w > 0.0) {
        support_.emplace_back(tau, w);
        if (support_.size() > cap)
          throw HistorySizeError("exact_history_rcsl: trajectory count exceeds cap");
      }
      return;
    }
    for (int a = 0; a < m.num_actions; ++a) {
      std::vector<double> with_action(comp_probs.size(), 0.0);
      bool any = false;
      for (std::size_t c = 0; c < comp_probs.size(); ++c) {
        if (comp_probs[c] <= 0.0) continue;
        const double pa = mix.components[c].behavior.prob(t, s, a);
        if (pa <= 0.0) continue;
        with_action[c] = comp_probs[c] * pa;
        any = true;
      }
      if (!any) continue;
      for (const auto& o : m.outcomes(s, a)) {
        if (o.prob <= 0.0) continue;
        std::vector<double> child(with_action.size());
        for (std::size_t c = 0; c < child.size(); ++c)
          child[c] = with_action[c] * o.prob;
        tau.states.push_back(s);
        tau.actions.push_back(a);
        tau.reward_units.push_back(o.reward_units);
        expand(m, mix, o.next, t + 1, tau, child, cap);
        tau.states.pop_back();
        tau.actions.pop_back();
        tau.reward_units.pop_back();
      }
    }
  }

  int num_actions_;
  std::int64_t target_;
  std::vector<std::pair<Trajectory, double>> support_;
};

inline HistoryRcsl exact_history_rcsl(const Mdp& m, const DataMixture& mix,
                                      std::int64_t target_units,
                                      std::size_t cap = 200000) {
  return HistoryRcsl(m, mix, target_units, cap);
}

}  // namespace rcsl_lab
