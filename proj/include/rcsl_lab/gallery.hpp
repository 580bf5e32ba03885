#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcsl_lab/bounds.hpp"
#include "rcsl_lab/exact.hpp"
#include "rcsl_lab/mdp.hpp"
#include "rcsl_lab/rcsl.hpp"

#include <json.hpp>

namespace rcsl_lab {

// A gallery object: an MDP, its data-generating mixture, a canonical
// conditioning target where one exists, and machine-checkable expected values
// that are re-verified by the engine before the object is handed out.
struct GalleryInstance {
  std::string id;
  ordered_json params;
  Mdp mdp;
  DataMixture mixture;
  bool has_f{false};
  ConditioningFunction canonical_f;
  ordered_json expectations;
  // Per-step affine map back to the original reward scale:
  // original = return_scale * stored + return_offset (per step).
  double return_scale{1.0};
  double return_offset{0.0};

  const MarkovPolicy& behavior() const { return mixture.components.front().behavior; }
};

struct GalleryVerificationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace gallery_detail {

inline void check(std::vector<std::string>& report, const std::string& what,
                  double got, double want, double tol) {
  if (!(std::abs(got - want) <= tol))
    report.push_back(what + ": got " + std::to_string(got) + ", expected " +
                     std::to_string(want));
}

inline double param(const ordered_json& params, const std::string& name,
                    double fallback) {
  if (params.contains(name)) return params.at(name).get<double>();
  return fallback;
}

}  // namespace gallery_detail

// ----- Figure 1 bandit family -----

// Single Bernoulli arm: conditioning on return 1 is incompatible with the
// stochastic reward, and the alignment bound is tight up to constants.
inline GalleryInstance fig1a(double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 0.5))
    throw std::invalid_argument("fig1a: epsilon must be in (0, 0.5)");
  GalleryInstance g;
  g.id = "fig1a";
  g.params = {{"epsilon", epsilon}};
  g.mdp.num_states = 1;
  g.mdp.num_actions = 1;
  g.mdp.horizon = 1;
  g.mdp.reward_quantum = Rational(1, 1);
  g.mdp.initial_dist = {1.0};
  g.mdp.kernel = {{Outcome{0, 1, epsilon}, Outcome{0, 0, 1.0 - epsilon}}};
  g.mixture = DataMixture::single(g.mdp, MarkovPolicy::uniform(1, 1));
  g.has_f = true;
  g.canonical_f = ConditioningFunction::constant(1);
  g.expectations = {{"J_behavior", epsilon},
                    {"Ef_minus_J", 1.0 - epsilon},
                    {"alpha_f", epsilon},
                    {"skeleton_eps", epsilon}};
  return g;
}

// Two arms, uniform behavior: the deterministic arm pays 1-eps, the Bernoulli
// arm occasionally pays 1, so conditioning on 1 zeroes out the better arm.
inline GalleryInstance fig1b(double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 0.5))
    throw std::invalid_argument("fig1b: epsilon must be in (0, 0.5)");
  const Rational eps_rat = rationalize(epsilon, 10000000);
  GalleryInstance g;
  g.id = "fig1b";
  g.params = {{"epsilon", epsilon}};
  g.mdp.num_states = 1;
  g.mdp.num_actions = 2;
  g.mdp.horizon = 1;
  g.mdp.reward_quantum = Rational(1, eps_rat.den);
  g.mdp.initial_dist = {1.0};
  g.mdp.kernel.resize(2);
  g.mdp.kernel[0] = {Outcome{0, eps_rat.den - eps_rat.num, 1.0}};
  g.mdp.kernel[1] = {Outcome{0, eps_rat.den, epsilon},
                     Outcome{0, 0, 1.0 - epsilon}};
  g.mixture = DataMixture::single(g.mdp, MarkovPolicy::uniform(1, 2));
  g.has_f = true;
  g.canonical_f = ConditioningFunction::constant(eps_rat.den);  // value 1
  g.expectations = {{"pi_f_good_arm", 0.0},
                    {"Ef_minus_J", 1.0 - epsilon},
                    {"value_deficit", 1.0 - 2.0 * epsilon},
                    {"alpha_f", 0.5 * epsilon},
                    {"skeleton_eps", epsilon}};
  return g;
}

// Two Bernoulli arms reached through a first deterministic step. Both returns
// 0 and 1 are supported from either arm, so the RCSL bias persists for every
// conditioning function.
inline GalleryInstance fig1c(double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 0.5))
    throw std::invalid_argument("fig1c: epsilon must be in (0, 0.5)");
  GalleryInstance g;
  g.id = "fig1c";
  g.params = {{"epsilon", epsilon}};
  g.mdp.num_states = 3;  // decision, good arm, bad arm
  g.mdp.num_actions = 2;
  g.mdp.horizon = 2;
  g.mdp.reward_quantum = Rational(1, 1);
  g.mdp.initial_dist = {1.0, 0.0, 0.0};
  g.mdp.kernel.resize(6);
  g.mdp.kernel[g.mdp.sa(0, 0)] = {Outcome{1, 0, 1.0}};
  g.mdp.kernel[g.mdp.sa(0, 1)] = {Outcome{2, 0, 1.0}};
  for (int a = 0; a < 2; ++a) {
    g.mdp.kernel[g.mdp.sa(1, a)] = {Outcome{1, 1, 1.0 - epsilon},
                                    Outcome{1, 0, epsilon}};
    g.mdp.kernel[g.mdp.sa(2, a)] = {Outcome{2, 1, epsilon},
                                    Outcome{2, 0, 1.0 - epsilon}};
  }
  MarkovPolicy beta = MarkovPolicy::uniform(3, 2);
  beta.mutable_row(1, 0)[0] = epsilon;
  beta.mutable_row(1, 0)[1] = 1.0 - epsilon;
  g.mixture = DataMixture::single(g.mdp, beta);
  g.has_f = true;
  g.canonical_f = ConditioningFunction::constant(1);
  g.expectations = {{"pi_f_good_arm", 0.5},
                    {"Ef_minus_J", 0.5},
                    {"Jstar_minus_J", 0.5 - epsilon},
                    {"alpha_f", 2.0 * epsilon * (1.0 - epsilon)},
                    {"skeleton_eps", epsilon}};
  return g;
}

// ----- Loop MDP (exponential return coverage in a deterministic MDP) -----

// Four states, two actions, fully deterministic dynamics; all randomness sits
// in the behavior. Action a1 enters a reward-1 self-loop at s2, action a2 a
// reward-0.5 self-loop at s3, both escaping into the absorbing s4. The
// behavior at s2 is timestep-dependent (1/18 on first entry, 0.1 through step
// H/2+1, then collect-once-and-stop), which makes the return conditionals
// exactly geometric and concentrates the above-half-horizon mass on the single
// value H/2 + 1.
inline GalleryInstance fig_loop(int H) {
  if (H < 6 || H % 2 != 0)
    throw std::invalid_argument("fig_loop: H must be even and >= 6");
  GalleryInstance g;
  g.id = "fig_loop";
  g.params = {{"H", H}};
  g.mdp.num_states = 4;
  g.mdp.num_actions = 2;
  g.mdp.horizon = H;
  g.mdp.reward_quantum = Rational(1, 2);
  g.mdp.initial_dist = {1.0, 0.0, 0.0, 0.0};
  g.mdp.kernel.resize(8);
  g.mdp.kernel[g.mdp.sa(0, 0)] = {Outcome{1, 0, 1.0}};
  g.mdp.kernel[g.mdp.sa(0, 1)] = {Outcome{2, 0, 1.0}};
  g.mdp.kernel[g.mdp.sa(1, 0)] = {Outcome{1, 2, 1.0}};  // reward 1
  g.mdp.kernel[g.mdp.sa(1, 1)] = {Outcome{3, 0, 1.0}};
  g.mdp.kernel[g.mdp.sa(2, 0)] = {Outcome{2, 1, 1.0}};  // reward 0.5
  g.mdp.kernel[g.mdp.sa(2, 1)] = {Outcome{3, 0, 1.0}};
  g.mdp.kernel[g.mdp.sa(3, 0)] = {Outcome{3, 0, 1.0}};
  g.mdp.kernel[g.mdp.sa(3, 1)] = {Outcome{3, 0, 1.0}};

  std::vector<double> rows(static_cast<std::size_t>(H) * 4 * 2, 0.0);
  auto set_row = [&](int t, int s, double p_a1) {
    rows[(static_cast<std::size_t>(t - 1) * 4 + s) * 2] = p_a1;
    rows[(static_cast<std::size_t>(t - 1) * 4 + s) * 2 + 1] = 1.0 - p_a1;
  };
  for (int t = 1; t <= H; ++t) {
    set_row(t, 0, 0.4);
    double p_collect;
    if (t == 2) p_collect = 1.0 / 18.0;
    else if (t <= H / 2 + 1) p_collect = 0.1;
    else if (t == H / 2 + 2) p_collect = 1.0;
    else p_collect = 0.0;
    set_row(t, 1, p_collect);
    set_row(t, 2, 0.5);
    set_row(t, 3, 0.5);
  }
  g.mixture = DataMixture::single(
      g.mdp, MarkovPolicy::per_timestep(4, 2, H, std::move(rows)));
  g.has_f = true;
  // Smallest supported target above H/2, the subject of the sample-complexity
  // experiments. The skeleton-optimal target is H-1 (always-a1).
  g.canonical_f = ConditioningFunction::constant(2 * (H / 2 + 1));
  g.expectations = {{"skeleton_eps", 0.0},
                    {"conditional_base_a1", 0.1},
                    {"conditional_base_a2", 0.25},
                    {"conditional_coeff", 0.5},
                    {"tail_bound", 0.5 * std::pow(0.1, H / 2)},
                    {"optimal_target_units", 2 * (H - 1)}};
  return g;
}

// ----- Trajectory-stitching mixture -----

// Two data processes on a 3-state, H=2 MDP: the red process starts at s0,
// picks its first action uniformly and the bad action from s2; the blue
// process starts at s1 and deterministically reaches the reward. Dynamic
// programming stitches the optimal path from s0; trajectory-level
// conditioning cannot.
inline GalleryInstance stitching() {
  GalleryInstance g;
  g.id = "stitching";
  g.params = ordered_json::object();
  g.mdp.num_states = 3;
  g.mdp.num_actions = 2;
  g.mdp.horizon = 2;
  g.mdp.reward_quantum = Rational(1, 1);
  g.mdp.initial_dist = {0.5, 0.5, 0.0};
  g.mdp.kernel.resize(6);
  g.mdp.kernel[g.mdp.sa(0, 0)] = {Outcome{1, 0, 1.0}};
  g.mdp.kernel[g.mdp.sa(0, 1)] = {Outcome{2, 0, 1.0}};
  g.mdp.kernel[g.mdp.sa(1, 0)] = {Outcome{1, 0, 1.0}};
  g.mdp.kernel[g.mdp.sa(1, 1)] = {Outcome{2, 0, 1.0}};
  g.mdp.kernel[g.mdp.sa(2, 0)] = {Outcome{2, 0, 1.0}};
  g.mdp.kernel[g.mdp.sa(2, 1)] = {Outcome{2, 1, 1.0}};

  MarkovPolicy red = MarkovPolicy::uniform(3, 2);
  red.mutable_row(1, 2)[0] = 1.0;
  red.mutable_row(1, 2)[1] = 0.0;
  MarkovPolicy blue = MarkovPolicy::uniform(3, 2);
  for (int s = 0; s < 3; ++s) {
    blue.mutable_row(1, s)[0] = 0.0;
    blue.mutable_row(1, s)[1] = 1.0;
  }
  g.mixture.components.push_back({0.5, {1.0, 0.0, 0.0}, red});
  g.mixture.components.push_back({0.5, {0.0, 1.0, 0.0}, blue});
  g.has_f = true;
  g.canonical_f = ConditioningFunction::constant(0);
  g.expectations = {{"pi_a1_at_s1_given_g0", 0.5},
                    {"optimal_J_from_s0", 1.0},
                    {"history_support_for_optimal_prefix", 0.0},
                    {"J_mixture", 0.5}};
  return g;
}

// ----- Gridworld analog of the point-mass tasks -----

enum class GridReward { RingOfFire, Sparse, Dense };

inline GridReward parse_grid_reward(const std::string& name) {
  if (name == "ring_of_fire") return GridReward::RingOfFire;
  if (name == "sparse") return GridReward::Sparse;
  if (name == "dense") return GridReward::Dense;
  throw std::invalid_argument("unknown gridworld reward variant: " + name);
}

inline std::string grid_reward_name(GridReward v) {
  switch (v) {
    case GridReward::RingOfFire: return "ring_of_fire";
    case GridReward::Sparse: return "sparse";
    default: return "dense";
  }
}

// NxN grid, five actions (four moves and stay, bumps stay put), central goal
// cell, behavior = random walk biased toward the top-right corner. The ring
// variant's {-1, 0, 1} rewards are mapped to [0, 1] by r -> (r+1)/2; the map
// is recorded so returns can be translated back.
inline GalleryInstance gridworld(int size, GridReward variant, double bias,
                                 int horizon = 0) {
  if (size < 5 || size % 2 == 0)
    throw std::invalid_argument("gridworld: size must be odd and >= 5");
  if (bias < 0.0 || bias > 1.0)
    throw std::invalid_argument("gridworld: bias must be in [0, 1]");
  if (horizon <= 0) horizon = 2 * size;
  const int S = size * size;
  const int center = size / 2;
  GalleryInstance g;
  g.id = "gridworld";
  g.params = {{"size", size},
              {"variant", grid_reward_name(variant)},
              {"bias", bias},
              {"horizon", horizon}};
  g.mdp.num_states = S;
  g.mdp.num_actions = 5;
  g.mdp.horizon = horizon;
  g.mdp.initial_dist.assign(S, 0.0);
  g.mdp.initial_dist[0] = 1.0;  // bottom-left corner

  std::vector<std::int64_t> cell_units(S, 0);
  switch (variant) {
    case GridReward::RingOfFire:
      g.mdp.reward_quantum = Rational(1, 2);
      g.return_scale = 2.0;
      g.return_offset = -1.0;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const int cheb = std::max(std::abs(x - center), std::abs(y - center));
          cell_units[y * size + x] = cheb == 0 ? 2 : (cheb == 1 ? 0 : 1);
        }
      break;
    case GridReward::Sparse:
      g.mdp.reward_quantum = Rational(1, 1);
      cell_units[center * size + center] = 1;
      break;
    case GridReward::Dense:
      g.mdp.reward_quantum = Rational(1, 8);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double d = std::hypot(x - center, y - center);
          cell_units[y * size + x] = static_cast<std::int64_t>(
              std::llround(8.0 * std::max(0.0, 1.0 - d / size)));
        }
      break;
  }

  // actions: 0 up (+y), 1 down, 2 left, 3 right, 4 stay
  const int dx[5] = {0, 0, -1, 1, 0};
  const int dy[5] = {1, -1, 0, 0, 0};
  g.mdp.kernel.resize(static_cast<std::size_t>(S) * 5);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const int s = y * size + x;
      for (int a = 0; a < 5; ++a) {
        const int nx = std::clamp(x + dx[a], 0, size - 1);
        const int ny = std::clamp(y + dy[a], 0, size - 1);
        g.mdp.kernel[g.mdp.sa(s, a)] = {Outcome{ny * size + nx, cell_units[s], 1.0}};
      }
    }
  }

  std::vector<double> row(5, (1.0 - bias) / 5.0);
  row[0] += bias / 2.0;  // up
  row[3] += bias / 2.0;  // right
  std::vector<double> rows;
  rows.reserve(static_cast<std::size_t>(S) * 5);
  for (int s = 0; s < S; ++s) rows.insert(rows.end(), row.begin(), row.end());
  g.mixture = DataMixture::single(
      g.mdp, MarkovPolicy::stationary_rows(S, 5, std::move(rows)));
  g.expectations = {{"max_cell_units", *std::max_element(cell_units.begin(),
                                                         cell_units.end())}};
  return g;
}

// ----- verification -----

// Recomputes every attached expectation with the exact engine. Returns the
// list of mismatches; constructors abort on a non-empty report.
inline std::vector<std::string> verify_gallery(const GalleryInstance& g) {
  using gallery_detail::check;
  std::vector<std::string> report;
  if (const auto bad = validate(g.mdp); !bad.empty()) {
    report.push_back("mdp invalid: " + bad.front());
    return report;
  }
  if (const auto bad = validate(g.mixture); !bad.empty()) {
    report.push_back("mixture invalid: " + bad.front());
    return report;
  }

  const double eps =
      g.params.contains("epsilon") ? g.params["epsilon"].get<double>() : 0.0;

  if (g.id == "fig1a") {
    check(report, "J_behavior", evaluate(g.mdp, g.behavior()), eps, 1e-12);
    check(report, "skeleton_eps", extract_skeleton(g.mdp).epsilon, eps, 1e-12);
    auto r = exact_rcsl(g.mdp, g.mixture, g.canonical_f);
    const auto cc = coverage_constants(r);
    check(report, "alpha_f", cc.alpha_f_initial, eps, 1e-12);
    check(report, "Ef_minus_J", cc.Ef - cc.J_pif, 1.0 - eps, 1e-12);
  } else if (g.id == "fig1b") {
    check(report, "skeleton_eps", extract_skeleton(g.mdp).epsilon, eps, 1e-12);
    auto r = exact_rcsl(g.mdp, g.mixture, g.canonical_f);
    const auto pi = r.policy.query_strict(1, 0, 0, g.canonical_f.broadcast_target);
    check(report, "pi_f_good_arm", pi[0], 0.0, 1e-12);
    const auto cc = coverage_constants(r);
    check(report, "alpha_f", cc.alpha_f_initial, 0.5 * eps, 1e-12);
    check(report, "Ef_minus_J", cc.Ef - cc.J_pif, 1.0 - eps, 1e-10);
    const double deficit = g.mdp.expected_reward_value(0, 0) -
                           g.mdp.expected_reward_value(0, 1);
    check(report, "value_deficit", deficit, 1.0 - 2.0 * eps, 1e-9);
  } else if (g.id == "fig1c") {
    check(report, "skeleton_eps", extract_skeleton(g.mdp).epsilon, eps, 1e-12);
    auto r = exact_rcsl(g.mdp, g.mixture, g.canonical_f);
    const auto pi = r.policy.query_strict(1, 0, 0, 1);
    check(report, "pi_f_good_arm", pi[0], 0.5, 1e-12);
    const auto cc = coverage_constants(r);
    check(report, "alpha_f", cc.alpha_f_initial, 2.0 * eps * (1.0 - eps), 1e-12);
    check(report, "Ef_minus_J", cc.Ef - cc.J_pif, 0.5, 1e-12);
    check(report, "Jstar_minus_J", optimal_value(g.mdp) - cc.J_pif, 0.5 - eps,
          1e-12);
  } else if (g.id == "fig_loop") {
    const int H = g.mdp.horizon;
    check(report, "skeleton_eps", extract_skeleton(g.mdp).epsilon, 0.0, 0.0);
    const auto rd_a1 = return_dist(g.mdp, g.behavior(), 1, 0, 0);
    const auto rd_a2 = return_dist(g.mdp, g.behavior(), 1, 0, 1);
    for (int k = 1; k <= H / 2 - 1; ++k) {
      check(report, "P(g=" + std::to_string(k) + "|s1,a1)",
            rd_a1.prob_units(2 * k), 0.5 * std::pow(0.1, k), 1e-12);
      check(report, "P(g=" + std::to_string(k) + "|s1,a2)",
            rd_a2.prob_units(2 * k), 0.5 * std::pow(0.25, k), 1e-12);
    }
    const auto rd = trajectory_return_dist(g.mdp, g.behavior());
    const double tail = rd.tail_units(H + 1);  // value > H/2 in half units
    if (tail > 0.5 * std::pow(0.1, H / 2))
      report.push_back("tail mass above H/2 exceeds 0.5 * 0.1^(H/2)");
    // Skeleton-optimal conditioning is the always-a1 rollout.
    const auto f_opt = optimal_conditioning(g.mdp);
    if (f_opt.per_initial_targets[0] != 2 * (H - 1))
      report.push_back("optimal conditioning target is not 2(H-1) units");
  } else if (g.id == "stitching") {
    const auto mc = mixture_conditionals(g.mdp, g.mixture, 2, 1);
    check(report, "P_data(a1|s1@2)", mc.action_marginal[1], 0.5, 1e-12);
    auto r = exact_rcsl(g.mdp, g.mixture, g.canonical_f);
    const auto pi = r.policy.query_strict(2, 1, 0, 0);
    check(report, "pi(a1|s1,g_rem=0)", pi[1], 0.5, 1e-12);
    if (r.policy.query(1, 0, 0, 1))
      report.push_back("target 1 from s0 should be unsupported");
    Mdp from_s0 = g.mdp;
    from_s0.initial_dist = {1.0, 0.0, 0.0};
    check(report, "optimal_J_from_s0", optimal_value(from_s0), 1.0, 1e-12);
    const auto hist = exact_history_rcsl(g.mdp, g.mixture, 1);
    const int states[] = {0, 2};
    const int actions[] = {1};
    const std::int64_t units[] = {0};
    if (hist.query(states, actions, units))
      report.push_back("history (s0,a1,s2) with g=1 should have zero support");
  } else if (g.id == "gridworld") {
    if (g.params["bias"].get<double>() == 0.0) {
      const int size = g.params["size"].get<int>();
      const auto prof = occupancies(g.mdp, g.behavior());
      for (int y = 0; y < size && report.size() < 4; ++y)
        for (int x = 0; x < size; ++x)
          if (std::abs(prof.averaged[y * size + x] - prof.averaged[x * size + y]) >
              1e-12) {
            report.push_back("behavior occupancy not diagonal-symmetric");
            break;
          }
    }
  }
  return report;
}

inline GalleryInstance verified(GalleryInstance g) {
  if (const auto report = verify_gallery(g); !report.empty())
    throw GalleryVerificationError(g.id + ": " + report.front());
  return g;
}

// ----- registry -----

struct GalleryEntry {
  std::string id;
  std::string params_doc;
  std::function<GalleryInstance(const ordered_json&)> build;
};

inline const std::vector<GalleryEntry>& gallery_registry() {
  using gallery_detail::param;
  static const std::vector<GalleryEntry> entries = {
      {"fig1a", "epsilon in (0,0.5), default 0.1",
       [](const ordered_json& p) { return verified(fig1a(param(p, "epsilon", 0.1))); }},
      {"fig1b", "epsilon in (0,0.5), default 0.1",
       [](const ordered_json& p) { return verified(fig1b(param(p, "epsilon", 0.1))); }},
      {"fig1c", "epsilon in (0,0.5), default 0.1",
       [](const ordered_json& p) { return verified(fig1c(param(p, "epsilon", 0.1))); }},
      {"fig_loop", "H even >= 6, default 20",
       [](const ordered_json& p) {
         return verified(fig_loop(static_cast<int>(param(p, "H", 20))));
       }},
      {"stitching", "no parameters",
       [](const ordered_json&) { return verified(stitching()); }},
      {"gridworld",
       "size odd >= 5 (default 7); variant ring_of_fire|sparse|dense "
       "(default sparse); bias in [0,1] (default 0.3); horizon (default 2*size)",
       [](const ordered_json& p) {
         const std::string variant =
             p.contains("variant") ? p.at("variant").get<std::string>() : "sparse";
         return verified(gridworld(static_cast<int>(param(p, "size", 7)),
                                   parse_grid_reward(variant), param(p, "bias", 0.3),
                                   static_cast<int>(param(p, "horizon", 0))));
       }},
  };
  return entries;
}

inline GalleryInstance build_gallery(const std::string& id,
                                     const ordered_json& params = {}) {
  for (const auto& e : gallery_registry())
    if (e.id == id) return e.build(params);
  throw std::invalid_argument("unknown gallery id: " + id);
}

}  // namespace rcsl_lab
