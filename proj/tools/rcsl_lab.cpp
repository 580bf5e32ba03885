// Command-line entry point for the tabular RCSL laboratory: gallery
// reproduction, exact analysis, learning runs, sweeps, and bound
// certification. Exit codes: 0 success, 1 usage error, 2 unsupported
// target / assumption failure, 3 verification or certification failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rcsl_lab/baselines.hpp"
#include "rcsl_lab/bounds.hpp"
#include "rcsl_lab/certify.hpp"
#include "rcsl_lab/data_io.hpp"
#include "rcsl_lab/gallery.hpp"
#include "rcsl_lab/parallel.hpp"
#include "rcsl_lab/rcsl.hpp"

namespace rl = rcsl_lab;
using rl::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitUnsupported = 2;
constexpr int kExitVerification = 3;

std::string g_invocation;

void emit_json(const std::string& path, const ordered_json& doc) {
  ordered_json out = doc;
  out["invocation"] = g_invocation;
  if (path.empty() || path == "-") {
    std::cout << out.dump(1) << "\n";
  } else {
    rl::write_file_atomic(path, out.dump(1) + "\n");
  }
}

// Common instance flags: an MDP given as a gallery id or a file, with the
// data process coming from the gallery, --behavior, or --mixture.
struct InstanceArgs {
  std::string mdp;
  std::string behavior_file;
  std::string mixture_file;
  double epsilon = 0.1;
  int H = 20;
  int size = 7;
  std::string variant = "sparse";
  double bias = 0.3;
  int grid_horizon = 0;

  void attach(CLI::App* cmd, bool required = true) {
    auto* opt = cmd->add_option("--mdp", mdp, "gallery id or .mdp.json path");
    if (required) opt->required();
    cmd->add_option("--behavior", behavior_file, "behavior .policy.json");
    cmd->add_option("--mixture", mixture_file, "data mixture .mixture.json");
    cmd->add_option("--epsilon", epsilon, "gallery epsilon parameter");
    cmd->add_option("--H", H, "gallery horizon parameter");
    cmd->add_option("--size", size, "gridworld size");
    cmd->add_option("--variant", variant, "gridworld reward variant");
    cmd->add_option("--bias", bias, "gridworld behavior bias");
    cmd->add_option("--grid-horizon", grid_horizon, "gridworld horizon override");
  }

  ordered_json gallery_params() const {
    return {{"epsilon", epsilon}, {"H", H},       {"size", size},
            {"variant", variant}, {"bias", bias}, {"horizon", grid_horizon}};
  }

  bool is_gallery_id(const std::string& name) const {
    for (const auto& e : rl::gallery_registry())
      if (e.id == name) return true;
    return false;
  }

  // Accepts "fig1a(0.05)" / "fig_loop(12)" shorthand as well.
  static std::optional<std::pair<std::string, double>> parenthesized(
      const std::string& name) {
    static const std::regex re(R"(^([a-z0-9_]+)\(([-0-9.eE]+)\)$)");
    std::smatch m;
    if (std::regex_match(name, m, re)) return {{m[1], std::stod(m[2])}};
    return std::nullopt;
  }

  struct Resolved {
    rl::Mdp mdp;
    rl::DataMixture mix;
    bool has_canonical_f{false};
    rl::ConditioningFunction canonical_f;
    double return_scale{1.0};
    double return_offset{0.0};
  };

  Resolved resolve() const {
    auto from_gallery = [](const rl::GalleryInstance& g) {
      Resolved r;
      r.mdp = g.mdp;
      r.mix = g.mixture;
      r.has_canonical_f = g.has_f;
      if (g.has_f) r.canonical_f = g.canonical_f;
      r.return_scale = g.return_scale;
      r.return_offset = g.return_offset;
      return r;
    };
    if (is_gallery_id(mdp)) return from_gallery(rl::build_gallery(mdp, gallery_params()));
    if (const auto ps = parenthesized(mdp)) {
      ordered_json params = gallery_params();
      if (ps->first == "fig_loop") params["H"] = static_cast<int>(ps->second);
      else params["epsilon"] = ps->second;
      return from_gallery(rl::build_gallery(ps->first, params));
    }
    Resolved r;
    r.mdp = rl::load_mdp(mdp);
    if (!mixture_file.empty()) {
      r.mix = rl::mixture_from_json(ordered_json::parse(rl::read_file(mixture_file)));
    } else if (!behavior_file.empty()) {
      r.mix = rl::DataMixture::single(
          r.mdp,
          rl::policy_from_json(ordered_json::parse(rl::read_file(behavior_file))));
    } else {
      r.mix = rl::DataMixture::single(
          r.mdp, rl::MarkovPolicy::uniform(r.mdp.num_states, r.mdp.num_actions));
    }
    return r;
  }
};

// Target resolution order: explicit JSON spec, explicit units, explicit value
// (converted through the quantum and required to land on the grid), then the
// gallery's canonical conditioning function.
rl::ConditioningFunction pick_conditioning(const InstanceArgs::Resolved& r,
                                           const std::string& spec,
                                           bool units_given, std::int64_t units,
                                           bool value_given, double value);

rl::ConditioningFunction pick_conditioning(const InstanceArgs::Resolved& r,
                                           const std::string& spec,
                                           bool units_given, std::int64_t units,
                                           bool value_given, double value) {
  if (!spec.empty()) {
    const auto j = ordered_json::parse(spec);
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "constant")
      return rl::ConditioningFunction::constant(
          j.at("target_units").get<std::int64_t>());
    if (mode == "table") {
      std::vector<std::tuple<int, std::int64_t, std::int64_t>> entries;
      for (const auto& e : j.at("entries"))
        entries.emplace_back(e.at("state").get<int>(),
                             e.value("cum_units", std::int64_t{0}),
                             e.at("target_units").get<std::int64_t>());
      return rl::ConditioningFunction::from_table(entries);
    }
    throw CLI::ValidationError("--conditioning", "mode must be constant or table");
  }
  if (units_given) return rl::ConditioningFunction::constant(units);
  if (value_given) {
    const double q = r.mdp.reward_quantum.value();
    const double raw = value / q;
    const auto u = static_cast<std::int64_t>(std::llround(raw));
    if (std::abs(raw - static_cast<double>(u)) > 1e-9)
      throw CLI::ValidationError(
          "--target", "value is not a multiple of the reward quantum " +
                          r.mdp.reward_quantum.str());
    return rl::ConditioningFunction::constant(u);
  }
  if (r.has_canonical_f) return r.canonical_f;
  return rl::ConditioningFunction::constant(0);
}

// ----- gallery -----

int run_gallery_list() {
  for (const auto& e : rl::gallery_registry())
    std::cout << e.id << "\t" << e.params_doc << "\n";
  return kExitOk;
}

int run_gallery_build(const InstanceArgs& args, const std::string& id,
                      const std::string& out_dir) {
  const auto g = rl::build_gallery(id, args.gallery_params());
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const auto base = fs::path(out_dir) / id;
  ordered_json meta = {{"gallery_id", g.id},
                       {"params", g.params},
                       {"expectations", g.expectations},
                       {"return_scale", g.return_scale},
                       {"return_offset", g.return_offset}};
  rl::save_mdp(base.string() + ".mdp.json", g.mdp, meta);
  rl::write_file_atomic(base.string() + ".mixture.json",
                        rl::mixture_to_json(g.mixture).dump(1) + "\n");
  ordered_json exp = {{"gallery_id", g.id},
                      {"params", g.params},
                      {"mdp_hash", rl::mdp_hash(g.mdp)},
                      {"expectations", g.expectations}};
  rl::write_file_atomic(base.string() + ".expectations.json", exp.dump(1) + "\n");
  std::cout << "wrote " << base.string()
            << ".{mdp.json,mixture.json,expectations.json}"
            << " (construction expectations verified)\n";
  return kExitOk;
}

int run_gallery_verify(const InstanceArgs& args, const std::string& id) {
  const auto g = rl::build_gallery(id, args.gallery_params());
  const auto report = rl::verify_gallery(g);
  if (!report.empty()) {
    for (const auto& r : report) std::cout << "FAIL " << r << "\n";
    return kExitVerification;
  }
  std::cout << "verified " << id << " " << g.params.dump() << "\n";
  for (const auto& [k, v] : g.expectations.items())
    std::cout << "  " << k << " = " << v.dump() << "\n";
  if (id == "fig1c") {
    auto r = rl::exact_rcsl(g.mdp, g.mixture, g.canonical_f);
    std::cout << "  pi_f(a1|s1) = " << r.policy.query_strict(1, 0, 0, 1)[0]
              << "\n";
  }
  return kExitOk;
}

// ----- analyze -----

int run_analyze(const std::string& mode, const InstanceArgs& args,
                const std::string& conditioning_spec, bool units_given,
                std::int64_t target_units, bool value_given, double target_value,
                double rho, const std::string& json_out, bool monte_carlo,
                std::int64_t mc_episodes, std::uint64_t mc_seed) {
  const auto resolved = args.resolve();
  const auto& mdp = resolved.mdp;
  const auto& mix = resolved.mix;
  ordered_json out;
  out["mode"] = mode;
  out["mdp_hash"] = rl::mdp_hash(mdp);

  const double j_beta = [&] {
    double j = 0.0;
    for (const auto& c : mix.components) {
      rl::Mdp with_mu = mdp;
      with_mu.initial_dist = c.initial_dist;
      j += c.weight * rl::evaluate(with_mu, c.behavior);
    }
    return j;
  }();

  if (mode == "evaluate") {
    rl::DataProcess proc(mdp, mix);
    const auto rd = proc.data_return_dist();
    out["J"] = j_beta;
    out["return_mean"] = mdp.reward_quantum.scale(1) * rd.mean_units();
    out["return_support"] = rd.support_size();
    if (monte_carlo) {
      double sum = 0.0;
      for (std::int64_t i = 0; i < mc_episodes; ++i)
        sum += mdp.reward_quantum.scale(
            rl::sample_mixture_trajectory(mdp, mix, mc_seed, i).total_units());
      out["J_monte_carlo"] = sum / static_cast<double>(mc_episodes);
      out["mc_episodes"] = mc_episodes;
    }
    std::cout << "J = " << j_beta << "\n";
    emit_json(json_out, out);
    return kExitOk;
  }

  if (mode == "exact-rcsl") {
    const auto f = pick_conditioning(resolved, conditioning_spec, units_given,
                                     target_units, value_given, target_value);
    try {
      auto r = rl::exact_rcsl(mdp, mix, f);
      auto cc = rl::coverage_constants(r);
      const double j_star = [&] {
        rl::Mdp with_mu = mdp;
        with_mu.initial_dist = mix.initial_marginal(mdp.num_states);
        return rl::optimal_value(with_mu);
      }();
      out["J_pif"] = cc.J_pif;
      out["Ef"] = cc.Ef;
      out["J_behavior"] = j_beta;
      out["J_star"] = j_star;
      out["regret"] = j_star - cc.J_pif;
      out["alpha_f_initial"] = cc.alpha_f_initial;
      out["alpha_f_all"] = cc.alpha_f_all;
      out["C_f"] = std::isinf(cc.C_f) ? ordered_json("inf") : ordered_json(cc.C_f);
      out["fallback_mass"] = cc.fallback_mass;
      const auto mu = mix.initial_marginal(mdp.num_states);
      ordered_json rows = ordered_json::array();
      for (int s1 = 0; s1 < mdp.num_states; ++s1) {
        if (mu[s1] <= 0.0) continue;
        const auto pi = r.policy.query_strict(1, s1, 0, f.initial_target(s1));
        rows.push_back(
            {{"state", s1}, {"target_units", f.initial_target(s1)}, {"pi", pi}});
      }
      out["initial_policy"] = rows;
      std::cout << "J(pi_f) = " << cc.J_pif << ", E[f] = " << cc.Ef
                << ", regret vs optimal = " << j_star - cc.J_pif << "\n";
      for (const auto& row : rows)
        std::cout << "  pi_f(.|s" << row["state"] << ", target "
                  << row["target_units"] << ") = " << row["pi"].dump() << "\n";
      emit_json(json_out, out);
      return kExitOk;
    } catch (const rl::UnsupportedTargetError& e) {
      ordered_json err = {{"error", "unsupported_target"},
                          {"timestep", e.timestep},
                          {"state", e.state},
                          {"target_units", e.target_units}};
      emit_json(json_out, err);
      return kExitUnsupported;
    }
  }

  if (mode == "top-bc") {
    auto top = rl::exact_top_bc(mdp, mix, rho);
    const auto& am = top.process->aug();
    const auto mu = am.lift_initial(mix.initial_marginal(mdp.num_states));
    const double j = rl::evaluate_fn(am.mdp, rl::as_decision_fn(top.policy), mu);
    out["rho"] = rho;
    out["g_rho_units"] = top.spec.g_rho_units;
    out["g_rho"] = mdp.reward_quantum.scale(top.spec.g_rho_units);
    out["alpha_rho"] = top.spec.alpha_rho;
    out["J_pirho"] = j;
    out["J_behavior"] = j_beta;
    std::cout << "J(pi_rho) = " << j << " at rho = " << rho
              << " (g_rho = " << out["g_rho"] << ")\n";
    emit_json(json_out, out);
    return kExitOk;
  }

  if (mode == "dp") {
    rl::Mdp with_mu = mdp;
    with_mu.initial_dist = mix.initial_marginal(mdp.num_states);
    const auto star = rl::optimal_policy(with_mu);
    out["J_star"] = rl::evaluate(with_mu, star);
    out["J_behavior"] = j_beta;
    ordered_json greedy = ordered_json::array();
    for (int s = 0; s < mdp.num_states; ++s) {
      int a = 0;
      const auto row = star.row(1, s);
      for (int i = 0; i < mdp.num_actions; ++i)
        if (row[i] > 0.5) a = i;
      greedy.push_back(a);
    }
    out["greedy_t1"] = greedy;
    std::cout << "J(pi*) = " << out["J_star"] << "\n";
    emit_json(json_out, out);
    return kExitOk;
  }

  throw CLI::ValidationError("analyze", "unknown mode " + mode);
}

// ----- learn -----

struct LearnResult {
  double J{0.0};
  ordered_json extra;
};

LearnResult learn_once(const std::string& algo, const rl::Mdp& mdp,
                       const rl::DataMixture& mix,
                       const std::vector<rl::Trajectory>& data, double smoothing,
                       double rho, double value_floor, std::int64_t target_units,
                       bool target_max_seen, bool snap) {
  LearnResult res;
  if (algo == "dp") {
    const auto pol = rl::offline_q_iteration(data, mdp, value_floor);
    res.J = rl::evaluate(mdp, pol);
    return res;
  }
  if (algo == "bc" || algo == "top-bc") {
    const auto bc =
        algo == "bc"
            ? rl::fit_bc(data, smoothing, mdp.num_states, mdp.num_actions)
            : rl::fit_top_bc(data, rho, smoothing, mdp.num_states,
                             mdp.num_actions);
    rl::DataProcess proc(mdp, mix);
    const auto& am = proc.aug();
    res.J = rl::evaluate_fn(
        am.mdp,
        [&](int t, int pair, std::span<double> out) {
          const auto q = bc.query(t, am.base_state[pair], am.cum_units[pair]);
          std::copy(q.begin(), q.end(), out.begin());
        },
        am.lift_initial(mix.initial_marginal(mdp.num_states)));
    return res;
  }
  if (algo == "rcsl") {
    std::int64_t target = target_units;
    if (target_max_seen) {
      target = 0;
      for (const auto& tau : data) target = std::max(target, tau.total_units());
    }
    const auto fit =
        rl::fit_empirical_rcsl(data, smoothing, mdp.num_states, mdp.num_actions);
    rl::DataProcess proc(mdp, mix);
    const auto f = rl::ConditioningFunction::constant(target);
    const auto ev = rl::evaluate_conditioned(
        proc, fit.policy, f,
        snap ? rl::RolloutFallback::Snap : rl::RolloutFallback::Behavior);
    res.J = ev.J;
    res.extra = {{"target_units", target}};
    const auto mu = mix.initial_marginal(mdp.num_states);
    for (int s1 = 0; s1 < mdp.num_states; ++s1) {
      if (mu[s1] <= 0.0) continue;
      const auto pi = *fit.policy.query(1, s1, 0, target);
      res.extra["first_action_argmax"] =
          static_cast<int>(std::max_element(pi.begin(), pi.end()) - pi.begin());
      break;
    }
    return res;
  }
  throw CLI::ValidationError("learn", "unknown algorithm " + algo);
}

int run_learn(const std::string& algo, const InstanceArgs& args,
              const std::string& dataset_file, std::int64_t n, int seeds,
              std::uint64_t master_seed, double smoothing, double rho,
              double value_floor, bool units_given, std::int64_t target_units,
              bool value_given, double target_value, bool target_max_seen,
              bool snap, const std::string& json_out) {
  const auto resolved = args.resolve();
  const auto& mdp = resolved.mdp;
  const auto& mix = resolved.mix;
  if (!target_max_seen) {
    const auto f = pick_conditioning(resolved, "", units_given, target_units,
                                     value_given, target_value);
    target_units = f.broadcast_target;
  }
  std::vector<LearnResult> results;
  if (!dataset_file.empty()) {
    const auto d = rl::load_dataset(dataset_file, &mdp);
    if (d.trajectories.empty())
      throw CLI::ValidationError("--dataset", "dataset is empty");
    results.push_back(learn_once(algo, mdp, mix, d.trajectories, smoothing, rho,
                                 value_floor, target_units, target_max_seen,
                                 snap));
  } else {
    if (n <= 0) throw CLI::ValidationError("--n", "need --dataset or --n > 0");
    results.resize(seeds);
    rl::parallel_for(static_cast<std::size_t>(seeds), [&](std::size_t i) {
      const auto data =
          rl::generate(mdp, mix, n, rl::derive_stream_seed(master_seed, i))
              .trajectories;
      results[i] = learn_once(algo, mdp, mix, data, smoothing, rho, value_floor,
                              target_units, target_max_seen, snap);
    });
  }
  double mean = 0.0;
  for (const auto& r : results) mean += r.J / results.size();
  double var = 0.0;
  for (const auto& r : results) var += (r.J - mean) * (r.J - mean);
  const double sd =
      results.size() > 1 ? std::sqrt(var / (results.size() - 1)) : 0.0;

  ordered_json out;
  out["algo"] = algo;
  out["seeds"] = results.size();
  out["J_mean"] = mean;
  out["J_sd"] = sd;
  ordered_json per_seed = ordered_json::array();
  for (const auto& r : results)
    per_seed.push_back({{"J", r.J}, {"extra", r.extra}});
  out["runs"] = per_seed;
  std::cout << algo << ": J = " << mean << " +- " << sd << " over "
            << results.size() << " run(s)\n";
  emit_json(json_out, out);
  return kExitOk;
}

// ----- sweep -----

int run_sweep(const std::string& param, const std::vector<double>& values,
              const std::string& algo, const InstanceArgs& args, std::int64_t n,
              int seeds, std::uint64_t master_seed, double smoothing, double rho,
              double value_floor, std::int64_t target_units, bool target_max_seen,
              const std::string& csv_out) {
  struct Cell {
    double value;
    int seed;
    LearnResult res;
  };
  std::vector<Cell> cells(values.size() * static_cast<std::size_t>(seeds));
  rl::parallel_for(cells.size(), [&](std::size_t idx) {
    const std::size_t vi = idx / seeds;
    const int seed = static_cast<int>(idx % seeds);
    InstanceArgs cell_args = args;
    std::int64_t cell_n = n;
    double cell_rho = rho;
    std::int64_t cell_target = target_units;
    if (param == "N") cell_n = static_cast<std::int64_t>(values[vi]);
    else if (param == "epsilon") cell_args.epsilon = values[vi];
    else if (param == "rho") cell_rho = values[vi];
    else if (param == "target") cell_target = static_cast<std::int64_t>(values[vi]);
    const auto resolved = cell_args.resolve();
    const auto data = rl::generate(resolved.mdp, resolved.mix, cell_n,
                                   rl::derive_stream_seed(master_seed, idx))
                          .trajectories;
    cells[idx] = {values[vi], seed,
                  learn_once(algo, resolved.mdp, resolved.mix, data, smoothing,
                             cell_rho, value_floor, cell_target, target_max_seen,
                             false)};
  });

  std::ostringstream csv;
  csv << "param,value,seed,metric,measurement\n";
  for (const auto& c : cells) {
    csv << param << "," << c.value << "," << c.seed << ",J," << c.res.J << "\n";
    if (c.res.extra.contains("first_action_argmax"))
      csv << param << "," << c.value << "," << c.seed << ",first_action_argmax,"
          << c.res.extra["first_action_argmax"] << "\n";
  }
  if (!csv_out.empty()) {
    rl::write_file_atomic(csv_out, csv.str());
  } else {
    std::cout << csv.str();
  }
  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    std::vector<double> js;
    for (const auto& c : cells)
      if (c.value == values[vi]) js.push_back(c.res.J);
    std::sort(js.begin(), js.end());
    std::cout << "# " << param << " = " << values[vi]
              << ": median J = " << js[js.size() / 2] << "\n";
  }
  return kExitOk;
}

// ----- dataset -----

int run_dataset(const InstanceArgs& args, std::int64_t n,
                std::uint64_t master_seed, const std::string& out) {
  const auto resolved = args.resolve();
  const auto d = rl::generate(resolved.mdp, resolved.mix, n, master_seed);
  rl::save_dataset(out, d);
  std::cout << "wrote " << out << " (" << d.size() << " trajectories, mdp "
            << d.mdp_hash << ")\n";
  return kExitOk;
}

// ----- certify -----

int run_certify(const std::string& bound, const std::string& instance,
                const InstanceArgs& args, std::int64_t random_n,
                std::uint64_t seed, std::int64_t fit_n, double smoothing,
                double rho, const std::string& jsonl_out) {
  std::vector<rl::CertifyRecord> records;
  if (random_n > 0) {
    records = rl::certify_random_suite(bound, static_cast<std::size_t>(random_n),
                                       seed, {}, fit_n, smoothing);
  } else {
    if (instance.empty())
      throw CLI::ValidationError("certify", "need --instance or --random");
    InstanceArgs inst_args = args;
    inst_args.mdp = instance;
    const auto resolved = inst_args.resolve();
    rl::CertifyInstance inst;
    inst.mdp = resolved.mdp;
    inst.mixture = resolved.mix;
    inst.seed = seed;
    inst.has_f = resolved.has_canonical_f;
    if (inst.has_f) inst.f = resolved.canonical_f;
    rl::SplitMix64 rng(seed);
    inst.pi_a = rl::certify_detail::random_policy(rng, inst.mdp.num_states,
                                                  inst.mdp.num_actions, 0.0);
    inst.pi_b = rl::certify_detail::random_policy(rng, inst.mdp.num_states,
                                                  inst.mdp.num_actions, 0.0);
    inst.rho = rho;
    records.push_back(rl::certify_instance(inst, bound, fit_n, smoothing));
  }

  std::ostringstream lines;
  for (const auto& rec : records) {
    for (const auto& rep : rec.reports) {
      ordered_json line = rep.to_json();
      line["instance"] = rec.index;
      lines << line.dump() << "\n";
    }
  }
  if (!jsonl_out.empty()) rl::write_file_atomic(jsonl_out, lines.str());
  else std::cout << lines.str();

  const auto s = rl::summarize(records);
  std::cout << "# instances " << s.instances << ", checks " << s.checks
            << ", violations " << s.violations << ", not-applicable "
            << s.not_applicable << "\n";
  if (s.violations > 0) return kExitVerification;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 0; i < argc; ++i) {
    if (i) g_invocation += " ";
    g_invocation += argv[i];
  }

  CLI::App app{"rcsl-lab: exact laboratory for return-conditioned supervised "
               "learning on finite-horizon tabular MDPs"};
  app.set_config("--config", "", "read flags from a TOML/INI file");
  app.require_subcommand(1);

  // gallery
  auto* gallery = app.add_subcommand("gallery", "build and verify example MDPs");
  gallery->require_subcommand(1);
  auto* glist = gallery->add_subcommand("list", "list gallery ids");
  std::string gallery_id, out_dir = ".";
  InstanceArgs gbuild_args, gverify_args;
  auto* gbuild = gallery->add_subcommand("build", "construct and write to files");
  gbuild->add_option("id", gallery_id, "gallery id")->required();
  gbuild->add_option("--out-dir", out_dir, "output directory");
  gbuild_args.attach(gbuild, false);
  auto* gverify =
      gallery->add_subcommand("verify", "re-check attached expectations");
  gverify->add_option("id", gallery_id, "gallery id")->required();
  gverify_args.attach(gverify, false);

  // analyze
  auto* analyze = app.add_subcommand("analyze", "exact analysis of an instance");
  std::string analyze_mode;
  analyze->add_option("mode", analyze_mode, "exact-rcsl | top-bc | dp | evaluate")
      ->required();
  InstanceArgs analyze_args;
  analyze_args.attach(analyze);
  std::string conditioning_spec, json_out;
  std::int64_t target_units = 0;
  double target_value = 0.0;
  double rho = 1.0;
  bool monte_carlo = false;
  std::int64_t mc_episodes = 100;
  std::uint64_t mc_seed = 0;
  analyze->add_option("--conditioning", conditioning_spec,
                      "conditioning function as JSON");
  auto* analyze_tu = analyze->add_option(
      "--target-units", target_units, "constant conditioning target in quantum units");
  auto* analyze_tv = analyze->add_option(
      "--target", target_value, "constant conditioning target in reward value");
  analyze->add_option("--rho", rho, "top-%BC fraction");
  analyze->add_option("--json", json_out, "write machine-readable output here");
  analyze->add_flag("--monte-carlo", monte_carlo,
                    "cross-check evaluation by sampling");
  analyze->add_option("--mc-episodes", mc_episodes, "episodes for --monte-carlo");
  analyze->add_option("--mc-seed", mc_seed, "seed for --monte-carlo");

  // learn
  auto* learn = app.add_subcommand("learn", "fit on data, evaluate exactly");
  std::string learn_algo, dataset_file;
  learn->add_option("algo", learn_algo, "rcsl | bc | top-bc | dp")->required();
  InstanceArgs learn_args;
  learn_args.attach(learn);
  std::int64_t learn_n = 0;
  int learn_seeds = 1;
  std::uint64_t master_seed = 0;
  double smoothing = 0.0, value_floor = 0.0;
  bool target_max_seen = false, snap = false;
  learn->add_option("--dataset", dataset_file, "existing .traj.jsonl dataset");
  learn->add_option("--n", learn_n, "trajectories to generate per seed");
  learn->add_option("--seeds", learn_seeds, "number of generation seeds");
  learn->add_option("--master-seed", master_seed, "master seed");
  learn->add_option("--smoothing", smoothing, "additive smoothing");
  learn->add_option("--rho", rho, "top-%BC fraction");
  learn->add_option("--value-floor", value_floor, "DP pessimism floor");
  auto* learn_tu =
      learn->add_option("--target-units", target_units, "RCSL conditioning target");
  auto* learn_tv = learn->add_option("--target", target_value,
                                     "RCSL conditioning target in reward value");
  learn->add_flag("--target-max-seen", target_max_seen,
                  "condition on the best return in the dataset");
  learn->add_flag("--snap", snap, "snap unsupported targets to the nearest one");
  learn->add_option("--json", json_out, "write machine-readable output here");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "grid experiments, CSV output");
  std::string sweep_param, sweep_algo = "rcsl", csv_out;
  std::vector<double> sweep_values;
  sweep->add_option("--param", sweep_param, "N | epsilon | rho | target")
      ->required();
  sweep->add_option("--values", sweep_values, "grid values")
      ->required()
      ->delimiter(',');
  sweep->add_option("--algo", sweep_algo, "rcsl | bc | top-bc | dp");
  InstanceArgs sweep_args;
  sweep_args.attach(sweep);
  sweep->add_option("--n", learn_n, "dataset size (unless sweeping N)");
  sweep->add_option("--seeds", learn_seeds, "seeds per cell");
  sweep->add_option("--master-seed", master_seed, "master seed");
  sweep->add_option("--smoothing", smoothing, "additive smoothing");
  sweep->add_option("--rho", rho, "top-%BC fraction (unless sweeping rho)");
  sweep->add_option("--value-floor", value_floor, "DP pessimism floor");
  sweep->add_option("--target-units", target_units, "RCSL target (unless swept)");
  sweep->add_flag("--target-max-seen", target_max_seen,
                  "condition on the best return in the dataset");
  sweep->add_option("--csv", csv_out, "write long-format CSV here");

  // dataset
  auto* dataset = app.add_subcommand("dataset", "sample and persist trajectories");
  InstanceArgs dataset_args;
  dataset_args.attach(dataset);
  std::int64_t dataset_n = 0;
  std::uint64_t dataset_seed = 0;
  std::string dataset_out;
  dataset->add_option("--n", dataset_n, "trajectory count")->required();
  dataset->add_option("--master-seed", dataset_seed, "master seed");
  dataset->add_option("--out", dataset_out, "output .traj.jsonl path")->required();

  // certify
  auto* certify = app.add_subcommand("certify", "check theorem instances");
  std::string bound, instance;
  std::int64_t random_n = 0, fit_n = 1000;
  std::uint64_t certify_seed = 0;
  double certify_smoothing = 1.0, certify_rho = 0.25;
  certify->add_option("--bound", bound,
                      "thm1 | cor1.1 | cor1.2 | thm2 | cor2-reduction | lemma1 | "
                      "thm3-topbc | thm4-topbc | all")
      ->required();
  certify->add_option("--instance", instance, "gallery id, id(param), or file");
  InstanceArgs certify_args;
  certify_args.attach(certify, false);
  certify->add_option("--random", random_n, "randomized instance count");
  certify->add_option("--seed", certify_seed, "master seed");
  certify->add_option("--fit-n", fit_n, "dataset size for fitted-policy bounds");
  certify->add_option("--smoothing", certify_smoothing,
                      "smoothing for fitted-policy bounds");
  certify->add_option("--rho", certify_rho, "rho for single-instance top-%BC");
  std::string jsonl_out;
  certify->add_option("--jsonl", jsonl_out, "write JSON-lines reports here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;  // --help and --version exit clean
  }

  try {
    if (glist->parsed()) return run_gallery_list();
    if (gbuild->parsed()) return run_gallery_build(gbuild_args, gallery_id, out_dir);
    if (gverify->parsed()) return run_gallery_verify(gverify_args, gallery_id);
    if (analyze->parsed())
      return run_analyze(analyze_mode, analyze_args, conditioning_spec,
                         analyze_tu->count() > 0, target_units,
                         analyze_tv->count() > 0, target_value, rho, json_out,
                         monte_carlo, mc_episodes, mc_seed);
    if (learn->parsed())
      return run_learn(learn_algo, learn_args, dataset_file, learn_n, learn_seeds,
                       master_seed, smoothing, rho, value_floor,
                       learn_tu->count() > 0, target_units,
                       learn_tv->count() > 0, target_value, target_max_seen, snap,
                       json_out);
    if (sweep->parsed())
      return run_sweep(sweep_param, sweep_values, sweep_algo, sweep_args, learn_n,
                       learn_seeds, master_seed, smoothing, rho, value_floor,
                       target_units, target_max_seen, csv_out);
    if (dataset->parsed())
      return run_dataset(dataset_args, dataset_n, dataset_seed, dataset_out);
    if (certify->parsed())
      return run_certify(bound, instance, certify_args, random_n, certify_seed,
                         fit_n, certify_smoothing, certify_rho, jsonl_out);
  } catch (const rl::UnsupportedTargetError& e) {
    ordered_json err = {{"error", "unsupported_target"},
                        {"timestep", e.timestep},
                        {"state", e.state},
                        {"target_units", e.target_units}};
    std::cout << err.dump() << "\n";
    return kExitUnsupported;
  } catch (const rl::UnsupportedStateError& e) {
    std::cout << ordered_json({{"error", "unsupported_state"}, {"what", e.what()}})
                     .dump()
              << "\n";
    return kExitUnsupported;
  } catch (const rl::GalleryVerificationError& e) {
    std::cerr << "verification failed: " << e.what() << "\n";
    return kExitVerification;
  } catch (const CLI::Error& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
