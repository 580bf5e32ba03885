#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rcsl_lab/exact.hpp"
#include "rcsl_lab/mdp.hpp"
#include "rcsl_lab/rng.hpp"

#include <json.hpp>

namespace rcsl_lab {

using ordered_json = nlohmann::ordered_json;

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ----- hashing -----

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ----- MDP document -----

// On-disk form uses separate transition and reward distributions per (s,a)
// when the kernel factorizes exactly (the standard case); correlated kernels
// (e.g. saved augmentations) fall back to a joint outcome list.
inline ordered_json mdp_to_json(const Mdp& m, const ordered_json& metadata = {}) {
  ordered_json j;
  j["num_states"] = m.num_states;
  j["num_actions"] = m.num_actions;
  j["horizon"] = m.horizon;
  j["reward_quantum"] = m.reward_quantum.str();
  j["initial_dist"] = m.initial_dist;

  bool factorizes = true;
  ordered_json transitions = ordered_json::array();
  ordered_json rewards = ordered_json::array();
  ordered_json joint = ordered_json::array();
  for (int s = 0; s < m.num_states && factorizes; ++s) {
    for (int a = 0; a < m.num_actions && factorizes; ++a) {
      std::map<int, double> tmarg;
      std::map<std::int64_t, double> rmarg;
      for (const auto& o : m.outcomes(s, a)) {
        tmarg[o.next] += o.prob;
        rmarg[o.reward_units] += o.prob;
      }
      for (const auto& o : m.outcomes(s, a)) {
        const double expect = tmarg[o.next] * rmarg[o.reward_units];
        if (std::abs(o.prob - expect) > 1e-14) factorizes = false;
      }
      if (tmarg.size() * rmarg.size() != m.outcomes(s, a).size()) factorizes = false;
    }
  }
  for (int s = 0; s < m.num_states; ++s) {
    ordered_json ts = ordered_json::array(), rs = ordered_json::array(),
                 js = ordered_json::array();
    for (int a = 0; a < m.num_actions; ++a) {
      std::map<int, double> tmarg;
      std::map<std::int64_t, double> rmarg;
      ordered_json jrow = ordered_json::array();
      for (const auto& o : m.outcomes(s, a)) {
        tmarg[o.next] += o.prob;
        rmarg[o.reward_units] += o.prob;
        jrow.push_back({{"next", o.next},
                        {"value_units", o.reward_units},
                        {"prob", o.prob}});
      }
      ordered_json trow = ordered_json::array(), rrow = ordered_json::array();
      for (const auto& [next, p] : tmarg) trow.push_back({{"next", next}, {"prob", p}});
      for (const auto& [units, p] : rmarg)
        rrow.push_back({{"value_units", units}, {"prob", p}});
      ts.push_back(trow);
      rs.push_back(rrow);
      js.push_back(jrow);
    }
    transitions.push_back(ts);
    rewards.push_back(rs);
    joint.push_back(js);
  }
  if (factorizes) {
    j["transitions"] = transitions;
    j["rewards"] = rewards;
  } else {
    j["kernel"] = joint;
  }
  if (!metadata.is_null() && !metadata.empty()) j["metadata"] = metadata;
  return j;
}

inline Mdp mdp_from_json(const ordered_json& j) {
  Mdp m;
  try {
    m.num_states = j.at("num_states").get<int>();
    m.num_actions = j.at("num_actions").get<int>();
    m.horizon = j.at("horizon").get<int>();
    m.reward_quantum = Rational::parse(j.at("reward_quantum").get<std::string>());
    m.initial_dist = j.at("initial_dist").get<std::vector<double>>();
    m.kernel.resize(static_cast<std::size_t>(m.num_states) * m.num_actions);
    if (j.contains("kernel")) {
      for (int s = 0; s < m.num_states; ++s)
        for (int a = 0; a < m.num_actions; ++a)
          for (const auto& o : j.at("kernel").at(s).at(a))
            m.kernel[m.sa(s, a)].push_back({o.at("next").get<int>(),
                                            o.at("value_units").get<std::int64_t>(),
                                            o.at("prob").get<double>()});
    } else {
      for (int s = 0; s < m.num_states; ++s) {
        for (int a = 0; a < m.num_actions; ++a) {
          std::vector<std::pair<int, double>> ts;
          std::vector<std::pair<std::int64_t, double>> rs;
          for (const auto& o : j.at("transitions").at(s).at(a))
            ts.emplace_back(o.at("next").get<int>(), o.at("prob").get<double>());
          for (const auto& o : j.at("rewards").at(s).at(a))
            rs.emplace_back(o.at("value_units").get<std::int64_t>(),
                            o.at("prob").get<double>());
          m.kernel[m.sa(s, a)] = product_kernel(ts, rs);
        }
      }
    }
  } catch (const ordered_json::exception& e) {
    throw ParseError(std::string("malformed MDP document: ") + e.what());
  }
  if (const auto report = validate(m); !report.empty())
    throw ParseError("MDP fails validation: " + report.front());
  return m;
}

// Content hash over the canonical (compact) serialization.
inline std::string mdp_hash(const Mdp& m) {
  return "fnv1a64:" + hex64(fnv1a64(mdp_to_json(m).dump()));
}

// ----- policy and mixture documents -----

inline ordered_json policy_to_json(const MarkovPolicy& p) {
  ordered_json j;
  j["num_states"] = p.num_states;
  j["num_actions"] = p.num_actions;
  j["stationary"] = p.stationary;
  if (!p.stationary) j["horizon"] = p.horizon;
  ordered_json blocks = ordered_json::array();
  const int nb = p.stationary ? 1 : p.horizon;
  for (int t = 1; t <= nb; ++t) {
    ordered_json rows = ordered_json::array();
    for (int s = 0; s < p.num_states; ++s) {
      const auto row = p.row(t, s);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    blocks.push_back(rows);
  }
  j["probs"] = blocks;
  return j;
}

inline MarkovPolicy policy_from_json(const ordered_json& j) {
  MarkovPolicy p;
  try {
    p.num_states = j.at("num_states").get<int>();
    p.num_actions = j.at("num_actions").get<int>();
    p.stationary = j.at("stationary").get<bool>();
    if (!p.stationary) p.horizon = j.at("horizon").get<int>();
    for (const auto& block : j.at("probs"))
      for (const auto& row : block)
        for (const auto& v : row) p.probs.push_back(v.get<double>());
  } catch (const ordered_json::exception& e) {
    throw ParseError(std::string("malformed policy document: ") + e.what());
  }
  if (const auto report = validate(p); !report.empty())
    throw ParseError("policy fails validation: " + report.front());
  return p;
}

inline ordered_json mixture_to_json(const DataMixture& mix) {
  ordered_json j;
  ordered_json comps = ordered_json::array();
  for (const auto& c : mix.components)
    comps.push_back({{"weight", c.weight},
                     {"initial_dist", c.initial_dist},
                     {"policy", policy_to_json(c.behavior)}});
  j["components"] = comps;
  return j;
}

inline DataMixture mixture_from_json(const ordered_json& j) {
  DataMixture mix;
  try {
    for (const auto& c : j.at("components"))
      mix.components.push_back({c.at("weight").get<double>(),
                                c.at("initial_dist").get<std::vector<double>>(),
                                policy_from_json(c.at("policy"))});
  } catch (const ordered_json::exception& e) {
    throw ParseError(std::string("malformed mixture document: ") + e.what());
  }
  if (const auto report = validate(mix); !report.empty())
    throw ParseError("mixture fails validation: " + report.front());
  return mix;
}

// ----- atomic file writes -----

inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& contents) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
    out << contents;
    if (!out.flush()) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void save_mdp(const std::filesystem::path& path, const Mdp& m,
                     const ordered_json& metadata = {}) {
  write_file_atomic(path, mdp_to_json(m, metadata).dump(1) + "\n");
}

inline Mdp load_mdp(const std::filesystem::path& path) {
  ordered_json j;
  try {
    j = ordered_json::parse(read_file(path));
  } catch (const ordered_json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return mdp_from_json(j);
}

// ----- datasets -----

// A multiset of sampled trajectories plus the generation provenance. The i-th
// trajectory always uses the stream seed derive_stream_seed(master_seed, i),
// so slices regenerate identically and generation order does not matter.
struct Dataset {
  std::string mdp_hash;
  std::uint64_t master_seed{0};
  ordered_json generator_meta;
  std::vector<Trajectory> trajectories;

  std::size_t size() const { return trajectories.size(); }
};

inline Trajectory sample_mixture_trajectory(const Mdp& m, const DataMixture& mix,
                                            std::uint64_t master_seed,
                                            std::uint64_t index) {
  SplitMix64 rng(derive_stream_seed(master_seed, index));
  int comp = 0;
  if (mix.components.size() > 1) {
    std::vector<double> w(mix.components.size());
    for (std::size_t c = 0; c < w.size(); ++c) w[c] = mix.components[c].weight;
    comp = rng.categorical(w);
  }
  const auto& component = mix.components[comp];
  Trajectory tau;
  tau.states.resize(m.horizon);
  tau.actions.resize(m.horizon);
  tau.reward_units.resize(m.horizon);
  int s = rng.categorical(component.initial_dist);
  for (int t = 1; t <= m.horizon; ++t) {
    const int a = rng.categorical(component.behavior.row(t, s));
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

inline Dataset generate(const Mdp& m, const DataMixture& mix, std::int64_t n,
                        std::uint64_t master_seed) {
  Dataset d;
  d.mdp_hash = mdp_hash(m);
  d.master_seed = master_seed;
  d.generator_meta = {{"generator", "splitmix64-counter-v1"},
                      {"n", n},
                      {"mixture", mixture_to_json(mix)}};
  d.trajectories.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    d.trajectories.push_back(sample_mixture_trajectory(m, mix, master_seed,
                                                       static_cast<std::uint64_t>(i)));
  return d;
}

inline Dataset generate(const Mdp& m, const MarkovPolicy& behavior, std::int64_t n,
                        std::uint64_t master_seed) {
  return generate(m, DataMixture::single(m, behavior), n, master_seed);
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& d) {
  std::ostringstream out;
  ordered_json header;
  header["format"] = "rcsl-lab-dataset-v1";
  header["mdp_hash"] = d.mdp_hash;
  header["master_seed"] = d.master_seed;
  header["n"] = d.trajectories.size();
  header["meta"] = d.generator_meta;
  out << header.dump() << "\n";
  for (const auto& tau : d.trajectories) {
    ordered_json line;
    line["s"] = tau.states;
    line["a"] = tau.actions;
    line["r_units"] = tau.reward_units;
    out << line.dump() << "\n";
  }
  write_file_atomic(path, out.str());
}

// `expected_mdp` enables the hash integrity check on load.
inline Dataset load_dataset(const std::filesystem::path& path,
                            const Mdp* expected_mdp = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Dataset d;
  std::string line;
  std::size_t line_no = 0;
  std::size_t offset = 0;
  std::size_t expected_n = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const ordered_json::exception& e) {
      throw ParseError(path.string() + ": parse error at line " +
                       std::to_string(line_no) + " (byte offset " +
                       std::to_string(offset) + "): " + e.what());
    }
    try {
      if (line_no == 1) {
        if (j.at("format").get<std::string>() != "rcsl-lab-dataset-v1")
          throw ParseError(path.string() + ": unknown dataset format");
        d.mdp_hash = j.at("mdp_hash").get<std::string>();
        d.master_seed = j.at("master_seed").get<std::uint64_t>();
        expected_n = j.at("n").get<std::size_t>();
        d.generator_meta = j.value("meta", ordered_json{});
      } else {
        Trajectory tau;
        tau.states = j.at("s").get<std::vector<int>>();
        tau.actions = j.at("a").get<std::vector<int>>();
        tau.reward_units = j.at("r_units").get<std::vector<std::int64_t>>();
        if (tau.actions.size() != tau.states.size() ||
            tau.reward_units.size() != tau.states.size())
          throw ParseError(path.string() + ": ragged trajectory at line " +
                           std::to_string(line_no));
        d.trajectories.push_back(std::move(tau));
      }
    } catch (const ordered_json::exception& e) {
      throw ParseError(path.string() + ": bad field at line " +
                       std::to_string(line_no) + ": " + e.what());
    }
    offset += line.size() + 1;
  }
  if (line_no == 0) throw ParseError(path.string() + ": empty dataset file");
  if (d.trajectories.size() != expected_n)
    throw ParseError(path.string() + ": header declares " +
                     std::to_string(expected_n) + " trajectories, found " +
                     std::to_string(d.trajectories.size()) +
                     " (file truncated at byte " + std::to_string(offset) + "?)");
  if (expected_mdp != nullptr) {
    const auto want = mdp_hash(*expected_mdp);
    if (d.mdp_hash != want)
      throw IntegrityError(path.string() + ": dataset hash " + d.mdp_hash +
                           " does not match MDP hash " + want);
    for (std::size_t i = 0; i < d.trajectories.size(); ++i) {
      const auto& tau = d.trajectories[i];
      if (static_cast<int>(tau.states.size()) != expected_mdp->horizon)
        throw IntegrityError(path.string() + ": trajectory " + std::to_string(i) +
                             " has wrong length");
      for (std::size_t t = 0; t < tau.states.size(); ++t) {
        if (tau.states[t] < 0 || tau.states[t] >= expected_mdp->num_states ||
            tau.actions[t] < 0 || tau.actions[t] >= expected_mdp->num_actions ||
            tau.reward_units[t] < 0)
          throw IntegrityError(path.string() + ": trajectory " +
                               std::to_string(i) + " fails validation");
      }
    }
  }
  return d;
}

}  // namespace rcsl_lab
