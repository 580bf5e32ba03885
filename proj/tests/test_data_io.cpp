#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "rcsl_lab/data_io.hpp"
#include "rcsl_lab/gallery.hpp"
#include "support/enumerate.hpp"

using namespace rcsl_lab;

namespace fs = std::filesystem;

namespace {
const fs::path kGolden = RCSL_LAB_GOLDEN_DIR;

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("rcsl_lab_test_" + name);
}
}  // namespace

TEST_CASE("golden corpus parses bit-exactly") {
  // Frozen content hashes: a parser or serializer change that breaks the
  // on-disk contract fails here.
  CHECK(mdp_hash(load_mdp(kGolden / "fig1c.mdp.json")) ==
        "fnv1a64:0d144da86964728f");
  CHECK(mdp_hash(load_mdp(kGolden / "loop8.mdp.json")) ==
        "fnv1a64:2a85538af5a9ee7b");
  CHECK(hex64(fnv1a64(read_file(kGolden / "tiny.traj.jsonl"))) ==
        "07d595b97acf8bc2");
  const auto mix =
      mixture_from_json(ordered_json::parse(read_file(kGolden / "stitching.mixture.json")));
  CHECK(mix.components.size() == 2);
  const auto st = stitching();
  const auto d = load_dataset(kGolden / "tiny.traj.jsonl", &st.mdp);
  CHECK(d.size() == 5);
  // regenerating from the header seed reproduces the stored trajectories
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto tau = sample_mixture_trajectory(st.mdp, st.mixture, d.master_seed, i);
    REQUIRE(tau.states == d.trajectories[i].states);
    REQUIRE(tau.actions == d.trajectories[i].actions);
    REQUIRE(tau.reward_units == d.trajectories[i].reward_units);
  }
}

TEST_CASE("mdp round trip preserves the content hash") {
  const auto g = fig_loop(10);
  const auto path = temp_file("roundtrip.mdp.json");
  save_mdp(path, g.mdp);
  const auto back = load_mdp(path);
  CHECK(mdp_hash(back) == mdp_hash(g.mdp));
  fs::remove(path);
}

TEST_CASE("correlated kernels survive the joint on-disk form") {
  const auto g = fig1c(0.1);
  const auto am = augment_with_cumulative_reward(g.mdp);
  const auto path = temp_file("aug.mdp.json");
  save_mdp(path, am.mdp);
  const auto back = load_mdp(path);
  CHECK(mdp_hash(back) == mdp_hash(am.mdp));
  const auto doc = ordered_json::parse(read_file(path));
  CHECK(doc.contains("kernel"));  // augmentation correlates reward and successor
  fs::remove(path);
}

TEST_CASE("empty dataset generation and save/load round trip") {
  const auto g = stitching();
  const auto d = generate(g.mdp, g.mixture, 0, 1);
  CHECK(d.size() == 0);
  const auto path = temp_file("empty.traj.jsonl");
  save_dataset(path, d);
  CHECK(load_dataset(path).size() == 0);
  fs::remove(path);
}

TEST_CASE("same master seed gives byte-identical datasets") {
  const auto g = fig_loop(8);
  const auto p1 = temp_file("d1.traj.jsonl");
  const auto p2 = temp_file("d2.traj.jsonl");
  save_dataset(p1, generate(g.mdp, g.mixture, 200, 777));
  save_dataset(p2, generate(g.mdp, g.mixture, 200, 777));
  CHECK(read_file(p1) == read_file(p2));
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("slices regenerate independently of the batch") {
  const auto g = fig_loop(8);
  const auto full = generate(g.mdp, g.mixture, 10, 31415);
  for (std::size_t i = 5; i < 10; ++i) {
    const auto tau = sample_mixture_trajectory(g.mdp, g.mixture, 31415, i);
    REQUIRE(tau.states == full.trajectories[i].states);
    REQUIRE(tau.actions == full.trajectories[i].actions);
  }
}

TEST_CASE("truncated files fail with a located parse error") {
  const auto g = stitching();
  const auto d = generate(g.mdp, g.mixture, 5, 42);
  const auto path = temp_file("trunc.traj.jsonl");
  save_dataset(path, d);
  auto contents = read_file(path);
  contents.resize(contents.size() * 2 / 3);
  write_file_atomic(path, contents);
  try {
    load_dataset(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    const std::string what = e.what();
    CHECK((what.find("line") != std::string::npos ||
           what.find("byte") != std::string::npos));
  }
  fs::remove(path);
}

TEST_CASE("hash mismatch surfaces as an integrity error") {
  const auto g = stitching();
  const auto other = fig1c(0.1);
  const auto path = temp_file("miss.traj.jsonl");
  save_dataset(path, generate(g.mdp, g.mixture, 3, 1));
  CHECK_THROWS_AS(load_dataset(path, &other.mdp), IntegrityError);
  fs::remove(path);
}

TEST_CASE("edited probabilities break validation on load") {
  const auto g = fig1c(0.1);
  const auto path = temp_file("badrow.mdp.json");
  save_mdp(path, g.mdp);
  auto doc = ordered_json::parse(read_file(path));
  doc["initial_dist"][0] = 0.7;  // no longer sums to 1
  write_file_atomic(path, doc.dump());
  CHECK_THROWS_AS(load_mdp(path), ParseError);
  fs::remove(path);
}

TEST_CASE("empirical return histogram of a generated dataset matches exactly") {
  const auto g = fig1c(0.2);
  const auto rd = trajectory_return_dist(g.mdp, g.behavior());
  const int n = 100000;
  const auto data = generate(g.mdp, g.mixture, n, 555);
  std::vector<double> freq(rd.p.size(), 0.0);
  for (const auto& tau : data.trajectories)
    freq[static_cast<std::size_t>(tau.total_units())] += 1.0 / n;
  double tv = 0.0;
  for (std::size_t u = 0; u < rd.p.size(); ++u) tv += std::abs(freq[u] - rd.p[u]);
  tv *= 0.5;
  CHECK(tv <= 5.0 * std::sqrt(static_cast<double>(rd.support_size()) / n));
}

TEST_CASE("policy documents round trip for both layouts") {
  const auto g = fig_loop(8);  // timestep-dependent rows
  const auto j = policy_to_json(g.behavior());
  const auto back = policy_from_json(j);
  CHECK(policy_to_json(back).dump() == j.dump());
  const auto uni = MarkovPolicy::uniform(3, 2);
  CHECK(policy_to_json(policy_from_json(policy_to_json(uni))).dump() ==
        policy_to_json(uni).dump());
}
