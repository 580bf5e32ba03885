#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rcsl_lab/data_io.hpp"

using rcsl_lab::ordered_json;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code;
  std::string out;
};

CliResult run_cli(const std::string& args) {
  static int counter = 0;
  const auto out_path =
      fs::temp_directory_path() / ("rcsl_cli_out_" + std::to_string(counter++));
  const std::string cmd = std::string(RCSL_LAB_CLI_PATH) + " " + args + " > " +
                          out_path.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult res;
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out_path);
  std::ostringstream ss;
  ss << in.rdbuf();
  res.out = ss.str();
  fs::remove(out_path);
  return res;
}

fs::path temp_dir() {
  const auto d = fs::temp_directory_path() / "rcsl_cli_scratch";
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("gallery list shows all ids") {
  const auto r = run_cli("gallery list");
  CHECK(r.exit_code == 0);
  for (const std::string id :
       {"fig1a", "fig1b", "fig1c", "fig_loop", "stitching", "gridworld"})
    CHECK(r.out.find(id) != std::string::npos);
}

TEST_CASE("gallery verify fig1c prints the conditioned policy value") {
  const auto r = run_cli("gallery verify fig1c --epsilon 0.1");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("pi_f(a1|s1) = 0.5") != std::string::npos);
}

TEST_CASE("gallery build writes verified files consumable by analyze") {
  const auto dir = temp_dir();
  const auto r =
      run_cli("gallery build fig_loop --H 20 --out-dir " + dir.string());
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(dir / "fig_loop.mdp.json"));
  CHECK(fs::exists(dir / "fig_loop.mixture.json"));
  CHECK(fs::exists(dir / "fig_loop.expectations.json"));
  const auto m = rcsl_lab::load_mdp(dir / "fig_loop.mdp.json");
  CHECK(m.horizon == 20);
  const auto r2 = run_cli("analyze evaluate --mdp " +
                          (dir / "fig_loop.mdp.json").string() + " --mixture " +
                          (dir / "fig_loop.mixture.json").string());
  CHECK(r2.exit_code == 0);
}

TEST_CASE("unknown gallery id is a usage error") {
  CHECK(run_cli("gallery build no_such_thing").exit_code == 1);
  CHECK(run_cli("gallery verify fig1a --epsilon 0.7").exit_code == 1);
}

TEST_CASE("analyze exact-rcsl on fig1b reports the zeroed arm and regret") {
  const auto json = temp_dir() / "fig1b.json";
  const auto r = run_cli("analyze exact-rcsl --mdp fig1b --epsilon 0.1 --json " +
                         json.string());
  REQUIRE(r.exit_code == 0);
  const auto doc = ordered_json::parse(rcsl_lab::read_file(json));
  CHECK(doc["initial_policy"][0]["pi"][0].get<double>() == 0.0);
  CHECK_THAT(doc["regret"].get<double>(),
             Catch::Matchers::WithinAbs(0.8, 1e-10));
  CHECK(doc.contains("invocation"));
}

TEST_CASE("analyze evaluate on a zero-reward MDP gives J = 0") {
  // gridworld sparse rewards vanish when the goal is unreachable in 0 steps?
  // simpler: dense variant at bias 0 evaluates fine; zero-reward via sparse
  // with start far from goal still collects 0 only if horizon 1
  const auto r = run_cli(
      "analyze evaluate --mdp gridworld --variant sparse --size 7 --bias 0.0 "
      "--grid-horizon 1 --json -");
  REQUIRE(r.exit_code == 0);
  const auto pos = r.out.find('{');
  REQUIRE(pos != std::string::npos);
  const auto doc = ordered_json::parse(r.out.substr(pos));
  CHECK(doc["J"].get<double>() == 0.0);
}

TEST_CASE("analyze top-bc at rho 1 returns the behavior value") {
  const auto r = run_cli("analyze top-bc --mdp fig1c --rho 1.0 --json -");
  REQUIRE(r.exit_code == 0);
  const auto pos = r.out.find('{');
  const auto doc = ordered_json::parse(r.out.substr(pos));
  CHECK_THAT(doc["J_pirho"].get<double>(),
             Catch::Matchers::WithinAbs(doc["J_behavior"].get<double>(), 1e-10));
}

TEST_CASE("unsupported target exits with the structured error code") {
  const auto r = run_cli("analyze exact-rcsl --mdp stitching --target-units 1");
  CHECK(r.exit_code == 2);
  CHECK(r.out.find("unsupported_target") != std::string::npos);
}

TEST_CASE("learn dp on stitching data reaches the stitched optimum") {
  const auto r = run_cli("learn dp --mdp stitching --n 2000 --seeds 3 --json -");
  REQUIRE(r.exit_code == 0);
  const auto pos = r.out.find('{');
  const auto doc = ordered_json::parse(r.out.substr(pos));
  CHECK_THAT(doc["J_mean"].get<double>(), Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("learn bc on a single-trajectory dataset reproduces its return") {
  // deterministic blue-only mixture: a 1-trajectory dataset pins the policy
  const auto dir = temp_dir();
  CHECK(run_cli("gallery build stitching --out-dir " + dir.string()).exit_code ==
        0);
  const auto r = run_cli("learn rcsl --mdp stitching --n 30 --seeds 2 "
                         "--target-units 0 --json -");
  REQUIRE(r.exit_code == 0);
}

TEST_CASE("learn rcsl on fig1c approaches the idealized value") {
  const auto r = run_cli(
      "learn rcsl --mdp fig1c --epsilon 0.1 --n 100000 --seeds 1 "
      "--target-units 1 --master-seed 5 --json -");
  REQUIRE(r.exit_code == 0);
  const auto pos = r.out.find('{');
  const auto doc = ordered_json::parse(r.out.substr(pos));
  // exact J(pi_f) = 0.5; the fitted policy's exact value concentrates there
  CHECK(std::abs(doc["J_mean"].get<double>() - 0.5) < 0.02);
}

TEST_CASE("dataset files round-trip through learn") {
  const auto dir = temp_dir();
  const auto ds = dir / "fig1c.traj.jsonl";
  const auto gen = run_cli("dataset --mdp fig1c --epsilon 0.1 --n 5000 "
                           "--master-seed 9 --out " +
                           ds.string());
  REQUIRE(gen.exit_code == 0);
  const auto r = run_cli("learn rcsl --mdp fig1c --epsilon 0.1 --dataset " +
                         ds.string() + " --target-units 1 --json -");
  REQUIRE(r.exit_code == 0);
  const auto doc = ordered_json::parse(r.out.substr(r.out.find('{')));
  CHECK(std::abs(doc["J_mean"].get<double>() - 0.5) < 0.1);
  // loading against the wrong MDP trips the hash integrity check
  const auto wrong = run_cli("learn rcsl --mdp fig1c --epsilon 0.2 --dataset " +
                             ds.string() + " --target-units 1");
  CHECK(wrong.exit_code == 1);
}

TEST_CASE("monte carlo cross-check agrees with exact evaluation") {
  const auto r = run_cli(
      "analyze evaluate --mdp fig1c --epsilon 0.2 --monte-carlo "
      "--mc-episodes 20000 --mc-seed 4 --json -");
  REQUIRE(r.exit_code == 0);
  const auto doc = ordered_json::parse(r.out.substr(r.out.find('{')));
  CHECK(std::abs(doc["J_monte_carlo"].get<double>() - doc["J"].get<double>()) <
        0.02);
}

TEST_CASE("snap mode keeps over-ambitious learned targets usable") {
  const auto r = run_cli(
      "learn rcsl --mdp fig1c --epsilon 0.1 --n 5000 --seeds 1 "
      "--target-units 90 --snap --json -");
  REQUIRE(r.exit_code == 0);
  const auto doc = ordered_json::parse(r.out.substr(r.out.find('{')));
  // target 90 snaps to the supported value 1 at the first step
  CHECK(std::abs(doc["J_mean"].get<double>() - 0.5) < 0.1);
}

TEST_CASE("sweep over N emits long-format CSV with summary") {
  const auto csv = temp_dir() / "sweep.csv";
  const auto r = run_cli(
      "sweep --param N --values 50,200 --algo rcsl --mdp fig1c --epsilon 0.1 "
      "--seeds 2 --target-units 1 --csv " +
      csv.string());
  REQUIRE(r.exit_code == 0);
  const auto contents = rcsl_lab::read_file(csv);
  CHECK(contents.find("param,value,seed,metric,measurement") == 0);
  CHECK(contents.find("N,50,0,J,") != std::string::npos);
  CHECK(contents.find("N,200,1,J,") != std::string::npos);
  CHECK(r.out.find("median J") != std::string::npos);
}

TEST_CASE("single-cell sweep matches learn") {
  const auto r1 = run_cli(
      "sweep --param N --values 100 --algo dp --mdp stitching --seeds 1 "
      "--master-seed 3");
  const auto r2 = run_cli(
      "learn dp --mdp stitching --n 100 --seeds 1 --master-seed 3 --json -");
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  // the sweep derives its stream from cell index 0, learn from seed index 0,
  // so both consume derive_stream_seed(master, 0) and agree exactly
  const auto pos1 = r1.out.find("N,100,0,J,");
  REQUIRE(pos1 != std::string::npos);
  const auto val1 = std::stod(r1.out.substr(pos1 + 10));
  const auto doc = ordered_json::parse(r2.out.substr(r2.out.find('{')));
  CHECK_THAT(val1, Catch::Matchers::WithinAbs(doc["J_mean"].get<double>(), 1e-12));
}

TEST_CASE("certify single instances and random suites") {
  // missing --bound is a usage error
  CHECK(run_cli("certify --instance fig1a").exit_code == 1);
  const auto ok = run_cli("certify --bound thm1 --instance 'fig1a(0.1)'");
  REQUIRE(ok.exit_code == 0);
  CHECK(ok.out.find("\"lhs\":0.9") != std::string::npos);
  CHECK(ok.out.find("violations 0") != std::string::npos);

  const auto jsonl = temp_dir() / "lemma1.jsonl";
  const auto rnd = run_cli("certify --bound lemma1 --random 50 --seed 7 --jsonl " +
                           jsonl.string());
  REQUIRE(rnd.exit_code == 0);
  std::ifstream in(jsonl);
  std::string line;
  int count = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto doc = ordered_json::parse(line);
    CHECK(doc["bound_id"] == "lemma1");
    CHECK(doc["holds"].get<bool>());
    ++count;
  }
  CHECK(count == 50);
}

TEST_CASE("certify thm2 with exact conditionals is a clean zero") {
  // smoothing high and tiny fit keep L finite; the canonical instance check
  const auto r = run_cli(
      "certify --bound thm2 --instance fig1c --epsilon 0.1 --fit-n 200");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("violations 0") != std::string::npos);
}

TEST_CASE("worker cap does not change certification output") {
  const auto a = run_cli("certify --bound lemma1 --random 20 --seed 3");
  CliResult b;
  {
    static int counter = 1000;
    const auto out_path = fs::temp_directory_path() /
                          ("rcsl_cli_out_" + std::to_string(counter++));
    const std::string cmd = std::string("RCSL_LAB_THREADS=1 ") +
                            RCSL_LAB_CLI_PATH +
                            " certify --bound lemma1 --random 20 --seed 3 > " +
                            out_path.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    b.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out_path);
    std::ostringstream ss;
    ss << in.rdbuf();
    b.out = ss.str();
    fs::remove(out_path);
  }
  CHECK(a.exit_code == 0);
  CHECK(b.exit_code == 0);
  CHECK(a.out == b.out);
}

TEST_CASE("config files can set flags") {
  const auto cfg = temp_dir() / "verify.toml";
  rcsl_lab::write_file_atomic(cfg, "[gallery.verify]\nepsilon=0.2\n");
  const auto r = run_cli("--config " + cfg.string() + " gallery verify fig1a");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("0.2") != std::string::npos);
}
