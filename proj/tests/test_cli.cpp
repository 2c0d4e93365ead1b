// End-to-end tests of the stgame command-line tool. The binary path is passed
// as argv[1] by ctest (see tests/CMakeLists.txt).
#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string g_cli;
fs::path g_tmp;

struct CmdResult {
  int code = -1;
  std::string out;
};

CmdResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path log = g_tmp / ("log" + std::to_string(counter++) + ".txt");
  const std::string cmd =
      "'" + g_cli + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  CmdResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream is(log);
  std::stringstream ss;
  ss << is.rdbuf();
  r.out = ss.str();
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = g_tmp / name;
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream os(p);
  os << content;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Small-network, short-horizon training config shared by the CLI tests.
std::string small_config(int episodes, uint64_t seed) {
  json j = {{"env", {{"preset", "cartpoles-sym"}, {"horizon", 40}}},
            {"trainer",
             {{"episodes", episodes},
              {"warmup_steps", 30},
              {"batch_size", 16},
              {"seed", seed},
              {"actor_hidden", {8}},
              {"critic_hidden", {8}}}}};
  return j.dump(2);
}

// Scalar worked-example instance: A=-1, B=1, C=1, a=c=0.
const char* kScalarInstance = "1 1\n-1\n1\n1\n0\n0\n";

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s)
    if (c == '\n') ++n;
  return n;
}

// Drops the trailing wall_ms column from a metrics CSV.
std::string strip_last_column(const std::string& csv) {
  std::stringstream in(csv), out;
  std::string line;
  while (std::getline(in, line)) {
    const size_t pos = line.rfind(',');
    out << (pos == std::string::npos ? line : line.substr(0, pos)) << '\n';
  }
  return out.str();
}

}  // namespace

TEST_CASE("train --episodes 0 writes the initial checkpoint and artifacts") {
  const fs::path out = g_tmp / "train0";
  CmdResult r = run_cli("--out '" + out.string() +
                        "' train --env cartpoles-sym --episodes 0 --seed 5");
  CAPTURE(r.out);
  CHECK(r.code == 0);
  CHECK(fs::exists(out / "checkpoint.txt"));
  CHECK(fs::exists(out / "metrics.csv"));
  CHECK(fs::exists(out / "resolved_config.json"));
  json resolved = json::parse(read_file(out / "resolved_config.json"));
  CHECK(resolved.at("trainer").at("episodes").get<int>() == 0);
  CHECK(resolved.at("env").at("preset").get<std::string>() == "cartpoles-sym");
}

TEST_CASE("train refuses to overwrite artifacts without --force") {
  const fs::path out = g_tmp / "overwrite";
  const std::string base =
      "--out '" + out.string() + "' train --episodes 0 --seed 1";
  CHECK(run_cli(base).code == 0);
  CmdResult refused = run_cli(base);
  CHECK(refused.code != 0);
  CHECK(refused.out.find("--force") != std::string::npos);
  CHECK(run_cli("--force " + base).code == 0);
}

TEST_CASE("train CLI flags override config-file values") {
  const fs::path cfg = g_tmp / "cfg_lambda.json";
  write_file(cfg, small_config(0, 9));
  const fs::path out = g_tmp / "train_flags";
  CmdResult r = run_cli("--config '" + cfg.string() + "' --out '" +
                        out.string() +
                        "' train --mode st_maddpg --leader 1 --lambda 1");
  CAPTURE(r.out);
  CHECK(r.code == 0);
  json resolved = json::parse(read_file(out / "resolved_config.json"));
  CHECK(resolved.at("trainer").at("mode").get<std::string>() == "st_maddpg");
  CHECK(resolved.at("trainer").at("leader_id").get<int>() == 1);
  CHECK(resolved.at("trainer").at("lambda").get<double>() == 1.0);
}

TEST_CASE("identical train invocations produce identical stable metrics") {
  const fs::path cfg = g_tmp / "cfg_det.json";
  write_file(cfg, small_config(2, 21));
  const fs::path out1 = g_tmp / "det1", out2 = g_tmp / "det2";
  const std::string common = "--config '" + cfg.string() + "' ";
  CHECK(run_cli(common + "--out '" + out1.string() + "' train").code == 0);
  CHECK(run_cli(common + "--out '" + out2.string() + "' train").code == 0);
  const std::string m1 = read_file(out1 / "metrics.csv");
  const std::string m2 = read_file(out2 / "metrics.csv");
  // All columns except the trailing wall-clock one are byte-identical.
  CHECK(strip_last_column(m1) == strip_last_column(m2));
  CHECK(read_file(out1 / "checkpoint.txt") == read_file(out2 / "checkpoint.txt"));
}

TEST_CASE("unknown config keys are rejected") {
  const fs::path cfg = g_tmp / "cfg_bad.json";
  write_file(cfg, R"({"trainer": {"bogus_key": 1}})");
  CmdResult r = run_cli("--config '" + cfg.string() + "' train --episodes 0");
  CHECK(r.code != 0);
  CHECK(r.out.find("bogus_key") != std::string::npos);
}

TEST_CASE("solve-quadratic on the scalar example") {
  const fs::path inst = g_tmp / "scalar.game";
  write_file(inst, kScalarInstance);
  CmdResult r = run_cli("solve-quadratic --instance '" + inst.string() + "'");
  CAPTURE(r.out);
  REQUIRE(r.code == 0);
  json j = json::parse(r.out);
  CHECK(std::abs(j.at("dse").at("theta1")[0].get<double>()) < 1e-12);
  CHECK(std::abs(j.at("nash").at("theta1")[0].get<double>()) < 1e-12);
  CHECK(j.at("dse_report").at("is_dse").get<bool>());
  CHECK(j.at("dse_report").at("leader_hessian_max_eig").get<double>() ==
        doctest::Approx(-2.5).epsilon(1e-4));
  CHECK(j.at("stackelberg_dynamics").at("converged").get<bool>());
  CHECK(j.at("simultaneous_dynamics").at("converged").get<bool>());
  // Leader advantage: DSE leader value is at least the Nash leader value.
  CHECK(j.at("dse").at("leader_value").get<double>() >=
        j.at("nash").at("leader_value").get<double>() - 1e-9);
}

TEST_CASE("solve-quadratic reports the line number of a malformed instance") {
  const fs::path inst = g_tmp / "broken.game";
  write_file(inst, "1 1\n-1\nnot_a_number\n");
  CmdResult r = run_cli("solve-quadratic --instance '" + inst.string() + "'");
  CHECK(r.code != 0);
  CHECK(r.out.find("line") != std::string::npos);
}

TEST_CASE("verify-dse exit codes distinguish DSE from non-DSE points") {
  const fs::path inst = g_tmp / "verify.game";
  write_file(inst, kScalarInstance);
  // Default point: the analytic DSE.
  CmdResult ok = run_cli("verify-dse --instance '" + inst.string() + "'");
  CAPTURE(ok.out);
  CHECK(ok.code == 0);
  json j = json::parse(ok.out);
  CHECK(j.at("report").at("is_dse").get<bool>());

  CmdResult off = run_cli("verify-dse --instance '" + inst.string() +
                          "' --theta1 1 --theta2 1");
  CHECK(off.code == 2);
  json joff = json::parse(off.out);
  CHECK_FALSE(joff.at("report").at("is_dse").get<bool>());
}

TEST_CASE("referee scores a tick stream from CSV") {
  const fs::path ticks = g_tmp / "ticks.csv";
  write_file(ticks,
             "t,bat_a,contact,bat_p\n"
             "0,1,0,0\n"   // clean attack: +1
             "1,1,1,0\n"   // attack with contact: -10
             "2,0,0,1\n"); // protector dwell tick: 0
  CmdResult r = run_cli("referee --ticks '" + ticks.string() + "'");
  CAPTURE(r.out);
  CHECK(r.code == 0);
  CHECK(r.out.find("0,1,1") != std::string::npos);
  CHECK(r.out.find("1,-10,-9") != std::string::npos);
  CHECK(r.out.find("final_score,-9") != std::string::npos);
}

TEST_CASE("referee rejects malformed rows with their row index") {
  const fs::path ticks = g_tmp / "bad_ticks.csv";
  write_file(ticks, "0,1,0,0\n1,1,0\n");
  CmdResult r = run_cli("referee --ticks '" + ticks.string() + "'");
  CHECK(r.code != 0);
  CHECK(r.out.find("row 2") != std::string::npos);

  const fs::path ticks2 = g_tmp / "bad_bool.csv";
  write_file(ticks2, "0,maybe,0,0\n");
  CmdResult r2 = run_cli("referee --ticks '" + ticks2.string() + "'");
  CHECK(r2.code != 0);
  CHECK(r2.out.find("row 1") != std::string::npos);

  CmdResult r3 = run_cli("referee --ticks '" + ticks.string() +
                         "' --dwell-mode sometimes");
  CHECK(r3.code != 0);
}

TEST_CASE("tournament writes scores and a recomputable summary") {
  // Two quick checkpoints with different seeds.
  const fs::path cka = g_tmp / "cka", ckb = g_tmp / "ckb";
  CHECK(run_cli("--out '" + cka.string() +
                "' train --env cartpoles-sym --episodes 0 --seed 1")
            .code == 0);
  CHECK(run_cli("--out '" + ckb.string() +
                "' train --env cartpoles-sym --episodes 0 --seed 2")
            .code == 0);

  const fs::path out = g_tmp / "tourn";
  CmdResult r = run_cli("--out '" + out.string() + "' tournament --p1 '" +
                        (cka / "checkpoint.txt").string() + "' --p2 '" +
                        (ckb / "checkpoint.txt").string() +
                        "' --games 3 --horizon 30 --seed 8");
  CAPTURE(r.out);
  REQUIRE(r.code == 0);
  const std::string csv = read_file(out / "scores.csv");
  CHECK(count_lines(csv) == 4);  // header + 1x1 pairs x 3 games

  json summary = json::parse(read_file(out / "summary.json"));
  // Recompute the mean from the CSV score column.
  std::stringstream ss(csv);
  std::string line;
  std::getline(ss, line);  // header
  REQUIRE(line.find("score") != std::string::npos);
  double sum = 0.0;
  int n = 0;
  while (std::getline(ss, line)) {
    std::stringstream row(line);
    std::string field;
    for (int i = 0; i < 5; ++i) std::getline(row, field, ',');
    sum += std::stod(field);
    ++n;
  }
  REQUIRE(n == 3);
  CHECK(summary.at("overall").at("mean").get<double>() ==
        doctest::Approx(sum / n).epsilon(1e-9));
  CHECK(summary.at("overall").at("count").get<int>() == 3);
}

TEST_CASE("tournament rejects dimensionally incompatible checkpoints") {
  const fs::path ckc = g_tmp / "ckc", ckadv = g_tmp / "ckadv";
  CHECK(run_cli("--out '" + ckc.string() +
                "' train --env cartpoles-sym --episodes 0 --seed 3")
            .code == 0);
  CHECK(run_cli("--out '" + ckadv.string() +
                "' train --env adversarial --episodes 0 --seed 4")
            .code == 0);
  const fs::path out = g_tmp / "tourn_bad";
  CmdResult r = run_cli("--out '" + out.string() + "' tournament --p1 '" +
                        (ckc / "checkpoint.txt").string() + "' --p2 '" +
                        (ckadv / "checkpoint.txt").string() +
                        "' --games 1 --horizon 20");
  CHECK(r.code != 0);
  CHECK(r.out.find("ckadv") != std::string::npos);
  CHECK_FALSE(fs::exists(out / "scores.csv"));
}

TEST_CASE("disturb-eval runs a checkpoint against random disturbances") {
  const fs::path ck = g_tmp / "ck_dist";
  CHECK(run_cli("--out '" + ck.string() +
                "' train --env adversarial --episodes 0 --seed 6")
            .code == 0);
  const fs::path out = g_tmp / "disturb";
  CmdResult r = run_cli("--out '" + out.string() + "' disturb-eval "
                        "--checkpoint '" + (ck / "checkpoint.txt").string() +
                        "' --magnitude 0.5 --trials 2 --horizon 50 --seed 3");
  CAPTURE(r.out);
  REQUIRE(r.code == 0);
  CHECK(count_lines(read_file(out / "scores.csv")) == 3);  // header + 2 trials
  json j = json::parse(r.out);
  CHECK(j.at("summary").at("count").get<int>() == 2);

  // A competitive-cartpoles checkpoint is dimensionally incompatible.
  const fs::path ck2 = g_tmp / "ck_dist_bad";
  CHECK(run_cli("--out '" + ck2.string() +
                "' train --env cartpoles-sym --episodes 0 --seed 7")
            .code == 0);
  CmdResult bad = run_cli("disturb-eval --checkpoint '" +
                          (ck2 / "checkpoint.txt").string() + "' --trials 1");
  CHECK(bad.code != 0);
}

TEST_CASE("missing output directory is reported when artifacts are requested") {
  // train needs an --out (or STGAME_OUT_ROOT); with neither it must fail.
  CmdResult r = run_cli("train --episodes 0");
  CHECK(r.code != 0);
  CHECK(r.out.find("STGAME_OUT_ROOT") != std::string::npos);
}

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: test_cli <path-to-stgame-binary>\n";
    return 2;
  }
  g_cli = argv[1];
  g_tmp = fs::temp_directory_path() /
          ("stgame-cli-test-" + std::to_string(::getpid()));
  fs::create_directories(g_tmp);
  // Ensure the binary never silently falls back to a user-level default root.
  ::unsetenv("STGAME_OUT_ROOT");
  doctest::Context context;
  context.applyCommandLine(1, argv);
  const int rc = context.run();
  std::error_code ec;
  fs::remove_all(g_tmp, ec);
  return rc;
}
