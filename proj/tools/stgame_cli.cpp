// stgame command-line front end: train, tournament, solve-quadratic,
// verify-dse, referee, disturb-eval.

#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stgame/envs.hpp"
#include "stgame/eval.hpp"
#include "stgame/fencing.hpp"
#include "stgame/marl.hpp"
#include "stgame/quadratic_game.hpp"
#include "stgame/stackelberg.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using stgame::Vec;

namespace {

// ---------------------------------------------------------------------------
// Config plumbing

struct EnvSettings {
  std::string preset = "cartpoles-sym";
  int horizon = 0;  // 0 = preset default
};

void reject_unknown(const json& j, const std::vector<std::string>& allowed,
                    const std::string& section) {
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
      throw std::runtime_error("config: unknown key '" + item.key() +
                               "' in section '" + section + "'");
  }
}

void apply_env_json(EnvSettings& env, const json& j) {
  reject_unknown(j, {"preset", "horizon"}, "env");
  if (j.contains("preset")) env.preset = j.at("preset").get<std::string>();
  if (j.contains("horizon")) env.horizon = j.at("horizon").get<int>();
}

void apply_trainer_json(stgame::marl::TrainerConfig& c, const json& j) {
  reject_unknown(j,
                 {"mode", "leader_id", "lambda", "cg_iters", "cg_tol",
                  "actor_lr", "critic_lr", "batch_size", "warmup_steps",
                  "noise_sigma0", "noise_sigma1", "follower_extra_updates",
                  "episodes", "seed", "tau", "gamma", "actor_hidden",
                  "critic_hidden", "critic_activation", "follower_hessian",
                  "buffer_capacity"},
                 "trainer");
  using stgame::marl::FollowerHessian;
  if (j.contains("mode"))
    c.mode = stgame::marl::trainer_mode_from_string(
        j.at("mode").get<std::string>());
  if (j.contains("leader_id")) c.leader_id = j.at("leader_id").get<int>();
  if (j.contains("lambda")) c.lambda = j.at("lambda").get<double>();
  if (j.contains("cg_iters")) c.cg_iters = j.at("cg_iters").get<int>();
  if (j.contains("cg_tol")) c.cg_tol = j.at("cg_tol").get<double>();
  if (j.contains("actor_lr")) c.actor_lr = j.at("actor_lr").get<double>();
  if (j.contains("critic_lr")) c.critic_lr = j.at("critic_lr").get<double>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
  if (j.contains("warmup_steps"))
    c.warmup_steps = j.at("warmup_steps").get<int>();
  if (j.contains("noise_sigma0"))
    c.noise_sigma0 = j.at("noise_sigma0").get<double>();
  if (j.contains("noise_sigma1"))
    c.noise_sigma1 = j.at("noise_sigma1").get<double>();
  if (j.contains("follower_extra_updates"))
    c.follower_extra_updates = j.at("follower_extra_updates").get<int>();
  if (j.contains("episodes")) c.episodes = j.at("episodes").get<int>();
  if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
  if (j.contains("tau")) c.tau = j.at("tau").get<double>();
  if (j.contains("gamma")) c.gamma = j.at("gamma").get<double>();
  if (j.contains("actor_hidden"))
    c.network.actor_hidden = j.at("actor_hidden").get<std::vector<int>>();
  if (j.contains("critic_hidden"))
    c.network.critic_hidden = j.at("critic_hidden").get<std::vector<int>>();
  if (j.contains("critic_activation")) {
    const std::string a = j.at("critic_activation").get<std::string>();
    if (a == "relu")
      c.network.critic_activation = stgame::marl::Activation::kRelu;
    else if (a == "tanh")
      c.network.critic_activation = stgame::marl::Activation::kTanh;
    else
      throw std::runtime_error("trainer.critic_activation must be relu or tanh");
  }
  if (j.contains("follower_hessian")) {
    const std::string fh = j.at("follower_hessian").get<std::string>();
    if (fh == "exact")
      c.follower_hessian = FollowerHessian::kExact;
    else if (fh == "paper_term")
      c.follower_hessian = FollowerHessian::kPaperTerm;
    else
      throw std::runtime_error("config: unknown follower_hessian '" + fh +
                               "'");
  }
  if (j.contains("buffer_capacity"))
    c.buffer_capacity = j.at("buffer_capacity").get<size_t>();
}

json trainer_to_json(const stgame::marl::TrainerConfig& c) {
  return json{
      {"mode", stgame::marl::to_string(c.mode)},
      {"leader_id", c.leader_id},
      {"lambda", c.lambda},
      {"cg_iters", c.cg_iters},
      {"cg_tol", c.cg_tol},
      {"actor_lr", c.actor_lr},
      {"critic_lr", c.critic_lr},
      {"batch_size", c.batch_size},
      {"warmup_steps", c.warmup_steps},
      {"noise_sigma0", c.noise_sigma0},
      {"noise_sigma1", c.noise_sigma1},
      {"follower_extra_updates", c.follower_extra_updates},
      {"episodes", c.episodes},
      {"seed", c.seed},
      {"tau", c.tau},
      {"gamma", c.gamma},
      {"actor_hidden", c.network.actor_hidden},
      {"critic_hidden", c.network.critic_hidden},
      {"critic_activation",
       c.network.critic_activation == stgame::marl::Activation::kTanh ? "tanh"
                                                              : "relu"},
      {"follower_hessian",
       c.follower_hessian == stgame::marl::FollowerHessian::kExact
           ? "exact"
           : "paper_term"},
      {"buffer_capacity", c.buffer_capacity}};
}

json load_config_file(const std::string& path,
                      const std::vector<std::string>& sections) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("config " + path + ": " + e.what());
  }
  reject_unknown(j, sections, "(top level)");
  return j;
}

std::unique_ptr<stgame::envs::TwoPlayerEnv> make_env(const EnvSettings& env) {
  using namespace stgame::envs;
  if (env.preset == "cartpoles-sym" || env.preset == "cartpoles-asym") {
    auto cfg = env.preset == "cartpoles-sym"
                   ? CompetitiveCartpolesConfig::symmetric()
                   : CompetitiveCartpolesConfig::asymmetric();
    if (env.horizon > 0) cfg.horizon = env.horizon;
    return std::make_unique<CompetitiveCartpolesEnv>(cfg);
  }
  if (env.preset == "adversarial") {
    AdversarialCartpoleConfig cfg;
    if (env.horizon > 0) cfg.horizon = env.horizon;
    return std::make_unique<AdversarialCartpoleEnv>(cfg);
  }
  throw std::runtime_error("unknown environment preset '" + env.preset +
                           "' (cartpoles-sym | cartpoles-asym | adversarial)");
}

// ---------------------------------------------------------------------------
// Output directories

std::string default_out_root() {
  const char* root = std::getenv("STGAME_OUT_ROOT");
  return root ? std::string(root) : std::string();
}

fs::path resolve_out(const std::string& out_flag, const std::string& subcmd) {
  if (!out_flag.empty()) return fs::path(out_flag);
  const std::string root = default_out_root();
  if (!root.empty()) return fs::path(root) / subcmd;
  throw std::runtime_error(
      "no output directory: pass --out or set STGAME_OUT_ROOT");
}

void ensure_fresh(const fs::path& out, bool force,
                  const std::vector<std::string>& artifacts) {
  fs::create_directories(out);
  if (force) return;
  for (const auto& name : artifacts) {
    if (fs::exists(out / name))
      throw std::runtime_error("refusing to overwrite " +
                               (out / name).string() +
                               " (use --force to allow)");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

// ---------------------------------------------------------------------------
// Shared formatting helpers

json vec_to_json(const Vec& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Vec parse_vec(const std::string& csv) {
  std::vector<double> vals;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    size_t pos = 0;
    double v = std::stod(tok, &pos);
    while (pos < tok.size() && std::isspace(static_cast<unsigned char>(tok[pos])))
      ++pos;
    if (pos != tok.size())
      throw std::runtime_error("bad number '" + tok + "' in vector");
    vals.push_back(v);
  }
  return Eigen::Map<const Vec>(vals.data(),
                               static_cast<Eigen::Index>(vals.size()));
}

json summary_to_json(const stgame::evalh::ScoreSummary& s) {
  return json{{"mean", s.mean},
              {"std", s.std},
              {"min", s.min},
              {"max", s.max},
              {"count", s.count}};
}

json dse_report_to_json(const stgame::DSEReport& r) {
  return json{{"leader_total_grad_norm", r.leader_total_grad_norm},
              {"follower_grad_norm", r.follower_grad_norm},
              {"leader_curvature_ok", r.leader_curvature_ok},
              {"follower_curvature_ok", r.follower_curvature_ok},
              {"is_dse", r.is_dse},
              {"leader_hessian_max_eig", r.leader_hessian_max_eig},
              {"follower_hessian_min_eig", r.follower_hessian_min_eig}};
}

// Parses a quadratic-game instance file, reporting the first malformed line.
stgame::QuadraticGame load_instance(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open instance file " + path);
  std::vector<std::pair<std::string, int>> tokens;  // token, 1-based line
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::stringstream ss(line);
    std::string tok;
    while (ss >> tok) tokens.push_back({tok, lineno});
  }
  size_t idx = 0;
  auto next = [&](bool integer) -> double {
    if (idx >= tokens.size())
      throw std::runtime_error(path + ": line " + std::to_string(lineno) +
                               ": truncated instance");
    const auto& [tok, ln] = tokens[idx++];
    size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != tok.size() || (integer && v != std::floor(v)))
      throw std::runtime_error(path + ": line " + std::to_string(ln) +
                               ": bad token '" + tok + "'");
    return v;
  };
  const int d1 = static_cast<int>(next(true));
  const int d2 = static_cast<int>(next(true));
  if (d1 < 1 || d2 < 1)
    throw std::runtime_error(path + ": line 1: dimensions must be positive");
  auto read_matrix = [&](int r, int c) {
    stgame::Matrix m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = next(false);
    return m;
  };
  stgame::Matrix A = read_matrix(d1, d1);
  stgame::Matrix B = read_matrix(d1, d2);
  stgame::Matrix C = read_matrix(d2, d2);
  Vec a(d1), c(d2);
  for (int i = 0; i < d1; ++i) a[i] = next(false);
  for (int i = 0; i < d2; ++i) c[i] = next(false);
  if (idx != tokens.size())
    throw std::runtime_error(path + ": line " +
                             std::to_string(tokens[idx].second) +
                             ": trailing data");
  return stgame::QuadraticGame(std::move(A), std::move(B), std::move(C),
                               std::move(a), std::move(c));
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const std::string& config_path, const EnvSettings& env_flags,
              bool env_preset_set, bool horizon_set, const json& flag_overrides,
              const std::string& out_flag, bool force) {
  EnvSettings env;
  stgame::marl::TrainerConfig tc;
  if (!config_path.empty()) {
    json j = load_config_file(config_path, {"env", "trainer", "tournament",
                                            "disturb"});
    if (j.contains("env")) apply_env_json(env, j.at("env"));
    if (j.contains("trainer")) apply_trainer_json(tc, j.at("trainer"));
  }
  if (env_preset_set) env.preset = env_flags.preset;
  if (horizon_set) env.horizon = env_flags.horizon;
  apply_trainer_json(tc, flag_overrides);

  fs::path out = resolve_out(out_flag, "train");
  ensure_fresh(out, force,
               {"checkpoint.txt", "metrics.csv", "resolved_config.json"});

  auto environment = make_env(env);
  stgame::marl::Trainer trainer(*environment, tc);
  stgame::marl::TrainStats stats = trainer.train();

  stgame::marl::save_pair(trainer.trained_pair(),
                          (out / "checkpoint.txt").string());
  {
    std::ofstream os(out / "metrics.csv");
    stgame::marl::write_metrics_csv(stats, os);
  }
  json resolved = {{"env", {{"preset", env.preset}, {"horizon", env.horizon}}},
                   {"trainer", trainer_to_json(tc)}};
  write_text(out / "resolved_config.json", resolved.dump(2) + "\n");

  json report = {{"out", out.string()},
                 {"episodes", stats.episodes.size()},
                 {"total_env_steps", stats.total_env_steps},
                 {"total_updates", stats.total_updates},
                 {"cg_fallbacks", stats.cg_fallbacks},
                 {"aborted_non_finite", stats.aborted_non_finite},
                 {"leader_update_mean_us", stats.leader_update_mean_us},
                 {"plain_update_mean_us", stats.plain_update_mean_us},
                 {"wall_ms_total", stats.wall_ms_total}};
  std::cout << report.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// tournament

struct LoadedPair {
  std::string id;
  stgame::marl::TrainedPair pair;
  std::unique_ptr<stgame::marl::ActorCriticBundle> bundle;
};

int cmd_tournament(const std::vector<std::string>& p1_paths,
                   const std::vector<std::string>& p2_paths,
                   const std::string& config_path, const EnvSettings& env_flags,
                   bool env_preset_set, bool horizon_set, int games,
                   bool games_set, uint64_t seed, bool seed_set, int jobs,
                   const std::string& out_flag, bool force) {
  EnvSettings env;
  int games_per_pair = 20;
  uint64_t tournament_seed = 0;
  if (!config_path.empty()) {
    json j = load_config_file(config_path, {"env", "trainer", "tournament",
                                            "disturb"});
    if (j.contains("env")) apply_env_json(env, j.at("env"));
    if (j.contains("tournament")) {
      const json& t = j.at("tournament");
      reject_unknown(t, {"games_per_pair", "seed"}, "tournament");
      if (t.contains("games_per_pair"))
        games_per_pair = t.at("games_per_pair").get<int>();
      if (t.contains("seed")) tournament_seed = t.at("seed").get<uint64_t>();
    }
  }
  if (env_preset_set) env.preset = env_flags.preset;
  if (horizon_set) env.horizon = env_flags.horizon;
  if (games_set) games_per_pair = games;
  if (seed_set) tournament_seed = seed;
  if (games_per_pair < 1) throw std::runtime_error("--games must be >= 1");

  fs::path out = resolve_out(out_flag, "tournament");
  ensure_fresh(out, force, {"scores.csv", "summary.json",
                            "resolved_config.json"});

  auto probe_env = make_env(env);
  auto load_pool = [&](const std::vector<std::string>& paths, int player) {
    std::vector<LoadedPair> pool;
    std::vector<std::string> bad;
    for (const auto& path : paths) {
      LoadedPair lp;
      lp.id = fs::path(path).stem().string();
      try {
        lp.pair = stgame::marl::load_pair(path);
      } catch (const std::exception& e) {
        bad.push_back(path + ": " + e.what());
        continue;
      }
      const int want_act =
          player == 1 ? probe_env->act1_dim() : probe_env->act2_dim();
      const int have_act = player == 1 ? lp.pair.act1_dim : lp.pair.act2_dim;
      if (lp.pair.obs_dim != probe_env->obs_dim() || have_act != want_act) {
        bad.push_back(path + ": dimensions (obs " +
                      std::to_string(lp.pair.obs_dim) + ", act " +
                      std::to_string(have_act) + ") incompatible with env (obs " +
                      std::to_string(probe_env->obs_dim()) + ", act " +
                      std::to_string(want_act) + ")");
        continue;
      }
      lp.bundle = std::make_unique<stgame::marl::ActorCriticBundle>(
          stgame::marl::bundle_from_pair(lp.pair));
      pool.push_back(std::move(lp));
    }
    if (!bad.empty()) {
      std::string msg = "incompatible checkpoints:";
      for (const auto& b : bad) msg += "\n  " + b;
      throw std::runtime_error(msg);
    }
    return pool;
  };
  std::vector<LoadedPair> pool1 = load_pool(p1_paths, 1);
  std::vector<LoadedPair> pool2 = load_pool(p2_paths, 2);
  if (pool1.empty() || pool2.empty())
    throw std::runtime_error("both pools must be non-empty");

  // Same pair_index/seed scheme as evalh::run_tournament; games within a
  // pair are played by one worker so results are independent of --jobs.
  struct PairTask {
    int pair_index;
    const LoadedPair* p1;
    const LoadedPair* p2;
  };
  std::vector<PairTask> tasks;
  int pair_index = 0;
  for (const auto& p1 : pool1)
    for (const auto& p2 : pool2) tasks.push_back({pair_index++, &p1, &p2});

  std::vector<std::vector<stgame::evalh::GameRecord>> per_task(tasks.size());
  std::atomic<size_t> next_task{0};
  std::atomic<bool> failed{false};
  std::string failure;
  std::mutex failure_mu;
  auto worker = [&]() {
    auto worker_env = make_env(env);
    while (!failed.load()) {
      const size_t ti = next_task.fetch_add(1);
      if (ti >= tasks.size()) break;
      const PairTask& task = tasks[ti];
      try {
        for (int g = 0; g < games_per_pair; ++g) {
          stgame::evalh::GameRecord rec;
          rec.p1_id = task.p1->id;
          rec.p2_id = task.p2->id;
          rec.game_index = g;
          rec.seed = stgame::evalh::tournament_game_seed(tournament_seed,
                                                         task.pair_index, g);
          Vec obs = worker_env->reset(rec.seed);
          while (true) {
            stgame::envs::StepResult r = worker_env->step(
                task.p1->bundle->act(1, obs), task.p2->bundle->act(2, obs));
            rec.score += r.reward;
            ++rec.steps;
            if (r.done) break;
            obs = r.next_obs;
          }
          per_task[ti].push_back(std::move(rec));
        }
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(failure_mu);
        failed = true;
        failure = e.what();
      }
    }
  };
  const int n_workers = std::max(
      1, std::min(jobs, static_cast<int>(tasks.size())));
  std::vector<std::thread> threads;
  for (int i = 0; i < n_workers; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (failed) throw std::runtime_error("tournament game failed: " + failure);

  std::vector<stgame::evalh::GameRecord> records;
  for (auto& chunk : per_task)
    for (auto& rec : chunk) records.push_back(std::move(rec));

  {
    std::ofstream os(out / "scores.csv");
    os << "p1_id,p2_id,game_index,seed,score,steps\n";
    char buf[40];
    for (const auto& r : records) {
      std::snprintf(buf, sizeof(buf), "%.17g", r.score);
      os << r.p1_id << ',' << r.p2_id << ',' << r.game_index << ',' << r.seed
         << ',' << buf << ',' << r.steps << '\n';
    }
  }

  json summary;
  summary["overall"] =
      summary_to_json(stgame::evalh::summarize(stgame::evalh::scores_of(records)));
  for (const auto& p1 : pool1) {
    std::vector<double> scores;
    for (const auto& r : records)
      if (r.p1_id == p1.id) scores.push_back(r.score);
    summary["per_p1"][p1.id] = summary_to_json(stgame::evalh::summarize(scores));
  }
  for (const auto& p2 : pool2) {
    std::vector<double> scores;
    for (const auto& r : records)
      if (r.p2_id == p2.id) scores.push_back(r.score);
    summary["per_p2"][p2.id] = summary_to_json(stgame::evalh::summarize(scores));
  }
  write_text(out / "summary.json", summary.dump(2) + "\n");

  json resolved = {{"env", {{"preset", env.preset}, {"horizon", env.horizon}}},
                   {"tournament",
                    {{"games_per_pair", games_per_pair},
                     {"seed", tournament_seed},
                     {"p1", p1_paths},
                     {"p2", p2_paths},
                     {"jobs", jobs}}}};
  write_text(out / "resolved_config.json", resolved.dump(2) + "\n");

  std::cout << summary.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// solve-quadratic

struct DynamicsResult {
  Vec t1, t2;
  int steps = 0;
  bool converged = false;
};

template <typename StepFn>
DynamicsResult run_dynamics(const stgame::QuadraticGame& game, Vec t1, Vec t2,
                            int max_steps, double tol, StepFn step) {
  DynamicsResult res;
  for (int i = 0; i < max_steps; ++i) {
    auto [n1, n2] = step(t1, t2);
    const double delta = (n1 - t1).norm() + (n2 - t2).norm();
    t1 = std::move(n1);
    t2 = std::move(n2);
    ++res.steps;
    if (delta < tol) {
      res.converged = true;
      break;
    }
  }
  res.t1 = std::move(t1);
  res.t2 = std::move(t2);
  return res;
}

int cmd_solve_quadratic(const std::string& instance_path, double lr,
                        double lambda, int max_steps, double tol,
                        const std::string& out_flag, bool force) {
  stgame::QuadraticGame game = load_instance(instance_path);

  auto [nash1, nash2] = game.analytic_nash();
  auto [dse1, dse2] = game.analytic_dse();

  stgame::StackelbergConfig sc;
  sc.leader_lr = lr;
  sc.follower_lr = lr;
  sc.regularization = lambda;
  Vec z1 = Vec::Zero(game.dim1()), z2 = Vec::Zero(game.dim2());
  DynamicsResult st = run_dynamics(
      game, z1, z2, max_steps, tol, [&](const Vec& a, const Vec& b) {
        return stgame::stackelberg_step(game, a, b, sc);
      });
  DynamicsResult sim = run_dynamics(
      game, z1, z2, max_steps, tol, [&](const Vec& a, const Vec& b) {
        return stgame::simultaneous_step(game, a, b, lr, lr);
      });

  // Leader value = J with the follower at its best response to the point.
  auto leader_value = [&](const Vec& t1) {
    return game.value(t1, game.analytic_follower_best_response(t1));
  };
  stgame::DSEReport report = stgame::check_dse(game, dse1, dse2);

  json result = {
      {"instance", instance_path},
      {"nash",
       {{"theta1", vec_to_json(nash1)},
        {"theta2", vec_to_json(nash2)},
        {"leader_value", leader_value(nash1)}}},
      {"dse",
       {{"theta1", vec_to_json(dse1)},
        {"theta2", vec_to_json(dse2)},
        {"leader_value", leader_value(dse1)}}},
      {"stackelberg_dynamics",
       {{"theta1", vec_to_json(st.t1)},
        {"theta2", vec_to_json(st.t2)},
        {"leader_value", leader_value(st.t1)},
        {"steps", st.steps},
        {"converged", st.converged}}},
      {"simultaneous_dynamics",
       {{"theta1", vec_to_json(sim.t1)},
        {"theta2", vec_to_json(sim.t2)},
        {"leader_value", leader_value(sim.t1)},
        {"steps", sim.steps},
        {"converged", sim.converged}}},
      {"dse_report", dse_report_to_json(report)}};
  std::cout << result.dump(2) << "\n";

  if (!out_flag.empty()) {
    fs::path out = resolve_out(out_flag, "solve-quadratic");
    ensure_fresh(out, force, {"solution.json", "resolved_config.json"});
    write_text(out / "solution.json", result.dump(2) + "\n");
    json resolved = {{"instance", instance_path},
                     {"lr", lr},
                     {"lambda", lambda},
                     {"max_steps", max_steps},
                     {"tol", tol}};
    write_text(out / "resolved_config.json", resolved.dump(2) + "\n");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// verify-dse

int cmd_verify_dse(const std::string& instance_path, const std::string& t1_csv,
                   const std::string& t2_csv, double tol, double fd_step,
                   double lambda, const std::string& out_flag, bool force) {
  stgame::QuadraticGame game = load_instance(instance_path);
  Vec t1, t2;
  if (t1_csv.empty() != t2_csv.empty())
    throw std::runtime_error("--theta1 and --theta2 must be given together");
  if (t1_csv.empty()) {
    std::tie(t1, t2) = game.analytic_dse();
  } else {
    t1 = parse_vec(t1_csv);
    t2 = parse_vec(t2_csv);
    if (t1.size() != game.dim1() || t2.size() != game.dim2())
      throw std::runtime_error("point dimensions do not match the instance");
  }
  stgame::DSEReport report = stgame::check_dse(game, t1, t2, tol, fd_step,
                                               lambda);
  json result = {{"instance", instance_path},
                 {"theta1", vec_to_json(t1)},
                 {"theta2", vec_to_json(t2)},
                 {"tol", tol},
                 {"lambda", lambda},
                 {"report", dse_report_to_json(report)}};
  std::cout << result.dump(2) << "\n";
  if (!out_flag.empty()) {
    fs::path out = resolve_out(out_flag, "verify-dse");
    ensure_fresh(out, force, {"dse_report.json"});
    write_text(out / "dse_report.json", result.dump(2) + "\n");
  }
  return report.is_dse ? 0 : 2;
}

// ---------------------------------------------------------------------------
// referee

int cmd_referee(const std::string& ticks_path, const std::string& dwell_mode,
                int dwell_threshold, int horizon, const std::string& out_flag,
                bool force) {
  stgame::fencing::RefereeConfig config;
  if (dwell_mode == "once")
    config.dwell_mode = stgame::fencing::DwellBonusMode::kOncePerStay;
  else if (dwell_mode == "per-tick")
    config.dwell_mode = stgame::fencing::DwellBonusMode::kPerTick;
  else
    throw std::runtime_error("--dwell-mode must be once | per-tick");
  config.dwell_threshold = dwell_threshold;

  std::ifstream is(ticks_path);
  if (!is) throw std::runtime_error("cannot open ticks file " + ticks_path);

  auto parse_bool = [](const std::string& tok, int row) {
    if (tok == "0" || tok == "false") return false;
    if (tok == "1" || tok == "true") return true;
    throw std::runtime_error("row " + std::to_string(row) +
                             ": bad boolean '" + tok + "'");
  };

  std::ostringstream trace;
  trace << "t,delta,score\n";
  stgame::fencing::RefereeState state;
  std::string line;
  int row = 0;
  int ticks_seen = 0;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f0, f1, f2, f3, extra;
    if (!std::getline(ss, f0, ',') || !std::getline(ss, f1, ',') ||
        !std::getline(ss, f2, ',') || !std::getline(ss, f3, ','))
      throw std::runtime_error("row " + std::to_string(row) +
                               ": expected 4 comma-separated fields");
    if (std::getline(ss, extra, ','))
      throw std::runtime_error("row " + std::to_string(row) +
                               ": too many fields");
    if (row == 1 && f0 == "t") continue;  // optional header
    int t = 0;
    try {
      size_t pos = 0;
      t = std::stoi(f0, &pos);
      if (pos != f0.size()) throw std::invalid_argument(f0);
    } catch (const std::exception&) {
      throw std::runtime_error("row " + std::to_string(row) +
                               ": bad tick index '" + f0 + "'");
    }
    if (ticks_seen >= horizon)
      throw std::runtime_error("row " + std::to_string(row) +
                               ": more ticks than horizon " +
                               std::to_string(horizon));
    stgame::fencing::FencingTick tick;
    tick.bat_a_in_target = parse_bool(f1, row);
    tick.bats_contact = parse_bool(f2, row);
    tick.bat_p_in_target = parse_bool(f3, row);
    const int delta = stgame::fencing::referee_step(state, tick, config);
    trace << t << ',' << delta << ',' << state.score << '\n';
    ++ticks_seen;
  }
  std::cout << trace.str();
  std::cout << "final_score," << state.score << "\n";
  if (!out_flag.empty()) {
    fs::path out = resolve_out(out_flag, "referee");
    ensure_fresh(out, force, {"trace.csv"});
    write_text(out / "trace.csv", trace.str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// disturb-eval

int cmd_disturb_eval(const std::string& checkpoint_path, double magnitude,
                     int trials, uint64_t seed, int horizon,
                     const std::string& out_flag, bool force) {
  if (magnitude < 0.0) throw std::runtime_error("--magnitude must be >= 0");
  if (trials < 1) throw std::runtime_error("--trials must be >= 1");
  stgame::marl::TrainedPair pair = stgame::marl::load_pair(checkpoint_path);

  stgame::envs::AdversarialCartpoleConfig cfg;
  cfg.adv_max = std::max(cfg.adv_max, magnitude);
  if (horizon > 0) cfg.horizon = horizon;
  stgame::envs::AdversarialCartpoleEnv env(cfg);
  if (pair.obs_dim != env.obs_dim() || pair.act1_dim != env.act1_dim())
    throw std::runtime_error(
        "checkpoint dimensions incompatible with the adversarial cartpole");

  stgame::marl::ActorCriticBundle bundle = stgame::marl::bundle_from_pair(pair);
  auto policy = [&bundle](const Vec& obs) { return bundle.act(1, obs); };
  std::vector<double> scores =
      stgame::envs::random_disturbance_eval(policy, env, magnitude, trials,
                                            seed);

  json result = {{"checkpoint", checkpoint_path},
                 {"magnitude", magnitude},
                 {"trials", trials},
                 {"seed", seed},
                 {"summary", summary_to_json(stgame::evalh::summarize(scores))},
                 {"scores", scores}};
  std::cout << result.dump(2) << "\n";
  if (!out_flag.empty()) {
    fs::path out = resolve_out(out_flag, "disturb-eval");
    ensure_fresh(out, force, {"scores.csv", "resolved_config.json"});
    std::ostringstream csv;
    csv << "trial,score\n";
    char buf[40];
    for (size_t i = 0; i < scores.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", scores[i]);
      csv << i << ',' << buf << '\n';
    }
    write_text(out / "scores.csv", csv.str());
    json resolved = {{"checkpoint", checkpoint_path},
                     {"magnitude", magnitude},
                     {"trials", trials},
                     {"seed", seed},
                     {"horizon", horizon}};
    write_text(out / "resolved_config.json", resolved.dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stackelberg game dynamics / ST-MADDPG toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  bool force = false;
  int jobs = 1;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--out", out_dir, "output directory");
  app.add_flag("--force", force, "allow overwriting existing outputs");
  app.add_option("--jobs", jobs, "worker threads (tournament games)")
      ->check(CLI::PositiveNumber);

  EnvSettings env_flags;
  json trainer_flags = json::object();

  // train ------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "run MADDPG / ST-MADDPG training");
  auto* opt_env = train->add_option("--env", env_flags.preset,
                                    "cartpoles-sym | cartpoles-asym | adversarial");
  auto* opt_horizon =
      train->add_option("--horizon", env_flags.horizon, "episode horizon");
  std::string mode_flag, fh_flag;
  int leader_flag = 0, episodes_flag = 0, batch_flag = 0, warmup_flag = 0;
  double lambda_flag = 0.0;
  uint64_t seed_flag = 0;
  auto* opt_mode = train->add_option("--mode", mode_flag,
                                     "maddpg | st_maddpg | approx_st");
  auto* opt_leader = train->add_option("--leader", leader_flag, "leader id");
  auto* opt_lambda = train->add_option("--lambda", lambda_flag,
                                       "implicit-map regularization");
  auto* opt_episodes =
      train->add_option("--episodes", episodes_flag, "training episodes");
  auto* opt_seed = train->add_option("--seed", seed_flag, "run seed");
  auto* opt_batch = train->add_option("--batch-size", batch_flag, "batch size");
  auto* opt_warmup =
      train->add_option("--warmup", warmup_flag, "warmup env steps");
  auto* opt_fh = train->add_option("--follower-hessian", fh_flag,
                                   "exact | paper_term");

  // tournament -------------------------------------------------------------
  auto* tournament =
      app.add_subcommand("tournament", "round-robin checkpoint evaluation");
  std::vector<std::string> p1_paths, p2_paths;
  int games_flag = 20;
  uint64_t tseed_flag = 0;
  tournament->add_option("--p1", p1_paths, "player-1 checkpoints")->required();
  tournament->add_option("--p2", p2_paths, "player-2 checkpoints")->required();
  auto* opt_games =
      tournament->add_option("--games", games_flag, "games per pair");
  auto* opt_tseed = tournament->add_option("--seed", tseed_flag,
                                           "tournament seed");
  auto* opt_tenv = tournament->add_option("--env", env_flags.preset,
                                          "environment preset");
  auto* opt_thorizon =
      tournament->add_option("--horizon", env_flags.horizon, "episode horizon");

  // solve-quadratic --------------------------------------------------------
  auto* solveq = app.add_subcommand("solve-quadratic",
                                    "analytic + dynamic quadratic-game solve");
  std::string instance_path;
  double sq_lr = 0.01, sq_lambda = 0.0, sq_tol = 1e-10;
  int sq_steps = 200000;
  solveq->add_option("--instance", instance_path, "instance file")->required();
  solveq->add_option("--lr", sq_lr, "dynamics learning rate");
  solveq->add_option("--lambda", sq_lambda, "leader regularization");
  solveq->add_option("--steps", sq_steps, "max dynamics steps");
  solveq->add_option("--tol", sq_tol, "convergence tolerance");

  // verify-dse -------------------------------------------------------------
  auto* verify = app.add_subcommand("verify-dse",
                                    "check a point for the DSE conditions");
  std::string vd_instance, vd_t1, vd_t2;
  double vd_tol = 1e-6, vd_fd = 1e-5, vd_lambda = 0.0;
  verify->add_option("--instance", vd_instance, "instance file")->required();
  verify->add_option("--theta1", vd_t1, "comma-separated leader point");
  verify->add_option("--theta2", vd_t2, "comma-separated follower point");
  verify->add_option("--tol", vd_tol, "stationarity tolerance");
  verify->add_option("--fd-step", vd_fd, "finite-difference step");
  verify->add_option("--lambda", vd_lambda, "regularization for the check");

  // referee ----------------------------------------------------------------
  auto* referee = app.add_subcommand("referee", "score a fencing tick stream");
  std::string ticks_path, dwell_mode = "once";
  int dwell_threshold = 200, ref_horizon = 1000;
  referee->add_option("--ticks", ticks_path, "tick CSV file")->required();
  referee->add_option("--dwell-mode", dwell_mode, "once | per-tick");
  referee->add_option("--dwell-threshold", dwell_threshold, "dwell threshold");
  referee->add_option("--horizon", ref_horizon, "max ticks");

  // disturb-eval -----------------------------------------------------------
  auto* disturb = app.add_subcommand("disturb-eval",
                                     "random-disturbance robustness eval");
  std::string de_checkpoint;
  double de_magnitude = 0.0;
  int de_trials = 10, de_horizon = 0;
  uint64_t de_seed = 0;
  disturb->add_option("--checkpoint", de_checkpoint, "protagonist checkpoint")
      ->required();
  disturb->add_option("--magnitude", de_magnitude, "disturbance magnitude");
  disturb->add_option("--trials", de_trials, "episodes to run");
  disturb->add_option("--seed", de_seed, "evaluation seed");
  disturb->add_option("--horizon", de_horizon, "episode horizon");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      if (opt_mode->count()) trainer_flags["mode"] = mode_flag;
      if (opt_leader->count()) trainer_flags["leader_id"] = leader_flag;
      if (opt_lambda->count()) trainer_flags["lambda"] = lambda_flag;
      if (opt_episodes->count()) trainer_flags["episodes"] = episodes_flag;
      if (opt_seed->count()) trainer_flags["seed"] = seed_flag;
      if (opt_batch->count()) trainer_flags["batch_size"] = batch_flag;
      if (opt_warmup->count()) trainer_flags["warmup_steps"] = warmup_flag;
      if (opt_fh->count()) trainer_flags["follower_hessian"] = fh_flag;
      return cmd_train(config_path, env_flags, opt_env->count() > 0,
                       opt_horizon->count() > 0, trainer_flags, out_dir, force);
    }
    if (tournament->parsed())
      return cmd_tournament(p1_paths, p2_paths, config_path, env_flags,
                            opt_tenv->count() > 0, opt_thorizon->count() > 0,
                            games_flag, opt_games->count() > 0, tseed_flag,
                            opt_tseed->count() > 0, jobs, out_dir, force);
    if (solveq->parsed())
      return cmd_solve_quadratic(instance_path, sq_lr, sq_lambda, sq_steps,
                                 sq_tol, out_dir, force);
    if (verify->parsed())
      return cmd_verify_dse(vd_instance, vd_t1, vd_t2, vd_tol, vd_fd,
                            vd_lambda, out_dir, force);
    if (referee->parsed())
      return cmd_referee(ticks_path, dwell_mode, dwell_threshold, ref_horizon,
                         out_dir, force);
    if (disturb->parsed())
      return cmd_disturb_eval(de_checkpoint, de_magnitude, de_trials, de_seed,
                              de_horizon, out_dir, force);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
