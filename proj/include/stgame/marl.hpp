#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "stgame/envs.hpp"
#include "stgame/graph.hpp"

namespace stgame::marl {

using ad::Graph;
using ad::Mat;
using ad::ParameterVector;
using ad::Vec;

struct Transition {
  Vec s;
  Vec a1;
  Vec a2;
  double r = 0.0;  // player-1 reward
  Vec s_next;
  bool done = false;
};

// Ring buffer with uniform minibatch sampling and FIFO eviction.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity = 1000000);
  void push(Transition t);
  size_t size() const { return storage_.size(); }
  size_t capacity() const { return capacity_; }
  uint64_t total_pushes() const { return pushes_; }
  const Transition& at(size_t i) const { return storage_[i]; }
  std::vector<const Transition*> sample(size_t n, std::mt19937_64& rng) const;

 private:
  size_t capacity_;
  size_t head_ = 0;
  uint64_t pushes_ = 0;
  std::vector<Transition> storage_;
};

enum class Activation { kRelu, kTanh };

struct NetworkConfig {
  std::vector<int> actor_hidden{64, 64};
  std::vector<int> critic_hidden{64, 64};
  // A relu critic is piecewise linear in the actions, which makes the
  // Stackelberg cross term vanish identically; tanh keeps it non-degenerate.
  Activation critic_activation = Activation::kRelu;
};

// Two deterministic tanh-squashed actors, one centralized critic and their
// polyak-averaged target copies. Segments are named theta1, theta2, w; the
// composite graph evaluates mean_batch Q_w(s, mu1(s), mu2(s)).
class ActorCriticBundle {
 public:
  ActorCriticBundle(int obs_dim, int act1_dim, int act2_dim, double bound1,
                    double bound2, NetworkConfig net, double tau, double gamma,
                    uint64_t init_seed);

  int obs_dim() const { return obs_dim_; }
  int act1_dim() const { return act1_dim_; }
  int act2_dim() const { return act2_dim_; }
  double bound(int player) const { return player == 1 ? bound1_ : bound2_; }
  double tau() const { return tau_; }
  double gamma() const { return gamma_; }
  const NetworkConfig& network() const { return net_; }

  ParameterVector& params() { return params_; }
  const ParameterVector& params() const { return params_; }
  ParameterVector& target_params() { return target_params_; }
  const ParameterVector& target_params() const { return target_params_; }

  Vec act(int player, const Vec& obs) const;
  Mat actions(int player, const Mat& states, bool target = false) const;
  // Q_w'(s, mu'(s), mu'(s)) bootstrap values, one per batch row.
  Vec target_q(const Mat& next_states) const;

  const Graph& actor_graph(int player) const {
    return player == 1 ? actor1_ : actor2_;
  }
  const Graph& critic_graph() const { return critic_; }
  const Graph& critic_loss_graph() const { return critic_loss_; }
  const Graph& composite_graph() const { return composite_; }

  // w' <- tau w + (1 - tau) w' for every segment.
  void polyak_update();
  void copy_live_to_target() { target_params_.values() = params_.values(); }

 private:
  int obs_dim_, act1_dim_, act2_dim_;
  double bound1_, bound2_, tau_, gamma_;
  NetworkConfig net_;
  Graph actor1_, actor2_, critic_, critic_loss_, composite_;
  ParameterVector params_, target_params_;
};

enum class TrainerMode { kMaddpg, kStMaddpg, kApproxSt };
enum class FollowerHessian { kExact, kPaperTerm };

struct TrainerConfig {
  TrainerMode mode = TrainerMode::kMaddpg;
  int leader_id = 1;
  double lambda = 1.0;
  int cg_iters = 5;
  double cg_tol = 1e-10;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  int batch_size = 100;
  int warmup_steps = 10000;
  double noise_sigma0 = 0.3;   // initial noise, fraction of the action range
  double noise_sigma1 = 0.05;  // final noise fraction after linear decay
  int follower_extra_updates = 10;  // k, approx_st mode
  int episodes = 0;
  uint64_t seed = 0;
  double tau = 0.01;
  double gamma = 0.99;
  NetworkConfig network;
  FollowerHessian follower_hessian = FollowerHessian::kExact;
  size_t buffer_capacity = 1000000;
};

struct BatchMatrices {
  Mat s, a1, a2, s_next;
  Vec r;
  Vec done;  // 1.0 for terminal transitions
};

BatchMatrices assemble_batch(const std::vector<const Transition*>& batch);

// One gradient step on the mean-square Bellman error; returns pre-step loss.
double critic_update(ActorCriticBundle& bundle, const BatchMatrices& batch,
                     double critic_lr);

// Batch-mean deterministic policy gradients of both players through the
// composite objective.
std::pair<Vec, Vec> actor_gradients(ActorCriticBundle& bundle,
                                    const Mat& states);

struct LeaderGradientOptions {
  double lambda = 1.0;
  int cg_iters = 5;
  double cg_tol = 1e-10;
  FollowerHessian follower_hessian = FollowerHessian::kExact;
};

// Regularized total derivative of the leader on the sampled batch, expressed
// as an ascent direction on the leader's own objective. Falls back to the
// plain actor gradient when CG misbehaves; `fallback` reports the event.
// `follower_gradient`, when given, receives the follower's plain batch
// gradient of J (identical to the actor_gradients entry), computed from the
// same session so simultaneous updates cost no extra backward pass.
Vec leader_total_gradient(ActorCriticBundle& bundle, const Mat& states,
                          int leader_id, const LeaderGradientOptions& options,
                          bool* fallback = nullptr,
                          Vec* follower_gradient = nullptr);

struct EpisodeMetrics {
  int episode = 0;
  int steps = 0;
  double score_p1 = 0.0;
  double critic_loss_mean = 0.0;
  int cg_fallbacks = 0;
  int64_t wall_ms = 0;
};

struct TrainStats {
  std::vector<EpisodeMetrics> episodes;
  int64_t total_env_steps = 0;
  int64_t total_updates = 0;
  int cg_fallbacks = 0;
  bool aborted_non_finite = false;
  // Mean per-update wall time, for the cost-model comparison.
  double leader_update_mean_us = 0.0;
  double plain_update_mean_us = 0.0;
  double wall_ms_total = 0.0;
};

struct TrainedPair {
  TrainerConfig config;
  int obs_dim = 0, act1_dim = 0, act2_dim = 0;
  double bound1 = 0.0, bound2 = 0.0;
  ParameterVector params;  // segments theta1, theta2, w
};

class Trainer {
 public:
  Trainer(envs::TwoPlayerEnv& env, TrainerConfig config);

  // Runs config.episodes episodes of Algorithm-style training; fully
  // reproducible from config.seed.
  TrainStats train();

  ActorCriticBundle& bundle() { return bundle_; }
  const ActorCriticBundle& bundle() const { return bundle_; }
  const TrainerConfig& config() const { return config_; }
  TrainedPair trained_pair() const;

 private:
  void update_step(double& critic_loss_accum, int& updates, int& fallbacks);

  envs::TwoPlayerEnv& env_;
  TrainerConfig config_;
  ActorCriticBundle bundle_;
  ReplayBuffer buffer_;
  std::mt19937_64 rng_;
  int64_t env_steps_ = 0;
  int64_t updates_total_ = 0;
  int64_t follower_updates_since_leader_ = 0;
  double leader_update_us_sum_ = 0.0;
  int64_t leader_update_count_ = 0;
  double plain_update_us_sum_ = 0.0;
  int64_t plain_update_count_ = 0;
};

void save_pair(const TrainedPair& pair, std::ostream& os);
void save_pair(const TrainedPair& pair, const std::string& path);
TrainedPair load_pair(std::istream& is);
TrainedPair load_pair(const std::string& path);

// Rebuilds the network bundle a checkpoint was trained with (parameters are
// copied in; targets start equal to live).
ActorCriticBundle bundle_from_pair(const TrainedPair& pair);

// include_timing=false drops the wall_ms column, leaving only columns that
// are reproducible byte-for-byte across reruns of the same seed.
void write_metrics_csv(const TrainStats& stats, std::ostream& os,
                       bool include_timing = true);

std::string to_string(TrainerMode mode);
TrainerMode trainer_mode_from_string(const std::string& s);

}  // namespace stgame::marl
