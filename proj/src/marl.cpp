#include "stgame/marl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "stgame/stackelberg.hpp"

namespace stgame::marl {

namespace {

using json = nlohmann::json;

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t x = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

struct Block {
  int rows, cols;
  double init_bound;
};

// y = tanh(...tanh(x W + b)...) W_out + b_out, squashed and scaled to the
// action bound.
int build_actor(Graph& g, const std::string& seg, int s_node, int obs_dim,
                const std::vector<int>& hidden, int act_dim, double bound,
                std::vector<Block>* blocks) {
  int h = s_node;
  int in_dim = obs_dim;
  for (int width : hidden) {
    int w = g.parameter(seg, in_dim, width);
    int b = g.parameter(seg, 1, width);
    if (blocks) {
      const double ib = 1.0 / std::sqrt(static_cast<double>(in_dim));
      blocks->push_back({in_dim, width, ib});
      blocks->push_back({1, width, ib});
    }
    h = g.tanh(g.add_row(g.matmul(h, w), b));
    in_dim = width;
  }
  int w = g.parameter(seg, in_dim, act_dim);
  int b = g.parameter(seg, 1, act_dim);
  if (blocks) {
    const double ib = 1.0 / std::sqrt(static_cast<double>(in_dim));
    blocks->push_back({in_dim, act_dim, ib});
    blocks->push_back({1, act_dim, ib});
  }
  return g.scale(g.tanh(g.add_row(g.matmul(h, w), b)), bound);
}

int build_critic(Graph& g, const std::string& seg, int s_node, int a1_node,
                 int a2_node, int obs_dim, int act1_dim, int act2_dim,
                 const std::vector<int>& hidden, Activation activation,
                 std::vector<Block>* blocks) {
  auto act = [&](int node) {
    return activation == Activation::kTanh ? g.tanh(node) : g.relu(node);
  };
  const int joint = obs_dim + act1_dim + act2_dim;
  const double ib0 = 1.0 / std::sqrt(static_cast<double>(joint));
  const int w0 = hidden.empty() ? 1 : hidden.front();

  int ws = g.parameter(seg, obs_dim, w0);
  int wa1 = g.parameter(seg, act1_dim, w0);
  int wa2 = g.parameter(seg, act2_dim, w0);
  int b0 = g.parameter(seg, 1, w0);
  if (blocks) {
    blocks->push_back({obs_dim, w0, ib0});
    blocks->push_back({act1_dim, w0, ib0});
    blocks->push_back({act2_dim, w0, ib0});
    blocks->push_back({1, w0, ib0});
  }
  int h = g.add_row(
      g.add(g.add(g.matmul(s_node, ws), g.matmul(a1_node, wa1)),
            g.matmul(a2_node, wa2)),
      b0);
  if (!hidden.empty()) h = act(h);

  int in_dim = w0;
  for (size_t i = 1; i < hidden.size(); ++i) {
    int width = hidden[i];
    int w = g.parameter(seg, in_dim, width);
    int b = g.parameter(seg, 1, width);
    if (blocks) {
      const double ib = 1.0 / std::sqrt(static_cast<double>(in_dim));
      blocks->push_back({in_dim, width, ib});
      blocks->push_back({1, width, ib});
    }
    h = act(g.add_row(g.matmul(h, w), b));
    in_dim = width;
  }
  int w = g.parameter(seg, in_dim, 1);
  int b = g.parameter(seg, 1, 1);
  if (blocks) {
    const double ib = 1.0 / std::sqrt(static_cast<double>(in_dim));
    blocks->push_back({in_dim, 1, ib});
    blocks->push_back({1, 1, ib});
  }
  return g.add_row(g.matmul(h, w), b);
}

void init_segment(Eigen::Ref<Vec> seg, const std::vector<Block>& blocks,
                  std::mt19937_64& rng) {
  Eigen::Index offset = 0;
  for (const auto& block : blocks) {
    std::uniform_real_distribution<double> u(-block.init_bound,
                                             block.init_bound);
    const Eigen::Index n =
        static_cast<Eigen::Index>(block.rows) * block.cols;
    for (Eigen::Index i = 0; i < n; ++i) seg[offset + i] = u(rng);
    offset += n;
  }
  if (offset != seg.size())
    throw std::logic_error("init_segment: layout mismatch");
}

}  // namespace

// ---------------------------------------------------------------------------
// ReplayBuffer

ReplayBuffer::ReplayBuffer(size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0)
    throw std::invalid_argument("ReplayBuffer: zero capacity");
}

void ReplayBuffer::push(Transition t) {
  if (storage_.size() < capacity_) {
    storage_.push_back(std::move(t));
  } else {
    storage_[head_] = std::move(t);
    head_ = (head_ + 1) % capacity_;
  }
  ++pushes_;
}

std::vector<const Transition*> ReplayBuffer::sample(
    size_t n, std::mt19937_64& rng) const {
  if (storage_.empty())
    throw std::invalid_argument("ReplayBuffer: sampling from empty buffer");
  std::uniform_int_distribution<size_t> dist(0, storage_.size() - 1);
  std::vector<const Transition*> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) out.push_back(&storage_[dist(rng)]);
  return out;
}

// ---------------------------------------------------------------------------
// ActorCriticBundle

ActorCriticBundle::ActorCriticBundle(int obs_dim, int act1_dim, int act2_dim,
                                     double bound1, double bound2,
                                     NetworkConfig net, double tau,
                                     double gamma, uint64_t init_seed)
    : obs_dim_(obs_dim), act1_dim_(act1_dim), act2_dim_(act2_dim),
      bound1_(bound1), bound2_(bound2), tau_(tau), gamma_(gamma), net_(net) {
  if (tau <= 0.0 || tau > 1.0)
    throw std::invalid_argument("ActorCriticBundle: tau must be in (0, 1]");
  if (gamma <= 0.0 || gamma > 1.0)
    throw std::invalid_argument("ActorCriticBundle: gamma must be in (0, 1]");

  std::vector<Block> actor1_blocks, actor2_blocks, critic_blocks;

  {  // composite: mean Q_w(s, mu1(s), mu2(s)); defines the segment layouts
    int s = composite_.input("s", obs_dim);
    int a1 = build_actor(composite_, "theta1", s, obs_dim, net.actor_hidden,
                         act1_dim, bound1, &actor1_blocks);
    int a2 = build_actor(composite_, "theta2", s, obs_dim, net.actor_hidden,
                         act2_dim, bound2, &actor2_blocks);
    int q = build_critic(composite_, "w", s, a1, a2, obs_dim, act1_dim,
                         act2_dim, net.critic_hidden, net.critic_activation,
                         &critic_blocks);
    composite_.set_output(composite_.mean(q));
  }
  {
    int s = actor1_.input("s", obs_dim);
    actor1_.set_output(build_actor(actor1_, "theta1", s, obs_dim,
                                   net.actor_hidden, act1_dim, bound1,
                                   nullptr));
  }
  {
    int s = actor2_.input("s", obs_dim);
    actor2_.set_output(build_actor(actor2_, "theta2", s, obs_dim,
                                   net.actor_hidden, act2_dim, bound2,
                                   nullptr));
  }
  {
    int s = critic_.input("s", obs_dim);
    int a1 = critic_.input("a1", act1_dim);
    int a2 = critic_.input("a2", act2_dim);
    critic_.set_output(build_critic(critic_, "w", s, a1, a2, obs_dim, act1_dim,
                                    act2_dim, net.critic_hidden,
                                    net.critic_activation, nullptr));
  }
  {
    int s = critic_loss_.input("s", obs_dim);
    int a1 = critic_loss_.input("a1", act1_dim);
    int a2 = critic_loss_.input("a2", act2_dim);
    int y = critic_loss_.input("y", 1);
    int q = build_critic(critic_loss_, "w", s, a1, a2, obs_dim, act1_dim,
                         act2_dim, net.critic_hidden, net.critic_activation,
                         nullptr);
    critic_loss_.set_output(
        critic_loss_.mean(critic_loss_.square(critic_loss_.sub(q, y))));
  }

  params_ = composite_.make_params();
  std::mt19937_64 rng(mix_seed(init_seed, 0xac));
  init_segment(params_.segment("theta1"), actor1_blocks, rng);
  init_segment(params_.segment("theta2"), actor2_blocks, rng);
  init_segment(params_.segment("w"), critic_blocks, rng);
  target_params_ = params_;
}

Vec ActorCriticBundle::act(int player, const Vec& obs) const {
  Mat s = obs.transpose();
  Mat a = actions(player, s, false);
  return a.row(0).transpose();
}

Mat ActorCriticBundle::actions(int player, const Mat& states,
                               bool target) const {
  const Graph& g = player == 1 ? actor1_ : actor2_;
  return g.evaluate(target ? target_params_ : params_, {{"s", states}});
}

Vec ActorCriticBundle::target_q(const Mat& next_states) const {
  Mat a1 = actions(1, next_states, true);
  Mat a2 = actions(2, next_states, true);
  Mat q = critic_.evaluate(target_params_,
                           {{"s", next_states}, {"a1", a1}, {"a2", a2}});
  return Eigen::Map<const Vec>(q.data(), q.rows());
}

void ActorCriticBundle::polyak_update() {
  target_params_.values() =
      tau_ * params_.values() + (1.0 - tau_) * target_params_.values();
}

// ---------------------------------------------------------------------------
// Update operations

BatchMatrices assemble_batch(const std::vector<const Transition*>& batch) {
  if (batch.empty()) throw std::invalid_argument("assemble_batch: empty batch");
  const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
  BatchMatrices out;
  out.s.resize(n, batch[0]->s.size());
  out.a1.resize(n, batch[0]->a1.size());
  out.a2.resize(n, batch[0]->a2.size());
  out.s_next.resize(n, batch[0]->s_next.size());
  out.r.resize(n);
  out.done.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Transition& t = *batch[static_cast<size_t>(i)];
    out.s.row(i) = t.s.transpose();
    out.a1.row(i) = t.a1.transpose();
    out.a2.row(i) = t.a2.transpose();
    out.s_next.row(i) = t.s_next.transpose();
    out.r[i] = t.r;
    out.done[i] = t.done ? 1.0 : 0.0;
  }
  return out;
}

double critic_update(ActorCriticBundle& bundle, const BatchMatrices& batch,
                     double critic_lr) {
  Vec boot = bundle.target_q(batch.s_next);
  // Terminal transitions use y = r.
  Vec y = batch.r.array() +
          bundle.gamma() * (1.0 - batch.done.array()) * boot.array();
  ad::GraphSession session(
      bundle.critic_loss_graph(), bundle.params(),
      {{"s", batch.s}, {"a1", batch.a1}, {"a2", batch.a2}, {"y", Mat(y)}});
  const double loss = session.value();
  if (!std::isfinite(loss))
    throw std::runtime_error("critic_update: non-finite loss");
  Vec g = session.gradient("w");
  bundle.params().segment("w") -= critic_lr * g;
  return loss;
}

std::pair<Vec, Vec> actor_gradients(ActorCriticBundle& bundle,
                                    const Mat& states) {
  ad::GraphSession session(bundle.composite_graph(), bundle.params(),
                           {{"s", states}});
  return {session.gradient("theta1"), session.gradient("theta2")};
}

namespace {

// Hessian-vector products of the single-term follower Hessian
// E[grad^2_theta mu * grad_a Q]: the exact Hessian of the batch objective
// linearized in the follower's own action.
struct PaperTermHvp {
  Graph lin;
  std::unique_ptr<ad::GraphSession> session;
  std::string seg;

  PaperTermHvp(ActorCriticBundle& bundle, const Mat& states, int follower_id) {
    seg = follower_id == 1 ? "theta1" : "theta2";
    const int obs_dim = bundle.obs_dim();
    const int act_dim =
        follower_id == 1 ? bundle.act1_dim() : bundle.act2_dim();
    const NetworkConfig& net = bundle.network();

    // Per-row action gradient of Q at the live joint action: the gradient of
    // sum_i Q_i w.r.t. one action input has the per-row gradients as rows.
    Graph sum_q;
    int s = sum_q.input("s", obs_dim);
    int a1 = sum_q.input("a1", bundle.act1_dim(), follower_id == 1);
    int a2 = sum_q.input("a2", bundle.act2_dim(), follower_id == 2);
    int q = build_critic(sum_q, "w", s, a1, a2, obs_dim, bundle.act1_dim(),
                         bundle.act2_dim(), net.critic_hidden,
                         net.critic_activation, nullptr);
    sum_q.set_output(sum_q.sum(q));
    Mat m1 = bundle.actions(1, states, false);
    Mat m2 = bundle.actions(2, states, false);
    ad::GraphSession qs(sum_q, bundle.params(),
                        {{"s", states}, {"a1", m1}, {"a2", m2}});
    Mat action_grad = qs.input_gradient(follower_id == 1 ? "a1" : "a2");

    // (1/B) sum_i <mu(s_i), G_i>, whose theta-Hessian is the single term of
    // the batch-mean objective. mean() divides by B * act_dim, so scale the
    // action dimension back in.
    const double bound = bundle.bound(follower_id);
    int sl = lin.input("s", obs_dim);
    int gm = lin.input("g", act_dim);
    int mu = build_actor(lin, seg, sl, obs_dim, net.actor_hidden, act_dim,
                         bound, nullptr);
    lin.set_output(
        lin.scale(lin.mean(lin.mul(mu, gm)), static_cast<double>(act_dim)));
    session = std::make_unique<ad::GraphSession>(
        lin, bundle.params(), Graph::Inputs{{"s", states}, {"g", action_grad}});
  }

  Vec hvp(const Vec& v) { return session->hvp(seg, v); }
};

}  // namespace

Vec leader_total_gradient(ActorCriticBundle& bundle, const Mat& states,
                          int leader_id, const LeaderGradientOptions& options,
                          bool* fallback, Vec* follower_gradient) {
  if (leader_id != 1 && leader_id != 2)
    throw std::invalid_argument("leader_total_gradient: leader_id must be 1/2");
  const std::string leader_seg = leader_id == 1 ? "theta1" : "theta2";
  const std::string follower_seg = leader_id == 1 ? "theta2" : "theta1";
  // Leader's own objective is sign * J; the zero-sum follower cost equals it.
  const double sign = leader_id == 1 ? 1.0 : -1.0;
  if (fallback) *fallback = false;

  ad::GraphSession session(bundle.composite_graph(), bundle.params(),
                           {{"s", states}});
  Vec leader_grad = sign * session.gradient(leader_seg);
  Vec raw_follower_grad = session.gradient(follower_seg);
  if (follower_gradient) *follower_gradient = raw_follower_grad;
  Vec follower_grad = sign * raw_follower_grad;

  try {
    std::unique_ptr<PaperTermHvp> paper;
    if (options.follower_hessian == FollowerHessian::kPaperTerm)
      paper = std::make_unique<PaperTermHvp>(bundle, states,
                                             leader_id == 1 ? 2 : 1);
    auto matvec = [&](const Vec& v) -> Vec {
      Vec hv = sign * (paper ? paper->hvp(v) : session.hvp(follower_seg, v));
      if (options.lambda != 0.0) hv += options.lambda * v;
      return hv;
    };
    CgResult cg = conjugate_gradient(matvec, follower_grad, options.cg_iters,
                                     options.cg_tol);
    if (cg.residual > follower_grad.norm() * (1.0 + 1e-9) + options.cg_tol &&
        cg.iterations > 0)
      throw std::runtime_error("CG residual diverged");
    Vec correction = sign * session.mixed_pvp(leader_seg, follower_seg, cg.x);
    Vec total = leader_grad - correction;
    if (!total.allFinite()) throw std::runtime_error("non-finite total");
    return total;
  } catch (const std::runtime_error&) {
    if (fallback) *fallback = true;
    return leader_grad;
  }
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(envs::TwoPlayerEnv& env, TrainerConfig config)
    : env_(env), config_(config),
      bundle_(env.obs_dim(), env.act1_dim(), env.act2_dim(), env.act1_bound(),
              env.act2_bound(), config.network, config.tau, config.gamma,
              config.seed),
      buffer_(config.buffer_capacity), rng_(mix_seed(config.seed, 0x7a)) {
  if (config_.mode == TrainerMode::kStMaddpg && config_.lambda < 0.0)
    throw std::invalid_argument("Trainer: st_maddpg requires lambda >= 0");
  if (config_.leader_id != 1 && config_.leader_id != 2)
    throw std::invalid_argument("Trainer: leader_id must be 1 or 2");
  if (config_.batch_size < 1)
    throw std::invalid_argument("Trainer: batch_size must be >= 1");
}

void Trainer::update_step(double& critic_loss_accum, int& updates,
                          int& fallbacks) {
  using Clock = std::chrono::steady_clock;
  auto batch = assemble_batch(
      buffer_.sample(static_cast<size_t>(config_.batch_size), rng_));
  critic_loss_accum += critic_update(bundle_, batch, config_.critic_lr);

  const double lr = config_.actor_lr;
  switch (config_.mode) {
    case TrainerMode::kMaddpg: {
      auto t0 = Clock::now();
      auto [g1, g2] = actor_gradients(bundle_, batch.s);
      bundle_.params().segment("theta1") += lr * g1;
      bundle_.params().segment("theta2") -= lr * g2;
      plain_update_us_sum_ +=
          std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
      ++plain_update_count_;
      break;
    }
    case TrainerMode::kStMaddpg: {
      LeaderGradientOptions opt;
      opt.lambda = config_.lambda;
      opt.cg_iters = config_.cg_iters;
      opt.cg_tol = config_.cg_tol;
      opt.follower_hessian = config_.follower_hessian;
      const std::string leader_seg =
          config_.leader_id == 1 ? "theta1" : "theta2";
      const std::string follower_seg =
          config_.leader_id == 1 ? "theta2" : "theta1";
      const double sign = config_.leader_id == 1 ? 1.0 : -1.0;

      auto t0 = Clock::now();
      bool fell = false;
      Vec gf;
      Vec d = leader_total_gradient(bundle_, batch.s, config_.leader_id, opt,
                                    &fell, &gf);
      leader_update_us_sum_ +=
          std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
      ++leader_update_count_;
      if (fell) ++fallbacks;
      // Simultaneous step: leader ascends its own objective, follower
      // descends the shared cost, both evaluated at the pre-update point.
      bundle_.params().segment(leader_seg) += lr * d;
      bundle_.params().segment(follower_seg) -= lr * sign * gf;
      break;
    }
    case TrainerMode::kApproxSt: {
      auto t0 = Clock::now();
      auto [g1, g2] = actor_gradients(bundle_, batch.s);
      const std::string leader_seg =
          config_.leader_id == 1 ? "theta1" : "theta2";
      const std::string follower_seg =
          config_.leader_id == 1 ? "theta2" : "theta1";
      const double sign = config_.leader_id == 1 ? 1.0 : -1.0;
      const Vec& gl = config_.leader_id == 1 ? g1 : g2;
      const Vec& gf = config_.leader_id == 1 ? g2 : g1;
      bundle_.params().segment(follower_seg) -= lr * sign * gf;
      ++follower_updates_since_leader_;
      if (follower_updates_since_leader_ >= config_.follower_extra_updates) {
        bundle_.params().segment(leader_seg) += lr * sign * gl;
        follower_updates_since_leader_ = 0;
      }
      plain_update_us_sum_ +=
          std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
      ++plain_update_count_;
      break;
    }
  }
  bundle_.polyak_update();
  ++updates;
  ++updates_total_;
}

TrainStats Trainer::train() {
  using Clock = std::chrono::steady_clock;
  TrainStats stats;
  auto run_start = Clock::now();
  Vec last_good = bundle_.params().values();
  Vec last_good_target = bundle_.target_params().values();

  for (int ep = 0; ep < config_.episodes; ++ep) {
    auto ep_start = Clock::now();
    Vec obs = env_.reset(mix_seed(config_.seed, 0xe0 + static_cast<uint64_t>(ep)));
    double score = 0.0;
    double critic_loss_accum = 0.0;
    int updates = 0;
    int fallbacks = 0;
    int steps = 0;

    const double total_steps_estimate =
        std::max(1.0, static_cast<double>(config_.episodes) *
                          static_cast<double>(env_.horizon()));

    while (true) {
      Vec a1(env_.act1_dim()), a2(env_.act2_dim());
      if (env_steps_ < config_.warmup_steps) {
        std::uniform_real_distribution<double> u1(-env_.act1_bound(),
                                                  env_.act1_bound());
        std::uniform_real_distribution<double> u2(-env_.act2_bound(),
                                                  env_.act2_bound());
        for (int i = 0; i < a1.size(); ++i) a1[i] = u1(rng_);
        for (int i = 0; i < a2.size(); ++i) a2[i] = u2(rng_);
      } else {
        const double frac = std::min(
            1.0, static_cast<double>(env_steps_) / total_steps_estimate);
        const double sigma_frac =
            config_.noise_sigma0 +
            frac * (config_.noise_sigma1 - config_.noise_sigma0);
        std::normal_distribution<double> n1(0.0,
                                            sigma_frac * env_.act1_bound());
        std::normal_distribution<double> n2(0.0,
                                            sigma_frac * env_.act2_bound());
        a1 = bundle_.act(1, obs);
        a2 = bundle_.act(2, obs);
        for (int i = 0; i < a1.size(); ++i)
          a1[i] = std::clamp(a1[i] + n1(rng_), -env_.act1_bound(),
                             env_.act1_bound());
        for (int i = 0; i < a2.size(); ++i)
          a2[i] = std::clamp(a2[i] + n2(rng_), -env_.act2_bound(),
                             env_.act2_bound());
      }

      envs::StepResult r = env_.step(a1, a2);
      score += r.reward;
      buffer_.push({obs, a1, a2, r.reward, r.next_obs, r.done});
      ++env_steps_;
      ++steps;

      if (env_steps_ >= config_.warmup_steps &&
          buffer_.size() >= static_cast<size_t>(config_.batch_size))
        update_step(critic_loss_accum, updates, fallbacks);

      if (r.done) break;
      obs = r.next_obs;
    }

    EpisodeMetrics m;
    m.episode = ep;
    m.steps = steps;
    m.score_p1 = score;
    m.critic_loss_mean = updates > 0 ? critic_loss_accum / updates : 0.0;
    m.cg_fallbacks = fallbacks;
    m.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                    Clock::now() - ep_start)
                    .count();
    stats.episodes.push_back(m);
    stats.cg_fallbacks += fallbacks;

    if (!bundle_.params().all_finite()) {
      bundle_.params().values() = last_good;
      bundle_.target_params().values() = last_good_target;
      stats.aborted_non_finite = true;
      break;
    }
    last_good = bundle_.params().values();
    last_good_target = bundle_.target_params().values();
  }

  stats.total_env_steps = env_steps_;
  stats.total_updates = updates_total_;
  if (leader_update_count_ > 0)
    stats.leader_update_mean_us = leader_update_us_sum_ / leader_update_count_;
  if (plain_update_count_ > 0)
    stats.plain_update_mean_us = plain_update_us_sum_ / plain_update_count_;
  stats.wall_ms_total =
      std::chrono::duration<double, std::milli>(Clock::now() - run_start)
          .count();
  return stats;
}

TrainedPair Trainer::trained_pair() const {
  TrainedPair pair;
  pair.config = config_;
  pair.obs_dim = bundle_.obs_dim();
  pair.act1_dim = bundle_.act1_dim();
  pair.act2_dim = bundle_.act2_dim();
  pair.bound1 = bundle_.bound(1);
  pair.bound2 = bundle_.bound(2);
  pair.params = bundle_.params();
  return pair;
}

// ---------------------------------------------------------------------------
// Serialization

std::string to_string(TrainerMode mode) {
  switch (mode) {
    case TrainerMode::kMaddpg: return "maddpg";
    case TrainerMode::kStMaddpg: return "st_maddpg";
    case TrainerMode::kApproxSt: return "approx_st";
  }
  return "maddpg";
}

TrainerMode trainer_mode_from_string(const std::string& s) {
  if (s == "maddpg") return TrainerMode::kMaddpg;
  if (s == "st_maddpg") return TrainerMode::kStMaddpg;
  if (s == "approx_st") return TrainerMode::kApproxSt;
  throw std::invalid_argument("unknown trainer mode '" + s + "'");
}

namespace {

json config_to_json(const TrainerConfig& c) {
  return json{{"mode", to_string(c.mode)},
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
               c.network.critic_activation == Activation::kTanh ? "tanh"
                                                                : "relu"},
              {"follower_hessian",
               c.follower_hessian == FollowerHessian::kExact ? "exact"
                                                             : "paper_term"},
              {"buffer_capacity", c.buffer_capacity}};
}

TrainerConfig config_from_json(const json& j) {
  TrainerConfig c;
  c.mode = trainer_mode_from_string(j.at("mode").get<std::string>());
  c.leader_id = j.at("leader_id").get<int>();
  c.lambda = j.at("lambda").get<double>();
  c.cg_iters = j.at("cg_iters").get<int>();
  c.cg_tol = j.at("cg_tol").get<double>();
  c.actor_lr = j.at("actor_lr").get<double>();
  c.critic_lr = j.at("critic_lr").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.warmup_steps = j.at("warmup_steps").get<int>();
  c.noise_sigma0 = j.at("noise_sigma0").get<double>();
  c.noise_sigma1 = j.at("noise_sigma1").get<double>();
  c.follower_extra_updates = j.at("follower_extra_updates").get<int>();
  c.episodes = j.at("episodes").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.tau = j.at("tau").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.network.actor_hidden = j.at("actor_hidden").get<std::vector<int>>();
  c.network.critic_hidden = j.at("critic_hidden").get<std::vector<int>>();
  if (j.contains("critic_activation")) {
    const std::string a = j.at("critic_activation").get<std::string>();
    if (a == "relu")
      c.network.critic_activation = Activation::kRelu;
    else if (a == "tanh")
      c.network.critic_activation = Activation::kTanh;
    else
      throw std::runtime_error("unknown critic_activation: " + a);
  }
  const std::string fh = j.at("follower_hessian").get<std::string>();
  if (fh != "exact" && fh != "paper_term")
    throw std::invalid_argument("unknown follower_hessian '" + fh + "'");
  c.follower_hessian =
      fh == "exact" ? FollowerHessian::kExact : FollowerHessian::kPaperTerm;
  c.buffer_capacity = j.at("buffer_capacity").get<size_t>();
  return c;
}

constexpr const char* kPairMagic = "stgame-pair v1";

}  // namespace

void save_pair(const TrainedPair& pair, std::ostream& os) {
  json header = {{"config", config_to_json(pair.config)},
                 {"obs_dim", pair.obs_dim},
                 {"act1_dim", pair.act1_dim},
                 {"act2_dim", pair.act2_dim},
                 {"bound1", pair.bound1},
                 {"bound2", pair.bound2}};
  os << kPairMagic << '\n' << header.dump() << '\n';
  char buf[40];
  for (const auto& seg : pair.params.layout()) {
    os << "segment " << seg.name << ' ' << seg.size << '\n';
    Eigen::Ref<const Vec> values = pair.params.segment(seg.name);
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", values[i]);
      os << buf << (i + 1 == values.size() ? '\n' : ' ');
    }
  }
  os << "end\n";
}

void save_pair(const TrainedPair& pair, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_pair: cannot open " + path);
  save_pair(pair, os);
}

TrainedPair load_pair(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kPairMagic)
    throw std::runtime_error("load_pair: bad magic / version mismatch");
  if (!std::getline(is, line))
    throw std::runtime_error("load_pair: missing header");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("load_pair: corrupt header: ") +
                             e.what());
  }
  TrainedPair pair;
  pair.config = config_from_json(header.at("config"));
  pair.obs_dim = header.at("obs_dim").get<int>();
  pair.act1_dim = header.at("act1_dim").get<int>();
  pair.act2_dim = header.at("act2_dim").get<int>();
  pair.bound1 = header.at("bound1").get<double>();
  pair.bound2 = header.at("bound2").get<double>();

  std::vector<ParameterVector::Segment> layout;
  std::vector<double> values;
  std::string word;
  while (is >> word) {
    if (word == "end") {
      std::string extra;
      if (is >> extra)
        throw std::runtime_error("load_pair: trailing data after 'end'");
      Vec flat = Eigen::Map<const Vec>(values.data(),
                                       static_cast<Eigen::Index>(values.size()));
      pair.params = ParameterVector(std::move(layout), std::move(flat));
      return pair;
    }
    if (word != "segment")
      throw std::runtime_error("load_pair: expected 'segment', got '" + word +
                               "'");
    std::string name;
    Eigen::Index size = 0;
    if (!(is >> name >> size) || size < 0)
      throw std::runtime_error("load_pair: malformed segment header");
    layout.push_back({name, static_cast<Eigen::Index>(values.size()), size});
    for (Eigen::Index i = 0; i < size; ++i) {
      double v;
      if (!(is >> v))
        throw std::runtime_error("load_pair: truncated segment '" + name +
                                 "'");
      values.push_back(v);
    }
  }
  throw std::runtime_error("load_pair: truncated file (missing 'end')");
}

TrainedPair load_pair(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_pair: cannot open " + path);
  return load_pair(is);
}

ActorCriticBundle bundle_from_pair(const TrainedPair& pair) {
  ActorCriticBundle bundle(pair.obs_dim, pair.act1_dim, pair.act2_dim,
                           pair.bound1, pair.bound2, pair.config.network,
                           pair.config.tau, pair.config.gamma,
                           pair.config.seed);
  bundle.params().values() = pair.params.values();
  bundle.copy_live_to_target();
  return bundle;
}

void write_metrics_csv(const TrainStats& stats, std::ostream& os,
                       bool include_timing) {
  os << "episode,steps,score_p1,critic_loss_mean,cg_fallbacks";
  if (include_timing) os << ",wall_ms";
  os << '\n';
  char buf[64];
  for (const auto& m : stats.episodes) {
    std::snprintf(buf, sizeof(buf), "%.17g", m.score_p1);
    os << m.episode << ',' << m.steps << ',' << buf << ',';
    std::snprintf(buf, sizeof(buf), "%.17g", m.critic_loss_mean);
    os << buf << ',' << m.cg_fallbacks;
    if (include_timing) os << ',' << m.wall_ms;
    os << '\n';
  }
}

}  // namespace stgame::marl
