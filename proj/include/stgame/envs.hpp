#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace stgame::envs {

using Vec = Eigen::VectorXd;

struct StepResult {
  Vec next_obs;
  double reward = 0.0;  // player-1 reward; player 2 receives the negation
  bool done = false;
  bool fallen1 = false;
  bool fallen2 = false;
  double spring_force = 0.0;
};

// Two-player environment with continuous scalar-per-player actions.
class TwoPlayerEnv {
 public:
  virtual ~TwoPlayerEnv() = default;
  virtual int obs_dim() const = 0;
  virtual int act1_dim() const = 0;
  virtual int act2_dim() const = 0;
  virtual double act1_bound() const = 0;
  virtual double act2_bound() const = 0;
  virtual int horizon() const = 0;
  virtual Vec reset(uint64_t seed) = 0;
  virtual StepResult step(const Vec& a1, const Vec& a2) = 0;
};

struct CartpoleAgentState {
  double x = 0.0;
  double x_dot = 0.0;
  double phi = 0.0;  // rad from upright
  double phi_dot = 0.0;
  bool fallen = false;
};

struct CartpoleParams {
  double cart_mass = 1.0;   // kg
  double pole_mass = 0.1;   // kg
  double pole_half_length = 0.5;  // m (centre of mass at l, tip at 2l)
  double gravity = 9.8;     // m/s^2
  double dt = 0.02;         // s
  double angle_limit = 0.2095;  // rad
  double track_limit = 2.4;     // m
};

// Integrates one semi-implicit Euler step. cart_force acts on the cart;
// tip_force is a horizontal force applied at the pole tip.
void integrate_cartpole(CartpoleAgentState& s, double cart_force,
                        double tip_force, const CartpoleParams& p);

// Mechanical energy of the cart-pole (kinetic + pole potential), used by the
// integrator drift check.
double cartpole_energy(const CartpoleAgentState& s, const CartpoleParams& p);

struct CompetitiveCartpolesConfig {
  CartpoleParams cartpole;
  double spring_k = 2.0;      // N/m
  double rest_length = 1.0;   // m
  double f_max1 = 10.0;       // N
  double f_max2 = 10.0;       // N
  double start_offset = 0.5;  // carts start at -+ this x
  double init_spread = 0.05;  // uniform perturbation bound
  int horizon = 1000;

  // Player 1 limited to 30% of player 2's effort.
  static CompetitiveCartpolesConfig symmetric();
  static CompetitiveCartpolesConfig asymmetric();
};

// Two spring-coupled cartpoles in a zero-sum balance game. Observation is
// the concatenated state of both agents: (x1, x1', phi1, phi1', x2, ...).
class CompetitiveCartpolesEnv : public TwoPlayerEnv {
 public:
  explicit CompetitiveCartpolesEnv(
      CompetitiveCartpolesConfig config = CompetitiveCartpolesConfig::symmetric());

  int obs_dim() const override { return 8; }
  int act1_dim() const override { return 1; }
  int act2_dim() const override { return 1; }
  double act1_bound() const override { return config_.f_max1; }
  double act2_bound() const override { return config_.f_max2; }
  int horizon() const override { return config_.horizon; }

  Vec reset(uint64_t seed) override;
  StepResult step(const Vec& a1, const Vec& a2) override;

  const CartpoleAgentState& agent1() const { return s1_; }
  const CartpoleAgentState& agent2() const { return s2_; }
  const CompetitiveCartpolesConfig& config() const { return config_; }

 private:
  Vec observation() const;
  CompetitiveCartpolesConfig config_;
  CartpoleAgentState s1_, s2_;
  int t_ = 0;
};

struct AdversarialCartpoleConfig {
  CartpoleParams cartpole;
  double f_max = 10.0;    // protagonist cart force bound
  double adv_max = 1.0;   // adversary tip force bound
  double init_spread = 0.05;
  int horizon = 1000;
};

// Single cartpole where player 1 balances and player 2 applies a bounded
// horizontal disturbance force at the pole tip. Player-1 reward is +1 per
// balanced step; the game is zero-sum.
class AdversarialCartpoleEnv : public TwoPlayerEnv {
 public:
  explicit AdversarialCartpoleEnv(AdversarialCartpoleConfig config = {});

  int obs_dim() const override { return 4; }
  int act1_dim() const override { return 1; }
  int act2_dim() const override { return 1; }
  double act1_bound() const override { return config_.f_max; }
  double act2_bound() const override { return config_.adv_max; }
  int horizon() const override { return config_.horizon; }

  Vec reset(uint64_t seed) override;
  StepResult step(const Vec& a_pro, const Vec& a_adv) override;

  const CartpoleAgentState& agent() const { return s_; }
  const AdversarialCartpoleConfig& config() const { return config_; }

 private:
  AdversarialCartpoleConfig config_;
  CartpoleAgentState s_;
  int t_ = 0;
};

// Runs `trials` episodes with the adversary replaced by uniform random tip
// forces in [-magnitude, magnitude]; returns per-trial protagonist scores.
std::vector<double> random_disturbance_eval(
    const std::function<Vec(const Vec&)>& policy, AdversarialCartpoleEnv& env,
    double magnitude, int trials, uint64_t seed);

}  // namespace stgame::envs
