#include "stgame/envs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stgame::envs {

namespace {

double clip(double v, double bound) { return std::clamp(v, -bound, bound); }

void check_action(const Vec& a, int dim, const char* who) {
  if (a.size() != dim)
    throw std::invalid_argument(std::string(who) + ": wrong action dimension");
  if (!a.allFinite())
    throw std::invalid_argument(std::string(who) + ": non-finite action");
}

bool out_of_bounds(const CartpoleAgentState& s, const CartpoleParams& p) {
  return std::abs(s.phi) > p.angle_limit || std::abs(s.x) > p.track_limit;
}

}  // namespace

void integrate_cartpole(CartpoleAgentState& s, double cart_force,
                        double tip_force, const CartpoleParams& p) {
  const double m = p.pole_mass;
  const double l = p.pole_half_length;
  const double total = p.cart_mass + m;
  const double cs = std::cos(s.phi);
  const double sn = std::sin(s.phi);

  // Generalized equations of motion (phi measured from upright):
  //   [ M+m        m l cos(phi) ] [x..  ]   [ F + m l phi.^2 sin(phi) ]
  //   [ m l cos    (4/3) m l^2  ] [phi..] = [ m g l sin(phi) + tau    ]
  // A horizontal tip force contributes F_tip to the cart equation and a
  // generalized torque F_tip * 2l cos(phi) to the pole equation.
  const double a11 = total;
  const double a12 = m * l * cs;
  const double a22 = (4.0 / 3.0) * m * l * l;
  const double b1 = cart_force + tip_force + m * l * s.phi_dot * s.phi_dot * sn;
  const double b2 = m * p.gravity * l * sn + tip_force * 2.0 * l * cs;

  const double det = a11 * a22 - a12 * a12;
  const double x_acc = (a22 * b1 - a12 * b2) / det;
  const double phi_acc = (a11 * b2 - a12 * b1) / det;

  // Semi-implicit Euler: velocities first, positions with updated velocities.
  s.x_dot += x_acc * p.dt;
  s.phi_dot += phi_acc * p.dt;
  s.x += s.x_dot * p.dt;
  s.phi += s.phi_dot * p.dt;
}

double cartpole_energy(const CartpoleAgentState& s, const CartpoleParams& p) {
  const double m = p.pole_mass;
  const double l = p.pole_half_length;
  const double vx = s.x_dot + l * s.phi_dot * std::cos(s.phi);
  const double vy = -l * s.phi_dot * std::sin(s.phi);
  const double i_cm = (1.0 / 3.0) * m * l * l;
  const double kinetic = 0.5 * p.cart_mass * s.x_dot * s.x_dot +
                         0.5 * m * (vx * vx + vy * vy) +
                         0.5 * i_cm * s.phi_dot * s.phi_dot;
  const double potential = m * p.gravity * l * std::cos(s.phi);
  return kinetic + potential;
}

// ---------------------------------------------------------------------------
// CompetitiveCartpolesEnv

CompetitiveCartpolesConfig CompetitiveCartpolesConfig::symmetric() {
  return CompetitiveCartpolesConfig{};
}

CompetitiveCartpolesConfig CompetitiveCartpolesConfig::asymmetric() {
  CompetitiveCartpolesConfig c;
  c.f_max1 = 0.3 * c.f_max2;
  return c;
}

CompetitiveCartpolesEnv::CompetitiveCartpolesEnv(
    CompetitiveCartpolesConfig config)
    : config_(std::move(config)) {}

Vec CompetitiveCartpolesEnv::observation() const {
  Vec obs(8);
  obs << s1_.x, s1_.x_dot, s1_.phi, s1_.phi_dot, s2_.x, s2_.x_dot, s2_.phi,
      s2_.phi_dot;
  return obs;
}

Vec CompetitiveCartpolesEnv::reset(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-config_.init_spread,
                                           config_.init_spread);
  s1_ = CartpoleAgentState{-config_.start_offset + u(rng), u(rng), u(rng),
                           u(rng), false};
  s2_ = CartpoleAgentState{config_.start_offset + u(rng), u(rng), u(rng),
                           u(rng), false};
  t_ = 0;
  return observation();
}

StepResult CompetitiveCartpolesEnv::step(const Vec& a1, const Vec& a2) {
  check_action(a1, 1, "player 1");
  check_action(a2, 1, "player 2");
  const double f1 = clip(a1[0], config_.f_max1);
  const double f2 = clip(a2[0], config_.f_max2);

  const double spring =
      config_.spring_k * ((s2_.x - s1_.x) - config_.rest_length);

  // A fallen agent's dynamics freeze and its actions are ignored.
  if (!s1_.fallen) integrate_cartpole(s1_, f1 + spring, 0.0, config_.cartpole);
  if (!s2_.fallen) integrate_cartpole(s2_, f2 - spring, 0.0, config_.cartpole);

  if (!s1_.fallen && out_of_bounds(s1_, config_.cartpole)) s1_.fallen = true;
  if (!s2_.fallen && out_of_bounds(s2_, config_.cartpole)) s2_.fallen = true;

  ++t_;
  StepResult result;
  result.fallen1 = s1_.fallen;
  result.fallen2 = s2_.fallen;
  result.spring_force = spring;
  if (s1_.fallen != s2_.fallen) result.reward = s1_.fallen ? -1.0 : 1.0;
  result.done = (s1_.fallen && s2_.fallen) || t_ >= config_.horizon;
  result.next_obs = observation();
  return result;
}

// ---------------------------------------------------------------------------
// AdversarialCartpoleEnv

AdversarialCartpoleEnv::AdversarialCartpoleEnv(AdversarialCartpoleConfig config)
    : config_(std::move(config)) {}

Vec AdversarialCartpoleEnv::reset(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-config_.init_spread,
                                           config_.init_spread);
  s_ = CartpoleAgentState{u(rng), u(rng), u(rng), u(rng), false};
  t_ = 0;
  Vec obs(4);
  obs << s_.x, s_.x_dot, s_.phi, s_.phi_dot;
  return obs;
}

StepResult AdversarialCartpoleEnv::step(const Vec& a_pro, const Vec& a_adv) {
  check_action(a_pro, 1, "protagonist");
  check_action(a_adv, 1, "adversary");
  const double f = clip(a_pro[0], config_.f_max);
  const double adv = clip(a_adv[0], config_.adv_max);

  if (!s_.fallen) integrate_cartpole(s_, f, adv, config_.cartpole);
  if (!s_.fallen && out_of_bounds(s_, config_.cartpole)) s_.fallen = true;

  ++t_;
  StepResult result;
  result.fallen1 = s_.fallen;
  result.reward = s_.fallen ? 0.0 : 1.0;
  result.done = s_.fallen || t_ >= config_.horizon;
  Vec obs(4);
  obs << s_.x, s_.x_dot, s_.phi, s_.phi_dot;
  result.next_obs = std::move(obs);
  return result;
}

std::vector<double> random_disturbance_eval(
    const std::function<Vec(const Vec&)>& policy, AdversarialCartpoleEnv& env,
    double magnitude, int trials, uint64_t seed) {
  if (magnitude < 0.0)
    throw std::invalid_argument("random_disturbance_eval: magnitude < 0");
  std::vector<double> scores;
  scores.reserve(static_cast<size_t>(trials));
  for (int trial = 0; trial < trials; ++trial) {
    std::mt19937_64 rng(seed + static_cast<uint64_t>(trial) * 0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<double> dist(-magnitude, magnitude);
    Vec obs = env.reset(seed + static_cast<uint64_t>(trial));
    double score = 0.0;
    while (true) {
      Vec adv(1);
      adv[0] = magnitude > 0.0 ? dist(rng) : 0.0;
      StepResult r = env.step(policy(obs), adv);
      score += r.reward;
      if (r.done) break;
      obs = r.next_obs;
    }
    scores.push_back(score);
  }
  return scores;
}

}  // namespace stgame::envs
