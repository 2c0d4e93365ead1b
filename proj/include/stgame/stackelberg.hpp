#pragma once

#include <Eigen/Core>
#include <functional>
#include <utility>

namespace stgame {

using Vec = Eigen::VectorXd;

// Two-player scalar-objective game with first- and second-order directional
// derivatives. Convention: player 1 maximizes J, player 2 minimizes J
// (zero-sum, J2 = -J1).
class DifferentiableGame {
 public:
  virtual ~DifferentiableGame() = default;
  virtual int dim1() const = 0;
  virtual int dim2() const = 0;
  virtual double value(const Vec& theta1, const Vec& theta2) const = 0;
  virtual Vec grad1(const Vec& theta1, const Vec& theta2) const = 0;
  virtual Vec grad2(const Vec& theta1, const Vec& theta2) const = 0;
  // Hessian of J in theta2, applied to v.
  virtual Vec hvp2(const Vec& theta1, const Vec& theta2, const Vec& v) const = 0;
  // Mixed partial block applied to v: (d^2 J / d theta1 d theta2) v.
  virtual Vec mixed12(const Vec& theta1, const Vec& theta2,
                      const Vec& v) const = 0;
};

struct StackelbergConfig {
  double leader_lr = 0.01;
  double follower_lr = 0.01;
  double regularization = 0.0;  // lambda
  int cg_iters = 5;
  double cg_tol = 1e-10;
};

struct CgResult {
  Vec x;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;  // residual <= tol
  bool stagnated = false;  // curvature pivot vanished (singular operator)
};

// Unpreconditioned conjugate gradient from x = 0 for a symmetric
// positive-definite operator given as a matvec closure. Stops at `tol`
// residual norm or after `iters` iterations. Throws on non-finite iterates.
CgResult conjugate_gradient(const std::function<Vec(const Vec&)>& matvec,
                            const Vec& b, int iters, double tol);

// Regularized total derivative of the leader (ascent direction):
//   grad1 - mixed12 * w   with   (hvp2 + lambda I) w = grad2.
// Throws if CG residual diverges.
Vec total_derivative(const DifferentiableGame& game, const Vec& theta1,
                     const Vec& theta2, double lambda,
                     int cg_iters = 5, double cg_tol = 1e-10);

// One step of Stackelberg dynamics: leader ascends the total derivative,
// follower descends its partial gradient; both from the pre-update point.
std::pair<Vec, Vec> stackelberg_step(const DifferentiableGame& game,
                                     const Vec& theta1, const Vec& theta2,
                                     const StackelbergConfig& config);

// Simultaneous gradient ascent (player 1) / descent (player 2).
std::pair<Vec, Vec> simultaneous_step(const DifferentiableGame& game,
                                      const Vec& theta1, const Vec& theta2,
                                      double lr1, double lr2);

// Verdict of the differential-Stackelberg-equilibrium check. Curvature is
// reported in the maximize convention for the leader (total Hessian negative
// definite) and the minimize convention for the follower (partial Hessian
// positive definite).
struct DSEReport {
  double leader_total_grad_norm = 0.0;
  double follower_grad_norm = 0.0;
  bool leader_curvature_ok = false;
  bool follower_curvature_ok = false;
  bool is_dse = false;
  double leader_hessian_max_eig = 0.0;    // of the symmetrized FD total Hessian
  double follower_hessian_min_eig = 0.0;  // of the exact partial Hessian
};

DSEReport check_dse(const DifferentiableGame& game, const Vec& theta1,
                    const Vec& theta2, double tol = 1e-6,
                    double fd_step = 1e-5, double lambda = 0.0);

}  // namespace stgame
