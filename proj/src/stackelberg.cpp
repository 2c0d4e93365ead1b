#include "stgame/stackelberg.hpp"

#include <limits>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>

namespace stgame {

CgResult conjugate_gradient(const std::function<Vec(const Vec&)>& matvec,
                            const Vec& b, int iters, double tol) {
  if (iters < 1) throw std::invalid_argument("conjugate_gradient: iters < 1");
  CgResult result;
  result.x = Vec::Zero(b.size());
  Vec r = b;  // residual of x = 0
  double rs = r.squaredNorm();
  result.residual = std::sqrt(rs);
  if (result.residual <= tol) {
    result.converged = true;
    return result;
  }
  Vec p = r;
  for (int it = 0; it < iters; ++it) {
    Vec ap = matvec(p);
    if (!ap.allFinite())
      throw std::runtime_error("conjugate_gradient: non-finite matvec output");
    const double pap = p.dot(ap);
    if (pap <= 0.0 || !std::isfinite(pap)) {
      // Zero or negative curvature along p: operator is not SPD on this
      // subspace. Return the current iterate and flag it.
      result.stagnated = true;
      break;
    }
    const double alpha = rs / pap;
    result.x += alpha * p;
    r -= alpha * ap;
    ++result.iterations;
    const double rs_new = r.squaredNorm();
    if (!std::isfinite(rs_new))
      throw std::runtime_error("conjugate_gradient: non-finite residual");
    result.residual = std::sqrt(rs_new);
    if (result.residual <= tol) {
      result.converged = true;
      break;
    }
    p = r + (rs_new / rs) * p;
    rs = rs_new;
  }
  return result;
}

Vec total_derivative(const DifferentiableGame& game, const Vec& theta1,
                     const Vec& theta2, double lambda, int cg_iters,
                     double cg_tol) {
  if (lambda < 0.0)
    throw std::invalid_argument("total_derivative: lambda must be >= 0");
  const Vec g2 = game.grad2(theta1, theta2);
  auto matvec = [&](const Vec& v) -> Vec {
    Vec hv = game.hvp2(theta1, theta2, v);
    if (lambda != 0.0) hv += lambda * v;
    return hv;
  };
  CgResult cg = conjugate_gradient(matvec, g2, cg_iters, cg_tol);
  if (cg.residual > g2.norm() * (1.0 + 1e-9) + cg_tol && cg.iterations > 0)
    throw std::runtime_error(
        "total_derivative: CG residual diverged (residual " +
        std::to_string(cg.residual) + ")");
  if (cg.stagnated && lambda == 0.0 && g2.norm() > cg_tol && cg.iterations == 0)
    throw std::runtime_error(
        "total_derivative: follower Hessian singular at lambda = 0");
  return game.grad1(theta1, theta2) - game.mixed12(theta1, theta2, cg.x);
}

std::pair<Vec, Vec> stackelberg_step(const DifferentiableGame& game,
                                     const Vec& theta1, const Vec& theta2,
                                     const StackelbergConfig& config) {
  Vec td = total_derivative(game, theta1, theta2, config.regularization,
                            config.cg_iters, config.cg_tol);
  Vec g2 = game.grad2(theta1, theta2);
  return {theta1 + config.leader_lr * td, theta2 - config.follower_lr * g2};
}

std::pair<Vec, Vec> simultaneous_step(const DifferentiableGame& game,
                                      const Vec& theta1, const Vec& theta2,
                                      double lr1, double lr2) {
  return {theta1 + lr1 * game.grad1(theta1, theta2),
          theta2 - lr2 * game.grad2(theta1, theta2)};
}

DSEReport check_dse(const DifferentiableGame& game, const Vec& theta1,
                    const Vec& theta2, double tol, double fd_step,
                    double lambda) {
  DSEReport report;
  const int d1 = static_cast<int>(theta1.size());
  const int d2 = static_cast<int>(theta2.size());

  auto safe_td = [&](const Vec& t1) -> Vec {
    try {
      return total_derivative(game, t1, theta2, lambda);
    } catch (const std::runtime_error&) {
      return Vec::Constant(d1, std::numeric_limits<double>::quiet_NaN());
    }
  };

  Vec td = safe_td(theta1);
  report.leader_total_grad_norm =
      td.allFinite() ? td.norm() : std::numeric_limits<double>::infinity();
  report.follower_grad_norm = game.grad2(theta1, theta2).norm();

  // Leader curvature: symmetrized finite-difference Jacobian of the total
  // derivative, required negative definite in the maximize convention.
  Eigen::MatrixXd total_hess(d1, d1);
  bool fd_ok = true;
  for (int i = 0; i < d1; ++i) {
    Vec tp = theta1, tm = theta1;
    tp[i] += fd_step;
    tm[i] -= fd_step;
    Vec col = (safe_td(tp) - safe_td(tm)) / (2.0 * fd_step);
    if (!col.allFinite()) {
      fd_ok = false;
      break;
    }
    total_hess.col(i) = col;
  }
  if (fd_ok) {
    Eigen::MatrixXd sym = 0.5 * (total_hess + total_hess.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    report.leader_hessian_max_eig = es.eigenvalues().maxCoeff();
    report.leader_curvature_ok = report.leader_hessian_max_eig < 0.0;
  }

  // Follower curvature: exact partial Hessian from hvp probes.
  Eigen::MatrixXd follower_hess(d2, d2);
  for (int i = 0; i < d2; ++i) {
    Vec e = Vec::Zero(d2);
    e[i] = 1.0;
    follower_hess.col(i) = game.hvp2(theta1, theta2, e);
  }
  Eigen::MatrixXd sym2 = 0.5 * (follower_hess + follower_hess.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es2(sym2);
  report.follower_hessian_min_eig = es2.eigenvalues().minCoeff();
  report.follower_curvature_ok = report.follower_hessian_min_eig > 0.0;

  report.is_dse = report.leader_total_grad_norm <= tol &&
                  report.follower_grad_norm <= tol &&
                  report.leader_curvature_ok && report.follower_curvature_ok;
  return report;
}

}  // namespace stgame
