#pragma once

#include <Eigen/Core>
#include <iosfwd>
#include <random>

#include "stgame/stackelberg.hpp"

namespace stgame {

using Matrix = Eigen::MatrixXd;

// Two-player quadratic game
//   J(t1, t2) = t1' A t1 + t1' B t2 + t2' C t2 + a' t1 + c' t2
// with player 1 maximizing and player 2 minimizing J. C must be positive
// definite (strongly convex follower problem); A negative definite is
// required whenever an analytic leader optimum is requested.
class QuadraticGame : public DifferentiableGame {
 public:
  QuadraticGame(Matrix A, Matrix B, Matrix C, Vec a, Vec c);

  int dim1() const override { return static_cast<int>(A_.rows()); }
  int dim2() const override { return static_cast<int>(C_.rows()); }
  double value(const Vec& t1, const Vec& t2) const override;
  Vec grad1(const Vec& t1, const Vec& t2) const override;
  Vec grad2(const Vec& t1, const Vec& t2) const override;
  Vec hvp2(const Vec& t1, const Vec& t2, const Vec& v) const override;
  Vec mixed12(const Vec& t1, const Vec& t2, const Vec& v) const override;

  const Matrix& A() const { return A_; }
  const Matrix& B() const { return B_; }
  const Matrix& C() const { return C_; }
  const Vec& a() const { return a_; }
  const Vec& c() const { return c_; }

  // Unique follower best response: t2* = -1/2 C^{-1} (B' t1 + c).
  Vec analytic_follower_best_response(const Vec& t1) const;
  // Stationary point of the reduced leader objective with the follower at
  // best response. Throws if the reduced Hessian is not negative definite.
  std::pair<Vec, Vec> analytic_dse() const;
  // Simultaneous stationary point of both partial gradients.
  std::pair<Vec, Vec> analytic_nash() const;

  // Reduced leader Hessian 2A - 1/2 B C^{-1} B'.
  Matrix reduced_hessian() const;

  // Plain-text round trip (row-major, whitespace separated).
  void save(std::ostream& os) const;
  static QuadraticGame load(std::istream& is);

  // Well-conditioned random instance: C = M'M + 0.1 I, A = -(N'N + 0.1 I).
  static QuadraticGame random(int d1, int d2, std::mt19937_64& rng);

 private:
  Matrix A_, B_, C_;
  Vec a_, c_;
};

}  // namespace stgame
