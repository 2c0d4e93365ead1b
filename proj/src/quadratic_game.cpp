#include "stgame/quadratic_game.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace stgame {

namespace {

bool positive_definite(const Matrix& m) {
  Eigen::LLT<Matrix> llt(0.5 * (m + m.transpose()));
  return llt.info() == Eigen::Success;
}

void write_matrix(std::ostream& os, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << ' ';
      os << m(i, j);
    }
    os << '\n';
  }
}

Matrix read_matrix(std::istream& is, Eigen::Index rows, Eigen::Index cols,
                   const char* what) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      if (!(is >> m(i, j)))
        throw std::runtime_error(std::string("QuadraticGame: malformed ") +
                                 what + " block");
  return m;
}

}  // namespace

QuadraticGame::QuadraticGame(Matrix A, Matrix B, Matrix C, Vec a, Vec c)
    : A_(std::move(A)), B_(std::move(B)), C_(std::move(C)), a_(std::move(a)),
      c_(std::move(c)) {
  const Eigen::Index d1 = A_.rows();
  const Eigen::Index d2 = C_.rows();
  if (A_.cols() != d1 || C_.cols() != d2 || B_.rows() != d1 ||
      B_.cols() != d2 || a_.size() != d1 || c_.size() != d2)
    throw std::invalid_argument("QuadraticGame: inconsistent dimensions");
  if (!positive_definite(C_))
    throw std::invalid_argument("QuadraticGame: C must be positive definite");
}

double QuadraticGame::value(const Vec& t1, const Vec& t2) const {
  return t1.dot(A_ * t1) + t1.dot(B_ * t2) + t2.dot(C_ * t2) + a_.dot(t1) +
         c_.dot(t2);
}

Vec QuadraticGame::grad1(const Vec& t1, const Vec& t2) const {
  return 2.0 * (A_ * t1) + B_ * t2 + a_;
}

Vec QuadraticGame::grad2(const Vec& t1, const Vec& t2) const {
  return B_.transpose() * t1 + 2.0 * (C_ * t2) + c_;
}

Vec QuadraticGame::hvp2(const Vec&, const Vec&, const Vec& v) const {
  return 2.0 * (C_ * v);
}

Vec QuadraticGame::mixed12(const Vec&, const Vec&, const Vec& v) const {
  return B_ * v;
}

Vec QuadraticGame::analytic_follower_best_response(const Vec& t1) const {
  return -0.5 * C_.ldlt().solve(B_.transpose() * t1 + c_);
}

Matrix QuadraticGame::reduced_hessian() const {
  return 2.0 * A_ - 0.5 * B_ * C_.ldlt().solve(B_.transpose());
}

std::pair<Vec, Vec> QuadraticGame::analytic_dse() const {
  Matrix H = reduced_hessian();
  if (!positive_definite(Matrix(-H)))
    throw std::invalid_argument(
        "QuadraticGame: reduced leader objective is not strictly concave");
  // Reduced first-order condition: H t1 + a - 1/2 B C^{-1} c = 0.
  Vec rhs = -(a_ - 0.5 * B_ * C_.ldlt().solve(c_));
  Vec t1 = H.ldlt().solve(rhs);
  return {t1, analytic_follower_best_response(t1)};
}

std::pair<Vec, Vec> QuadraticGame::analytic_nash() const {
  const Eigen::Index d1 = A_.rows();
  const Eigen::Index d2 = C_.rows();
  Matrix K(d1 + d2, d1 + d2);
  K.topLeftCorner(d1, d1) = 2.0 * A_;
  K.topRightCorner(d1, d2) = B_;
  K.bottomLeftCorner(d2, d1) = B_.transpose();
  K.bottomRightCorner(d2, d2) = 2.0 * C_;
  Eigen::FullPivLU<Matrix> lu(K);
  if (!lu.isInvertible())
    throw std::invalid_argument("QuadraticGame: singular stacked system");
  Vec rhs(d1 + d2);
  rhs << -a_, -c_;
  Vec sol = lu.solve(rhs);
  return {sol.head(d1), sol.tail(d2)};
}

void QuadraticGame::save(std::ostream& os) const {
  os << A_.rows() << ' ' << C_.rows() << '\n';
  write_matrix(os, A_);
  write_matrix(os, B_);
  write_matrix(os, C_);
  write_matrix(os, a_.transpose());
  write_matrix(os, c_.transpose());
}

QuadraticGame QuadraticGame::load(std::istream& is) {
  Eigen::Index d1 = 0, d2 = 0;
  if (!(is >> d1 >> d2) || d1 < 1 || d2 < 1)
    throw std::runtime_error("QuadraticGame: malformed header (line 1)");
  Matrix A = read_matrix(is, d1, d1, "A");
  Matrix B = read_matrix(is, d1, d2, "B");
  Matrix C = read_matrix(is, d2, d2, "C");
  Vec a = read_matrix(is, 1, d1, "a").transpose();
  Vec c = read_matrix(is, 1, d2, "c").transpose();
  return QuadraticGame(std::move(A), std::move(B), std::move(C), std::move(a),
                       std::move(c));
}

QuadraticGame QuadraticGame::random(int d1, int d2, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = normal(rng);
    return m;
  };
  Matrix N = fill(d1, d1);
  Matrix M = fill(d2, d2);
  Matrix A = -(N.transpose() * N / d1 + 0.1 * Matrix::Identity(d1, d1));
  Matrix C = M.transpose() * M / d2 + 0.1 * Matrix::Identity(d2, d2);
  Matrix B = fill(d1, d2);
  Vec a = fill(d1, 1);
  Vec c = fill(d2, 1);
  return QuadraticGame(std::move(A), std::move(B), std::move(C), std::move(a),
                       std::move(c));
}

}  // namespace stgame
