#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <string>
#include <vector>

namespace stgame::ad {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

enum class Op {
  kLeaf,
  kMatMul,
  kAdd,
  kAddRow,   // broadcast a 1xN row over the rows of the left operand
  kSub,
  kMul,      // elementwise
  kScale,
  kTanh,
  kRelu,
  kSquare,
  kSum,          // all entries -> 1x1
  kColSum,       // MxN -> 1xN
  kBroadcastRows,  // 1xN -> MxN
  kBroadcastFull,  // 1x1 -> MxN
};

// Eager reverse-mode tape over dense matrices. backward() materializes the
// adjoint computation as new tape nodes, so gradients can themselves be
// differentiated (Hessian-vector and mixed-partial products via a second
// backward sweep).
class Tape {
 public:
  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    bool trans_a = false;
    bool trans_b = false;
    double scalar = 0.0;
    int aux_rows = 0;
    int aux_cols = 0;
    Mat val;
    bool requires_grad = false;
  };

  int leaf(Mat v, bool requires_grad = false);
  int constant(Mat v) { return leaf(std::move(v), false); }

  int matmul(int a, int b, bool trans_a = false, bool trans_b = false);
  int add(int a, int b);
  int add_row(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int scale(int a, double s);
  int tanh(int a);
  int relu(int a);
  int square(int a);
  int sum(int a);
  int col_sum(int a);
  int broadcast_rows(int a, int rows);
  int broadcast_full(int a, int rows, int cols);

  int dot(int a, int b) { return sum(mul(a, b)); }
  int mean(int a);

  const Mat& val(int i) const { return nodes_[static_cast<size_t>(i)].val; }
  bool requires_grad(int i) const {
    return nodes_[static_cast<size_t>(i)].requires_grad;
  }
  size_t size() const { return nodes_.size(); }
  // Drops every node with index >= n. Used to roll back scratch adjoint
  // computations between repeated second-order products.
  void truncate(size_t n);
  void clear() { nodes_.clear(); }

  // Reverse sweep from a 1x1 output. Returns, for each id in `wrt`, the tape
  // index of its accumulated adjoint, or -1 if the output does not depend on
  // it. The adjoints are ordinary tape nodes and may be differentiated again.
  std::vector<int> backward(int output, const std::vector<int>& wrt);

 private:
  int push(Node n);
  std::vector<Node> nodes_;
};

}  // namespace stgame::ad
