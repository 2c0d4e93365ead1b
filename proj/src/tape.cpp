#include "stgame/tape.hpp"

#include <stdexcept>

namespace stgame::ad {

namespace {

[[noreturn]] void shape_error(const char* op, const Mat& a, const Mat& b) {
  throw std::invalid_argument(std::string("shape mismatch in ") + op + ": " +
                              std::to_string(a.rows()) + "x" +
                              std::to_string(a.cols()) + " vs " +
                              std::to_string(b.rows()) + "x" +
                              std::to_string(b.cols()));
}

}  // namespace

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Mat v, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.val = std::move(v);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

int Tape::matmul(int a, int b, bool trans_a, bool trans_b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  const Eigen::Index ak = trans_a ? A.rows() : A.cols();
  const Eigen::Index bk = trans_b ? B.cols() : B.rows();
  if (ak != bk) shape_error("matmul", A, B);
  Node n;
  n.op = Op::kMatMul;
  n.a = a;
  n.b = b;
  n.trans_a = trans_a;
  n.trans_b = trans_b;
  if (!trans_a && !trans_b)
    n.val = A * B;
  else if (trans_a && !trans_b)
    n.val = A.transpose() * B;
  else if (!trans_a && trans_b)
    n.val = A * B.transpose();
  else
    n.val = A.transpose() * B.transpose();
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

int Tape::add(int a, int b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("add", A, B);
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.val = A + B;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

int Tape::add_row(int a, int b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  if (B.rows() != 1 || A.cols() != B.cols()) shape_error("add_row", A, B);
  Node n;
  n.op = Op::kAddRow;
  n.a = a;
  n.b = b;
  n.val = A.rowwise() + B.row(0);
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

int Tape::sub(int a, int b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("sub", A, B);
  Node n;
  n.op = Op::kSub;
  n.a = a;
  n.b = b;
  n.val = A - B;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

int Tape::mul(int a, int b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("mul", A, B);
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  n.val = A.cwiseProduct(B);
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

int Tape::scale(int a, double s) {
  Node n;
  n.op = Op::kScale;
  n.a = a;
  n.scalar = s;
  n.val = val(a) * s;
  n.requires_grad = requires_grad(a);
  return push(std::move(n));
}

int Tape::tanh(int a) {
  Node n;
  n.op = Op::kTanh;
  n.a = a;
  n.val = val(a).array().tanh();
  n.requires_grad = requires_grad(a);
  return push(std::move(n));
}

int Tape::relu(int a) {
  Node n;
  n.op = Op::kRelu;
  n.a = a;
  n.val = val(a).cwiseMax(0.0);
  n.requires_grad = requires_grad(a);
  return push(std::move(n));
}

int Tape::square(int a) {
  Node n;
  n.op = Op::kSquare;
  n.a = a;
  n.val = val(a).array().square();
  n.requires_grad = requires_grad(a);
  return push(std::move(n));
}

int Tape::sum(int a) {
  Node n;
  n.op = Op::kSum;
  n.a = a;
  n.aux_rows = static_cast<int>(val(a).rows());
  n.aux_cols = static_cast<int>(val(a).cols());
  n.val = Mat::Constant(1, 1, val(a).sum());
  n.requires_grad = requires_grad(a);
  return push(std::move(n));
}

int Tape::col_sum(int a) {
  Node n;
  n.op = Op::kColSum;
  n.a = a;
  n.aux_rows = static_cast<int>(val(a).rows());
  n.val = val(a).colwise().sum();
  n.requires_grad = requires_grad(a);
  return push(std::move(n));
}

int Tape::broadcast_rows(int a, int rows) {
  const Mat& A = val(a);
  if (A.rows() != 1) throw std::invalid_argument("broadcast_rows: need 1xN");
  Node n;
  n.op = Op::kBroadcastRows;
  n.a = a;
  n.aux_rows = rows;
  n.val = A.replicate(rows, 1);
  n.requires_grad = requires_grad(a);
  return push(std::move(n));
}

int Tape::broadcast_full(int a, int rows, int cols) {
  const Mat& A = val(a);
  if (A.rows() != 1 || A.cols() != 1)
    throw std::invalid_argument("broadcast_full: need 1x1");
  Node n;
  n.op = Op::kBroadcastFull;
  n.a = a;
  n.aux_rows = rows;
  n.aux_cols = cols;
  n.val = Mat::Constant(rows, cols, A(0, 0));
  n.requires_grad = requires_grad(a);
  return push(std::move(n));
}

int Tape::mean(int a) {
  const double inv = 1.0 / static_cast<double>(val(a).size());
  return scale(sum(a), inv);
}

void Tape::truncate(size_t n) {
  if (n < nodes_.size()) nodes_.resize(n);
}

std::vector<int> Tape::backward(int output, const std::vector<int>& wrt) {
  const Mat& out = val(output);
  if (out.rows() != 1 || out.cols() != 1)
    throw std::invalid_argument("backward: output must be scalar (1x1)");

  const size_t start = nodes_.size();
  std::vector<int> grad_of(start, -1);
  grad_of[static_cast<size_t>(output)] = constant(Mat::Ones(1, 1));

  auto accumulate = [&](int target, int g) {
    if (!requires_grad(target)) return;
    int& slot = grad_of[static_cast<size_t>(target)];
    slot = (slot == -1) ? g : add(slot, g);
  };

  for (int i = output; i >= 0; --i) {
    const int g = grad_of[static_cast<size_t>(i)];
    if (g == -1) continue;
    // Copy the record: pushing adjoint nodes may reallocate nodes_.
    const Node rec = nodes_[static_cast<size_t>(i)];
    switch (rec.op) {
      case Op::kLeaf:
        break;
      case Op::kMatMul: {
        if (requires_grad(rec.a)) {
          int ga = rec.trans_a ? matmul(rec.b, g, rec.trans_b, true)
                               : matmul(g, rec.b, false, !rec.trans_b);
          accumulate(rec.a, ga);
        }
        if (requires_grad(rec.b)) {
          int gb = rec.trans_b ? matmul(g, rec.a, true, rec.trans_a)
                               : matmul(rec.a, g, !rec.trans_a, false);
          accumulate(rec.b, gb);
        }
        break;
      }
      case Op::kAdd:
        accumulate(rec.a, g);
        accumulate(rec.b, g);
        break;
      case Op::kAddRow:
        accumulate(rec.a, g);
        if (requires_grad(rec.b)) accumulate(rec.b, col_sum(g));
        break;
      case Op::kSub:
        accumulate(rec.a, g);
        if (requires_grad(rec.b)) accumulate(rec.b, scale(g, -1.0));
        break;
      case Op::kMul:
        if (requires_grad(rec.a)) accumulate(rec.a, mul(g, rec.b));
        if (requires_grad(rec.b)) accumulate(rec.b, mul(g, rec.a));
        break;
      case Op::kScale:
        if (requires_grad(rec.a)) accumulate(rec.a, scale(g, rec.scalar));
        break;
      case Op::kTanh: {
        if (requires_grad(rec.a)) {
          // d tanh = 1 - y^2, expressed on the output node so the adjoint
          // remains differentiable.
          int y2 = square(i);
          accumulate(rec.a, sub(g, mul(g, y2)));
        }
        break;
      }
      case Op::kRelu: {
        if (requires_grad(rec.a)) {
          Mat mask =
              (val(rec.a).array() > 0.0).cast<double>().matrix();
          accumulate(rec.a, mul(g, constant(std::move(mask))));
        }
        break;
      }
      case Op::kSquare:
        if (requires_grad(rec.a)) accumulate(rec.a, scale(mul(g, rec.a), 2.0));
        break;
      case Op::kSum:
        if (requires_grad(rec.a))
          accumulate(rec.a, broadcast_full(g, rec.aux_rows, rec.aux_cols));
        break;
      case Op::kColSum:
        if (requires_grad(rec.a))
          accumulate(rec.a, broadcast_rows(g, rec.aux_rows));
        break;
      case Op::kBroadcastRows:
        if (requires_grad(rec.a)) accumulate(rec.a, col_sum(g));
        break;
      case Op::kBroadcastFull:
        if (requires_grad(rec.a)) accumulate(rec.a, sum(g));
        break;
    }
  }

  std::vector<int> result;
  result.reserve(wrt.size());
  for (int id : wrt) {
    result.push_back(id < static_cast<int>(start)
                         ? grad_of[static_cast<size_t>(id)]
                         : -1);
  }
  return result;
}

}  // namespace stgame::ad
