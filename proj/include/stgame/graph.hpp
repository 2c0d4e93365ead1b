#pragma once

#include <Eigen/Core>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "stgame/tape.hpp"

namespace stgame::ad {

// Flat trainable parameters plus a named-segment layout. The layout is fixed
// by the Graph that created the vector; values are mutable.
class ParameterVector {
 public:
  struct Segment {
    std::string name;
    Eigen::Index offset = 0;
    Eigen::Index size = 0;
  };

  ParameterVector() = default;
  ParameterVector(std::vector<Segment> layout, Vec values);

  bool has_segment(const std::string& name) const;
  Eigen::Index segment_size(const std::string& name) const;
  Eigen::Ref<Vec> segment(const std::string& name);
  Eigen::Ref<const Vec> segment(const std::string& name) const;

  Vec& values() { return values_; }
  const Vec& values() const { return values_; }
  const std::vector<Segment>& layout() const { return layout_; }
  bool all_finite() const { return values_.allFinite(); }

 private:
  const Segment& find(const std::string& name) const;
  std::vector<Segment> layout_;
  Vec values_;
};

// A recorded computation over named parameter segments and named inputs.
// Building appends instructions; execution replays them on a Tape. Input row
// counts (batch) are resolved at execution time.
class Graph {
 public:
  // -- construction -------------------------------------------------------
  int input(const std::string& name, int cols, bool differentiable = false);
  // Appends a rows x cols block to the named flat segment and returns its
  // symbolic node id. Layout is fixed once the graph has been executed.
  int parameter(const std::string& segment, int rows, int cols);
  int constant(Mat value);

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
  int mean(int a);
  int dot(int a, int b);

  void set_output(int node) { output_ = node; }
  int output() const { return output_; }

  // -- layout -------------------------------------------------------------
  Eigen::Index segment_size(const std::string& name) const;
  std::vector<std::string> segment_names() const;
  // Zero-initialized ParameterVector covering every segment of this graph.
  ParameterVector make_params() const;

  // -- one-shot execution -------------------------------------------------
  using Inputs = std::map<std::string, Mat>;

  Mat evaluate(const ParameterVector& params, const Inputs& inputs) const;
  Vec gradient(const ParameterVector& params, const Inputs& inputs,
               const std::string& segment) const;
  Vec hvp(const ParameterVector& params, const Inputs& inputs,
          const std::string& segment, const Vec& v) const;
  Vec mixed_pvp(const ParameterVector& params, const Inputs& inputs,
                const std::string& seg_outer, const std::string& seg_inner,
                const Vec& v) const;

 private:
  friend class GraphSession;

  struct Instr {
    Op op;
    int a = -1;
    int b = -1;
    bool trans_a = false;
    bool trans_b = false;
    double scalar = 0.0;
    bool is_mean = false;  // kSum with a 1/size scale resolved at run time
    bool diff_input = false;
    // kLeaf roles
    enum class Leaf { kNone, kInput, kParam, kConst } leaf = Leaf::kNone;
    std::string name;           // input name or segment name
    Eigen::Index offset = 0;    // param offset within segment
    int rows = 0, cols = 0;     // param shape / input cols
    Mat const_val;
  };

  struct ParamRef {
    int instr = -1;
    Eigen::Index offset = 0;
    int rows = 0, cols = 0;
  };

  static Instr binary(Op op, int a, int b);
  static Instr unary(Op op, int a);
  int push(Instr in);

  std::vector<Instr> instrs_;
  int output_ = -1;
  // Per-segment parameter blocks in append order.
  std::map<std::string, std::vector<ParamRef>> segments_;
  std::map<std::string, Eigen::Index> segment_sizes_;
  std::map<std::string, int> input_cols_;
  std::map<std::string, int> input_instr_;
};

// Executes a Graph once and serves repeated derivative queries against the
// same point. The first-order backward sweep is performed once and reused by
// every Hessian-vector / mixed-partial product; scratch adjoint nodes from a
// second-order product are rolled back before the next query.
class GraphSession {
 public:
  GraphSession(const Graph& graph, const ParameterVector& params,
               const Graph::Inputs& inputs);

  double value() const;
  const Mat& output() const;
  Vec gradient(const std::string& segment);
  // Gradient of the scalar output w.r.t. a differentiable input slot.
  Mat input_gradient(const std::string& input_name);
  Vec hvp(const std::string& segment, const Vec& v);
  Vec mixed_pvp(const std::string& seg_outer, const std::string& seg_inner,
                const Vec& v);

 private:
  void ensure_first_backward();
  // Flattens per-block adjoint nodes of a segment into one vector.
  Vec collect(const std::string& segment, const std::vector<int>& grads) const;
  std::vector<int> param_nodes(const std::string& segment) const;
  std::vector<int> first_grads(const std::string& segment) const;

  const Graph& graph_;
  Tape tape_;
  std::vector<int> node_of_instr_;
  bool backward_done_ = false;
  std::map<std::string, std::vector<int>> grad_nodes_;  // segment -> per block
  std::map<std::string, int> input_grad_nodes_;
  size_t checkpoint_ = 0;
};

}  // namespace stgame::ad
