#include "stgame/graph.hpp"

#include <stdexcept>

namespace stgame::ad {

// ---------------------------------------------------------------------------
// ParameterVector

ParameterVector::ParameterVector(std::vector<Segment> layout, Vec values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  Eigen::Index total = 0;
  for (const auto& s : layout_) total += s.size;
  if (total != values_.size())
    throw std::invalid_argument("ParameterVector: layout/value size mismatch");
}

const ParameterVector::Segment& ParameterVector::find(
    const std::string& name) const {
  for (const auto& s : layout_)
    if (s.name == name) return s;
  throw std::invalid_argument("ParameterVector: unknown segment '" + name +
                              "'");
}

bool ParameterVector::has_segment(const std::string& name) const {
  for (const auto& s : layout_)
    if (s.name == name) return true;
  return false;
}

Eigen::Index ParameterVector::segment_size(const std::string& name) const {
  return find(name).size;
}

Eigen::Ref<Vec> ParameterVector::segment(const std::string& name) {
  const Segment& s = find(name);
  return values_.segment(s.offset, s.size);
}

Eigen::Ref<const Vec> ParameterVector::segment(const std::string& name) const {
  const Segment& s = find(name);
  return values_.segment(s.offset, s.size);
}

// ---------------------------------------------------------------------------
// Graph construction

int Graph::push(Instr in) {
  instrs_.push_back(std::move(in));
  return static_cast<int>(instrs_.size()) - 1;
}

int Graph::input(const std::string& name, int cols, bool differentiable) {
  auto [it, inserted] = input_cols_.emplace(name, cols);
  if (!inserted)
    throw std::invalid_argument("Graph: duplicate input slot '" + name + "'");
  Instr in;
  in.op = Op::kLeaf;
  in.leaf = Instr::Leaf::kInput;
  in.name = name;
  in.cols = cols;
  in.diff_input = differentiable;
  int id = push(std::move(in));
  input_instr_[name] = id;
  return id;
}

int Graph::parameter(const std::string& segment, int rows, int cols) {
  Instr in;
  in.op = Op::kLeaf;
  in.leaf = Instr::Leaf::kParam;
  in.name = segment;
  in.rows = rows;
  in.cols = cols;
  Eigen::Index& size = segment_sizes_[segment];
  in.offset = size;
  int id = push(std::move(in));
  segments_[segment].push_back(
      {id, size, rows, cols});
  size += static_cast<Eigen::Index>(rows) * cols;
  return id;
}

int Graph::constant(Mat value) {
  Instr in;
  in.op = Op::kLeaf;
  in.leaf = Instr::Leaf::kConst;
  in.const_val = std::move(value);
  return push(std::move(in));
}

Graph::Instr Graph::binary(Op op, int a, int b) {
  Instr in;
  in.op = op;
  in.a = a;
  in.b = b;
  return in;
}
Graph::Instr Graph::unary(Op op, int a) {
  Instr in;
  in.op = op;
  in.a = a;
  return in;
}

int Graph::matmul(int a, int b, bool trans_a, bool trans_b) {
  Instr in = binary(Op::kMatMul, a, b);
  in.trans_a = trans_a;
  in.trans_b = trans_b;
  return push(std::move(in));
}
int Graph::add(int a, int b) { return push(binary(Op::kAdd, a, b)); }
int Graph::add_row(int a, int b) { return push(binary(Op::kAddRow, a, b)); }
int Graph::sub(int a, int b) { return push(binary(Op::kSub, a, b)); }
int Graph::mul(int a, int b) { return push(binary(Op::kMul, a, b)); }
int Graph::scale(int a, double s) {
  Instr in = unary(Op::kScale, a);
  in.scalar = s;
  return push(std::move(in));
}
int Graph::tanh(int a) { return push(unary(Op::kTanh, a)); }
int Graph::relu(int a) { return push(unary(Op::kRelu, a)); }
int Graph::square(int a) { return push(unary(Op::kSquare, a)); }
int Graph::sum(int a) { return push(unary(Op::kSum, a)); }
int Graph::mean(int a) {
  Instr in = unary(Op::kSum, a);
  in.is_mean = true;
  return push(std::move(in));
}
int Graph::dot(int a, int b) { return sum(mul(a, b)); }

Eigen::Index Graph::segment_size(const std::string& name) const {
  auto it = segment_sizes_.find(name);
  if (it == segment_sizes_.end())
    throw std::invalid_argument("Graph: unknown segment '" + name + "'");
  return it->second;
}

std::vector<std::string> Graph::segment_names() const {
  std::vector<std::string> names;
  for (const auto& [name, _] : segment_sizes_) names.push_back(name);
  return names;
}

ParameterVector Graph::make_params() const {
  std::vector<ParameterVector::Segment> layout;
  Eigen::Index total = 0;
  for (const auto& [name, size] : segment_sizes_) {
    layout.push_back({name, total, size});
    total += size;
  }
  return ParameterVector(std::move(layout), Vec::Zero(total));
}

// ---------------------------------------------------------------------------
// GraphSession

GraphSession::GraphSession(const Graph& graph, const ParameterVector& params,
                           const Graph::Inputs& inputs)
    : graph_(graph) {
  if (graph.output_ < 0)
    throw std::invalid_argument("Graph: output not set");
  for (const auto& [name, size] : graph.segment_sizes_) {
    if (!params.has_segment(name) || params.segment_size(name) != size)
      throw std::invalid_argument("Graph: parameter segment '" + name +
                                  "' missing or wrong size");
  }
  node_of_instr_.reserve(graph.instrs_.size());
  for (const auto& in : graph.instrs_) {
    int id = -1;
    switch (in.op) {
      case Op::kLeaf:
        switch (in.leaf) {
          case Graph::Instr::Leaf::kInput: {
            auto it = inputs.find(in.name);
            if (it == inputs.end())
              throw std::invalid_argument("Graph: missing input slot '" +
                                          in.name + "'");
            if (it->second.cols() != in.cols)
              throw std::invalid_argument(
                  "Graph: input slot '" + in.name + "' expects " +
                  std::to_string(in.cols) + " columns, got " +
                  std::to_string(it->second.cols()));
            id = tape_.leaf(it->second, in.diff_input);
            break;
          }
          case Graph::Instr::Leaf::kParam: {
            Eigen::Ref<const Vec> seg = params.segment(in.name);
            Mat block = Eigen::Map<const Mat>(seg.data() + in.offset, in.rows,
                                              in.cols);
            id = tape_.leaf(std::move(block), true);
            break;
          }
          case Graph::Instr::Leaf::kConst:
            id = tape_.leaf(in.const_val, false);
            break;
          default:
            throw std::logic_error("Graph: malformed leaf");
        }
        break;
      case Op::kMatMul:
        id = tape_.matmul(node_of_instr_[in.a], node_of_instr_[in.b],
                          in.trans_a, in.trans_b);
        break;
      case Op::kAdd:
        id = tape_.add(node_of_instr_[in.a], node_of_instr_[in.b]);
        break;
      case Op::kAddRow:
        id = tape_.add_row(node_of_instr_[in.a], node_of_instr_[in.b]);
        break;
      case Op::kSub:
        id = tape_.sub(node_of_instr_[in.a], node_of_instr_[in.b]);
        break;
      case Op::kMul:
        id = tape_.mul(node_of_instr_[in.a], node_of_instr_[in.b]);
        break;
      case Op::kScale:
        id = tape_.scale(node_of_instr_[in.a], in.scalar);
        break;
      case Op::kTanh:
        id = tape_.tanh(node_of_instr_[in.a]);
        break;
      case Op::kRelu:
        id = tape_.relu(node_of_instr_[in.a]);
        break;
      case Op::kSquare:
        id = tape_.square(node_of_instr_[in.a]);
        break;
      case Op::kSum:
        id = in.is_mean ? tape_.mean(node_of_instr_[in.a])
                        : tape_.sum(node_of_instr_[in.a]);
        break;
      default:
        throw std::logic_error("Graph: unexpected instruction");
    }
    node_of_instr_.push_back(id);
  }
}

const Mat& GraphSession::output() const {
  return tape_.val(node_of_instr_[static_cast<size_t>(graph_.output_)]);
}

double GraphSession::value() const {
  const Mat& out = output();
  if (out.size() != 1)
    throw std::invalid_argument("GraphSession: output is not scalar");
  return out(0, 0);
}

std::vector<int> GraphSession::param_nodes(const std::string& segment) const {
  auto it = graph_.segments_.find(segment);
  if (it == graph_.segments_.end())
    throw std::invalid_argument("Graph: unknown segment '" + segment + "'");
  std::vector<int> ids;
  ids.reserve(it->second.size());
  for (const auto& ref : it->second)
    ids.push_back(node_of_instr_[static_cast<size_t>(ref.instr)]);
  return ids;
}

void GraphSession::ensure_first_backward() {
  if (backward_done_) return;
  const Mat& out = output();
  if (out.size() != 1)
    throw std::invalid_argument("GraphSession: gradient needs scalar output");
  std::vector<std::string> names = graph_.segment_names();
  std::vector<int> all_ids;
  std::vector<std::pair<std::string, size_t>> spans;
  for (const auto& name : names) {
    std::vector<int> ids = param_nodes(name);
    spans.emplace_back(name, ids.size());
    all_ids.insert(all_ids.end(), ids.begin(), ids.end());
  }
  std::vector<std::string> diff_inputs;
  for (const auto& [name, instr] : graph_.input_instr_) {
    if (graph_.instrs_[static_cast<size_t>(instr)].diff_input) {
      diff_inputs.push_back(name);
      all_ids.push_back(node_of_instr_[static_cast<size_t>(instr)]);
    }
  }
  std::vector<int> grads = tape_.backward(
      node_of_instr_[static_cast<size_t>(graph_.output_)], all_ids);
  size_t pos = 0;
  for (const auto& [name, count] : spans) {
    grad_nodes_[name] =
        std::vector<int>(grads.begin() + static_cast<long>(pos),
                         grads.begin() + static_cast<long>(pos + count));
    pos += count;
  }
  for (const auto& name : diff_inputs) input_grad_nodes_[name] = grads[pos++];
  checkpoint_ = tape_.size();
  backward_done_ = true;
}

Vec GraphSession::collect(const std::string& segment,
                          const std::vector<int>& grads) const {
  auto it = graph_.segments_.find(segment);
  Vec out = Vec::Zero(graph_.segment_size(segment));
  const auto& refs = it->second;
  for (size_t k = 0; k < refs.size(); ++k) {
    if (grads[k] == -1) continue;
    const Mat& g = tape_.val(grads[k]);
    out.segment(refs[k].offset,
                static_cast<Eigen::Index>(refs[k].rows) * refs[k].cols) =
        Eigen::Map<const Vec>(g.data(), g.size());
  }
  return out;
}

Vec GraphSession::gradient(const std::string& segment) {
  ensure_first_backward();
  return collect(segment, grad_nodes_.at(segment));
}

Mat GraphSession::input_gradient(const std::string& input_name) {
  ensure_first_backward();
  auto instr_it = graph_.input_instr_.find(input_name);
  if (instr_it == graph_.input_instr_.end() ||
      !graph_.instrs_[static_cast<size_t>(instr_it->second)].diff_input)
    throw std::invalid_argument("input_gradient: '" + input_name +
                                "' is not a differentiable input");
  auto it = input_grad_nodes_.find(input_name);
  const Mat& in_val =
      tape_.val(node_of_instr_[static_cast<size_t>(instr_it->second)]);
  if (it == input_grad_nodes_.end() || it->second == -1)
    return Mat::Zero(in_val.rows(), in_val.cols());
  return tape_.val(it->second);
}

Vec GraphSession::hvp(const std::string& segment, const Vec& v) {
  return mixed_pvp(segment, segment, v);
}

Vec GraphSession::mixed_pvp(const std::string& seg_outer,
                            const std::string& seg_inner, const Vec& v) {
  ensure_first_backward();
  if (v.size() != graph_.segment_size(seg_inner))
    throw std::invalid_argument("mixed_pvp: vector size mismatch for '" +
                                seg_inner + "'");
  const size_t mark = tape_.size();
  const auto& inner_refs = graph_.segments_.at(seg_inner);
  const auto& inner_grads = grad_nodes_.at(seg_inner);

  // s = <grad_inner, v> built blockwise; grad of s w.r.t. the outer segment
  // is the requested second-order product.
  int s = -1;
  for (size_t k = 0; k < inner_refs.size(); ++k) {
    if (inner_grads[k] == -1) continue;
    const auto& ref = inner_refs[k];
    Mat vk = Eigen::Map<const Mat>(v.data() + ref.offset, ref.rows, ref.cols);
    int term = tape_.dot(inner_grads[k], tape_.constant(std::move(vk)));
    s = (s == -1) ? term : tape_.add(s, term);
  }
  Vec out;
  if (s == -1) {
    out = Vec::Zero(graph_.segment_size(seg_outer));
  } else {
    std::vector<int> outer_ids = param_nodes(seg_outer);
    std::vector<int> grads = tape_.backward(s, outer_ids);
    out = collect(seg_outer, grads);
  }
  tape_.truncate(mark);
  return out;
}

// ---------------------------------------------------------------------------
// One-shot wrappers

Mat Graph::evaluate(const ParameterVector& params, const Inputs& inputs) const {
  GraphSession session(*this, params, inputs);
  return session.output();
}

Vec Graph::gradient(const ParameterVector& params, const Inputs& inputs,
                    const std::string& segment) const {
  GraphSession session(*this, params, inputs);
  return session.gradient(segment);
}

Vec Graph::hvp(const ParameterVector& params, const Inputs& inputs,
               const std::string& segment, const Vec& v) const {
  GraphSession session(*this, params, inputs);
  return session.hvp(segment, v);
}

Vec Graph::mixed_pvp(const ParameterVector& params, const Inputs& inputs,
                     const std::string& seg_outer, const std::string& seg_inner,
                     const Vec& v) const {
  GraphSession session(*this, params, inputs);
  return session.mixed_pvp(seg_outer, seg_inner, v);
}

}  // namespace stgame::ad
