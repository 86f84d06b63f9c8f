#include "gnn/tape.hpp"

#include <algorithm>
#include <array>
#include <atomic>

#include "gnn/errors.hpp"

namespace gnn {

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::parameter: return "parameter";
    case OpKind::matmul: return "matmul";
    case OpKind::add_bias: return "add_bias";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::mul_scalar: return "mul_scalar";
    case OpKind::mul_rows: return "mul_rows";
    case OpKind::scale_columns: return "scale_columns";
    case OpKind::relu: return "relu";
    case OpKind::leaky_relu: return "leaky_relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::exp: return "exp";
    case OpKind::square: return "square";
    case OpKind::rsqrt: return "rsqrt";
    case OpKind::reshape: return "reshape";
    case OpKind::reduce_sum: return "reduce_sum";
    case OpKind::reduce_mean: return "reduce_mean";
    case OpKind::reduce_max: return "reduce_max";
    case OpKind::gather_columns: return "gather_columns";
    case OpKind::scatter_add: return "scatter_add";
    case OpKind::segment_max: return "segment_max";
    case OpKind::segment_softmax: return "segment_softmax";
    case OpKind::spmm: return "spmm";
    case OpKind::headwise_dot: return "headwise_dot";
    case OpKind::headwise_scale: return "headwise_scale";
  }
  return "unknown";
}

namespace {

constexpr std::size_t kNumOpKinds = static_cast<std::size_t>(OpKind::headwise_scale) + 1;

// 0 means no fault.
std::array<std::atomic<double>, kNumOpKinds>& fault_table() {
  static std::array<std::atomic<double>, kNumOpKinds> table{};
  return table;
}

double fault_factor(OpKind kind) {
  return fault_table()[static_cast<std::size_t>(kind)].load(std::memory_order_relaxed);
}

}  // namespace

namespace debug {

void inject_backward_fault(OpKind kind, double factor) {
  fault_table()[static_cast<std::size_t>(kind)].store(factor, std::memory_order_relaxed);
}

void clear_backward_faults() {
  for (auto& f : fault_table()) f.store(0.0, std::memory_order_relaxed);
}

}  // namespace debug

Tensor Tape::parameter(const std::string& name, const Tensor& value) {
  if (auto it = params_.find(name); it != params_.end()) {
    const Node& node = nodes_[static_cast<std::size_t>(it->second)];
    if (node.shape != value.shape()) {
      throw ContractError("parameter '" + name + "' registered twice with different shapes");
    }
  }
  Tensor leaf = value.detach();
  leaf.tape_ = this;
  if (auto it = params_.find(name); it != params_.end()) {
    leaf.node_ = it->second;
    return leaf;
  }
  leaf.node_ = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(Node{OpKind::parameter, {}, value.shape(), value.precision(), nullptr, name});
  params_.emplace(name, leaf.node_);
  return leaf;
}

Tensor Tape::record(OpKind kind, std::span<const Tensor> inputs, const Tensor& result,
                    BackwardFn backward, double kink_margin) {
  Node node{kind, {}, result.shape(), result.precision(), std::move(backward), {}};
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    node.inputs.push_back(in.tape_ == this ? in.node_ : NodeId{-1});
  }
  kink_margin_ = std::min(kink_margin_, kink_margin);
  Tensor out = result.detach();
  out.tape_ = this;
  out.node_ = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(std::move(node));
  return out;
}

std::vector<std::string> Tape::parameter_names() const {
  std::vector<std::string> names;
  names.reserve(params_.size());
  for (const auto& [name, id] : params_) names.push_back(name);
  return names;
}

GradientMap Tape::backward(const Tensor& seed) const {
  if (seed.numel() != 1) {
    throw ContractError("backward needs a one-element seed, got shape " + shape_string(seed.shape()));
  }
  std::vector<std::vector<double>> grads(nodes_.size());
  if (seed.tape() == this) {
    grads[static_cast<std::size_t>(seed.node_id())] = {1.0};
    std::vector<std::vector<double>*> input_grads;
    std::vector<double> faulty;
    for (auto id = static_cast<std::size_t>(seed.node_id()) + 1; id-- > 0;) {
      const Node& node = nodes_[id];
      if (node.kind == OpKind::parameter || grads[id].empty()) continue;
      input_grads.clear();
      for (NodeId in : node.inputs) {
        if (in < 0) {
          input_grads.push_back(nullptr);
          continue;
        }
        auto& g = grads[static_cast<std::size_t>(in)];
        if (g.empty()) g.assign(shape_numel(nodes_[static_cast<std::size_t>(in)].shape), 0.0);
        input_grads.push_back(&g);
      }
      std::span<const double> upstream = grads[id];
      if (double f = fault_factor(node.kind); f != 0.0) {
        faulty.assign(upstream.begin(), upstream.end());
        for (auto& v : faulty) v *= f;
        upstream = faulty;
      }
      node.backward(upstream, input_grads);
      grads[id] = {};
    }
  }

  GradientMap out;
  for (const auto& [name, id] : params_) {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    auto& g = grads[static_cast<std::size_t>(id)];
    if (g.empty()) g.assign(shape_numel(node.shape), 0.0);
    out.emplace(name, Tensor(node.shape, std::move(g), node.precision));
  }
  return out;
}

Tensor record_op(OpKind kind, std::span<const Tensor> inputs, const Tensor& result,
                 Tape::BackwardFn backward, double kink_margin) {
  Tape* tape = nullptr;
  for (const auto& in : inputs) {
    if (!in.requires_grad()) continue;
    if (tape && in.tape() != tape) {
      throw ContractError(std::string(to_string(kind)) + ": inputs recorded on different tapes");
    }
    tape = in.tape();
  }
  if (!tape) return result;
  return tape->record(kind, inputs, result, std::move(backward), kink_margin);
}

}  // namespace gnn
