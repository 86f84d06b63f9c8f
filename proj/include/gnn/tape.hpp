#pragma once

#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gnn/tensor.hpp"

namespace gnn {

enum class OpKind {
  parameter,
  matmul,
  add_bias,
  add,
  sub,
  mul,
  div,
  scale,
  add_scalar,
  mul_scalar,
  mul_rows,
  scale_columns,
  relu,
  leaky_relu,
  sigmoid,
  tanh,
  exp,
  square,
  rsqrt,
  reshape,
  reduce_sum,
  reduce_mean,
  reduce_max,
  gather_columns,
  scatter_add,
  segment_max,
  segment_softmax,
  spmm,
  headwise_dot,
  headwise_scale,
};

std::string_view to_string(OpKind kind);

// Gradients keyed by parameter name; each entry has its parameter's shape.
using GradientMap = std::map<std::string, Tensor>;

// Append-only record of tensor operations for reverse-mode differentiation.
//
// Node ids are assigned in creation order, so every input id is smaller than
// the id of the node it feeds. backward() does not modify the tape and can be
// replayed any number of times. A tape belongs to one thread.
class Tape {
 public:
  // Backward rule of one node: receives the gradient of the node's output and
  // one accumulation buffer per input (null for inputs that are not tracked).
  using BackwardFn = std::function<void(std::span<const double> upstream,
                                        std::span<std::vector<double>* const> input_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf for a named trainable tensor. Registering a name twice returns the
  // same leaf.
  Tensor parameter(const std::string& name, const Tensor& value);

  // Attach `result` to a new node. Used by the operation implementations.
  Tensor record(OpKind kind, std::span<const Tensor> inputs, const Tensor& result,
                BackwardFn backward, double kink_margin);

  // Reverse sweep from a one-element seed. Every registered parameter gets an
  // entry; parameters the seed does not depend on get zeros.
  GradientMap backward(const Tensor& seed) const;

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).kind; }
  std::span<const NodeId> inputs(NodeId id) const {
    return nodes_.at(static_cast<std::size_t>(id)).inputs;
  }
  std::vector<std::string> parameter_names() const;

  // Smallest distance of any recorded non-smooth operation to its kink
  // (relu at 0, max ties). Finite-difference checks resample when this is small.
  double kink_margin() const { return kink_margin_; }

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;  // -1 marks an untracked input
    Shape shape;
    Precision precision;
    BackwardFn backward;
    std::string name;
  };

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> params_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

// Record `result` as the output of `kind` applied to `inputs` if any input is
// tracked; otherwise return it untracked. All tracked inputs must share a tape.
Tensor record_op(OpKind kind, std::span<const Tensor> inputs, const Tensor& result,
                 Tape::BackwardFn backward,
                 double kink_margin = std::numeric_limits<double>::infinity());

namespace debug {

// Scale the upstream gradient fed to every backward rule of `kind`. Only used
// to check that gradient verification catches broken rules.
void inject_backward_fault(OpKind kind, double factor);
void clear_backward_faults();

}  // namespace debug

}  // namespace gnn
