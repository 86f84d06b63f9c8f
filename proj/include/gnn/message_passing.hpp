#pragma once

#include <functional>
#include <optional>

#include "gnn/graph.hpp"
#include "gnn/tensor.hpp"

namespace gnn {

enum class Aggregation { sum, mean, max };

// Per-edge inputs of a message function. xi holds target-node features and xj
// source-node features, both [d x num_nodes]; e holds edge features [de x num_edges].
struct EdgeArgs {
  std::optional<Tensor> xi = std::nullopt;
  std::optional<Tensor> xj = std::nullopt;
  std::optional<Tensor> e = std::nullopt;
};

class MessageFunction {
 public:
  enum class Kind { copy_xj, e_mul_xj, w_mul_xj, custom };

  // Receives the per-edge gathered xi, xj ([d x E]) and e ([de x E]) that
  // were provided, and returns messages [dm x E].
  using Custom = std::function<Tensor(const std::optional<Tensor>& xi, const std::optional<Tensor>& xj,
                                      const std::optional<Tensor>& e)>;

  // m = xj
  static MessageFunction copy_xj() { return MessageFunction(Kind::copy_xj, nullptr); }
  // m = e .* xj with e either [1 x E] (one scalar per edge) or [d x E]
  static MessageFunction e_mul_xj() { return MessageFunction(Kind::e_mul_xj, nullptr); }
  // m = w .* xj with w the graph's stored edge weights
  static MessageFunction w_mul_xj() { return MessageFunction(Kind::w_mul_xj, nullptr); }
  static MessageFunction custom(Custom fn);

  Kind kind() const { return kind_; }
  const Custom& fn() const { return fn_; }

 private:
  MessageFunction(Kind kind, Custom fn) : kind_(kind), fn_(std::move(fn)) {}
  Kind kind_;
  Custom fn_;
};

// Evaluate f on every edge. Messages are differentiable through the gathers.
Tensor apply_edges(const MessageFunction& f, const GNNGraph& g, const EdgeArgs& args);

// Reduce message columns [dm x E] into their target nodes, giving [dm x n].
// Nodes without incoming edges get 0 under every aggregation.
Tensor aggregate_neighbors(const GNNGraph& g, Aggregation op, const Tensor& m);

enum class PropagatePath { automatic, fused, two_step };

// True when propagate can replace gather-then-scatter with one sparse product.
bool is_fusable(const MessageFunction& f, Aggregation op, const EdgeArgs& args);

// aggregate_neighbors(g, op, apply_edges(f, g, args)). Built-in messages
// with sum or mean run as a CSR sparse product; `path` can force either
// route for diagnostics (forcing the fused route on an unfusable pair throws).
Tensor propagate(const MessageFunction& f, const GNNGraph& g, Aggregation op, const EdgeArgs& args,
                 PropagatePath path = PropagatePath::automatic);

// out[:, t] = sum over edges s -> t of scale[e] * x[:, s], in one pass over the
// incoming-edge CSR. `edge_scale` holds one value per edge ([E] or [1 x E]) or
// one per feature and edge ([d x E]); absent means 1.
Tensor spmm_csr(const GNNGraph& g, const Tensor& x, const std::optional<Tensor>& edge_scale = std::nullopt);

// Softmax of logits [h x E] over the incoming edges of each target node.
Tensor edge_softmax(const GNNGraph& g, const Tensor& logits);

}  // namespace gnn
