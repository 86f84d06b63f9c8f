#include "gnn/message_passing.hpp"

#include <array>
#include <string>

#include "gnn/errors.hpp"
#include "gnn/ops.hpp"
#include "gnn/tape.hpp"

namespace gnn {

namespace {

void check_node_input(const char* what, const std::optional<Tensor>& x, const GNNGraph& g) {
  if (x && (x->rank() != 2 || x->cols() != g.num_nodes())) {
    throw DimensionError(std::string(what) + " of shape " + shape_string(x->shape()) + " does not have " +
                         std::to_string(g.num_nodes()) + " node columns");
  }
}

void check_edge_input(const std::optional<Tensor>& e, const GNNGraph& g) {
  if (e && (e->rank() != 2 || e->cols() != g.num_edges())) {
    throw DimensionError("edge features of shape " + shape_string(e->shape()) + " do not have " +
                         std::to_string(g.num_edges()) + " edge columns");
  }
}

const Tensor& require(const std::optional<Tensor>& t, const char* fn, const char* arg) {
  if (!t) throw ContractError(std::string(fn) + " needs argument " + arg);
  return *t;
}

std::vector<double> inverse_in_degree(const GNNGraph& g) {
  std::vector<double> inv(g.num_nodes(), 0.0);
  for (Index t : g.targets()) inv[static_cast<std::size_t>(t)] += 1.0;
  for (auto& v : inv) v = 1.0 / std::max(v, 1.0);
  return inv;
}

}  // namespace

MessageFunction MessageFunction::custom(Custom fn) {
  if (!fn) throw ContractError("custom message function needs a callable");
  return MessageFunction(Kind::custom, std::move(fn));
}

Tensor apply_edges(const MessageFunction& f, const GNNGraph& g, const EdgeArgs& args) {
  check_node_input("xi", args.xi, g);
  check_node_input("xj", args.xj, g);
  check_edge_input(args.e, g);
  switch (f.kind()) {
    case MessageFunction::Kind::copy_xj:
      return gather_columns(require(args.xj, "copy_xj", "xj"), g.sources());
    case MessageFunction::Kind::e_mul_xj: {
      const Tensor xj = gather_columns(require(args.xj, "e_mul_xj", "xj"), g.sources());
      const Tensor& e = require(args.e, "e_mul_xj", "e");
      if (e.rows() == 1) return headwise_scale(xj, e);
      if (e.rows() == xj.rows()) return mul(e, xj);
      throw DimensionError("e_mul_xj: edge features " + shape_string(e.shape()) + " do not match messages " +
                           shape_string(xj.shape()));
    }
    case MessageFunction::Kind::w_mul_xj: {
      const Tensor xj = gather_columns(require(args.xj, "w_mul_xj", "xj"), g.sources());
      if (!g.has_edge_weight()) throw ContractError("w_mul_xj needs a graph with edge weights");
      std::vector<double> w(g.edge_weight().begin(), g.edge_weight().end());
      for (auto& v : w) v = round_to(xj.precision(), v);
      return scale_columns(xj, w);
    }
    case MessageFunction::Kind::custom: {
      std::optional<Tensor> xi, xj;
      if (args.xi) xi = gather_columns(*args.xi, g.targets());
      if (args.xj) xj = gather_columns(*args.xj, g.sources());
      Tensor m = f.fn()(xi, xj, args.e);
      if (m.rank() != 2 || m.cols() != g.num_edges()) {
        throw DimensionError("custom message function returned shape " + shape_string(m.shape()) +
                             ", expected one column per edge");
      }
      return m;
    }
  }
  throw ContractError("unknown message function");
}

Tensor aggregate_neighbors(const GNNGraph& g, Aggregation op, const Tensor& m) {
  if (m.rank() != 2 || m.cols() != g.num_edges()) {
    throw DimensionError("messages of shape " + shape_string(m.shape()) + " do not have " +
                         std::to_string(g.num_edges()) + " edge columns");
  }
  switch (op) {
    case Aggregation::sum:
      return scatter_add(m, g.targets(), g.num_nodes());
    case Aggregation::mean:
      return scale_columns(scatter_add(m, g.targets(), g.num_nodes()), inverse_in_degree(g));
    case Aggregation::max:
      return segment_max(m, g.targets(), g.num_nodes());
  }
  throw ContractError("unknown aggregation");
}

bool is_fusable(const MessageFunction& f, Aggregation op, const EdgeArgs& args) {
  if (op == Aggregation::max) return false;
  switch (f.kind()) {
    case MessageFunction::Kind::copy_xj:
    case MessageFunction::Kind::w_mul_xj:
      return args.xj.has_value();
    case MessageFunction::Kind::e_mul_xj:
      return args.xj.has_value() && args.e.has_value();
    case MessageFunction::Kind::custom:
      return false;
  }
  return false;
}

Tensor propagate(const MessageFunction& f, const GNNGraph& g, Aggregation op, const EdgeArgs& args,
                 PropagatePath path) {
  const bool fusable = is_fusable(f, op, args);
  if (path == PropagatePath::fused && !fusable) {
    throw ContractError("propagate: this message/aggregation pair has no fused path");
  }
  if (path == PropagatePath::two_step || !fusable) {
    return aggregate_neighbors(g, op, apply_edges(f, g, args));
  }

  check_node_input("xi", args.xi, g);
  check_node_input("xj", args.xj, g);
  check_edge_input(args.e, g);
  const Tensor& x = *args.xj;
  Tensor out;
  switch (f.kind()) {
    case MessageFunction::Kind::copy_xj:
      out = spmm_csr(g, x);
      break;
    case MessageFunction::Kind::e_mul_xj:
      out = spmm_csr(g, x, args.e);
      break;
    case MessageFunction::Kind::w_mul_xj: {
      if (!g.has_edge_weight()) throw ContractError("w_mul_xj needs a graph with edge weights");
      const Tensor w(Shape{g.num_edges()}, std::vector<double>(g.edge_weight().begin(), g.edge_weight().end()),
                     x.precision());
      out = spmm_csr(g, x, w);
      break;
    }
    case MessageFunction::Kind::custom:
      break;
  }
  if (op == Aggregation::mean) out = scale_columns(out, inverse_in_degree(g));
  return out;
}

Tensor spmm_csr(const GNNGraph& g, const Tensor& x, const std::optional<Tensor>& edge_scale) {
  check_node_input("spmm_csr input", x, g);
  const std::size_t d = x.rows(), n = g.num_nodes(), ne = g.num_edges();
  enum class ScaleMode { none, per_edge, per_feature };
  ScaleMode mode = ScaleMode::none;
  if (edge_scale) {
    if (edge_scale->precision() != x.precision()) throw ContractError("spmm_csr: mixed precision");
    if (edge_scale->numel() == ne && (edge_scale->rank() == 1 || edge_scale->dim(0) == 1)) {
      mode = ScaleMode::per_edge;
    } else if (edge_scale->rank() == 2 && edge_scale->rows() == d && edge_scale->cols() == ne) {
      mode = ScaleMode::per_feature;
    } else {
      throw DimensionError("spmm_csr: edge scale of shape " + shape_string(edge_scale->shape()) +
                           " matches neither [E] nor [d x E]");
    }
  }

  // Feature-major: each output row is one flat pass over the CSR entries,
  // reading a single row of x. Entries of a target are contiguous and in COO
  // order, so every column is summed in a fixed order. Products are rounded
  // to the storage precision, as a kernel running in that precision would.
  const Precision prec = x.precision();
  const CsrView& csr = g.csr();
  const Index* col = csr.col_idx.data();
  const Index* row = csr.row_idx.data();
  const Index* perm = csr.perm.data();
  const auto xv = x.data();
  const std::span<const double> sv = edge_scale ? edge_scale->data() : std::span<const double>();
  std::vector<double> acc(d * n, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const double* xr = xv.data() + i * n;
    const double* sr = mode == ScaleMode::per_feature ? sv.data() + i * ne : sv.data();
    double* out_row = acc.data() + i * n;
    if (mode == ScaleMode::none) {
      for (std::size_t p = 0; p < ne; ++p) out_row[row[p]] += xr[col[p]];
    } else {
      for (std::size_t p = 0; p < ne; ++p) out_row[row[p]] += round_to(prec, sr[perm[p]] * xr[col[p]]);
    }
  }
  Tensor out(Shape{d, n}, std::move(acc), x.precision());

  std::vector<Tensor> inputs{x};
  if (edge_scale) inputs.push_back(*edge_scale);
  const Tensor scale_values = edge_scale ? edge_scale->detach() : Tensor();
  return record_op(
      OpKind::spmm, inputs, out,
      [g, xs = x.detach(), scale_values, mode, d, n, ne](std::span<const double> up,
                                                         std::span<std::vector<double>* const> grads) {
        // Gradient w.r.t. x is the product with the transposed graph; w.r.t.
        // the scale it is the per-edge dot product of upstream and source.
        auto src = g.sources();
        auto dst = g.targets();
        auto xv = xs.data();
        auto sv = scale_values.data();
        if (auto* gx = grads[0]) {
          for (std::size_t e = 0; e < ne; ++e) {
            const auto s = static_cast<std::size_t>(src[e]), t = static_cast<std::size_t>(dst[e]);
            for (std::size_t i = 0; i < d; ++i) {
              const double c = mode == ScaleMode::none       ? 1.0
                               : mode == ScaleMode::per_edge ? sv[e]
                                                             : sv[i * ne + e];
              (*gx)[i * n + s] += c * up[i * n + t];
            }
          }
        }
        if (grads.size() > 1 && grads[1]) {
          auto& gs = *grads[1];
          for (std::size_t e = 0; e < ne; ++e) {
            const auto s = static_cast<std::size_t>(src[e]), t = static_cast<std::size_t>(dst[e]);
            for (std::size_t i = 0; i < d; ++i) {
              const double v = up[i * n + t] * xv[i * n + s];
              if (mode == ScaleMode::per_edge)
                gs[e] += v;
              else
                gs[i * ne + e] += v;
            }
          }
        }
      });
}

Tensor edge_softmax(const GNNGraph& g, const Tensor& logits) {
  if (logits.rank() != 2 || logits.cols() != g.num_edges()) {
    throw DimensionError("edge_softmax: logits of shape " + shape_string(logits.shape()) + " do not have " +
                         std::to_string(g.num_edges()) + " edge columns");
  }
  return segment_softmax(logits, g.targets(), g.num_nodes());
}

}  // namespace gnn
