#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gnn/tensor.hpp"

namespace gnn {

using FeatureMap = std::map<std::string, Tensor>;
using Rng = std::mt19937_64;

// Incoming-edge CSR: row t lists the edges whose target is t, in COO order.
struct CsrView {
  std::vector<Index> row_ptr;  // num_nodes + 1 entries
  std::vector<Index> col_idx;  // source node of each CSR edge
  std::vector<Index> row_idx;  // target node of each CSR edge
  std::vector<Index> perm;     // COO position of each CSR edge
};

enum class Direction { in, out };

// Immutable directed multigraph in COO form with features at node, edge and
// graph level. Messages flow from source to target.
//
// Feature tensors keep the node/edge/graph axis last, so node features are
// [feature_dim, num_nodes]. A batched graph is a disjoint union whose nodes are
// grouped by graph_indicator.
class GNNGraph {
 public:
  GNNGraph();

  static GNNGraph from_coo(std::vector<Index> sources, std::vector<Index> targets, std::size_t num_nodes,
                           FeatureMap ndata = {}, FeatureMap edata = {}, FeatureMap gdata = {},
                           std::optional<std::vector<double>> edge_weight = std::nullopt);

  std::size_t num_nodes() const { return num_nodes_; }
  std::size_t num_edges() const { return sources_->size(); }
  std::size_t num_graphs() const { return num_graphs_; }

  std::span<const Index> sources() const { return *sources_; }
  std::span<const Index> targets() const { return *targets_; }
  bool has_edge_weight() const { return edge_weight_ != nullptr; }
  std::span<const double> edge_weight() const;
  std::span<const Index> graph_indicator() const { return *indicator_; }

  const FeatureMap& ndata() const { return ndata_; }
  const FeatureMap& edata() const { return edata_; }
  const FeatureMap& gdata() const { return gdata_; }
  // Named feature lookup; throws ContractError naming the missing feature.
  const Tensor& node_feature(const std::string& name) const;
  const Tensor& graph_feature(const std::string& name) const;

  // Copies share topology and the CSR cache; only the feature map changes.
  GNNGraph with_ndata(FeatureMap ndata) const;
  GNNGraph with_edata(FeatureMap edata) const;
  GNNGraph with_gdata(FeatureMap gdata) const;

  // Incoming-edge CSR, built on first use and shared by all copies. Safe to
  // call from several threads.
  const CsrView& csr() const;

  // Exact equality of topology, weights, membership and features.
  bool operator==(const GNNGraph& other) const;

 private:
  friend GNNGraph batch(std::span<const GNNGraph> graphs);
  friend std::vector<GNNGraph> unbatch(const GNNGraph& g);
  friend GNNGraph add_self_loops(const GNNGraph& g);

  struct CsrCache {
    std::once_flag once;
    std::unique_ptr<const CsrView> view;
  };

  void validate() const;

  std::size_t num_nodes_ = 0;
  std::size_t num_graphs_ = 1;
  std::shared_ptr<const std::vector<Index>> sources_;
  std::shared_ptr<const std::vector<Index>> targets_;
  std::shared_ptr<const std::vector<double>> edge_weight_;
  std::shared_ptr<const std::vector<Index>> indicator_;
  FeatureMap ndata_, edata_, gdata_;
  std::shared_ptr<CsrCache> csr_;
};

inline const CsrView& to_csr(const GNNGraph& g) { return g.csr(); }

// Dense adjacency with A[t][s] = multiplicity (or summed weight) of s -> t.
Tensor adjacency_dense(const GNNGraph& g, bool weighted = false, Precision precision = Precision::f64,
                       std::size_t max_nodes = 4096);

// Per-node count (or weight sum) of incoming or outgoing edges, shape [n].
Tensor degree(const GNNGraph& g, Direction direction, bool weighted = false,
              Precision precision = Precision::f64);

// Append one i -> i edge per node after the existing edges.
GNNGraph add_self_loops(const GNNGraph& g);

// Directed simple graph with m distinct ordered pairs and no self-loops,
// uniform over all such edge sets.
GNNGraph rand_graph(std::size_t n, std::size_t m, Rng& rng);

// Disjoint union; node and graph indices of later graphs are offset.
GNNGraph batch(std::span<const GNNGraph> graphs);
inline GNNGraph batch(std::initializer_list<GNNGraph> graphs) {
  return batch(std::span<const GNNGraph>(graphs.begin(), graphs.size()));
}

// Split a batched graph back into its num_graphs members.
std::vector<GNNGraph> unbatch(const GNNGraph& g);

// Ordered snapshots of a time-varying graph.
class TemporalSnapshotsGNNGraph {
 public:
  explicit TemporalSnapshotsGNNGraph(std::vector<GNNGraph> snapshots, FeatureMap tgdata = {});

  std::size_t num_snapshots() const { return snapshots_.size(); }
  const GNNGraph& snapshot_at(std::size_t t) const;
  const std::vector<GNNGraph>& snapshots() const { return snapshots_; }
  const FeatureMap& tgdata() const { return tgdata_; }

 private:
  std::vector<GNNGraph> snapshots_;
  FeatureMap tgdata_;
};

inline TemporalSnapshotsGNNGraph temporal_from_snapshots(std::vector<GNNGraph> snapshots) {
  return TemporalSnapshotsGNNGraph(std::move(snapshots));
}

inline const GNNGraph& snapshot_at(const TemporalSnapshotsGNNGraph& tg, std::size_t t) {
  return tg.snapshot_at(t);
}

}  // namespace gnn
