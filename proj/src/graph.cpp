#include "gnn/graph.hpp"

#include <algorithm>
#include <unordered_set>

#include "gnn/errors.hpp"

namespace gnn {

namespace {

template <class T>
std::shared_ptr<const std::vector<T>> share(std::vector<T> v) {
  return std::make_shared<const std::vector<T>>(std::move(v));
}

void check_feature_extents(const FeatureMap& features, std::size_t count, const char* level,
                           const char* counted) {
  for (const auto& [name, t] : features) {
    if (t.rank() == 0 || t.shape().back() != count) {
      throw DimensionError(std::string(level) + " feature '" + name + "' has shape " + shape_string(t.shape()) +
                           " but its last extent must equal " + counted + " = " + std::to_string(count));
    }
  }
}

// Leading shape of a feature (everything but the last extent) and the
// number of values per slice.
Shape leading(const Tensor& t) { return Shape(t.shape().begin(), t.shape().end() - 1); }

// Concatenate tensors along their last axis.
Tensor concat_last(const std::vector<Tensor>& parts) {
  const Tensor& first = parts.front();
  const Shape lead = leading(first);
  const std::size_t rows = shape_numel(lead);
  std::size_t total = 0;
  for (const auto& p : parts) total += p.shape().back();
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t k = p.shape().back();
    auto v = p.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.data() + r * k, k, out.data() + r * total + offset);
    offset += k;
  }
  Shape shape = lead;
  shape.push_back(total);
  return Tensor(std::move(shape), std::move(out), first.precision());
}

// Select positions of the last axis.
Tensor take_last(const Tensor& t, std::span<const std::size_t> positions) {
  const Shape lead = leading(t);
  const std::size_t rows = shape_numel(lead);
  const std::size_t k = t.shape().back();
  const std::size_t m = positions.size();
  auto v = t.data();
  std::vector<double> out(rows * m);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] = v[r * k + positions[j]];
  Shape shape = lead;
  shape.push_back(m);
  return Tensor(std::move(shape), std::move(out), t.precision());
}

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> r(end - begin);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = begin + i;
  return r;
}

FeatureMap concat_features(std::span<const GNNGraph> graphs, const FeatureMap& (GNNGraph::*get)() const,
                           const char* level) {
  const FeatureMap& ref = (graphs.front().*get)();
  FeatureMap out;
  for (const auto& [name, t] : ref) {
    std::vector<Tensor> parts;
    for (const auto& g : graphs) {
      const FeatureMap& f = (g.*get)();
      auto it = f.find(name);
      if (it == f.end() || leading(it->second) != leading(t) || it->second.precision() != t.precision()) {
        throw DimensionError(std::string("batch: ") + level + " feature '" + name +
                             "' is missing or has mismatched dimensions");
      }
      parts.push_back(it->second);
    }
    out.emplace(name, concat_last(parts));
  }
  for (const auto& g : graphs) {
    for (const auto& [name, t] : (g.*get)()) {
      if (!ref.count(name)) {
        throw DimensionError(std::string("batch: ") + level + " feature '" + name +
                             "' is not present in every graph");
      }
    }
  }
  return out;
}

bool same_features(const FeatureMap& a, const FeatureMap& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    auto it = b.find(name);
    if (it == b.end() || !t.same_values(it->second)) return false;
  }
  return true;
}

}  // namespace

GNNGraph::GNNGraph()
    : sources_(share(std::vector<Index>{})),
      targets_(share(std::vector<Index>{})),
      indicator_(share(std::vector<Index>{})),
      csr_(std::make_shared<CsrCache>()) {}

GNNGraph GNNGraph::from_coo(std::vector<Index> sources, std::vector<Index> targets, std::size_t num_nodes,
                            FeatureMap ndata, FeatureMap edata, FeatureMap gdata,
                            std::optional<std::vector<double>> edge_weight) {
  if (sources.size() != targets.size()) {
    throw DimensionError("from_coo: " + std::to_string(sources.size()) + " sources but " +
                         std::to_string(targets.size()) + " targets");
  }
  GNNGraph g;
  g.num_nodes_ = num_nodes;
  g.sources_ = share(std::move(sources));
  g.targets_ = share(std::move(targets));
  if (edge_weight) g.edge_weight_ = share(std::move(*edge_weight));
  g.indicator_ = share(std::vector<Index>(num_nodes, 0));
  g.ndata_ = std::move(ndata);
  g.edata_ = std::move(edata);
  g.gdata_ = std::move(gdata);
  g.validate();
  return g;
}

void GNNGraph::validate() const {
  const std::size_t e = sources_->size();
  if (targets_->size() != e) throw DimensionError("graph: source and target lists differ in length");
  for (std::size_t i = 0; i < e; ++i) {
    for (Index v : {(*sources_)[i], (*targets_)[i]}) {
      if (v < 0 || static_cast<std::size_t>(v) >= num_nodes_) {
        throw IndexError("graph: edge " + std::to_string(i) + " endpoint " + std::to_string(v) +
                         " outside [0, " + std::to_string(num_nodes_) + ")");
      }
    }
  }
  if (edge_weight_ && edge_weight_->size() != e) {
    throw DimensionError("graph: " + std::to_string(edge_weight_->size()) + " edge weights for " +
                         std::to_string(e) + " edges");
  }
  if (num_graphs_ < 1) throw ContractError("graph: num_graphs must be at least 1");
  if (indicator_->size() != num_nodes_) throw DimensionError("graph: graph_indicator length differs from num_nodes");
  for (std::size_t i = 0; i < num_nodes_; ++i) {
    const Index gi = (*indicator_)[i];
    if (gi < 0 || static_cast<std::size_t>(gi) >= num_graphs_) throw IndexError("graph: graph_indicator out of range");
    if (i > 0 && gi < (*indicator_)[i - 1]) throw ContractError("graph: graph_indicator must be non-decreasing");
  }
  for (std::size_t i = 0; i < e; ++i) {
    const auto s = static_cast<std::size_t>((*sources_)[i]);
    const auto t = static_cast<std::size_t>((*targets_)[i]);
    if ((*indicator_)[s] != (*indicator_)[t]) {
      throw ContractError("graph: edge " + std::to_string(i) + " connects different member graphs");
    }
  }
  check_feature_extents(ndata_, num_nodes_, "node", "num_nodes");
  check_feature_extents(edata_, e, "edge", "num_edges");
  check_feature_extents(gdata_, num_graphs_, "graph", "num_graphs");
}

std::span<const double> GNNGraph::edge_weight() const {
  if (!edge_weight_) throw ContractError("graph has no edge weights");
  return *edge_weight_;
}

const Tensor& GNNGraph::node_feature(const std::string& name) const {
  auto it = ndata_.find(name);
  if (it == ndata_.end()) throw ContractError("graph has no node feature '" + name + "'");
  return it->second;
}

const Tensor& GNNGraph::graph_feature(const std::string& name) const {
  auto it = gdata_.find(name);
  if (it == gdata_.end()) throw ContractError("graph has no graph feature '" + name + "'");
  return it->second;
}

GNNGraph GNNGraph::with_ndata(FeatureMap ndata) const {
  GNNGraph g = *this;
  g.ndata_ = std::move(ndata);
  check_feature_extents(g.ndata_, num_nodes_, "node", "num_nodes");
  return g;
}

GNNGraph GNNGraph::with_edata(FeatureMap edata) const {
  GNNGraph g = *this;
  g.edata_ = std::move(edata);
  check_feature_extents(g.edata_, num_edges(), "edge", "num_edges");
  return g;
}

GNNGraph GNNGraph::with_gdata(FeatureMap gdata) const {
  GNNGraph g = *this;
  g.gdata_ = std::move(gdata);
  check_feature_extents(g.gdata_, num_graphs_, "graph", "num_graphs");
  return g;
}

const CsrView& GNNGraph::csr() const {
  std::call_once(csr_->once, [this] {
    const std::size_t n = num_nodes_, e = num_edges();
    auto view = std::make_unique<CsrView>();
    view->row_ptr.assign(n + 1, 0);
    for (Index t : *targets_) ++view->row_ptr[static_cast<std::size_t>(t) + 1];
    for (std::size_t i = 0; i < n; ++i) view->row_ptr[i + 1] += view->row_ptr[i];
    view->col_idx.resize(e);
    view->row_idx.resize(e);
    view->perm.resize(e);
    std::vector<Index> next(view->row_ptr.begin(), view->row_ptr.end() - 1);
    for (std::size_t k = 0; k < e; ++k) {
      const auto pos = static_cast<std::size_t>(next[static_cast<std::size_t>((*targets_)[k])]++);
      view->col_idx[pos] = (*sources_)[k];
      view->row_idx[pos] = (*targets_)[k];
      view->perm[pos] = static_cast<Index>(k);
    }
    csr_->view = std::move(view);
  });
  return *csr_->view;
}

bool GNNGraph::operator==(const GNNGraph& other) const {
  if (num_nodes_ != other.num_nodes_ || num_graphs_ != other.num_graphs_) return false;
  if (*sources_ != *other.sources_ || *targets_ != *other.targets_ || *indicator_ != *other.indicator_) return false;
  if (has_edge_weight() != other.has_edge_weight()) return false;
  if (edge_weight_ && *edge_weight_ != *other.edge_weight_) return false;
  return same_features(ndata_, other.ndata_) && same_features(edata_, other.edata_) &&
         same_features(gdata_, other.gdata_);
}

Tensor adjacency_dense(const GNNGraph& g, bool weighted, Precision precision, std::size_t max_nodes) {
  const std::size_t n = g.num_nodes();
  if (n > max_nodes) {
    throw ResourceError("adjacency_dense: " + std::to_string(n) + " nodes exceed the cap of " +
                        std::to_string(max_nodes));
  }
  std::span<const double> w;
  if (weighted) w = g.edge_weight();
  std::vector<double> a(n * n, 0.0);
  auto src = g.sources();
  auto dst = g.targets();
  for (std::size_t e = 0; e < src.size(); ++e) {
    a[static_cast<std::size_t>(dst[e]) * n + static_cast<std::size_t>(src[e])] += weighted ? w[e] : 1.0;
  }
  return Tensor(Shape{n, n}, std::move(a), precision);
}

Tensor degree(const GNNGraph& g, Direction direction, bool weighted, Precision precision) {
  if (weighted && !g.has_edge_weight()) throw ContractError("degree: weighted degree requested without edge weights");
  auto ends = direction == Direction::in ? g.targets() : g.sources();
  std::vector<double> d(g.num_nodes(), 0.0);
  for (std::size_t e = 0; e < ends.size(); ++e) {
    d[static_cast<std::size_t>(ends[e])] += weighted ? g.edge_weight()[e] : 1.0;
  }
  return Tensor::vector(std::move(d), precision);
}

GNNGraph add_self_loops(const GNNGraph& g) {
  if (!g.edata().empty()) throw ContractError("add_self_loops: graphs with edge features are not supported");
  const std::size_t n = g.num_nodes();
  std::vector<Index> src(g.sources().begin(), g.sources().end());
  std::vector<Index> dst(g.targets().begin(), g.targets().end());
  std::optional<std::vector<double>> w;
  if (g.has_edge_weight()) w.emplace(g.edge_weight().begin(), g.edge_weight().end());
  for (std::size_t i = 0; i < n; ++i) {
    src.push_back(static_cast<Index>(i));
    dst.push_back(static_cast<Index>(i));
    if (w) w->push_back(1.0);
  }
  GNNGraph out = g;
  out.sources_ = share(std::move(src));
  out.targets_ = share(std::move(dst));
  if (w) out.edge_weight_ = share(std::move(*w));
  out.csr_ = std::make_shared<GNNGraph::CsrCache>();
  out.validate();
  return out;
}

GNNGraph rand_graph(std::size_t n, std::size_t m, Rng& rng) {
  const std::size_t capacity = n * (n > 0 ? n - 1 : 0);
  if (m > capacity) {
    throw ContractError("rand_graph: " + std::to_string(m) + " edges exceed the " + std::to_string(capacity) +
                        " ordered pairs available on " + std::to_string(n) + " nodes");
  }
  // Pair (s, t) with s != t is coded as s * (n - 1) + t', where t' skips s.
  auto decode = [n](std::uint64_t code) {
    const auto s = static_cast<Index>(code / (n - 1));
    auto t = static_cast<Index>(code % (n - 1));
    if (t >= s) ++t;
    return std::pair{s, t};
  };
  std::vector<Index> src, dst;
  src.reserve(m);
  dst.reserve(m);
  if (m == 0) return GNNGraph::from_coo({}, {}, n);

  std::uniform_int_distribution<std::uint64_t> pick(0, capacity - 1);
  const bool sparse = 2 * m <= capacity;
  // Rejection-sample the chosen pairs, or the excluded pairs when dense.
  const std::size_t draws = sparse ? m : capacity - m;
  std::unordered_set<std::uint64_t> seen;
  std::vector<std::uint64_t> order;
  order.reserve(draws);
  while (order.size() < draws) {
    const std::uint64_t c = pick(rng);
    if (seen.insert(c).second) order.push_back(c);
  }
  if (!sparse) {
    order.clear();
    for (std::uint64_t c = 0; c < capacity; ++c)
      if (!seen.count(c)) order.push_back(c);
    std::shuffle(order.begin(), order.end(), rng);
  }
  for (auto c : order) {
    auto [s, t] = decode(c);
    src.push_back(s);
    dst.push_back(t);
  }
  return GNNGraph::from_coo(std::move(src), std::move(dst), n);
}

GNNGraph batch(std::span<const GNNGraph> graphs) {
  if (graphs.empty()) throw ContractError("batch: empty list of graphs");
  const bool weighted = graphs.front().has_edge_weight();
  std::vector<Index> src, dst, indicator;
  std::vector<double> w;
  std::size_t node_offset = 0, graph_offset = 0;
  for (const auto& g : graphs) {
    if (g.has_edge_weight() != weighted) throw ContractError("batch: some graphs have edge weights and some do not");
    for (Index s : g.sources()) src.push_back(s + static_cast<Index>(node_offset));
    for (Index t : g.targets()) dst.push_back(t + static_cast<Index>(node_offset));
    for (Index k : g.graph_indicator()) indicator.push_back(k + static_cast<Index>(graph_offset));
    if (weighted) w.insert(w.end(), g.edge_weight().begin(), g.edge_weight().end());
    node_offset += g.num_nodes();
    graph_offset += g.num_graphs();
  }
  GNNGraph out;
  out.num_nodes_ = node_offset;
  out.num_graphs_ = graph_offset;
  out.sources_ = share(std::move(src));
  out.targets_ = share(std::move(dst));
  if (weighted) out.edge_weight_ = share(std::move(w));
  out.indicator_ = share(std::move(indicator));
  out.ndata_ = concat_features(graphs, &GNNGraph::ndata, "node");
  out.edata_ = concat_features(graphs, &GNNGraph::edata, "edge");
  out.gdata_ = concat_features(graphs, &GNNGraph::gdata, "graph");
  out.validate();
  return out;
}

std::vector<GNNGraph> unbatch(const GNNGraph& g) {
  const std::size_t ng = g.num_graphs();
  if (ng == 1) return {g};
  auto ind = g.graph_indicator();
  std::vector<std::size_t> node_start(ng + 1, 0);
  for (Index k : ind) ++node_start[static_cast<std::size_t>(k) + 1];
  for (std::size_t k = 0; k < ng; ++k) node_start[k + 1] += node_start[k];

  std::vector<std::vector<std::size_t>> edges_of(ng);
  auto src = g.sources();
  for (std::size_t e = 0; e < src.size(); ++e) {
    edges_of[static_cast<std::size_t>(ind[static_cast<std::size_t>(src[e])])].push_back(e);
  }

  std::vector<GNNGraph> out;
  out.reserve(ng);
  for (std::size_t k = 0; k < ng; ++k) {
    const std::size_t lo = node_start[k], hi = node_start[k + 1];
    const auto& es = edges_of[k];
    std::vector<Index> s, t;
    std::optional<std::vector<double>> w;
    if (g.has_edge_weight()) w.emplace();
    for (auto e : es) {
      s.push_back(g.sources()[e] - static_cast<Index>(lo));
      t.push_back(g.targets()[e] - static_cast<Index>(lo));
      if (w) w->push_back(g.edge_weight()[e]);
    }
    const auto nodes = range(lo, hi);
    const std::vector<std::size_t> graph_pos{k};
    FeatureMap nd, ed, gd;
    for (const auto& [name, tensor] : g.ndata()) nd.emplace(name, take_last(tensor, nodes));
    for (const auto& [name, tensor] : g.edata()) ed.emplace(name, take_last(tensor, es));
    for (const auto& [name, tensor] : g.gdata()) gd.emplace(name, take_last(tensor, graph_pos));
    out.push_back(GNNGraph::from_coo(std::move(s), std::move(t), hi - lo, std::move(nd), std::move(ed),
                                     std::move(gd), std::move(w)));
  }
  return out;
}

TemporalSnapshotsGNNGraph::TemporalSnapshotsGNNGraph(std::vector<GNNGraph> snapshots, FeatureMap tgdata)
    : snapshots_(std::move(snapshots)), tgdata_(std::move(tgdata)) {
  if (snapshots_.empty()) throw ContractError("temporal graph needs at least one snapshot");
  check_feature_extents(tgdata_, snapshots_.size(), "temporal graph", "num_snapshots");
}

const GNNGraph& TemporalSnapshotsGNNGraph::snapshot_at(std::size_t t) const {
  if (t >= snapshots_.size()) {
    throw IndexError("snapshot " + std::to_string(t) + " outside [0, " + std::to_string(snapshots_.size()) + ")");
  }
  return snapshots_[t];
}

}  // namespace gnn
