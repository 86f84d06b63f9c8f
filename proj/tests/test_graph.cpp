#include <algorithm>
#include <set>
#include <thread>

#include "doctest.h"
#include "gnn/errors.hpp"
#include "gnn/graph.hpp"
#include "test_support.hpp"

using namespace gnn;
using namespace gnn::testing;

namespace {

GNNGraph random_multigraph(Rng& rng, std::size_t max_nodes, std::size_t max_edges) {
  const std::size_t n = std::uniform_int_distribution<std::size_t>(1, max_nodes)(rng);
  const std::size_t m = std::uniform_int_distribution<std::size_t>(0, max_edges)(rng);
  return GNNGraph::from_coo(random_index(m, n, rng), random_index(m, n, rng), n);
}

GNNGraph with_features(const GNNGraph& g, Rng& rng) {
  return g.with_ndata({{"x", random_tensor({3, g.num_nodes()}, rng, Precision::f32)}})
      .with_edata({{"e", random_tensor({2, g.num_edges()}, rng, Precision::f32)}})
      .with_gdata({{"y", random_tensor({1}, rng, Precision::f32)}});
}

std::multiset<std::pair<Index, Index>> edge_multiset(const GNNGraph& g) {
  std::multiset<std::pair<Index, Index>> s;
  for (std::size_t e = 0; e < g.num_edges(); ++e) s.emplace(g.sources()[e], g.targets()[e]);
  return s;
}

}  // namespace

TEST_CASE("from_coo") {
  const GNNGraph g = GNNGraph::from_coo({0}, {1}, 2);
  CHECK(g.num_nodes() == 2);
  CHECK(g.num_edges() == 1);
  CHECK(g.num_graphs() == 1);
  CHECK(std::vector<Index>(g.graph_indicator().begin(), g.graph_indicator().end()) == std::vector<Index>{0, 0});

  const GNNGraph empty = GNNGraph::from_coo({}, {}, 3);
  CHECK(empty.num_nodes() == 3);
  CHECK(empty.num_edges() == 0);

  CHECK_NOTHROW(GNNGraph::from_coo({0}, {1}, 4, {{"x", Tensor::zeros({16, 4})}}));
  try {
    GNNGraph::from_coo({0}, {1}, 4, {{"x", Tensor::zeros({16, 5})}});
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("'x'") != std::string::npos);
  }
  CHECK_THROWS_AS(GNNGraph::from_coo({0}, {2}, 2), IndexError);
  CHECK_THROWS_AS(GNNGraph::from_coo({-1}, {0}, 2), IndexError);
  CHECK_THROWS_AS(GNNGraph::from_coo({0, 1}, {1}, 2), DimensionError);
  CHECK_THROWS_AS(GNNGraph::from_coo({0}, {1}, 2, {}, {{"e", Tensor::zeros({1, 2})}}), DimensionError);
  CHECK_THROWS_AS(GNNGraph::from_coo({0}, {1}, 2, {}, {}, {}, std::vector<double>{1, 2}), DimensionError);
}

TEST_CASE("to_csr") {
  const GNNGraph g = GNNGraph::from_coo({0, 2, 1}, {1, 1, 0}, 3);
  const CsrView& csr = to_csr(g);
  CHECK(csr.row_ptr == std::vector<Index>{0, 1, 3, 3});
  CHECK(csr.col_idx == std::vector<Index>{1, 0, 2});
  CHECK(csr.perm == std::vector<Index>{2, 0, 1});
  CHECK(&to_csr(g) == &csr);

  const GNNGraph copy = g.with_ndata({{"x", Tensor::zeros({1, 3})}});
  CHECK(&to_csr(copy) == &csr);

  CHECK(to_csr(GNNGraph::from_coo({}, {}, 2)).row_ptr == std::vector<Index>{0, 0, 0});
}

TEST_CASE("to_csr from many threads sees one view") {
  Rng rng(5);
  const GNNGraph g = random_multigraph(rng, 200, 2000);
  std::vector<const CsrView*> seen(8);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < seen.size(); ++i) threads.emplace_back([&, i] { seen[i] = &g.csr(); });
  for (auto& t : threads) t.join();
  for (auto* p : seen) CHECK(p == seen.front());
}

TEST_CASE("property: CSR expansion reproduces the COO edges") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const GNNGraph g = random_multigraph(rng, 50, 400);
    const CsrView& csr = g.csr();
    REQUIRE(csr.row_ptr.size() == g.num_nodes() + 1);
    CHECK(csr.row_ptr.front() == 0);
    CHECK(static_cast<std::size_t>(csr.row_ptr.back()) == g.num_edges());
    std::vector<bool> hit(g.num_edges(), false);
    for (std::size_t t = 0; t < g.num_nodes(); ++t) {
      Index last_perm = -1;
      for (Index p = csr.row_ptr[t]; p < csr.row_ptr[t + 1]; ++p) {
        const auto e = static_cast<std::size_t>(csr.perm[static_cast<std::size_t>(p)]);
        CHECK(g.targets()[e] == static_cast<Index>(t));
        CHECK(g.sources()[e] == csr.col_idx[static_cast<std::size_t>(p)]);
        CHECK(csr.perm[static_cast<std::size_t>(p)] > last_perm);  // stable within a row
        last_perm = csr.perm[static_cast<std::size_t>(p)];
        CHECK_FALSE(hit[e]);
        hit[e] = true;
      }
    }
    CHECK(std::all_of(hit.begin(), hit.end(), [](bool b) { return b; }));
  }
}

TEST_CASE("adjacency_dense") {
  CHECK(adjacency_dense(GNNGraph::from_coo({0}, {1}, 2)).to_vector() == std::vector<double>{0, 0, 1, 0});
  CHECK(adjacency_dense(GNNGraph::from_coo({}, {}, 3)).to_vector() == std::vector<double>(9, 0.0));
  CHECK(adjacency_dense(GNNGraph::from_coo({0, 0}, {1, 1}, 2))(1, 0) == 2.0);
  const GNNGraph w = GNNGraph::from_coo({0, 0}, {1, 1}, 2, {}, {}, {}, std::vector<double>{0.5, 0.25});
  CHECK(adjacency_dense(w, true)(1, 0) == 0.75);
  CHECK_THROWS_AS(adjacency_dense(GNNGraph::from_coo({}, {}, 10), false, Precision::f64, 8), ResourceError);
}

TEST_CASE("degree") {
  const GNNGraph g = GNNGraph::from_coo({0, 1}, {1, 0}, 2);
  CHECK(degree(g, Direction::in).to_vector() == std::vector<double>{1, 1});
  const GNNGraph star = GNNGraph::from_coo({0, 0, 0}, {1, 2, 3}, 4);
  CHECK(degree(star, Direction::out)[0] == 3.0);
  const GNNGraph w = GNNGraph::from_coo({0}, {1}, 2, {}, {}, {}, std::vector<double>{0.5});
  CHECK(degree(w, Direction::in, true).to_vector() == std::vector<double>{0, 0.5});
  CHECK_THROWS_AS(degree(g, Direction::in, true), ContractError);
}

TEST_CASE("property: dense row sums equal in-degrees") {
  Rng rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    const GNNGraph g = random_multigraph(rng, 30, 200);
    const Tensor a = adjacency_dense(g);
    const Tensor deg = degree(g, Direction::in);
    for (std::size_t t = 0; t < g.num_nodes(); ++t) {
      double row = 0.0;
      for (std::size_t s = 0; s < g.num_nodes(); ++s) row += a(t, s);
      CHECK(row == deg[t]);
    }
  }
}

TEST_CASE("add_self_loops") {
  const GNNGraph g = add_self_loops(GNNGraph::from_coo({0}, {1}, 2));
  CHECK(std::vector<Index>(g.sources().begin(), g.sources().end()) == std::vector<Index>{0, 0, 1});
  CHECK(std::vector<Index>(g.targets().begin(), g.targets().end()) == std::vector<Index>{1, 0, 1});

  const GNNGraph one = add_self_loops(GNNGraph::from_coo({}, {}, 1));
  CHECK(one.num_edges() == 1);
  CHECK(one.sources()[0] == 0);

  const GNNGraph twice = add_self_loops(GNNGraph::from_coo({0}, {0}, 1));
  CHECK(twice.num_edges() == 2);

  const GNNGraph w = add_self_loops(GNNGraph::from_coo({0}, {1}, 2, {}, {}, {}, std::vector<double>{0.5}));
  CHECK(std::vector<double>(w.edge_weight().begin(), w.edge_weight().end()) == std::vector<double>{0.5, 1, 1});

  CHECK_THROWS_AS(add_self_loops(GNNGraph::from_coo({0}, {1}, 2, {}, {{"e", Tensor::zeros({1, 1})}})),
                  ContractError);

  const GNNGraph b = add_self_loops(batch({GNNGraph::from_coo({0}, {1}, 2), GNNGraph::from_coo({}, {}, 1)}));
  CHECK(b.num_graphs() == 2);
  CHECK(b.num_edges() == 4);
}

TEST_CASE("rand_graph") {
  Rng rng(1);
  const GNNGraph g = rand_graph(10, 30, rng);
  CHECK(g.num_nodes() == 10);
  CHECK(g.num_edges() == 30);

  const GNNGraph forced = rand_graph(2, 2, rng);
  CHECK(edge_multiset(forced) == std::multiset<std::pair<Index, Index>>{{0, 1}, {1, 0}});

  CHECK(rand_graph(5, 0, rng).num_edges() == 0);
  CHECK_THROWS_AS(rand_graph(3, 7, rng), ContractError);
  CHECK_THROWS_AS(rand_graph(1, 1, rng), ContractError);

  Rng a(99), b(99);
  CHECK(rand_graph(20, 50, a) == rand_graph(20, 50, b));
}

TEST_CASE("property: rand_graph yields m distinct non-loop edges") {
  Rng rng(31);
  for (int draw = 0; draw < 300; ++draw) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 25)(rng);
    const std::size_t m = std::uniform_int_distribution<std::size_t>(0, n * (n - 1))(rng);
    const GNNGraph g = rand_graph(n, m, rng);
    REQUIRE(g.num_edges() == m);
    std::size_t loops = 0, dups = 0;
    for (std::size_t i = 0; i < m; ++i) {
      if (g.sources()[i] == g.targets()[i]) ++loops;
      for (std::size_t j = i + 1; j < m; ++j)
        if (g.sources()[i] == g.sources()[j] && g.targets()[i] == g.targets()[j]) ++dups;
    }
    CHECK(loops == 0);
    CHECK(dups == 0);
  }
}

TEST_CASE("batch") {
  const GNNGraph p = GNNGraph::from_coo({0}, {1}, 2);
  const GNNGraph b = batch({p, p});
  CHECK(std::vector<Index>(b.sources().begin(), b.sources().end()) == std::vector<Index>{0, 2});
  CHECK(std::vector<Index>(b.targets().begin(), b.targets().end()) == std::vector<Index>{1, 3});
  CHECK(std::vector<Index>(b.graph_indicator().begin(), b.graph_indicator().end()) ==
        std::vector<Index>{0, 0, 1, 1});
  CHECK(b.num_graphs() == 2);

  Rng rng(4);
  const GNNGraph f = with_features(p, rng);
  CHECK(batch({f}) == f);

  const GNNGraph ya = p.with_gdata({{"y", Tensor::vector({1.5})}});
  const GNNGraph yb = p.with_gdata({{"y", Tensor::vector({-2.0})}});
  CHECK(batch({ya, yb}).graph_feature("y").to_vector() == std::vector<double>{1.5, -2.0});

  CHECK_THROWS_AS(batch(std::span<const GNNGraph>{}), ContractError);
  const GNNGraph wide = p.with_ndata({{"x", Tensor::zeros({4, 2})}});
  const GNNGraph narrow = p.with_ndata({{"x", Tensor::zeros({3, 2})}});
  CHECK_THROWS_AS(batch({wide, narrow}), DimensionError);
  CHECK_THROWS_AS(batch({wide, p}), DimensionError);
}

TEST_CASE("unbatch") {
  Rng rng(8);
  std::vector<GNNGraph> gs;
  for (int i = 0; i < 3; ++i) gs.push_back(with_features(random_multigraph(rng, 6, 12), rng));
  CHECK(unbatch(batch(gs)) == gs);

  const GNNGraph single = gs.front();
  CHECK(unbatch(single) == std::vector<GNNGraph>{single});

  const auto parts = unbatch(batch({GNNGraph::from_coo({}, {}, 2), GNNGraph::from_coo({}, {}, 3)}));
  REQUIRE(parts.size() == 2);
  CHECK(parts[0].num_nodes() == 2);
  CHECK(parts[1].num_nodes() == 3);
  CHECK(parts[1].num_edges() == 0);
}

TEST_CASE("property: batching is associative and unbatch inverts it") {
  Rng rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    const GNNGraph a = with_features(random_multigraph(rng, 8, 20), rng);
    const GNNGraph b = with_features(random_multigraph(rng, 8, 20), rng);
    const GNNGraph c = with_features(random_multigraph(rng, 8, 20), rng);
    CHECK(batch({a, batch({b, c})}) == batch({a, b, c}));
    CHECK(unbatch(batch({a, b, c})) == std::vector<GNNGraph>{a, b, c});
  }
}

TEST_CASE("temporal snapshots") {
  Rng rng(9);
  std::vector<GNNGraph> snaps{rand_graph(4, 3, rng), rand_graph(4, 5, rng), rand_graph(4, 2, rng)};
  const TemporalSnapshotsGNNGraph tg = temporal_from_snapshots(snaps);
  CHECK(tg.num_snapshots() == 3);
  CHECK(snapshot_at(tg, 0) == snaps[0]);
  CHECK_THROWS_AS(snapshot_at(tg, 3), IndexError);
  CHECK_THROWS_AS(temporal_from_snapshots({}), ContractError);
  CHECK_THROWS_AS(TemporalSnapshotsGNNGraph(snaps, {{"t", Tensor::zeros({1, 2})}}), DimensionError);
}
