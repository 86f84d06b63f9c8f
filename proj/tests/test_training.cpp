#include <cmath>
#include <limits>
#include <set>

#include "doctest.h"
#include "gnn/errors.hpp"
#include "gnn/ops.hpp"
#include "gnn/training.hpp"
#include "layer_support.hpp"

using namespace gnn;
using namespace gnn::testing;

namespace {

constexpr Precision f64 = Precision::f64;

// Scalar Adam written straight from the update rule, kept apart from the
// library so the two can be compared.
struct ScalarAdam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0.0, v = 0.0;
  int t = 0;

  double step(double theta, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    return theta - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

std::vector<GNNGraph> tagged_graphs(std::size_t count) {
  std::vector<GNNGraph> out;
  for (std::size_t k = 0; k < count; ++k) {
    out.push_back(GNNGraph::from_coo({}, {}, 1, {}, {}, {{"id", Tensor(Shape{1}, {double(k)}, f64)}}));
  }
  return out;
}

std::size_t graph_id(const GNNGraph& g) { return static_cast<std::size_t>(g.graph_feature("id")[0]); }

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.num_graphs = 12;
  cfg.nodes = 5;
  cfg.edges = 8;
  cfg.feature_dim = 3;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("adam first step") {
  Parameter p{"theta", Tensor(Shape{1}, {0.0}, f64)};
  Adam adam(0.1);
  adam.step({&p}, {{"theta", Tensor(Shape{1}, {1.0}, f64)}});
  CHECK(p.value[0] == doctest::Approx(-0.1 / (1 + 1e-8)).epsilon(1e-15));
  CHECK(p.value[0] == doctest::Approx(-0.0999999990).epsilon(1e-9));
  CHECK(adam.steps() == 1);
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
  Parameter p{"w", Tensor(Shape{2, 2}, {1, -2, 3, 0.5}, f64)};
  const Tensor before = p.value;
  Adam adam(0.1);
  for (int k = 0; k < 3; ++k) adam.step({&p}, {{"w", Tensor::zeros({2, 2}, f64)}});
  CHECK(p.value.same_values(before));
}

TEST_CASE("adam drives theta monotonically under a constant gradient") {
  Parameter p{"theta", Tensor(Shape{1}, {0.0}, f64)};
  Adam adam(0.1);
  double last = 0.0;
  for (int k = 0; k < 2; ++k) {
    adam.step({&p}, {{"theta", Tensor(Shape{1}, {1.0}, f64)}});
    CHECK(p.value[0] < last);
    last = p.value[0];
  }
}

TEST_CASE("property: adam matches an independent scalar update") {
  Rng rng(11);
  std::uniform_real_distribution<double> unit(-2.0, 2.0);
  std::uniform_int_distribution<int> steps(1, 30);
  for (int trial = 0; trial < 50; ++trial) {
    const double lr = std::pow(10.0, unit(rng));
    const std::size_t k = 5;
    std::vector<double> theta(k);
    for (auto& x : theta) x = unit(rng);
    Parameter p{"p", Tensor(Shape{k}, theta, f64)};
    Adam adam(lr);
    std::vector<ScalarAdam> ref(k, ScalarAdam{lr});
    const int t = steps(rng);
    for (int s = 0; s < t; ++s) {
      std::vector<double> g(k);
      for (auto& x : g) x = unit(rng);
      adam.step({&p}, {{"p", Tensor(Shape{k}, g, f64)}});
      for (std::size_t i = 0; i < k; ++i) theta[i] = ref[i].step(theta[i], g[i]);
    }
    CHECK(max_abs_diff(p.value.data(), theta) < 1e-12);
  }
}

TEST_CASE("adam contract") {
  Parameter a{"a", Tensor(Shape{1}, {1.0}, f64)};
  Parameter b{"b", Tensor(Shape{1}, {2.0}, f64)};
  Parameter frozen{"frozen", Tensor(Shape{1}, {3.0}, f64), false};
  Adam adam(0.1);
  CHECK_THROWS_AS(adam.step({&a, &b}, {{"a", Tensor(Shape{1}, {1.0}, f64)}}), ContractError);
  CHECK(a.value[0] == 1.0);
  CHECK(adam.steps() == 0);
  adam.step({&a, &frozen}, {{"a", Tensor(Shape{1}, {1.0}, f64)}});
  CHECK(frozen.value[0] == 3.0);
  CHECK_THROWS_AS(Adam(-1.0), ContractError);
}

TEST_CASE("mse_loss") {
  const Tensor pred(Shape{2}, {1, 2}, f64), y(Shape{2}, {1, 4}, f64);
  CHECK(mse_loss(pred, y).item() == 2.0);
  CHECK(mse_loss(y, y).item() == 0.0);
  CHECK(mse_loss(Tensor(Shape{1, 2}, {1, 2}, f64), y).item() == 2.0);
  CHECK_THROWS_AS(mse_loss(pred, Tensor(Shape{3}, {1, 2, 3}, f64)), DimensionError);
}

TEST_CASE("mse_loss gradient is 2(pred - y)/N") {
  Rng rng(3);
  const Tensor pred = random_tensor({1, 6}, rng), y = random_tensor({6}, rng);
  Tape tape;
  const GradientMap g = tape.backward(mse_loss(tape.parameter("p", pred), y));
  std::vector<double> expected(6);
  for (std::size_t i = 0; i < 6; ++i) expected[i] = 2.0 * (pred[i] - y[i]) / 6.0;
  CHECK(max_abs_diff(g.at("p").data(), expected) < 1e-15);

  auto r = grad_check([&](const std::vector<Tensor>& in) { return mse_loss(in[0], y); }, {pred}, rng);
  REQUIRE(r);
  CHECK(*r < 1e-6);
}

TEST_CASE("dataloader partition") {
  DataLoader loader(tagged_graphs(5), {2, false, false, 0});
  const auto batches = loader.epoch(1);
  REQUIRE(batches.size() == 3);
  CHECK(loader.num_batches() == 3);
  CHECK(batches[0].graphs.size() == 2);
  CHECK(batches[1].graphs.size() == 2);
  CHECK(batches[2].graphs.size() == 1);
  std::size_t next = 0;
  for (const Batch& b : batches) {
    CHECK_FALSE(b.collated);
    for (const GNNGraph& g : b.graphs) CHECK(graph_id(g) == next++);
  }
}

TEST_CASE("property: every epoch visits each graph once") {
  const auto data = tagged_graphs(23);
  for (std::size_t bs : {1, 4, 7, 23, 40}) {
    for (bool shuffle : {false, true}) {
      DataLoader loader(data, {bs, shuffle, true, 5});
      for (std::size_t epoch = 1; epoch <= 3; ++epoch) {
        std::multiset<std::size_t> seen;
        for (const Batch& b : loader.epoch(epoch)) {
          REQUIRE(b.collated);
          CHECK(b.collated->num_graphs() == b.graphs.size());
          for (std::size_t k = 0; k < b.graphs.size(); ++k) {
            CHECK(graph_id(b.graphs[k]) == b.indices[k]);
            seen.insert(graph_id(b.graphs[k]));
          }
        }
        CHECK(seen.size() == data.size());
        CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == data.size());
      }
    }
  }
}

TEST_CASE("dataloader shuffling is seeded per epoch") {
  DataLoader a(tagged_graphs(20), {20, true, false, 9});
  DataLoader b(tagged_graphs(20), {20, true, false, 9});
  CHECK(a.epoch(2)[0].indices == b.epoch(2)[0].indices);
  CHECK(a.epoch(1)[0].indices != a.epoch(2)[0].indices);
  CHECK_THROWS_AS(DataLoader({}, {}), ContractError);
  CHECK_THROWS_AS(DataLoader(tagged_graphs(2), {0, true, true, 0}), ContractError);
}

TEST_CASE("synthetic dataset") {
  TrainConfig cfg;
  Rng rng = dataset_rng(cfg.seed);
  const auto data = make_synthetic_dataset(cfg, rng);
  REQUIRE(data.size() == 128);
  for (const GNNGraph& g : data) {
    CHECK(g.num_nodes() == 10);
    CHECK(g.num_edges() == 30);
    CHECK(g.node_feature("x").shape() == Shape{16, 10});
    CHECK(g.node_feature("x").precision() == Precision::f32);
    CHECK(g.graph_feature("y").numel() == 1);
    CHECK(std::abs(g.graph_feature("y")[0]) <= 1.0 + 3 * cfg.noise);
  }
  Rng again = dataset_rng(cfg.seed);
  const auto twin = make_synthetic_dataset(cfg, again);
  for (std::size_t k = 0; k < data.size(); ++k) CHECK(data[k] == twin[k]);

  Rng other = dataset_rng(cfg.seed + 1);
  CHECK_FALSE(make_synthetic_dataset(cfg, other)[0] == data[0]);
}

TEST_CASE("synthetic targets follow a tanh teacher") {
  TrainConfig cfg = small_config();
  cfg.noise = 0.0;
  Rng rng = dataset_rng(cfg.seed);
  const auto data = make_synthetic_dataset(cfg, rng);
  // With no noise, y is tanh of a linear function of the node means, so
  // atanh(y) is exactly linear in the means: fit u from the first d graphs by
  // solving a d x d linear system, then predict the rest.
  const std::size_t d = cfg.feature_dim, n = cfg.nodes;
  auto means = [&](const GNNGraph& g) {
    std::vector<double> mu(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < n; ++j) mu[i] += g.node_feature("x")(i, j);
      mu[i] /= double(n);
    }
    return mu;
  };
  // Gauss-Jordan on the d x d system M u = z.
  std::vector<std::vector<double>> a(d, std::vector<double>(d + 1));
  for (std::size_t r = 0; r < d; ++r) {
    const auto mu = means(data[r]);
    for (std::size_t c = 0; c < d; ++c) a[r][c] = mu[c];
    a[r][d] = std::atanh(data[r].graph_feature("y")[0]);
  }
  for (std::size_t c = 0; c < d; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c; r < d; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    for (std::size_t r = 0; r < d; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k <= d; ++k) a[r][k] -= f * a[c][k];
    }
  }
  for (std::size_t k = d; k < data.size(); ++k) {
    const auto mu = means(data[k]);
    double z = 0.0;
    for (std::size_t i = 0; i < d; ++i) z += mu[i] * a[i][d] / a[i][i];
    // y is stored in single precision.
    CHECK(std::tanh(z) == doctest::Approx(data[k].graph_feature("y")[0]).epsilon(1e-5));
  }
}

TEST_CASE("random target mode ignores the features") {
  TrainConfig cfg = small_config();
  cfg.random_targets = true;
  cfg.num_graphs = 200;
  Rng rng = dataset_rng(cfg.seed);
  double sum = 0.0, sq = 0.0;
  for (const GNNGraph& g : make_synthetic_dataset(cfg, rng)) {
    const double y = g.graph_feature("y")[0];
    sum += y;
    sq += y * y;
  }
  CHECK(std::abs(sum / 200) < 0.3);
  CHECK(sq / 200 > 0.6);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.nodes = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = TrainConfig{};
  cfg.lr = -1;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("fit with zero learning rate keeps the loss constant") {
  const TrainConfig cfg = small_config();
  Rng drng = dataset_rng(cfg.seed);
  const auto data = make_synthetic_dataset(cfg, drng);
  Rng mrng = model_rng(cfg.seed);
  GnnChain model = build_chain("gcn:3-8:relu, gcn:8-8, pool:mean, dense:8-1", mrng);
  const auto before = model.state();
  const auto history = fit(model, data, {5, 0.0, 4, true, 1});
  REQUIRE(history.size() == 5);
  for (const auto& m : history) {
    CHECK(m.mean_loss == doctest::Approx(history[0].mean_loss).epsilon(1e-6));
    CHECK(m.wall_ms >= 0.0);
  }
  CHECK(history[4].epoch == 5);
  for (const auto& [name, t] : model.state()) CHECK(t.same_values(before.at(name)));
}

TEST_CASE("fit on one graph for one epoch takes one optimizer step") {
  TrainConfig cfg = small_config();
  cfg.num_graphs = 1;
  Rng drng = dataset_rng(cfg.seed);
  const auto data = make_synthetic_dataset(cfg, drng);
  const std::string spec = "gcn:3-4:relu, pool:mean, dense:4-1";
  Rng r1 = model_rng(1), r2 = model_rng(1);
  GnnChain trained = build_chain(spec, r1), manual = build_chain(spec, r2);

  const auto history = fit(trained, data, {1, 1e-2, 32, true, 1});
  REQUIRE(history.size() == 1);

  Tape tape;
  ForwardContext ctx{&tape, true, true};
  const GNNGraph g = batch(std::span<const GNNGraph>(data));
  const Tensor loss = mse_loss(manual.forward(ctx, g, g.node_feature("x")), g.graph_feature("y"));
  CHECK(history[0].mean_loss == loss.item());
  Adam adam(1e-2);
  adam.step(manual.parameters(), tape.backward(loss));
  for (const auto& [name, t] : trained.state()) CHECK(t.same_values(manual.state().at(name)));
}

TEST_CASE("fit is deterministic") {
  const TrainConfig cfg = small_config();
  std::vector<double> losses[2];
  for (auto& out : losses) {
    Rng drng = dataset_rng(cfg.seed), mrng = model_rng(cfg.seed);
    const auto data = make_synthetic_dataset(cfg, drng);
    GnnChain model = build_chain("gcn:3-8, batchnorm:8, relu, pool:mean, dense:8-1", mrng);
    for (const auto& m : fit(model, data, {4, 1e-2, 5, true, 3})) out.push_back(m.mean_loss);
  }
  CHECK(losses[0] == losses[1]);
}

TEST_CASE("fit reports a non-finite loss with its epoch and batch") {
  TrainConfig cfg = small_config();
  Rng drng = dataset_rng(cfg.seed), mrng = model_rng(cfg.seed);
  auto data = make_synthetic_dataset(cfg, drng);
  data[0] = data[0].with_gdata({{"y", Tensor(Shape{1}, {std::numeric_limits<double>::infinity()}, Precision::f32)}});
  GnnChain model = build_chain("gcn:3-4, pool:mean, dense:4-1", mrng);
  try {
    fit(model, data, {2, 1e-3, 4, false, 1});
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("epoch 1, batch 1") != std::string::npos);
  }
}
