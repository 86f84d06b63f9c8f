#include "gnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "gnn/errors.hpp"
#include "gnn/ops.hpp"

namespace gnn {

namespace {

Tensor normal(Shape shape, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> dist(0.0, sd);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), Precision::f64);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double max_rel(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-4});
    const double diff = std::abs(a[i] - b[i]) / denom;
    // NaN counts as an infinite error rather than being skipped.
    if (!(diff <= worst)) worst = std::isnan(diff) ? std::numeric_limits<double>::infinity() : diff;
  }
  return worst;
}

// Central differences at h and h/2 combined so the h^2 error term cancels.
Tensor extrapolated_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  const Tensor coarse = finite_diff_gradient(f, x, h);
  const Tensor fine = finite_diff_gradient(f, x, h / 2);
  std::vector<double> out(coarse.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (4.0 * fine[i] - coarse[i]) / 3.0;
  return Tensor(x.shape(), std::move(out), Precision::f64);
}

std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

GNNGraph random_small_graph(Rng& rng, std::size_t max_nodes) {
  const std::size_t n = uniform(rng, 1, max_nodes);
  const std::size_t m = uniform(rng, 0, 3 * n);
  std::vector<Index> s(m), t(m);
  for (std::size_t e = 0; e < m; ++e) {
    s[e] = static_cast<Index>(uniform(rng, 0, n - 1));
    t[e] = static_cast<Index>(uniform(rng, 0, n - 1));
  }
  return GNNGraph::from_coo(std::move(s), std::move(t), n);
}

// Move every parameter away from its initializer so biases and BatchNorm
// affine terms are exercised with non-trivial values.
void randomize(const std::vector<Parameter*>& params, Rng& rng) {
  for (Parameter* p : params) {
    Tensor v = normal(p->value.shape(), rng, 0.5);
    if (p->name.ends_with("running_var") || p->name.ends_with("gamma")) {
      std::vector<double> pos = v.to_vector();
      for (auto& x : pos) x = 0.5 + std::abs(x);
      v = Tensor(v.shape(), std::move(pos), Precision::f64);
    }
    p->value = v;
  }
}

struct Instance {
  std::unique_ptr<Layer> layer;
  LayerForward forward;
  Tensor x;
  bool training = false;
};

Instance make_instance(const std::string& kind, std::size_t trial, Rng& rng) {
  constexpr Precision f64 = Precision::f64;
  const std::size_t din = uniform(rng, 1, 8), dout = uniform(rng, 1, 8);
  GNNGraph g = random_small_graph(rng, 12);
  if (kind == "pool" || kind == "chain") {
    std::vector<GNNGraph> parts{g};
    const std::size_t extra = uniform(rng, 0, 2);
    for (std::size_t i = 0; i < extra; ++i) parts.push_back(random_small_graph(rng, 12 / (extra + 1)));
    g = batch(parts);
  }
  Instance inst;
  inst.x = normal({din, g.num_nodes()}, rng);
  auto graph_layer = [&](std::unique_ptr<GraphLayer> l) {
    GraphLayer* raw = l.get();
    inst.forward = [raw, g](ForwardContext& ctx, const Tensor& x) { return raw->forward(ctx, g, x); };
    inst.layer = std::move(l);
  };
  auto plain_layer = [&](std::unique_ptr<PlainLayer> l) {
    PlainLayer* raw = l.get();
    inst.forward = [raw](ForwardContext& ctx, const Tensor& x) { return raw->forward(ctx, x); };
    inst.layer = std::move(l);
  };
  constexpr Aggregation aggrs[] = {Aggregation::sum, Aggregation::mean, Aggregation::max};
  if (kind == "dense") {
    plain_layer(std::make_unique<Dense>(din, dout, Activation::tanh, rng, f64));
  } else if (kind == "graphconv") {
    graph_layer(std::make_unique<GraphConv>(din, dout, Activation::tanh, aggrs[trial % 3], rng, f64));
  } else if (kind == "gcn") {
    graph_layer(std::make_unique<GCNConv>(din, dout, Activation::relu, trial % 4 != 3, rng, f64));
  } else if (kind == "gin") {
    graph_layer(std::make_unique<GINConv>(din, dout, 0.1, true, rng, f64));
  } else if (kind == "gat") {
    GATConv::Options opts;
    opts.heads = 1 + trial % 3;
    opts.concat = trial % 2 == 0;
    opts.act = Activation::tanh;
    const std::size_t out = opts.concat ? opts.heads * uniform(rng, 1, 3) : dout;
    graph_layer(std::make_unique<GATConv>(din, out, opts, rng, f64));
  } else if (kind == "batchnorm" || kind == "batchnorm-train") {
    plain_layer(std::make_unique<BatchNorm>(din, 0.1, 1e-5, f64));
    inst.training = kind == "batchnorm-train";
  } else if (kind == "pool") {
    graph_layer(std::make_unique<GlobalPool>(aggrs[trial % 3]));
  } else if (kind == "chain") {
    // The shape of the default model, shrunk to test sizes.
    const std::size_t h = uniform(rng, 2, 8);
    auto chain = std::make_shared<GnnChain>();
    chain->add(std::make_unique<GCNConv>(din, h, Activation::identity, true, rng, f64))
        .add(std::make_unique<BatchNorm>(h, 0.1, 1e-5, f64))
        .add(std::make_unique<ActivationLayer>(Activation::relu))
        .add(std::make_unique<GCNConv>(h, h, Activation::relu, true, rng, f64))
        .add(std::make_unique<GlobalPool>(Aggregation::mean))
        .add(std::make_unique<Dense>(h, 1, Activation::identity, rng, f64));
    // Wrap the chain so the instance can expose its parameters uniformly.
    struct ChainLayer : GraphLayer {
      std::shared_ptr<GnnChain> chain;
      std::string kind() const override { return "chain"; }
      std::vector<Parameter*> parameters() override { return chain->parameters(); }
      Tensor forward(ForwardContext& ctx, const GNNGraph& graph, const Tensor& x) override {
        return chain->forward(ctx, graph, x);
      }
    };
    auto wrapper = std::make_unique<ChainLayer>();
    wrapper->chain = chain;
    graph_layer(std::move(wrapper));
    inst.training = true;
  } else {
    throw ContractError("gradcheck: unknown layer '" + kind + "'");
  }
  randomize(inst.layer->parameters(), rng);
  return inst;
}

}  // namespace

std::optional<std::vector<ParameterError>> check_gradients(const LayerForward& f, const std::vector<Parameter*>& params,
                                                           const Tensor& x, bool training, Rng& rng, double eps,
                                                           double kink_tol) {
  Tape tape;
  ForwardContext ctx{&tape, training, false};
  const Tensor xt = tape.parameter("input", x);
  const Tensor out = f(ctx, xt);
  if (tape.kink_margin() < kink_tol) return std::nullopt;
  const Tensor proj = normal(out.shape(), rng);
  const GradientMap grads = tape.backward(sum(mul(out, proj.to(out.precision()))));

  ForwardContext plain{nullptr, training, false};
  std::vector<ParameterError> errors;
  const Tensor fd_x =
      extrapolated_gradient([&](const Tensor& xi) { return dot(f(plain, xi).data(), proj.data()); }, x, eps);
  errors.push_back({"input", max_rel(grads.at("input").data(), fd_x.data())});
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    const Tensor saved = p->value;
    auto objective = [&](const Tensor& v) {
      p->value = v;
      const double r = dot(f(plain, x).data(), proj.data());
      p->value = saved;
      return r;
    };
    const Tensor fd = extrapolated_gradient(objective, saved, eps);
    errors.push_back({p->name, max_rel(grads.at(p->name).data(), fd.data())});
  }
  return errors;
}

double LayerGradReport::max_error() const {
  double worst = 0.0;
  for (const auto& e : errors) worst = std::max(worst, e.max_rel_error);
  return worst;
}

const ParameterError* LayerGradReport::worst() const {
  const ParameterError* w = nullptr;
  for (const auto& e : errors)
    if (!w || e.max_rel_error > w->max_rel_error) w = &e;
  return w;
}

const std::vector<std::string>& gradcheck_layers() {
  static const std::vector<std::string> kinds{"dense",     "graphconv",       "gcn",  "gin",  "gat",
                                              "batchnorm", "batchnorm-train", "pool", "chain"};
  return kinds;
}

LayerGradReport run_layer_gradcheck(const std::string& layer, std::size_t instances, Rng& rng) {
  if (std::find(gradcheck_layers().begin(), gradcheck_layers().end(), layer) == gradcheck_layers().end()) {
    throw ContractError("gradcheck: unknown layer '" + layer + "'");
  }
  LayerGradReport report{layer, 0, {}};
  std::size_t attempts = 0;
  while (report.instances < instances) {
    if (++attempts > 50 * instances) {
      throw NumericalError("gradcheck: could not draw kink-free instances for " + layer);
    }
    Instance inst = make_instance(layer, report.instances, rng);
    auto errs = check_gradients(inst.forward, inst.layer->parameters(), inst.x, inst.training, rng);
    if (!errs) continue;
    ++report.instances;
    for (const auto& e : *errs) {
      auto it = std::find_if(report.errors.begin(), report.errors.end(),
                             [&](const ParameterError& r) { return r.name == e.name; });
      if (it == report.errors.end()) {
        report.errors.push_back(e);
      } else {
        it->max_rel_error = std::max(it->max_rel_error, e.max_rel_error);
      }
    }
  }
  return report;
}

}  // namespace gnn
