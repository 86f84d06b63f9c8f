#include "gnn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "gnn/errors.hpp"
#include "gnn/ops.hpp"

namespace gnn {

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr >= 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
    throw ContractError("Adam: invalid hyperparameters");
  }
}

void Adam::step(const std::vector<Parameter*>& params, const GradientMap& grads) {
  for (const Parameter* p : params) {
    if (!p->trainable) continue;
    auto it = grads.find(p->name);
    if (it == grads.end()) throw ContractError("Adam: no gradient for parameter '" + p->name + "'");
    if (it->second.shape() != p->value.shape()) {
      throw ContractError("Adam: gradient for '" + p->name + "' has shape " + shape_string(it->second.shape()) +
                          ", parameter has " + shape_string(p->value.shape()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    auto g = grads.at(p->name).data();
    auto& m = m_[p->name];
    auto& v = v_[p->name];
    m.resize(g.size(), 0.0);
    v.resize(g.size(), 0.0);
    std::vector<double> theta = p->value.to_vector();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      theta[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
    p->value = Tensor(p->value.shape(), std::move(theta), p->value.precision());
  }
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.numel() != target.numel()) {
    throw DimensionError("mse_loss: prediction " + shape_string(pred.shape()) + " and target " +
                         shape_string(target.shape()) + " differ in element count");
  }
  const Shape flat{pred.numel()};
  return mean(square(sub(reshape(pred, flat), reshape(target, flat))));
}

DataLoader::DataLoader(std::vector<GNNGraph> data, DataLoaderConfig config)
    : data_(std::move(data)), config_(config) {
  if (data_.empty()) throw ContractError("DataLoader needs a non-empty dataset");
  if (config_.batch_size == 0) throw ContractError("DataLoader batch size must be at least 1");
}

std::size_t DataLoader::num_batches() const { return (data_.size() + config_.batch_size - 1) / config_.batch_size; }

std::vector<Batch> DataLoader::epoch(std::size_t epoch) const {
  std::vector<std::size_t> order(data_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (config_.shuffle) {
    std::seed_seq seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(config_.seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
    Rng rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
    Batch b;
    const std::size_t stop = std::min(order.size(), start + config_.batch_size);
    b.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(stop));
    for (std::size_t i : b.indices) b.graphs.push_back(data_[i]);
    if (config_.collate) b.collated = batch(b.graphs);
    out.push_back(std::move(b));
  }
  return out;
}

void TrainConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ContractError(std::string(name) + " must be positive");
  };
  positive(num_graphs, "num_graphs");
  positive(nodes, "nodes");
  positive(feature_dim, "feature_dim");
  positive(batch_size, "batch_size");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("learning rate must be a finite non-negative number");
  if (!(noise >= 0.0)) throw ContractError("noise must be non-negative");
}

Rng dataset_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0u};
  return Rng(seq);
}

Rng model_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 1u};
  return Rng(seq);
}

std::vector<GNNGraph> make_synthetic_dataset(const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = cfg.feature_dim, n = cfg.nodes;
  std::vector<double> u(d);
  for (auto& v : u) v = normal(rng);

  std::vector<GNNGraph> out;
  out.reserve(cfg.num_graphs);
  for (std::size_t k = 0; k < cfg.num_graphs; ++k) {
    GNNGraph g = rand_graph(n, cfg.edges, rng);
    std::vector<double> x(d * n);
    for (auto& v : x) v = normal(rng);
    const Tensor xt(Shape{d, n}, std::move(x), Precision::f32);
    double y = 0.0;
    if (cfg.random_targets) {
      y = normal(rng);
    } else {
      // Teacher output on the stored (single precision) features.
      double z = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) row += xt(i, j);
        z += u[i] * row / static_cast<double>(n);
      }
      y = std::tanh(z) + cfg.noise * normal(rng);
    }
    out.push_back(g.with_ndata({{"x", xt}}).with_gdata({{"y", Tensor(Shape{1}, {y}, Precision::f32)}}));
  }
  return out;
}

std::vector<EpochMetrics> fit(GnnChain& model, const std::vector<GNNGraph>& data, const FitOptions& options,
                              const std::function<void(const EpochMetrics&)>& on_epoch) {
  Adam adam(options.lr);
  DataLoader loader(data, {options.batch_size, options.shuffle, true, options.seed});
  const auto params = model.parameters();
  std::vector<EpochMetrics> history;
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double total = 0.0;
    std::size_t batch_index = 0;
    for (const Batch& b : loader.epoch(epoch)) {
      ++batch_index;
      const GNNGraph& g = *b.collated;
      Tape tape;
      ForwardContext ctx{&tape, true, true};
      const Tensor pred = model.forward(ctx, g, g.node_feature(options.node_feature));
      const Tensor loss = mse_loss(pred, g.graph_feature(options.target));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index));
      }
      adam.step(params, tape.backward(loss));
      total += value * static_cast<double>(b.graphs.size());
    }
    const auto stop = std::chrono::steady_clock::now();
    EpochMetrics m{epoch, total / static_cast<double>(data.size()),
                   std::chrono::duration<double, std::milli>(stop - start).count()};
    history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return history;
}

}  // namespace gnn
