#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gnn/graph.hpp"
#include "gnn/layers.hpp"
#include "gnn/tape.hpp"

namespace gnn {

// Adam with bias correction:
//   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2
//   theta -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Update every trainable parameter in place. Every trainable parameter needs
  // an entry in `grads`, otherwise ContractError is thrown and nothing changes.
  void step(const std::vector<Parameter*>& params, const GradientMap& grads);

  std::size_t steps() const { return t_; }
  double lr() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

// Mean of squared differences over all elements, after flattening both sides.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

struct Batch {
  std::vector<std::size_t> indices;  // positions in the dataset
  std::vector<GNNGraph> graphs;
  std::optional<GNNGraph> collated;  // batch(graphs) when collating
};

struct DataLoaderConfig {
  std::size_t batch_size = 32;
  bool shuffle = true;
  bool collate = true;
  std::uint64_t seed = 0;
};

// Splits a dataset into consecutive chunks of batch_size (the last one may be
// shorter). With shuffling, epoch k uses an order drawn from (seed, k), so
// every epoch is reproducible on its own.
class DataLoader {
 public:
  DataLoader(std::vector<GNNGraph> data, DataLoaderConfig config);

  std::vector<Batch> epoch(std::size_t epoch) const;
  std::size_t num_batches() const;
  std::size_t size() const { return data_.size(); }

 private:
  std::vector<GNNGraph> data_;
  DataLoaderConfig config_;
};

struct TrainConfig {
  std::size_t num_graphs = 128;
  std::size_t nodes = 10;
  std::size_t edges = 30;
  std::size_t feature_dim = 16;
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  double lr = 1e-4;
  std::uint64_t seed = 1;
  std::string model = std::string(kDefaultModelSpec);
  // Targets independent of the features, y ~ N(0, 1), instead of the teacher.
  bool random_targets = false;
  double noise = 0.01;

  // Throws ContractError on zero counts or a non-positive learning rate.
  void validate() const;
};

// Graphs rand_graph(nodes, edges) with node features "x" ~ N(0, 1)
// [feature_dim x nodes] and a graph target "y" of shape [1]. Teacher mode sets
// y = tanh(u . mean_nodes(x)) + noise * N(0, 1) for one u ~ N(0, I) drawn per
// dataset.
std::vector<GNNGraph> make_synthetic_dataset(const TrainConfig& cfg, Rng& rng);

// Seeds derived from TrainConfig::seed for each consumer of randomness.
Rng dataset_rng(std::uint64_t seed);
Rng model_rng(std::uint64_t seed);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;  // mean squared error over every graph of the epoch
  double wall_ms = 0.0;
};

struct FitOptions {
  std::size_t epochs = 100;
  double lr = 1e-4;
  std::size_t batch_size = 32;
  bool shuffle = true;
  std::uint64_t seed = 1;
  std::string node_feature = "x";
  std::string target = "y";
};

// Train `model` with Adam on the MSE between model(g, g.x) and g.y. Throws
// NumericalError naming the epoch and batch when a loss is not finite.
std::vector<EpochMetrics> fit(GnnChain& model, const std::vector<GNNGraph>& data, const FitOptions& options,
                              const std::function<void(const EpochMetrics&)>& on_epoch = {});

}  // namespace gnn
