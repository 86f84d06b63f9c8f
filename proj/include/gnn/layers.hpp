#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "gnn/graph.hpp"
#include "gnn/message_passing.hpp"
#include "gnn/tape.hpp"
#include "gnn/tensor.hpp"

namespace gnn {

enum class Activation { identity, relu, tanh };

Tensor activate(Activation a, const Tensor& x);
std::string to_string(Activation a);
std::optional<Activation> parse_activation(std::string_view name);

// A named tensor owned by a layer. Non-trainable parameters (BatchNorm running
// statistics) are saved in checkpoints but never receive gradients.
struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

struct ForwardContext {
  Tape* tape = nullptr;  // when set, trainable parameters are recorded on it
  bool training = false;  // BatchNorm uses batch statistics
  bool update_running_stats = true;  // BatchNorm updates running statistics in training

  // The tensor a layer should compute with for `p`.
  Tensor bind(const Parameter& p) const;
};

// Uniform on (-a, a) with a = sqrt(6 / (din + dout)).
Tensor glorot_uniform(std::size_t dout, std::size_t din, Rng& rng, Precision precision = Precision::f32);

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  // Required input feature dimension; nullopt for layers that accept any.
  virtual std::optional<std::size_t> in_dim() const { return std::nullopt; }
  virtual std::size_t out_dim(std::size_t in) const { return in; }
  virtual std::vector<Parameter*> parameters() { return {}; }
};

// Consumes (g, x).
class GraphLayer : public Layer {
 public:
  virtual Tensor forward(ForwardContext& ctx, const GNNGraph& g, const Tensor& x) = 0;
};

// Consumes x only.
class PlainLayer : public Layer {
 public:
  virtual Tensor forward(ForwardContext& ctx, const Tensor& x) = 0;
};

// sigma(W x + b)
class Dense : public PlainLayer {
 public:
  Dense(std::size_t din, std::size_t dout, Activation act, Rng& rng, Precision precision = Precision::f32);
  std::string kind() const override { return "dense"; }
  std::optional<std::size_t> in_dim() const override { return din_; }
  std::size_t out_dim(std::size_t) const override { return dout_; }
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  Tensor forward(ForwardContext& ctx, const Tensor& x) override;

 private:
  std::size_t din_, dout_;
  Activation act_;
  Parameter weight_, bias_;
};

// sigma(W1 x + W2 m + b) with m = propagate(copy_xj, g, aggr, xj = x)
class GraphConv : public GraphLayer {
 public:
  GraphConv(std::size_t din, std::size_t dout, Activation act, Aggregation aggr, Rng& rng,
            Precision precision = Precision::f32);
  std::string kind() const override { return "graphconv"; }
  std::optional<std::size_t> in_dim() const override { return din_; }
  std::size_t out_dim(std::size_t) const override { return dout_; }
  std::vector<Parameter*> parameters() override { return {&weight1_, &weight2_, &bias_}; }
  Tensor forward(ForwardContext& ctx, const GNNGraph& g, const Tensor& x) override;

 private:
  std::size_t din_, dout_;
  Activation act_;
  Aggregation aggr_;
  Parameter weight1_, weight2_, bias_;
};

// Symmetric-normalized convolution sigma(W (D^-1/2 A D^-1/2) x + b), with
// self-loops added first unless disabled.
class GCNConv : public GraphLayer {
 public:
  GCNConv(std::size_t din, std::size_t dout, Activation act, bool self_loops, Rng& rng,
          Precision precision = Precision::f32);
  std::string kind() const override { return "gcn"; }
  std::optional<std::size_t> in_dim() const override { return din_; }
  std::size_t out_dim(std::size_t) const override { return dout_; }
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  Tensor forward(ForwardContext& ctx, const GNNGraph& g, const Tensor& x) override;

 private:
  std::size_t din_, dout_;
  Activation act_;
  bool self_loops_;
  Parameter weight_, bias_;
};

// MLP((1 + eps) x + sum of neighbor features); the MLP is Dense-relu-Dense.
class GINConv : public GraphLayer {
 public:
  GINConv(std::size_t din, std::size_t dout, double eps, bool train_eps, Rng& rng,
          Precision precision = Precision::f32);
  std::string kind() const override { return "gin"; }
  std::optional<std::size_t> in_dim() const override { return din_; }
  std::size_t out_dim(std::size_t) const override { return dout_; }
  std::vector<Parameter*> parameters() override;
  Tensor forward(ForwardContext& ctx, const GNNGraph& g, const Tensor& x) override;

 private:
  std::size_t din_, dout_;
  Parameter epsilon_;
  Dense hidden_, output_;
};

// Graph attention with one linear map per head and additive attention
// leaky_relu(att_dst . z_target + att_src . z_source).
class GATConv : public GraphLayer {
 public:
  struct Options {
    std::size_t heads = 1;
    bool concat = true;
    double negative_slope = 0.2;
    bool self_loops = true;
    Activation act = Activation::identity;
  };

  GATConv(std::size_t din, std::size_t dout, Options opts, Rng& rng, Precision precision = Precision::f32);
  std::string kind() const override { return "gat"; }
  std::optional<std::size_t> in_dim() const override { return din_; }
  std::size_t out_dim(std::size_t) const override { return dout_; }
  std::vector<Parameter*> parameters() override { return {&weight_, &att_src_, &att_dst_, &bias_}; }
  Tensor forward(ForwardContext& ctx, const GNNGraph& g, const Tensor& x) override;

  // Attention coefficients [heads x E] of the last forward pass, over the
  // edges of the (self-looped) graph it ran on.
  const Tensor& last_attention() const { return last_attention_; }

 private:
  std::size_t din_, dout_, head_dim_;
  Options opts_;
  Parameter weight_, att_src_, att_dst_, bias_;
  Tensor last_attention_;
};

// Per-feature normalization over the node axis.
class BatchNorm : public PlainLayer {
 public:
  explicit BatchNorm(std::size_t dim, double momentum = 0.1, double eps = 1e-5,
                     Precision precision = Precision::f32);
  std::string kind() const override { return "batchnorm"; }
  std::optional<std::size_t> in_dim() const override { return dim_; }
  std::size_t out_dim(std::size_t) const override { return dim_; }
  std::vector<Parameter*> parameters() override { return {&gamma_, &beta_, &running_mean_, &running_var_}; }
  Tensor forward(ForwardContext& ctx, const Tensor& x) override;

 private:
  std::size_t dim_;
  double momentum_, eps_;
  Parameter gamma_, beta_, running_mean_, running_var_;
};

// Reduce node columns to one column per member graph: [d x num_graphs].
Tensor global_pool(const GNNGraph& g, const Tensor& x, Aggregation mode);

class GlobalPool : public GraphLayer {
 public:
  explicit GlobalPool(Aggregation mode) : mode_(mode) {}
  std::string kind() const override { return "pool"; }
  Tensor forward(ForwardContext&, const GNNGraph& g, const Tensor& x) override { return global_pool(g, x, mode_); }

 private:
  Aggregation mode_;
};

class ActivationLayer : public PlainLayer {
 public:
  explicit ActivationLayer(Activation act) : act_(act) {}
  std::string kind() const override { return to_string(act_); }
  Tensor forward(ForwardContext&, const Tensor& x) override { return activate(act_, x); }

 private:
  Activation act_;
};

// Ordered layers applied left to right. Graph layers receive (g, x), plain
// layers receive x. Adding a layer whose input dimension does not match the
// running output dimension throws ContractError.
class GnnChain {
 public:
  using Entry = std::variant<std::unique_ptr<GraphLayer>, std::unique_ptr<PlainLayer>>;

  GnnChain& add(std::unique_ptr<GraphLayer> layer);
  GnnChain& add(std::unique_ptr<PlainLayer> layer);

  Tensor forward(ForwardContext& ctx, const GNNGraph& g, const Tensor& x);

  std::size_t size() const { return layers_.size(); }
  const Entry& at(std::size_t i) const { return layers_.at(i); }
  std::optional<std::size_t> in_dim() const { return in_dim_; }
  std::optional<std::size_t> out_dim() const { return out_dim_; }

  // Parameters are named "<layer index>.<local name>".
  std::vector<Parameter*> parameters();
  Parameter& parameter(const std::string& name);
  std::map<std::string, Tensor> state() const;
  // Replace parameter values; names and shapes must match exactly.
  void load_state(const std::map<std::string, Tensor>& state);

 private:
  void admit(Layer& layer);

  std::vector<Entry> layers_;
  std::optional<std::size_t> in_dim_, out_dim_;
};

// Build a chain from a comma-separated spec such as
// "gcn:16-64, batchnorm:64, relu, gcn:64-64:relu, pool:mean, dense:64-1".
GnnChain build_chain(std::string_view spec, Rng& rng, Precision precision = Precision::f32);

inline constexpr std::string_view kDefaultModelSpec =
    "gcn:16-64, batchnorm:64, relu, gcn:64-64:relu, pool:mean, dense:64-1";

}  // namespace gnn
