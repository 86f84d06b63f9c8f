#include "gnn/layers.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <random>
#include <sstream>

#include "gnn/errors.hpp"
#include "gnn/ops.hpp"

namespace gnn {

namespace {

void check_features(const char* layer, const Tensor& x, std::size_t din, std::optional<std::size_t> n = std::nullopt) {
  if (x.rank() != 2 || x.rows() != din || (n && x.cols() != *n)) {
    std::string want = "[" + std::to_string(din) + " x " + (n ? std::to_string(*n) : std::string("n")) + "]";
    throw DimensionError(std::string(layer) + ": input of shape " + shape_string(x.shape()) + ", expected " + want);
  }
}

// Per-edge GCN coefficients w_e / sqrt(deg(t) deg(s)) over in-degrees; 0 when
// either endpoint has degree 0.
std::vector<double> gcn_coefficients(const GNNGraph& g) {
  const std::size_t n = g.num_nodes(), ne = g.num_edges();
  auto src = g.sources();
  auto dst = g.targets();
  std::vector<double> w(ne, 1.0);
  if (g.has_edge_weight()) w.assign(g.edge_weight().begin(), g.edge_weight().end());
  std::vector<double> deg(n, 0.0);
  for (std::size_t e = 0; e < ne; ++e) deg[static_cast<std::size_t>(dst[e])] += w[e];
  std::vector<double> c(ne, 0.0);
  for (std::size_t e = 0; e < ne; ++e) {
    const double prod = deg[static_cast<std::size_t>(dst[e])] * deg[static_cast<std::size_t>(src[e])];
    if (prod > 0.0) c[e] = w[e] / std::sqrt(prod);
  }
  return c;
}

GNNGraph with_self_loops(const GNNGraph& g) { return add_self_loops(g.edata().empty() ? g : g.with_edata({})); }

}  // namespace

Tensor activate(Activation a, const Tensor& x) {
  switch (a) {
    case Activation::identity:
      return x;
    case Activation::relu:
      return relu(x);
    case Activation::tanh:
      return tanh(x);
  }
  throw ContractError("unknown activation");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity:
      return "identity";
    case Activation::relu:
      return "relu";
    case Activation::tanh:
      return "tanh";
  }
  return "?";
}

std::optional<Activation> parse_activation(std::string_view name) {
  if (name == "identity" || name == "id") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  return std::nullopt;
}

Tensor ForwardContext::bind(const Parameter& p) const {
  if (tape && p.trainable) return tape->parameter(p.name, p.value);
  return p.value;
}

Tensor glorot_uniform(std::size_t dout, std::size_t din, Rng& rng, Precision precision) {
  if (dout == 0 || din == 0) throw ContractError("glorot_uniform needs positive dimensions");
  const double a = std::sqrt(6.0 / static_cast<double>(din + dout));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<double> v(dout * din);
  for (auto& x : v) {
    // Rounding to single precision can land on the bound itself; redraw.
    do {
      x = round_to(precision, dist(rng));
    } while (std::abs(x) >= a);
  }
  return Tensor(Shape{dout, din}, std::move(v), precision);
}

Dense::Dense(std::size_t din, std::size_t dout, Activation act, Rng& rng, Precision precision)
    : din_(din),
      dout_(dout),
      act_(act),
      weight_{"weight", glorot_uniform(dout, din, rng, precision)},
      bias_{"bias", Tensor::zeros({dout}, precision)} {}

Tensor Dense::forward(ForwardContext& ctx, const Tensor& x) {
  check_features("dense", x, din_);
  return activate(act_, add_bias(matmul(ctx.bind(weight_), x), ctx.bind(bias_)));
}

GraphConv::GraphConv(std::size_t din, std::size_t dout, Activation act, Aggregation aggr, Rng& rng,
                     Precision precision)
    : din_(din),
      dout_(dout),
      act_(act),
      aggr_(aggr),
      weight1_{"weight1", glorot_uniform(dout, din, rng, precision)},
      weight2_{"weight2", glorot_uniform(dout, din, rng, precision)},
      bias_{"bias", Tensor::zeros({dout}, precision)} {}

Tensor GraphConv::forward(ForwardContext& ctx, const GNNGraph& g, const Tensor& x) {
  check_features("graphconv", x, din_, g.num_nodes());
  const Tensor m = propagate(MessageFunction::copy_xj(), g, aggr_, {.xj = x});
  const Tensor h = add(matmul(ctx.bind(weight1_), x), matmul(ctx.bind(weight2_), m));
  return activate(act_, add_bias(h, ctx.bind(bias_)));
}

GCNConv::GCNConv(std::size_t din, std::size_t dout, Activation act, bool self_loops, Rng& rng, Precision precision)
    : din_(din),
      dout_(dout),
      act_(act),
      self_loops_(self_loops),
      weight_{"weight", glorot_uniform(dout, din, rng, precision)},
      bias_{"bias", Tensor::zeros({dout}, precision)} {}

Tensor GCNConv::forward(ForwardContext& ctx, const GNNGraph& g, const Tensor& x) {
  check_features("gcn", x, din_, g.num_nodes());
  const GNNGraph gl = self_loops_ ? with_self_loops(g) : g;
  const Tensor c(Shape{gl.num_edges()}, gcn_coefficients(gl), x.precision());
  const Tensor h = spmm_csr(gl, x, c);
  return activate(act_, add_bias(matmul(ctx.bind(weight_), h), ctx.bind(bias_)));
}

GINConv::GINConv(std::size_t din, std::size_t dout, double eps, bool train_eps, Rng& rng, Precision precision)
    : din_(din),
      dout_(dout),
      epsilon_{"epsilon", Tensor::scalar(eps, precision), train_eps},
      hidden_(din, dout, Activation::relu, rng, precision),
      output_(dout, dout, Activation::identity, rng, precision) {
  for (Parameter* p : hidden_.parameters()) p->name = "mlp.0." + p->name;
  for (Parameter* p : output_.parameters()) p->name = "mlp.1." + p->name;
}

std::vector<Parameter*> GINConv::parameters() {
  std::vector<Parameter*> out{&epsilon_};
  for (Parameter* p : hidden_.parameters()) out.push_back(p);
  for (Parameter* p : output_.parameters()) out.push_back(p);
  return out;
}

Tensor GINConv::forward(ForwardContext& ctx, const GNNGraph& g, const Tensor& x) {
  check_features("gin", x, din_, g.num_nodes());
  const Tensor self = mul_scalar(x, add_scalar(ctx.bind(epsilon_), 1.0));
  const Tensor h = add(self, propagate(MessageFunction::copy_xj(), g, Aggregation::sum, {.xj = x}));
  return output_.forward(ctx, hidden_.forward(ctx, h));
}

GATConv::GATConv(std::size_t din, std::size_t dout, Options opts, Rng& rng, Precision precision)
    : din_(din), dout_(dout), opts_(opts) {
  if (opts.heads == 0) throw ContractError("gat: heads must be positive");
  if (opts.concat && dout % opts.heads != 0) {
    throw ContractError("gat: output dimension " + std::to_string(dout) + " is not divisible by " +
                        std::to_string(opts.heads) + " heads");
  }
  head_dim_ = opts.concat ? dout / opts.heads : dout;
  const std::size_t h = opts.heads;
  weight_ = {"weight", glorot_uniform(h * head_dim_, din, rng, precision)};
  att_src_ = {"att_src", glorot_uniform(h, head_dim_, rng, precision)};
  att_dst_ = {"att_dst", glorot_uniform(h, head_dim_, rng, precision)};
  bias_ = {"bias", Tensor::zeros({dout}, precision)};
}

Tensor GATConv::forward(ForwardContext& ctx, const GNNGraph& g, const Tensor& x) {
  check_features("gat", x, din_, g.num_nodes());
  const GNNGraph gl = opts_.self_loops ? with_self_loops(g) : g;
  const std::size_t h = opts_.heads, n = gl.num_nodes();
  const Tensor z = matmul(ctx.bind(weight_), x);
  const Tensor s_src = headwise_dot(z, ctx.bind(att_src_));
  const Tensor s_dst = headwise_dot(z, ctx.bind(att_dst_));
  const Tensor logits =
      leaky_relu(add(gather_columns(s_dst, gl.targets()), gather_columns(s_src, gl.sources())), opts_.negative_slope);
  const Tensor alpha = edge_softmax(gl, logits);
  last_attention_ = alpha.detach();
  Tensor out = scatter_add(headwise_scale(gather_columns(z, gl.sources()), alpha), gl.targets(), n);
  if (!opts_.concat && h > 1) {
    // Average heads with a constant [dh x h*dh] matrix.
    std::vector<double> avg(head_dim_ * h * head_dim_, 0.0);
    for (std::size_t i = 0; i < head_dim_; ++i)
      for (std::size_t k = 0; k < h; ++k) avg[i * h * head_dim_ + k * head_dim_ + i] = 1.0 / static_cast<double>(h);
    out = matmul(Tensor(Shape{head_dim_, h * head_dim_}, std::move(avg), x.precision()), out);
  }
  return activate(opts_.act, add_bias(out, ctx.bind(bias_)));
}

BatchNorm::BatchNorm(std::size_t dim, double momentum, double eps, Precision precision)
    : dim_(dim),
      momentum_(momentum),
      eps_(eps),
      gamma_{"gamma", Tensor::full({dim}, 1.0, precision)},
      beta_{"beta", Tensor::zeros({dim}, precision)},
      running_mean_{"running_mean", Tensor::zeros({dim}, precision), false},
      running_var_{"running_var", Tensor::full({dim}, 1.0, precision), false} {}

Tensor BatchNorm::forward(ForwardContext& ctx, const Tensor& x) {
  check_features("batchnorm", x, dim_);
  const std::size_t n = x.cols();
  if (n == 0) throw ContractError("batchnorm on zero nodes");
  const Tensor gamma = ctx.bind(gamma_);
  const Tensor beta = ctx.bind(beta_);
  if (!ctx.training) {
    const Tensor inv = rsqrt(add_scalar(running_var_.value, eps_));
    const Tensor centered = add_bias(x, scale(running_mean_.value, -1.0));
    return add_bias(mul_rows(centered, mul(gamma, inv)), beta);
  }
  const Tensor mu = reduce(x, ReduceKind::mean, 1);
  const Tensor centered = add_bias(x, scale(mu, -1.0));
  const Tensor var = reduce(square(centered), ReduceKind::mean, 1);
  const Tensor y = add_bias(mul_rows(centered, mul(gamma, rsqrt(add_scalar(var, eps_)))), beta);
  if (ctx.update_running_stats) {
    // Running variance uses the unbiased estimate.
    const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
    std::vector<double> rm(dim_), rv(dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
      rm[i] = (1.0 - momentum_) * running_mean_.value[i] + momentum_ * mu[i];
      rv[i] = (1.0 - momentum_) * running_var_.value[i] + momentum_ * var[i] * unbias;
    }
    running_mean_.value = Tensor(Shape{dim_}, std::move(rm), x.precision());
    running_var_.value = Tensor(Shape{dim_}, std::move(rv), x.precision());
  }
  return y;
}

Tensor global_pool(const GNNGraph& g, const Tensor& x, Aggregation mode) {
  if (x.rank() != 2 || x.cols() != g.num_nodes()) {
    throw DimensionError("global_pool: input of shape " + shape_string(x.shape()) + " does not have " +
                         std::to_string(g.num_nodes()) + " node columns");
  }
  const auto ind = g.graph_indicator();
  const std::size_t ng = g.num_graphs();
  switch (mode) {
    case Aggregation::sum:
      return scatter_add(x, ind, ng);
    case Aggregation::mean: {
      std::vector<double> inv(ng, 0.0);
      for (Index k : ind) inv[static_cast<std::size_t>(k)] += 1.0;
      for (auto& v : inv) v = 1.0 / std::max(v, 1.0);
      return scale_columns(scatter_add(x, ind, ng), inv);
    }
    case Aggregation::max:
      return segment_max(x, ind, ng);
  }
  throw ContractError("unknown pooling mode");
}

void GnnChain::admit(Layer& layer) {
  if (auto need = layer.in_dim(); need && out_dim_ && *need != *out_dim_) {
    throw ContractError("layer " + std::to_string(layers_.size()) + " (" + layer.kind() + ") expects input dimension " +
                        std::to_string(*need) + " but the previous layer produces " + std::to_string(*out_dim_));
  }
  if (layers_.empty()) in_dim_ = layer.in_dim();
  if (out_dim_) {
    out_dim_ = layer.out_dim(*out_dim_);
  } else if (auto need = layer.in_dim()) {
    out_dim_ = layer.out_dim(*need);
  }
  const std::string prefix = std::to_string(layers_.size()) + ".";
  for (Parameter* p : layer.parameters()) p->name = prefix + p->name;
}

GnnChain& GnnChain::add(std::unique_ptr<GraphLayer> layer) {
  if (!layer) throw ContractError("cannot add a null layer");
  admit(*layer);
  layers_.emplace_back(std::move(layer));
  return *this;
}

GnnChain& GnnChain::add(std::unique_ptr<PlainLayer> layer) {
  if (!layer) throw ContractError("cannot add a null layer");
  admit(*layer);
  layers_.emplace_back(std::move(layer));
  return *this;
}

Tensor GnnChain::forward(ForwardContext& ctx, const GNNGraph& g, const Tensor& x) {
  Tensor h = x;
  for (auto& entry : layers_) {
    if (auto* gl = std::get_if<std::unique_ptr<GraphLayer>>(&entry)) {
      h = (*gl)->forward(ctx, g, h);
    } else {
      h = std::get<std::unique_ptr<PlainLayer>>(entry)->forward(ctx, h);
    }
  }
  return h;
}

std::vector<Parameter*> GnnChain::parameters() {
  std::vector<Parameter*> out;
  for (auto& entry : layers_) {
    auto params = std::visit([](auto& l) { return l->parameters(); }, entry);
    out.insert(out.end(), params.begin(), params.end());
  }
  return out;
}

Parameter& GnnChain::parameter(const std::string& name) {
  for (Parameter* p : parameters())
    if (p->name == name) return *p;
  throw ContractError("model has no parameter '" + name + "'");
}

std::map<std::string, Tensor> GnnChain::state() const {
  std::map<std::string, Tensor> out;
  for (Parameter* p : const_cast<GnnChain*>(this)->parameters()) out.emplace(p->name, p->value);
  return out;
}

void GnnChain::load_state(const std::map<std::string, Tensor>& state) {
  auto params = parameters();
  if (state.size() != params.size()) {
    throw ValidationError("state has " + std::to_string(state.size()) + " parameters, model has " +
                          std::to_string(params.size()));
  }
  // Validate everything before touching the model.
  for (Parameter* p : params) {
    auto it = state.find(p->name);
    if (it == state.end()) throw ValidationError("state is missing parameter '" + p->name + "'");
    if (it->second.shape() != p->value.shape()) {
      throw ValidationError("parameter '" + p->name + "' has shape " + shape_string(it->second.shape()) +
                            ", model expects " + shape_string(p->value.shape()));
    }
  }
  for (Parameter* p : params) p->value = state.at(p->name).to(p->value.precision());
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

struct LayerToken {
  std::string text;
  std::string_view kind;
  std::vector<std::string_view> fields;

  [[noreturn]] void fail(const std::string& why) const {
    throw ContractError("model spec '" + text + "': " + why);
  }

  std::size_t parse_count(std::string_view s) const {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || v == 0) fail("'" + std::string(s) + "' is not a positive count");
    return v;
  }

  double parse_real(std::string_view s) const {
    try {
      std::size_t used = 0;
      const std::string str(s);
      const double v = std::stod(str, &used);
      if (used != str.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      fail("'" + std::string(s) + "' is not a number");
    }
  }

  std::pair<std::size_t, std::size_t> dims() const {
    if (fields.empty()) fail("missing din-dout");
    auto parts = split(fields[0], '-');
    if (parts.size() != 2) fail("expected din-dout, got '" + std::string(fields[0]) + "'");
    return {parse_count(parts[0]), parse_count(parts[1])};
  }

  std::size_t single_dim() const {
    if (fields.empty()) fail("missing dimension");
    return parse_count(fields[0]);
  }
};

Aggregation parse_aggregation(const LayerToken& tok, std::string_view s) {
  if (s == "sum" || s == "add" || s == "+") return Aggregation::sum;
  if (s == "mean") return Aggregation::mean;
  if (s == "max") return Aggregation::max;
  tok.fail("unknown aggregation '" + std::string(s) + "'");
}

bool parse_flag(const LayerToken& tok, std::string_view s) {
  if (s == "1" || s == "true" || s == "on") return true;
  if (s == "0" || s == "false" || s == "off") return false;
  tok.fail("'" + std::string(s) + "' is not a boolean");
}

}  // namespace

GnnChain build_chain(std::string_view spec, Rng& rng, Precision precision) {
  GnnChain chain;
  for (std::string_view raw : split(spec, ',')) {
    if (raw.empty()) throw ContractError("model spec has an empty layer entry");
    LayerToken tok{std::string(raw), {}, {}};
    auto parts = split(raw, ':');
    tok.kind = parts[0];
    tok.fields.assign(parts.begin() + 1, parts.end());

    // Options after the dimension field: an activation name, a bare flag, or key=value.
    Activation act = Activation::identity;
    Aggregation aggr = Aggregation::sum;
    bool self_loops = true, train_eps = false;
    double eps_value = 0.0, momentum = 0.1, bn_eps = 1e-5;
    GATConv::Options gat;
    auto options = [&](std::size_t first) {
      for (std::size_t i = first; i < tok.fields.size(); ++i) {
        std::string_view f = tok.fields[i];
        const std::size_t eq = f.find('=');
        if (eq == std::string_view::npos) {
          if (auto a = parse_activation(f)) {
            act = *a;
          } else if (f == "noloops") {
            self_loops = false;
          } else if (f == "train_eps") {
            train_eps = true;
          } else {
            tok.fail("unknown option '" + std::string(f) + "'");
          }
          continue;
        }
        const std::string_view key = f.substr(0, eq), value = f.substr(eq + 1);
        if (key == "aggr") {
          aggr = parse_aggregation(tok, value);
        } else if (key == "heads") {
          gat.heads = tok.parse_count(value);
        } else if (key == "concat") {
          gat.concat = parse_flag(tok, value);
        } else if (key == "slope") {
          gat.negative_slope = tok.parse_real(value);
        } else if (key == "eps") {
          eps_value = bn_eps = tok.parse_real(value);
        } else if (key == "momentum") {
          momentum = tok.parse_real(value);
        } else if (key == "act") {
          auto a = parse_activation(value);
          if (!a) tok.fail("unknown activation '" + std::string(value) + "'");
          act = *a;
        } else {
          tok.fail("unknown option '" + std::string(key) + "'");
        }
      }
    };

    if (auto a = parse_activation(tok.kind)) {
      if (!tok.fields.empty()) tok.fail("activation layers take no options");
      chain.add(std::make_unique<ActivationLayer>(*a));
    } else if (tok.kind == "gcn") {
      auto [din, dout] = tok.dims();
      options(1);
      chain.add(std::make_unique<GCNConv>(din, dout, act, self_loops, rng, precision));
    } else if (tok.kind == "graphconv") {
      auto [din, dout] = tok.dims();
      options(1);
      chain.add(std::make_unique<GraphConv>(din, dout, act, aggr, rng, precision));
    } else if (tok.kind == "gin") {
      auto [din, dout] = tok.dims();
      options(1);
      chain.add(std::make_unique<GINConv>(din, dout, eps_value, train_eps, rng, precision));
    } else if (tok.kind == "gat") {
      auto [din, dout] = tok.dims();
      options(1);
      gat.act = act;
      gat.self_loops = self_loops;
      chain.add(std::make_unique<GATConv>(din, dout, gat, rng, precision));
    } else if (tok.kind == "dense") {
      auto [din, dout] = tok.dims();
      options(1);
      chain.add(std::make_unique<Dense>(din, dout, act, rng, precision));
    } else if (tok.kind == "batchnorm") {
      const std::size_t d = tok.single_dim();
      options(1);
      chain.add(std::make_unique<BatchNorm>(d, momentum, bn_eps, precision));
    } else if (tok.kind == "pool") {
      if (tok.fields.size() != 1) tok.fail("expected pool:mean, pool:sum or pool:max");
      chain.add(std::make_unique<GlobalPool>(parse_aggregation(tok, tok.fields[0])));
    } else {
      tok.fail("unknown layer kind '" + std::string(tok.kind) + "'");
    }
  }
  if (chain.size() == 0) throw ContractError("model spec is empty");
  return chain;
}

}  // namespace gnn
