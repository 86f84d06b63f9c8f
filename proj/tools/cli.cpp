#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <thread>

#include "gnn/errors.hpp"
#include "gnn/gradcheck.hpp"
#include "gnn/io.hpp"
#include "gnn/layers.hpp"
#include "gnn/message_passing.hpp"
#include "gnn/training.hpp"

namespace gnn::cli {

namespace {

// A flag value that parsed but makes no sense; reported like a parse error.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr double kGradTolerance = 1e-5;
constexpr double kBenchTolerance = 1e-6;

void add_dataset_flags(CLI::App& cmd, TrainConfig& cfg) {
  cmd.add_option("--num-graphs", cfg.num_graphs, "Number of graphs in the synthetic dataset")->capture_default_str();
  cmd.add_option("--nodes", cfg.nodes, "Nodes per graph")->capture_default_str();
  cmd.add_option("--edges", cfg.edges, "Directed edges per graph")->capture_default_str();
  cmd.add_option("--feature-dim", cfg.feature_dim, "Node feature dimension")->capture_default_str();
  cmd.add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
  cmd.add_flag("--paper-random-y", cfg.random_targets, "Targets y ~ N(0, 1) independent of the features");
}

std::vector<GNNGraph> dataset_for(const TrainConfig& cfg) {
  try {
    cfg.validate();
    if (cfg.edges > cfg.nodes * (cfg.nodes - 1)) {
      throw ContractError("--edges " + std::to_string(cfg.edges) + " exceeds the " +
                          std::to_string(cfg.nodes * (cfg.nodes - 1)) + " possible edges on " +
                          std::to_string(cfg.nodes) + " nodes");
    }
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  Rng rng = dataset_rng(cfg.seed);
  return make_synthetic_dataset(cfg, rng);
}

GnnChain model_for(const TrainConfig& cfg) {
  Rng rng = model_rng(cfg.seed);
  GnnChain model;
  try {
    model = build_chain(cfg.model, rng);
  } catch (const ContractError& e) {
    throw UsageError(std::string("--model: ") + e.what());
  }
  if (model.in_dim() && *model.in_dim() != cfg.feature_dim) {
    throw UsageError("--model expects " + std::to_string(*model.in_dim()) + " input features but --feature-dim is " +
                     std::to_string(cfg.feature_dim));
  }
  if (model.out_dim() && *model.out_dim() != 1) {
    throw UsageError("--model must produce one output per graph, it produces " + std::to_string(*model.out_dim()));
  }
  return model;
}

std::string format_real(double v, int digits = 17) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

std::string format_fixed(double v, int decimals) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << v;
  return os.str();
}

// Writes to --out when given, else to the command's standard output.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw ResourceError("cannot open '" + path + "' for writing");
      stream_ = &file_;
    }
  }
  std::ostream& operator*() { return *stream_; }

 private:
  std::ofstream file_;
  std::ostream* stream_;
};

int cmd_train(const TrainConfig& cfg, const std::string& out_path, const std::string& checkpoint, std::ostream& out) {
  GnnChain model = model_for(cfg);
  const auto data = dataset_for(cfg);
  Sink sink(out_path, out);
  *sink << "epoch,mean_loss,wall_ms\n";
  FitOptions fit_options;
  fit_options.epochs = cfg.epochs;
  fit_options.lr = cfg.lr;
  fit_options.batch_size = cfg.batch_size;
  fit_options.seed = cfg.seed;
  const auto history = fit(model, data, fit_options, [&](const EpochMetrics& m) {
    *sink << m.epoch << ',' << format_real(m.mean_loss) << ',' << format_fixed(m.wall_ms, 3) << '\n';
  });
  (*sink).flush();
  if (!history.empty() && !std::isfinite(history.back().mean_loss)) {
    throw NumericalError("final loss is not finite");
  }
  if (!checkpoint.empty()) save_checkpoint(checkpoint, model.state());
  return kExitOk;
}

int cmd_eval(const TrainConfig& cfg, const std::string& data_path, const std::string& checkpoint, std::ostream& out) {
  GnnChain model = model_for(cfg);
  model.load_state(load_checkpoint(checkpoint));
  const auto data = data_path.empty() ? dataset_for(cfg) : load_dataset(data_path);
  if (data.empty()) throw ValidationError("dataset is empty");
  double total = 0.0;
  for (const GNNGraph& g : data) {
    ForwardContext ctx;
    const Tensor pred = model.forward(ctx, g, g.node_feature("x"));
    total += mse_loss(pred, g.graph_feature("y")).item();
  }
  out << "num_graphs,mean_loss\n" << data.size() << ',' << format_real(total / static_cast<double>(data.size()))
      << '\n';
  return kExitOk;
}

int cmd_gen_data(const TrainConfig& cfg, const std::string& out_path, std::ostream& out) {
  const auto data = dataset_for(cfg);
  if (out_path.empty()) {
    write_dataset(out, data);
  } else {
    save_dataset(out_path, data);
  }
  return kExitOk;
}

struct BenchPoint {
  std::size_t n, m, d;
  double fused_us = 0.0, unfused_us = 0.0, max_diff = 0.0;
};

template <typename F>
double mean_time_us(F&& f, std::size_t reps, std::size_t warmup) {
  for (std::size_t i = 0; i < warmup; ++i) f();
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < reps; ++i) f();
  const auto stop = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::micro>(stop - start).count() / static_cast<double>(reps);
}

void run_bench_point(BenchPoint& p, std::uint64_t seed, std::size_t reps, std::size_t warmup) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(p.n),
                    static_cast<std::uint32_t>(p.m), static_cast<std::uint32_t>(p.d)};
  Rng rng(seq);
  const GNNGraph g = rand_graph(p.n, p.m, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> xv(p.d * p.n);
  for (auto& v : xv) v = normal(rng);
  const EdgeArgs args{.xj = Tensor(Shape{p.d, p.n}, std::move(xv), Precision::f32)};
  const auto f = MessageFunction::copy_xj();

  const Tensor fused = propagate(f, g, Aggregation::sum, args, PropagatePath::fused);
  const Tensor two_step = propagate(f, g, Aggregation::sum, args, PropagatePath::two_step);
  for (std::size_t i = 0; i < fused.numel(); ++i) {
    const double diff = std::abs(fused[i] - two_step[i]);
    if (!(diff <= p.max_diff)) p.max_diff = std::isnan(diff) ? std::numeric_limits<double>::infinity() : diff;
  }
  if (!(p.max_diff < kBenchTolerance)) return;

  p.fused_us = mean_time_us([&] { (void)propagate(f, g, Aggregation::sum, args, PropagatePath::fused); }, reps, warmup);
  p.unfused_us =
      mean_time_us([&] { (void)propagate(f, g, Aggregation::sum, args, PropagatePath::two_step); }, reps, warmup);
}

int cmd_bench(const std::vector<std::size_t>& nodes, const std::vector<std::size_t>& edges,
              const std::vector<std::size_t>& dims, std::size_t reps, std::size_t warmup, std::size_t threads,
              std::uint64_t seed, const std::string& out_path, std::ostream& out, std::ostream& err) {
  if (reps == 0) throw UsageError("--reps must be at least 1");
  if (threads == 0) throw UsageError("--threads must be at least 1");
  std::vector<BenchPoint> grid;
  for (std::size_t n : nodes)
    for (std::size_t m : edges)
      for (std::size_t d : dims) {
        if (n == 0 || d == 0) throw UsageError("--nodes and --feature-dim must be positive");
        if (m > n * (n - 1)) {
          throw UsageError("--edges " + std::to_string(m) + " exceeds the " + std::to_string(n * (n - 1)) +
                           " possible edges on " + std::to_string(n) + " nodes");
        }
        grid.push_back({n, m, d});
      }

  // Grid points are independent; workers take them in index order.
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(grid.size());
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < grid.size();) {
      try {
        run_bench_point(grid[i], seed, reps, warmup);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(threads, grid.size()); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (const auto& p : grid) {
    if (!(p.max_diff < kBenchTolerance)) {
      err << "bench: fused and two-step propagate disagree at n=" << p.n << " m=" << p.m << " d=" << p.d
          << ": max abs diff " << format_real(p.max_diff, 6) << " (tolerance " << kBenchTolerance << ")\n";
      return kExitFailure;
    }
  }
  Sink sink(out_path, out);
  *sink << "n,m,d,fused_us,unfused_us,speedup\n";
  for (const auto& p : grid) {
    *sink << p.n << ',' << p.m << ',' << p.d << ',' << format_fixed(p.fused_us, 3) << ','
          << format_fixed(p.unfused_us, 3) << ',' << format_fixed(p.unfused_us / p.fused_us, 4) << '\n';
  }
  return kExitOk;
}

std::optional<OpKind> parse_op_kind(std::string_view name) {
  for (int k = 0; k <= static_cast<int>(OpKind::headwise_scale); ++k) {
    if (to_string(static_cast<OpKind>(k)) == name) return static_cast<OpKind>(k);
  }
  return std::nullopt;
}

int cmd_gradcheck(const std::vector<std::string>& layers, std::size_t instances, std::uint64_t seed,
                  const std::string& fault, const std::string& out_path, std::ostream& out, std::ostream& err) {
  if (instances == 0) throw UsageError("--instances must be at least 1");
  const auto& known = gradcheck_layers();
  std::vector<std::string> selected = layers.empty() ? known : layers;
  for (const auto& l : selected) {
    if (std::find(known.begin(), known.end(), l) == known.end()) {
      std::string list;
      for (const auto& k : known) list += (list.empty() ? "" : ", ") + k;
      throw UsageError("--layer " + l + " is not one of: " + list);
    }
  }
  struct FaultGuard {
    bool active = false;
    ~FaultGuard() {
      if (active) debug::clear_backward_faults();
    }
  } guard;
  if (!fault.empty()) {
    const auto colon = fault.find(':');
    const auto kind = parse_op_kind(fault.substr(0, colon));
    if (!kind || colon == std::string::npos) throw UsageError("--inject-fault expects OP:FACTOR");
    double factor = 0.0;
    try {
      factor = std::stod(fault.substr(colon + 1));
    } catch (const std::exception&) {
      throw UsageError("--inject-fault expects OP:FACTOR");
    }
    debug::inject_backward_fault(*kind, factor);
    guard.active = true;
  }

  Sink sink(out_path, out);
  *sink << "layer,instances,max_rel_error,worst_parameter,status\n";
  bool ok = true;
  for (const auto& layer : selected) {
    // Each layer gets its own stream so --layer filtering does not change results.
    std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    for (char c : layer) words.push_back(static_cast<unsigned char>(c));
    std::seed_seq seq(words.begin(), words.end());
    Rng rng(seq);
    const LayerGradReport r = run_layer_gradcheck(layer, instances, rng);
    const ParameterError* worst = r.worst();
    const bool pass = r.max_error() < kGradTolerance;
    *sink << layer << ',' << r.instances << ',' << format_real(r.max_error(), 6) << ','
          << (worst ? worst->name : "-") << ',' << (pass ? "ok" : "FAIL") << '\n';
    if (!pass) {
      ok = false;
      err << "gradcheck: layer " << layer << " parameter " << worst->name << " has relative error "
          << format_real(worst->max_rel_error, 6) << " (tolerance " << kGradTolerance << ")\n";
    }
  }
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const Options& options) {
  CLI::App app{"Graph neural network toolkit: training, propagation benchmarks and gradient checks", "gnn"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  TrainConfig cfg;
  std::string out_path, checkpoint, data_path, fault;

  CLI::App* train = app.add_subcommand("train", "Train a model on a synthetic teacher dataset; prints epoch metrics CSV");
  add_dataset_flags(*train, cfg);
  train->add_option("--batch-size", cfg.batch_size, "Graphs per batch")->capture_default_str();
  train->add_option("--lr", cfg.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
  train->add_option("--model", cfg.model, "Model spec")->capture_default_str();
  train->add_option("--out", out_path, "Write the metrics CSV here instead of stdout");
  train->add_option("--checkpoint", checkpoint, "Write the trained parameters here");

  CLI::App* eval = app.add_subcommand("eval", "Mean squared error of a checkpoint on a dataset");
  add_dataset_flags(*eval, cfg);
  eval->add_option("--model", cfg.model, "Model spec the checkpoint was trained with")->capture_default_str();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint to load")->required();
  eval->add_option("--data", data_path, "Dataset JSONL file; generated from the dataset flags when absent");

  CLI::App* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as JSON Lines");
  add_dataset_flags(*gen, cfg);
  gen->add_option("--out", out_path, "Output file (stdout when absent)");

  std::vector<std::size_t> bench_nodes{1000, 10000}, bench_edges{5000, 50000}, bench_dims{16, 64};
  std::size_t reps = 20, warmup = 3, threads = 1;
  std::uint64_t bench_seed = 1;
  CLI::App* bench = app.add_subcommand("bench", "Time fused against two-step propagate(copy_xj, sum)");
  bench->add_option("--nodes", bench_nodes, "Node counts (comma separated)")->delimiter(',')->capture_default_str();
  bench->add_option("--edges", bench_edges, "Edge counts (comma separated)")->delimiter(',')->capture_default_str();
  bench->add_option("--feature-dim", bench_dims, "Feature dimensions (comma separated)")
      ->delimiter(',')
      ->capture_default_str();
  bench->add_option("--reps", reps, "Timed repetitions per path")->capture_default_str();
  bench->add_option("--warmup", warmup, "Untimed repetitions per path")->capture_default_str();
  bench->add_option("--threads", threads, "Grid points measured in parallel")->capture_default_str();
  bench->add_option("--seed", bench_seed, "Random seed")->capture_default_str();
  bench->add_option("--out", out_path, "Write the CSV here instead of stdout");

  std::vector<std::string> layers;
  std::size_t instances = 20;
  std::uint64_t grad_seed = 1;
  CLI::App* grad = app.add_subcommand("gradcheck", "Finite-difference check of every layer's gradients");
  grad->add_option("--layer", layers, "Restrict to these layers (repeatable)");
  grad->add_option("--instances", instances, "Random graphs per layer")->capture_default_str();
  grad->add_option("--seed", grad_seed, "Random seed")->capture_default_str();
  grad->add_option("--out", out_path, "Write the table here instead of stdout");
  if (options.test_hooks) {
    grad->add_option("--inject-fault", fault, "Scale one op's backward rule, as OP:FACTOR")->group("");
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(cfg, out_path, checkpoint, out);
    if (*eval) return cmd_eval(cfg, data_path, checkpoint, out);
    if (*gen) return cmd_gen_data(cfg, out_path, out);
    if (*bench) {
      return cmd_bench(bench_nodes, bench_edges, bench_dims, reps, warmup, threads, bench_seed, out_path, out, err);
    }
    if (*grad) return cmd_gradcheck(layers, instances, grad_seed, fault, out_path, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace gnn::cli
