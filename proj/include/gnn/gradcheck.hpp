#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gnn/layers.hpp"

namespace gnn {

struct ParameterError {
  std::string name;  // parameter name, or "input" for the layer input
  double max_rel_error = 0.0;
};

using LayerForward = std::function<Tensor(ForwardContext&, const Tensor&)>;

// Compare tape gradients of <R, f(x)> against central differences (steps eps
// and eps/2, Richardson-extrapolated) for a random projection R, with respect
// to x and every trainable parameter. Relative error is |a - f| / max(|a|, |f|, 1e-4) per element. Returns nullopt
// when the forward pass is within `kink_tol` of a non-differentiable point.
std::optional<std::vector<ParameterError>> check_gradients(const LayerForward& f, const std::vector<Parameter*>& params,
                                                           const Tensor& x, bool training, Rng& rng, double eps = 1e-4,
                                                           double kink_tol = 1e-3);

struct LayerGradReport {
  std::string layer;
  std::size_t instances = 0;
  std::vector<ParameterError> errors;  // worst error per parameter over all instances

  double max_error() const;
  const ParameterError* worst() const;
};

// Layer kinds covered by run_layer_gradcheck, in table order.
const std::vector<std::string>& gradcheck_layers();

// Finite-difference check of one layer kind on `instances` random double
// precision graphs with n <= 12 nodes and feature dimension d <= 8.
LayerGradReport run_layer_gradcheck(const std::string& layer, std::size_t instances, Rng& rng);

}  // namespace gnn
