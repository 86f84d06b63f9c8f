#pragma once

// Shared helpers for the unit tests: random data and a finite-difference
// gradient oracle that never touches the tape.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "gnn/ops.hpp"
#include "gnn/tape.hpp"
#include "gnn/tensor.hpp"

namespace gnn::testing {

using Rng = std::mt19937_64;

inline Tensor random_tensor(Shape shape, Rng& rng, Precision p = Precision::f64, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), p);
}

inline Tensor random_normal(Shape shape, Rng& rng, Precision p = Precision::f64) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), p);
}

inline std::vector<Index> random_index(std::size_t k, std::size_t bound, Rng& rng) {
  std::uniform_int_distribution<Index> dist(0, static_cast<Index>(bound) - 1);
  std::vector<Index> idx(k);
  for (auto& i : idx) i = dist(rng);
  return idx;
}

// Largest element-wise relative difference; magnitudes below `floor` are
// compared absolutely against `floor`. NaN counts as an infinite difference.
inline double max_rel_diff(std::span<const double> a, std::span<const double> b, double floor = 1e-4) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    const double diff = std::abs(a[i] - b[i]) / denom;
    if (!(diff <= worst)) worst = std::isnan(diff) ? std::numeric_limits<double>::infinity() : diff;
  }
  return worst;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = std::abs(a[i] - b[i]);
    if (!(diff <= worst)) worst = std::isnan(diff) ? std::numeric_limits<double>::infinity() : diff;
  }
  return worst;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

using MultiFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Central differences at steps h and h/2 combined by Richardson extrapolation,
// which cancels the h^2 error term and allows a step large enough to keep
// roundoff small.
inline Tensor richardson_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  const Tensor coarse = finite_diff_gradient(f, x, h);
  const Tensor fine = finite_diff_gradient(f, x, h / 2);
  std::vector<double> out(coarse.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (4.0 * fine[i] - coarse[i]) / 3.0;
  return Tensor(x.shape(), std::move(out), Precision::f64);
}

// Compare tape gradients of <R, f(inputs)> against extrapolated central
// differences for a random projection R. Returns nullopt when the forward pass
// sits within `kink_tol` of a non-differentiable point, so the caller can
// resample.
inline std::optional<double> grad_check(const MultiFn& f, const std::vector<Tensor>& inputs, Rng& rng,
                                        double eps = 1e-4, double kink_tol = 1e-3) {
  Tape tape;
  std::vector<Tensor> tracked;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    tracked.push_back(tape.parameter("in" + std::to_string(i), inputs[i]));
  }
  const Tensor out = f(tracked);
  if (tape.kink_margin() < kink_tol) return std::nullopt;
  const Tensor proj = random_tensor(out.shape(), rng);
  const Tensor loss = sum(mul(out, proj));
  const GradientMap grads = tape.backward(loss);

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto objective = [&](const Tensor& xi) {
      std::vector<Tensor> args = inputs;
      args[i] = xi;
      return dot(f(args).data(), proj.data());
    };
    const Tensor fd = richardson_gradient(objective, inputs[i], eps);
    worst = std::max(worst, max_rel_diff(grads.at("in" + std::to_string(i)).data(), fd.data()));
  }
  return worst;
}

}  // namespace gnn::testing
