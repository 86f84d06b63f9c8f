#include "gnn/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "gnn/errors.hpp"

namespace gnn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_precision(const char* op, const Tensor& a, const Tensor& b) {
  if (a.precision() != b.precision()) {
    throw ContractError(std::string(op) + ": mixed precision " + to_string(a.precision()) + " and " +
                        to_string(b.precision()));
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require_same_precision(op, a, b);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

void require_matrix(const char* op, const Tensor& x) {
  if (x.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_string(x.shape()));
  }
}

void check_indices(const char* op, std::span<const Index> index, std::size_t bound) {
  for (std::size_t j = 0; j < index.size(); ++j) {
    if (index[j] < 0 || static_cast<std::size_t>(index[j]) >= bound) {
      throw IndexError(std::string(op) + ": index[" + std::to_string(j) + "] = " +
                       std::to_string(index[j]) + " outside [0, " + std::to_string(bound) + ")");
    }
  }
}

template <class F, class DF>
Tensor unary(OpKind kind, const Tensor& x, F f, DF df, double kink_margin = kInf) {
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  Tensor y(x.shape(), std::move(out), x.precision());
  const std::array inputs{x};
  return record_op(
      kind, inputs, y,
      [xs = x.detach(), ys = y, df](std::span<const double> g, std::span<std::vector<double>* const> grads) {
        auto xv = xs.data();
        auto yv = ys.data();
        auto& gx = *grads[0];
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
      },
      kink_margin);
}

double min_abs(std::span<const double> v) {
  double m = kInf;
  for (double a : v) m = std::min(m, std::abs(a));
  return m;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  require_same_precision("matmul", a, b);
  const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
  if (b.rows() != q) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  }
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> c(p * r, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = av[i * q + k];
      if (aik == 0.0) continue;
      const double* brow = bv.data() + k * r;
      double* crow = c.data() + i * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
    }
  }
  Tensor out(Shape{p, r}, std::move(c), a.precision());
  const std::array inputs{a, b};
  return record_op(OpKind::matmul, inputs, out,
                   [as = a.detach(), bs = b.detach(), p, q, r](std::span<const double> g,
                                                              std::span<std::vector<double>* const> grads) {
                     auto av = as.data();
                     auto bv = bs.data();
                     if (auto* ga = grads[0]) {
                       // dA = G * B^T
                       for (std::size_t i = 0; i < p; ++i)
                         for (std::size_t k = 0; k < q; ++k) {
                           double acc = 0.0;
                           for (std::size_t j = 0; j < r; ++j) acc += g[i * r + j] * bv[k * r + j];
                           (*ga)[i * q + k] += acc;
                         }
                     }
                     if (auto* gb = grads[1]) {
                       // dB = A^T * G
                       for (std::size_t i = 0; i < p; ++i)
                         for (std::size_t k = 0; k < q; ++k) {
                           const double aik = av[i * q + k];
                           for (std::size_t j = 0; j < r; ++j) (*gb)[k * r + j] += aik * g[i * r + j];
                         }
                     }
                   });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  require_matrix("add_bias", x);
  require_same_precision("add_bias", x, b);
  const std::size_t d = x.rows(), n = x.cols();
  if (b.rank() != 1 || b.numel() != d) {
    throw DimensionError("add_bias: bias of shape " + shape_string(b.shape()) + " does not match " +
                         std::to_string(d) + " rows of " + shape_string(x.shape()));
  }
  auto xv = x.data();
  auto bv = b.data();
  std::vector<double> out(xv.begin(), xv.end());
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[i];
  Tensor y(x.shape(), std::move(out), x.precision());
  const std::array inputs{x, b};
  return record_op(OpKind::add_bias, inputs, y,
                   [d, n](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                     if (auto* gx = grads[0])
                       for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                     if (auto* gb = grads[1])
                       for (std::size_t i = 0; i < d; ++i)
                         for (std::size_t j = 0; j < n; ++j) (*gb)[i] += g[i * n + j];
                   });
}

Tensor mul_rows(const Tensor& x, const Tensor& v) {
  require_matrix("mul_rows", x);
  require_same_precision("mul_rows", x, v);
  const std::size_t d = x.rows(), n = x.cols();
  if (v.rank() != 1 || v.numel() != d) {
    throw DimensionError("mul_rows: factor of shape " + shape_string(v.shape()) + " does not match " +
                         shape_string(x.shape()));
  }
  auto xv = x.data();
  auto vv = v.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] * vv[i];
  Tensor y(x.shape(), std::move(out), x.precision());
  const std::array inputs{x, v};
  return record_op(OpKind::mul_rows, inputs, y,
                   [xs = x.detach(), vs = v.detach(), d, n](std::span<const double> g,
                                                           std::span<std::vector<double>* const> grads) {
                     auto xv = xs.data();
                     auto vv = vs.data();
                     if (auto* gx = grads[0])
                       for (std::size_t i = 0; i < d; ++i)
                         for (std::size_t j = 0; j < n; ++j) (*gx)[i * n + j] += g[i * n + j] * vv[i];
                     if (auto* gv = grads[1])
                       for (std::size_t i = 0; i < d; ++i)
                         for (std::size_t j = 0; j < n; ++j) (*gv)[i] += g[i * n + j] * xv[i * n + j];
                   });
}

Tensor scale_columns(const Tensor& x, std::span<const double> factors) {
  require_matrix("scale_columns", x);
  const std::size_t d = x.rows(), n = x.cols();
  if (factors.size() != n) {
    throw DimensionError("scale_columns: " + std::to_string(factors.size()) + " factors for " +
                         std::to_string(n) + " columns");
  }
  std::vector<double> f(factors.begin(), factors.end());
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] * f[j];
  Tensor y(x.shape(), std::move(out), x.precision());
  const std::array inputs{x};
  return record_op(OpKind::scale_columns, inputs, y,
                   [f = std::move(f), d, n](std::span<const double> g,
                                            std::span<std::vector<double>* const> grads) {
                     auto& gx = *grads[0];
                     for (std::size_t i = 0; i < d; ++i)
                       for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i * n + j] * f[j];
                   });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Tensor y(a.shape(), std::move(out), a.precision());
  const std::array inputs{a, b};
  return record_op(OpKind::add, inputs, y,
                   [](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                     for (auto* gi : grads)
                       if (gi)
                         for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  Tensor y(a.shape(), std::move(out), a.precision());
  const std::array inputs{a, b};
  return record_op(OpKind::sub, inputs, y,
                   [](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                     if (auto* ga = grads[0])
                       for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                     if (auto* gb = grads[1])
                       for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Tensor y(a.shape(), std::move(out), a.precision());
  const std::array inputs{a, b};
  return record_op(OpKind::mul, inputs, y,
                   [as = a.detach(), bs = b.detach()](std::span<const double> g,
                                                      std::span<std::vector<double>* const> grads) {
                     auto av = as.data();
                     auto bv = bs.data();
                     if (auto* ga = grads[0])
                       for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
                     if (auto* gb = grads[1])
                       for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
                   });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape("div", a, b);
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  Tensor y(a.shape(), std::move(out), a.precision());
  const std::array inputs{a, b};
  return record_op(OpKind::div, inputs, y,
                   [as = a.detach(), bs = b.detach()](std::span<const double> g,
                                                      std::span<std::vector<double>* const> grads) {
                     auto av = as.data();
                     auto bv = bs.data();
                     if (auto* ga = grads[0])
                       for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / bv[i];
                     if (auto* gb = grads[1])
                       for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                   });
}

Tensor scale(const Tensor& x, double c) {
  return unary(OpKind::scale, x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary(OpKind::add_scalar, x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
  require_same_precision("mul_scalar", x, s);
  if (s.numel() != 1) {
    throw DimensionError("mul_scalar: factor of shape " + shape_string(s.shape()) + " is not a scalar");
  }
  const double c = s[0];
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c;
  Tensor y(x.shape(), std::move(out), x.precision());
  const std::array inputs{x, s};
  return record_op(OpKind::mul_scalar, inputs, y,
                   [xs = x.detach(), c](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                     auto xv = xs.data();
                     if (auto* gx = grads[0])
                       for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * c;
                     if (auto* gs = grads[1]) {
                       double acc = 0.0;
                       for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
                       (*gs)[0] += acc;
                     }
                   });
}

Tensor relu(const Tensor& x) {
  return unary(
      OpKind::relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; }, min_abs(x.data()));
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      OpKind::leaky_relu, x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; }, min_abs(x.data()));
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      OpKind::sigmoid, x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      OpKind::tanh, x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary(
      OpKind::exp, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor square(const Tensor& x) {
  return unary(
      OpKind::square, x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor rsqrt(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw DomainError("rsqrt of non-positive value " + std::to_string(v));
  }
  return unary(
      OpKind::rsqrt, x, [](double v) { return 1.0 / std::sqrt(v); },
      [](double v, double) { return -0.5 / (v * std::sqrt(v)); });
}

Tensor reshape(const Tensor& x, Shape shape) {
  Tensor y = x.reshaped(std::move(shape));
  const std::array inputs{x};
  return record_op(OpKind::reshape, inputs, y,
                   [](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                     auto& gx = *grads[0];
                     for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                   });
}

Tensor reduce(const Tensor& x, ReduceKind kind, std::optional<std::size_t> axis) {
  // View x as [outer, len, inner]; the reduced axis is the middle one.
  std::size_t outer = 1, len = x.numel(), inner = 1;
  Shape out_shape;
  if (axis) {
    if (*axis >= x.rank()) {
      throw IndexError("reduce: axis " + std::to_string(*axis) + " out of range for shape " +
                       shape_string(x.shape()));
    }
    for (std::size_t a = 0; a < x.rank(); ++a) {
      if (a < *axis) outer *= x.shape()[a];
      if (a > *axis) inner *= x.shape()[a];
      if (a != *axis) out_shape.push_back(x.shape()[a]);
    }
    len = x.shape()[*axis];
  }
  const std::size_t nout = outer * inner;
  if (kind == ReduceKind::max && len == 0) throw DomainError("reduce: max over an empty tensor");

  auto xv = x.data();
  std::vector<double> out(nout, 0.0);
  std::vector<std::size_t> argmax(kind == ReduceKind::max ? nout : 0);
  double margin = kInf;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t slot = o * inner + in;
      if (kind == ReduceKind::max) {
        std::size_t best = 0;
        double bv = xv[o * len * inner + in];
        double second = -kInf;
        for (std::size_t l = 1; l < len; ++l) {
          const double v = xv[(o * len + l) * inner + in];
          if (v > bv) {
            second = bv;
            bv = v;
            best = l;
          } else {
            second = std::max(second, v);
          }
        }
        out[slot] = bv;
        argmax[slot] = best;
        margin = std::min(margin, bv - second);
      } else {
        double acc = 0.0;
        for (std::size_t l = 0; l < len; ++l) acc += xv[(o * len + l) * inner + in];
        out[slot] = (kind == ReduceKind::mean && len > 0) ? acc / static_cast<double>(len) : acc;
      }
    }
  }
  Tensor y(std::move(out_shape), std::move(out), x.precision());
  const OpKind op = kind == ReduceKind::sum    ? OpKind::reduce_sum
                    : kind == ReduceKind::mean ? OpKind::reduce_mean
                                               : OpKind::reduce_max;
  const std::array inputs{x};
  return record_op(
      op, inputs, y,
      [kind, outer, len, inner, argmax = std::move(argmax)](std::span<const double> g,
                                                            std::span<std::vector<double>* const> grads) {
        auto& gx = *grads[0];
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t slot = o * inner + in;
            if (kind == ReduceKind::max) {
              gx[(o * len + argmax[slot]) * inner + in] += g[slot];
              continue;
            }
            const double v = kind == ReduceKind::mean ? g[slot] / static_cast<double>(len) : g[slot];
            for (std::size_t l = 0; l < len; ++l) gx[(o * len + l) * inner + in] += v;
          }
      },
      margin);
}

Tensor gather_columns(const Tensor& x, std::span<const Index> index) {
  require_matrix("gather_columns", x);
  const std::size_t d = x.rows(), n = x.cols(), k = index.size();
  check_indices("gather_columns", index, n);
  auto xv = x.data();
  std::vector<double> out(d * k);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = xv[i * n + static_cast<std::size_t>(index[j])];
  Tensor y(Shape{d, k}, std::move(out), x.precision());
  const std::array inputs{x};
  return record_op(OpKind::gather_columns, inputs, y,
                   [idx = std::vector<Index>(index.begin(), index.end()), d, n, k](
                       std::span<const double> g, std::span<std::vector<double>* const> grads) {
                     auto& gx = *grads[0];
                     for (std::size_t i = 0; i < d; ++i)
                       for (std::size_t j = 0; j < k; ++j)
                         gx[i * n + static_cast<std::size_t>(idx[j])] += g[i * k + j];
                   });
}

Tensor scatter_add(const Tensor& src, std::span<const Index> index, std::size_t num_out) {
  require_matrix("scatter_add", src);
  const std::size_t d = src.rows(), k = src.cols();
  if (index.size() != k) {
    throw DimensionError("scatter_add: " + std::to_string(index.size()) + " indices for " +
                         std::to_string(k) + " columns");
  }
  check_indices("scatter_add", index, num_out);
  auto sv = src.data();
  std::vector<double> out(d * num_out, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * num_out + static_cast<std::size_t>(index[j])] += sv[i * k + j];
  Tensor y(Shape{d, num_out}, std::move(out), src.precision());
  const std::array inputs{src};
  return record_op(OpKind::scatter_add, inputs, y,
                   [idx = std::vector<Index>(index.begin(), index.end()), d, k, num_out](
                       std::span<const double> g, std::span<std::vector<double>* const> grads) {
                     auto& gs = *grads[0];
                     for (std::size_t i = 0; i < d; ++i)
                       for (std::size_t j = 0; j < k; ++j)
                         gs[i * k + j] += g[i * num_out + static_cast<std::size_t>(idx[j])];
                   });
}

Tensor segment_max(const Tensor& src, std::span<const Index> index, std::size_t num_out) {
  require_matrix("segment_max", src);
  const std::size_t d = src.rows(), k = src.cols();
  if (index.size() != k) {
    throw DimensionError("segment_max: " + std::to_string(index.size()) + " indices for " +
                         std::to_string(k) + " columns");
  }
  check_indices("segment_max", index, num_out);
  auto sv = src.data();
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> arg(d * num_out, kNone);
  std::vector<double> best(d * num_out, -kInf), second(d * num_out, -kInf);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t slot = i * num_out + static_cast<std::size_t>(index[j]);
      const double v = sv[i * k + j];
      if (arg[slot] == kNone || v > best[slot]) {
        second[slot] = best[slot];
        best[slot] = v;
        arg[slot] = j;
      } else {
        second[slot] = std::max(second[slot], v);
      }
    }
  std::vector<double> out(d * num_out, 0.0);
  double margin = kInf;
  for (std::size_t s = 0; s < out.size(); ++s) {
    if (arg[s] == kNone) continue;
    out[s] = best[s];
    margin = std::min(margin, best[s] - second[s]);
  }
  Tensor y(Shape{d, num_out}, std::move(out), src.precision());
  const std::array inputs{src};
  return record_op(
      OpKind::segment_max, inputs, y,
      [arg = std::move(arg), d, k, num_out](std::span<const double> g,
                                            std::span<std::vector<double>* const> grads) {
        auto& gs = *grads[0];
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t t = 0; t < num_out; ++t) {
            const std::size_t j = arg[i * num_out + t];
            if (j != kNone) gs[i * k + j] += g[i * num_out + t];
          }
      },
      margin);
}

Tensor segment_softmax(const Tensor& logits, std::span<const Index> index, std::size_t num_groups) {
  require_matrix("segment_softmax", logits);
  const std::size_t h = logits.rows(), k = logits.cols();
  if (index.size() != k) {
    throw DimensionError("segment_softmax: " + std::to_string(index.size()) + " indices for " +
                         std::to_string(k) + " columns");
  }
  check_indices("segment_softmax", index, num_groups);
  auto lv = logits.data();
  std::vector<double> out(h * k);
  std::vector<double> gmax(num_groups), gsum(num_groups);
  for (std::size_t i = 0; i < h; ++i) {
    std::fill(gmax.begin(), gmax.end(), -kInf);
    std::fill(gsum.begin(), gsum.end(), 0.0);
    const double* row = lv.data() + i * k;
    for (std::size_t j = 0; j < k; ++j) {
      auto t = static_cast<std::size_t>(index[j]);
      gmax[t] = std::max(gmax[t], row[j]);
    }
    for (std::size_t j = 0; j < k; ++j) {
      auto t = static_cast<std::size_t>(index[j]);
      out[i * k + j] = std::exp(row[j] - gmax[t]);
      gsum[t] += out[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= gsum[static_cast<std::size_t>(index[j])];
  }
  Tensor y(logits.shape(), std::move(out), logits.precision());
  const std::array inputs{logits};
  return record_op(OpKind::segment_softmax, inputs, y,
                   [ys = y, idx = std::vector<Index>(index.begin(), index.end()), h, k, num_groups](
                       std::span<const double> g, std::span<std::vector<double>* const> grads) {
                     // dl_j = a_j * (g_j - sum over the group of a * g)
                     auto a = ys.data();
                     auto& gl = *grads[0];
                     std::vector<double> dot(num_groups);
                     for (std::size_t i = 0; i < h; ++i) {
                       std::fill(dot.begin(), dot.end(), 0.0);
                       for (std::size_t j = 0; j < k; ++j)
                         dot[static_cast<std::size_t>(idx[j])] += a[i * k + j] * g[i * k + j];
                       for (std::size_t j = 0; j < k; ++j)
                         gl[i * k + j] += a[i * k + j] * (g[i * k + j] - dot[static_cast<std::size_t>(idx[j])]);
                     }
                   });
}

Tensor headwise_dot(const Tensor& z, const Tensor& att) {
  require_matrix("headwise_dot", z);
  require_matrix("headwise_dot", att);
  require_same_precision("headwise_dot", z, att);
  const std::size_t h = att.rows(), c = att.cols(), k = z.cols();
  if (z.rows() != h * c) {
    throw DimensionError("headwise_dot: " + shape_string(z.shape()) + " does not split into " +
                         std::to_string(h) + " heads of " + std::to_string(c));
  }
  auto zv = z.data();
  auto av = att.data();
  std::vector<double> out(h * k, 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t r = 0; r < c; ++r) {
      const double w = av[i * c + r];
      const double* zrow = zv.data() + (i * c + r) * k;
      for (std::size_t j = 0; j < k; ++j) out[i * k + j] += w * zrow[j];
    }
  Tensor y(Shape{h, k}, std::move(out), z.precision());
  const std::array inputs{z, att};
  return record_op(OpKind::headwise_dot, inputs, y,
                   [zs = z.detach(), as = att.detach(), h, c, k](std::span<const double> g,
                                                                 std::span<std::vector<double>* const> grads) {
                     auto zv = zs.data();
                     auto av = as.data();
                     for (std::size_t i = 0; i < h; ++i)
                       for (std::size_t r = 0; r < c; ++r) {
                         const std::size_t row = i * c + r;
                         if (auto* gz = grads[0])
                           for (std::size_t j = 0; j < k; ++j) (*gz)[row * k + j] += av[i * c + r] * g[i * k + j];
                         if (auto* ga = grads[1]) {
                           double acc = 0.0;
                           for (std::size_t j = 0; j < k; ++j) acc += zv[row * k + j] * g[i * k + j];
                           (*ga)[i * c + r] += acc;
                         }
                       }
                   });
}

Tensor headwise_scale(const Tensor& m, const Tensor& w) {
  require_matrix("headwise_scale", m);
  require_matrix("headwise_scale", w);
  require_same_precision("headwise_scale", m, w);
  const std::size_t h = w.rows(), k = w.cols();
  if (h == 0 || m.rows() % h != 0 || m.cols() != k) {
    throw DimensionError("headwise_scale: " + shape_string(m.shape()) + " incompatible with weights " +
                         shape_string(w.shape()));
  }
  const std::size_t c = m.rows() / h;
  auto mv = m.data();
  auto wv = w.data();
  std::vector<double> out(mv.size());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t r = 0; r < c; ++r)
      for (std::size_t j = 0; j < k; ++j) out[(i * c + r) * k + j] = mv[(i * c + r) * k + j] * wv[i * k + j];
  Tensor y(m.shape(), std::move(out), m.precision());
  const std::array inputs{m, w};
  return record_op(OpKind::headwise_scale, inputs, y,
                   [ms = m.detach(), ws = w.detach(), h, c, k](std::span<const double> g,
                                                               std::span<std::vector<double>* const> grads) {
                     auto mv = ms.data();
                     auto wv = ws.data();
                     for (std::size_t i = 0; i < h; ++i)
                       for (std::size_t r = 0; r < c; ++r)
                         for (std::size_t j = 0; j < k; ++j) {
                           const std::size_t p = (i * c + r) * k + j;
                           if (auto* gm = grads[0]) (*gm)[p] += g[p] * wv[i * k + j];
                           if (auto* gw = grads[1]) (*gw)[i * k + j] += g[p] * mv[p];
                         }
                   });
}

Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
  std::vector<double> base = x.to_vector();
  std::vector<double> grad(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> plus = base, minus = base;
    plus[i] += eps;
    minus[i] -= eps;
    const double fp = f(Tensor(x.shape(), std::move(plus), Precision::f64));
    const double fm = f(Tensor(x.shape(), std::move(minus), Precision::f64));
    grad[i] = (fp - fm) / (2.0 * eps);
  }
  return Tensor(x.shape(), std::move(grad), Precision::f64);
}

}  // namespace gnn
