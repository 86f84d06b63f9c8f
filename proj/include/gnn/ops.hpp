#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>

#include "gnn/tape.hpp"
#include "gnn/tensor.hpp"

// Differentiable tensor operations. Every function records itself on the tape
// of its tracked inputs. Binary operations require equal shapes and equal
// precisions; add_bias and mul_rows are the only broadcasting operations.
namespace gnn {


// [p x q] * [q x r] -> [p x r]
Tensor matmul(const Tensor& a, const Tensor& b);

// x [d x n] plus b [d] added to every column.
Tensor add_bias(const Tensor& x, const Tensor& b);

// x [d x n] with row i multiplied by v[i], v [d].
Tensor mul_rows(const Tensor& x, const Tensor& v);

// x [d x n] with column j multiplied by the constant factors[j].
Tensor scale_columns(const Tensor& x, std::span<const double> factors);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// x * c for a constant c.
Tensor scale(const Tensor& x, double c);
// x + c for a constant c.
Tensor add_scalar(const Tensor& x, double c);
// x * s where s is a one-element tensor (differentiable in s).
Tensor mul_scalar(const Tensor& x, const Tensor& s);

// relu'(0) is 0.
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor square(const Tensor& x);
// 1 / sqrt(x)
Tensor rsqrt(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

enum class ReduceKind { sum, mean, max };

// Reduce all elements (no axis, giving a rank-0 tensor) or one axis. Sum and
// mean of nothing are 0; max of nothing throws DomainError. Max routes its
// gradient to the first maximal element.
Tensor reduce(const Tensor& x, ReduceKind kind, std::optional<std::size_t> axis = std::nullopt);
inline Tensor sum(const Tensor& x) { return reduce(x, ReduceKind::sum); }
inline Tensor mean(const Tensor& x) { return reduce(x, ReduceKind::mean); }

// out[:, j] = x[:, index[j]]
Tensor gather_columns(const Tensor& x, std::span<const Index> index);

// out[:, t] = sum of src[:, j] over j with index[j] == t
Tensor scatter_add(const Tensor& src, std::span<const Index> index, std::size_t num_out);

// out[:, t] = max of src[:, j] over j with index[j] == t, 0 for empty groups.
// Ties go to the first column.
Tensor segment_max(const Tensor& src, std::span<const Index> index, std::size_t num_out);

// Softmax of each row of logits [h x k] within the groups given by index,
// stabilized by the group max.
Tensor segment_softmax(const Tensor& logits, std::span<const Index> index,
                       std::size_t num_groups);

// For z [h*c x k] and att [h x c]: out[i, j] = sum_r att[i, r] * z[i*c + r, j].
Tensor headwise_dot(const Tensor& z, const Tensor& att);

// For m [h*c x k] and w [h x k]: out[i*c + r, j] = m[i*c + r, j] * w[i, j].
Tensor headwise_scale(const Tensor& m, const Tensor& w);

// Central differences of a scalar function, one coordinate at a time.
// Evaluated in double precision.
Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                            double eps);

}  // namespace gnn
