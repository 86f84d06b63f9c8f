#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gnn {

class Tape;

using Shape = std::vector<std::size_t>;
using NodeId = std::int64_t;
using Index = std::int64_t;

// Storage precision of a tensor. Arithmetic is carried out in double and the
// result is rounded to the storage precision, so f32 tensors hold exactly the
// values a float buffer would.
enum class Precision { f32, f64 };

std::string to_string(Precision p);
std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Round a value to what the given precision can store.
double round_to(Precision p, double v);

// Immutable shaped array in row-major order. Copies share the buffer.
//
// A tensor may be attached to a Tape node; operations on attached tensors are
// recorded so that gradients can be computed with backward().
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, Precision precision = Precision::f32);

  static Tensor zeros(Shape shape, Precision precision = Precision::f32);
  static Tensor full(Shape shape, double value, Precision precision = Precision::f32);
  static Tensor scalar(double value, Precision precision = Precision::f32);
  static Tensor vector(std::vector<double> values, Precision precision = Precision::f32);
  // Rank-2 tensor from a list of equal-length rows.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       Precision precision = Precision::f32);
  static Tensor matrix(const std::vector<std::vector<double>>& rows,
                       Precision precision = Precision::f32);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data_->size(); }
  Precision precision() const { return precision_; }

  // Rows/cols of a rank-2 tensor.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return *data_; }
  std::vector<double> to_vector() const { return *data_; }
  double operator[](std::size_t flat) const { return (*data_)[flat]; }
  double operator()(std::size_t i, std::size_t j) const;
  // Value of a one-element tensor.
  double item() const;

  // Same values in another storage precision; never tracked.
  Tensor to(Precision precision) const;
  // Same values, reinterpreted with a new shape of equal element count; never tracked.
  Tensor reshaped(Shape shape) const;
  // Untracked view of the same buffer.
  Tensor detach() const;

  bool requires_grad() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  NodeId node_id() const { return node_; }

  // Bitwise equality of shape, precision and values; tape linkage is ignored.
  bool same_values(const Tensor& other) const;

 private:
  friend class Tape;
  Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data, Precision precision);

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Precision precision_ = Precision::f32;
  Tape* tape_ = nullptr;
  NodeId node_ = -1;
};

}  // namespace gnn
