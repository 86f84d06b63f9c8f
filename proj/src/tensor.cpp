#include "gnn/tensor.hpp"

#include <cstring>
#include <sstream>
#include <utility>

#include "gnn/errors.hpp"

namespace gnn {

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

double round_to(Precision p, double v) {
  return p == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

namespace {

std::shared_ptr<const std::vector<double>> rounded(std::vector<double> values, Precision p) {
  if (p == Precision::f32) {
    for (auto& v : values) v = round_to(p, v);
  }
  return std::make_shared<const std::vector<double>>(std::move(values));
}

}  // namespace

Tensor::Tensor() : shape_{0}, data_(std::make_shared<const std::vector<double>>()) {}

Tensor::Tensor(Shape shape, std::vector<double> values, Precision precision)
    : shape_(std::move(shape)), precision_(precision) {
  if (shape_numel(shape_) != values.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " holds " +
                         std::to_string(shape_numel(shape_)) + " elements but " +
                         std::to_string(values.size()) + " values were given");
  }
  data_ = rounded(std::move(values), precision);
}

Tensor::Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data, Precision precision)
    : shape_(std::move(shape)), data_(std::move(data)), precision_(precision) {}

Tensor Tensor::zeros(Shape shape, Precision precision) { return full(std::move(shape), 0.0, precision); }

Tensor Tensor::full(Shape shape, double value, Precision precision) {
  std::vector<double> v(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(v), precision);
}

Tensor Tensor::scalar(double value, Precision precision) { return Tensor(Shape{}, {value}, precision); }

Tensor Tensor::vector(std::vector<double> values, Precision precision) {
  Shape s{values.size()};
  return Tensor(std::move(s), std::move(values), precision);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, Precision precision) {
  std::vector<std::vector<double>> r;
  for (const auto& row : rows) r.emplace_back(row);
  return matrix(r, precision);
}

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows, Precision precision) {
  const std::size_t ncols = rows.empty() ? 0 : rows.front().size();
  std::vector<double> values;
  values.reserve(rows.size() * ncols);
  for (const auto& row : rows) {
    if (row.size() != ncols) throw DimensionError("matrix rows have unequal lengths");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(Shape{rows.size(), ncols}, std::move(values), precision);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got shape " + shape_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got shape " + shape_string(shape_));
  return shape_[1];
}

double Tensor::operator()(std::size_t i, std::size_t j) const { return (*data_)[i * cols() + j]; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
  return (*data_)[0];
}

Tensor Tensor::to(Precision precision) const {
  if (precision == precision_) return detach();
  return Tensor(shape_, *data_, precision);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_, precision_);
}

Tensor Tensor::detach() const { return Tensor(shape_, data_, precision_); }

bool Tensor::same_values(const Tensor& other) const {
  if (shape_ != other.shape_ || precision_ != other.precision_) return false;
  if (data_ == other.data_) return true;
  const auto& a = *data_;
  const auto& b = *other.data_;
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

}  // namespace gnn
