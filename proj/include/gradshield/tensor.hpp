#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gradshield {

using Shape = std::vector<std::size_t>;

/// Raised when operands of a primitive do not have compatible shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by validation passes that find NaN or Inf values.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles. Rank-0 tensors (empty shape) hold one value.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match " +
                       std::to_string(data_.size()) + " elements");
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double item() const {
    if (data_.size() != 1) throw ShapeError("item(): tensor has " + std::to_string(data_.size()) + " elements");
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  /// Throws NonFiniteError naming `what` if any element is NaN or Inf.
  const Tensor& validate(const std::string& what) const {
    if (!all_finite()) throw NonFiniteError(what + ": non-finite value");
    return *this;
  }

  /// Row `i` of the leading axis, as a tensor of the trailing shape.
  Tensor slice(std::size_t i) const {
    if (shape_.empty()) throw ShapeError("slice of rank-0 tensor");
    Shape rest(shape_.begin() + 1, shape_.end());
    std::size_t stride = shape_size(rest);
    if (i >= shape_[0]) throw std::out_of_range("slice index");
    return Tensor(rest, std::vector<double>(data_.begin() + i * stride, data_.begin() + (i + 1) * stride));
  }

  /// Rows [begin, end) of the leading axis.
  Tensor rows(std::size_t begin, std::size_t end) const {
    if (shape_.empty() || begin > end || end > shape_[0]) throw std::out_of_range("rows");
    Shape out = shape_;
    out[0] = end - begin;
    std::size_t stride = data_.size() / std::max<std::size_t>(shape_[0], 1);
    return Tensor(out, std::vector<double>(data_.begin() + begin * stride, data_.begin() + end * stride));
  }

  /// Gathers rows of the leading axis in the given order.
  Tensor gather(std::span<const std::size_t> idx) const {
    if (shape_.empty()) throw ShapeError("gather of rank-0 tensor");
    Shape out = shape_;
    out[0] = idx.size();
    std::size_t stride = shape_[0] ? data_.size() / shape_[0] : 0;
    std::vector<double> d;
    d.reserve(idx.size() * stride);
    for (auto i : idx) {
      if (i >= shape_[0]) throw std::out_of_range("gather index");
      d.insert(d.end(), data_.begin() + i * stride, data_.begin() + (i + 1) * stride);
    }
    return Tensor(out, std::move(d));
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double squared_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return s;
}

/// Index of the largest entry in each row of an [N,K] tensor. Ties go to the lowest index.
inline std::vector<std::size_t> argmax_rows(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("argmax_rows expects rank 2, got " + shape_str(t.shape()));
  std::size_t n = t.dim(0), k = t.dim(1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = t.data().subspan(i * k, k);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

inline Tensor one_hot(std::span<const std::size_t> labels, std::size_t k) {
  Tensor y({labels.size(), k});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= k) throw std::out_of_range("one_hot: label out of range");
    y[i * k + labels[i]] = 1.0;
  }
  return y;
}

}  // namespace gradshield
