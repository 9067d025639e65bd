#pragma once

// Dense row-major tensor with value semantics. Image-shaped data uses
// NCHW (batch) or CHW (single image) layouts throughout the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dicad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
class basic_tensor {
 public:
  using value_type = T;

  basic_tensor() = default;
  explicit basic_tensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  basic_tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
      throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
  }

  static basic_tensor scalar(T v) { return basic_tensor(Shape{1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& vec() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // CHW / NCHW accessors
  T& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  basic_tensor reshaped(Shape s) const {
    if (shape_numel(s) != size())
      throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return basic_tensor(std::move(s), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  template <class U>
  basic_tensor<U> cast() const {
    basic_tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool operator==(const basic_tensor& o) const = default;

  basic_tensor& operator+=(const basic_tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  basic_tensor& operator-=(const basic_tensor& o) {
    require_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  basic_tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  void require_same_shape(const basic_tensor& o, const char* what) const {
    if (shape_ != o.shape_)
      throw std::invalid_argument(std::string("shape mismatch in ") + what + ": " + shape_str(shape_) +
                                  " vs " + shape_str(o.shape_));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = basic_tensor<float>;

template <class T>
basic_tensor<T> operator+(basic_tensor<T> a, const basic_tensor<T>& b) {
  a += b;
  return a;
}
template <class T>
basic_tensor<T> operator-(basic_tensor<T> a, const basic_tensor<T>& b) {
  a -= b;
  return a;
}
template <class T>
basic_tensor<T> operator*(basic_tensor<T> a, T s) {
  a *= s;
  return a;
}

template <class T>
T sum(const basic_tensor<T>& t) {
  T s{};
  for (T v : t.vec()) s += v;
  return s;
}

template <class T>
double mean_abs_diff(const basic_tensor<T>& a, const basic_tensor<T>& b) {
  a.require_same_shape(b, "mean_abs_diff");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(double(a[i]) - double(b[i]));
  return a.size() ? s / double(a.size()) : 0.0;
}

template <class T>
T max_value(const basic_tensor<T>& t) {
  if (t.empty()) throw std::invalid_argument("max of empty tensor");
  return *std::max_element(t.vec().begin(), t.vec().end());
}

template <class T>
T min_value(const basic_tensor<T>& t) {
  if (t.empty()) throw std::invalid_argument("min of empty tensor");
  return *std::min_element(t.vec().begin(), t.vec().end());
}

// Stacks CHW tensors of equal shape into NCHW.
template <class T>
basic_tensor<T> stack(std::span<const basic_tensor<T>> items) {
  if (items.empty()) throw std::invalid_argument("stack of zero tensors");
  Shape s{items.size()};
  s.insert(s.end(), items[0].shape().begin(), items[0].shape().end());
  basic_tensor<T> out(s);
  const std::size_t n = items[0].size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    items[0].require_same_shape(items[i], "stack");
    std::copy(items[i].data(), items[i].data() + n, out.data() + i * n);
  }
  return out;
}

// Extracts item i of an NCHW tensor as CHW.
template <class T>
basic_tensor<T> unstack(const basic_tensor<T>& batch, std::size_t i) {
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  basic_tensor<T> out(s);
  const std::size_t n = out.size();
  std::copy(batch.data() + i * n, batch.data() + (i + 1) * n, out.data());
  return out;
}

// Adds a leading batch dimension of one.
template <class T>
basic_tensor<T> as_batch(const basic_tensor<T>& t) {
  Shape s{1};
  s.insert(s.end(), t.shape().begin(), t.shape().end());
  return t.reshaped(s);
}

}  // namespace dicad
