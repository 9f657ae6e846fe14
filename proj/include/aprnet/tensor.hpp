#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace aprnet {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Spatial extent plus channel count of a rank-3 tensor.
struct Shape {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;

  constexpr std::size_t numel() const noexcept { return h * w * c; }
  constexpr std::size_t pixels() const noexcept { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << s.h << "x" << s.w << "x" << s.c;
  return os.str();
}

inline std::ostream& operator<<(std::ostream& os, const Shape& s) {
  return os << to_string(s);
}

/// Dense (h, w, c) row-major array. Value semantics; copies are deep.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(std::size_t h, std::size_t w, std::size_t c, T fill = T(0))
      : Tensor(Shape{h, w, c}, fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor filled(Shape s, T v) { return Tensor(s, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t h() const noexcept { return shape_.h; }
  std::size_t w() const noexcept { return shape_.w; }
  std::size_t c() const noexcept { return shape_.c; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  std::size_t index(std::size_t y, std::size_t x, std::size_t ch) const noexcept {
    return (y * shape_.w + x) * shape_.c + ch;
  }
  T& operator()(std::size_t y, std::size_t x, std::size_t ch) noexcept {
    return data_[index(y, x, ch)];
  }
  const T& operator()(std::size_t y, std::size_t x, std::size_t ch) const noexcept {
    return data_[index(y, x, ch)];
  }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Channel vector at one pixel.
  std::span<T> pixel(std::size_t y, std::size_t x) noexcept {
    return {data_.data() + index(y, x, 0), shape_.c};
  }
  std::span<const T> pixel(std::size_t y, std::size_t x) const noexcept {
    return {data_.data() + index(y, x, 0), shape_.c};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same storage, reinterpreted shape. numel must match.
  Tensor reshaped(Shape s) const {
    if (s.numel() != shape_.numel()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(s));
    }
    Tensor out = *this;
    out.shape_ = s;
    return out;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " +
                     to_string(b));
  }
}

/// Convolution weight O x kh x kw x I, stored as a tensor of shape (O, kh*kw, I).
template <class T>
struct ConvWeight {
  std::size_t out_channels = 0;
  std::size_t kh = 1;
  std::size_t kw = 1;
  std::size_t in_channels = 0;
  Tensor<T> values;

  ConvWeight() = default;
  ConvWeight(std::size_t o, std::size_t kernel_h, std::size_t kernel_w, std::size_t i)
      : out_channels(o), kh(kernel_h), kw(kernel_w), in_channels(i),
        values(Shape{o, kernel_h * kernel_w, i}) {}

  static Shape storage_shape(std::size_t o, std::size_t kernel_h, std::size_t kernel_w,
                             std::size_t i) {
    return Shape{o, kernel_h * kernel_w, i};
  }

  T& at(std::size_t o, std::size_t dy, std::size_t dx, std::size_t i) {
    return values(o, dy * kw + dx, i);
  }
  const T& at(std::size_t o, std::size_t dy, std::size_t dx, std::size_t i) const {
    return values(o, dy * kw + dx, i);
  }
};

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// max |a-b| / (1 + |b|), b being the reference.
template <class T>
T max_rel_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "max_rel_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]) / (T(1) + std::abs(b[i])));
  }
  return m;
}

}  // namespace aprnet
