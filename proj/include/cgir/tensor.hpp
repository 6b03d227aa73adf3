#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "cgir/common.hpp"

namespace cgir {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);

// Dense row-major double tensor. Copies are shallow (shared buffer); clone()
// is the deep copy. Reshapes share the buffer, so views stay cheap.
class Tensor {
 public:
  Tensor() = default;

  static Tensor empty(Shape shape) {
    Tensor t;
    t.init(std::move(shape), /*zero=*/false);
    return t;
  }

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.init(std::move(shape), /*zero=*/true);
    return t;
  }

  static Tensor full(Shape shape, Scalar v) {
    Tensor t = empty(std::move(shape));
    std::fill(t.data(), t.data() + t.numel(), v);
    return t;
  }

  static Tensor scalar(Scalar v) { return full({1}, v); }

  static Tensor from(Shape shape, std::vector<Scalar> values) {
    Tensor t = empty(std::move(shape));
    check_shape(static_cast<int64_t>(values.size()) == t.numel(),
                "Tensor::from: value count does not match shape");
    std::copy(values.begin(), values.end(), t.data());
    return t;
  }

  bool defined() const { return static_cast<bool>(buf_); }
  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int i) const {
    check_shape(i >= 0 && i < rank(), "Tensor::dim: axis out of range");
    return shape_[static_cast<size_t>(i)];
  }
  int64_t numel() const { return numel_; }

  Scalar* data() { return buf_.get(); }
  const Scalar* data() const { return buf_.get(); }

  Scalar& operator[](int64_t i) { return buf_.get()[i]; }
  Scalar operator[](int64_t i) const { return buf_.get()[i]; }

  int64_t offset(std::initializer_list<int64_t> idx) const {
    check_shape(static_cast<int64_t>(idx.size()) == rank(),
                "Tensor::offset: index rank mismatch");
    int64_t off = 0;
    size_t d = 0;
    for (int64_t i : idx) {
      off = off * shape_[d] + i;
      ++d;
    }
    return off;
  }

  Scalar& at(std::initializer_list<int64_t> idx) { return buf_.get()[offset(idx)]; }
  Scalar at(std::initializer_list<int64_t> idx) const { return buf_.get()[offset(idx)]; }

  Tensor clone() const {
    Tensor t = empty(shape_);
    if (numel_ > 0) std::memcpy(t.data(), data(), sizeof(Scalar) * static_cast<size_t>(numel_));
    return t;
  }

  // Shares the buffer. One axis may be -1 (inferred).
  Tensor reshaped(Shape shape) const {
    int64_t known = 1;
    int infer = -1;
    for (size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] == -1) {
        check_shape(infer == -1, "Tensor::reshaped: more than one inferred axis");
        infer = static_cast<int>(i);
      } else {
        check_shape(shape[i] > 0, "Tensor::reshaped: nonpositive axis");
        known *= shape[i];
      }
    }
    if (infer >= 0) {
      check_shape(known > 0 && numel_ % known == 0,
                  "Tensor::reshaped: cannot infer axis for " + shape_str(shape));
      shape[static_cast<size_t>(infer)] = numel_ / known;
      known = numel_;
    }
    check_shape(known == numel_, "Tensor::reshaped: element count mismatch, have " +
                                     shape_str(shape_) + " want " + shape_str(shape));
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  void fill(Scalar v) { std::fill(data(), data() + numel_, v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  void init(Shape shape, bool zero) {
    int64_t n = 1;
    for (int64_t d : shape) {
      check_shape(d > 0, "Tensor: axes must be positive, got " + shape_str(shape));
      n *= d;
    }
    shape_ = std::move(shape);
    numel_ = n;
    buf_ = std::shared_ptr<Scalar[]>(new Scalar[static_cast<size_t>(n)]);
    if (zero) std::memset(buf_.get(), 0, sizeof(Scalar) * static_cast<size_t>(n));
  }

  Shape shape_;
  int64_t numel_ = 0;
  std::shared_ptr<Scalar[]> buf_;
};

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

// Elementwise helpers used by optimizer/metric code that works on raw tensors.
Scalar max_abs(const Tensor& t);
Scalar max_abs_diff(const Tensor& a, const Tensor& b);
bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace cgir
