#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "seqdab/errors.hpp"
#include "seqdab/rng.hpp"

namespace seqdab {

// Dense shape, outermost extent first. Layout is row-major with the last
// axis fastest; a (b, c, n, h, w) activation therefore keeps each frame's
// rows contiguous and successive frames of one channel at stride h*w.
using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) {
    check_shape(e >= 0, "negative extent in shape");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using Map = Eigen::Map<Array>;
  using ConstMap = Eigen::Map<const Array>;

  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(Array::Zero(static_cast<Eigen::Index>(shape_numel(shape_)))) {}
  Tensor(Shape shape, const std::vector<Scalar>& data) : shape_(std::move(shape)) {
    check_shape(static_cast<std::int64_t>(data.size()) == shape_numel(shape_),
                "data size does not match shape " + shape_str(shape_));
    data_ = ConstMap(data.data(), static_cast<Eigen::Index>(data.size()));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  // Storage is left uninitialized; for outputs that are written in full
  // before being read.
  static Tensor uninit(Shape shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.resize(static_cast<Eigen::Index>(shape_numel(t.shape_)));
    return t;
  }

  static Tensor full(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    t.map().setConstant(v);
    return t;
  }

  static Tensor randn(Shape shape, Rng& rng, Scalar stddev = Scalar(1)) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> d(0.0, static_cast<double>(stddev));
    for (auto& v : t.data_) v = static_cast<Scalar>(d(rng));
    return t;
  }

  static Tensor uniform(Shape shape, Rng& rng, Scalar lo, Scalar hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> d(static_cast<double>(lo),
                                             static_cast<double>(hi));
    for (auto& v : t.data_) v = static_cast<Scalar>(d(rng));
    return t;
  }

  bool empty() const { return data_.size() == 0; }
  int rank() const { return static_cast<int>(shape_.size()); }
  const Shape& shape() const { return shape_; }
  int dim(int i) const {
    check_shape(i >= 0 && i < rank(), "axis out of range");
    return shape_[static_cast<std::size_t>(i)];
  }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Map map() { return Map(data_.data(), static_cast<Eigen::Index>(data_.size())); }
  ConstMap map() const {
    return ConstMap(data_.data(), static_cast<Eigen::Index>(data_.size()));
  }

  // Unchecked flat access.
  Scalar& operator[](std::int64_t i) { return data_[static_cast<Eigen::Index>(i)]; }
  Scalar operator[](std::int64_t i) const { return data_[static_cast<Eigen::Index>(i)]; }

  // Unchecked multi-index access; index count must equal rank.
  template <typename... Ix>
  Scalar& operator()(Ix... ix) {
    return data_[static_cast<Eigen::Index>(offset_of(ix...))];
  }
  template <typename... Ix>
  Scalar operator()(Ix... ix) const {
    return data_[static_cast<Eigen::Index>(offset_of(ix...))];
  }

  template <typename... Ix>
  Scalar& at(Ix... ix) {
    return data_[static_cast<Eigen::Index>(checked_offset_of(ix...))];
  }
  template <typename... Ix>
  Scalar at(Ix... ix) const {
    return data_[static_cast<Eigen::Index>(checked_offset_of(ix...))];
  }

  Tensor reshaped(Shape shape) const {
    check_shape(shape_numel(shape) == numel(),
                "reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                    " changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape_);
    for (std::int64_t i = 0; i < numel(); ++i)
      out[i] = static_cast<T>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

  bool all_finite() const {
    for (const auto& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor& operator+=(const Tensor& o) {
    check_shape(same_shape(o), "shape mismatch " + shape_str(shape_) + " vs " +
                                   shape_str(o.shape_));
    map() += o.map();
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_shape(same_shape(o), "shape mismatch " + shape_str(shape_) + " vs " +
                                   shape_str(o.shape_));
    map() -= o.map();
    return *this;
  }
  Tensor& operator*=(Scalar s) {
    map() *= s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, Scalar s) { return a *= s; }
  friend Tensor operator*(Scalar s, Tensor a) { return a *= s; }

 private:
  template <typename... Ix>
  std::int64_t offset_of(Ix... ix) const {
    const std::int64_t idx[] = {static_cast<std::int64_t>(ix)...};
    std::int64_t off = 0;
    for (std::size_t d = 0; d < sizeof...(Ix); ++d)
      off = off * shape_[d] + idx[d];
    return off;
  }

  template <typename... Ix>
  std::int64_t checked_offset_of(Ix... ix) const {
    check_shape(static_cast<int>(sizeof...(Ix)) == rank(),
                "index arity does not match rank");
    const std::int64_t idx[] = {static_cast<std::int64_t>(ix)...};
    std::int64_t off = 0;
    for (std::size_t d = 0; d < sizeof...(Ix); ++d) {
      check_shape(idx[d] >= 0 && idx[d] < shape_[d],
                  "index out of range on axis " + std::to_string(d));
      off = off * shape_[d] + idx[d];
    }
    return off;
  }

  Shape shape_;
  Array data_;
};

template <typename S>
S max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  check_shape(a.same_shape(b), "max_abs_diff shape mismatch");
  if (a.numel() == 0) return S(0);
  return (a.map() - b.map()).abs().maxCoeff();
}

// Largest elementwise |a-b| relative to the magnitude scale of the two
// tensors. Near-zero entries produced by cancellation make a per-element
// relative comparison meaningless, so the denominator is the max-norm.
template <typename S>
double max_scaled_diff(const Tensor<S>& a, const Tensor<S>& b) {
  check_shape(a.same_shape(b), "max_scaled_diff shape mismatch");
  if (a.numel() == 0) return 0.0;
  const double scale =
      std::max({1e-12, static_cast<double>(a.map().abs().maxCoeff()),
                static_cast<double>(b.map().abs().maxCoeff())});
  return static_cast<double>(max_abs_diff(a, b)) / scale;
}

// Largest elementwise |a-b| / max(ref_floor, |a|+|b|).
template <typename S>
double max_rel_diff(const Tensor<S>& a, const Tensor<S>& b,
                    double ref_floor = 1e-6) {
  check_shape(a.same_shape(b), "max_rel_diff shape mismatch");
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double x = static_cast<double>(a[i]);
    const double y = static_cast<double>(b[i]);
    const double denom = std::max(ref_floor, std::abs(x) + std::abs(y));
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

}  // namespace seqdab
