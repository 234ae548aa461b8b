#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "nlccam/error.hpp"

namespace nlccam {

using Shape = std::vector<std::size_t>;

// Dense row-major array of doubles, rank 1 to 4.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(element_count(shape_), 0.0);
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != element_count(shape_)) {
      throw DimensionError(detail::concat("tensor data length ", data_.size(),
                                          " does not match shape ",
                                          detail::shape_string(shape_)));
    }
  }

  static Tensor filled(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  // Same data, new extents with the same element count.
  Tensor reshaped(Shape shape) const {
    if (element_count(shape) != data_.size()) {
      throw DimensionError(detail::concat("cannot reshape ", detail::shape_string(shape_),
                                          " to ", detail::shape_string(shape)));
    }
    return Tensor(std::move(shape), data_);
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  static void check_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 4) {
      throw DimensionError(detail::concat("tensor rank must be 1..4, got ", shape.size()));
    }
    for (auto e : shape) {
      if (e == 0) {
        throw DimensionError("zero extent in tensor shape " + detail::shape_string(shape));
      }
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(detail::concat(what, ": expected rank ", rank, ", got shape ",
                                        detail::shape_string(t.shape())));
  }
}

namespace detail {

// C (m x n) (+)= op(A) * op(B), where op(A) is m x k and op(B) is k x n.
// A is stored m x k (or k x m when trans_a); B is k x n (or n x k when trans_b).
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 const double* a, const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  if (!trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * m + i] : a[i * k + p];
        if (av == 0.0) continue;
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b + j * k;
        double acc = 0.0;
        if (trans_a) {
          for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * brow[p];
        } else {
          const double* arow = a + i * k;
          for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        }
        crow[j] += acc;
      }
    }
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw DimensionError(detail::concat("matmul shape mismatch: ", detail::shape_string(a.shape()),
                                        " x ", detail::shape_string(b.shape())));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor c({m, n});
  detail::gemm(false, false, m, n, k, a.data().data(), b.data().data(), c.data().data(), false);
  return c;
}

inline Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.extent(0), c = a.extent(1);
  Tensor t({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

inline Tensor softmax(const Tensor& v) {
  if (v.rank() != 1) {
    throw DimensionError("softmax expects a vector, got " + detail::shape_string(v.shape()));
  }
  const auto in = v.data();
  const double hi = *std::max_element(in.begin(), in.end());
  Tensor out(v.shape());
  double sum = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = std::exp(in[i] - hi);
    sum += out[i];
  }
  for (auto& x : out.data()) x /= sum;
  return out;
}

inline Tensor spatial_mean(const Tensor& f) {
  require_rank(f, 3, "spatial_mean");
  const std::size_t c = f.extent(0), hw = f.extent(1) * f.extent(2);
  Tensor out({c});
  const auto in = f.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += in[ch * hw + i];
    out[ch] = s / static_cast<double>(hw);
  }
  return out;
}

// Align-corners bilinear interpolation of a 2-D map.
inline Tensor bilinear_resize(const Tensor& m, std::size_t out_h, std::size_t out_w) {
  require_rank(m, 2, "bilinear_resize");
  if (out_h == 0 || out_w == 0) {
    throw DimensionError(detail::concat("bilinear_resize target has zero extent: ", out_h, "x", out_w));
  }
  const std::size_t h = m.extent(0), w = m.extent(1);
  if (h == out_h && w == out_w) return m;

  auto source_coord = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
    if (n_out == 1 || n_in == 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
  };

  Tensor out({out_h, out_w});
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = source_coord(y, out_h, h);
    const auto y0 = std::min(static_cast<std::size_t>(sy), h - 1);
    const auto y1 = std::min(y0 + 1, h - 1);
    const double ty = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = source_coord(x, out_w, w);
      const auto x0 = std::min(static_cast<std::size_t>(sx), w - 1);
      const auto x1 = std::min(x0 + 1, w - 1);
      const double tx = sx - static_cast<double>(x0);
      const double top = m.at(y0, x0) * (1.0 - tx) + m.at(y0, x1) * tx;
      const double bottom = m.at(y1, x0) * (1.0 - tx) + m.at(y1, x1) * tx;
      out.at(y, x) = top * (1.0 - ty) + bottom * ty;
    }
  }
  return out;
}

}  // namespace nlccam
