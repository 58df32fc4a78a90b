#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "seqsort/error.hpp"

namespace seqsort::nn {

/// Dense NHWC tensor. Rank-2 data (batch x features) uses h = w = 1.
template <typename T>
struct Tensor4 {
  int n = 0, h = 0, w = 0, c = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int h_, int w_, int c_, T fill = T(0))
      : n(n_), h(h_), w(w_), c(c_), data(static_cast<std::size_t>(n_) * h_ * w_ * c_, fill) {}

  std::size_t size() const noexcept { return data.size(); }
  std::size_t index(int i, int y, int x, int k) const noexcept {
    return ((static_cast<std::size_t>(i) * h + y) * w + x) * c + k;
  }
  T& operator()(int i, int y, int x, int k) noexcept { return data[index(i, y, x, k)]; }
  T operator()(int i, int y, int x, int k) const noexcept { return data[index(i, y, x, k)]; }

  /// Row `i` of a rank-2 view.
  T* row(int i) noexcept { return data.data() + static_cast<std::size_t>(i) * h * w * c; }
  const T* row(int i) const noexcept { return data.data() + static_cast<std::size_t>(i) * h * w * c; }
  int features() const noexcept { return h * w * c; }

  void resize(int n_, int h_, int w_, int c_) {
    n = n_, h = h_, w = w_, c = c_;
    data.assign(static_cast<std::size_t>(n_) * h_ * w_ * c_, T(0));
  }
  bool same_shape(const Tensor4& o) const noexcept { return n == o.n && h == o.h && w == o.w && c == o.c; }
  std::string shape_string() const {
    return "(" + std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) + "," + std::to_string(c) + ")";
  }
};

template <typename T>
Tensor4<T> as_matrix(int rows, int cols, std::vector<T> values) {
  Tensor4<T> t(rows, 1, 1, cols);
  if (values.size() != t.size()) fail(ErrorCode::ShapeMismatch, "matrix data length");
  t.data = std::move(values);
  return t;
}

}  // namespace seqsort::nn
