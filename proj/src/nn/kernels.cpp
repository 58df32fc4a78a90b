#include "seqsort/nn/kernels.hpp"

#include <omp.h>

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <string>

namespace seqsort::nn {

namespace {

std::atomic<int> g_threads{0};

int threads_from_env() {
  if (const char* env = std::getenv("SEQSORT_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  return omp_get_max_threads();
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using CMapRowVec = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;

constexpr std::size_t kChunkRows = 2048;

// Patch matrix of sample i: row = output pixel, column = (ky*3+kx)*cin + ci.
template <typename T>
void im2col(const Tensor4<T>& x, int i, T* col) {
  const int cin = x.c;
  const std::size_t width = static_cast<std::size_t>(9) * cin;
  for (int oy = 0; oy < x.h; ++oy)
    for (int ox = 0; ox < x.w; ++ox) {
      T* dst = col + (static_cast<std::size_t>(oy) * x.w + ox) * width;
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy + ky - 1;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox + kx - 1;
          T* d = dst + (ky * 3 + kx) * cin;
          if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) {
            std::fill(d, d + cin, T(0));
          } else {
            const T* s = &x.data[x.index(i, iy, ix, 0)];
            std::copy(s, s + cin, d);
          }
        }
      }
    }
}

template <typename T>
void col2im_add(const T* col, int i, Tensor4<T>& dx) {
  const int cin = dx.c;
  const std::size_t width = static_cast<std::size_t>(9) * cin;
  for (int oy = 0; oy < dx.h; ++oy)
    for (int ox = 0; ox < dx.w; ++ox) {
      const T* src = col + (static_cast<std::size_t>(oy) * dx.w + ox) * width;
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy + ky - 1;
        if (iy < 0 || iy >= dx.h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox + kx - 1;
          if (ix < 0 || ix >= dx.w) continue;
          T* d = &dx.data[dx.index(i, iy, ix, 0)];
          const T* s = src + (ky * 3 + kx) * cin;
          for (int ci = 0; ci < cin; ++ci) d[ci] += s[ci];
        }
      }
    }
}

// Per-channel sums over rows, chunked so the result is independent of the
// thread count.
template <typename T, typename F>
std::vector<double> chunked_channel_sum(std::size_t rows, int c, F&& value) {
  const std::size_t chunks = (rows + kChunkRows - 1) / kChunkRows;
  std::vector<double> partial(chunks * c, 0.0);
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (std::ptrdiff_t q = 0; q < static_cast<std::ptrdiff_t>(chunks); ++q) {
    double* acc = &partial[q * c];
    const std::size_t end = std::min(rows, (q + 1) * kChunkRows);
    for (std::size_t r = q * kChunkRows; r < end; ++r)
      for (int k = 0; k < c; ++k) acc[k] += value(r, k);
  }
  std::vector<double> total(c, 0.0);
  for (std::size_t q = 0; q < chunks; ++q)
    for (int k = 0; k < c; ++k) total[k] += partial[q * c + k];
  return total;
}

// Eigen's reductions pick their summation order from the buffer alignment,
// which makes results depend on heap layout; this loop order is fixed.
template <typename T>
void column_sums(const T* m, std::size_t rows, int cols, T* out) {
  std::vector<double> acc(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (int k = 0; k < cols; ++k) acc[k] += m[r * cols + k];
  for (int k = 0; k < cols; ++k) out[k] = static_cast<T>(acc[k]);
}

}  // namespace

int kernel_threads() {
  int n = g_threads.load(std::memory_order_relaxed);
  if (n <= 0) {
    n = threads_from_env();
    g_threads.store(n, std::memory_order_relaxed);
  }
  return n;
}

void set_kernel_threads(int n) { g_threads.store(n > 0 ? n : threads_from_env(), std::memory_order_relaxed); }

template <typename T>
void conv3x3_forward(const Tensor4<T>& x, const std::vector<T>& w, const std::vector<T>& b, int cout, Tensor4<T>& y) {
  const int cin = x.c;
  if (w.size() != static_cast<std::size_t>(9) * cin * cout || b.size() != static_cast<std::size_t>(cout)) {
    fail(ErrorCode::ShapeMismatch, "conv weights do not match input channels");
  }
  y.resize(x.n, x.h, x.w, cout);
  const int hw = x.h * x.w;
  const int width = 9 * cin;
  CMapMat<T> W(w.data(), width, cout);
  CMapRowVec<T> B(b.data(), cout);
#pragma omp parallel num_threads(kernel_threads())
  {
    std::vector<T> col(static_cast<std::size_t>(hw) * width);
#pragma omp for schedule(static)
    for (int i = 0; i < x.n; ++i) {
      im2col(x, i, col.data());
      CMapMat<T> C(col.data(), hw, width);
      MapMat<T> Y(y.row(i), hw, cout);
      Y.noalias() = C * W;
      Y.rowwise() += B;
    }
  }
}

template <typename T>
void conv3x3_backward(const Tensor4<T>& x, const std::vector<T>& w, const Tensor4<T>& dy, Tensor4<T>* dx,
                      std::vector<T>& dw, std::vector<T>& db) {
  const int cin = x.c, cout = dy.c;
  const int hw = x.h * x.w;
  const int width = 9 * cin;
  if (dx) dx->resize(x.n, x.h, x.w, cin);
  std::vector<T> dw_per(static_cast<std::size_t>(x.n) * w.size());
  std::vector<T> db_per(static_cast<std::size_t>(x.n) * cout);
  CMapMat<T> W(w.data(), width, cout);
#pragma omp parallel num_threads(kernel_threads())
  {
    std::vector<T> col(static_cast<std::size_t>(hw) * width);
    std::vector<T> dcol(dx ? col.size() : 0);
#pragma omp for schedule(static)
    for (int i = 0; i < x.n; ++i) {
      im2col(x, i, col.data());
      CMapMat<T> C(col.data(), hw, width);
      CMapMat<T> DY(dy.row(i), hw, cout);
      MapMat<T> DW(&dw_per[static_cast<std::size_t>(i) * w.size()], width, cout);
      DW.noalias() = C.transpose() * DY;
      column_sums(dy.row(i), hw, cout, &db_per[static_cast<std::size_t>(i) * cout]);
      if (dx) {
        MapMat<T> DC(dcol.data(), hw, width);
        DC.noalias() = DY * W.transpose();
        col2im_add(dcol.data(), i, *dx);
      }
    }
  }
  dw.assign(w.size(), T(0));
  db.assign(static_cast<std::size_t>(cout), T(0));
  for (int i = 0; i < x.n; ++i) {
    const T* p = &dw_per[static_cast<std::size_t>(i) * w.size()];
    for (std::size_t k = 0; k < w.size(); ++k) dw[k] += p[k];
    for (int co = 0; co < cout; ++co) db[co] += db_per[static_cast<std::size_t>(i) * cout + co];
  }
}

template <typename T>
void dense_forward(const Tensor4<T>& x, const std::vector<T>& w, const std::vector<T>& b, int m, Tensor4<T>& y) {
  const int k = x.features();
  if (w.size() != static_cast<std::size_t>(k) * m || b.size() != static_cast<std::size_t>(m)) {
    fail(ErrorCode::ShapeMismatch, "dense weights do not match input features");
  }
  y.resize(x.n, 1, 1, m);
  // Each output sums its inputs in index order, so a row's result does not
  // depend on how many other rows share the batch.
  constexpr int kColBlock = 64, kRowBlock = 512;
  const int col_blocks = (m + kColBlock - 1) / kColBlock;
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (int q = 0; q < col_blocks; ++q) {
    const int j0 = q * kColBlock, j1 = std::min(m, j0 + kColBlock);
    for (int i = 0; i < x.n; ++i) std::copy(b.begin() + j0, b.begin() + j1, y.row(i) + j0);
    for (int r0 = 0; r0 < k; r0 += kRowBlock) {
      const int r1 = std::min(k, r0 + kRowBlock);
      for (int i = 0; i < x.n; ++i) {
        const T* xi = x.row(i);
        T* yi = y.row(i);
        for (int r = r0; r < r1; ++r) {
          const T xv = xi[r];
          const T* wr = &w[static_cast<std::size_t>(r) * m];
          for (int j = j0; j < j1; ++j) yi[j] += xv * wr[j];
        }
      }
    }
  }
}

template <typename T>
void dense_backward(const Tensor4<T>& x, const std::vector<T>& w, const Tensor4<T>& dy, Tensor4<T>* dx,
                    std::vector<T>& dw, std::vector<T>& db) {
  const int k = x.features(), m = dy.c, n = x.n;
  dw.assign(w.size(), T(0));
  db.assign(static_cast<std::size_t>(m), T(0));
  CMapMat<T> X(x.data.data(), n, k);
  CMapMat<T> DY(dy.data.data(), n, m);
  // Row blocks of dW are independent GEMMs.
  constexpr int kBlock = 256;
  const int blocks = (k + kBlock - 1) / kBlock;
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (int q = 0; q < blocks; ++q) {
    const int r0 = q * kBlock, rows = std::min(kBlock, k - r0);
    MapMat<T>(&dw[static_cast<std::size_t>(r0) * m], rows, m).noalias() = X.middleCols(r0, rows).transpose() * DY;
  }
  column_sums(dy.data.data(), n, m, db.data());
  if (dx) {
    dx->resize(x.n, x.h, x.w, x.c);
    MapMat<T>(dx->data.data(), n, k).noalias() = DY * CMapMat<T>(w.data(), k, m).transpose();
  }
}

template <typename T>
void batchnorm_forward_train(const Tensor4<T>& x, const std::vector<T>& gamma, const std::vector<T>& beta, double eps,
                             Tensor4<T>& y, BatchNormCache<T>& cache) {
  if (x.n < 2) fail(ErrorCode::BatchTooSmall, "batch norm in train mode needs batch >= 2");
  const int c = x.c;
  const std::size_t rows = x.size() / c;
  const auto sum = chunked_channel_sum<T>(rows, c, [&](std::size_t r, int k) { return x.data[r * c + k]; });
  std::vector<double> mean(c);
  for (int k = 0; k < c; ++k) mean[k] = sum[k] / rows;
  const auto sq = chunked_channel_sum<T>(rows, c, [&](std::size_t r, int k) {
    const double d = x.data[r * c + k] - mean[k];
    return d * d;
  });
  cache.mean.resize(c);
  cache.var.resize(c);
  cache.invstd.resize(c);
  for (int k = 0; k < c; ++k) {
    cache.mean[k] = static_cast<T>(mean[k]);
    cache.var[k] = static_cast<T>(sq[k] / rows);
    cache.invstd[k] = static_cast<T>(1.0 / std::sqrt(sq[k] / rows + eps));
  }
  cache.xhat.resize(x.n, x.h, x.w, c);
  y.resize(x.n, x.h, x.w, c);
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r)
    for (int k = 0; k < c; ++k) {
      const T xh = (x.data[r * c + k] - cache.mean[k]) * cache.invstd[k];
      cache.xhat.data[r * c + k] = xh;
      y.data[r * c + k] = gamma[k] * xh + beta[k];
    }
}

template <typename T>
void batchnorm_forward_infer(const Tensor4<T>& x, const std::vector<T>& gamma, const std::vector<T>& beta,
                             const std::vector<T>& running_mean, const std::vector<T>& running_var, double eps,
                             Tensor4<T>& y) {
  const int c = x.c;
  const std::size_t rows = x.size() / c;
  std::vector<T> inv(c);
  for (int k = 0; k < c; ++k) inv[k] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[k]) + eps));
  y.resize(x.n, x.h, x.w, c);
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r)
    for (int k = 0; k < c; ++k) y.data[r * c + k] = gamma[k] * (x.data[r * c + k] - running_mean[k]) * inv[k] + beta[k];
}

template <typename T>
void batchnorm_backward(const Tensor4<T>& dy, const std::vector<T>& gamma, const BatchNormCache<T>& cache,
                        Tensor4<T>& dx, std::vector<T>& dgamma, std::vector<T>& dbeta) {
  const int c = dy.c;
  const std::size_t rows = dy.size() / c;
  const auto sg = chunked_channel_sum<T>(
      rows, c, [&](std::size_t r, int k) { return static_cast<double>(dy.data[r * c + k]) * cache.xhat.data[r * c + k]; });
  const auto sb = chunked_channel_sum<T>(rows, c, [&](std::size_t r, int k) { return dy.data[r * c + k]; });
  dgamma.resize(c);
  dbeta.resize(c);
  for (int k = 0; k < c; ++k) {
    dgamma[k] = static_cast<T>(sg[k]);
    dbeta[k] = static_cast<T>(sb[k]);
  }
  dx.resize(dy.n, dy.h, dy.w, c);
  const T m = static_cast<T>(rows);
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r)
    for (int k = 0; k < c; ++k) {
      const T scale = gamma[k] * cache.invstd[k] / m;
      dx.data[r * c + k] = scale * (m * dy.data[r * c + k] - dbeta[k] - cache.xhat.data[r * c + k] * dgamma[k]);
    }
}

template <typename T>
void relu_forward(Tensor4<T>& x) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (std::ptrdiff_t i = 0; i < n; ++i) x.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
}

template <typename T>
void relu_backward(const Tensor4<T>& out, Tensor4<T>& dy) {
  const auto n = static_cast<std::ptrdiff_t>(dy.size());
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (std::ptrdiff_t i = 0; i < n; ++i)
    if (!(out.data[i] > T(0))) dy.data[i] = T(0);
}

template <typename T>
void maxpool2_forward(const Tensor4<T>& x, Tensor4<T>& y, std::vector<std::int64_t>& argmax) {
  if (x.h % 2 != 0 || x.w % 2 != 0) fail(ErrorCode::OddSpatialDim, "max pool needs even spatial dims");
  y.resize(x.n, x.h / 2, x.w / 2, x.c);
  argmax.assign(y.size(), 0);
  const int planes = x.n * y.h;
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (int p = 0; p < planes; ++p) {
    const int i = p / y.h, oy = p % y.h;
    for (int ox = 0; ox < y.w; ++ox)
      for (int k = 0; k < x.c; ++k) {
        std::size_t best = x.index(i, 2 * oy, 2 * ox, k);
        const std::size_t cand[3] = {x.index(i, 2 * oy, 2 * ox + 1, k), x.index(i, 2 * oy + 1, 2 * ox, k),
                                     x.index(i, 2 * oy + 1, 2 * ox + 1, k)};
        for (std::size_t idx : cand)
          if (x.data[idx] > x.data[best]) best = idx;
        const std::size_t o = y.index(i, oy, ox, k);
        y.data[o] = x.data[best];
        argmax[o] = static_cast<std::int64_t>(best);
      }
  }
}

template <typename T>
void maxpool2_backward(const Tensor4<T>& dy, const std::vector<std::int64_t>& argmax, const Tensor4<T>& x_shape,
                       Tensor4<T>& dx) {
  dx.resize(x_shape.n, x_shape.h, x_shape.w, x_shape.c);
  // Windows do not overlap, so every input element has at most one writer.
  const auto n = static_cast<std::ptrdiff_t>(dy.size());
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (std::ptrdiff_t o = 0; o < n; ++o) dx.data[static_cast<std::size_t>(argmax[o])] += dy.data[o];
}

template <typename T>
void channel_mask_apply(Tensor4<T>& x, const std::vector<T>& mask) {
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  const auto rows = static_cast<std::ptrdiff_t>(static_cast<std::size_t>(x.n) * plane);
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const T* m = &mask[static_cast<std::size_t>(r / plane) * x.c];
    T* v = &x.data[static_cast<std::size_t>(r) * x.c];
    for (int k = 0; k < x.c; ++k) v[k] *= m[k];
  }
}

#define SEQSORT_INSTANTIATE(T)                                                                                        \
  template void conv3x3_forward<T>(const Tensor4<T>&, const std::vector<T>&, const std::vector<T>&, int,             \
                                   Tensor4<T>&);                                                                      \
  template void conv3x3_backward<T>(const Tensor4<T>&, const std::vector<T>&, const Tensor4<T>&, Tensor4<T>*,       \
                                    std::vector<T>&, std::vector<T>&);                                                \
  template void dense_forward<T>(const Tensor4<T>&, const std::vector<T>&, const std::vector<T>&, int, Tensor4<T>&); \
  template void dense_backward<T>(const Tensor4<T>&, const std::vector<T>&, const Tensor4<T>&, Tensor4<T>*,         \
                                  std::vector<T>&, std::vector<T>&);                                                  \
  template void batchnorm_forward_train<T>(const Tensor4<T>&, const std::vector<T>&, const std::vector<T>&, double,  \
                                           Tensor4<T>&, BatchNormCache<T>&);                                          \
  template void batchnorm_forward_infer<T>(const Tensor4<T>&, const std::vector<T>&, const std::vector<T>&,          \
                                           const std::vector<T>&, const std::vector<T>&, double, Tensor4<T>&);        \
  template void batchnorm_backward<T>(const Tensor4<T>&, const std::vector<T>&, const BatchNormCache<T>&,            \
                                      Tensor4<T>&, std::vector<T>&, std::vector<T>&);                                 \
  template void relu_forward<T>(Tensor4<T>&);                                                                         \
  template void relu_backward<T>(const Tensor4<T>&, Tensor4<T>&);                                                     \
  template void maxpool2_forward<T>(const Tensor4<T>&, Tensor4<T>&, std::vector<std::int64_t>&);                      \
  template void maxpool2_backward<T>(const Tensor4<T>&, const std::vector<std::int64_t>&, const Tensor4<T>&,         \
                                     Tensor4<T>&);                                                                    \
  template void channel_mask_apply<T>(Tensor4<T>&, const std::vector<T>&);

SEQSORT_INSTANTIATE(float)
SEQSORT_INSTANTIATE(double)

#undef SEQSORT_INSTANTIATE

}  // namespace seqsort::nn
