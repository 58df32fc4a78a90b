#pragma once

// Straight-loop serial kernels. They define the numerics that the parallel
// kernels in kernels.hpp must reproduce, and are used as the comparison
// route in tests and benchmarks.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "seqsort/nn/tensor.hpp"

namespace seqsort::nn {

/// Per-channel statistics of a batch-norm forward in train mode.
template <typename T>
struct BatchNormCache {
  Tensor4<T> xhat;
  std::vector<T> mean, var, invstd;  // biased batch variance
};

}  // namespace seqsort::nn

namespace seqsort::nn::ref {

/// 3x3 cross-correlation, stride 1, zero padding 1. w is HWIO (3,3,cin,cout).
template <typename T>
void conv3x3_forward(const Tensor4<T>& x, const std::vector<T>& w, const std::vector<T>& b, int cout, Tensor4<T>& y) {
  const int cin = x.c;
  if (w.size() != static_cast<std::size_t>(9) * cin * cout || b.size() != static_cast<std::size_t>(cout)) {
    fail(ErrorCode::ShapeMismatch, "conv weights do not match input channels");
  }
  y.resize(x.n, x.h, x.w, cout);
  for (int i = 0; i < x.n; ++i)
    for (int oy = 0; oy < x.h; ++oy)
      for (int ox = 0; ox < x.w; ++ox)
        for (int co = 0; co < cout; ++co) {
          T acc = b[co];
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy + ky - 1;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox + kx - 1;
              if (ix < 0 || ix >= x.w) continue;
              for (int ci = 0; ci < cin; ++ci) acc += x(i, iy, ix, ci) * w[((ky * 3 + kx) * cin + ci) * cout + co];
            }
          }
          y(i, oy, ox, co) = acc;
        }
}

/// Accumulation order: samples outer, so dw matches a per-sample reduction.
template <typename T>
void conv3x3_backward(const Tensor4<T>& x, const std::vector<T>& w, const Tensor4<T>& dy, Tensor4<T>* dx,
                      std::vector<T>& dw, std::vector<T>& db) {
  const int cin = x.c, cout = dy.c;
  dw.assign(w.size(), T(0));
  db.assign(static_cast<std::size_t>(cout), T(0));
  if (dx) dx->resize(x.n, x.h, x.w, cin);
  for (int i = 0; i < x.n; ++i) {
    std::vector<T> dwi(w.size(), T(0));
    std::vector<T> dbi(static_cast<std::size_t>(cout), T(0));
    for (int oy = 0; oy < x.h; ++oy)
      for (int ox = 0; ox < x.w; ++ox)
        for (int co = 0; co < cout; ++co) {
          const T g = dy(i, oy, ox, co);
          dbi[co] += g;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy + ky - 1;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox + kx - 1;
              if (ix < 0 || ix >= x.w) continue;
              for (int ci = 0; ci < cin; ++ci) {
                const std::size_t wi = static_cast<std::size_t>((ky * 3 + kx) * cin + ci) * cout + co;
                dwi[wi] += g * x(i, iy, ix, ci);
                if (dx) (*dx)(i, iy, ix, ci) += g * w[wi];
              }
            }
          }
        }
    for (std::size_t k = 0; k < dw.size(); ++k) dw[k] += dwi[k];
    for (int co = 0; co < cout; ++co) db[co] += dbi[co];
  }
}

/// y = x W + b with x (n, k), W (k, m) row-major.
template <typename T>
void dense_forward(const Tensor4<T>& x, const std::vector<T>& w, const std::vector<T>& b, int m, Tensor4<T>& y) {
  const int k = x.features();
  if (w.size() != static_cast<std::size_t>(k) * m || b.size() != static_cast<std::size_t>(m)) {
    fail(ErrorCode::ShapeMismatch, "dense weights do not match input features");
  }
  y.resize(x.n, 1, 1, m);
  for (int i = 0; i < x.n; ++i)
    for (int j = 0; j < m; ++j) {
      T acc = b[j];
      for (int q = 0; q < k; ++q) acc += x.row(i)[q] * w[static_cast<std::size_t>(q) * m + j];
      y.row(i)[j] = acc;
    }
}

template <typename T>
void dense_backward(const Tensor4<T>& x, const std::vector<T>& w, const Tensor4<T>& dy, Tensor4<T>* dx,
                    std::vector<T>& dw, std::vector<T>& db) {
  const int k = x.features(), m = dy.c;
  dw.assign(w.size(), T(0));
  db.assign(static_cast<std::size_t>(m), T(0));
  if (dx) dx->resize(x.n, x.h, x.w, x.c);
  for (int i = 0; i < x.n; ++i)
    for (int j = 0; j < m; ++j) {
      const T g = dy.row(i)[j];
      db[j] += g;
      for (int q = 0; q < k; ++q) {
        dw[static_cast<std::size_t>(q) * m + j] += x.row(i)[q] * g;
        if (dx) dx->row(i)[q] += g * w[static_cast<std::size_t>(q) * m + j];
      }
    }
}

template <typename T>
void batchnorm_forward_train(const Tensor4<T>& x, const std::vector<T>& gamma, const std::vector<T>& beta, double eps,
                             Tensor4<T>& y, BatchNormCache<T>& cache) {
  const int c = x.c;
  const std::size_t m = x.size() / c;
  if (x.n < 2) fail(ErrorCode::BatchTooSmall, "batch norm in train mode needs batch >= 2");
  cache.mean.assign(c, T(0));
  cache.var.assign(c, T(0));
  cache.invstd.assign(c, T(0));
  for (int k = 0; k < c; ++k) {
    double s = 0;
    for (std::size_t r = 0; r < m; ++r) s += x.data[r * c + k];
    const double mu = s / m;
    double v = 0;
    for (std::size_t r = 0; r < m; ++r) {
      const double d = x.data[r * c + k] - mu;
      v += d * d;
    }
    cache.mean[k] = static_cast<T>(mu);
    cache.var[k] = static_cast<T>(v / m);
    cache.invstd[k] = static_cast<T>(1.0 / std::sqrt(v / m + eps));
  }
  cache.xhat.resize(x.n, x.h, x.w, c);
  y.resize(x.n, x.h, x.w, c);
  for (std::size_t r = 0; r < m; ++r)
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
  const std::size_t m = x.size() / c;
  y.resize(x.n, x.h, x.w, c);
  for (std::size_t r = 0; r < m; ++r)
    for (int k = 0; k < c; ++k) {
      const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[k]) + eps));
      y.data[r * c + k] = gamma[k] * (x.data[r * c + k] - running_mean[k]) * inv + beta[k];
    }
}

template <typename T>
void batchnorm_backward(const Tensor4<T>& dy, const std::vector<T>& gamma, const BatchNormCache<T>& cache,
                        Tensor4<T>& dx, std::vector<T>& dgamma, std::vector<T>& dbeta) {
  const int c = dy.c;
  const std::size_t m = dy.size() / c;
  dgamma.assign(c, T(0));
  dbeta.assign(c, T(0));
  for (int k = 0; k < c; ++k) {
    double sg = 0, sb = 0;
    for (std::size_t r = 0; r < m; ++r) {
      sg += static_cast<double>(dy.data[r * c + k]) * cache.xhat.data[r * c + k];
      sb += dy.data[r * c + k];
    }
    dgamma[k] = static_cast<T>(sg);
    dbeta[k] = static_cast<T>(sb);
  }
  dx.resize(dy.n, dy.h, dy.w, c);
  for (std::size_t r = 0; r < m; ++r)
    for (int k = 0; k < c; ++k) {
      const T scale = gamma[k] * cache.invstd[k] / static_cast<T>(m);
      dx.data[r * c + k] =
          scale * (static_cast<T>(m) * dy.data[r * c + k] - dbeta[k] - cache.xhat.data[r * c + k] * dgamma[k]);
    }
}

template <typename T>
void relu_forward(Tensor4<T>& x) {
  for (auto& v : x.data) v = v > T(0) ? v : T(0);
}

/// Gradient through ReLU given its output.
template <typename T>
void relu_backward(const Tensor4<T>& out, Tensor4<T>& dy) {
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (!(out.data[i] > T(0))) dy.data[i] = T(0);
}

/// 2x2 / stride 2 max pool. argmax holds the flat input index of each output's
/// winner; ties keep the first position in row-major window order.
template <typename T>
void maxpool2_forward(const Tensor4<T>& x, Tensor4<T>& y, std::vector<std::int64_t>& argmax) {
  if (x.h % 2 != 0 || x.w % 2 != 0) fail(ErrorCode::OddSpatialDim, "max pool needs even spatial dims");
  y.resize(x.n, x.h / 2, x.w / 2, x.c);
  argmax.assign(y.size(), 0);
  for (int i = 0; i < x.n; ++i)
    for (int oy = 0; oy < y.h; ++oy)
      for (int ox = 0; ox < y.w; ++ox)
        for (int k = 0; k < x.c; ++k) {
          std::size_t best = x.index(i, 2 * oy, 2 * ox, k);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx = x.index(i, 2 * oy + dy, 2 * ox + dx, k);
              if (x.data[idx] > x.data[best]) best = idx;
            }
          const std::size_t o = y.index(i, oy, ox, k);
          y.data[o] = x.data[best];
          argmax[o] = static_cast<std::int64_t>(best);
        }
}

template <typename T>
void maxpool2_backward(const Tensor4<T>& dy, const std::vector<std::int64_t>& argmax, const Tensor4<T>& x_shape,
                       Tensor4<T>& dx) {
  dx.resize(x_shape.n, x_shape.h, x_shape.w, x_shape.c);
  for (std::size_t o = 0; o < dy.size(); ++o) dx.data[static_cast<std::size_t>(argmax[o])] += dy.data[o];
}

/// Multiplies each (sample, channel) plane by mask[i * c + k].
template <typename T>
void channel_mask_apply(Tensor4<T>& x, const std::vector<T>& mask) {
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  for (int i = 0; i < x.n; ++i)
    for (std::size_t p = 0; p < plane; ++p)
      for (int k = 0; k < x.c; ++k) x.data[(i * plane + p) * x.c + k] *= mask[static_cast<std::size_t>(i) * x.c + k];
}

/// Mean softmax cross-entropy of one head and its logit gradient (already /n).
template <typename T>
double softmax_cross_entropy(const Tensor4<T>& logits, const std::vector<int>& target, Tensor4<T>* dlogits) {
  const int n = logits.n, k = logits.c;
  double loss = 0;
  if (dlogits) dlogits->resize(n, 1, 1, k);
  for (int i = 0; i < n; ++i) {
    if (target[i] < 0 || target[i] >= k) fail(ErrorCode::IndexOutOfRange, "target class out of range");
    const T* z = logits.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(z[j]));
    double s = 0;
    for (int j = 0; j < k; ++j) s += std::exp(z[j] - mx);
    const double lse = mx + std::log(s);
    loss += lse - z[target[i]];
    if (dlogits) {
      for (int j = 0; j < k; ++j) {
        const double p = std::exp(z[j] - lse);
        dlogits->row(i)[j] = static_cast<T>((p - (j == target[i] ? 1.0 : 0.0)) / n);
      }
    }
  }
  return loss / n;
}

}  // namespace seqsort::nn::ref
