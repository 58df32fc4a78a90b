#pragma once

// OpenMP kernels used by the model. Signatures mirror nn::ref. Results do not
// depend on the thread count: work is split per sample or per fixed-size
// chunk and partial sums are reduced in index order.

#include <cstdint>
#include <vector>

#include "seqsort/nn/kernels_reference.hpp"
#include "seqsort/nn/tensor.hpp"

namespace seqsort::nn {

/// Worker thread count for the parallel kernels (SEQSORT_THREADS, else the
/// OpenMP default).
int kernel_threads();
void set_kernel_threads(int n);

template <typename T>
void conv3x3_forward(const Tensor4<T>& x, const std::vector<T>& w, const std::vector<T>& b, int cout, Tensor4<T>& y);

/// dx may be null when the input gradient is not needed (first layer).
template <typename T>
void conv3x3_backward(const Tensor4<T>& x, const std::vector<T>& w, const Tensor4<T>& dy, Tensor4<T>* dx,
                      std::vector<T>& dw, std::vector<T>& db);

template <typename T>
void dense_forward(const Tensor4<T>& x, const std::vector<T>& w, const std::vector<T>& b, int m, Tensor4<T>& y);

template <typename T>
void dense_backward(const Tensor4<T>& x, const std::vector<T>& w, const Tensor4<T>& dy, Tensor4<T>* dx,
                    std::vector<T>& dw, std::vector<T>& db);

template <typename T>
void batchnorm_forward_train(const Tensor4<T>& x, const std::vector<T>& gamma, const std::vector<T>& beta, double eps,
                             Tensor4<T>& y, BatchNormCache<T>& cache);

template <typename T>
void batchnorm_forward_infer(const Tensor4<T>& x, const std::vector<T>& gamma, const std::vector<T>& beta,
                             const std::vector<T>& running_mean, const std::vector<T>& running_var, double eps,
                             Tensor4<T>& y);

template <typename T>
void batchnorm_backward(const Tensor4<T>& dy, const std::vector<T>& gamma, const BatchNormCache<T>& cache,
                        Tensor4<T>& dx, std::vector<T>& dgamma, std::vector<T>& dbeta);

template <typename T>
void relu_forward(Tensor4<T>& x);

template <typename T>
void relu_backward(const Tensor4<T>& out, Tensor4<T>& dy);

template <typename T>
void maxpool2_forward(const Tensor4<T>& x, Tensor4<T>& y, std::vector<std::int64_t>& argmax);

template <typename T>
void maxpool2_backward(const Tensor4<T>& dy, const std::vector<std::int64_t>& argmax, const Tensor4<T>& x_shape,
                       Tensor4<T>& dx);

template <typename T>
void channel_mask_apply(Tensor4<T>& x, const std::vector<T>& mask);

using ref::softmax_cross_entropy;

}  // namespace seqsort::nn
