#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "seqsort/labeling.hpp"
#include "seqsort/nn/kernels.hpp"
#include "seqsort/nn/tensor.hpp"
#include "seqsort/rng.hpp"

namespace seqsort::nn {

/// Fixed two-head classifier: 4 x [conv3x3 -> BN -> ReLU -> maxpool2 ->
/// spatial dropout], flatten, 2 x [dense -> BN -> ReLU -> dropout], then a
/// sequence head and a plane head. Only the input size varies.
struct Architecture {
  int input_size = 256;
  static constexpr int kInputChannels = 3;
  static constexpr std::array<int, 4> kConvFilters{32, 32, 64, 128};
  static constexpr std::array<int, 2> kDenseUnits{256, 64};
  static constexpr int kSeqClasses = static_cast<int>(labeling::kNumSequenceClasses);
  static constexpr int kPlaneClasses = static_cast<int>(labeling::kNumPlaneClasses);
  static constexpr double kBatchNormEps = 1e-5;
  static constexpr double kBatchNormMomentum = 0.99;
  static constexpr double kDropoutRate = 0.2;

  /// Throws Error(ShapeMismatch) unless input_size is a positive multiple of 16.
  void validate() const;
  int final_conv_size() const { return input_size / 8; }
  int flatten_features() const { return (input_size / 16) * (input_size / 16) * kConvFilters[3]; }
};

template <typename T>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;

  std::size_t size() const noexcept { return value.size(); }
};

/// Learnable tensors in a fixed order:
///   conv{0..3}.{w,b,bn_gamma,bn_beta}, dense{0,1}.{w,b,bn_gamma,bn_beta},
///   head_seq.{w,b}, head_plane.{w,b}
/// plus non-learnable batch-norm buffers bn{0..5}.{running_mean,running_var}
/// (conv layers 0-3, dense layers 4-5).
template <typename T>
struct ModelParams {
  Architecture arch;
  labeling::LabelTable labels;
  std::vector<Param<T>> learnable;
  std::vector<Param<T>> buffers;

  /// Zero weights and biases, BN scale 1 / shift 0, running mean 0 / var 1.
  static ModelParams zeros(const Architecture& arch);

  Param<T>& conv_w(int i) { return learnable[4 * i]; }
  Param<T>& conv_b(int i) { return learnable[4 * i + 1]; }
  Param<T>& dense_w(int j) { return learnable[16 + 4 * j]; }
  Param<T>& dense_b(int j) { return learnable[17 + 4 * j]; }
  /// BN layers 0-3 follow the convs, 4-5 the dense layers.
  Param<T>& bn_gamma(int l) { return learnable[l < 4 ? 4 * l + 2 : 16 + 4 * (l - 4) + 2]; }
  Param<T>& bn_beta(int l) { return learnable[l < 4 ? 4 * l + 3 : 16 + 4 * (l - 4) + 3]; }
  Param<T>& head_w(int h) { return learnable[24 + 2 * h]; }
  Param<T>& head_b(int h) { return learnable[25 + 2 * h]; }
  Param<T>& running_mean(int l) { return buffers[2 * l]; }
  Param<T>& running_var(int l) { return buffers[2 * l + 1]; }

  const Param<T>& conv_w(int i) const { return learnable[4 * i]; }
  const Param<T>& conv_b(int i) const { return learnable[4 * i + 1]; }
  const Param<T>& dense_w(int j) const { return learnable[16 + 4 * j]; }
  const Param<T>& dense_b(int j) const { return learnable[17 + 4 * j]; }
  const Param<T>& bn_gamma(int l) const { return learnable[l < 4 ? 4 * l + 2 : 16 + 4 * (l - 4) + 2]; }
  const Param<T>& bn_beta(int l) const { return learnable[l < 4 ? 4 * l + 3 : 16 + 4 * (l - 4) + 3]; }
  const Param<T>& head_w(int h) const { return learnable[24 + 2 * h]; }
  const Param<T>& head_b(int h) const { return learnable[25 + 2 * h]; }
  const Param<T>& running_mean(int l) const { return buffers[2 * l]; }
  const Param<T>& running_var(int l) const { return buffers[2 * l + 1]; }

  std::size_t learnable_count() const;

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.arch = arch;
    out.labels = labels;
    auto conv = [](const std::vector<Param<T>>& src, std::vector<Param<U>>& dst) {
      dst.clear();
      for (const auto& p : src) dst.push_back({p.name, p.shape, std::vector<U>(p.value.begin(), p.value.end())});
    };
    conv(learnable, out.learnable);
    conv(buffers, out.buffers);
    return out;
  }
};

/// Gradients aligned with ModelParams::learnable.
template <typename T>
using Gradients = std::vector<std::vector<T>>;

template <typename T>
Gradients<T> zero_gradients(const ModelParams<T>& params);

/// Inverted-dropout keep mask: each entry is 0 with probability `rate`,
/// else 1/(1-rate). Spatial dropout draws one entry per (sample, channel).
///
/// Throws Error(ConfigError) unless 0 <= rate < 1.
template <typename T>
std::vector<T> dropout_mask(std::size_t count, double rate, Rng& rng);

enum class Mode { Train, Infer };
enum class Backend { Parallel, Reference };

template <typename T>
struct ForwardCache {
  struct ConvStage {
    Tensor4<T> input;
    BatchNormCache<T> bn;
    Tensor4<T> act;  // post-ReLU, pre-pool
    std::vector<std::int64_t> argmax;
    std::vector<T> drop_mask;  // per (sample, channel); empty in infer mode
  };
  struct DenseStage {
    Tensor4<T> input;
    BatchNormCache<T> bn;
    Tensor4<T> act;
    std::vector<T> drop_mask;
  };
  Mode mode = Mode::Infer;
  std::array<ConvStage, 4> conv;
  std::array<DenseStage, 2> dense;
  Tensor4<T> head_input;
  Tensor4<T> seq_logits;
  Tensor4<T> plane_logits;
};

/// Runs the network on a (N, S, S, 3) batch. Train mode requires N >= 2,
/// draws dropout masks from `rng` and updates the BN running statistics in
/// `params`; infer mode leaves params untouched and ignores rng.
///
/// Throws Error(ShapeMismatch) or Error(BatchTooSmall).
template <typename T>
void forward(ModelParams<T>& params, const Tensor4<T>& batch, Mode mode, Rng* rng, ForwardCache<T>& cache,
             Backend backend = Backend::Parallel);

/// Infer-mode forward that never modifies params.
template <typename T>
void forward_infer(const ModelParams<T>& params, const Tensor4<T>& batch, ForwardCache<T>& cache,
                   Backend backend = Backend::Parallel);

struct BackwardOptions {
  bool input_grad = false;
  /// Stop once the gradient w.r.t. the last conv block's post-ReLU
  /// activation is known (parameter gradients below it are not computed).
  bool stop_at_final_conv = false;
};

template <typename T>
struct BackwardResult {
  Gradients<T> grads;
  Tensor4<T> final_conv_grad;
  Tensor4<T> input_grad;
};

/// Back-propagates logit gradients through the cached forward pass.
template <typename T>
BackwardResult<T> backward(const ModelParams<T>& params, const ForwardCache<T>& cache, const Tensor4<T>& dseq,
                           const Tensor4<T>& dplane, const BackwardOptions& options = {},
                           Backend backend = Backend::Parallel);

struct LossValue {
  double seq = 0;
  double plane = 0;
  double total() const { return seq + plane; }
};

/// Sum of the two heads' mean softmax cross-entropies; gradients are written
/// when the output pointers are non-null.
///
/// Throws Error(IndexOutOfRange) for an invalid target.
template <typename T>
LossValue two_head_loss(const Tensor4<T>& seq_logits, const Tensor4<T>& plane_logits, const std::vector<int>& seq_target,
                        const std::vector<int>& plane_target, Tensor4<T>* dseq, Tensor4<T>* dplane);

/// Row-wise softmax in double precision.
template <typename T>
std::vector<double> softmax_row(const T* logits, int k);

}  // namespace seqsort::nn
