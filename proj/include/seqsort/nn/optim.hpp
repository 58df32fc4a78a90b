#pragma once

#include <cstdint>
#include <vector>

#include "seqsort/nn/model.hpp"
#include "seqsort/rng.hpp"

namespace seqsort::nn {

/// fan_in of a weight shape: product of all dims but the last (HWIO convs,
/// (in, out) dense matrices).
int fan_in_of(const std::vector<int>& shape);

/// N(0, sqrt(2 / fan_in)) samples.
template <typename T>
std::vector<T> he_normal(std::size_t count, int fan_in, Rng& rng);

/// Fresh parameters: He-normal weights (one derived stream per tensor),
/// zero biases, BN scale 1 / shift 0, running mean 0 / var 1.
template <typename T>
ModelParams<T> he_normal_init(const Architecture& arch, std::uint64_t seed);

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  static AdamState zeros_like(const ModelParams<T>& params);
};

/// One bias-corrected Adam update of every learnable tensor.
///
/// Throws Error(ShapeMismatch) if grads or moments do not match params.
template <typename T>
void adam_step(ModelParams<T>& params, const Gradients<T>& grads, AdamState<T>& state, double lr);

struct CyclicLRSpec {
  double lr_min = 1e-4;
  double lr_max = 0.01;
  int cycle_epochs = 60;

  /// Throws Error(ConfigError).
  void validate() const;
};

/// Triangular wave starting at lr_min, peaking at lr_max half-way through
/// each cycle. `epoch_progress` is in epochs and may be fractional.
double cyclic_lr(double epoch_progress, const CyclicLRSpec& spec);

}  // namespace seqsort::nn
