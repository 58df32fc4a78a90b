#include "seqsort/nn/optim.hpp"

#include <cmath>

namespace seqsort::nn {

int fan_in_of(const std::vector<int>& shape) {
  int f = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) f *= shape[i];
  return f;
}

template <typename T>
std::vector<T> he_normal(std::size_t count, int fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / fan_in);
  std::vector<T> out(count);
  for (auto& v : out) v = static_cast<T>(sd * standard_normal(rng));
  return out;
}

template <typename T>
ModelParams<T> he_normal_init(const Architecture& arch, std::uint64_t seed) {
  auto params = ModelParams<T>::zeros(arch);
  for (std::size_t i = 0; i < params.learnable.size(); ++i) {
    auto& p = params.learnable[i];
    if (p.shape.size() < 2) continue;  // biases and BN vectors keep their defaults
    Rng rng = make_rng(seed, {0x1A17u, i});
    p.value = he_normal<T>(p.size(), fan_in_of(p.shape), rng);
  }
  return params;
}

template <typename T>
AdamState<T> AdamState<T>::zeros_like(const ModelParams<T>& params) {
  AdamState s;
  for (const auto& p : params.learnable) {
    s.m.emplace_back(p.size(), T(0));
    s.v.emplace_back(p.size(), T(0));
  }
  return s;
}

template <typename T>
void adam_step(ModelParams<T>& params, const Gradients<T>& grads, AdamState<T>& state, double lr) {
  const std::size_t n = params.learnable.size();
  if (grads.size() != n || state.m.size() != n || state.v.size() != n) {
    fail(ErrorCode::ShapeMismatch, "adam: tensor count mismatch");
  }
  ++state.step;
  const double b1 = state.beta1, b2 = state.beta2, eps = state.epsilon;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < n; ++t) {
    auto& p = params.learnable[t].value;
    const auto& g = grads[t];
    auto& m = state.m[t];
    auto& v = state.v[t];
    if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
      fail(ErrorCode::ShapeMismatch, "adam: shape mismatch for " + params.learnable[t].name);
    }
    const auto len = static_cast<std::ptrdiff_t>(p.size());
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
    for (std::ptrdiff_t i = 0; i < len; ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1, vhat = vi / c2;
      p[i] = static_cast<T>(p[i] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

void CyclicLRSpec::validate() const {
  if (!(lr_min > 0.0) || !(lr_min <= lr_max) || cycle_epochs < 1) {
    fail(ErrorCode::ConfigError, "cyclic lr needs 0 < lr_min <= lr_max and cycle_epochs >= 1");
  }
}

double cyclic_lr(double epoch_progress, const CyclicLRSpec& spec) {
  const double x = epoch_progress / spec.cycle_epochs;
  const double frac = x - std::floor(x);
  return spec.lr_min + (spec.lr_max - spec.lr_min) * (1.0 - std::abs(2.0 * frac - 1.0));
}

#define SEQSORT_INSTANTIATE(T)                                                                     \
  template std::vector<T> he_normal<T>(std::size_t, int, Rng&);                                    \
  template ModelParams<T> he_normal_init<T>(const Architecture&, std::uint64_t);                   \
  template struct AdamState<T>;                                                                    \
  template void adam_step<T>(ModelParams<T>&, const Gradients<T>&, AdamState<T>&, double);

SEQSORT_INSTANTIATE(float)
SEQSORT_INSTANTIATE(double)

#undef SEQSORT_INSTANTIATE

}  // namespace seqsort::nn
