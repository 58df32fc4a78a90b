#include "seqsort/nn/model.hpp"

#include <algorithm>
#include <cmath>

namespace seqsort::nn {

void Architecture::validate() const {
  if (input_size < 16 || input_size % 16 != 0) {
    fail(ErrorCode::ShapeMismatch, "input size must be a positive multiple of 16, got " + std::to_string(input_size));
  }
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const Architecture& arch) {
  arch.validate();
  ModelParams p;
  p.arch = arch;
  p.labels = labeling::current_label_table();
  auto add = [&](std::string name, std::vector<int> shape, T fill) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    p.learnable.push_back({std::move(name), std::move(shape), std::vector<T>(n, fill)});
  };
  int cin = Architecture::kInputChannels;
  for (int i = 0; i < 4; ++i) {
    const int f = Architecture::kConvFilters[i];
    const std::string pre = "conv" + std::to_string(i);
    add(pre + ".w", {3, 3, cin, f}, T(0));
    add(pre + ".b", {f}, T(0));
    add(pre + ".bn_gamma", {f}, T(1));
    add(pre + ".bn_beta", {f}, T(0));
    cin = f;
  }
  int k = arch.flatten_features();
  for (int j = 0; j < 2; ++j) {
    const int u = Architecture::kDenseUnits[j];
    const std::string pre = "dense" + std::to_string(j);
    add(pre + ".w", {k, u}, T(0));
    add(pre + ".b", {u}, T(0));
    add(pre + ".bn_gamma", {u}, T(1));
    add(pre + ".bn_beta", {u}, T(0));
    k = u;
  }
  add("head_seq.w", {k, Architecture::kSeqClasses}, T(0));
  add("head_seq.b", {Architecture::kSeqClasses}, T(0));
  add("head_plane.w", {k, Architecture::kPlaneClasses}, T(0));
  add("head_plane.b", {Architecture::kPlaneClasses}, T(0));

  for (int l = 0; l < 6; ++l) {
    const int c = l < 4 ? Architecture::kConvFilters[l] : Architecture::kDenseUnits[l - 4];
    const std::string pre = "bn" + std::to_string(l);
    p.buffers.push_back({pre + ".running_mean", {c}, std::vector<T>(c, T(0))});
    p.buffers.push_back({pre + ".running_var", {c}, std::vector<T>(c, T(1))});
  }
  return p;
}

template <typename T>
std::size_t ModelParams<T>::learnable_count() const {
  std::size_t n = 0;
  for (const auto& p : learnable) n += p.size();
  return n;
}

template <typename T>
Gradients<T> zero_gradients(const ModelParams<T>& params) {
  Gradients<T> g;
  for (const auto& p : params.learnable) g.emplace_back(p.size(), T(0));
  return g;
}

template <typename T>
std::vector<T> dropout_mask(std::size_t count, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) fail(ErrorCode::ConfigError, "dropout rate must be in [0, 1)");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> m(count);
  for (auto& v : m) v = uniform01(rng) < rate ? T(0) : keep_scale;
  return m;
}

namespace {

// Backend dispatch; both routes share signatures.
template <typename T>
struct Ops {
  Backend backend;

  void conv_fwd(const Tensor4<T>& x, const std::vector<T>& w, const std::vector<T>& b, int cout, Tensor4<T>& y) const {
    backend == Backend::Parallel ? nn::conv3x3_forward(x, w, b, cout, y) : ref::conv3x3_forward(x, w, b, cout, y);
  }
  void conv_bwd(const Tensor4<T>& x, const std::vector<T>& w, const Tensor4<T>& dy, Tensor4<T>* dx, std::vector<T>& dw,
                std::vector<T>& db) const {
    backend == Backend::Parallel ? nn::conv3x3_backward(x, w, dy, dx, dw, db) : ref::conv3x3_backward(x, w, dy, dx, dw, db);
  }
  void dense_fwd(const Tensor4<T>& x, const std::vector<T>& w, const std::vector<T>& b, int m, Tensor4<T>& y) const {
    backend == Backend::Parallel ? nn::dense_forward(x, w, b, m, y) : ref::dense_forward(x, w, b, m, y);
  }
  void dense_bwd(const Tensor4<T>& x, const std::vector<T>& w, const Tensor4<T>& dy, Tensor4<T>* dx,
                 std::vector<T>& dw, std::vector<T>& db) const {
    backend == Backend::Parallel ? nn::dense_backward(x, w, dy, dx, dw, db) : ref::dense_backward(x, w, dy, dx, dw, db);
  }
  void bn_train(const Tensor4<T>& x, const std::vector<T>& g, const std::vector<T>& b, Tensor4<T>& y,
                BatchNormCache<T>& c) const {
    backend == Backend::Parallel ? nn::batchnorm_forward_train(x, g, b, Architecture::kBatchNormEps, y, c)
                                 : ref::batchnorm_forward_train(x, g, b, Architecture::kBatchNormEps, y, c);
  }
  void bn_infer(const Tensor4<T>& x, const std::vector<T>& g, const std::vector<T>& b, const std::vector<T>& rm,
                const std::vector<T>& rv, Tensor4<T>& y) const {
    backend == Backend::Parallel ? nn::batchnorm_forward_infer(x, g, b, rm, rv, Architecture::kBatchNormEps, y)
                                 : ref::batchnorm_forward_infer(x, g, b, rm, rv, Architecture::kBatchNormEps, y);
  }
  void bn_bwd(const Tensor4<T>& dy, const std::vector<T>& g, const BatchNormCache<T>& c, Tensor4<T>& dx,
              std::vector<T>& dg, std::vector<T>& db) const {
    backend == Backend::Parallel ? nn::batchnorm_backward(dy, g, c, dx, dg, db) : ref::batchnorm_backward(dy, g, c, dx, dg, db);
  }
  void relu(Tensor4<T>& x) const { backend == Backend::Parallel ? nn::relu_forward(x) : ref::relu_forward(x); }
  void relu_bwd(const Tensor4<T>& out, Tensor4<T>& dy) const {
    backend == Backend::Parallel ? nn::relu_backward(out, dy) : ref::relu_backward(out, dy);
  }
  void pool(const Tensor4<T>& x, Tensor4<T>& y, std::vector<std::int64_t>& am) const {
    backend == Backend::Parallel ? nn::maxpool2_forward(x, y, am) : ref::maxpool2_forward(x, y, am);
  }
  void pool_bwd(const Tensor4<T>& dy, const std::vector<std::int64_t>& am, const Tensor4<T>& xs, Tensor4<T>& dx) const {
    backend == Backend::Parallel ? nn::maxpool2_backward(dy, am, xs, dx) : ref::maxpool2_backward(dy, am, xs, dx);
  }
  void mask(Tensor4<T>& x, const std::vector<T>& m) const {
    backend == Backend::Parallel ? nn::channel_mask_apply(x, m) : ref::channel_mask_apply(x, m);
  }
};

template <typename T>
std::vector<T> draw_dropout_mask(std::size_t count, Rng& rng) {
  return dropout_mask<T>(count, Architecture::kDropoutRate, rng);
}

template <typename T>
void update_running(std::vector<T>& running, const std::vector<T>& batch) {
  const T mom = static_cast<T>(Architecture::kBatchNormMomentum);
  for (std::size_t k = 0; k < running.size(); ++k) running[k] = mom * running[k] + (T(1) - mom) * batch[k];
}

// y (in place) = BN in infer mode; backward is a per-channel scale.
template <typename T>
void bn_infer_backward(const ModelParams<T>& p, int layer, Tensor4<T>& d) {
  const auto& g = p.bn_gamma(layer).value;
  const auto& rv = p.running_var(layer).value;
  const int c = d.c;
  std::vector<T> s(c);
  for (int k = 0; k < c; ++k)
    s[k] = static_cast<T>(g[k] / std::sqrt(static_cast<double>(rv[k]) + Architecture::kBatchNormEps));
  for (std::size_t r = 0; r < d.size() / c; ++r)
    for (int k = 0; k < c; ++k) d.data[r * c + k] *= s[k];
}

template <typename T>
void run_forward(const ModelParams<T>& params, ModelParams<T>* mutable_params, const Tensor4<T>& batch, Mode mode,
                 Rng* rng, ForwardCache<T>& cache, Backend backend) {
  const Architecture& arch = params.arch;
  if (batch.h != arch.input_size || batch.w != arch.input_size || batch.c != Architecture::kInputChannels) {
    fail(ErrorCode::ShapeMismatch, "batch shape " + batch.shape_string() + " does not match input size " +
                                       std::to_string(arch.input_size));
  }
  if (mode == Mode::Train && batch.n < 2) fail(ErrorCode::BatchTooSmall, "train mode needs batch >= 2");
  if (batch.n < 1) fail(ErrorCode::ShapeMismatch, "empty batch");
  const Ops<T> ops{backend};
  cache.mode = mode;

  Tensor4<T> z, pooled;
  cache.conv[0].input = batch;
  for (int s = 0; s < 4; ++s) {
    auto& st = cache.conv[s];
    ops.conv_fwd(st.input, params.conv_w(s).value, params.conv_b(s).value, Architecture::kConvFilters[s], z);
    if (mode == Mode::Train) {
      ops.bn_train(z, params.bn_gamma(s).value, params.bn_beta(s).value, st.act, st.bn);
      update_running(mutable_params->running_mean(s).value, st.bn.mean);
      update_running(mutable_params->running_var(s).value, st.bn.var);
    } else {
      ops.bn_infer(z, params.bn_gamma(s).value, params.bn_beta(s).value, params.running_mean(s).value,
                   params.running_var(s).value, st.act);
    }
    ops.relu(st.act);
    ops.pool(st.act, pooled, st.argmax);
    if (mode == Mode::Train) {
      st.drop_mask = draw_dropout_mask<T>(static_cast<std::size_t>(pooled.n) * pooled.c, *rng);
      ops.mask(pooled, st.drop_mask);
    } else {
      st.drop_mask.clear();
    }
    if (s < 3) cache.conv[s + 1].input = pooled;
  }
  cache.dense[0].input = std::move(pooled);
  const Tensor4<T>* x = &cache.dense[0].input;

  for (int j = 0; j < 2; ++j) {
    auto& st = cache.dense[j];
    const int l = 4 + j;
    ops.dense_fwd(*x, params.dense_w(j).value, params.dense_b(j).value, Architecture::kDenseUnits[j], z);
    if (mode == Mode::Train) {
      ops.bn_train(z, params.bn_gamma(l).value, params.bn_beta(l).value, st.act, st.bn);
      update_running(mutable_params->running_mean(l).value, st.bn.mean);
      update_running(mutable_params->running_var(l).value, st.bn.var);
    } else {
      ops.bn_infer(z, params.bn_gamma(l).value, params.bn_beta(l).value, params.running_mean(l).value,
                   params.running_var(l).value, st.act);
    }
    ops.relu(st.act);
    Tensor4<T>& next = j == 0 ? cache.dense[1].input : cache.head_input;
    next = st.act;
    if (mode == Mode::Train) {
      st.drop_mask = draw_dropout_mask<T>(static_cast<std::size_t>(next.n) * next.c, *rng);
      ops.mask(next, st.drop_mask);
    } else {
      st.drop_mask.clear();
    }
    x = &next;
  }
  ops.dense_fwd(cache.head_input, params.head_w(0).value, params.head_b(0).value, Architecture::kSeqClasses,
                cache.seq_logits);
  ops.dense_fwd(cache.head_input, params.head_w(1).value, params.head_b(1).value, Architecture::kPlaneClasses,
                cache.plane_logits);
}

}  // namespace

template <typename T>
void forward(ModelParams<T>& params, const Tensor4<T>& batch, Mode mode, Rng* rng, ForwardCache<T>& cache,
             Backend backend) {
  if (mode == Mode::Train && rng == nullptr) fail(ErrorCode::ShapeMismatch, "train-mode forward needs an rng");
  run_forward(params, &params, batch, mode, rng, cache, backend);
}

template <typename T>
void forward_infer(const ModelParams<T>& params, const Tensor4<T>& batch, ForwardCache<T>& cache, Backend backend) {
  run_forward<T>(params, nullptr, batch, Mode::Infer, nullptr, cache, backend);
}

template <typename T>
BackwardResult<T> backward(const ModelParams<T>& params, const ForwardCache<T>& cache, const Tensor4<T>& dseq,
                           const Tensor4<T>& dplane, const BackwardOptions& options, Backend backend) {
  const Ops<T> ops{backend};
  const bool train = cache.mode == Mode::Train;
  BackwardResult<T> out;
  out.grads = zero_gradients(params);
  auto& g = out.grads;

  Tensor4<T> dh, dh2;
  ops.dense_bwd(cache.head_input, params.head_w(0).value, dseq, &dh, g[24], g[25]);
  ops.dense_bwd(cache.head_input, params.head_w(1).value, dplane, &dh2, g[26], g[27]);
  for (std::size_t i = 0; i < dh.size(); ++i) dh.data[i] += dh2.data[i];

  Tensor4<T> dz, dx;
  for (int j = 1; j >= 0; --j) {
    const auto& st = cache.dense[j];
    const int l = 4 + j;
    if (train) ops.mask(dh, st.drop_mask);
    ops.relu_bwd(st.act, dh);
    if (train) {
      ops.bn_bwd(dh, params.bn_gamma(l).value, st.bn, dz, g[16 + 4 * j + 2], g[16 + 4 * j + 3]);
    } else {
      dz = dh;
      bn_infer_backward(params, l, dz);
    }
    ops.dense_bwd(st.input, params.dense_w(j).value, dz, &dx, g[16 + 4 * j], g[16 + 4 * j + 1]);
    dh = std::move(dx);
  }

  // dh now has the shape of the last pooled conv output.
  Tensor4<T> dact;
  for (int s = 3; s >= 0; --s) {
    const auto& st = cache.conv[s];
    if (train) ops.mask(dh, st.drop_mask);
    ops.pool_bwd(dh, st.argmax, st.act, dact);
    if (s == 3 && options.stop_at_final_conv) {
      out.final_conv_grad = std::move(dact);
      return out;
    }
    ops.relu_bwd(st.act, dact);
    if (train) {
      ops.bn_bwd(dact, params.bn_gamma(s).value, st.bn, dz, g[4 * s + 2], g[4 * s + 3]);
    } else {
      dz = std::move(dact);
      bn_infer_backward(params, s, dz);
    }
    const bool need_dx = s > 0 || options.input_grad;
    ops.conv_bwd(st.input, params.conv_w(s).value, dz, need_dx ? &dx : nullptr, g[4 * s], g[4 * s + 1]);
    if (need_dx) dh = std::move(dx);
  }
  if (options.input_grad) out.input_grad = std::move(dh);
  return out;
}

template <typename T>
LossValue two_head_loss(const Tensor4<T>& seq_logits, const Tensor4<T>& plane_logits, const std::vector<int>& seq_target,
                        const std::vector<int>& plane_target, Tensor4<T>* dseq, Tensor4<T>* dplane) {
  if (seq_target.size() != static_cast<std::size_t>(seq_logits.n) ||
      plane_target.size() != static_cast<std::size_t>(plane_logits.n)) {
    fail(ErrorCode::ShapeMismatch, "target count does not match batch");
  }
  LossValue v;
  v.seq = softmax_cross_entropy(seq_logits, seq_target, dseq);
  v.plane = softmax_cross_entropy(plane_logits, plane_target, dplane);
  return v;
}

template <typename T>
std::vector<double> softmax_row(const T* logits, int k) {
  double mx = logits[0];
  for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[j]));
  std::vector<double> p(k);
  double s = 0;
  for (int j = 0; j < k; ++j) s += p[j] = std::exp(static_cast<double>(logits[j]) - mx);
  for (auto& v : p) v /= s;
  return p;
}

#define SEQSORT_INSTANTIATE(T)                                                                                      \
  template struct ModelParams<T>;                                                                                   \
  template Gradients<T> zero_gradients<T>(const ModelParams<T>&);                                                  \
  template void forward<T>(ModelParams<T>&, const Tensor4<T>&, Mode, Rng*, ForwardCache<T>&, Backend);             \
  template void forward_infer<T>(const ModelParams<T>&, const Tensor4<T>&, ForwardCache<T>&, Backend);             \
  template BackwardResult<T> backward<T>(const ModelParams<T>&, const ForwardCache<T>&, const Tensor4<T>&,         \
                                         const Tensor4<T>&, const BackwardOptions&, Backend);                       \
  template LossValue two_head_loss<T>(const Tensor4<T>&, const Tensor4<T>&, const std::vector<int>&,               \
                                      const std::vector<int>&, Tensor4<T>*, Tensor4<T>*);                           \
  template std::vector<double> softmax_row<T>(const T*, int);                                                       \
  template std::vector<T> dropout_mask<T>(std::size_t, double, Rng&);

SEQSORT_INSTANTIATE(float)
SEQSORT_INSTANTIATE(double)

#undef SEQSORT_INSTANTIATE

}  // namespace seqsort::nn
