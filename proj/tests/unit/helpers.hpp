#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "seqsort/nn/tensor.hpp"
#include "seqsort/rng.hpp"

namespace testutil {

template <typename T>
seqsort::nn::Tensor4<T> random_tensor(int n, int h, int w, int c, std::uint64_t seed, double lo = -1.0,
                                      double hi = 1.0) {
  seqsort::nn::Tensor4<T> t(n, h, w, c);
  auto rng = seqsort::make_rng(seed, {0x7E57});
  for (auto& v : t.data) v = static_cast<T>(seqsort::uniform(rng, lo, hi));
  return t;
}

template <typename T>
std::vector<T> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(n);
  auto rng = seqsort::make_rng(seed, {0x7E58});
  for (auto& x : v) x = static_cast<T>(seqsort::uniform(rng, lo, hi));
  return v;
}

/// Largest |a - n| / max(|a|, |n|, floor) over all entries.
inline double max_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                            double floor = 1e-6) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = std::abs(analytic[i] - numeric[i]);
    const double s = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, d / s);
  }
  return worst;
}

/// Central differences of f with respect to every entry of x.
inline std::vector<double> numeric_gradient(std::vector<double>& x, const std::function<double()>& f,
                                            double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f();
    x[i] = keep - h;
    const double fm = f();
    x[i] = keep;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Fresh empty directory below the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("seqsort_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
