#include "seqsort/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "seqsort/error.hpp"

namespace seqsort::dataset {

using labeling::JointLabel;

void SplitSpec::validate() const {
  const double sum = train_fraction + val_fraction + test_fraction;
  if (train_fraction < 0 || val_fraction < 0 || test_fraction < 0 || std::abs(sum - 1.0) > 1e-9) {
    fail(ErrorCode::ConfigError, "split fractions must be non-negative and sum to 1");
  }
}

void OversampleSpec::validate() const {
  if (!(class_max_ratio >= 1.0) || !(vendor_max_ratio >= 1.0)) {
    fail(ErrorCode::ConfigError, "oversampling ratios must be >= 1");
  }
}

void AugmentSpec::validate() const {
  auto ordered = [](const std::pair<double, double>& r) { return r.first <= r.second; };
  if (noise_sigma_max < 0 || rotation_max_deg < 0 || translate_max_frac < 0 || deform_max_px < 0 ||
      !ordered(contrast_gamma_range) || !ordered(scale_range) || contrast_gamma_range.first <= 0 ||
      scale_range.first <= 0 || deform_grid < 2) {
    fail(ErrorCode::ConfigError, "augmentation ranges must be ordered, positive where scaling, grid >= 2");
  }
}

AugmentSpec AugmentSpec::identity() {
  AugmentSpec s;
  s.noise_sigma_max = 0.0;
  s.contrast_gamma_range = {1.0, 1.0};
  s.rotation_max_deg = 0.0;
  s.scale_range = {1.0, 1.0};
  s.translate_max_frac = 0.0;
  s.deform_max_px = 0.0;
  s.channel_shuffle = false;
  return s;
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

std::vector<std::size_t> largest_remainder(std::size_t n, std::span<const double> fractions) {
  std::vector<std::size_t> counts(fractions.size());
  std::vector<double> rem(fractions.size());
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    const double quota = static_cast<double>(n) * fractions[k];
    const double fl = std::floor(quota + 1e-9);
    counts[k] = static_cast<std::size_t>(fl);
    rem[k] = std::max(0.0, quota - fl);
    assigned += counts[k];
  }
  std::vector<std::size_t> order(fractions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b] + 1e-12; });
  for (std::size_t i = 0; assigned < n; ++i) {
    const std::size_t k = order[i % order.size()];
    if (fractions[k] <= 0.0) continue;
    ++counts[k];
    ++assigned;
  }
  while (assigned > n) {
    // Only reachable through rounding slop when fractions sum slightly above 1.
    auto it = std::max_element(counts.begin(), counts.end());
    --*it;
    --assigned;
  }
  return counts;
}

Partition partition(std::span<const Datapoint> datapoints, const SplitSpec& spec) {
  spec.validate();
  std::map<JointLabel, std::size_t> label_counts;
  std::map<std::string, std::vector<std::size_t>> study_members;
  for (std::size_t i = 0; i < datapoints.size(); ++i) {
    const auto& dp = datapoints[i];
    if (!dp.label) fail(ErrorCode::Unlabeled, "datapoint " + dp.source_series + " has no label");
    ++label_counts[*dp.label];
    study_members[dp.study_instance_uid].push_back(i);
  }
  if (study_members.size() < 3) {
    fail(ErrorCode::InsufficientStudies, "need at least 3 studies, have " + std::to_string(study_members.size()));
  }

  // Stratum of a study: its rarest label (ties -> lower label).
  std::map<JointLabel, std::vector<std::string>> strata;
  for (const auto& [study, members] : study_members) {
    JointLabel best = *datapoints[members.front()].label;
    for (std::size_t i : members) {
      const JointLabel& l = *datapoints[i].label;
      if (label_counts[l] < label_counts[best] || (label_counts[l] == label_counts[best] && l < best)) best = l;
    }
    strata[best].push_back(study);
  }

  const std::array<double, 3> fractions{spec.train_fraction, spec.val_fraction, spec.test_fraction};
  const auto nonempty_splits =
      static_cast<std::size_t>(std::count_if(fractions.begin(), fractions.end(), [](double f) { return f > 0; }));

  Partition out;
  std::size_t stratum_index = 0;
  for (auto& [label, studies] : strata) {
    std::sort(studies.begin(), studies.end());
    Rng rng = make_rng(spec.seed, {0x5157u, stratum_index++});
    portable_shuffle(studies.begin(), studies.end(), rng);

    std::array<std::size_t, 3> counts{studies.size(), 0, 0};
    if (studies.size() < nonempty_splits) {
      out.warnings.push_back("InsufficientStudies: stratum " + labeling::to_string(label) + " has " +
                             std::to_string(studies.size()) + " studies; assigned to train");
    } else {
      auto c = largest_remainder(studies.size(), fractions);
      counts = {c[0], c[1], c[2]};
    }
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s) {
      for (std::size_t k = 0; k < counts[s]; ++k, ++pos) out.study_split[studies[pos]] = static_cast<Split>(s);
    }
  }

  for (std::size_t i = 0; i < datapoints.size(); ++i) {
    switch (out.study_split.at(datapoints[i].study_instance_uid)) {
      case Split::Train: out.train.push_back(i); break;
      case Split::Val: out.val.push_back(i); break;
      case Split::Test: out.test.push_back(i); break;
    }
  }
  return out;
}

nlohmann::json split_manifest(const Partition& p) {
  nlohmann::json studies = nlohmann::json::object();
  for (const auto& [study, split] : p.study_split) studies[study] = std::string(to_string(split));
  return {{"studies", studies}, {"warnings", p.warnings}};
}

namespace {

// Duplicates members of minority groups until the smallest group is at least
// ceil(max / ratio). Returns true if anything was added.
template <typename Key, typename KeyOf>
bool balance_groups(std::vector<std::size_t>& result, std::span<const std::size_t> originals, double ratio,
                    KeyOf key_of, std::map<Key, std::vector<std::size_t>>& pools,
                    std::map<Key, std::size_t>& cursors) {
  std::map<Key, std::size_t> counts;
  for (std::size_t i : result) ++counts[key_of(i)];
  if (counts.size() < 2) return false;
  std::size_t max_count = 0;
  for (const auto& [k, c] : counts) max_count = std::max(max_count, c);
  const auto target = static_cast<std::size_t>(std::ceil(static_cast<double>(max_count) / ratio - 1e-9));
  bool changed = false;
  for (auto& [k, c] : counts) {
    if (c >= target) continue;
    auto& pool = pools[k];
    auto& cursor = cursors[k];
    while (c < target) {
      result.push_back(pool[cursor % pool.size()]);
      ++cursor;
      ++c;
      changed = true;
    }
  }
  (void)originals;
  return changed;
}

template <typename Key>
bool within_ratio(const std::map<Key, std::size_t>& counts, double ratio) {
  if (counts.size() < 2) return true;
  std::size_t mn = SIZE_MAX, mx = 0;
  for (const auto& [k, c] : counts) {
    mn = std::min(mn, c);
    mx = std::max(mx, c);
  }
  return static_cast<double>(mx) <= ratio * static_cast<double>(mn) + 1e-9;
}

}  // namespace

std::vector<std::size_t> oversample(std::span<const Datapoint> datapoints, std::span<const std::size_t> train,
                                    const OversampleSpec& spec) {
  spec.validate();
  std::vector<std::size_t> result(train.begin(), train.end());
  if (train.empty()) return result;

  auto label_of = [&](std::size_t i) {
    const auto& l = datapoints[i].label;
    if (!l) fail(ErrorCode::Unlabeled, "cannot oversample unlabeled datapoint " + datapoints[i].source_series);
    return *l;
  };
  auto vendor_of = [&](std::size_t i) { return datapoints[i].vendor; };

  // Each group's originals in a seeded order; duplication cycles through it.
  std::map<JointLabel, std::vector<std::size_t>> label_pools;
  std::map<dicom::Vendor, std::vector<std::size_t>> vendor_pools;
  for (std::size_t i : train) {
    label_pools[label_of(i)].push_back(i);
    vendor_pools[vendor_of(i)].push_back(i);
  }
  std::uint64_t g = 0;
  for (auto& [k, pool] : label_pools) {
    Rng rng = make_rng(spec.seed, {0xC1A5u, g++});
    portable_shuffle(pool.begin(), pool.end(), rng);
  }
  g = 0;
  for (auto& [k, pool] : vendor_pools) {
    Rng rng = make_rng(spec.seed, {0x7E4Du, g++});
    portable_shuffle(pool.begin(), pool.end(), rng);
  }
  std::map<JointLabel, std::size_t> label_cursor;
  std::map<dicom::Vendor, std::size_t> vendor_cursor;

  // Vendor duplication can push a class past the ratio again, so alternate
  // until both constraints hold.
  for (int round = 0; round < 256; ++round) {
    balance_groups(result, train, spec.class_max_ratio, label_of, label_pools, label_cursor);
    balance_groups(result, train, spec.vendor_max_ratio, vendor_of, vendor_pools, vendor_cursor);
    std::map<JointLabel, std::size_t> lc;
    std::map<dicom::Vendor, std::size_t> vc;
    for (std::size_t i : result) {
      ++lc[label_of(i)];
      ++vc[vendor_of(i)];
    }
    if (within_ratio(lc, spec.class_max_ratio) && within_ratio(vc, spec.vendor_max_ratio)) break;
  }
  return result;
}

namespace {

float sample_bilinear(const Datapoint& dp, double y, double x, int c) {
  const int n = dp.size;
  if (y < -1.0 || x < -1.0 || y > n || x > n) return 0.0f;
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0, fx = x - x0;
  auto px = [&](int r, int col) -> double {
    if (r < 0 || col < 0 || r >= n || col >= n) return 0.0;
    return dp.at(r, col, c);
  };
  const double top = (1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1);
  const double bottom = (1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1);
  return static_cast<float>((1 - fy) * top + fy * bottom);
}

}  // namespace

Datapoint augment(const Datapoint& dp, const AugmentSpec& spec, Rng& rng) {
  const int n = dp.size;
  const std::size_t npix = static_cast<std::size_t>(n) * n;

  // Draw every parameter up front so the stream layout is independent of
  // which steps turn out to be no-ops.
  const double angle = uniform(rng, -spec.rotation_max_deg, spec.rotation_max_deg) * 3.14159265358979323846 / 180.0;
  const double scale = uniform(rng, spec.scale_range.first, spec.scale_range.second);
  const double tx = uniform(rng, -spec.translate_max_frac, spec.translate_max_frac) * n;
  const double ty = uniform(rng, -spec.translate_max_frac, spec.translate_max_frac) * n;
  const int g = std::max(2, spec.deform_grid);
  std::vector<double> ctrl_dx(static_cast<std::size_t>(g) * g), ctrl_dy(ctrl_dx.size());
  for (std::size_t k = 0; k < ctrl_dx.size(); ++k) {
    const double r = spec.deform_max_px * std::sqrt(uniform01(rng));
    const double theta = 6.283185307179586 * uniform01(rng);
    ctrl_dx[k] = r * std::cos(theta);
    ctrl_dy[k] = r * std::sin(theta);
  }
  std::array<double, 3> gamma{};
  for (double& gm : gamma) gm = uniform(rng, spec.contrast_gamma_range.first, spec.contrast_gamma_range.second);
  const double sigma = uniform(rng, 0.0, spec.noise_sigma_max);
  std::array<int, 3> perm{0, 1, 2};
  if (spec.channel_shuffle) portable_shuffle(perm.begin(), perm.end(), rng);

  Datapoint out = dp;
  const bool affine = spec.rotation_max_deg > 0 || spec.scale_range.first != 1.0 || spec.scale_range.second != 1.0 ||
                      spec.translate_max_frac > 0;
  const bool deform = spec.deform_max_px > 0;
  if (affine || deform) {
    const double centre = (n - 1) / 2.0;
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double cell = static_cast<double>(n - 1) / (g - 1);
    for (int r = 0; r < n; ++r) {
      for (int col = 0; col < n; ++col) {
        double y = r, x = col;
        if (deform) {
          // Bilinear upsampling of the control grid.
          const double gy = r / cell, gx = col / cell;
          const int iy = std::min(static_cast<int>(gy), g - 2), ix = std::min(static_cast<int>(gx), g - 2);
          const double fy = gy - iy, fx = gx - ix;
          auto at = [&](const std::vector<double>& v, int a, int b) { return v[static_cast<std::size_t>(a) * g + b]; };
          auto interp = [&](const std::vector<double>& v) {
            return (1 - fy) * ((1 - fx) * at(v, iy, ix) + fx * at(v, iy, ix + 1)) +
                   fy * ((1 - fx) * at(v, iy + 1, ix) + fx * at(v, iy + 1, ix + 1));
          };
          x += interp(ctrl_dx);
          y += interp(ctrl_dy);
        }
        // Inverse of p' = S R (p - c) + c + t.
        const double u = (x - centre - tx) / scale, v = (y - centre - ty) / scale;
        const double sx = ca * u + sa * v + centre;
        const double sy = -sa * u + ca * v + centre;
        for (int c = 0; c < 3; ++c) out.at(r, col, c) = sample_bilinear(dp, sy, sx, c);
      }
    }
  }

  for (int c = 0; c < 3; ++c) {
    if (gamma[c] == 1.0) continue;
    for (std::size_t p = 0; p < npix; ++p) {
      float& v = out.pixels[p * 3 + c];
      v = static_cast<float>(std::pow(std::max(0.0f, v), gamma[c]));
    }
  }
  if (sigma > 0) {
    for (float& v : out.pixels) v = static_cast<float>(v + sigma * standard_normal(rng));
  }
  for (float& v : out.pixels) v = std::clamp(v, 0.0f, 1.0f);

  if (perm != std::array<int, 3>{0, 1, 2}) {
    std::vector<float> shuffled(out.pixels.size());
    for (std::size_t p = 0; p < npix; ++p) {
      for (int c = 0; c < 3; ++c) shuffled[p * 3 + c] = out.pixels[p * 3 + perm[c]];
    }
    out.pixels = std::move(shuffled);
  }
  return out;
}

}  // namespace seqsort::dataset
