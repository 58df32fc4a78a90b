#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "seqsort/preprocess.hpp"
#include "seqsort/rng.hpp"

namespace seqsort::dataset {

using preprocess::Datapoint;

struct SplitSpec {
  double train_fraction = 0.64;
  double val_fraction = 0.16;
  double test_fraction = 0.20;
  std::uint64_t seed = 0;

  /// Throws Error(ConfigError).
  void validate() const;
};

struct OversampleSpec {
  double class_max_ratio = 4.0;
  double vendor_max_ratio = 2.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AugmentSpec {
  double noise_sigma_max = 0.05;
  std::pair<double, double> contrast_gamma_range{0.7, 1.4};
  double rotation_max_deg = 15.0;
  std::pair<double, double> scale_range{0.9, 1.1};
  double translate_max_frac = 0.05;
  int deform_grid = 4;
  double deform_max_px = 8.0;
  bool channel_shuffle = true;
  std::uint64_t seed = 0;

  void validate() const;
  /// All magnitudes zero, gamma fixed at 1, no shuffle.
  static AugmentSpec identity();
};

enum class Split { Train, Val, Test };
std::string_view to_string(Split s);

/// Indices into the datapoint list passed to partition().
struct Partition {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::map<std::string, Split> study_split;
  std::vector<std::string> warnings;
};

/// Study-level stratified split. Each study joins the stratum of its rarest
/// label; within a stratum, study counts follow the fractions by
/// largest-remainder rounding after a seeded shuffle. A stratum with fewer
/// studies than non-empty splits goes wholly to train and is reported in
/// `warnings`.
///
/// Throws Error(Unlabeled) for unlabeled datapoints and
/// Error(InsufficientStudies) when fewer than 3 studies exist overall.
Partition partition(std::span<const Datapoint> datapoints, const SplitSpec& spec);

/// Largest-remainder allocation of n items over the given fractions; ties in
/// the remainder go to the earlier split.
std::vector<std::size_t> largest_remainder(std::size_t n, std::span<const double> fractions);

nlohmann::json split_manifest(const Partition& p);

/// Returns training indices with minority classes, then minority vendors,
/// duplicated (round-robin over a seeded order of each group's originals)
/// until every label pair satisfies max/min <= class_max_ratio and every
/// vendor pair max/min <= vendor_max_ratio. All of `train` is retained and
/// only members of `train` are duplicated.
std::vector<std::size_t> oversample(std::span<const Datapoint> datapoints, std::span<const std::size_t> train,
                                    const OversampleSpec& spec);

/// Stochastic augmentation: shared affine + smooth deformation, per-channel
/// gamma, Gaussian noise, clamp to [0,1], optional channel permutation.
Datapoint augment(const Datapoint& dp, const AugmentSpec& spec, Rng& rng);

/// Generator for datapoint `index` in `epoch`.
inline Rng augment_rng(const AugmentSpec& spec, std::uint64_t epoch, std::uint64_t index) {
  return make_rng(spec.seed, {epoch, index});
}

}  // namespace seqsort::dataset
