#pragma once

// INI-style configuration:
//
//   taxonomy_version = 1
//   label_map_path = labels.map
//
//   [vendor_map]
//   philips = VendorA          ; manufacturer substring = vendor, first match wins
//
//   [data]      source, class_threshold
//   [split]     train_fraction, val_fraction, test_fraction, seed
//   [oversample] class_max_ratio, vendor_max_ratio, seed
//   [augment]   noise_sigma_max, gamma_min, gamma_max, rotation_max_deg,
//               scale_min, scale_max, translate_max_frac, deform_grid,
//               deform_max_px, channel_shuffle, seed
//   [train]     epochs, batch_size, lr_min, lr_max, cycle_epochs, seed,
//               val_every, input_size, checkpoint_dir, verbose
//   [phantom]   studies_per_class, slices_min, slices_max, rows, cols, seed,
//               write_format
//
// Unknown sections or keys are rejected. Relative paths resolve against the
// directory of the config file.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "seqsort/dataset.hpp"
#include "seqsort/dicom.hpp"
#include "seqsort/labeling.hpp"
#include "seqsort/phantom.hpp"
#include "seqsort/training.hpp"

namespace seqsort::config {

inline constexpr std::string_view kTaxonomyVersion = "1";

struct GlobalConfig {
  std::string taxonomy_version{kTaxonomyVersion};
  dicom::VendorMap vendor_map = dicom::VendorMap::defaults();
  std::filesystem::path label_map_path;  // empty: built-in rules
  std::filesystem::path data_source;     // ingest or phantom manifest
  int class_threshold = 20;
  dataset::SplitSpec split;
  dataset::OversampleSpec oversample;
  dataset::AugmentSpec augment;
  training::TrainConfig train;
  phantom::PhantomSpec phantom;

  /// Throws Error(ConfigError).
  void validate() const;
  labeling::LabelMap label_map() const;
  /// Sets every seed in the config.
  void override_seed(std::uint64_t seed);
};

/// Throws Error(ConfigError) on syntax errors, unknown keys, bad values or a
/// taxonomy_version other than kTaxonomyVersion.
GlobalConfig parse(std::string_view text, const std::filesystem::path& base_dir = {});
GlobalConfig load(const std::filesystem::path& path);

}  // namespace seqsort::config
