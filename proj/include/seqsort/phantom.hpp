#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "seqsort/image.hpp"
#include "seqsort/labeling.hpp"
#include "seqsort/preprocess.hpp"

namespace seqsort::phantom {

using labeling::JointLabel;

/// Radius of the WBLGE disc and the largest offset of its centre, in
/// normalized image coordinates ([-1,1] across the image).
inline constexpr double kDiscRadius = 0.25;
inline constexpr double kDiscMaxOffset = 0.25;

enum class WriteFormat { DicomFixture, PgmTriplet };
std::string_view to_string(WriteFormat f);
/// Accepts "dicom_fixture" and "pgm_triplet"; throws Error(ConfigError).
WriteFormat write_format_from_string(std::string_view s);

/// 20 pairs: CineBSSFP, WBLGE x {2ch, 3ch, 4ch, SA}; DBLGE x {2ch, 4ch, SA};
/// EGE x {2ch, 3ch, 4ch}; FST2, TIScout x {4ch, SA}; MOLLINative, Perfusion x SA.
std::vector<JointLabel> default_classes();

struct PhantomSpec {
  std::vector<JointLabel> classes = default_classes();
  /// Every study holds one series of each class.
  int studies_per_class = 10;
  std::pair<int, int> slices_per_series{8, 8};
  std::pair<int, int> image_size{160, 160};  // rows, cols before resizing
  std::uint64_t seed = 0;
  WriteFormat write_format = WriteFormat::DicomFixture;

  /// Throws Error(ConfigError) for inadmissible or duplicate classes and
  /// non-positive counts.
  void validate() const;
};

struct ManifestEntry {
  std::string series_key;
  std::string study_uid;
  std::string vendor;        // VendorA / VendorB
  std::string manufacturer;  // as written to the files
  labeling::SequenceClass sequence{};
  labeling::PlaneClass plane{};
  std::vector<std::string> files;  // relative to the output directory
  std::optional<std::array<double, 2>> disc_centre;  // WBLGE rows: (x, y), normalized

  JointLabel label() const { return {sequence, plane}; }
};

struct Manifest {
  WriteFormat write_format = WriteFormat::DicomFixture;
  std::vector<ManifestEntry> series;  // sorted by series_key

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
  static Manifest load(const std::filesystem::path& path);
};

/// Per-series nuisance draws.
struct Nuisance {
  double rotation_deg = 0;
  double intensity_scale = 1;
  double noise_sigma = 0;
  std::array<double, 2> disc_centre{0.0, 0.0};  // WBLGE only, (x, y)
};

/// Slices of one series, values in [0,1] before intensity scaling. The
/// sequence class picks the texture and the plane class the field-of-view
/// shape and texture orientation.
std::vector<Image> render_series(const JointLabel& label, const Nuisance& nuisance, int slices, int rows, int cols,
                                 std::uint64_t noise_seed);

/// Pixels of a size x size image inside the bright disc that marks WBLGE,
/// for a disc centred at `centre` (the manifest's disc_centre).
std::vector<std::uint8_t> disc_mask(int size, std::array<double, 2> centre = {0.0, 0.0});

/// Renders the whole phantom below out_dir and writes out_dir/manifest.json.
///
/// Throws Error(IOFailure).
Manifest generate(const PhantomSpec& spec, const std::filesystem::path& out_dir);

/// Datapoints for every manifest row, built from the written files (DICOM
/// through the ingest path's preprocessing, PGM triplets directly).
std::vector<preprocess::Datapoint> load_datapoints(const Manifest& manifest, const std::filesystem::path& root,
                                                   int size);

}  // namespace seqsort::phantom
