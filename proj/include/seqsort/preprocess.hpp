#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "seqsort/dicom.hpp"
#include "seqsort/image.hpp"
#include "seqsort/labeling.hpp"

namespace seqsort::preprocess {

inline constexpr int kDefaultImageSize = 256;
inline constexpr int kChannels = 3;

/// Network input for one series: size x size x 3, channel-interleaved (HWC),
/// every value in [0,1].
struct Datapoint {
  int size = kDefaultImageSize;
  std::vector<float> pixels;
  std::optional<labeling::JointLabel> label;
  std::string study_instance_uid;
  dicom::Vendor vendor = dicom::Vendor::Unknown;
  std::string source_series;

  float at(int row, int col, int channel) const {
    return pixels[(static_cast<std::size_t>(row) * size + col) * kChannels + channel];
  }
  float& at(int row, int col, int channel) {
    return pixels[(static_cast<std::size_t>(row) * size + col) * kChannels + channel];
  }
  Image channel(int c) const;
};

/// Indices of (first, middle, last) for a series of n images. The middle is
/// floor((n-1)/2); short series repeat the first image: n=1 -> (0,0,0),
/// n=2 -> (0,0,1).
std::array<std::size_t, 3> select_three_indices(std::size_t n);

std::array<const dicom::DicomImageMeta*, 3> select_three(const dicom::SeriesRecord& record);

/// Bilinear resampling with half-pixel centres; samples beyond the border
/// clamp to the edge.
Image resize_bilinear(const Image& image, int out_rows = kDefaultImageSize, int out_cols = kDefaultImageSize);

/// (x - min) / (max - min); a constant image maps to all zeros.
Image normalize_minmax(const Image& image);

/// Resizes and normalizes each raw image independently and stacks them in
/// the given order.
Datapoint build_datapoint_from_images(const std::array<Image, 3>& raw, int size = kDefaultImageSize);

/// Decodes the three selected members of a series and builds its datapoint.
/// Min-max normalization absorbs the modality rescale, so channels are built
/// from stored values, flipped when the rescale slope is negative.
///
/// Throws Error(PixelDecodeFailure) or Error(IOFailure) from the reader.
Datapoint build_datapoint(const dicom::SeriesRecord& record, std::optional<labeling::JointLabel> label,
                          int size = kDefaultImageSize);

/// Builds a datapoint from three PGM images (first, middle, last).
Datapoint build_datapoint_from_pgm(const std::array<std::filesystem::path, 3>& files, int size = kDefaultImageSize);

/// Writes <dir>/<stem>_c{0,1,2}.pgm.
void dump_datapoint_pgm(const Datapoint& dp, const std::filesystem::path& dir, const std::string& stem);

}  // namespace seqsort::preprocess
