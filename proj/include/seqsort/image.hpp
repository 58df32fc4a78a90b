#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace seqsort {

/// Row-major single-channel image of reals.
struct Image {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Image() = default;
  Image(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

/// Writes a binary 8-bit PGM (P5). Values are clamped to [0,1] and scaled to 0..255.
void write_pgm(const std::filesystem::path& path, const Image& image);

/// Reads a binary PGM (P5) with maxval up to 65535; values are returned as raw
/// sample values (not scaled).
Image read_pgm(const std::filesystem::path& path);

}  // namespace seqsort
