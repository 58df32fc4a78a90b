#include "seqsort/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "seqsort/error.hpp"

namespace seqsort::preprocess {

Image Datapoint::channel(int c) const {
  Image img(size, size);
  for (int r = 0; r < size; ++r) {
    for (int col = 0; col < size; ++col) img.at(r, col) = at(r, col, c);
  }
  return img;
}

std::array<std::size_t, 3> select_three_indices(std::size_t n) {
  if (n == 0) fail(ErrorCode::EmptyInput, "series has no images");
  if (n == 1) return {0, 0, 0};
  if (n == 2) return {0, 0, 1};
  return {0, (n - 1) / 2, n - 1};
}

std::array<const dicom::DicomImageMeta*, 3> select_three(const dicom::SeriesRecord& record) {
  auto idx = select_three_indices(record.members.size());
  return {&record.members[idx[0]], &record.members[idx[1]], &record.members[idx[2]]};
}

Image resize_bilinear(const Image& image, int out_rows, int out_cols) {
  if (image.rows < 1 || image.cols < 1) fail(ErrorCode::ShapeMismatch, "resize of an empty image");
  Image out(out_rows, out_cols);
  const double sy = static_cast<double>(image.rows) / out_rows;
  const double sx = static_cast<double>(image.cols) / out_cols;

  // Column sampling positions are shared by every row.
  std::vector<int> x0(out_cols), x1(out_cols);
  std::vector<double> fx(out_cols);
  for (int j = 0; j < out_cols; ++j) {
    double x = std::clamp((j + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.cols - 1));
    x0[j] = static_cast<int>(std::floor(x));
    x1[j] = std::min(x0[j] + 1, image.cols - 1);
    fx[j] = x - x0[j];
  }
  for (int i = 0; i < out_rows; ++i) {
    double y = std::clamp((i + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.rows - 1));
    const int y0 = static_cast<int>(std::floor(y));
    const int y1 = std::min(y0 + 1, image.rows - 1);
    const double fy = y - y0;
    for (int j = 0; j < out_cols; ++j) {
      const double top = (1.0 - fx[j]) * image.at(y0, x0[j]) + fx[j] * image.at(y0, x1[j]);
      const double bottom = (1.0 - fx[j]) * image.at(y1, x0[j]) + fx[j] * image.at(y1, x1[j]);
      out.at(i, j) = (1.0 - fy) * top + fy * bottom;
    }
  }
  return out;
}

Image normalize_minmax(const Image& image) {
  Image out(image.rows, image.cols);
  if (image.data.empty()) return out;
  auto [lo, hi] = std::minmax_element(image.data.begin(), image.data.end());
  const double mn = *lo, mx = *hi;
  if (!(mx > mn)) return out;
  const double range = mx - mn;
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    out.data[i] = std::clamp((image.data[i] - mn) / range, 0.0, 1.0);
  }
  return out;
}

Datapoint build_datapoint_from_images(const std::array<Image, 3>& raw, int size) {
  Datapoint dp;
  dp.size = size;
  dp.pixels.assign(static_cast<std::size_t>(size) * size * kChannels, 0.0f);
  for (int c = 0; c < kChannels; ++c) {
    // Identical sources produce identical channels without recomputation.
    bool reused = false;
    for (int prev = 0; prev < c; ++prev) {
      if (&raw[prev] == &raw[c] || (raw[prev].rows == raw[c].rows && raw[prev].cols == raw[c].cols &&
                                    raw[prev].data == raw[c].data)) {
        for (std::size_t p = 0; p < static_cast<std::size_t>(size) * size; ++p) {
          dp.pixels[p * kChannels + c] = dp.pixels[p * kChannels + prev];
        }
        reused = true;
        break;
      }
    }
    if (reused) continue;
    Image norm = normalize_minmax(resize_bilinear(raw[c], size, size));
    for (std::size_t p = 0; p < norm.data.size(); ++p) {
      dp.pixels[p * kChannels + c] = static_cast<float>(norm.data[p]);
    }
  }
  return dp;
}

Datapoint build_datapoint(const dicom::SeriesRecord& record, std::optional<labeling::JointLabel> label, int size) {
  auto selected = select_three(record);
  std::array<Image, 3> raw;
  for (int c = 0; c < 3; ++c) {
    // Reuse the decode when the same member was selected twice.
    if (c > 0 && selected[c] == selected[c - 1]) {
      raw[c] = raw[c - 1];
      continue;
    }
    dicom::DicomImage img = dicom::load_dicom_image(selected[c]->file_path);
    const double sign = img.meta.rescale_slope < 0 ? -1.0 : 1.0;
    raw[c] = Image(img.meta.rows, img.meta.columns);
    for (std::size_t i = 0; i < img.stored.size(); ++i) raw[c].data[i] = sign * img.stored[i];
  }
  Datapoint dp = build_datapoint_from_images(raw, size);
  dp.label = label;
  dp.study_instance_uid = record.study_instance_uid;
  dp.vendor = record.vendor;
  dp.source_series = record.group_key;
  return dp;
}

Datapoint build_datapoint_from_pgm(const std::array<std::filesystem::path, 3>& files, int size) {
  std::array<Image, 3> raw{read_pgm(files[0]), read_pgm(files[1]), read_pgm(files[2])};
  return build_datapoint_from_images(raw, size);
}

void dump_datapoint_pgm(const Datapoint& dp, const std::filesystem::path& dir, const std::string& stem) {
  for (int c = 0; c < kChannels; ++c) {
    write_pgm(dir / (stem + "_c" + std::to_string(c) + ".pgm"), dp.channel(c));
  }
}

}  // namespace seqsort::preprocess
