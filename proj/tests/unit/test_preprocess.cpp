#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "seqsort/dicom.hpp"
#include "seqsort/preprocess.hpp"
#include "seqsort/rng.hpp"

using namespace seqsort;
using namespace seqsort::preprocess;

namespace {

Image random_image(int r, int c, std::uint64_t seed, double lo = 0, double hi = 1000) {
  Image im(r, c);
  auto rng = make_rng(seed);
  for (auto& v : im.data) v = std::round(uniform(rng, lo, hi));
  return im;
}

// Direct evaluation of half-pixel-centre bilinear sampling, clamped at the
// border.
double bilinear_oracle(const Image& in, int out_rows, int out_cols, int i, int j) {
  const double sy = (i + 0.5) * in.rows / out_rows - 0.5;
  const double sx = (j + 0.5) * in.cols / out_cols - 0.5;
  auto clampd = [](double v, double hi) { return std::min(std::max(v, 0.0), hi); };
  const double y = clampd(sy, in.rows - 1), x = clampd(sx, in.cols - 1);
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, in.rows - 1), x1 = std::min(x0 + 1, in.cols - 1);
  const double fy = y - y0, fx = x - x0;
  return (1 - fy) * ((1 - fx) * in.at(y0, x0) + fx * in.at(y0, x1)) + fy * ((1 - fx) * in.at(y1, x0) + fx * in.at(y1, x1));
}

// Writes a series of fixture files and returns its record.
dicom::SeriesRecord fixture_series(const std::filesystem::path& dir, const std::vector<Image>& images,
                                   double slope = 1.0, double intercept = 0.0) {
  std::vector<dicom::DicomImageMeta> metas;
  for (std::size_t k = 0; k < images.size(); ++k) {
    dicom::FixtureImage f;
    f.study_instance_uid = "1.9";
    f.series_instance_uid = "1.9.1";
    f.sop_instance_uid = "1.9.1." + std::to_string(k);
    f.manufacturer = "Philips";
    f.series_description = "fixture";
    f.instance_number = static_cast<int>(k) + 1;
    f.rows = images[k].rows;
    f.columns = images[k].cols;
    f.rescale_slope = slope;
    f.rescale_intercept = intercept;
    for (double v : images[k].data) f.pixels.push_back(static_cast<std::int32_t>(v));
    const auto bytes = dicom::write_fixture(f);
    const auto path = dir / ("im" + std::to_string(k) + ".dcm");
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    REQUIRE(fp);
    std::fwrite(bytes.data(), 1, bytes.size(), fp);
    std::fclose(fp);
    metas.push_back(dicom::read_dicom_meta(path));
  }
  auto recs = dicom::group_series(metas, dicom::VendorMap::defaults());
  REQUIRE(recs.size() == 1);
  return recs[0];
}

}  // namespace

TEST_SUITE("preprocess") {

TEST_CASE("select_three indices") {
  using A = std::array<std::size_t, 3>;
  CHECK(select_three_indices(7) == A{0, 3, 6});
  CHECK(select_three_indices(1) == A{0, 0, 0});
  CHECK(select_three_indices(2) == A{0, 0, 1});
  CHECK(select_three_indices(3) == A{0, 1, 2});
  CHECK(select_three_indices(8) == A{0, 3, 7});
  for (std::size_t n = 1; n < 50; ++n) {
    const auto idx = select_three_indices(n);
    CHECK(idx[1] == (n - 1) / 2);
    CHECK(idx[2] == n - 1);
  }
}

TEST_CASE("resize of a constant is constant") {
  for (auto [r, c] : {std::pair{1, 1}, std::pair{3, 7}, std::pair{300, 200}}) {
    const auto out = resize_bilinear(Image(r, c, 42.5));
    CHECK(out.rows == 256);
    CHECK(out.cols == 256);
    for (double v : out.data) REQUIRE(v == 42.5);
  }
}

TEST_CASE("resize at native size is the identity") {
  const auto im = random_image(256, 256, 1);
  CHECK(resize_bilinear(im).data == im.data);
}

TEST_CASE("two-column ramp gives monotone rows from 0 to 1") {
  Image im(2, 2);
  im.data = {0, 1, 0, 1};
  const auto out = resize_bilinear(im);
  for (int i = 0; i < 256; ++i) {
    CHECK(out.at(i, 0) == 0.0);
    CHECK(out.at(i, 255) == 1.0);
    for (int j = 1; j < 256; ++j) REQUIRE(out.at(i, j) >= out.at(i, j - 1));
  }
}

TEST_CASE("resize agrees with direct evaluation of the bilinear formula") {
  for (auto [r, c] : {std::pair{2, 2}, std::pair{5, 9}, std::pair{64, 48}, std::pair{300, 257}}) {
    const auto im = random_image(r, c, 2 + r);
    const auto out = resize_bilinear(im, 40, 33);
    double worst = 0;
    for (int i = 0; i < 40; ++i)
      for (int j = 0; j < 33; ++j) worst = std::max(worst, std::abs(out.at(i, j) - bilinear_oracle(im, 40, 33, i, j)));
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("min-max normalization") {
  Image im(1, 3);
  im.data = {10, 20, 30};
  CHECK(normalize_minmax(im).data == std::vector<double>{0.0, 0.5, 1.0});
  CHECK(normalize_minmax(Image(4, 4, 7.0)).data == std::vector<double>(16, 0.0));
  Image unit(1, 4);
  unit.data = {0, 0.25, 1, 0.5};
  CHECK(normalize_minmax(unit).data == unit.data);
}

TEST_CASE("one image gives three identical channels") {
  const auto im = random_image(20, 30, 3);
  const auto dp = build_datapoint_from_images({im, im, im});
  for (int r = 0; r < 256; ++r)
    for (int c = 0; c < 256; ++c) {
      REQUIRE(dp.at(r, c, 0) == dp.at(r, c, 1));
      REQUIRE(dp.at(r, c, 0) == dp.at(r, c, 2));
    }
}

TEST_CASE("identical constant images give an all-zero datapoint") {
  const Image k(10, 10, 55);
  const auto dp = build_datapoint_from_images({k, k, k});
  CHECK(std::all_of(dp.pixels.begin(), dp.pixels.end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("channels are normalized independently and stack in order") {
  std::array<Image, 3> raw{Image(16, 16), Image(16, 16), Image(16, 16)};
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      raw[0].at(r, c) = c;
      raw[1].at(r, c) = 1000 + 50.0 * r;
      raw[2].at(r, c) = -3.0 * (r + c);
    }
  const auto dp = build_datapoint_from_images(raw, 32);
  for (int k = 0; k < 3; ++k) {
    // Scalar oracle: resize then normalize the channel alone.
    const auto ref = normalize_minmax(resize_bilinear(raw[k], 32, 32));
    float lo = 1, hi = 0;
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) {
        REQUIRE(dp.at(r, c, k) == static_cast<float>(ref.at(r, c)));
        lo = std::min(lo, dp.at(r, c, k));
        hi = std::max(hi, dp.at(r, c, k));
      }
    CHECK(lo == 0.0f);
    CHECK(hi == 1.0f);
  }
}

TEST_CASE("perturbing one channel's source leaves the other channels untouched") {
  std::array<Image, 3> raw{random_image(24, 24, 4), random_image(24, 24, 5), random_image(24, 24, 6)};
  const auto a = build_datapoint_from_images(raw, 64);
  raw[1] = random_image(24, 24, 7);
  const auto b = build_datapoint_from_images(raw, 64);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) {
      REQUIRE(a.at(r, c, 0) == b.at(r, c, 0));
      REQUIRE(a.at(r, c, 2) == b.at(r, c, 2));
    }
}

TEST_CASE("output stays in [0,1] and finite for extreme inputs") {
  std::array<Image, 3> raw{random_image(9, 300, 8, -1e9, 1e9), random_image(1, 1, 9), random_image(300, 2, 10, -5, 5)};
  const auto dp = build_datapoint_from_images(raw);
  CHECK(dp.pixels.size() == 256u * 256u * 3u);
  for (float v : dp.pixels) REQUIRE((std::isfinite(v) && v >= 0.0f && v <= 1.0f));
}

TEST_CASE("affine intensity change of the source is absorbed by normalization") {
  const std::array<Image, 3> raw{random_image(40, 50, 11), random_image(40, 50, 12), random_image(40, 50, 13)};
  const auto base = build_datapoint_from_images(raw, 64);

  // Power-of-two gain is exact in floating point, so the output is bitwise unchanged.
  std::array<Image, 3> scaled = raw;
  for (auto& im : scaled)
    for (auto& v : im.data) v *= 8.0;
  CHECK(build_datapoint_from_images(scaled, 64).pixels == base.pixels);

  // A general gain and offset changes only rounding.
  std::array<Image, 3> affine = raw;
  for (auto& im : affine)
    for (auto& v : im.data) v = 3.7 * v + 123.0;
  const auto moved = build_datapoint_from_images(affine, 64);
  double worst = 0;
  for (std::size_t i = 0; i < base.pixels.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(moved.pixels[i]) - base.pixels[i]));
  CHECK(worst < 1e-6);
}

TEST_CASE("DICOM datapoint ignores modality rescale and matches the image route") {
  const auto dir = testutil::temp_dir("preprocess_dicom");
  std::vector<Image> imgs;
  for (int k = 0; k < 5; ++k) imgs.push_back(random_image(12, 20, 20 + k, 0, 4000));
  const auto d1 = dir / "a";
  const auto d2 = dir / "b";
  std::filesystem::create_directories(d1);
  std::filesystem::create_directories(d2);
  const auto rec1 = fixture_series(d1, imgs, 1.0, 0.0);
  const auto rec2 = fixture_series(d2, imgs, 2.5, -1024.0);
  const auto a = build_datapoint(rec1, std::nullopt, 64);
  const auto b = build_datapoint(rec2, std::nullopt, 64);
  CHECK(a.pixels == b.pixels);
  CHECK(a.study_instance_uid == "1.9");
  CHECK(a.source_series == rec1.group_key);

  const auto direct = build_datapoint_from_images({imgs[0], imgs[2], imgs[4]}, 64);
  CHECK(direct.pixels == a.pixels);
}

TEST_CASE("PGM dump and reload") {
  const auto dir = testutil::temp_dir("preprocess_pgm");
  const std::array<Image, 3> raw{random_image(8, 8, 30), random_image(8, 8, 31), random_image(8, 8, 32)};
  const auto dp = build_datapoint_from_images(raw, 16);
  dump_datapoint_pgm(dp, dir, "s");
  const auto back = build_datapoint_from_pgm({dir / "s_c0.pgm", dir / "s_c1.pgm", dir / "s_c2.pgm"}, 16);
  double worst = 0;
  for (std::size_t i = 0; i < dp.pixels.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(back.pixels[i]) - dp.pixels[i]));
  CHECK(worst <= 1.0 / 255 + 1e-6);
}

}  // TEST_SUITE
