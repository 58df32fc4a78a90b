#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "seqsort/commands.hpp"
#include "seqsort/config.hpp"
#include "seqsort/error.hpp"

using namespace seqsort;
using namespace seqsort::config;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::IOFailure;
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("empty text gives validated defaults") {
  const auto c = parse("");
  CHECK(c.taxonomy_version == kTaxonomyVersion);
  CHECK(c.class_threshold == 20);
  CHECK(c.train.batch_size == 32);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("unknown keys, unknown sections and bad values are configuration errors") {
  CHECK(code_of([] { parse("bogus = 1\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse("[train]\nepoch = 3\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse("[nonsense]\nx = 1\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse("[train]\nepochs = three\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse("[train]\nbatch_size = 1\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse("[augment]\nchannel_shuffle = maybe\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse("[split]\ntrain_fraction = 0.5\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse("taxonomy_version = 2\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse("[train\nepochs = 3\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { load("/nonexistent/seqsort.ini"); }) == ErrorCode::ConfigError);
}

TEST_CASE("the shipped phantom config parses with the acceptance settings") {
  const fs::path path = fs::path(SEQSORT_SOURCE_DIR) / "config" / "phantom.ini";
  const auto c = load(path);
  CHECK(c.train.epochs == 30);
  CHECK(c.train.batch_size == 32);
  CHECK(c.train.input_size == 128);
  CHECK(c.train.lr.lr_min == 1e-4);
  CHECK(c.train.lr.lr_max == 0.01);
  CHECK(c.train.lr.cycle_epochs == 10);
  CHECK(c.class_threshold == 10);
  CHECK(c.phantom.studies_per_class == 10);
  CHECK(c.split.train_fraction == 0.64);
  // Relative paths resolve against the config file's directory.
  CHECK(c.data_source == path.parent_path() / "phantom" / "manifest.json");
  CHECK(c.train.checkpoint_dir == path.parent_path() / "run");
}

TEST_CASE("nested specs are copied into the training config") {
  const auto c = parse("[augment]\nnoise_sigma_max = 0.02\nseed = 9\n[oversample]\nclass_max_ratio = 3\n");
  CHECK(c.train.augment.noise_sigma_max == 0.02);
  CHECK(c.train.augment.seed == 9);
  CHECK(c.train.oversample.class_max_ratio == 3.0);
}

TEST_CASE("vendor map section replaces the defaults in order") {
  const auto c = parse("[vendor_map]\nacme = VendorB\nphilips = VendorA\n");
  CHECK(c.vendor_map.classify("ACME Medical") == dicom::Vendor::VendorB);
  CHECK(c.vendor_map.classify("Philips") == dicom::Vendor::VendorA);
  CHECK(c.vendor_map.classify("SIEMENS") == dicom::Vendor::Unknown);
}

TEST_CASE("absolute paths are kept and label maps load relative to the config") {
  const auto dir = testutil::temp_dir("config_paths");
  {
    std::ofstream f(dir / "labels.map");
    f << "cine => CineBSSFP/ShortAxis\n";
  }
  {
    std::ofstream f(dir / "run.ini");
    f << "label_map_path = labels.map\n[train]\ncheckpoint_dir = /abs/run\n";
  }
  const auto c = load(dir / "run.ini");
  CHECK(c.label_map_path == dir / "labels.map");
  CHECK(c.train.checkpoint_dir == fs::path("/abs/run"));
  const auto lm = c.label_map();
  CHECK(lm.rules().size() == 1);
}

TEST_CASE("override_seed sets every seed") {
  auto c = parse("[split]\nseed = 1\n[train]\nseed = 2\n[augment]\nseed = 3\n[oversample]\nseed = 4\n[phantom]\nseed = 5\n");
  c.override_seed(77);
  CHECK(c.split.seed == 77);
  CHECK(c.train.seed == 77);
  CHECK(c.augment.seed == 77);
  CHECK(c.oversample.seed == 77);
  CHECK(c.phantom.seed == 77);
  CHECK(c.train.augment.seed == 77);
  CHECK(c.train.oversample.seed == 77);
}

TEST_CASE("training without a validation split is a configuration error") {
  auto c = parse("[split]\ntrain_fraction = 0.8\nval_fraction = 0\ntest_fraction = 0.2\n");
  c.train.checkpoint_dir = testutil::temp_dir("config_noval");
  c.data_source = c.train.checkpoint_dir / "missing.json";
  CHECK(code_of([&] { commands::cmd_train(c); }) == ErrorCode::ConfigError);
}

}  // TEST_SUITE
