#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "seqsort/commands.hpp"
#include "seqsort/error.hpp"
#include "seqsort/fsutil.hpp"
#include "seqsort/nn/checkpoint.hpp"
#include "seqsort/nn/optim.hpp"
#include "seqsort/phantom.hpp"

using namespace seqsort;
namespace fs = std::filesystem;

namespace {

struct Tree {
  fs::path generated;  // phantom output with manifest.json
  fs::path scan;       // the same files without the manifest
  phantom::Manifest manifest;
};

Tree make_tree(const std::string& name, int studies, std::pair<int, int> slices, std::uint64_t seed) {
  Tree t;
  t.generated = testutil::temp_dir(name + "_gen");
  t.scan = testutil::temp_dir(name + "_scan");
  phantom::PhantomSpec spec;
  spec.studies_per_class = studies;
  spec.slices_per_series = slices;
  spec.image_size = {48, 48};
  spec.seed = seed;
  t.manifest = phantom::generate(spec, t.generated);
  fs::copy(t.generated, t.scan, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  fs::remove(t.scan / "manifest.json");
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::vector<std::string> relative_files(const fs::path& root) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root).generic_string());
  std::sort(out.begin(), out.end());
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SEQSORT_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

fs::path random_checkpoint(const std::string& name, int size, std::uint64_t seed) {
  nn::Architecture arch;
  arch.input_size = size;
  const auto path = testutil::temp_dir(name) / "model.ckpt";
  nn::save_checkpoint(path, nn::Checkpoint<float>{nn::he_normal_init<float>(arch, seed), std::nullopt, 0, seed, 0, 0.0, -1});
  return path;
}

}  // namespace

TEST_SUITE("commands") {

TEST_CASE("ingest of an empty directory writes an empty manifest and exits 0") {
  const auto dir = testutil::temp_dir("cmd_empty");
  const auto out = testutil::temp_dir("cmd_empty_out") / "series.json";
  CHECK(commands::cmd_ingest(dir, config::GlobalConfig{}, out) == commands::kExitOk);
  const auto j = nlohmann::json::parse(slurp(out));
  CHECK(j["series"].empty());
  CHECK(j["errors"].empty());
  CHECK(j["files_seen"] == 0);
}

TEST_CASE("one corrupt file among N gives N-1 series, one error record and exit 2") {
  const auto t = make_tree("cmd_corrupt", 1, {1, 1}, 3);
  const std::size_t n = t.manifest.series.size();
  REQUIRE(n == 20);
  const auto out = testutil::temp_dir("cmd_corrupt_out") / "series.json";
  REQUIRE(commands::cmd_ingest(t.scan, config::GlobalConfig{}, out) == commands::kExitOk);
  CHECK(nlohmann::json::parse(slurp(out))["series"].size() == n);

  const fs::path victim = t.scan / t.manifest.series[7].files.at(0);
  const std::string bytes = slurp(victim);
  {
    std::ofstream f(victim, std::ios::binary | std::ios::trunc);
    f << bytes.substr(0, 200);
  }
  CHECK(commands::cmd_ingest(t.scan, config::GlobalConfig{}, out) == commands::kExitPartial);
  const auto j = nlohmann::json::parse(slurp(out));
  CHECK(j["series"].size() == n - 1);
  REQUIRE(j["errors"].size() == 1);
  CHECK(fs::path(j["errors"][0]["path"].get<std::string>()).filename() == victim.filename());
}

TEST_CASE("ingest labels a phantom tree exactly as generated") {
  const auto t = make_tree("cmd_labels", 2, {2, 3}, 4);
  const auto res = commands::ingest(t.scan, dicom::VendorMap::defaults(), labeling::LabelMap::defaults());
  REQUIRE(res.series.size() == t.manifest.series.size());
  std::map<std::set<std::string>, labeling::JointLabel> truth;
  for (const auto& e : t.manifest.series) truth[std::set<std::string>(e.files.begin(), e.files.end())] = e.label();
  for (const auto& s : res.series) {
    std::set<std::string> files;
    for (const auto& f : s.files) files.insert(fs::relative(f, t.scan).generic_string());
    REQUIRE(truth.count(files) == 1);
    REQUIRE(s.label);
    CHECK(*s.label == truth.at(files));
  }
}

TEST_CASE("sort conserves files, matches evaluate and is idempotent") {
  const auto t = make_tree("cmd_sort", 2, {1, 3}, 5);
  {
    std::ofstream junk(t.scan / "notes.txt");
    junk << "not a DICOM file\n";
  }
  const auto ckpt = random_checkpoint("cmd_sort_model", 32, 6);
  const auto params = nn::load_checkpoint<float>(ckpt).params;
  const auto out = testutil::temp_dir("cmd_sort_out");

  const auto r = commands::sort_tree(t.scan, params, dicom::VendorMap::defaults(), out);
  const auto inputs = relative_files(t.scan);

  // Every input file appears exactly once under out_dir.
  std::multiset<std::string> placed;
  for (const auto& f : relative_files(out)) {
    if (f == "routing_report.json") continue;
    placed.insert(fs::path(f).filename().string());
  }
  CHECK(placed.size() == inputs.size());
  for (const auto& f : inputs) {
    std::string flat;
    for (char c : f) flat += c == '/' ? std::string("__") : std::string(1, c);
    CHECK(placed.count(flat) == 1);
  }
  CHECK(r.unclassified.size() == 1);
  CHECK(fs::exists(out / "unclassified" / "notes.txt"));
  CHECK(r.linked + r.copied == inputs.size());

  // A series of one image is still routed.
  CHECK(std::any_of(r.routed.begin(), r.routed.end(), [](const auto& s) { return s.files.size() == 1; }));

  // Folder accuracy equals evaluate()'s combined accuracy on the same data.
  std::map<std::set<std::string>, labeling::JointLabel> truth;
  for (const auto& e : t.manifest.series) truth[std::set<std::string>(e.files.begin(), e.files.end())] = e.label();
  std::int64_t correct = 0;
  for (const auto& s : r.routed) {
    std::set<std::string> files;
    for (const auto& f : s.files) files.insert(fs::relative(f, t.scan).generic_string());
    const auto label = truth.at(files);
    const std::string want = std::string(labeling::to_string(label.sequence)) + "/" + std::string(labeling::to_string(label.plane)) + "/";
    correct += s.folder.rfind(want, 0) == 0;
  }
  const auto data = commands::load_source(t.generated / "manifest.json", dicom::VendorMap::defaults(), 32);
  const auto report = evaluation::evaluate(params, std::span<const preprocess::Datapoint>(data));
  CHECK(report.overall.combined.total == static_cast<std::int64_t>(r.routed.size()));
  CHECK(report.overall.combined.correct == correct);

  // A second run changes nothing.
  const auto before = relative_files(out);
  const auto report_before = slurp(out / "routing_report.json");
  const auto again = commands::sort_tree(t.scan, params, dicom::VendorMap::defaults(), out);
  CHECK(again.linked == 0);
  CHECK(again.copied == 0);
  CHECK(again.unchanged == inputs.size());
  CHECK(relative_files(out) == before);
  CHECK(slurp(out / "routing_report.json") == report_before);
}

TEST_CASE("sort rejects a model with a foreign label table") {
  auto params = nn::load_checkpoint<float>(random_checkpoint("cmd_sort_foreign", 32, 7)).params;
  params.labels.sequences.pop_back();
  const auto dir = testutil::temp_dir("cmd_sort_foreign_in");
  try {
    commands::sort_tree(dir, params, dicom::VendorMap::defaults(), testutil::temp_dir("cmd_sort_foreign_out"));
    FAIL("expected VersionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::VersionMismatch);
  }
}

TEST_CASE("gradcam with an invalid class is InvalidClass and exit code 1") {
  const auto t = make_tree("cmd_gradcam", 1, {1, 1}, 8);
  const auto ckpt = random_checkpoint("cmd_gradcam_model", 32, 9);
  const auto manifest = t.generated / "manifest.json";
  const auto out = testutil::temp_dir("cmd_gradcam_out");
  const std::string key = t.manifest.series.front().series_key;
  for (const std::string cls : {"17", "-1", "NotAClass"}) {
    try {
      commands::cmd_gradcam(config::GlobalConfig{}, ckpt, manifest, key, "sequence", cls, out);
      FAIL("expected InvalidClass");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidClass);
    }
  }
  const std::string common =
      "gradcam --checkpoint " + ckpt.string() + " --manifest " + manifest.string() + " --series " + key + " --out " + out.string();
  CHECK(run_cli(common + " --head plane --class 10") == commands::kExitUsage);
  CHECK(run_cli(common + " --head sequence --class WBLGE") == commands::kExitOk);
  CHECK(std::any_of(fs::directory_iterator(out), fs::directory_iterator{},
                    [](const auto& e) { return e.path().string().ends_with("_heat.pgm"); }));
}

TEST_CASE("command line usage errors exit 1") {
  CHECK(run_cli("") == commands::kExitUsage);
  CHECK(run_cli("frobnicate") == commands::kExitUsage);
  CHECK(run_cli("sort") == commands::kExitUsage);
}

TEST_CASE("train with the same seed writes the same split manifest; --seed overrides it") {
  const auto t = make_tree("cmd_train", 5, {1, 1}, 10);
  const auto dir = testutil::temp_dir("cmd_train_cfg");
  {
    std::ofstream f(dir / "run.ini");
    f << "[data]\nclass_threshold = 1\n[train]\nepochs = 1\nbatch_size = 16\ninput_size = 16\nseed = 3\n"
         "[split]\nseed = 3\n";
  }
  const std::string base = "--config " + (dir / "run.ini").string() + " train --data " + (t.generated / "manifest.json").string();
  REQUIRE(run_cli(base + " --out " + (dir / "a").string()) == commands::kExitOk);
  REQUIRE(run_cli(base + " --out " + (dir / "b").string()) == commands::kExitOk);
  REQUIRE(run_cli("--seed 99 " + base + " --out " + (dir / "c").string()) == commands::kExitOk);
  const auto a = slurp(dir / "a" / "split_manifest.json");
  CHECK(!a.empty());
  CHECK(a == slurp(dir / "b" / "split_manifest.json"));
  CHECK(a != slurp(dir / "c" / "split_manifest.json"));
  CHECK(slurp(dir / "a" / "best.ckpt") == slurp(dir / "b" / "best.ckpt"));
  CHECK(slurp(dir / "a" / "last.ckpt") == slurp(dir / "b" / "last.ckpt"));

  // The written split covers every study once and keeps test studies out of training.
  const auto j = nlohmann::json::parse(a);
  std::set<std::string> studies;
  for (const auto& e : t.manifest.series) studies.insert(e.study_uid);
  CHECK(j["studies"].size() == studies.size());
}

TEST_CASE("phantom command honours the configured format") {
  auto cfg = config::parse("[phantom]\nstudies_per_class = 1\nslices_min = 1\nslices_max = 1\nrows = 32\ncols = 32\n"
                           "write_format = pgm_triplet\n");
  const auto out = testutil::temp_dir("cmd_phantom");
  CHECK(commands::cmd_phantom(cfg, out) == commands::kExitOk);
  const auto m = phantom::Manifest::load(out / "manifest.json");
  CHECK(m.write_format == phantom::WriteFormat::PgmTriplet);
  CHECK(m.series.size() == 20);
}

}  // TEST_SUITE
