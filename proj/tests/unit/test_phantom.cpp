#include <doctest.h>

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "seqsort/commands.hpp"
#include "seqsort/error.hpp"
#include "seqsort/phantom.hpp"

using namespace seqsort;
using namespace seqsort::phantom;
namespace fs = std::filesystem;

namespace {

// The default phantom is generated once and shared by the tests below.
const fs::path& default_tree() {
  static const fs::path dir = [] {
    auto d = testutil::temp_dir("phantom_default");
    PhantomSpec spec;
    spec.seed = 2024;
    generate(spec, d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  return out;
}

std::vector<double> flat(const preprocess::Datapoint& d) { return {d.pixels.begin(), d.pixels.end()}; }

}  // namespace

TEST_SUITE("phantom") {

TEST_CASE("default classes are 20 admissible pairs") {
  const auto cls = default_classes();
  CHECK(cls.size() == 20);
  CHECK(std::set<JointLabel>(cls.begin(), cls.end()).size() == 20);
  for (const auto& l : cls) CHECK(labeling::is_admissible(l));
  std::set<labeling::SequenceClass> seqs;
  for (const auto& l : cls) seqs.insert(l.sequence);
  CHECK(seqs.size() == 8);
}

TEST_CASE("spec validation") {
  PhantomSpec s;
  CHECK_NOTHROW(s.validate());
  s.classes.push_back(s.classes.front());
  CHECK_THROWS_AS(s.validate(), Error);
  s = PhantomSpec{};
  s.classes = {{labeling::SequenceClass::B0Map, labeling::PlaneClass::ShortAxis}};
  CHECK_THROWS_AS(s.validate(), Error);
  s = PhantomSpec{};
  s.studies_per_class = 0;
  CHECK_THROWS_AS(s.validate(), Error);
  CHECK(write_format_from_string("pgm_triplet") == WriteFormat::PgmTriplet);
  CHECK_THROWS_AS(write_format_from_string("png"), Error);
}

TEST_CASE("default phantom has 200 series and 1600 files") {
  const auto m = Manifest::load(default_tree() / "manifest.json");
  CHECK(m.series.size() == 200);
  std::size_t files = 0;
  std::map<JointLabel, int> per_class;
  std::set<std::string> studies, vendors;
  for (const auto& e : m.series) {
    files += e.files.size();
    per_class[e.label()]++;
    studies.insert(e.study_uid);
    vendors.insert(e.vendor);
    for (const auto& f : e.files) REQUIRE(fs::exists(default_tree() / f));
  }
  CHECK(files == 1600);
  CHECK(per_class.size() == 20);
  for (const auto& [l, n] : per_class) CHECK(n == 10);
  CHECK(studies.size() == 10);
  CHECK(vendors == std::set<std::string>{"VendorA", "VendorB"});
  CHECK(std::is_sorted(m.series.begin(), m.series.end(),
                       [](const auto& a, const auto& b) { return a.series_key < b.series_key; }));
  CHECK(Manifest::from_json(m.to_json()).to_json() == m.to_json());
}

TEST_CASE("same seed gives a bitwise identical tree; a different seed does not") {
  PhantomSpec spec;
  spec.studies_per_class = 2;
  spec.slices_per_series = {2, 4};
  spec.image_size = {48, 40};
  spec.seed = 5;
  for (auto fmt : {WriteFormat::DicomFixture, WriteFormat::PgmTriplet}) {
    spec.write_format = fmt;
    const auto a = testutil::temp_dir("phantom_det_a"), b = testutil::temp_dir("phantom_det_b");
    generate(spec, a);
    generate(spec, b);
    const auto ta = tree_contents(a);
    CHECK(ta == tree_contents(b));
    auto other = spec;
    other.seed = 6;
    const auto c = testutil::temp_dir("phantom_det_c");
    generate(other, c);
    CHECK(ta != tree_contents(c));
  }
}

TEST_CASE("DICOM phantom ingests cleanly into exactly the intended series and labels") {
  const auto m = Manifest::load(default_tree() / "manifest.json");
  const auto res = commands::ingest(default_tree(), dicom::VendorMap::defaults(), labeling::LabelMap::defaults(),
                                    default_tree() / "manifest.json");
  CHECK(res.errors.empty());
  CHECK(res.secondary_captures.empty());
  CHECK(res.files_seen == 1600);
  REQUIRE(res.series.size() == m.series.size());
  std::map<std::set<std::string>, JointLabel> truth;
  for (const auto& e : m.series) truth[std::set<std::string>(e.files.begin(), e.files.end())] = e.label();
  int correct = 0;
  for (const auto& s : res.series) {
    std::set<std::string> files;
    for (const auto& f : s.files) files.insert(fs::relative(f, default_tree()).generic_string());
    const auto it = truth.find(files);
    REQUIRE(it != truth.end());
    correct += s.label == it->second;
  }
  CHECK(correct == 200);
}

TEST_CASE("PGM triplet phantom loads with the same labels") {
  PhantomSpec spec;
  spec.studies_per_class = 1;
  spec.write_format = WriteFormat::PgmTriplet;
  spec.seed = 8;
  const auto dir = testutil::temp_dir("phantom_pgm");
  const auto m = generate(spec, dir);
  const auto dps = load_datapoints(m, dir, 32);
  REQUIRE(dps.size() == 20);
  for (std::size_t i = 0; i < dps.size(); ++i) {
    CHECK(dps[i].label == m.series[i].label());
    CHECK(dps[i].size == 32);
  }
}

TEST_CASE("class means are far apart relative to within-class spread") {
  // Mean image per class and the per-pixel within-class standard deviation
  // (root mean over pixels of the class variance); the smallest distance
  // between two class means must exceed 10x the largest such deviation.
  const auto m = Manifest::load(default_tree() / "manifest.json");
  const auto dps = load_datapoints(m, default_tree(), 32);
  std::map<JointLabel, std::vector<const preprocess::Datapoint*>> by_class;
  for (const auto& d : dps) by_class[*d.label].push_back(&d);
  std::map<JointLabel, std::vector<double>> mean;
  double max_sd = 0;
  for (const auto& [l, items] : by_class) {
    std::vector<double> mu(items[0]->pixels.size(), 0.0);
    for (const auto* d : items)
      for (std::size_t i = 0; i < mu.size(); ++i) mu[i] += d->pixels[i] / static_cast<double>(items.size());
    double var = 0;
    for (const auto* d : items)
      for (std::size_t i = 0; i < mu.size(); ++i) var += (d->pixels[i] - mu[i]) * (d->pixels[i] - mu[i]);
    var /= static_cast<double>(items.size() - 1) * mu.size();
    max_sd = std::max(max_sd, std::sqrt(var));
    mean[l] = std::move(mu);
  }
  double min_dist = 1e300;
  for (auto a = mean.begin(); a != mean.end(); ++a)
    for (auto b = std::next(a); b != mean.end(); ++b) {
      double d2 = 0;
      for (std::size_t i = 0; i < a->second.size(); ++i) d2 += (a->second[i] - b->second[i]) * (a->second[i] - b->second[i]);
      min_dist = std::min(min_dist, std::sqrt(d2));
    }
  MESSAGE("min class-mean distance " << min_dist << ", max within-class sd " << max_sd);
  CHECK(min_dist > 10 * max_sd);
}

TEST_CASE("a linear probe on 32x32 downsamples exceeds 80 percent") {
  const auto m = Manifest::load(default_tree() / "manifest.json");
  const auto dps = load_datapoints(m, default_tree(), 32);
  const auto cls = default_classes();
  std::map<JointLabel, int> index;
  for (std::size_t i = 0; i < cls.size(); ++i) index[cls[i]] = static_cast<int>(i);

  // Studies 0-6 train, 7-9 test.
  std::vector<std::string> study_order;
  for (const auto& e : m.series)
    if (std::find(study_order.begin(), study_order.end(), e.study_uid) == study_order.end()) study_order.push_back(e.study_uid);
  std::sort(study_order.begin(), study_order.end());
  std::set<std::string> test_studies(study_order.begin() + 7, study_order.end());

  std::vector<std::vector<double>> xtr, xte;
  std::vector<int> ytr, yte;
  for (const auto& d : dps) {
    auto x = flat(d);
    x.push_back(1.0);  // bias
    (test_studies.count(d.study_instance_uid) ? xte : xtr).push_back(std::move(x));
    (test_studies.count(d.study_instance_uid) ? yte : ytr).push_back(index.at(*d.label));
  }
  const std::size_t k = cls.size(), f = xtr[0].size();

  // Multinomial logistic regression, full-batch gradient descent.
  std::vector<double> w(k * f, 0.0);
  auto scores = [&](const std::vector<double>& x) {
    std::vector<double> s(k, 0.0);
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t j = 0; j < f; ++j) s[c] += w[c * f + j] * x[j];
    return s;
  };
  for (int it = 0; it < 150; ++it) {
    std::vector<double> g(k * f, 0.0);
    for (std::size_t n = 0; n < xtr.size(); ++n) {
      auto s = scores(xtr[n]);
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0;
      for (auto& v : s) z += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < k; ++c) {
        const double r = s[c] / z - (static_cast<int>(c) == ytr[n] ? 1.0 : 0.0);
        for (std::size_t j = 0; j < f; ++j) g[c * f + j] += r * xtr[n][j];
      }
    }
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= 0.05 * g[i] / xtr.size();
  }
  int correct = 0;
  for (std::size_t n = 0; n < xte.size(); ++n) {
    const auto s = scores(xte[n]);
    correct += static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin()) == yte[n];
  }
  const double acc = static_cast<double>(correct) / xte.size();
  MESSAGE("linear probe accuracy " << acc);
  CHECK(acc > 0.8);
}

TEST_CASE("disc mask covers the centred disc") {
  const auto mask = disc_mask(64);
  const auto inside = std::count(mask.begin(), mask.end(), 1);
  CHECK(inside > 0);
  CHECK(mask[32 * 64 + 32] == 1);
  const auto shifted = disc_mask(64, {0.5, 0.0});
  CHECK(shifted[32 * 64 + 32] == 0);
  CHECK(shifted[32 * 64 + 48] == 1);
  CHECK(mask[0] == 0);
  // Area of the disc in a [-1,1]^2 square.
  CHECK(std::abs(inside / (64.0 * 64.0) - 3.14159265 * kDiscRadius * kDiscRadius / 4.0) < 0.01);
}

TEST_CASE("WBLGE discs sit at the manifest centre") {
  const auto m = Manifest::load(default_tree() / "manifest.json");
  const auto dps = load_datapoints(m, default_tree(), 64);
  std::set<std::pair<double, double>> centres;
  for (std::size_t i = 0; i < dps.size(); ++i) {
    const auto& e = m.series[i];
    if (e.sequence != labeling::SequenceClass::WBLGE) {
      CHECK_FALSE(e.disc_centre.has_value());
      continue;
    }
    REQUIRE(e.disc_centre.has_value());
    CHECK(std::hypot((*e.disc_centre)[0], (*e.disc_centre)[1]) <= kDiscMaxOffset);
    centres.insert({(*e.disc_centre)[0], (*e.disc_centre)[1]});
    const auto mask = disc_mask(64, *e.disc_centre);
    double in = 0, out = 0;
    std::size_t n_in = 0, n_out = 0;
    for (std::size_t p = 0; p < mask.size(); ++p) {
      const double v = dps[i].pixels[p * 3 + 1];
      (mask[p] ? in : out) += v;
      (mask[p] ? n_in : n_out)++;
    }
    CHECK(in / n_in > out / n_out + 0.5);
  }
  CHECK(centres.size() == 40);
}

}  // TEST_SUITE
