#include <doctest.h>

#include <map>
#include <set>

#include "seqsort/dataset.hpp"
#include "seqsort/error.hpp"

using namespace seqsort;
using namespace seqsort::dataset;
using labeling::JointLabel;
using S = labeling::SequenceClass;
using P = labeling::PlaneClass;

namespace {

const JointLabel kA{S::CineBSSFP, P::ShortAxis};
const JointLabel kB{S::WBLGE, P::FourChamber};
const JointLabel kC{S::HASTE, P::Axial};

Datapoint dp(std::string study, JointLabel label, dicom::Vendor vendor = dicom::Vendor::VendorA, int size = 4) {
  Datapoint d;
  d.size = size;
  d.pixels.assign(static_cast<std::size_t>(size) * size * 3, 0.5f);
  d.label = label;
  d.study_instance_uid = std::move(study);
  d.vendor = vendor;
  return d;
}

std::vector<Datapoint> single_label_studies(int n, JointLabel label) {
  std::vector<Datapoint> out;
  for (int i = 0; i < n; ++i) out.push_back(dp("s" + std::to_string(i), label));
  return out;
}

std::set<std::string> studies_of(const std::vector<Datapoint>& d, const std::vector<std::size_t>& idx) {
  std::set<std::string> s;
  for (auto i : idx) s.insert(d[i].study_instance_uid);
  return s;
}

Datapoint gradient_dp(int size) {
  Datapoint d = dp("s", kA, dicom::Vendor::VendorA, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      d.at(r, c, 0) = static_cast<float>(r) / (size - 1);
      d.at(r, c, 1) = static_cast<float>(c) / (size - 1);
      d.at(r, c, 2) = static_cast<float>((r * 7 + c * 3) % size) / size;
    }
  return d;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("spec validation") {
  SplitSpec s;
  CHECK_NOTHROW(s.validate());
  s.train_fraction = 0.7;
  CHECK_THROWS_AS(s.validate(), Error);
  OversampleSpec o;
  o.class_max_ratio = 0.5;
  CHECK_THROWS_AS(o.validate(), Error);
  AugmentSpec a;
  a.scale_range = {1.2, 0.8};
  CHECK_THROWS_AS(a.validate(), Error);
}

TEST_CASE("largest remainder allocation") {
  const std::vector<double> f{0.64, 0.16, 0.20};
  CHECK(largest_remainder(25, f) == std::vector<std::size_t>{16, 4, 5});
  CHECK(largest_remainder(10, f) == std::vector<std::size_t>{6, 2, 2});
  CHECK(largest_remainder(0, f) == std::vector<std::size_t>{0, 0, 0});
  for (std::size_t n = 1; n < 200; ++n) {
    const auto a = largest_remainder(n, f);
    CHECK(a[0] + a[1] + a[2] == n);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(static_cast<double>(a[k]) - f[k] * n) < 1.0);
  }
}

TEST_CASE("25 single-label studies split 16/4/5 and 10 split 6/2/2") {
  for (auto [n, tr, va, te] : {std::tuple{25, 16, 4, 5}, std::tuple{10, 6, 2, 2}}) {
    const auto d = single_label_studies(n, kA);
    SplitSpec spec;
    spec.seed = 3;
    const auto p = partition(d, spec);
    CHECK(p.train.size() == static_cast<std::size_t>(tr));
    CHECK(p.val.size() == static_cast<std::size_t>(va));
    CHECK(p.test.size() == static_cast<std::size_t>(te));
    CHECK(p.warnings.empty());
  }
}

TEST_CASE("datapoints of one study always share a split") {
  std::vector<Datapoint> d;
  for (int i = 0; i < 12; ++i) {
    d.push_back(dp("st" + std::to_string(i), kA));
    d.push_back(dp("st" + std::to_string(i), kB));
  }
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    SplitSpec spec;
    spec.seed = seed;
    const auto p = partition(d, spec);
    for (std::size_t i = 0; i < d.size(); i += 2) {
      const auto where = [&](std::size_t k) {
        if (std::count(p.train.begin(), p.train.end(), k)) return 0;
        if (std::count(p.val.begin(), p.val.end(), k)) return 1;
        return 2;
      };
      CHECK(where(i) == where(i + 1));
    }
    CHECK(p.train.size() + p.val.size() + p.test.size() == d.size());
  }
}

TEST_CASE("splits are study-disjoint, conserve datapoints and are seed-deterministic") {
  std::vector<Datapoint> d;
  for (int i = 0; i < 60; ++i) d.push_back(dp("u" + std::to_string(i % 37), i % 3 == 0 ? kA : (i % 3 == 1 ? kB : kC)));
  SplitSpec spec;
  spec.seed = 11;
  const auto p = partition(d, spec);
  const auto tr = studies_of(d, p.train), va = studies_of(d, p.val), te = studies_of(d, p.test);
  for (const auto& s : tr) {
    CHECK_FALSE(va.count(s));
    CHECK_FALSE(te.count(s));
  }
  for (const auto& s : va) CHECK_FALSE(te.count(s));
  CHECK(p.train.size() + p.val.size() + p.test.size() == d.size());
  CHECK(p.study_split.size() == 37);

  const auto again = partition(d, spec);
  CHECK(again.train == p.train);
  CHECK(again.val == p.val);
  CHECK(again.test == p.test);
  CHECK(split_manifest(again) == split_manifest(p));
}

TEST_CASE("a study joins the stratum of its rarest label") {
  // 20 studies of A; two of them also carry the rare label C.
  std::vector<Datapoint> d = single_label_studies(20, kA);
  d.push_back(dp("s0", kC));
  d.push_back(dp("s1", kC));
  for (int i = 20; i < 23; ++i) d.push_back(dp("r" + std::to_string(i), kC));
  SplitSpec spec;
  spec.seed = 1;
  const auto p = partition(d, spec);
  // Stratum C has 5 studies (s0, s1 and three others): 3/1/1.
  std::map<Split, int> c_studies;
  for (const auto& s : {"s0", "s1", "r20", "r21", "r22"}) c_studies[p.study_split.at(s)]++;
  CHECK(c_studies[Split::Train] == 3);
  CHECK(c_studies[Split::Val] == 1);
  CHECK(c_studies[Split::Test] == 1);
}

TEST_CASE("a stratum too small to split goes to train with a warning") {
  std::vector<Datapoint> d = single_label_studies(10, kA);
  d.push_back(dp("lonely", kB));
  SplitSpec spec;
  spec.seed = 2;
  const auto p = partition(d, spec);
  CHECK(p.study_split.at("lonely") == Split::Train);
  CHECK(p.warnings.size() == 1);
}

TEST_CASE("partition errors") {
  SplitSpec spec;
  try {
    partition(single_label_studies(2, kA), spec);
    FAIL("expected InsufficientStudies");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientStudies);
  }
  auto d = single_label_studies(5, kA);
  d[2].label.reset();
  try {
    partition(d, spec);
    FAIL("expected Unlabeled");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Unlabeled);
  }
}

TEST_CASE("oversampling grows the minority class to ceil(max / ratio)") {
  std::vector<Datapoint> d;
  for (int i = 0; i < 100; ++i) d.push_back(dp("a" + std::to_string(i), kA));
  for (int i = 0; i < 10; ++i) d.push_back(dp("b" + std::to_string(i), kB));
  std::vector<std::size_t> train(d.size());
  std::iota(train.begin(), train.end(), 0);
  const auto out = oversample(d, train, OversampleSpec{});
  std::map<JointLabel, int> counts;
  for (auto i : out) counts[*d[i].label]++;
  CHECK(counts[kA] == 100);
  CHECK(counts[kB] == 25);
  // Round-robin: every original B appears 2 or 3 times.
  std::map<std::size_t, int> copies;
  for (auto i : out) copies[i]++;
  for (std::size_t i = 100; i < 110; ++i) CHECK((copies[i] == 2 || copies[i] == 3));
}

TEST_CASE("oversampling is a no-op at the 1:4 boundary") {
  std::vector<Datapoint> d;
  for (int i = 0; i < 40; ++i) d.push_back(dp("a" + std::to_string(i), kA));
  for (int i = 0; i < 10; ++i) d.push_back(dp("b" + std::to_string(i), kB));
  std::vector<std::size_t> train(d.size());
  std::iota(train.begin(), train.end(), 0);
  auto out = oversample(d, train, OversampleSpec{});
  std::sort(out.begin(), out.end());
  CHECK(out == train);
}

TEST_CASE("vendor balancing grows the minority vendor to half the majority") {
  std::vector<Datapoint> d;
  for (int i = 0; i < 200; ++i) d.push_back(dp("v" + std::to_string(i), kA, dicom::Vendor::VendorA));
  for (int i = 0; i < 60; ++i) d.push_back(dp("w" + std::to_string(i), kA, dicom::Vendor::VendorB));
  std::vector<std::size_t> train(d.size());
  std::iota(train.begin(), train.end(), 0);
  const auto out = oversample(d, train, OversampleSpec{});
  std::map<dicom::Vendor, int> counts;
  for (auto i : out) counts[d[i].vendor]++;
  CHECK(counts[dicom::Vendor::VendorA] == 200);
  CHECK(counts[dicom::Vendor::VendorB] == 100);
}

TEST_CASE("oversampling only duplicates training members") {
  std::vector<Datapoint> d;
  for (int i = 0; i < 30; ++i) d.push_back(dp("a" + std::to_string(i), i < 25 ? kA : kB));
  const std::vector<std::size_t> train{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 25};
  const auto out = oversample(d, train, OversampleSpec{});
  const std::set<std::size_t> allowed(train.begin(), train.end());
  for (auto i : out) CHECK(allowed.count(i));
  for (auto i : train) CHECK(std::count(out.begin(), out.end(), i) >= 1);
}

TEST_CASE("identity augmentation is bitwise identity") {
  const auto d = gradient_dp(32);
  auto rng = make_rng(1);
  const auto out = augment(d, AugmentSpec::identity(), rng);
  CHECK(out.pixels == d.pixels);
  CHECK(out.label == d.label);
}

TEST_CASE("channel shuffle alone permutes channels exactly") {
  const auto d = gradient_dp(16);
  auto spec = AugmentSpec::identity();
  spec.channel_shuffle = true;
  std::set<std::array<int, 3>> seen;
  for (std::uint64_t s = 0; s < 60; ++s) {
    auto rng = make_rng(s);
    const auto out = augment(d, spec, rng);
    std::array<int, 3> perm{-1, -1, -1};
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < 3; ++j) {
        bool same = true;
        for (int r = 0; r < 16 && same; ++r)
          for (int c = 0; c < 16 && same; ++c) same = out.at(r, c, k) == d.at(r, c, j);
        if (same) perm[k] = j;
      }
    CHECK(std::set<int>(perm.begin(), perm.end()) == std::set<int>{0, 1, 2});
    seen.insert(perm);
  }
  CHECK(seen.size() == 6);
}

TEST_CASE("default augmentation is deterministic, keeps metadata and stays in range") {
  auto d = gradient_dp(48);
  d.study_instance_uid = "study";
  d.vendor = dicom::Vendor::VendorB;
  AugmentSpec spec;
  spec.seed = 77;
  auto r1 = augment_rng(spec, 3, 9), r2 = augment_rng(spec, 3, 9);
  const auto a = augment(d, spec, r1);
  const auto b = augment(d, spec, r2);
  CHECK(a.pixels == b.pixels);
  CHECK(a.pixels != d.pixels);
  CHECK(a.label == d.label);
  CHECK(a.study_instance_uid == "study");
  CHECK(a.vendor == dicom::Vendor::VendorB);
  CHECK(a.size == 48);
  CHECK(a.pixels.size() == d.pixels.size());
  for (float v : a.pixels) REQUIRE((v >= 0.0f && v <= 1.0f));

  auto r3 = augment_rng(spec, 4, 9);
  CHECK(augment(d, spec, r3).pixels != a.pixels);
}

}  // TEST_SUITE
