#include <doctest.h>

#include <map>
#include <set>

#include "seqsort/error.hpp"
#include "seqsort/labeling.hpp"
#include "seqsort/rng.hpp"

using namespace seqsort;
using namespace seqsort::labeling;
using S = SequenceClass;
using P = PlaneClass;

namespace {

dicom::SeriesRecord record(std::string desc, std::optional<std::string> protocol = std::nullopt) {
  dicom::SeriesRecord r;
  r.representative_description = std::move(desc);
  r.protocol_name = std::move(protocol);
  return r;
}

// Rows of the prevalence table: (sequence, plane, count per magnet). The
// fifth count column is the single GE magnet.
struct TableRow {
  S seq;
  P plane;
  std::array<int, 8> counts;
};

const std::vector<TableRow>& prevalence_table() {
  static const std::vector<TableRow> rows{
      {S::B0Map, P::Axial, {0, 36, 0, 0, 0, 0, 0, 0}},
      {S::CineBSSFP, P::TwoChamber, {275, 131, 0, 181, 50, 24, 13, 4}},
      {S::CineBSSFP, P::ThreeChamber, {153, 54, 0, 94, 47, 27, 14, 6}},
      {S::CineBSSFP, P::FourChamber, {192, 145, 0, 109, 50, 27, 14, 15}},
      {S::CineBSSFP, P::LVOT, {43, 3, 2, 40, 0, 0, 8, 5}},
      {S::CineBSSFP, P::RVOT, {31, 4, 0, 0, 7, 0, 0, 10}},
      {S::CineBSSFP, P::ShortAxis, {345, 194, 0, 107, 48, 35, 19, 13}},
      {S::DBLGE, P::TwoChamber, {127, 3, 0, 0, 0, 0, 0, 0}},
      {S::DBLGE, P::ThreeChamber, {107, 5, 0, 0, 0, 0, 0, 0}},
      {S::DBLGE, P::FourChamber, {110, 4, 0, 0, 0, 0, 0, 0}},
      {S::DBLGE, P::ShortAxis, {129, 3, 0, 0, 0, 0, 0, 0}},
      {S::EGE, P::TwoChamber, {112, 3, 0, 0, 0, 0, 0, 0}},
      {S::EGE, P::ThreeChamber, {83, 3, 0, 0, 0, 0, 0, 0}},
      {S::EGE, P::FourChamber, {84, 3, 0, 0, 0, 0, 0, 0}},
      {S::FST2, P::TwoChamber, {26, 3, 25, 0, 0, 3, 3, 1}},
      {S::FST2, P::ThreeChamber, {22, 0, 27, 0, 0, 0, 3, 1}},
      {S::FST2, P::FourChamber, {28, 3, 25, 0, 47, 2, 3, 1}},
      {S::FST2, P::ShortAxis, {30, 9, 27, 0, 45, 4, 0, 3}},
      {S::HASTE, P::Axial, {137, 11, 0, 88, 47, 16, 45, 14}},
      {S::MOLLINative, P::ShortAxis, {136, 66, 94, 0, 0, 0, 30, 0}},
      {S::MOLLIPost, P::ShortAxis, {141, 53, 113, 0, 0, 0, 29, 0}},
      {S::PhaseContrast, P::Aorta, {31, 7, 0, 103, 11, 0, 1, 12}},
      {S::PhaseContrast, P::MPA, {23, 5, 0, 0, 8, 0, 1, 9}},
      {S::Perfusion, P::ShortAxis, {60, 83, 0, 175, 0, 17, 0, 0}},
      {S::ScoutImaging, P::Multiplanar, {156, 121, 0, 87, 0, 8, 90, 0}},
      {S::T2MapBright, P::ShortAxis, {0, 0, 28, 0, 0, 0, 0, 0}},
      {S::T2MapDark, P::ShortAxis, {26, 16, 0, 0, 0, 0, 0, 0}},
      {S::T2StarMap, P::ShortAxis, {9, 33, 5, 0, 0, 0, 0, 0}},
      {S::TestPerfusion, P::ShortAxis, {36, 55, 0, 93, 0, 15, 0, 0}},
      {S::TIScout, P::FourChamber, {30, 0, 5, 0, 0, 0, 0, 0}},
      {S::TIScout, P::ShortAxis, {271, 55, 172, 90, 52, 18, 43, 12}},
      {S::WBLGE, P::TwoChamber, {163, 60, 0, 101, 47, 34, 42, 5}},
      {S::WBLGE, P::ThreeChamber, {141, 55, 0, 98, 47, 25, 33, 4}},
      {S::WBLGE, P::FourChamber, {147, 48, 0, 96, 49, 30, 46, 4}},
      {S::WBLGE, P::ShortAxis, {221, 78, 0, 176, 47, 21, 50, 14}},
  };
  return rows;
}

}  // namespace

TEST_SUITE("labeling") {

TEST_CASE("class counts and name order") {
  CHECK(sequence_names().size() == 17);
  CHECK(plane_names().size() == 10);
  CHECK(std::is_sorted(sequence_names().begin(), sequence_names().end()));
  CHECK(std::is_sorted(plane_names().begin(), plane_names().end()));
  for (std::size_t i = 0; i < 17; ++i) {
    CHECK(parse_sequence(sequence_names()[i]) == static_cast<S>(i));
    CHECK(to_string(static_cast<S>(i)) == sequence_names()[i]);
  }
  for (std::size_t i = 0; i < 10; ++i) CHECK(parse_plane(plane_names()[i]) == static_cast<P>(i));
  CHECK_FALSE(parse_sequence("Cine"));
}

TEST_CASE("admissible pairs are exactly the prevalence table rows") {
  std::set<JointLabel> expected;
  for (const auto& r : prevalence_table()) expected.insert({r.seq, r.plane});
  REQUIRE(expected.size() == 35);
  const auto& adm = admissible_labels();
  CHECK(adm.size() == 35);
  CHECK(std::set<JointLabel>(adm.begin(), adm.end()) == expected);
  CHECK(std::is_sorted(adm.begin(), adm.end()));

  int cine_planes = 0;
  for (const auto& l : adm) cine_planes += l.sequence == S::CineBSSFP;
  CHECK(cine_planes == 6);
  CHECK(is_admissible({S::B0Map, P::Axial}));
  CHECK_FALSE(is_admissible({S::B0Map, P::ShortAxis}));
}

TEST_CASE("joint label text round trip") {
  for (const auto& l : admissible_labels()) CHECK(parse_joint_label(to_string(l)) == l);
  CHECK(to_string(JointLabel{S::CineBSSFP, P::ShortAxis}) == "CineBSSFP/ShortAxis");
  CHECK_FALSE(parse_joint_label("CineBSSFP"));
  CHECK_FALSE(parse_joint_label("Nope/ShortAxis"));
}

TEST_CASE("conjunctive rule matches") {
  const auto map = LabelMap::parse("cine & sa => CineBSSFP/ShortAxis\n");
  CHECK(assign_label(record("sBTFE_BH SA cine"), map) == JointLabel{S::CineBSSFP, P::ShortAxis});
}

TEST_CASE("no match is Unlabeled") {
  const auto map = LabelMap::parse("cine & sa => CineBSSFP/ShortAxis\n");
  CHECK_FALSE(assign_label(record("surview"), map));
}

TEST_CASE("first match wins") {
  const auto map = LabelMap::parse(
      "haste => HASTE/Axial\n"
      "psir & 2ch => WBLGE/TwoChamber\n"
      "cine => CineBSSFP/ShortAxis\n"
      "flow => PhaseContrast/Aorta\n"
      "psir => WBLGE/ShortAxis\n");
  CHECK(map.rules().size() == 5);
  CHECK(assign_label(record("PSIR_TFE 2CH"), map) == JointLabel{S::WBLGE, P::TwoChamber});
  CHECK(assign_label(record("PSIR_TFE SA"), map) == JointLabel{S::WBLGE, P::ShortAxis});
}

TEST_CASE("protocol name is the fallback text") {
  const auto map = LabelMap::parse("molli => MOLLINative/ShortAxis\n");
  CHECK(assign_label(record("series 12", std::string("MOLLI_native")), map) ==
        JointLabel{S::MOLLINative, P::ShortAxis});
  CHECK_FALSE(assign_label(record("series 12"), map));
}

TEST_CASE("negation, alternatives, quoting and comments") {
  const auto map = LabelMap::parse(
      "# comment\n\n"
      "t2 & map & !dark => T2MapBright/ShortAxis\n"
      "cine|ssfp & \" sa\" => CineBSSFP/ShortAxis\n");
  CHECK(map.match("T2 MAP") == JointLabel{S::T2MapBright, P::ShortAxis});
  CHECK_FALSE(map.match("T2 map dark"));
  CHECK(map.match("ssfp sa") == JointLabel{S::CineBSSFP, P::ShortAxis});
  CHECK_FALSE(map.match("ssfp_sax"));
}

TEST_CASE("invalid rules raise InvalidLabelMap") {
  for (const char* text : {"cine => CineBSSFP/Axial\n", "cine CineBSSFP/ShortAxis\n", "cine => Bogus/ShortAxis\n",
                           " => CineBSSFP/ShortAxis\n"}) {
    CAPTURE(text);
    try {
      LabelMap::parse(text);
      FAIL("expected InvalidLabelMap");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidLabelMap);
    }
  }
}

TEST_CASE("default map covers common vendor idioms") {
  const auto map = LabelMap::defaults();
  CHECK(map.rules().size() > 30);
  for (const auto& r : map.rules()) CHECK(is_admissible(r.label));
  CHECK(map.match("sBTFE_BH SA cine") == JointLabel{S::CineBSSFP, P::ShortAxis});
  CHECK(map.match("cine_4ch") == JointLabel{S::CineBSSFP, P::FourChamber});
  CHECK(map.match("PSIR_TFE 2CH") == JointLabel{S::WBLGE, P::TwoChamber});
  CHECK(map.match("DB_PSIR SAX") == JointLabel{S::DBLGE, P::ShortAxis});
  CHECK(map.match("MOLLI post") == JointLabel{S::MOLLIPost, P::ShortAxis});
  CHECK(map.match("MOLLI") == JointLabel{S::MOLLINative, P::ShortAxis});
  CHECK(map.match("TI scout") == JointLabel{S::TIScout, P::ShortAxis});
  CHECK(map.match("Survey") == JointLabel{S::ScoutImaging, P::Multiplanar});
  CHECK(map.match("qflow MPA") == JointLabel{S::PhaseContrast, P::MPA});
  CHECK(map.match("haste tra") == JointLabel{S::HASTE, P::Axial});
  CHECK_FALSE(map.match("random text"));
}

TEST_CASE("threshold boundaries") {
  const JointLabel a{S::CineBSSFP, P::ShortAxis}, b{S::HASTE, P::Axial};
  CHECK(enforce_class_threshold({{a, 25}, {b, 19}}, 20) == std::set<JointLabel>{a});
  CHECK(enforce_class_threshold({{a, 20}}, 20) == std::set<JointLabel>{a});
}

TEST_CASE("single GE magnet column at threshold 20 excludes RVOT cine with 7 datapoints") {
  std::map<JointLabel, int> counts;
  for (const auto& r : prevalence_table()) counts[{r.seq, r.plane}] = r.counts[4];
  const auto kept = enforce_class_threshold(counts, 20);
  const JointLabel rvot{S::CineBSSFP, P::RVOT};
  CHECK(counts[rvot] == 7);
  CHECK_FALSE(kept.count(rvot));
  CHECK(kept.count({S::CineBSSFP, P::ShortAxis}));
  CHECK(kept.count({S::FST2, P::FourChamber}));
  CHECK_FALSE(kept.count({S::PhaseContrast, P::Aorta}));
}

TEST_CASE("whole training cohort at threshold 20 keeps every admissible pair") {
  std::map<JointLabel, int> counts;
  for (const auto& r : prevalence_table()) counts[{r.seq, r.plane}] = r.counts[0] + r.counts[1] + r.counts[2] + r.counts[3] + r.counts[4];
  CHECK(enforce_class_threshold(counts, 20).size() == 35);
}

TEST_CASE("threshold is monotone") {
  auto rng = make_rng(5);
  std::map<JointLabel, int> counts;
  for (const auto& l : admissible_labels()) counts[l] = static_cast<int>(uniform01(rng) * 60);
  auto prev = enforce_class_threshold(counts, 1);
  for (int t = 2; t <= 70; ++t) {
    const auto cur = enforce_class_threshold(counts, t);
    CHECK(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
    prev = cur;
  }
}

TEST_CASE("label table matches the enumerations") {
  const auto t = current_label_table();
  REQUIRE(t.sequences.size() == 17);
  REQUIRE(t.planes.size() == 10);
  CHECK(t.sequences.front() == "B0Map");
  CHECK(t.planes.back() == "TwoChamber");
}

}  // TEST_SUITE
