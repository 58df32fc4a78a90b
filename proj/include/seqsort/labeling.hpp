#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "seqsort/dicom.hpp"

namespace seqsort::labeling {

// Enumerators are declared in ascending ASCII order of their names; the
// underlying value is the class index used by the network heads and written
// into checkpoints.
enum class SequenceClass : int {
  B0Map,
  CineBSSFP,
  DBLGE,
  EGE,
  FST2,
  HASTE,
  MOLLINative,
  MOLLIPost,
  Perfusion,
  PhaseContrast,
  ScoutImaging,
  T2MapBright,
  T2MapDark,
  T2StarMap,
  TIScout,
  TestPerfusion,
  WBLGE,
};

enum class PlaneClass : int {
  Aorta,
  Axial,
  FourChamber,
  LVOT,
  MPA,
  Multiplanar,
  RVOT,
  ShortAxis,
  ThreeChamber,
  TwoChamber,
};

inline constexpr std::size_t kNumSequenceClasses = 17;
inline constexpr std::size_t kNumPlaneClasses = 10;
inline constexpr std::size_t kNumJointLabels = 35;

const std::array<std::string_view, kNumSequenceClasses>& sequence_names();
const std::array<std::string_view, kNumPlaneClasses>& plane_names();

std::string_view to_string(SequenceClass s);
std::string_view to_string(PlaneClass p);
std::optional<SequenceClass> parse_sequence(std::string_view name);
std::optional<PlaneClass> parse_plane(std::string_view name);

struct JointLabel {
  SequenceClass sequence;
  PlaneClass plane;
  friend auto operator<=>(const JointLabel&, const JointLabel&) = default;
};

/// "Sequence/Plane"
std::string to_string(const JointLabel& label);
std::optional<JointLabel> parse_joint_label(std::string_view text);

/// The admissible (sequence, plane) pairs in ascending order.
const std::vector<JointLabel>& admissible_labels();
bool is_admissible(const JointLabel& label);

/// Class-name tables stored in checkpoints so head indices cannot drift.
struct LabelTable {
  std::vector<std::string> sequences;
  std::vector<std::string> planes;
  friend bool operator==(const LabelTable&, const LabelTable&) = default;
};

LabelTable current_label_table();

/// One conjunct of a rule: satisfied when any alternative is a
/// case-insensitive substring of the text (or, when negated, when none is).
struct LabelTerm {
  std::vector<std::string> alternatives;
  bool negated = false;
};

struct LabelRule {
  std::vector<LabelTerm> terms;
  JointLabel label;

  bool matches(std::string_view text) const;
};

/// Ordered first-match-wins rule list.
///
/// File grammar, one rule per line:
///   term [& term ...] => Sequence/Plane
///   term := ['!'] alt ['|' alt ...]
/// Alternatives are trimmed unless double-quoted (" sa").
/// Blank lines and lines starting with '#' are ignored.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(std::vector<LabelRule> rules, std::string provenance);

  /// Throws Error(InvalidLabelMap) with the offending line number.
  static LabelMap parse(std::string_view text, std::string provenance = "inline");
  static LabelMap load(const std::filesystem::path& path);
  static LabelMap defaults();

  std::optional<JointLabel> match(std::string_view text) const;
  const std::vector<LabelRule>& rules() const noexcept { return rules_; }
  const std::string& provenance() const noexcept { return provenance_; }

 private:
  std::vector<LabelRule> rules_;
  std::string provenance_;
};

/// Rule text of LabelMap::defaults(), in the file grammar.
std::string_view default_label_map_text();

/// First matching rule on the representative description, then on the
/// protocol name; nullopt means Unlabeled.
std::optional<JointLabel> assign_label(const dicom::SeriesRecord& record, const LabelMap& map);

/// Labels with at least `threshold` datapoints.
std::set<JointLabel> enforce_class_threshold(const std::map<JointLabel, int>& datapoint_counts, int threshold = 20);

}  // namespace seqsort::labeling
