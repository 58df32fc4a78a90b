#include "seqsort/labeling.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "seqsort/error.hpp"

namespace seqsort::labeling {

namespace {

constexpr std::array<std::string_view, kNumSequenceClasses> kSequenceNames{
    "B0Map",     "CineBSSFP",     "DBLGE",        "EGE",         "FST2",      "HASTE",
    "MOLLINative", "MOLLIPost",   "Perfusion",    "PhaseContrast", "ScoutImaging", "T2MapBright",
    "T2MapDark", "T2StarMap",     "TIScout",      "TestPerfusion", "WBLGE"};

constexpr std::array<std::string_view, kNumPlaneClasses> kPlaneNames{
    "Aorta", "Axial", "FourChamber", "LVOT", "MPA", "Multiplanar", "RVOT", "ShortAxis", "ThreeChamber", "TwoChamber"};

using S = SequenceClass;
using P = PlaneClass;

const std::vector<JointLabel> kAdmissible = [] {
  std::vector<JointLabel> v{
      {S::B0Map, P::Axial},
      {S::CineBSSFP, P::TwoChamber},   {S::CineBSSFP, P::ThreeChamber}, {S::CineBSSFP, P::FourChamber},
      {S::CineBSSFP, P::LVOT},         {S::CineBSSFP, P::RVOT},         {S::CineBSSFP, P::ShortAxis},
      {S::DBLGE, P::TwoChamber},       {S::DBLGE, P::ThreeChamber},     {S::DBLGE, P::FourChamber},
      {S::DBLGE, P::ShortAxis},
      {S::EGE, P::TwoChamber},         {S::EGE, P::ThreeChamber},       {S::EGE, P::FourChamber},
      {S::FST2, P::TwoChamber},        {S::FST2, P::ThreeChamber},      {S::FST2, P::FourChamber},
      {S::FST2, P::ShortAxis},
      {S::HASTE, P::Axial},
      {S::MOLLINative, P::ShortAxis},
      {S::MOLLIPost, P::ShortAxis},
      {S::PhaseContrast, P::Aorta},    {S::PhaseContrast, P::MPA},
      {S::Perfusion, P::ShortAxis},
      {S::ScoutImaging, P::Multiplanar},
      {S::T2MapBright, P::ShortAxis},
      {S::T2MapDark, P::ShortAxis},
      {S::T2StarMap, P::ShortAxis},
      {S::TestPerfusion, P::ShortAxis},
      {S::TIScout, P::FourChamber},    {S::TIScout, P::ShortAxis},
      {S::WBLGE, P::TwoChamber},       {S::WBLGE, P::ThreeChamber},     {S::WBLGE, P::FourChamber},
      {S::WBLGE, P::ShortAxis},
  };
  std::sort(v.begin(), v.end());
  return v;
}();

constexpr std::string_view kDefaultRules = R"(# Default series-description rules.
# First match wins. Terms are case-insensitive substrings joined by '&';
# '|' separates alternatives, a leading '!' negates a term and double quotes
# keep leading/trailing spaces of an alternative.

# Maps and relaxometry
b0 & map => B0Map/Axial
t2star|t2* => T2StarMap/ShortAxis
t2 & map & bright|white => T2MapBright/ShortAxis
t2 & map => T2MapDark/ShortAxis
molli|shmolli & post|+c|_gd => MOLLIPost/ShortAxis
molli|shmolli => MOLLINative/ShortAxis

# Perfusion
test & perf => TestPerfusion/ShortAxis
perf => Perfusion/ShortAxis

# Inversion-time scouts precede localizers and LGE
ti_scout|ti scout|tiscout|look_locker|look locker & 4ch|4 ch|hla => TIScout/FourChamber
ti_scout|ti scout|tiscout|look_locker|look locker => TIScout/ShortAxis

# Localizers
survey|localizer|localiser|scout|3pl => ScoutImaging/Multiplanar

# Through-plane flow
flow|pc_|qflow|phase_contrast|phase contrast & mpa|pulm|_pa => PhaseContrast/MPA
flow|pc_|qflow|phase_contrast|phase contrast => PhaseContrast/Aorta

# Anatomy
haste|ssfse => HASTE/Axial

# Fat-suppressed T2
stir|t2_fs|t2 fs|t2_tse_fs|fs_t2 & 2ch|2 ch|vla => FST2/TwoChamber
stir|t2_fs|t2 fs|t2_tse_fs|fs_t2 & 3ch|3 ch => FST2/ThreeChamber
stir|t2_fs|t2 fs|t2_tse_fs|fs_t2 & 4ch|4 ch|hla => FST2/FourChamber
stir|t2_fs|t2 fs|t2_tse_fs|fs_t2 & sax|short axis|_sa => FST2/ShortAxis

# Dark-blood LGE precedes the generic LGE rules
db_psir|db psir|db_lge|db lge|dark blood|dark_blood & 2ch|2 ch|vla => DBLGE/TwoChamber
db_psir|db psir|db_lge|db lge|dark blood|dark_blood & 3ch|3 ch => DBLGE/ThreeChamber
db_psir|db psir|db_lge|db lge|dark blood|dark_blood & 4ch|4 ch|hla => DBLGE/FourChamber
db_psir|db psir|db_lge|db lge|dark blood|dark_blood & sax|short axis|_sa => DBLGE/ShortAxis

# Early gadolinium enhancement
ege|early & 2ch|2 ch|vla => EGE/TwoChamber
ege|early & 3ch|3 ch => EGE/ThreeChamber
ege|early & 4ch|4 ch|hla => EGE/FourChamber

# White-blood LGE
psir|lge|delayed|late & 2ch|2 ch|vla => WBLGE/TwoChamber
psir|lge|delayed|late & 3ch|3 ch => WBLGE/ThreeChamber
psir|lge|delayed|late & 4ch|4 ch|hla => WBLGE/FourChamber
psir|lge|delayed|late & sax|short axis|_sa => WBLGE/ShortAxis

# Cine
cine|bssfp|trufi|fiesta|btfe|ssfp & lvot => CineBSSFP/LVOT
cine|bssfp|trufi|fiesta|btfe|ssfp & rvot => CineBSSFP/RVOT
cine|bssfp|trufi|fiesta|btfe|ssfp & 2ch|2 ch|vla => CineBSSFP/TwoChamber
cine|bssfp|trufi|fiesta|btfe|ssfp & 3ch|3 ch => CineBSSFP/ThreeChamber
cine|bssfp|trufi|fiesta|btfe|ssfp & 4ch|4 ch|hla => CineBSSFP/FourChamber
cine|bssfp|trufi|fiesta|btfe|ssfp & sax|short axis|_sa|" sa" => CineBSSFP/ShortAxis
)";

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t next = s.find(sep, start);
    out.push_back(s.substr(start, next == std::string_view::npos ? std::string_view::npos : next - start));
    if (next == std::string_view::npos) break;
    start = next + 1;
  }
  return out;
}

}  // namespace

const std::array<std::string_view, kNumSequenceClasses>& sequence_names() { return kSequenceNames; }
const std::array<std::string_view, kNumPlaneClasses>& plane_names() { return kPlaneNames; }

std::string_view to_string(SequenceClass s) { return kSequenceNames.at(static_cast<std::size_t>(s)); }
std::string_view to_string(PlaneClass p) { return kPlaneNames.at(static_cast<std::size_t>(p)); }

std::optional<SequenceClass> parse_sequence(std::string_view name) {
  for (std::size_t i = 0; i < kSequenceNames.size(); ++i) {
    if (kSequenceNames[i] == name) return static_cast<SequenceClass>(i);
  }
  return std::nullopt;
}

std::optional<PlaneClass> parse_plane(std::string_view name) {
  for (std::size_t i = 0; i < kPlaneNames.size(); ++i) {
    if (kPlaneNames[i] == name) return static_cast<PlaneClass>(i);
  }
  return std::nullopt;
}

std::string to_string(const JointLabel& label) {
  return std::string(to_string(label.sequence)) + "/" + std::string(to_string(label.plane));
}

std::optional<JointLabel> parse_joint_label(std::string_view text) {
  text = trim(text);
  auto slash = text.find('/');
  if (slash == std::string_view::npos) return std::nullopt;
  auto seq = parse_sequence(trim(text.substr(0, slash)));
  auto plane = parse_plane(trim(text.substr(slash + 1)));
  if (!seq || !plane) return std::nullopt;
  return JointLabel{*seq, *plane};
}

const std::vector<JointLabel>& admissible_labels() { return kAdmissible; }

bool is_admissible(const JointLabel& label) {
  return std::binary_search(kAdmissible.begin(), kAdmissible.end(), label);
}

LabelTable current_label_table() {
  LabelTable t;
  for (auto n : kSequenceNames) t.sequences.emplace_back(n);
  for (auto n : kPlaneNames) t.planes.emplace_back(n);
  return t;
}

bool LabelRule::matches(std::string_view text) const {
  const std::string haystack = lower(text);
  for (const auto& term : terms) {
    const bool found = std::any_of(term.alternatives.begin(), term.alternatives.end(), [&](const std::string& a) {
      return haystack.find(a) != std::string::npos;
    });
    if (found == term.negated) return false;
  }
  return !terms.empty();
}

LabelMap::LabelMap(std::vector<LabelRule> rules, std::string provenance)
    : rules_(std::move(rules)), provenance_(std::move(provenance)) {
  for (const auto& r : rules_) {
    if (!is_admissible(r.label)) fail(ErrorCode::InvalidLabelMap, "inadmissible label " + to_string(r.label));
  }
}

LabelMap LabelMap::parse(std::string_view text, std::string provenance) {
  std::vector<LabelRule> rules;
  int line_no = 0;
  for (std::string_view raw : split(text, '\n')) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto where = [&] { return provenance + ":" + std::to_string(line_no); };
    auto arrow = line.find("=>");
    if (arrow == std::string_view::npos) fail(ErrorCode::InvalidLabelMap, where() + ": missing '=>'");
    auto label = parse_joint_label(line.substr(arrow + 2));
    if (!label) fail(ErrorCode::InvalidLabelMap, where() + ": bad label '" + std::string(trim(line.substr(arrow + 2))) + "'");
    if (!is_admissible(*label)) fail(ErrorCode::InvalidLabelMap, where() + ": inadmissible label " + to_string(*label));
    LabelRule rule;
    rule.label = *label;
    for (std::string_view term_text : split(line.substr(0, arrow), '&')) {
      LabelTerm term;
      std::string_view body = trim(term_text);
      if (!body.empty() && body.front() == '!') {
        term.negated = true;
        body.remove_prefix(1);
      }
      for (std::string_view alt : split(body, '|')) {
        alt = trim(alt);
        // A double-quoted alternative keeps its surrounding spaces.
        if (alt.size() >= 2 && alt.front() == '"' && alt.back() == '"') alt = alt.substr(1, alt.size() - 2);
        if (alt.empty()) fail(ErrorCode::InvalidLabelMap, where() + ": empty term");
        term.alternatives.push_back(lower(alt));
      }
      rule.terms.push_back(std::move(term));
    }
    rules.push_back(std::move(rule));
  }
  return LabelMap(std::move(rules), std::move(provenance));
}

LabelMap LabelMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IOFailure, "cannot open label map " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

LabelMap LabelMap::defaults() { return parse(kDefaultRules, "builtin-defaults"); }

std::string_view default_label_map_text() { return kDefaultRules; }

std::optional<JointLabel> LabelMap::match(std::string_view text) const {
  for (const auto& r : rules_) {
    if (r.matches(text)) return r.label;
  }
  return std::nullopt;
}

std::optional<JointLabel> assign_label(const dicom::SeriesRecord& record, const LabelMap& map) {
  if (auto l = map.match(record.representative_description)) return l;
  if (record.protocol_name) return map.match(*record.protocol_name);
  return std::nullopt;
}

std::set<JointLabel> enforce_class_threshold(const std::map<JointLabel, int>& datapoint_counts, int threshold) {
  std::set<JointLabel> kept;
  for (const auto& [label, count] : datapoint_counts) {
    if (count >= threshold) kept.insert(label);
  }
  return kept;
}

}  // namespace seqsort::labeling
