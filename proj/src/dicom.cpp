#include "seqsort/dicom.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <tuple>

#include "seqsort/error.hpp"

namespace seqsort::dicom {

namespace {

constexpr std::uint32_t kUndefinedLength = 0xFFFFFFFFu;
constexpr Tag kItem{0xFFFE, 0xE000};
constexpr Tag kItemDelimitation{0xFFFE, 0xE00D};
constexpr Tag kSequenceDelimitation{0xFFFE, 0xE0DD};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool long_form_vr(std::string_view vr) {
  static constexpr std::array<std::string_view, 13> kLong{"OB", "OD", "OF", "OL", "OV", "OW", "SQ",
                                                          "UC", "UN", "UR", "UT", "SV", "UV"};
  return std::find(kLong.begin(), kLong.end(), vr) != kLong.end();
}

class Cursor {
 public:
  explicit Cursor(std::span<const std::byte> bytes, std::size_t pos = 0) : bytes_(bytes), pos_(pos) {}

  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ >= bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n) const {
    if (remaining() < n) fail(ErrorCode::MalformedStream, "truncated element at offset " + std::to_string(pos_));
  }
  std::uint16_t u16() {
    need(2);
    auto v = static_cast<std::uint16_t>(std::to_integer<unsigned>(bytes_[pos_]) |
                                        (std::to_integer<unsigned>(bytes_[pos_ + 1]) << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t lo = u16();
    std::uint32_t hi = u16();
    return lo | (hi << 16);
  }
  std::array<char, 2> vr() {
    need(2);
    std::array<char, 2> v{static_cast<char>(bytes_[pos_]), static_cast<char>(bytes_[pos_ + 1])};
    pos_ += 2;
    return v;
  }
  Tag peek_tag() const {
    need(4);
    Cursor c(bytes_, pos_);
    Tag t{};
    t.group = c.u16();
    t.element = c.u16();
    return t;
  }
  Tag tag() {
    Tag t{};
    t.group = u16();
    t.element = u16();
    return t;
  }
  std::span<const std::byte> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) { take(n); }

 private:
  std::span<const std::byte> bytes_;
  std::size_t pos_;
};

struct RawElement {
  Tag tag;
  std::string vr;  // empty for implicit VR
  std::uint32_t length = 0;
  std::size_t value_offset = 0;
  std::span<const std::byte> value;
};

void skip_undefined_sequence(Cursor& cur, bool explicit_vr);

// Reads one element header and value; undefined-length sequences are skipped
// and reported with an empty value.
RawElement read_element(Cursor& cur, bool explicit_vr) {
  RawElement e;
  e.tag = cur.tag();
  if (e.tag.group == 0xFFFE) {
    e.length = cur.u32();
    e.value_offset = cur.pos();
    if (e.length != kUndefinedLength) e.value = cur.take(e.length);
    return e;
  }
  bool implicit_sequence_content = !explicit_vr;
  if (explicit_vr) {
    auto vr = cur.vr();
    e.vr.assign(vr.begin(), vr.end());
    if (!std::isupper(static_cast<unsigned char>(vr[0])) || !std::isupper(static_cast<unsigned char>(vr[1]))) {
      fail(ErrorCode::MalformedStream, "invalid VR at offset " + std::to_string(cur.pos() - 2));
    }
    if (long_form_vr(e.vr)) {
      cur.skip(2);
      e.length = cur.u32();
    } else {
      e.length = cur.u16();
    }
    if (e.vr == "UN") implicit_sequence_content = true;
  } else {
    e.length = cur.u32();
  }
  e.value_offset = cur.pos();
  if (e.length == kUndefinedLength) {
    if (e.tag == tags::kPixelData) {
      fail(ErrorCode::UnsupportedTransferSyntax, "encapsulated (compressed) pixel data");
    }
    skip_undefined_sequence(cur, !implicit_sequence_content);
    return e;
  }
  e.value = cur.take(e.length);
  return e;
}

void skip_undefined_item(Cursor& cur, bool explicit_vr) {
  while (true) {
    if (cur.peek_tag() == kItemDelimitation) {
      cur.tag();
      cur.u32();
      return;
    }
    read_element(cur, explicit_vr);
  }
}

void skip_undefined_sequence(Cursor& cur, bool explicit_vr) {
  while (true) {
    Tag t = cur.tag();
    std::uint32_t len = cur.u32();
    if (t == kSequenceDelimitation) return;
    if (t != kItem) fail(ErrorCode::MalformedStream, "expected sequence item");
    if (len == kUndefinedLength) {
      skip_undefined_item(cur, explicit_vr);
    } else {
      cur.skip(len);
    }
  }
}

std::string as_text(std::span<const std::byte> v) {
  std::string s(reinterpret_cast<const char*>(v.data()), v.size());
  while (!s.empty() && (s.back() == ' ' || s.back() == '\0')) s.pop_back();
  std::size_t first = s.find_first_not_of(' ');
  return first == std::string::npos ? std::string{} : s.substr(first);
}

std::vector<std::string> split_values(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t next = s.find('\\', start);
    std::string part = s.substr(start, next == std::string::npos ? std::string::npos : next - start);
    while (!part.empty() && part.back() == ' ') part.pop_back();
    std::size_t first = part.find_first_not_of(' ');
    out.push_back(first == std::string::npos ? std::string{} : part.substr(first));
    if (next == std::string::npos) break;
    start = next + 1;
  }
  return out;
}

double parse_ds(const std::string& s, Tag tag) {
  double v = 0.0;
  const char* begin = s.data();
  if (!s.empty() && s.front() == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "(%04X,%04X)", tag.group, tag.element);
    fail(ErrorCode::MalformedStream, std::string("bad decimal string in ") + buf + ": '" + s + "'");
  }
  return v;
}

std::vector<double> parse_ds_list(const std::string& s, Tag tag) {
  std::vector<double> out;
  for (const auto& part : split_values(s)) out.push_back(parse_ds(part, tag));
  return out;
}

int parse_is(const std::string& s, Tag tag) {
  long long v = 0;
  const char* begin = s.data();
  if (!s.empty() && s.front() == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || v < 0 || v > 0x7FFFFFFF) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "(%04X,%04X)", tag.group, tag.element);
    fail(ErrorCode::MalformedStream, std::string("bad integer string in ") + buf + ": '" + s + "'");
  }
  return static_cast<int>(v);
}

std::uint16_t as_us(const RawElement& e) {
  if (e.value.size() < 2) fail(ErrorCode::MalformedStream, "US value too short");
  return static_cast<std::uint16_t>(std::to_integer<unsigned>(e.value[0]) |
                                    (std::to_integer<unsigned>(e.value[1]) << 8));
}

}  // namespace

std::string_view to_string(Vendor v) noexcept {
  switch (v) {
    case Vendor::VendorA: return "VendorA";
    case Vendor::VendorB: return "VendorB";
    case Vendor::VendorC: return "VendorC";
    case Vendor::Unknown: return "Unknown";
  }
  return "Unknown";
}

Vendor vendor_from_string(std::string_view name) {
  for (Vendor v : {Vendor::VendorA, Vendor::VendorB, Vendor::VendorC, Vendor::Unknown}) {
    if (to_string(v) == name) return v;
  }
  fail(ErrorCode::ConfigError, "unknown vendor '" + std::string(name) + "'");
}

VendorMap::VendorMap(std::vector<Entry> entries) : entries_(std::move(entries)) {
  for (auto& e : entries_) e.substring = lower(e.substring);
}

VendorMap VendorMap::defaults() {
  return VendorMap({{"philips", Vendor::VendorA},
                    {"ge medical", Vendor::VendorA},
                    {"ge healthcare", Vendor::VendorA},
                    {"general electric", Vendor::VendorA},
                    {"siemens", Vendor::VendorB}});
}

Vendor VendorMap::classify(std::string_view manufacturer) const {
  const std::string m = lower(manufacturer);
  for (const auto& e : entries_) {
    if (!e.substring.empty() && m.find(e.substring) != std::string::npos) return e.vendor;
  }
  return Vendor::Unknown;
}

DicomImageMeta parse_dicom_header(std::span<const std::byte> bytes) {
  std::size_t start = 0;
  auto magic_at = [&](std::size_t off) {
    return bytes.size() >= off + 4 && std::memcmp(bytes.data() + off, "DICM", 4) == 0;
  };
  if (magic_at(128)) {
    start = 132;
  } else if (bytes.size() >= 6 && std::to_integer<unsigned>(bytes[0]) == 0x02 &&
             std::to_integer<unsigned>(bytes[1]) == 0x00 && std::isupper(static_cast<unsigned char>(bytes[4])) &&
             std::isupper(static_cast<unsigned char>(bytes[5]))) {
    start = 0;
  } else {
    fail(ErrorCode::MalformedStream, "missing DICM magic and no group-0002 header");
  }

  Cursor cur(bytes, start);
  std::string transfer_syntax_uid;
  std::string media_sop_class;
  // File meta information: always explicit VR little endian.
  while (!cur.at_end() && cur.peek_tag().group == 0x0002) {
    RawElement e = read_element(cur, true);
    if (e.tag == tags::kTransferSyntaxUid) transfer_syntax_uid = as_text(e.value);
    if (e.tag == Tag{0x0002, 0x0002}) media_sop_class = as_text(e.value);
  }

  DicomImageMeta meta;
  bool explicit_vr = true;
  if (transfer_syntax_uid.empty() || transfer_syntax_uid == kImplicitVRLittleEndianUid) {
    explicit_vr = false;
    meta.transfer_syntax = TransferSyntax::ImplicitVRLittleEndian;
  } else if (transfer_syntax_uid == kExplicitVRLittleEndianUid) {
    meta.transfer_syntax = TransferSyntax::ExplicitVRLittleEndian;
  } else {
    fail(ErrorCode::UnsupportedTransferSyntax, "transfer syntax " + transfer_syntax_uid);
  }

  bool have_series = false, have_study = false, have_pixels = false, have_rows = false, have_cols = false;
  meta.sop_class_uid = media_sop_class;
  while (!cur.at_end()) {
    RawElement e = read_element(cur, explicit_vr);
    const Tag t = e.tag;
    if (t == tags::kImageType) {
      meta.image_type_terms = split_values(as_text(e.value));
      if (meta.image_type_terms.size() == 1 && meta.image_type_terms[0].empty()) meta.image_type_terms.clear();
    } else if (t == tags::kSopClassUid) {
      meta.sop_class_uid = as_text(e.value);
    } else if (t == tags::kManufacturer) {
      meta.manufacturer = as_text(e.value);
    } else if (t == tags::kSeriesDescription) {
      meta.series_description = as_text(e.value);
    } else if (t == tags::kProtocolName) {
      std::string p = as_text(e.value);
      if (!p.empty()) meta.protocol_name = std::move(p);
    } else if (t == tags::kStudyInstanceUid) {
      meta.study_instance_uid = as_text(e.value);
      have_study = !meta.study_instance_uid.empty();
    } else if (t == tags::kSeriesInstanceUid) {
      meta.series_instance_uid = as_text(e.value);
      have_series = !meta.series_instance_uid.empty();
    } else if (t == tags::kInstanceNumber) {
      std::string s = as_text(e.value);
      if (!s.empty()) meta.instance_number = parse_is(s, t);
    } else if (t == tags::kImagePositionPatient) {
      std::string s = as_text(e.value);
      if (!s.empty()) {
        auto v = parse_ds_list(s, t);
        if (v.size() != 3) fail(ErrorCode::MalformedStream, "ImagePositionPatient needs 3 values");
        meta.image_position = Vec3{v[0], v[1], v[2]};
      }
    } else if (t == tags::kImageOrientationPatient) {
      std::string s = as_text(e.value);
      if (!s.empty()) {
        auto v = parse_ds_list(s, t);
        if (v.size() != 6) fail(ErrorCode::MalformedStream, "ImageOrientationPatient needs 6 values");
        meta.image_orientation = std::array<double, 6>{v[0], v[1], v[2], v[3], v[4], v[5]};
      }
    } else if (t == tags::kSamplesPerPixel) {
      meta.samples_per_pixel = as_us(e);
    } else if (t == tags::kRows) {
      meta.rows = as_us(e);
      have_rows = true;
    } else if (t == tags::kColumns) {
      meta.columns = as_us(e);
      have_cols = true;
    } else if (t == tags::kBitsAllocated) {
      meta.pixel_bits_allocated = as_us(e);
    } else if (t == tags::kPixelRepresentation) {
      meta.pixel_representation = as_us(e) == 0 ? PixelRepresentation::Unsigned : PixelRepresentation::Signed;
    } else if (t == tags::kRescaleIntercept) {
      std::string s = as_text(e.value);
      if (!s.empty()) meta.rescale_intercept = parse_ds(s, t);
    } else if (t == tags::kRescaleSlope) {
      std::string s = as_text(e.value);
      if (!s.empty()) meta.rescale_slope = parse_ds(s, t);
    } else if (t == tags::kPixelData) {
      meta.pixel_offset = e.value_offset;
      meta.pixel_length = e.length;
      have_pixels = true;
    }
  }

  if (!have_series) fail(ErrorCode::MissingMandatoryAttribute, "SeriesInstanceUID (0020,000E)");
  if (!have_study) fail(ErrorCode::MissingMandatoryAttribute, "StudyInstanceUID (0020,000D)");
  if (!have_pixels) fail(ErrorCode::MissingMandatoryAttribute, "PixelData (7FE0,0010)");
  if (!have_rows || !have_cols || meta.rows <= 0 || meta.columns <= 0) {
    fail(ErrorCode::MissingMandatoryAttribute, "Rows/Columns (0028,0010/0011)");
  }
  if (meta.pixel_bits_allocated != 8 && meta.pixel_bits_allocated != 16) {
    fail(ErrorCode::PixelDecodeFailure, "BitsAllocated " + std::to_string(meta.pixel_bits_allocated));
  }
  if (meta.samples_per_pixel != 1) {
    fail(ErrorCode::PixelDecodeFailure, "SamplesPerPixel " + std::to_string(meta.samples_per_pixel));
  }
  return meta;
}

std::vector<std::int32_t> decode_stored_pixels(std::span<const std::byte> bytes, const DicomImageMeta& meta) {
  const std::size_t count = static_cast<std::size_t>(meta.rows) * static_cast<std::size_t>(meta.columns) *
                            static_cast<std::size_t>(meta.samples_per_pixel);
  const std::size_t width = meta.pixel_bits_allocated / 8;
  if (meta.pixel_offset + meta.pixel_length > bytes.size()) {
    fail(ErrorCode::PixelDecodeFailure, "pixel data outside stream");
  }
  if (meta.pixel_length < count * width) {
    fail(ErrorCode::PixelDecodeFailure, "pixel data holds " + std::to_string(meta.pixel_length) + " bytes, need " +
                                            std::to_string(count * width));
  }
  const bool is_signed = meta.pixel_representation == PixelRepresentation::Signed;
  std::vector<std::int32_t> out(count);
  const std::byte* p = bytes.data() + meta.pixel_offset;
  for (std::size_t i = 0; i < count; ++i) {
    if (width == 1) {
      auto u = std::to_integer<std::uint8_t>(p[i]);
      out[i] = is_signed ? static_cast<std::int8_t>(u) : u;
    } else {
      auto u = static_cast<std::uint16_t>(std::to_integer<unsigned>(p[2 * i]) |
                                          (std::to_integer<unsigned>(p[2 * i + 1]) << 8));
      out[i] = is_signed ? static_cast<std::int16_t>(u) : u;
    }
  }
  return out;
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IOFailure, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> data(size);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size));
  if (!in) fail(ErrorCode::IOFailure, "short read on " + path.string());
  return data;
}

DicomImageMeta read_dicom_meta(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  DicomImageMeta meta = parse_dicom_header(bytes);
  meta.file_path = path;
  return meta;
}

DicomImage load_dicom_image(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  DicomImage img;
  img.meta = parse_dicom_header(bytes);
  img.meta.file_path = path;
  img.stored = decode_stored_pixels(bytes, img.meta);
  return img;
}

bool is_secondary_capture(const DicomImageMeta& meta) {
  if (meta.sop_class_uid == kSecondaryCaptureSopClassUid) return true;
  return std::any_of(meta.image_type_terms.begin(), meta.image_type_terms.end(),
                     [](const std::string& t) { return lower(t) == "secondary"; });
}

namespace {

Vec3 slice_normal(const std::array<double, 6>& o) {
  return {o[1] * o[5] - o[2] * o[4], o[2] * o[3] - o[0] * o[5], o[0] * o[4] - o[1] * o[3]};
}

void sort_members(std::vector<DicomImageMeta>& members) {
  Vec3 normal{0, 0, 0};
  bool all_positioned = true;
  bool any_orientation = false;
  for (const auto& m : members) {
    if (!m.image_position) all_positioned = false;
    if (m.image_orientation) {
      any_orientation = true;
      Vec3 n = slice_normal(*m.image_orientation);
      for (int k = 0; k < 3; ++k) normal[k] += n[k];
    }
  }
  const double norm = std::sqrt(normal[0] * normal[0] + normal[1] * normal[1] + normal[2] * normal[2]);
  const bool use_position = all_positioned && any_orientation && norm > 1e-12;

  std::vector<std::pair<double, std::size_t>> keys(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    double proj = 0.0;
    if (use_position) {
      const Vec3& p = *members[i].image_position;
      proj = (p[0] * normal[0] + p[1] * normal[1] + p[2] * normal[2]) / norm;
    }
    keys[i] = {proj, i};
  }
  std::sort(keys.begin(), keys.end(), [&](const auto& a, const auto& b) {
    const auto& ma = members[a.second];
    const auto& mb = members[b.second];
    return std::tie(a.first, ma.instance_number, ma.file_path) < std::tie(b.first, mb.instance_number, mb.file_path);
  });
  std::vector<DicomImageMeta> sorted;
  sorted.reserve(members.size());
  for (const auto& k : keys) sorted.push_back(std::move(members[k.second]));
  members = std::move(sorted);
}

}  // namespace

std::vector<SeriesRecord> group_series(std::vector<DicomImageMeta> metas, const VendorMap& vendors) {
  if (metas.empty()) fail(ErrorCode::EmptyInput, "no images to group");

  std::map<std::string, SeriesRecord> groups;
  for (auto& m : metas) {
    const Vendor vendor = vendors.classify(m.manufacturer);
    std::string key;
    if (vendor == Vendor::VendorB && m.protocol_name) {
      key = m.study_instance_uid + "/protocol:" + *m.protocol_name;
    } else {
      key = m.study_instance_uid + "/series:" + m.series_instance_uid;
    }
    auto [it, inserted] = groups.try_emplace(key);
    SeriesRecord& rec = it->second;
    if (inserted) {
      rec.group_key = key;
      rec.vendor = vendor;
      rec.study_instance_uid = m.study_instance_uid;
    }
    rec.members.push_back(std::move(m));
  }

  std::vector<SeriesRecord> out;
  out.reserve(groups.size());
  for (auto& [key, rec] : groups) {
    sort_members(rec.members);
    rec.representative_description = rec.members.front().series_description;
    rec.protocol_name = rec.members.front().protocol_name;
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void put_u16(std::vector<std::byte>& out, std::uint16_t v) {
  out.push_back(static_cast<std::byte>(v & 0xFF));
  out.push_back(static_cast<std::byte>(v >> 8));
}

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  put_u16(out, static_cast<std::uint16_t>(v & 0xFFFF));
  put_u16(out, static_cast<std::uint16_t>(v >> 16));
}

std::vector<std::byte> text_value(std::string_view vr, std::string_view value) {
  std::vector<std::byte> out(value.size());
  std::memcpy(out.data(), value.data(), value.size());
  if (out.size() % 2 == 1) out.push_back(vr == "UI" ? std::byte{0} : std::byte{' '});
  return out;
}

std::string format_ds(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

DicomWriter::DicomWriter(TransferSyntax ts, bool with_preamble) : ts_(ts), preamble_(with_preamble) {}

void DicomWriter::put(Element e) {
  auto it = std::find_if(elements_.begin(), elements_.end(), [&](const Element& x) { return x.tag == e.tag; });
  if (it != elements_.end()) {
    *it = std::move(e);
  } else {
    elements_.push_back(std::move(e));
  }
}

DicomWriter& DicomWriter::set_string(Tag tag, std::string_view vr, std::string_view value) {
  put({tag, {vr[0], vr[1]}, text_value(vr, value)});
  return *this;
}

DicomWriter& DicomWriter::set_us(Tag tag, std::uint16_t value) {
  std::vector<std::byte> v;
  put_u16(v, value);
  put({tag, {'U', 'S'}, std::move(v)});
  return *this;
}

DicomWriter& DicomWriter::set_pixels_u16(std::span<const std::uint16_t> pixels) {
  std::vector<std::byte> v;
  v.reserve(pixels.size() * 2);
  for (auto p : pixels) put_u16(v, p);
  put({tags::kPixelData, {'O', 'W'}, std::move(v)});
  return *this;
}

DicomWriter& DicomWriter::set_pixels_i16(std::span<const std::int16_t> pixels) {
  std::vector<std::byte> v;
  v.reserve(pixels.size() * 2);
  for (auto p : pixels) put_u16(v, static_cast<std::uint16_t>(p));
  put({tags::kPixelData, {'O', 'W'}, std::move(v)});
  return *this;
}

DicomWriter& DicomWriter::set_pixels_u8(std::span<const std::uint8_t> pixels) {
  std::vector<std::byte> v(pixels.size());
  std::memcpy(v.data(), pixels.data(), pixels.size());
  if (v.size() % 2 == 1) v.push_back(std::byte{0});
  put({tags::kPixelData, {'O', 'B'}, std::move(v)});
  return *this;
}

DicomWriter& DicomWriter::set_raw(Tag tag, std::string_view vr, std::vector<std::byte> value) {
  put({tag, {vr[0], vr[1]}, std::move(value)});
  return *this;
}

std::vector<std::byte> DicomWriter::serialize() const {
  std::vector<Element> sorted = elements_;
  std::sort(sorted.begin(), sorted.end(), [](const Element& a, const Element& b) { return a.tag < b.tag; });

  auto write_explicit = [](std::vector<std::byte>& out, const Element& e) {
    put_u16(out, e.tag.group);
    put_u16(out, e.tag.element);
    out.push_back(static_cast<std::byte>(e.vr[0]));
    out.push_back(static_cast<std::byte>(e.vr[1]));
    if (long_form_vr(std::string_view(e.vr.data(), 2))) {
      put_u16(out, 0);
      put_u32(out, static_cast<std::uint32_t>(e.value.size()));
    } else {
      put_u16(out, static_cast<std::uint16_t>(e.value.size()));
    }
    out.insert(out.end(), e.value.begin(), e.value.end());
  };
  auto write_implicit = [](std::vector<std::byte>& out, const Element& e) {
    put_u16(out, e.tag.group);
    put_u16(out, e.tag.element);
    put_u32(out, static_cast<std::uint32_t>(e.value.size()));
    out.insert(out.end(), e.value.begin(), e.value.end());
  };

  std::string sop_class, sop_instance;
  for (const auto& e : sorted) {
    auto text = [&] { return as_text(e.value); };
    if (e.tag == tags::kSopClassUid) sop_class = text();
    if (e.tag == tags::kSopInstanceUid) sop_instance = text();
  }
  const std::string_view ts_uid =
      ts_ == TransferSyntax::ExplicitVRLittleEndian ? kExplicitVRLittleEndianUid : kImplicitVRLittleEndianUid;

  std::vector<std::byte> meta_body;
  write_explicit(meta_body, {{0x0002, 0x0001}, {'O', 'B'}, {std::byte{0}, std::byte{1}}});
  if (!sop_class.empty()) write_explicit(meta_body, {{0x0002, 0x0002}, {'U', 'I'}, text_value("UI", sop_class)});
  if (!sop_instance.empty()) {
    write_explicit(meta_body, {{0x0002, 0x0003}, {'U', 'I'}, text_value("UI", sop_instance)});
  }
  write_explicit(meta_body, {tags::kTransferSyntaxUid, {'U', 'I'}, text_value("UI", ts_uid)});

  std::vector<std::byte> out;
  if (preamble_) {
    out.assign(128, std::byte{0});
    for (char c : std::string_view("DICM")) out.push_back(static_cast<std::byte>(c));
  }
  std::vector<std::byte> group_length;
  put_u32(group_length, static_cast<std::uint32_t>(meta_body.size()));
  write_explicit(out, {{0x0002, 0x0000}, {'U', 'L'}, group_length});
  out.insert(out.end(), meta_body.begin(), meta_body.end());

  for (const auto& e : sorted) {
    if (e.tag.group == 0x0002) continue;
    if (ts_ == TransferSyntax::ExplicitVRLittleEndian) {
      write_explicit(out, e);
    } else {
      write_implicit(out, e);
    }
  }
  return out;
}

std::vector<std::byte> write_fixture(const FixtureImage& image, TransferSyntax ts, bool with_preamble) {
  DicomWriter w(ts, with_preamble);
  std::string image_type;
  for (std::size_t i = 0; i < image.image_type_terms.size(); ++i) {
    if (i) image_type += '\\';
    image_type += image.image_type_terms[i];
  }
  if (!image.image_type_terms.empty()) w.set_string(tags::kImageType, "CS", image_type);
  w.set_string(tags::kSopClassUid, "UI", image.sop_class_uid);
  if (!image.sop_instance_uid.empty()) w.set_string(tags::kSopInstanceUid, "UI", image.sop_instance_uid);
  w.set_string(tags::kModality, "CS", "MR");
  w.set_string(tags::kManufacturer, "LO", image.manufacturer);
  w.set_string(tags::kSeriesDescription, "LO", image.series_description);
  if (image.protocol_name) w.set_string(tags::kProtocolName, "LO", *image.protocol_name);
  if (!image.study_instance_uid.empty()) w.set_string(tags::kStudyInstanceUid, "UI", image.study_instance_uid);
  if (!image.series_instance_uid.empty()) w.set_string(tags::kSeriesInstanceUid, "UI", image.series_instance_uid);
  w.set_string(tags::kInstanceNumber, "IS", std::to_string(image.instance_number));
  if (image.image_position) {
    const auto& p = *image.image_position;
    w.set_string(tags::kImagePositionPatient, "DS", format_ds(p[0]) + "\\" + format_ds(p[1]) + "\\" + format_ds(p[2]));
  }
  if (image.image_orientation) {
    std::string s;
    for (std::size_t i = 0; i < 6; ++i) {
      if (i) s += '\\';
      s += format_ds((*image.image_orientation)[i]);
    }
    w.set_string(tags::kImageOrientationPatient, "DS", s);
  }
  w.set_us(tags::kSamplesPerPixel, 1);
  w.set_string(tags::kPhotometricInterpretation, "CS", "MONOCHROME2");
  w.set_us(tags::kRows, static_cast<std::uint16_t>(image.rows));
  w.set_us(tags::kColumns, static_cast<std::uint16_t>(image.columns));
  w.set_us(tags::kBitsAllocated, static_cast<std::uint16_t>(image.bits_allocated));
  w.set_us(tags::kBitsStored, static_cast<std::uint16_t>(image.bits_allocated));
  w.set_us(tags::kHighBit, static_cast<std::uint16_t>(image.bits_allocated - 1));
  const bool is_signed = image.pixel_representation == PixelRepresentation::Signed;
  w.set_us(tags::kPixelRepresentation, is_signed ? 1 : 0);
  if (image.rescale_intercept) w.set_string(tags::kRescaleIntercept, "DS", format_ds(*image.rescale_intercept));
  if (image.rescale_slope) w.set_string(tags::kRescaleSlope, "DS", format_ds(*image.rescale_slope));

  if (image.bits_allocated == 8) {
    std::vector<std::uint8_t> px(image.pixels.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(image.pixels[i]);
    w.set_pixels_u8(px);
  } else if (is_signed) {
    std::vector<std::int16_t> px(image.pixels.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::int16_t>(image.pixels[i]);
    w.set_pixels_i16(px);
  } else {
    std::vector<std::uint16_t> px(image.pixels.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint16_t>(image.pixels[i]);
    w.set_pixels_u16(px);
  }
  return w.serialize();
}

}  // namespace seqsort::dicom
