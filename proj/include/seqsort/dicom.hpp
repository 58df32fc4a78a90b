#pragma once

// Minimal DICOM Part-10 reader/writer and series grouping.
//
// Only uncompressed little-endian transfer syntaxes are handled. The reader
// pulls the handful of attributes needed to group images into series and to
// decode monochrome pixel data; everything else is skipped.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace seqsort::dicom {

/// Export style of the scanner vendor. VendorA stores all image types of a
/// sequence in one series; VendorB splits them into separate series that share
/// a protocol name.
enum class Vendor { VendorA, VendorB, VendorC, Unknown };

std::string_view to_string(Vendor v) noexcept;
/// Throws Error(ConfigError) on an unknown name.
Vendor vendor_from_string(std::string_view name);

/// Case-insensitive substring table from Manufacturer to Vendor. First match
/// wins, no match is Unknown, so the mapping is total.
class VendorMap {
 public:
  struct Entry {
    std::string substring;
    Vendor vendor;
  };

  VendorMap() = default;
  explicit VendorMap(std::vector<Entry> entries);

  static VendorMap defaults();

  Vendor classify(std::string_view manufacturer) const;
  const std::vector<Entry>& entries() const noexcept { return entries_; }

 private:
  std::vector<Entry> entries_;
};

enum class TransferSyntax { ImplicitVRLittleEndian, ExplicitVRLittleEndian };
enum class PixelRepresentation { Unsigned, Signed };

inline constexpr std::string_view kImplicitVRLittleEndianUid = "1.2.840.10008.1.2";
inline constexpr std::string_view kExplicitVRLittleEndianUid = "1.2.840.10008.1.2.1";
inline constexpr std::string_view kSecondaryCaptureSopClassUid = "1.2.840.10008.5.1.4.1.1.7";
inline constexpr std::string_view kMRImageStorageSopClassUid = "1.2.840.10008.5.1.4.1.1.4";

using Vec3 = std::array<double, 3>;

struct DicomImageMeta {
  std::filesystem::path file_path;
  std::string series_description;
  std::string series_instance_uid;
  int instance_number = 0;
  std::optional<std::string> protocol_name;
  std::string manufacturer;
  std::string study_instance_uid;
  std::string sop_class_uid;
  std::optional<Vec3> image_position;
  std::optional<std::array<double, 6>> image_orientation;
  std::vector<std::string> image_type_terms;
  int rows = 0;
  int columns = 0;
  int samples_per_pixel = 1;
  int pixel_bits_allocated = 16;
  PixelRepresentation pixel_representation = PixelRepresentation::Unsigned;
  double rescale_slope = 1.0;
  double rescale_intercept = 0.0;
  TransferSyntax transfer_syntax = TransferSyntax::ExplicitVRLittleEndian;
  // Byte range of the PixelData value inside the parsed stream.
  std::size_t pixel_offset = 0;
  std::size_t pixel_length = 0;
};

/// Parses the attribute subset listed in DicomImageMeta. Accepts streams that
/// start with the 128-byte preamble + "DICM" or directly with a group-0002
/// element.
///
/// Throws Error with MalformedStream, UnsupportedTransferSyntax,
/// MissingMandatoryAttribute or PixelDecodeFailure (unsupported pixel layout).
DicomImageMeta parse_dicom_header(std::span<const std::byte> bytes);

/// Stored (pre-rescale) pixel values, row-major, length rows*columns.
std::vector<std::int32_t> decode_stored_pixels(std::span<const std::byte> bytes,
                                               const DicomImageMeta& meta);

inline double rescaled_value(std::int32_t stored, const DicomImageMeta& meta) {
  return meta.rescale_slope * static_cast<double>(stored) + meta.rescale_intercept;
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);

/// Parses a file and sets meta.file_path.
DicomImageMeta read_dicom_meta(const std::filesystem::path& path);

struct DicomImage {
  DicomImageMeta meta;
  std::vector<std::int32_t> stored;
};

DicomImage load_dicom_image(const std::filesystem::path& path);

bool is_secondary_capture(const DicomImageMeta& meta);

struct SeriesRecord {
  std::string group_key;
  Vendor vendor = Vendor::Unknown;
  std::string study_instance_uid;
  std::vector<DicomImageMeta> members;
  std::string representative_description;
  std::optional<std::string> protocol_name;
};

/// Groups images into series. VendorA/VendorC/Unknown group by series UID;
/// VendorB groups by protocol name when present (merging series that share
/// it). Members are ordered by slice position, then instance number, then
/// path. Records are returned ordered by group_key.
///
/// Throws Error(EmptyInput) when metas is empty.
std::vector<SeriesRecord> group_series(std::vector<DicomImageMeta> metas, const VendorMap& vendors);

// ---------------------------------------------------------------------------
// Writer, used for fixtures and the phantom generator.

struct Tag {
  std::uint16_t group;
  std::uint16_t element;
  friend auto operator<=>(const Tag&, const Tag&) = default;
};

namespace tags {
inline constexpr Tag kTransferSyntaxUid{0x0002, 0x0010};
inline constexpr Tag kImageType{0x0008, 0x0008};
inline constexpr Tag kSopClassUid{0x0008, 0x0016};
inline constexpr Tag kSopInstanceUid{0x0008, 0x0018};
inline constexpr Tag kModality{0x0008, 0x0060};
inline constexpr Tag kManufacturer{0x0008, 0x0070};
inline constexpr Tag kSeriesDescription{0x0008, 0x103E};
inline constexpr Tag kProtocolName{0x0018, 0x1030};
inline constexpr Tag kStudyInstanceUid{0x0020, 0x000D};
inline constexpr Tag kSeriesInstanceUid{0x0020, 0x000E};
inline constexpr Tag kInstanceNumber{0x0020, 0x0013};
inline constexpr Tag kImagePositionPatient{0x0020, 0x0032};
inline constexpr Tag kImageOrientationPatient{0x0020, 0x0037};
inline constexpr Tag kSamplesPerPixel{0x0028, 0x0002};
inline constexpr Tag kPhotometricInterpretation{0x0028, 0x0004};
inline constexpr Tag kRows{0x0028, 0x0010};
inline constexpr Tag kColumns{0x0028, 0x0011};
inline constexpr Tag kBitsAllocated{0x0028, 0x0100};
inline constexpr Tag kBitsStored{0x0028, 0x0101};
inline constexpr Tag kHighBit{0x0028, 0x0102};
inline constexpr Tag kPixelRepresentation{0x0028, 0x0103};
inline constexpr Tag kRescaleIntercept{0x0028, 0x1052};
inline constexpr Tag kRescaleSlope{0x0028, 0x1053};
inline constexpr Tag kPixelData{0x7FE0, 0x0010};
}  // namespace tags

/// Accumulates data elements and serializes a Part-10 stream. Elements are
/// emitted in ascending tag order regardless of insertion order.
class DicomWriter {
 public:
  explicit DicomWriter(TransferSyntax ts = TransferSyntax::ExplicitVRLittleEndian,
                       bool with_preamble = true);

  DicomWriter& set_string(Tag tag, std::string_view vr, std::string_view value);
  DicomWriter& set_us(Tag tag, std::uint16_t value);
  DicomWriter& set_pixels_u16(std::span<const std::uint16_t> pixels);
  DicomWriter& set_pixels_i16(std::span<const std::int16_t> pixels);
  DicomWriter& set_pixels_u8(std::span<const std::uint8_t> pixels);
  DicomWriter& set_raw(Tag tag, std::string_view vr, std::vector<std::byte> value);

  std::vector<std::byte> serialize() const;

 private:
  struct Element {
    Tag tag;
    std::array<char, 2> vr;
    std::vector<std::byte> value;
  };
  void put(Element e);

  TransferSyntax ts_;
  bool preamble_;
  std::vector<Element> elements_;
};

/// Everything needed to write a monochrome fixture image.
struct FixtureImage {
  std::string study_instance_uid;
  std::string series_instance_uid;
  std::string sop_instance_uid;
  std::string sop_class_uid = std::string(kMRImageStorageSopClassUid);
  std::string series_description;
  std::optional<std::string> protocol_name;
  std::string manufacturer;
  std::vector<std::string> image_type_terms{"ORIGINAL", "PRIMARY"};
  int instance_number = 1;
  std::optional<Vec3> image_position;
  std::optional<std::array<double, 6>> image_orientation;
  int rows = 1;
  int columns = 1;
  int bits_allocated = 16;
  PixelRepresentation pixel_representation = PixelRepresentation::Unsigned;
  std::optional<double> rescale_slope;
  std::optional<double> rescale_intercept;
  std::vector<std::int32_t> pixels;  // stored values, rows*columns
};

std::vector<std::byte> write_fixture(const FixtureImage& image,
                                     TransferSyntax ts = TransferSyntax::ExplicitVRLittleEndian,
                                     bool with_preamble = true);

}  // namespace seqsort::dicom
