#include "seqsort/phantom.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>

#include "seqsort/dicom.hpp"
#include "seqsort/error.hpp"
#include "seqsort/fsutil.hpp"
#include "seqsort/rng.hpp"

namespace seqsort::phantom {

namespace fs = std::filesystem;
using labeling::PlaneClass;
using labeling::SequenceClass;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr char kUidRoot[] = "1.2.826.0.1.3680043.10.1087";

struct VendorProfile {
  const char* manufacturer;
  dicom::Vendor vendor;
  bool has_position;
  bool split_series;  // one protocol spread over two series UIDs
  double slope;
};

constexpr VendorProfile kProfiles[3] = {
    {"Philips Medical Systems", dicom::Vendor::VendorA, true, false, 1.7},
    {"SIEMENS", dicom::Vendor::VendorB, true, true, 1.0},
    {"GE MEDICAL SYSTEMS", dicom::Vendor::VendorA, false, false, 1.0},
};

std::string description(const JointLabel& l, bool siemens) {
  std::string stem;
  switch (l.sequence) {
    case SequenceClass::CineBSSFP: stem = siemens ? "trufi_cine_" : "BTFE_BH cine "; break;
    case SequenceClass::DBLGE: stem = siemens ? "db_lge_" : "DB_PSIR "; break;
    case SequenceClass::EGE: stem = siemens ? "EGE_ir_" : "EGE_TFE "; break;
    case SequenceClass::FST2: stem = siemens ? "t2_tse_fs_" : "STIR_T2 "; break;
    case SequenceClass::WBLGE: stem = siemens ? "lge_psir_" : "PSIR_TFE "; break;
    case SequenceClass::TIScout: stem = siemens ? "TI_Scout_" : "TI_scout "; break;
    case SequenceClass::MOLLINative: stem = siemens ? "MOLLI_pre_" : "MOLLI native "; break;
    case SequenceClass::Perfusion: stem = siemens ? "perf_stress_" : "perfusion stress "; break;
    default: fail(ErrorCode::ConfigError, "phantom has no texture for " + labeling::to_string(l));
  }
  std::string plane;
  switch (l.plane) {
    case PlaneClass::TwoChamber: plane = "2CH"; break;
    case PlaneClass::ThreeChamber: plane = "3CH"; break;
    case PlaneClass::FourChamber: plane = "4CH"; break;
    case PlaneClass::ShortAxis: plane = "SAX"; break;
    default: fail(ErrorCode::ConfigError, "phantom has no geometry for " + labeling::to_string(l));
  }
  if (siemens) std::transform(plane.begin(), plane.end(), plane.begin(), [](unsigned char c) { return std::tolower(c); });
  return stem + plane;
}

double plane_angle_deg(PlaneClass p) {
  switch (p) {
    case PlaneClass::TwoChamber: return 35.0;
    case PlaneClass::ThreeChamber: return -50.0;
    case PlaneClass::FourChamber: return 90.0;
    default: return 0.0;
  }
}

// Field-of-view support in plane-rotated coordinates.
bool inside_fov(PlaneClass p, double a, double b, double r) {
  switch (p) {
    case PlaneClass::TwoChamber: return (a / 0.92) * (a / 0.92) + (b / 0.58) * (b / 0.58) <= 1.0;
    case PlaneClass::ThreeChamber: return std::abs(a) / 0.95 + std::abs(b) / 0.72 <= 1.0;
    case PlaneClass::FourChamber: return std::abs(a) <= 0.88 && std::abs(b) <= 0.52;
    default: return r <= 0.86;
  }
}

// disc_r is the distance from the WBLGE disc centre in image coordinates.
double texture(SequenceClass s, double a, double b, double r, double disc_r, double t) {
  switch (s) {
    case SequenceClass::CineBSSFP: {
      const double d = (r - (0.44 + 0.05 * t)) / 0.08;
      return 0.2 + 0.8 * std::exp(-d * d);
    }
    case SequenceClass::DBLGE: return 0.15 + 0.8 * std::clamp((a + 1.0) / 2.0 + 0.05 * t, 0.0, 1.0);
    case SequenceClass::EGE: {
      const double band = std::abs(b - 0.1 * (t - 0.5)) < 0.2 ? 0.65 : 0.0;
      return 0.2 + band + 0.15 * std::sin(13.0 * a) * std::sin(11.0 * b);
    }
    case SequenceClass::FST2: {
      const int cx = static_cast<int>(std::floor((a + 2.0) * 3.0)), cy = static_cast<int>(std::floor((b + 2.0) * 3.0));
      return (cx + cy) % 2 == 0 ? 0.85 : 0.25;
    }
    case SequenceClass::WBLGE: return disc_r <= kDiscRadius ? 0.95 : 0.12 + 0.03 * t;
    case SequenceClass::TIScout: return 0.5 + 0.4 * std::sin(2.0 * kPi * (4.0 * b + 0.3 * t));
    case SequenceClass::MOLLINative: return 0.5 + 0.4 * std::cos(2.0 * kPi * (3.0 * r - 0.2 * t));
    case SequenceClass::Perfusion: {
      static constexpr double kBlobs[5][2] = {{-0.4, -0.3}, {0.35, -0.35}, {0.0, 0.4}, {-0.45, 0.3}, {0.45, 0.25}};
      double v = 0.15;
      for (const auto& c : kBlobs) {
        const double dx = a - c[0], dy = b - c[1];
        v += (0.75 + 0.1 * t) * std::exp(-(dx * dx + dy * dy) / 0.02);
      }
      return std::min(v, 1.0);
    }
    default: return 0.0;
  }
}

std::string fmt_index(const char* prefix, int i, int width) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%0*d", prefix, width, i);
  return buf;
}

struct SeriesJob {
  int study = 0;
  int class_index = 0;
  JointLabel label{};
};

}  // namespace

std::string_view to_string(WriteFormat f) { return f == WriteFormat::DicomFixture ? "dicom_fixture" : "pgm_triplet"; }

WriteFormat write_format_from_string(std::string_view s) {
  if (s == "dicom_fixture") return WriteFormat::DicomFixture;
  if (s == "pgm_triplet") return WriteFormat::PgmTriplet;
  fail(ErrorCode::ConfigError, "unknown phantom write format '" + std::string(s) + "'");
}

std::vector<JointLabel> default_classes() {
  using P = PlaneClass;
  using S = SequenceClass;
  const std::vector<P> all4{P::TwoChamber, P::ThreeChamber, P::FourChamber, P::ShortAxis};
  std::vector<JointLabel> out;
  for (S s : {S::CineBSSFP, S::WBLGE})
    for (P p : all4) out.push_back({s, p});
  for (P p : {P::TwoChamber, P::FourChamber, P::ShortAxis}) out.push_back({S::DBLGE, p});
  for (P p : {P::TwoChamber, P::ThreeChamber, P::FourChamber}) out.push_back({S::EGE, p});
  for (S s : {S::FST2, S::TIScout})
    for (P p : {P::FourChamber, P::ShortAxis}) out.push_back({s, p});
  out.push_back({S::MOLLINative, P::ShortAxis});
  out.push_back({S::Perfusion, P::ShortAxis});
  std::sort(out.begin(), out.end());
  return out;
}

void PhantomSpec::validate() const {
  if (classes.empty()) fail(ErrorCode::ConfigError, "phantom needs at least one class");
  std::set<JointLabel> seen;
  for (const auto& l : classes) {
    if (!labeling::is_admissible(l)) fail(ErrorCode::ConfigError, labeling::to_string(l) + " is not admissible");
    if (!seen.insert(l).second) fail(ErrorCode::ConfigError, "duplicate phantom class " + labeling::to_string(l));
    description(l, false);  // throws for classes without a texture
  }
  if (studies_per_class < 1) fail(ErrorCode::ConfigError, "studies_per_class must be >= 1");
  if (slices_per_series.first < 1 || slices_per_series.second < slices_per_series.first) {
    fail(ErrorCode::ConfigError, "slices_per_series must be an ordered range >= 1");
  }
  if (image_size.first < 8 || image_size.second < 8) fail(ErrorCode::ConfigError, "phantom images must be >= 8x8");
}

std::vector<Image> render_series(const JointLabel& label, const Nuisance& nuisance, int slices, int rows, int cols,
                                 std::uint64_t noise_seed) {
  const double angle = (plane_angle_deg(label.plane) + nuisance.rotation_deg) * kPi / 180.0;
  const double ca = std::cos(angle), sa = std::sin(angle);
  std::vector<Image> out;
  for (int k = 0; k < slices; ++k) {
    const double t = slices > 1 ? static_cast<double>(k) / (slices - 1) : 0.0;
    Rng rng = make_rng(noise_seed, {static_cast<std::uint64_t>(k)});
    Image img(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const double y = (r + 0.5) / rows * 2.0 - 1.0;
        const double x = (c + 0.5) / cols * 2.0 - 1.0;
        const double a = ca * x + sa * y;
        const double b = -sa * x + ca * y;
        const double rad = std::sqrt(x * x + y * y);
        const double disc_r = std::hypot(x - nuisance.disc_centre[0], y - nuisance.disc_centre[1]);
        double v = 0.0;
        if (inside_fov(label.plane, a, b, rad)) v = texture(label.sequence, a, b, rad, disc_r, t);
        v += nuisance.noise_sigma * standard_normal(rng);
        img.at(r, c) = std::clamp(v, 0.0, 1.0);
      }
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<std::uint8_t> disc_mask(int size, std::array<double, 2> centre) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(size) * size, 0);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const double y = (r + 0.5) / size * 2.0 - 1.0;
      const double x = (c + 0.5) / size * 2.0 - 1.0;
      m[static_cast<std::size_t>(r) * size + c] = std::hypot(x - centre[0], y - centre[1]) <= kDiscRadius ? 1 : 0;
    }
  return m;
}

Manifest generate(const PhantomSpec& spec, const fs::path& out_dir) {
  spec.validate();
  std::vector<JointLabel> classes = spec.classes;
  std::sort(classes.begin(), classes.end());
  std::vector<SeriesJob> jobs;
  for (int s = 0; s < spec.studies_per_class; ++s)
    for (int k = 0; k < static_cast<int>(classes.size()); ++k) jobs.push_back({s, k, classes[k]});

  std::vector<ManifestEntry> entries(jobs.size());
  std::vector<std::string> errors(jobs.size());
  const std::string seed_tag = std::to_string(spec.seed % 1000000007ull);

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(jobs.size()); ++j) {
    try {
      const SeriesJob& job = jobs[j];
      const VendorProfile& vp = kProfiles[job.study % 3];
      const std::string study_uid = std::string(kUidRoot) + "." + seed_tag + "." + std::to_string(job.study + 1);
      const std::string series_uid_base = study_uid + "." + std::to_string(job.class_index + 1);

      Rng study_rng = make_rng(spec.seed, {0x57D1u, static_cast<std::uint64_t>(job.study)});
      Nuisance nz;
      nz.rotation_deg = uniform(study_rng, -5.0, 5.0);
      nz.intensity_scale = uniform(study_rng, 0.6, 1.4);
      Rng series_rng = make_rng(spec.seed, {0x5E71u, static_cast<std::uint64_t>(job.study),
                                            static_cast<std::uint64_t>(job.class_index)});
      nz.noise_sigma = uniform(series_rng, 0.01, 0.04);
      if (job.label.sequence == SequenceClass::WBLGE) {
        // Uniform over a disc of radius kDiscMaxOffset.
        Rng disc_rng = make_rng(spec.seed, {0xD15Cu, static_cast<std::uint64_t>(job.study),
                                            static_cast<std::uint64_t>(job.class_index)});
        const double rho = kDiscMaxOffset * std::sqrt(uniform01(disc_rng));
        const double phi = 2.0 * kPi * uniform01(disc_rng);
        nz.disc_centre = {rho * std::cos(phi), rho * std::sin(phi)};
      }
      const int slices = spec.slices_per_series.first +
                         static_cast<int>(uniform01(series_rng) *
                                          (spec.slices_per_series.second - spec.slices_per_series.first + 1));
      const std::uint64_t noise_seed = series_rng();
      const auto [rows, cols] = spec.image_size;
      const auto images = render_series(job.label, nz, std::max(1, slices), rows, cols, noise_seed);

      const bool siemens = vp.vendor == dicom::Vendor::VendorB;
      const std::string desc = description(job.label, siemens);
      ManifestEntry& e = entries[j];
      e.study_uid = study_uid;
      e.vendor = std::string(dicom::to_string(vp.vendor));
      e.manufacturer = vp.manufacturer;
      e.sequence = job.label.sequence;
      e.plane = job.label.plane;
      if (job.label.sequence == SequenceClass::WBLGE) e.disc_centre = nz.disc_centre;
      e.series_key = siemens ? study_uid + "/protocol:" + desc : study_uid + "/series:" + series_uid_base;

      const fs::path rel_dir = fs::path(spec.write_format == WriteFormat::DicomFixture ? "dicom" : "pgm") /
                               fmt_index("study_", job.study + 1, 3) / fmt_index("series_", job.class_index + 1, 3);
      fs::create_directories(out_dir / rel_dir);

      if (spec.write_format == WriteFormat::PgmTriplet) {
        const auto idx = preprocess::select_three_indices(images.size());
        const char* names[3] = {"first.pgm", "middle.pgm", "last.pgm"};
        for (int c = 0; c < 3; ++c) {
          Image scaled = images[idx[c]];
          for (auto& v : scaled.data) v = std::clamp(v * nz.intensity_scale / 1.4, 0.0, 1.0);
          write_pgm(out_dir / rel_dir / names[c], scaled);
          e.files.push_back((rel_dir / names[c]).generic_string());
        }
      } else {
        const int n = static_cast<int>(images.size());
        const int half = (n + 1) / 2;
        for (int k = 0; k < n; ++k) {
          dicom::FixtureImage fx;
          fx.study_instance_uid = study_uid;
          const int part = vp.split_series && k >= half ? 2 : 1;
          fx.series_instance_uid = vp.split_series ? series_uid_base + "." + std::to_string(part) : series_uid_base;
          fx.sop_instance_uid = series_uid_base + ".100." + std::to_string(k + 1);
          fx.series_description = desc;
          if (siemens) fx.protocol_name = desc;
          fx.manufacturer = vp.manufacturer;
          // Split series restart numbering, so order comes from the position.
          fx.instance_number = vp.split_series ? (part == 1 ? k + 1 : k - half + 1) : k + 1;
          if (vp.has_position) {
            fx.image_position = dicom::Vec3{-100.0, -100.0, 8.0 * k};
            fx.image_orientation = std::array<double, 6>{1, 0, 0, 0, 1, 0};
          }
          fx.rows = rows;
          fx.columns = cols;
          fx.bits_allocated = 16;
          fx.rescale_slope = vp.slope;
          fx.rescale_intercept = 0.0;
          fx.pixels.resize(images[k].data.size());
          for (std::size_t p = 0; p < fx.pixels.size(); ++p) {
            fx.pixels[p] = static_cast<std::int32_t>(std::lround(images[k].data[p] * nz.intensity_scale * 3000.0));
          }
          const auto bytes = dicom::write_fixture(fx);
          const fs::path rel = rel_dir / fmt_index("IM_", k + 1, 4);
          write_file_atomic(out_dir / rel, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
          e.files.push_back(rel.generic_string());
        }
      }
    } catch (const std::exception& ex) {
      errors[j] = ex.what();
    }
  }
  for (const auto& err : errors)
    if (!err.empty()) fail(ErrorCode::IOFailure, "phantom generation failed: " + err);

  Manifest m;
  m.write_format = spec.write_format;
  m.series = std::move(entries);
  std::sort(m.series.begin(), m.series.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.series_key < b.series_key; });
  try {
    write_file_atomic(out_dir / "manifest.json", m.to_json().dump(2) + "\n");
  } catch (const std::exception& ex) {
    fail(ErrorCode::IOFailure, ex.what());
  }
  return m;
}

nlohmann::json Manifest::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : series) {
    nlohmann::json row{{"series_key", e.series_key},
                       {"study_uid", e.study_uid},
                       {"vendor", e.vendor},
                       {"manufacturer", e.manufacturer},
                       {"sequence", std::string(labeling::to_string(e.sequence))},
                       {"plane", std::string(labeling::to_string(e.plane))},
                       {"files", e.files}};
    if (e.disc_centre) row["disc_centre"] = *e.disc_centre;
    rows.push_back(std::move(row));
  }
  return {{"write_format", std::string(to_string(write_format))}, {"series", rows}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  Manifest m;
  try {
    m.write_format = write_format_from_string(j.at("write_format").get<std::string>());
    for (const auto& r : j.at("series")) {
      ManifestEntry e;
      e.series_key = r.at("series_key").get<std::string>();
      e.study_uid = r.at("study_uid").get<std::string>();
      e.vendor = r.at("vendor").get<std::string>();
      e.manufacturer = r.value("manufacturer", "");
      const auto s = labeling::parse_sequence(r.at("sequence").get<std::string>());
      const auto p = labeling::parse_plane(r.at("plane").get<std::string>());
      if (!s || !p) fail(ErrorCode::ConfigError, "manifest row with unknown class in " + e.series_key);
      e.sequence = *s;
      e.plane = *p;
      e.files = r.at("files").get<std::vector<std::string>>();
      if (r.contains("disc_centre")) e.disc_centre = r.at("disc_centre").get<std::array<double, 2>>();
      m.series.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::ConfigError, std::string("malformed manifest: ") + ex.what());
  }
  return m;
}

Manifest Manifest::load(const fs::path& path) { return from_json(nlohmann::json::parse(read_text_file(path))); }

std::vector<preprocess::Datapoint> load_datapoints(const Manifest& manifest, const fs::path& root, int size) {
  std::vector<preprocess::Datapoint> out(manifest.series.size());
  const auto vendors = dicom::VendorMap::defaults();
  std::vector<std::string> errors(out.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(out.size()); ++i) {
    try {
      const auto& e = manifest.series[i];
      preprocess::Datapoint dp;
      if (manifest.write_format == WriteFormat::PgmTriplet) {
        if (e.files.size() != 3) fail(ErrorCode::ConfigError, "pgm triplet needs 3 files");
        dp = preprocess::build_datapoint_from_pgm({root / e.files[0], root / e.files[1], root / e.files[2]}, size);
        dp.label = e.label();
        dp.study_instance_uid = e.study_uid;
        dp.vendor = dicom::vendor_from_string(e.vendor);
        dp.source_series = e.series_key;
      } else {
        std::vector<dicom::DicomImageMeta> metas;
        for (const auto& f : e.files) metas.push_back(dicom::read_dicom_meta(root / f));
        auto records = dicom::group_series(std::move(metas), vendors);
        if (records.size() != 1) fail(ErrorCode::ConfigError, "manifest row " + e.series_key + " is not one series");
        dp = preprocess::build_datapoint(records.front(), e.label(), size);
      }
      out[i] = std::move(dp);
    } catch (const std::exception& ex) {
      errors[i] = ex.what();
    }
  }
  for (const auto& err : errors)
    if (!err.empty()) fail(ErrorCode::IOFailure, err);
  return out;
}

}  // namespace seqsort::phantom
