#include "seqsort/commands.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>

#include "seqsort/dataset.hpp"
#include "seqsort/error.hpp"
#include "seqsort/fsutil.hpp"
#include "seqsort/nn/checkpoint.hpp"
#include "seqsort/phantom.hpp"
#include "seqsort/rng.hpp"
#include "seqsort/training.hpp"

namespace seqsort::commands {

namespace fs = std::filesystem;
using preprocess::Datapoint;

namespace {

FileError to_file_error(const fs::path& p, const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) return {p, std::string(to_string(err->code())), e.what()};
  return {p, "IOFailure", e.what()};
}

nlohmann::json errors_json(const std::vector<FileError>& errors) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : errors) out.push_back({{"path", e.path.generic_string()}, {"code", e.code}, {"message", e.message}});
  return out;
}

nlohmann::json optional_label_json(const std::optional<labeling::JointLabel>& l) {
  return l ? nlohmann::json(labeling::to_string(*l)) : nlohmann::json(nullptr);
}

bool is_under(const fs::path& p, const fs::path& dir) {
  if (dir.empty()) return false;
  const auto rel = p.lexically_relative(dir);
  return !rel.empty() && *rel.begin() != "..";
}

fs::path absolute_normal(const fs::path& p) { return fs::weakly_canonical(fs::absolute(p)); }

Datapoint datapoint_from_files(const std::vector<fs::path>& files, const dicom::VendorMap& vendors,
                               std::optional<labeling::JointLabel> label, int size, const std::string& key) {
  std::vector<dicom::DicomImageMeta> metas;
  for (const auto& f : files) metas.push_back(dicom::read_dicom_meta(f));
  auto records = dicom::group_series(std::move(metas), vendors);
  if (records.size() != 1) fail(ErrorCode::ConfigError, "manifest series " + key + " does not form one series");
  return preprocess::build_datapoint(records.front(), label, size);
}

std::vector<Datapoint> gather(const std::vector<Datapoint>& all, const std::vector<std::size_t>& idx) {
  std::vector<Datapoint> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

struct PreparedData {
  std::vector<Datapoint> data;
  dataset::Partition partition;
  std::vector<std::string> notes;
};

PreparedData prepare_training_data(const config::GlobalConfig& cfg) {
  if (cfg.split.val_fraction <= 0) {
    fail(ErrorCode::ConfigError, "split.val_fraction must be > 0: the validation split selects the best model");
  }
  if (cfg.train.checkpoint_dir.empty()) fail(ErrorCode::ConfigError, "train.checkpoint_dir is not set");
  if (cfg.data_source.empty()) fail(ErrorCode::ConfigError, "data.source is not set");
  PreparedData p;
  p.data = select_trainable(load_source(cfg.data_source, cfg.vendor_map, cfg.train.input_size), cfg.class_threshold,
                            &p.notes);
  p.partition = dataset::partition(p.data, cfg.split);
  return p;
}

void write_split(const config::GlobalConfig& cfg, const PreparedData& p) {
  auto j = dataset::split_manifest(p.partition);
  j["excluded"] = p.notes;
  j["counts"] = {{"train", p.partition.train.size()}, {"val", p.partition.val.size()}, {"test", p.partition.test.size()}};
  write_file_atomic(cfg.train.checkpoint_dir / "split_manifest.json", j.dump(2) + "\n");
}

void print_train_summary(const training::TrainResult& r) {
  nlohmann::json j = {{"best_epoch", r.best_epoch}, {"best_val_loss", r.best_val_loss}, {"epochs_run", r.log.size()}};
  std::cout << j.dump() << "\n";
}

std::string file_name_for(const fs::path& file, const fs::path& root) {
  std::string rel = file.lexically_relative(root).generic_string();
  std::string out;
  for (char c : rel) {
    if (c == '/') {
      out += "__";
    } else {
      out.push_back(c);
    }
  }
  return out;
}

bool same_contents(const fs::path& a, const fs::path& b) {
  std::error_code ec;
  if (fs::equivalent(a, b, ec)) return true;
  if (fs::file_size(a, ec) != fs::file_size(b, ec) || ec) return false;
  return read_text_file(a) == read_text_file(b);
}

enum class Placement { Linked, Copied, Unchanged };

Placement place_file(const fs::path& src, const fs::path& dst) {
  fs::create_directories(dst.parent_path());
  if (fs::exists(dst)) {
    if (same_contents(src, dst)) return Placement::Unchanged;
    fs::remove(dst);
  }
  std::error_code ec;
  fs::create_hard_link(src, dst, ec);
  if (!ec) return Placement::Linked;
  fs::path tmp = dst;
  tmp += ".part";
  fs::copy_file(src, tmp, fs::copy_options::overwrite_existing);
  fs::rename(tmp, dst);
  return Placement::Copied;
}

}  // namespace

// ---------------------------------------------------------------------------

IngestResult ingest(const fs::path& input_dir, const dicom::VendorMap& vendors, const labeling::LabelMap& labels,
                    const fs::path& skip) {
  if (!fs::is_directory(input_dir)) fail(ErrorCode::IOFailure, input_dir.string() + " is not a directory");
  IngestResult r;
  r.input_dir = input_dir;
  const fs::path skip_abs = skip.empty() ? fs::path() : absolute_normal(skip);
  std::vector<fs::path> files;
  for (auto& f : list_files_recursive(input_dir))
    if (!is_under(absolute_normal(f), skip_abs)) files.push_back(f);
  r.files_seen = files.size();

  std::vector<std::optional<dicom::DicomImageMeta>> metas(files.size());
  std::vector<std::optional<FileError>> errs(files.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(files.size()); ++i) {
    try {
      metas[i] = dicom::read_dicom_meta(files[i]);
    } catch (const std::exception& e) {
      errs[i] = to_file_error(files[i], e);
    }
  }
  std::vector<dicom::DicomImageMeta> kept;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (errs[i]) {
      r.errors.push_back(*errs[i]);
    } else if (dicom::is_secondary_capture(*metas[i])) {
      r.secondary_captures.push_back(files[i]);
    } else {
      kept.push_back(std::move(*metas[i]));
    }
  }
  if (kept.empty()) return r;
  r.records = dicom::group_series(std::move(kept), vendors);
  for (const auto& rec : r.records) {
    IngestedSeries s;
    s.series_key = rec.group_key;
    s.vendor = rec.vendor;
    s.study_uid = rec.study_instance_uid;
    s.manufacturer = rec.members.front().manufacturer;
    s.description = rec.representative_description;
    s.protocol_name = rec.protocol_name;
    s.label = labeling::assign_label(rec, labels);
    for (const auto& m : rec.members) s.files.push_back(m.file_path);
    r.series.push_back(std::move(s));
  }
  return r;
}

nlohmann::json IngestResult::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  std::size_t unlabeled = 0;
  for (const auto& s : series) {
    nlohmann::json files_json = nlohmann::json::array();
    for (const auto& f : s.files) files_json.push_back(fs::absolute(f).lexically_normal().generic_string());
    unlabeled += !s.label;
    rows.push_back({{"series_key", s.series_key},
                    {"vendor", std::string(dicom::to_string(s.vendor))},
                    {"study_uid", s.study_uid},
                    {"manufacturer", s.manufacturer},
                    {"description", s.description},
                    {"protocol_name", s.protocol_name ? nlohmann::json(*s.protocol_name) : nlohmann::json(nullptr)},
                    {"label", optional_label_json(s.label)},
                    {"files", files_json}});
  }
  nlohmann::json sc = nlohmann::json::array();
  for (const auto& p : secondary_captures) sc.push_back(p.generic_string());
  return {{"input_dir", input_dir.generic_string()},
          {"files_seen", files_seen},
          {"secondary_captures_dropped", secondary_captures.size()},
          {"secondary_captures", sc},
          {"unlabeled_series", unlabeled},
          {"errors", errors_json(errors)},
          {"series", rows}};
}

std::vector<Datapoint> load_source(const fs::path& manifest, const dicom::VendorMap& vendors, int size) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(manifest));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ConfigError, "cannot parse " + manifest.string() + ": " + e.what());
  }
  if (j.contains("write_format")) {
    return phantom::load_datapoints(phantom::Manifest::from_json(j), manifest.parent_path(), size);
  }
  if (!j.contains("series")) fail(ErrorCode::ConfigError, manifest.string() + " is not a series manifest");
  const auto& rows = j.at("series");
  std::vector<Datapoint> out(rows.size());
  std::vector<std::string> errors(rows.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(rows.size()); ++i) {
    try {
      const auto& r = rows[i];
      std::optional<labeling::JointLabel> label;
      if (!r.at("label").is_null()) {
        label = labeling::parse_joint_label(r.at("label").get<std::string>());
        if (!label) fail(ErrorCode::ConfigError, "bad label in manifest");
      }
      std::vector<fs::path> files;
      for (const auto& f : r.at("files")) files.emplace_back(f.get<std::string>());
      out[i] = datapoint_from_files(files, vendors, label, size, r.at("series_key").get<std::string>());
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) fail(ErrorCode::IOFailure, e);
  return out;
}

std::vector<Datapoint> select_trainable(std::vector<Datapoint> all, int threshold, std::vector<std::string>* notes) {
  std::map<labeling::JointLabel, int> counts;
  std::size_t unlabeled = 0;
  for (const auto& dp : all) {
    if (dp.label) {
      ++counts[*dp.label];
    } else {
      ++unlabeled;
    }
  }
  const auto kept = labeling::enforce_class_threshold(counts, threshold);
  if (notes) {
    if (unlabeled) notes->push_back(std::to_string(unlabeled) + " unlabeled datapoints");
    for (const auto& [l, c] : counts)
      if (!kept.count(l)) notes->push_back(labeling::to_string(l) + " has " + std::to_string(c) + " datapoints");
  }
  std::vector<Datapoint> out;
  for (auto& dp : all)
    if (dp.label && kept.count(*dp.label)) out.push_back(std::move(dp));
  return out;
}

int cmd_ingest(const fs::path& input_dir, const config::GlobalConfig& cfg, const fs::path& out_manifest) {
  const auto result = ingest(input_dir, cfg.vendor_map, cfg.label_map(), out_manifest);
  write_file_atomic(out_manifest, result.to_json().dump(2) + "\n");
  for (const auto& e : result.errors) std::cerr << e.path.string() << ": " << e.message << "\n";
  std::cout << result.series.size() << " series, " << result.secondary_captures.size() << " secondary captures dropped, "
            << result.errors.size() << " errors\n";
  return result.exit_code();
}

int cmd_train(const config::GlobalConfig& cfg) {
  const auto p = prepare_training_data(cfg);
  fs::create_directories(cfg.train.checkpoint_dir);
  write_split(cfg, p);
  const auto r = training::train(gather(p.data, p.partition.train), gather(p.data, p.partition.val), cfg.train);
  print_train_summary(r);
  return kExitOk;
}

int cmd_resume(const config::GlobalConfig& cfg) {
  const auto p = prepare_training_data(cfg);
  const auto r = training::resume(cfg.train.checkpoint_dir / "last.ckpt", gather(p.data, p.partition.train),
                                  gather(p.data, p.partition.val), cfg.train);
  print_train_summary(r);
  return kExitOk;
}

int cmd_eval(const config::GlobalConfig& cfg, const fs::path& checkpoint, const fs::path& manifest,
             const fs::path& out_dir, const fs::path& split_manifest) {
  const auto params = nn::load_checkpoint<float>(checkpoint).params;
  auto data = load_source(manifest, cfg.vendor_map, params.arch.input_size);
  if (!split_manifest.empty()) {
    const auto j = nlohmann::json::parse(read_text_file(split_manifest));
    std::set<std::string> test;
    for (const auto& [study, split] : j.at("studies").items())
      if (split.get<std::string>() == dataset::to_string(dataset::Split::Test)) test.insert(study);
    std::erase_if(data, [&](const Datapoint& dp) { return !test.count(dp.study_instance_uid); });
  }
  std::erase_if(data, [](const Datapoint& dp) { return !dp.label; });
  const auto report = evaluation::evaluate(params, std::span<const Datapoint>(data));
  evaluation::write_report(report, out_dir);
  std::cout << "sequence " << report.overall.seq.format() << "\nplane " << report.overall.plane.format()
            << "\ncombined " << report.overall.combined.format() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

nlohmann::json SortResult::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : routed) {
    nlohmann::json seq = nlohmann::json::object(), plane = nlohmann::json::object();
    const auto& sn = labeling::sequence_names();
    const auto& pn = labeling::plane_names();
    for (std::size_t k = 0; k < s.prediction.seq_probs.size(); ++k) seq[std::string(sn[k])] = s.prediction.seq_probs[k];
    for (std::size_t k = 0; k < s.prediction.plane_probs.size(); ++k) plane[std::string(pn[k])] = s.prediction.plane_probs[k];
    nlohmann::json files = nlohmann::json::array();
    for (const auto& f : s.files) files.push_back(f.generic_string());
    rows.push_back({{"series_key", s.series_key},
                    {"folder", s.folder},
                    {"sequence", std::string(labeling::to_string(s.prediction.seq_pred))},
                    {"plane", std::string(labeling::to_string(s.prediction.plane_pred))},
                    {"sequence_probabilities", seq},
                    {"plane_probabilities", plane},
                    {"files", files}});
  }
  nlohmann::json un = nlohmann::json::array();
  for (const auto& f : unclassified) un.push_back(f.generic_string());
  return {{"series", rows}, {"unclassified", un}, {"errors", errors_json(errors)}};
}

SortResult sort_tree(const fs::path& input_dir, const nn::ModelParams<float>& params, const dicom::VendorMap& vendors,
                     const fs::path& out_dir) {
  if (!(params.labels == labeling::current_label_table())) {
    fail(ErrorCode::VersionMismatch, "model label table differs from the current taxonomy");
  }
  SortResult out;
  const auto ing = ingest(input_dir, vendors, labeling::LabelMap(), out_dir);
  out.errors = ing.errors;
  for (const auto& e : ing.errors) out.unclassified.push_back(e.path);
  for (const auto& p : ing.secondary_captures) out.unclassified.push_back(p);

  const int S = params.arch.input_size;
  std::vector<std::optional<Datapoint>> dps(ing.records.size());
  std::vector<std::optional<FileError>> fails(ing.records.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(ing.records.size()); ++i) {
    try {
      dps[i] = preprocess::build_datapoint(ing.records[i], std::nullopt, S);
    } catch (const std::exception& e) {
      fails[i] = to_file_error(ing.records[i].group_key, e);
    }
  }

  std::set<std::string> used_folders;
  for (std::size_t i = 0; i < ing.records.size(); ++i) {
    const auto& s = ing.series[i];
    if (fails[i]) {
      out.errors.push_back(*fails[i]);
      for (const auto& f : s.files) out.unclassified.push_back(f);
      continue;
    }
    RoutedSeries rs;
    rs.series_key = s.series_key;
    rs.prediction = evaluation::predict(params, *dps[i]);
    rs.files = s.files;
    std::string name = sanitize_component(s.series_key);
    const fs::path base = fs::path(std::string(labeling::to_string(rs.prediction.seq_pred))) /
                          std::string(labeling::to_string(rs.prediction.plane_pred));
    if (!used_folders.insert((base / name).generic_string()).second) {
      char buf[20];
      std::snprintf(buf, sizeof buf, "_%016llx", static_cast<unsigned long long>(derive_seed(0, {std::hash<std::string>{}(s.series_key)})));
      name += buf;
      used_folders.insert((base / name).generic_string());
    }
    rs.folder = (base / name).generic_string();
    out.routed.push_back(std::move(rs));
  }
  std::sort(out.unclassified.begin(), out.unclassified.end());

  auto count = [&](Placement p) {
    if (p == Placement::Linked) ++out.linked;
    else if (p == Placement::Copied) ++out.copied;
    else ++out.unchanged;
  };
  for (const auto& rs : out.routed)
    for (const auto& f : rs.files) count(place_file(f, out_dir / rs.folder / file_name_for(f, input_dir)));
  for (const auto& f : out.unclassified) count(place_file(f, out_dir / "unclassified" / file_name_for(f, input_dir)));
  write_file_atomic(out_dir / "routing_report.json", out.to_json().dump(2) + "\n");
  return out;
}

int cmd_sort(const config::GlobalConfig& cfg, const fs::path& input_dir, const fs::path& checkpoint,
             const fs::path& out_dir) {
  const auto params = nn::load_checkpoint<float>(checkpoint).params;
  const auto r = sort_tree(input_dir, params, cfg.vendor_map, out_dir);
  std::cout << r.routed.size() << " series sorted, " << r.unclassified.size() << " files unclassified, " << r.linked
            << " linked, " << r.copied << " copied, " << r.unchanged << " unchanged\n";
  // Files that fail to parse are routine in a non-curated tree; only a series
  // that parsed but could not be classified counts as a partial failure.
  const bool series_failed = std::any_of(r.errors.begin(), r.errors.end(), [&](const FileError& e) {
    return std::none_of(r.unclassified.begin(), r.unclassified.end(), [&](const fs::path& p) { return p == e.path; });
  });
  return series_failed ? kExitPartial : kExitOk;
}

int cmd_gradcam(const config::GlobalConfig& cfg, const fs::path& checkpoint, const fs::path& manifest,
                const std::string& series_key, const std::string& head, const std::string& class_name,
                const fs::path& out_dir) {
  evaluation::Head h;
  if (head == "sequence") {
    h = evaluation::Head::Sequence;
  } else if (head == "plane") {
    h = evaluation::Head::Plane;
  } else {
    fail(ErrorCode::ConfigError, "head must be 'sequence' or 'plane'");
  }
  int cls = -1;
  if (!class_name.empty() && std::all_of(class_name.begin(), class_name.end(), [](char c) { return c == '-' || std::isdigit(static_cast<unsigned char>(c)); })) {
    cls = std::stoi(class_name);
  } else if (h == evaluation::Head::Sequence) {
    if (auto s = labeling::parse_sequence(class_name)) cls = static_cast<int>(*s);
  } else if (auto p = labeling::parse_plane(class_name)) {
    cls = static_cast<int>(*p);
  }
  if (cls < 0) fail(ErrorCode::InvalidClass, "'" + class_name + "' is not a class of the " + head + " head");
  const int limit = static_cast<int>(h == evaluation::Head::Sequence ? labeling::kNumSequenceClasses : labeling::kNumPlaneClasses);
  if (cls >= limit) fail(ErrorCode::InvalidClass, "class " + std::to_string(cls) + " is out of range for the " + head + " head");

  const auto params = nn::load_checkpoint<float>(checkpoint).params;
  const auto data = load_source(manifest, cfg.vendor_map, params.arch.input_size);
  const auto it = std::find_if(data.begin(), data.end(), [&](const Datapoint& dp) { return dp.source_series == series_key; });
  if (it == data.end()) fail(ErrorCode::ConfigError, "series " + series_key + " is not in " + manifest.string());
  const auto map = evaluation::grad_cam(params, *it, h, cls);
  const std::string stem = sanitize_component(series_key) + "_" + head + "_" + std::to_string(cls);
  evaluation::write_grad_cam(map, *it, out_dir, stem);
  std::cout << (out_dir / (stem + "_heat.pgm")).string() << "\n";
  return kExitOk;
}

int cmd_phantom(const config::GlobalConfig& cfg, const fs::path& out_dir) {
  const auto m = phantom::generate(cfg.phantom, out_dir);
  std::size_t files = 0;
  for (const auto& e : m.series) files += e.files.size();
  std::cout << m.series.size() << " series, " << files << " files written to " << out_dir.string() << "\n";
  return kExitOk;
}

}  // namespace seqsort::commands
