#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqsort/config.hpp"
#include "seqsort/dicom.hpp"
#include "seqsort/evaluation.hpp"
#include "seqsort/labeling.hpp"
#include "seqsort/preprocess.hpp"

namespace seqsort::commands {

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitPartial = 2;

struct FileError {
  std::filesystem::path path;
  std::string code;
  std::string message;
};

struct IngestedSeries {
  std::string series_key;
  dicom::Vendor vendor = dicom::Vendor::Unknown;
  std::string study_uid;
  std::string manufacturer;
  std::string description;
  std::optional<std::string> protocol_name;
  std::optional<labeling::JointLabel> label;
  std::vector<std::filesystem::path> files;  // member order
};

struct IngestResult {
  std::filesystem::path input_dir;
  std::vector<IngestedSeries> series;  // ordered by series_key
  std::vector<dicom::SeriesRecord> records;
  std::vector<FileError> errors;
  std::vector<std::filesystem::path> secondary_captures;
  std::size_t files_seen = 0;

  nlohmann::json to_json() const;
  int exit_code() const { return errors.empty() ? kExitOk : kExitPartial; }
};

/// Walks input_dir, parses every regular file, drops secondary captures,
/// groups the rest and labels each series. Per-file failures are collected.
/// Paths under `skip` (if non-empty) are not visited.
IngestResult ingest(const std::filesystem::path& input_dir, const dicom::VendorMap& vendors,
                    const labeling::LabelMap& labels, const std::filesystem::path& skip = {});

/// Datapoints from an ingest manifest or a phantom manifest (detected by
/// its write_format field). Series without a label keep label == nullopt.
std::vector<preprocess::Datapoint> load_source(const std::filesystem::path& manifest, const dicom::VendorMap& vendors,
                                               int size);

/// Drops unlabeled datapoints and those of labels below the threshold.
std::vector<preprocess::Datapoint> select_trainable(std::vector<preprocess::Datapoint> all, int threshold,
                                                    std::vector<std::string>* notes = nullptr);

int cmd_ingest(const std::filesystem::path& input_dir, const config::GlobalConfig& cfg,
               const std::filesystem::path& out_manifest);

/// Partition, oversample and train. Writes split_manifest.json, best.ckpt,
/// last.ckpt and train_log.jsonl into cfg.train.checkpoint_dir.
int cmd_train(const config::GlobalConfig& cfg);

/// Rebuilds the same partition and continues from last.ckpt.
int cmd_resume(const config::GlobalConfig& cfg);

/// Evaluates on the manifest's labeled datapoints, restricted to the test
/// studies of split_manifest when given.
int cmd_eval(const config::GlobalConfig& cfg, const std::filesystem::path& checkpoint,
             const std::filesystem::path& manifest, const std::filesystem::path& out_dir,
             const std::filesystem::path& split_manifest = {});

struct RoutedSeries {
  std::string series_key;
  std::string folder;  // relative to out_dir
  evaluation::Prediction prediction;
  std::vector<std::filesystem::path> files;  // sources
};

struct SortResult {
  std::vector<RoutedSeries> routed;
  std::vector<std::filesystem::path> unclassified;  // sources
  std::vector<FileError> errors;
  std::size_t linked = 0;
  std::size_t copied = 0;
  std::size_t unchanged = 0;

  nlohmann::json to_json() const;
};

/// Classifies each series under input_dir and hard-links (or copies) its
/// files into out_dir/<sequence>/<plane>/<series key>/. Unparseable files,
/// secondary captures and series that fail to build go to
/// out_dir/unclassified/. Writes out_dir/routing_report.json. Files already
/// in place are left alone, so reruns change nothing.
///
/// Throws Error(VersionMismatch) when the model taxonomy differs.
SortResult sort_tree(const std::filesystem::path& input_dir, const nn::ModelParams<float>& params,
                     const dicom::VendorMap& vendors, const std::filesystem::path& out_dir);

int cmd_sort(const config::GlobalConfig& cfg, const std::filesystem::path& input_dir,
             const std::filesystem::path& checkpoint, const std::filesystem::path& out_dir);

/// `class_name` is a class index or name for the chosen head.
///
/// Throws Error(InvalidClass).
int cmd_gradcam(const config::GlobalConfig& cfg, const std::filesystem::path& checkpoint,
                const std::filesystem::path& manifest, const std::string& series_key, const std::string& head,
                const std::string& class_name, const std::filesystem::path& out_dir);

int cmd_phantom(const config::GlobalConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace seqsort::commands
