#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqsort/image.hpp"
#include "seqsort/labeling.hpp"
#include "seqsort/nn/model.hpp"
#include "seqsort/preprocess.hpp"

namespace seqsort::evaluation {

using labeling::JointLabel;
using labeling::PlaneClass;
using labeling::SequenceClass;
using preprocess::Datapoint;

struct Prediction {
  std::string datapoint_ref;
  std::vector<double> seq_probs;
  std::vector<double> plane_probs;
  SequenceClass seq_pred{};
  PlaneClass plane_pred{};

  JointLabel joint() const { return {seq_pred, plane_pred}; }
};

/// First index of the maximum (lowest index wins ties).
std::size_t argmax_lowest(const std::vector<double>& v);

/// Infer-mode prediction.
///
/// Throws Error(ShapeMismatch) or Error(VersionMismatch) when the parameter
/// label table does not match the current taxonomy.
template <typename T>
Prediction predict(const nn::ModelParams<T>& params, const Datapoint& dp);

/// Batched predict(), same results.
template <typename T>
std::vector<Prediction> predict_all(const nn::ModelParams<T>& params, std::span<const Datapoint> set);

struct Fraction {
  std::int64_t correct = 0;
  std::int64_t total = 0;

  double percent() const { return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / total; }
  /// Percentage in hundredths, rounded half up on exact integers.
  std::int64_t hundredths() const;
  /// "correct/total (pp.pp)" with the rounded percentage.
  std::string format() const;
};

struct Accuracies {
  Fraction seq, plane, combined;
};

struct Outcome {
  JointLabel truth;
  JointLabel predicted;
  dicom::Vendor vendor = dicom::Vendor::Unknown;
};

struct EvalReport {
  Accuracies overall;
  std::map<SequenceClass, Fraction> per_class_seq;  // recall per true class
  std::map<PlaneClass, Fraction> per_class_plane;
  std::vector<std::vector<std::int64_t>> seq_confusion;    // [truth][predicted]
  std::vector<std::vector<std::int64_t>> plane_confusion;  // [truth][predicted]
  std::map<dicom::Vendor, Accuracies> by_vendor;

  nlohmann::json to_json() const;
  std::string seq_confusion_csv() const;
  std::string plane_confusion_csv() const;
};

/// Throws Error(EmptySplit) for no outcomes.
EvalReport tally(std::span<const Outcome> outcomes);

/// Throws Error(EmptySplit) or Error(Unlabeled).
template <typename T>
EvalReport evaluate(const nn::ModelParams<T>& params, std::span<const Datapoint> test_set);

/// Writes report.json, seq_confusion.csv and plane_confusion.csv into dir.
void write_report(const EvalReport& report, const std::filesystem::path& dir);

enum class Head { Sequence, Plane };
std::string_view to_string(Head h);

struct GradCamMap {
  int size = 0;
  std::vector<double> heat;  // size x size, row-major, in [0,1]
  Head target_head = Head::Sequence;
  int target_class = 0;

  double at(int r, int c) const { return heat[static_cast<std::size_t>(r) * size + c]; }
};

/// Gradient of the target logit w.r.t. the last conv block's post-ReLU
/// activations, channel weights from their spatial mean, ReLU of the weighted
/// sum, bilinear upsampling to the input size, max normalization.
///
/// Throws Error(InvalidClass).
template <typename T>
GradCamMap grad_cam(const nn::ModelParams<T>& params, const Datapoint& dp, Head head, int target_class);

/// Sum of heat inside mask / total heat (0 when the map is all zero).
double heat_mass_fraction(const GradCamMap& map, const std::vector<std::uint8_t>& mask);

/// Writes <stem>_heat.pgm and <stem>_overlay.pgm (heat blended with the
/// middle channel).
void write_grad_cam(const GradCamMap& map, const Datapoint& dp, const std::filesystem::path& dir,
                    const std::string& stem);

}  // namespace seqsort::evaluation
