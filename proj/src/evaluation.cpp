#include "seqsort/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "seqsort/error.hpp"
#include "seqsort/fsutil.hpp"

namespace seqsort::evaluation {

namespace {

constexpr int kSeq = static_cast<int>(labeling::kNumSequenceClasses);
constexpr int kPlane = static_cast<int>(labeling::kNumPlaneClasses);

template <typename T>
void check_taxonomy(const nn::ModelParams<T>& params) {
  if (!(params.labels == labeling::current_label_table())) {
    fail(ErrorCode::VersionMismatch, "model label table differs from the current taxonomy");
  }
}

Prediction make_prediction(const std::string& ref, std::vector<double> sp, std::vector<double> pp) {
  Prediction p;
  p.datapoint_ref = ref;
  p.seq_pred = static_cast<SequenceClass>(argmax_lowest(sp));
  p.plane_pred = static_cast<PlaneClass>(argmax_lowest(pp));
  p.seq_probs = std::move(sp);
  p.plane_probs = std::move(pp);
  return p;
}

nlohmann::json fraction_json(const Fraction& f) {
  return {{"correct", f.correct}, {"total", f.total}, {"percent", static_cast<double>(f.hundredths()) / 100.0}, {"text", f.format()}};
}

nlohmann::json accuracies_json(const Accuracies& a) {
  return {{"sequence", fraction_json(a.seq)}, {"plane", fraction_json(a.plane)}, {"combined", fraction_json(a.combined)}};
}

template <typename Names>
std::string confusion_csv(const std::vector<std::vector<std::int64_t>>& m, const Names& names) {
  std::ostringstream out;
  out << "truth\\predicted";
  for (auto n : names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << names[i];
    for (auto v : m[i]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

}  // namespace

std::size_t argmax_lowest(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

template <typename T>
Prediction predict(const nn::ModelParams<T>& params, const Datapoint& dp) {
  return predict_all(params, std::span<const Datapoint>(&dp, 1)).front();
}

template <typename T>
std::vector<Prediction> predict_all(const nn::ModelParams<T>& params, std::span<const Datapoint> set) {
  check_taxonomy(params);
  std::vector<Prediction> out;
  out.reserve(set.size());
  constexpr std::size_t kChunk = 32;
  nn::ForwardCache<T> cache;
  for (std::size_t lo = 0; lo < set.size(); lo += kChunk) {
    const std::size_t hi = std::min(set.size(), lo + kChunk);
    const int S = params.arch.input_size;
    const std::size_t plane = static_cast<std::size_t>(S) * S * 3;
    nn::Tensor4<T> batch(static_cast<int>(hi - lo), S, S, 3);
    for (std::size_t i = lo; i < hi; ++i) {
      if (set[i].size != S || set[i].pixels.size() != plane) {
        fail(ErrorCode::ShapeMismatch, "datapoint " + set[i].source_series + " does not match model input size");
      }
      std::copy(set[i].pixels.begin(), set[i].pixels.end(), batch.data.begin() + (i - lo) * plane);
    }
    nn::forward_infer(params, batch, cache);
    for (std::size_t i = lo; i < hi; ++i) {
      const int k = static_cast<int>(i - lo);
      out.push_back(make_prediction(set[i].source_series, nn::softmax_row(cache.seq_logits.row(k), kSeq),
                                    nn::softmax_row(cache.plane_logits.row(k), kPlane)));
    }
  }
  return out;
}

std::int64_t Fraction::hundredths() const {
  // floor((20000c + t) / 2t)
  return total == 0 ? 0 : (20000 * correct + total) / (2 * total);
}

std::string Fraction::format() const {
  const std::int64_t q = hundredths();
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%lld/%lld (%lld.%02lld)", static_cast<long long>(correct),
                static_cast<long long>(total), static_cast<long long>(q / 100), static_cast<long long>(q % 100));
  return buf;
}

EvalReport tally(std::span<const Outcome> outcomes) {
  if (outcomes.empty()) fail(ErrorCode::EmptySplit, "nothing to evaluate");
  EvalReport r;
  r.seq_confusion.assign(kSeq, std::vector<std::int64_t>(kSeq, 0));
  r.plane_confusion.assign(kPlane, std::vector<std::int64_t>(kPlane, 0));
  auto add = [](Accuracies& a, bool s, bool p) {
    ++a.seq.total, ++a.plane.total, ++a.combined.total;
    a.seq.correct += s;
    a.plane.correct += p;
    a.combined.correct += s && p;
  };
  for (const auto& o : outcomes) {
    const bool s = o.truth.sequence == o.predicted.sequence;
    const bool p = o.truth.plane == o.predicted.plane;
    add(r.overall, s, p);
    add(r.by_vendor[o.vendor], s, p);
    auto& fs = r.per_class_seq[o.truth.sequence];
    ++fs.total;
    fs.correct += s;
    auto& fp = r.per_class_plane[o.truth.plane];
    ++fp.total;
    fp.correct += p;
    ++r.seq_confusion[static_cast<int>(o.truth.sequence)][static_cast<int>(o.predicted.sequence)];
    ++r.plane_confusion[static_cast<int>(o.truth.plane)][static_cast<int>(o.predicted.plane)];
  }
  return r;
}

template <typename T>
EvalReport evaluate(const nn::ModelParams<T>& params, std::span<const Datapoint> test_set) {
  if (test_set.empty()) fail(ErrorCode::EmptySplit, "test set is empty");
  for (const auto& dp : test_set)
    if (!dp.label) fail(ErrorCode::Unlabeled, "datapoint " + dp.source_series + " has no label");
  const auto preds = predict_all(params, test_set);
  std::vector<Outcome> outcomes;
  for (std::size_t i = 0; i < preds.size(); ++i) outcomes.push_back({*test_set[i].label, preds[i].joint(), test_set[i].vendor});
  return tally(outcomes);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["overall"] = accuracies_json(overall);
  j["argmax_tie_break"] = "lowest class index";
  nlohmann::json pcs = nlohmann::json::object(), pcp = nlohmann::json::object(), vend = nlohmann::json::object();
  for (const auto& [c, f] : per_class_seq) pcs[std::string(labeling::to_string(c))] = fraction_json(f);
  for (const auto& [c, f] : per_class_plane) pcp[std::string(labeling::to_string(c))] = fraction_json(f);
  for (const auto& [v, a] : by_vendor) vend[std::string(dicom::to_string(v))] = accuracies_json(a);
  j["per_class_sequence"] = pcs;
  j["per_class_plane"] = pcp;
  j["by_vendor"] = vend;
  j["sequence_confusion"] = seq_confusion;
  j["plane_confusion"] = plane_confusion;
  j["sequence_classes"] = labeling::current_label_table().sequences;
  j["plane_classes"] = labeling::current_label_table().planes;
  return j;
}

std::string EvalReport::seq_confusion_csv() const { return confusion_csv(seq_confusion, labeling::sequence_names()); }
std::string EvalReport::plane_confusion_csv() const { return confusion_csv(plane_confusion, labeling::plane_names()); }

void write_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "report.json", report.to_json().dump(2) + "\n");
  write_file_atomic(dir / "seq_confusion.csv", report.seq_confusion_csv());
  write_file_atomic(dir / "plane_confusion.csv", report.plane_confusion_csv());
}

std::string_view to_string(Head h) { return h == Head::Sequence ? "sequence" : "plane"; }

template <typename T>
GradCamMap grad_cam(const nn::ModelParams<T>& params, const Datapoint& dp, Head head, int target_class) {
  const int classes = head == Head::Sequence ? kSeq : kPlane;
  if (target_class < 0 || target_class >= classes) {
    fail(ErrorCode::InvalidClass, "class " + std::to_string(target_class) + " is not valid for the " +
                                      std::string(to_string(head)) + " head");
  }
  check_taxonomy(params);
  const int S = params.arch.input_size;
  if (dp.size != S) fail(ErrorCode::ShapeMismatch, "datapoint does not match model input size");
  nn::Tensor4<T> x(1, S, S, 3);
  std::copy(dp.pixels.begin(), dp.pixels.end(), x.data.begin());
  nn::ForwardCache<T> cache;
  nn::forward_infer(params, x, cache);
  nn::Tensor4<T> dseq(1, 1, 1, kSeq), dplane(1, 1, 1, kPlane);
  (head == Head::Sequence ? dseq : dplane).data[target_class] = T(1);
  nn::BackwardOptions opt;
  opt.stop_at_final_conv = true;
  const auto back = nn::backward(params, cache, dseq, dplane, opt);
  const auto& G = back.final_conv_grad;
  const auto& A = cache.conv[3].act;
  const std::size_t cells = static_cast<std::size_t>(A.h) * A.w;
  std::vector<double> w(A.c, 0.0);
  for (std::size_t p = 0; p < cells; ++p)
    for (int k = 0; k < A.c; ++k) w[k] += G.data[p * A.c + k];
  for (auto& v : w) v /= static_cast<double>(cells);

  Image cam(A.h, A.w);
  for (std::size_t p = 0; p < cells; ++p) {
    double s = 0;
    for (int k = 0; k < A.c; ++k) s += w[k] * A.data[p * A.c + k];
    cam.data[p] = std::max(0.0, s);
  }
  const Image up = preprocess::resize_bilinear(cam, S, S);
  GradCamMap out;
  out.size = S;
  out.target_head = head;
  out.target_class = target_class;
  out.heat = up.data;
  const double mx = *std::max_element(out.heat.begin(), out.heat.end());
  if (mx > 0) {
    for (auto& v : out.heat) v = std::clamp(v / mx, 0.0, 1.0);
  } else {
    std::fill(out.heat.begin(), out.heat.end(), 0.0);
  }
  return out;
}

double heat_mass_fraction(const GradCamMap& map, const std::vector<std::uint8_t>& mask) {
  if (mask.size() != map.heat.size()) fail(ErrorCode::ShapeMismatch, "mask size differs from heat map");
  double in = 0, all = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    all += map.heat[i];
    if (mask[i]) in += map.heat[i];
  }
  return all > 0 ? in / all : 0.0;
}

void write_grad_cam(const GradCamMap& map, const Datapoint& dp, const std::filesystem::path& dir,
                    const std::string& stem) {
  std::filesystem::create_directories(dir);
  Image heat(map.size, map.size), overlay(map.size, map.size);
  for (int r = 0; r < map.size; ++r)
    for (int c = 0; c < map.size; ++c) {
      heat.at(r, c) = map.at(r, c);
      overlay.at(r, c) = 0.5 * dp.at(r, c, 1) + 0.5 * map.at(r, c);
    }
  write_pgm(dir / (stem + "_heat.pgm"), heat);
  write_pgm(dir / (stem + "_overlay.pgm"), overlay);
}

#define SEQSORT_INSTANTIATE(T)                                                                                   \
  template Prediction predict<T>(const nn::ModelParams<T>&, const Datapoint&);                                   \
  template std::vector<Prediction> predict_all<T>(const nn::ModelParams<T>&, std::span<const Datapoint>);       \
  template EvalReport evaluate<T>(const nn::ModelParams<T>&, std::span<const Datapoint>);                       \
  template GradCamMap grad_cam<T>(const nn::ModelParams<T>&, const Datapoint&, Head, int);

SEQSORT_INSTANTIATE(float)
SEQSORT_INSTANTIATE(double)

#undef SEQSORT_INSTANTIATE

}  // namespace seqsort::evaluation
