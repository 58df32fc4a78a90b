#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqsort/dataset.hpp"
#include "seqsort/nn/checkpoint.hpp"
#include "seqsort/nn/model.hpp"
#include "seqsort/nn/optim.hpp"

namespace seqsort::training {

using preprocess::Datapoint;

struct TrainConfig {
  int epochs = 480;
  int batch_size = 32;
  nn::CyclicLRSpec lr;
  dataset::OversampleSpec oversample;
  dataset::AugmentSpec augment;
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_dir;  // empty: keep everything in memory
  int val_every = 1;
  int input_size = preprocess::kDefaultImageSize;
  bool verbose = false;  // per-epoch progress on stderr

  /// Throws Error(ConfigError).
  void validate() const;
};

/// Validation fields are NaN for epochs without a validation pass.
struct TrainLogRecord {
  int epoch = 0;  // 1-based count of completed epochs
  double lr_at_epoch_end = 0;
  double train_loss = 0;
  double val_loss_seq = 0;
  double val_loss_plane = 0;
  double val_loss_sum = 0;
  double val_acc_seq = 0;
  double val_acc_plane = 0;
  double wall_seconds = 0;

  nlohmann::json to_json() const;
  static TrainLogRecord from_json(const nlohmann::json& j);
  /// Equality of everything except wall_seconds, bitwise on reals.
  bool same_outcome(const TrainLogRecord& other) const;
};

struct TrainResult {
  nn::ModelParams<float> best;
  int best_epoch = -1;
  double best_val_loss = 0;
  std::vector<TrainLogRecord> log;  // records produced by this call
};

/// Learning rate used for batch `batch` of `batches` in 0-based `epoch`.
inline double batch_learning_rate(const nn::CyclicLRSpec& lr, int epoch, int batch, int batches) {
  return nn::cyclic_lr(epoch + static_cast<double>(batch) / batches, lr);
}

/// Batches per epoch: full batches plus a trailing partial one of >= 2 items.
int batches_per_epoch(std::size_t items, int batch_size);

struct ValidationMetrics {
  nn::LossValue loss;
  double acc_seq = 0;
  double acc_plane = 0;
};

/// Mean per-head losses and accuracies in infer mode.
ValidationMetrics validate_model(const nn::ModelParams<float>& params, std::span<const Datapoint> set);

/// Stacks datapoints into an (n, S, S, 3) tensor.
nn::Tensor4<float> make_batch(std::span<const Datapoint> set, std::span<const std::size_t> indices);

/// Trains from a fresh He-normal initialization. Writes best.ckpt, last.ckpt
/// and train_log.jsonl into config.checkpoint_dir when it is set.
///
/// Throws Error(EmptySplit), Error(ConfigError) or Error(CheckpointIOFailure).
TrainResult train(std::span<const Datapoint> train_set, std::span<const Datapoint> val_set, const TrainConfig& config);

/// Continues from a last.ckpt written by train(); the log file keeps the
/// records up to the stored epoch. A completed run returns the stored best.
///
/// Throws Error(CorruptCheckpoint), Error(VersionMismatch) and as train().
TrainResult resume(const std::filesystem::path& checkpoint, std::span<const Datapoint> train_set,
                   std::span<const Datapoint> val_set, const TrainConfig& config);

std::vector<TrainLogRecord> read_log(const std::filesystem::path& path);

inline int seq_index(const labeling::JointLabel& l) { return static_cast<int>(l.sequence); }
inline int plane_index(const labeling::JointLabel& l) { return static_cast<int>(l.plane); }

}  // namespace seqsort::training
