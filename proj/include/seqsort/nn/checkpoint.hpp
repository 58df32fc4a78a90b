#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "seqsort/nn/model.hpp"
#include "seqsort/nn/optim.hpp"

namespace seqsort::nn {

/// Binary layout (all integers and reals little-endian):
///   "SQSCKPT\0" | u32 version | u8 dtype bytes (4|8) | u32 input_size
///   | label table: u32 n, n x str ; u32 m, m x str   (str = u32 len + bytes)
///   | u32 tensor count, per tensor: str name, u8 kind (0 learnable, 1 buffer),
///     u32 rank, rank x u32 dims
///   | tensor payloads in table order
///   | u8 has_adam [u64 step, f64 beta1, f64 beta2, f64 eps, m payloads, v payloads]
///   | i32 epoch | u64 rng_seed | u64 rng_counter | f64 best_val_loss | i32 best_epoch
///   | u32 crc32 of all preceding bytes
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  ModelParams<T> params;
  std::optional<AdamState<T>> adam;
  int epoch = 0;  // completed epochs
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_counter = 0;
  double best_val_loss = 0;
  int best_epoch = -1;
};

template <typename T>
std::string serialize_checkpoint(const Checkpoint<T>& ckpt);

/// Payloads stored in the other precision are converted.
///
/// Throws Error(CorruptCheckpoint) on a bad magic, CRC or shape table and
/// Error(VersionMismatch) on a different format version or label table.
template <typename T>
Checkpoint<T> deserialize_checkpoint(std::string_view bytes);

/// Atomic write; throws Error(CheckpointIOFailure).
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ckpt);

/// Throws Error(CheckpointIOFailure) when unreadable, otherwise as
/// deserialize_checkpoint.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace seqsort::nn
