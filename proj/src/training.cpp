#include "seqsort/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include "seqsort/error.hpp"
#include "seqsort/fsutil.hpp"

namespace seqsort::training {

namespace {

constexpr std::uint64_t kShuffleTag = 0x5A0F;
constexpr std::uint64_t kDropoutTag = 0xD809;
constexpr char kBestName[] = "best.ckpt";
constexpr char kLastName[] = "last.ckpt";
constexpr char kLogName[] = "train_log.jsonl";

bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

nlohmann::json real_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

double real_from(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

struct RunState {
  nn::ModelParams<float> params;
  nn::AdamState<float> adam;
  int epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  nn::ModelParams<float> best;
  std::vector<TrainLogRecord> prior_log;
};

void write_log(const TrainConfig& cfg, const std::vector<TrainLogRecord>& records) {
  if (cfg.checkpoint_dir.empty()) return;
  std::string text;
  for (const auto& r : records) text += r.to_json().dump() + "\n";
  try {
    write_file_atomic(cfg.checkpoint_dir / kLogName, text);
  } catch (const std::exception& e) {
    fail(ErrorCode::CheckpointIOFailure, std::string("cannot write training log: ") + e.what());
  }
}

TrainResult run_epochs(RunState st, std::span<const Datapoint> train_set, std::span<const Datapoint> val_set,
                       const TrainConfig& cfg) {
  std::set<std::string> held_out_studies;
  for (const auto& dp : val_set) held_out_studies.insert(dp.study_instance_uid);

  std::vector<std::size_t> all(train_set.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const std::vector<std::size_t> order = dataset::oversample(train_set, all, cfg.oversample);
  const int nb = batches_per_epoch(order.size(), cfg.batch_size);
  if (nb == 0) fail(ErrorCode::EmptySplit, "training set yields no batch of at least 2 items");
  const int S = cfg.input_size;
  const std::size_t plane = static_cast<std::size_t>(S) * S * 3;

  if (!cfg.checkpoint_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.checkpoint_dir, ec);
    if (ec) fail(ErrorCode::CheckpointIOFailure, "cannot create " + cfg.checkpoint_dir.string());
  }

  TrainResult result;
  std::vector<TrainLogRecord> full_log = st.prior_log;
  nn::ForwardCache<float> cache;

  for (int e = st.epoch; e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> perm = order;
    Rng shuffle_rng = make_rng(cfg.seed, {kShuffleTag, static_cast<std::uint64_t>(e)});
    portable_shuffle(perm.begin(), perm.end(), shuffle_rng);

    double loss_sum = 0;
    std::size_t loss_count = 0;
    for (int b = 0; b < nb; ++b) {
      const std::size_t lo = static_cast<std::size_t>(b) * cfg.batch_size;
      const std::size_t hi = std::min(perm.size(), lo + cfg.batch_size);
      const int n = static_cast<int>(hi - lo);
      nn::Tensor4<float> batch(n, S, S, 3);
      std::vector<int> seq_t(n), plane_t(n);
      for (int k = 0; k < n; ++k) {
        const Datapoint& dp = train_set[perm[lo + k]];
        if (held_out_studies.count(dp.study_instance_uid)) {
          fail(ErrorCode::ConfigError, "study " + dp.study_instance_uid + " appears in both training and validation");
        }
        if (dp.size != S) fail(ErrorCode::ShapeMismatch, "datapoint size differs from configured input size");
        seq_t[k] = seq_index(*dp.label);
        plane_t[k] = plane_index(*dp.label);
      }
#pragma omp parallel for schedule(static) num_threads(nn::kernel_threads())
      for (int k = 0; k < n; ++k) {
        const std::size_t pos = lo + k;
        Rng arng = dataset::augment_rng(cfg.augment, static_cast<std::uint64_t>(e), pos);
        const Datapoint aug = dataset::augment(train_set[perm[pos]], cfg.augment, arng);
        std::copy(aug.pixels.begin(), aug.pixels.end(), batch.data.begin() + k * plane);
      }
      Rng drop_rng = make_rng(cfg.seed, {kDropoutTag, static_cast<std::uint64_t>(e), static_cast<std::uint64_t>(b)});
      nn::forward(st.params, batch, nn::Mode::Train, &drop_rng, cache);
      nn::Tensor4<float> dseq, dplane;
      const auto loss = nn::two_head_loss(cache.seq_logits, cache.plane_logits, seq_t, plane_t, &dseq, &dplane);
      const auto back = nn::backward(st.params, cache, dseq, dplane);
      nn::adam_step(st.params, back.grads, st.adam, batch_learning_rate(cfg.lr, e, b, nb));
      loss_sum += loss.total() * n;
      loss_count += static_cast<std::size_t>(n);
    }

    TrainLogRecord rec;
    rec.epoch = e + 1;
    rec.lr_at_epoch_end = nn::cyclic_lr(static_cast<double>(e + 1), cfg.lr);
    rec.train_loss = loss_sum / static_cast<double>(loss_count);
    const bool do_val = (e + 1) % cfg.val_every == 0 || e + 1 == cfg.epochs;
    if (do_val) {
      const auto vm = validate_model(st.params, val_set);
      rec.val_loss_seq = vm.loss.seq;
      rec.val_loss_plane = vm.loss.plane;
      rec.val_loss_sum = vm.loss.seq + vm.loss.plane;
      rec.val_acc_seq = vm.acc_seq;
      rec.val_acc_plane = vm.acc_plane;
    } else {
      rec.val_loss_seq = rec.val_loss_plane = rec.val_loss_sum = std::numeric_limits<double>::quiet_NaN();
      rec.val_acc_seq = rec.val_acc_plane = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(rec.train_loss)) fail(ErrorCode::ConfigError, "training loss diverged");

    st.epoch = e + 1;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(rec);
    full_log.push_back(rec);
    // The log goes first: resume() drops records past the checkpoint epoch,
    // so a kill between the writes only repeats the epoch.
    write_log(cfg, full_log);
    if (do_val && rec.val_loss_sum < st.best_val_loss) {
      st.best_val_loss = rec.val_loss_sum;
      st.best_epoch = e + 1;
      st.best = st.params;
      if (!cfg.checkpoint_dir.empty()) {
        nn::Checkpoint<float> ck{st.best, std::nullopt, st.epoch, cfg.seed, static_cast<std::uint64_t>(st.epoch),
                                 st.best_val_loss, st.best_epoch};
        nn::save_checkpoint(cfg.checkpoint_dir / kBestName, ck);
      }
    }
    if (!cfg.checkpoint_dir.empty()) {
      nn::Checkpoint<float> ck{st.params, st.adam, st.epoch, cfg.seed, static_cast<std::uint64_t>(st.epoch),
                               st.best_val_loss, st.best_epoch};
      nn::save_checkpoint(cfg.checkpoint_dir / kLastName, ck);
    }
    if (cfg.verbose) {
      std::cerr << "epoch " << rec.epoch << "/" << cfg.epochs << " lr " << rec.lr_at_epoch_end << " train "
                << rec.train_loss << " val " << rec.val_loss_sum << " acc " << rec.val_acc_seq << "/"
                << rec.val_acc_plane << " (" << rec.wall_seconds << " s)\n";
    }
  }
  result.best = std::move(st.best);
  result.best_epoch = st.best_epoch;
  result.best_val_loss = st.best_val_loss;
  return result;
}

void check_sets(std::span<const Datapoint> train_set, std::span<const Datapoint> val_set) {
  if (train_set.empty()) fail(ErrorCode::EmptySplit, "training set is empty");
  if (val_set.empty()) fail(ErrorCode::EmptySplit, "validation set is empty");
  for (auto set : {train_set, val_set})
    for (const auto& dp : set)
      if (!dp.label) fail(ErrorCode::Unlabeled, "datapoint " + dp.source_series + " has no label");
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) fail(ErrorCode::ConfigError, "epochs must be >= 1");
  if (batch_size < 2) fail(ErrorCode::ConfigError, "batch_size must be >= 2");
  if (val_every < 1) fail(ErrorCode::ConfigError, "val_every must be >= 1");
  lr.validate();
  oversample.validate();
  augment.validate();
  nn::Architecture arch;
  arch.input_size = input_size;
  try {
    arch.validate();
  } catch (const Error& e) {
    fail(ErrorCode::ConfigError, e.what());
  }
}

nlohmann::json TrainLogRecord::to_json() const {
  return {{"epoch", epoch},
          {"lr_at_epoch_end", lr_at_epoch_end},
          {"train_loss", real_or_null(train_loss)},
          {"val_loss_seq", real_or_null(val_loss_seq)},
          {"val_loss_plane", real_or_null(val_loss_plane)},
          {"val_loss_sum", real_or_null(val_loss_sum)},
          {"val_acc_seq", real_or_null(val_acc_seq)},
          {"val_acc_plane", real_or_null(val_acc_plane)},
          {"wall_seconds", wall_seconds}};
}

TrainLogRecord TrainLogRecord::from_json(const nlohmann::json& j) {
  TrainLogRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.lr_at_epoch_end = j.at("lr_at_epoch_end").get<double>();
  r.train_loss = real_from(j.at("train_loss"));
  r.val_loss_seq = real_from(j.at("val_loss_seq"));
  r.val_loss_plane = real_from(j.at("val_loss_plane"));
  r.val_loss_sum = real_from(j.at("val_loss_sum"));
  r.val_acc_seq = real_from(j.at("val_acc_seq"));
  r.val_acc_plane = real_from(j.at("val_acc_plane"));
  r.wall_seconds = j.at("wall_seconds").get<double>();
  return r;
}

bool TrainLogRecord::same_outcome(const TrainLogRecord& o) const {
  return epoch == o.epoch && bit_equal(lr_at_epoch_end, o.lr_at_epoch_end) && bit_equal(train_loss, o.train_loss) &&
         bit_equal(val_loss_seq, o.val_loss_seq) && bit_equal(val_loss_plane, o.val_loss_plane) &&
         bit_equal(val_loss_sum, o.val_loss_sum) && bit_equal(val_acc_seq, o.val_acc_seq) &&
         bit_equal(val_acc_plane, o.val_acc_plane);
}

int batches_per_epoch(std::size_t items, int batch_size) {
  const auto full = static_cast<int>(items / batch_size);
  return full + (items % batch_size >= 2 ? 1 : 0);
}

nn::Tensor4<float> make_batch(std::span<const Datapoint> set, std::span<const std::size_t> indices) {
  if (indices.empty()) fail(ErrorCode::EmptySplit, "empty batch");
  const int S = set[indices[0]].size;
  nn::Tensor4<float> t(static_cast<int>(indices.size()), S, S, 3);
  const std::size_t plane = static_cast<std::size_t>(S) * S * 3;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& dp = set[indices[k]];
    if (dp.size != S || dp.pixels.size() != plane) fail(ErrorCode::ShapeMismatch, "mixed datapoint sizes in batch");
    std::copy(dp.pixels.begin(), dp.pixels.end(), t.data.begin() + k * plane);
  }
  return t;
}

ValidationMetrics validate_model(const nn::ModelParams<float>& params, std::span<const Datapoint> set) {
  if (set.empty()) fail(ErrorCode::EmptySplit, "validation set is empty");
  constexpr std::size_t kChunk = 32;
  double ls = 0, lp = 0;
  std::size_t cs = 0, cp = 0;
  nn::ForwardCache<float> cache;
  for (std::size_t lo = 0; lo < set.size(); lo += kChunk) {
    const std::size_t hi = std::min(set.size(), lo + kChunk);
    std::vector<std::size_t> idx;
    std::vector<int> st, pt;
    for (std::size_t i = lo; i < hi; ++i) {
      idx.push_back(i);
      st.push_back(seq_index(*set[i].label));
      pt.push_back(plane_index(*set[i].label));
    }
    nn::forward_infer(params, make_batch(set, idx), cache);
    const auto loss = nn::two_head_loss<float>(cache.seq_logits, cache.plane_logits, st, pt, nullptr, nullptr);
    ls += loss.seq * static_cast<double>(idx.size());
    lp += loss.plane * static_cast<double>(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const float* zs = cache.seq_logits.row(static_cast<int>(k));
      const float* zp = cache.plane_logits.row(static_cast<int>(k));
      if (std::max_element(zs, zs + cache.seq_logits.c) - zs == st[k]) ++cs;
      if (std::max_element(zp, zp + cache.plane_logits.c) - zp == pt[k]) ++cp;
    }
  }
  const auto n = static_cast<double>(set.size());
  return {{ls / n, lp / n}, cs / n, cp / n};
}

TrainResult train(std::span<const Datapoint> train_set, std::span<const Datapoint> val_set, const TrainConfig& config) {
  config.validate();
  check_sets(train_set, val_set);
  nn::Architecture arch;
  arch.input_size = config.input_size;
  RunState st;
  st.params = nn::he_normal_init<float>(arch, config.seed);
  st.adam = nn::AdamState<float>::zeros_like(st.params);
  return run_epochs(std::move(st), train_set, val_set, config);
}

TrainResult resume(const std::filesystem::path& checkpoint, std::span<const Datapoint> train_set,
                   std::span<const Datapoint> val_set, const TrainConfig& config) {
  config.validate();
  auto ck = nn::load_checkpoint<float>(checkpoint);
  if (ck.params.arch.input_size != config.input_size) {
    fail(ErrorCode::ConfigError, "checkpoint input size " + std::to_string(ck.params.arch.input_size) +
                                     " differs from configured " + std::to_string(config.input_size));
  }
  if (!ck.adam) fail(ErrorCode::CorruptCheckpoint, "checkpoint carries no optimizer state; use last.ckpt");
  const auto dir = checkpoint.parent_path();
  RunState st;
  st.epoch = ck.epoch;
  st.best_val_loss = ck.best_epoch >= 0 ? ck.best_val_loss : std::numeric_limits<double>::infinity();
  st.best_epoch = ck.best_epoch;
  if (ck.best_epoch >= 0) st.best = nn::load_checkpoint<float>(dir / kBestName).params;
  if (std::filesystem::exists(dir / kLogName)) {
    for (auto& r : read_log(dir / kLogName))
      if (r.epoch <= ck.epoch) st.prior_log.push_back(r);
  }
  if (ck.epoch >= config.epochs) {
    TrainResult done;
    done.best = std::move(st.best);
    done.best_epoch = st.best_epoch;
    done.best_val_loss = st.best_val_loss;
    return done;
  }
  check_sets(train_set, val_set);
  st.params = std::move(ck.params);
  st.adam = std::move(*ck.adam);
  TrainConfig cfg = config;
  cfg.seed = ck.rng_seed;
  if (cfg.checkpoint_dir.empty()) cfg.checkpoint_dir = dir;
  return run_epochs(std::move(st), train_set, val_set, cfg);
}

std::vector<TrainLogRecord> read_log(const std::filesystem::path& path) {
  std::vector<TrainLogRecord> out;
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(TrainLogRecord::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::CorruptCheckpoint, "bad training log line: " + std::string(e.what()));
    }
  }
  return out;
}

}  // namespace seqsort::training
