#include "seqsort/nn/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>

#include "seqsort/fsutil.hpp"

namespace seqsort::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'Q', 'S', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  template <typename V>
  void put(V v) {
    char buf[sizeof(V)];
    std::memcpy(buf, &v, sizeof(V));
    out_.append(buf, sizeof(V));
  }
  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  template <typename T>
  void payload(const std::vector<T>& v) {
    out_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  template <typename T>
  std::vector<T> payload(std::size_t count, int stored_bytes) {
    std::vector<T> out(count);
    if (stored_bytes == 4) {
      need(count * 4);
      std::vector<float> tmp(count);
      std::memcpy(tmp.data(), bytes_.data() + pos_, count * 4);
      for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<T>(tmp[i]);
      pos_ += count * 4;
    } else {
      need(count * 8);
      std::vector<double> tmp(count);
      std::memcpy(tmp.data(), bytes_.data() + pos_, count * 8);
      for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<T>(tmp[i]);
      pos_ += count * 8;
    }
    return out;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail(ErrorCode::CorruptCheckpoint, "truncated checkpoint");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

template <typename T>
std::string serialize_checkpoint(const Checkpoint<T>& ckpt) {
  Writer w;
  w.bytes().append(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint8_t>(sizeof(T));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.params.arch.input_size));
  for (const auto* names : {&ckpt.params.labels.sequences, &ckpt.params.labels.planes}) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(names->size()));
    for (const auto& n : *names) w.str(n);
  }
  const auto& P = ckpt.params;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(P.learnable.size() + P.buffers.size()));
  auto table = [&](const std::vector<Param<T>>& ps, std::uint8_t kind) {
    for (const auto& p : ps) {
      w.str(p.name);
      w.put<std::uint8_t>(kind);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(p.shape.size()));
      for (int d : p.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    }
  };
  table(P.learnable, 0);
  table(P.buffers, 1);
  for (const auto& p : P.learnable) w.payload(p.value);
  for (const auto& p : P.buffers) w.payload(p.value);
  w.put<std::uint8_t>(ckpt.adam ? 1 : 0);
  if (ckpt.adam) {
    w.put<std::uint64_t>(ckpt.adam->step);
    w.put<double>(ckpt.adam->beta1);
    w.put<double>(ckpt.adam->beta2);
    w.put<double>(ckpt.adam->epsilon);
    for (const auto& m : ckpt.adam->m) w.payload(m);
    for (const auto& v : ckpt.adam->v) w.payload(v);
  }
  w.put<std::int32_t>(ckpt.epoch);
  w.put<std::uint64_t>(ckpt.rng_seed);
  w.put<std::uint64_t>(ckpt.rng_counter);
  w.put<double>(ckpt.best_val_loss);
  w.put<std::int32_t>(ckpt.best_epoch);
  w.put<std::uint32_t>(crc_of(w.bytes()));
  return std::move(w.bytes());
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) + 4 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorCode::CorruptCheckpoint, "bad magic");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body.size(), 4);
  if (stored_crc != crc_of(body)) fail(ErrorCode::CorruptCheckpoint, "checksum mismatch");

  Reader r(body.substr(sizeof(kMagic)));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    fail(ErrorCode::VersionMismatch, "checkpoint format version " + std::to_string(version) + ", expected " +
                                         std::to_string(kCheckpointVersion));
  }
  const int dtype = r.get<std::uint8_t>();
  if (dtype != 4 && dtype != 8) fail(ErrorCode::CorruptCheckpoint, "unknown dtype");
  Architecture arch;
  arch.input_size = static_cast<int>(r.get<std::uint32_t>());
  labeling::LabelTable labels;
  for (auto* names : {&labels.sequences, &labels.planes}) {
    const auto n = r.get<std::uint32_t>();
    if (n > 4096) fail(ErrorCode::CorruptCheckpoint, "label table too large");
    for (std::uint32_t i = 0; i < n; ++i) names->push_back(r.str());
  }
  if (!(labels == labeling::current_label_table())) {
    fail(ErrorCode::VersionMismatch, "checkpoint label table differs from the current taxonomy");
  }

  Checkpoint<T> ckpt;
  try {
    ckpt.params = ModelParams<T>::zeros(arch);
  } catch (const Error&) {
    fail(ErrorCode::CorruptCheckpoint, "invalid input size " + std::to_string(arch.input_size));
  }
  auto& P = ckpt.params;
  const auto count = r.get<std::uint32_t>();
  if (count != P.learnable.size() + P.buffers.size()) fail(ErrorCode::CorruptCheckpoint, "tensor count mismatch");
  auto check_table = [&](const std::vector<Param<T>>& ps, std::uint8_t kind) {
    for (const auto& p : ps) {
      const std::string name = r.str();
      const auto k = r.get<std::uint8_t>();
      const auto rank = r.get<std::uint32_t>();
      std::vector<int> shape;
      for (std::uint32_t d = 0; d < rank && d < 8; ++d) shape.push_back(static_cast<int>(r.get<std::uint32_t>()));
      if (name != p.name || k != kind || shape != p.shape) {
        fail(ErrorCode::CorruptCheckpoint, "shape table mismatch at " + name);
      }
    }
  };
  check_table(P.learnable, 0);
  check_table(P.buffers, 1);
  for (auto& p : P.learnable) p.value = r.payload<T>(p.size(), dtype);
  for (auto& p : P.buffers) p.value = r.payload<T>(p.size(), dtype);
  if (r.get<std::uint8_t>() != 0) {
    AdamState<T> a = AdamState<T>::zeros_like(P);
    a.step = r.get<std::uint64_t>();
    a.beta1 = r.get<double>();
    a.beta2 = r.get<double>();
    a.epsilon = r.get<double>();
    for (auto& m : a.m) m = r.payload<T>(m.size(), dtype);
    for (auto& v : a.v) v = r.payload<T>(v.size(), dtype);
    ckpt.adam = std::move(a);
  }
  ckpt.epoch = r.get<std::int32_t>();
  ckpt.rng_seed = r.get<std::uint64_t>();
  ckpt.rng_counter = r.get<std::uint64_t>();
  ckpt.best_val_loss = r.get<double>();
  ckpt.best_epoch = r.get<std::int32_t>();
  if (r.remaining() != 0) fail(ErrorCode::CorruptCheckpoint, "trailing bytes");
  return ckpt;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ckpt) {
  try {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_file_atomic(path, serialize_checkpoint(ckpt));
  } catch (const std::exception& e) {
    fail(ErrorCode::CheckpointIOFailure, "cannot write " + path.string() + ": " + e.what());
  }
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_text_file(path);
  } catch (const std::exception& e) {
    fail(ErrorCode::CheckpointIOFailure, "cannot read " + path.string() + ": " + e.what());
  }
  return deserialize_checkpoint<T>(bytes);
}

#define SEQSORT_INSTANTIATE(T)                                                         \
  template std::string serialize_checkpoint<T>(const Checkpoint<T>&);                  \
  template Checkpoint<T> deserialize_checkpoint<T>(std::string_view);                  \
  template void save_checkpoint<T>(const std::filesystem::path&, const Checkpoint<T>&); \
  template Checkpoint<T> load_checkpoint<T>(const std::filesystem::path&);

SEQSORT_INSTANTIATE(float)
SEQSORT_INSTANTIATE(double)

#undef SEQSORT_INSTANTIATE

}  // namespace seqsort::nn
