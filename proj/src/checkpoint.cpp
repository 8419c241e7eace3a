#include "pvgc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pvgc {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'P', 'V', 'G', 'C'};

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_ += s;
  }
  void tensor_body(const Tensor& t) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) pod<std::uint64_t>(e);
    auto v = t.values();
    out_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

struct OutOfBytes {};

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Tensor tensor_body() {
    const auto rank = pod<std::uint32_t>();
    if (rank > 16) throw CheckpointError("checkpoint tensor rank " + std::to_string(rank) + " is implausible");
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& e : shape) {
      e = pod<std::uint64_t>();
      if (e == 0) throw CheckpointError("checkpoint tensor has a zero extent");
      if (e > remaining() / sizeof(double)) throw OutOfBytes{};
      count *= e;
      if (count > remaining() / sizeof(double)) throw OutOfBytes{};
    }
    need(count * sizeof(double));
    std::vector<double> values(count);
    std::memcpy(values.data(), bytes_.data() + pos_, count * sizeof(double));
    pos_ += count * sizeof(double);
    return Tensor(shape, std::move(values));
  }
  std::size_t position() const { return pos_; }

 private:
  std::size_t remaining() const { return end_ - pos_; }
  void need(std::uint64_t n) {
    if (n > remaining()) throw OutOfBytes{};
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

Checkpoint parse_body(Reader& r) {
  Checkpoint c;
  r.pod<std::uint32_t>();  // magic, checked by the caller
  r.pod<std::uint32_t>();  // version
  const std::string config_text = r.str();
  c.epoch = r.pod<std::uint64_t>();
  c.rng_state = r.str();
  c.metadata = r.str();
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    c.tensors.emplace_back(std::move(name), r.tensor_body());
  }
  c.optimizer.step = r.pod<std::uint64_t>();
  const auto moments = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < moments; ++i) {
    c.optimizer.m.push_back(r.tensor_body());
    c.optimizer.v.push_back(r.tensor_body());
  }
  try {
    c.config = parse_model_config_text(config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint carries an invalid model config: ") + e.what());
  }
  return c;
}

}  // namespace

Checkpoint capture(const Model& model, const OptState* optimizer, std::uint64_t epoch, std::string rng_state,
                   std::string metadata) {
  Checkpoint c;
  c.config = model.config();
  c.epoch = epoch;
  c.rng_state = std::move(rng_state);
  c.metadata = std::move(metadata);
  for (const auto& t : model.tensors()) c.tensors.emplace_back(t.name, t.tensor.clone());
  if (optimizer != nullptr) {
    c.optimizer.step = optimizer->step;
    for (const auto& m : optimizer->m) c.optimizer.m.push_back(m.clone());
    for (const auto& v : optimizer->v) c.optimizer.v.push_back(v.clone());
  }
  return c;
}

void restore(Model& model, const Checkpoint& checkpoint) {
  if (!(model.config() == checkpoint.config)) {
    throw ModelMismatchError("checkpoint model config differs from the target model:\n--- checkpoint\n" +
                             model_config_text(checkpoint.config) + "--- model\n" +
                             model_config_text(model.config()));
  }
  auto targets = model.tensors();
  if (targets.size() != checkpoint.tensors.size()) {
    throw ModelMismatchError("checkpoint holds " + std::to_string(checkpoint.tensors.size()) +
                             " tensors, model has " + std::to_string(targets.size()));
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& [name, src] = checkpoint.tensors[i];
    if (name != targets[i].name || src.shape() != targets[i].tensor.shape()) {
      throw ModelMismatchError("checkpoint tensor " + name + " " + shape_str(src.shape()) + " does not match model " +
                               targets[i].name + " " + shape_str(targets[i].tensor.shape()));
    }
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    auto dst = targets[i].tensor.mutable_values();
    auto src = checkpoint.tensors[i].second.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

Model model_from_checkpoint(const Checkpoint& checkpoint) {
  Model model(checkpoint.config, 0);
  restore(model, checkpoint);
  return model;
}

std::string encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.bytes().append(kMagic, 4);
  w.pod<std::uint32_t>(Checkpoint::kVersion);
  w.str(model_config_text(c.config));
  w.pod<std::uint64_t>(c.epoch);
  w.str(c.rng_state);
  w.str(c.metadata);
  w.pod<std::uint64_t>(c.tensors.size());
  for (const auto& [name, t] : c.tensors) {
    w.str(name);
    w.tensor_body(t);
  }
  w.pod<std::uint64_t>(c.optimizer.step);
  if (c.optimizer.m.size() != c.optimizer.v.size()) throw ContractError("optimizer moment lists differ in length");
  w.pod<std::uint64_t>(c.optimizer.m.size());
  for (std::size_t i = 0; i < c.optimizer.m.size(); ++i) {
    w.tensor_body(c.optimizer.m[i]);
    w.tensor_body(c.optimizer.v[i]);
  }
  const std::uint64_t sum = fnv1a(w.bytes().data(), w.bytes().size());
  w.pod<std::uint64_t>(sum);
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8) throw TruncationError("checkpoint truncated: " + std::to_string(bytes.size()) + " bytes");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("not a checkpoint: bad magic bytes");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, sizeof version);
  if (version != Checkpoint::kVersion) {
    throw VersionError("checkpoint format version " + std::to_string(version) + ", reader supports " +
                       std::to_string(Checkpoint::kVersion));
  }
  bool checksum_ok = false;
  if (bytes.size() >= 16) {
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, sizeof stored);
    checksum_ok = stored == fnv1a(bytes.data(), bytes.size() - 8);
  }
  if (checksum_ok) {
    Reader r(bytes, bytes.size() - 8);
    try {
      Checkpoint c = parse_body(r);
      if (r.position() != bytes.size() - 8) throw CheckpointError("checkpoint has trailing bytes");
      return c;
    } catch (const OutOfBytes&) {
      throw CheckpointError("checkpoint layout is inconsistent");
    }
  }
  // Distinguish a cut-short file from corrupted content.
  Reader r(bytes, bytes.size());
  try {
    parse_body(r);
  } catch (const OutOfBytes&) {
    throw TruncationError("checkpoint truncated at " + std::to_string(bytes.size()) + " bytes");
  } catch (const CheckpointError&) {
  }
  if (r.position() + 8 > bytes.size()) {
    throw TruncationError("checkpoint truncated: checksum missing");
  }
  throw ChecksumError("checkpoint checksum mismatch");
}

void checkpoint_save(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint checkpoint_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

bool checkpoints_equal(const Checkpoint& a, const Checkpoint& b) {
  if (!(a.config == b.config) || a.epoch != b.epoch || a.rng_state != b.rng_state || a.metadata != b.metadata) {
    return false;
  }
  if (a.tensors.size() != b.tensors.size() || a.optimizer.step != b.optimizer.step ||
      a.optimizer.m.size() != b.optimizer.m.size() || a.optimizer.v.size() != b.optimizer.v.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    if (a.tensors[i].first != b.tensors[i].first || !bitwise_equal(a.tensors[i].second, b.tensors[i].second)) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.optimizer.m.size(); ++i) {
    if (!bitwise_equal(a.optimizer.m[i], b.optimizer.m[i]) || !bitwise_equal(a.optimizer.v[i], b.optimizer.v[i])) {
      return false;
    }
  }
  return true;
}

}  // namespace pvgc
