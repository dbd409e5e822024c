#include "mkd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mkd/rng.hpp"

namespace mkd {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr char kMagic[8] = {'M', 'K', 'D', 'C', 'K', 'P', 'T', '1'};

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
    out_.append(s);
  }
  template <typename T>
  void vec(const std::vector<T>& v) {
    pod<std::uint64_t>(v.size());
    out_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in, std::size_t end) : in_(in), end_(end) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  std::vector<T> vec() {
    const auto n = pod<std::uint64_t>();
    if (n > (end_ - pos_) / sizeof(T)) throw CheckpointError("checkpoint truncated");
    std::vector<T> v(n);
    std::memcpy(v.data(), in_.data() + pos_, n * sizeof(T));
    pos_ += n * sizeof(T);
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw CheckpointError("checkpoint truncated");
  }
  const std::string& in_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

void write_net(Writer& w, const SegModelParams& p) {
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.params.size()));
  for (const auto& t : p.params) {
    w.str(t.name);
    w.pod<std::uint8_t>(static_cast<std::uint8_t>(t.kind));
    w.vec(t.values);
  }
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.buffers.size()));
  for (const auto& t : p.buffers) {
    w.str(t.name);
    w.vec(t.values);
  }
}

void read_net(Reader& r, SegModelParams& p) {
  const auto np = r.pod<std::uint32_t>();
  if (np != p.params.size()) throw CheckpointError("checkpoint: parameter count mismatch");
  for (auto& t : p.params) {
    const std::string name = r.str();
    const auto kind = r.pod<std::uint8_t>();
    auto values = r.vec<double>();
    if (name != t.name || kind != static_cast<std::uint8_t>(t.kind) ||
        values.size() != t.values.size()) {
      throw CheckpointError("checkpoint: tensor '" + name + "' does not match the architecture");
    }
    t.values = std::move(values);
  }
  const auto nb = r.pod<std::uint32_t>();
  if (nb != p.buffers.size()) throw CheckpointError("checkpoint: buffer count mismatch");
  for (auto& t : p.buffers) {
    const std::string name = r.str();
    auto values = r.vec<double>();
    if (name != t.name || values.size() != t.values.size()) {
      throw CheckpointError("checkpoint: buffer '" + name + "' does not match the architecture");
    }
    t.values = std::move(values);
  }
}

void write_grads(Writer& w, const ModelGrads& g) {
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(g.values.size()));
  for (const auto& v : g.values) w.vec(v);
}

void read_grads(Reader& r, ModelGrads& g) {
  const auto n = r.pod<std::uint32_t>();
  if (n != g.values.size()) throw CheckpointError("checkpoint: momentum layout mismatch");
  for (auto& v : g.values) {
    auto x = r.vec<double>();
    if (x.size() != v.size()) throw CheckpointError("checkpoint: momentum layout mismatch");
    v = std::move(x);
  }
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.bytes().append(kMagic, sizeof kMagic);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.pod<std::uint64_t>(trajectory_hash(ck.config));
  w.pod<std::uint64_t>(ck.config.train.seed);
  w.pod<std::int64_t>(ck.state.step);
  w.str(run_config_to_json(ck.config));
  for (const auto& b : ck.state.branches) {
    write_net(w, b.student);
    write_net(w, b.teacher);
  }
  for (const auto& b : ck.state.branches) write_grads(w, b.momentum);
  const ClassFeatureStatistics& s = ck.state.stats;
  w.pod<std::int32_t>(s.num_classes);
  w.pod<std::int32_t>(s.dim);
  w.pod<std::uint8_t>(s.kind == CovarianceKind::kFull ? 1 : 0);
  w.vec(s.count);
  w.vec(s.mean);
  w.vec(s.cov);
  w.pod<std::uint64_t>(fnv1a(w.bytes()));
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + sizeof(std::uint64_t) ||
      std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("not a checkpoint file");
  }
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof stored);
  if (stored != fnv1a(std::string_view(bytes.data(), body))) {
    throw CheckpointError("checkpoint checksum mismatch (file corrupt or truncated)");
  }
  Reader r(bytes, body);
  for (std::size_t i = 0; i < sizeof kMagic; ++i) r.pod<char>();
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto hash = r.pod<std::uint64_t>();
  const auto seed = r.pod<std::uint64_t>();
  const auto step = r.pod<std::int64_t>();
  Checkpoint ck;
  ck.config = run_config_from_json(r.str());
  if (trajectory_hash(ck.config) != hash || ck.config.train.seed != seed) {
    throw CheckpointError("checkpoint header does not match its embedded config");
  }
  ck.state = make_mkd_state(ck.config.arch, ck.config.train, ck.config.covariance);
  ck.state.step = static_cast<int>(step);
  for (auto& b : ck.state.branches) {
    read_net(r, b.student);
    read_net(r, b.teacher);
  }
  for (auto& b : ck.state.branches) read_grads(r, b.momentum);
  ClassFeatureStatistics& s = ck.state.stats;
  const auto nc = r.pod<std::int32_t>();
  const auto dim = r.pod<std::int32_t>();
  const auto kind = r.pod<std::uint8_t>();
  if (nc != s.num_classes || dim != s.dim || kind != (s.kind == CovarianceKind::kFull ? 1 : 0)) {
    throw CheckpointError("checkpoint: class statistics layout mismatch");
  }
  auto count = r.vec<std::int64_t>();
  auto mean = r.vec<double>();
  auto cov = r.vec<double>();
  if (count.size() != s.count.size() || mean.size() != s.mean.size() ||
      cov.size() != s.cov.size()) {
    throw CheckpointError("checkpoint: class statistics layout mismatch");
  }
  s.count = std::move(count);
  s.mean = std::move(mean);
  s.cov = std::move(cov);
  if (r.pos() != body) throw CheckpointError("checkpoint has trailing data");
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string bytes = encode_checkpoint(ck);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write checkpoint '" + tmp + "'");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw CheckpointError("short write to '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace mkd
