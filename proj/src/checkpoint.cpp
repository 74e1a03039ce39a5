#include "ulw/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "ulw/digest.hpp"
#include "ulw/errors.hpp"

namespace ulw::network {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'U', 'L', 'W', 'C', 'K', 'P', 'T', '\0'};
constexpr std::size_t kDigestSize = 32;

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void tensor(const Tensor& t) {
    const Shape& s = t.shape();
    for (std::uint64_t d : {s.n, s.c, s.h, s.w}) pod(d);
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
    bytes.insert(bytes.end(), p, p + t.size() * sizeof(double));
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  Tensor tensor() {
    Shape s{pod<std::uint64_t>(), pod<std::uint64_t>(), pod<std::uint64_t>(), pod<std::uint64_t>()};
    if (s.n && s.c && s.h && s.w && s.size() / s.n / s.c / s.h != s.w) throw CheckpointError("corrupt tensor shape");
    need(s.size() * sizeof(double));
    std::vector<double> v(s.size());
    std::memcpy(v.data(), data_ + pos_, v.size() * sizeof(double));
    pos_ += v.size() * sizeof(double);
    return Tensor(s, std::move(v));
  }
  bool done() const { return pos_ == size_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw CheckpointError("checkpoint is truncated");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

void write_model_config(Writer& w, const ModelConfig& c) {
  w.pod<std::int32_t>(c.unet.depth);
  w.pod<std::int32_t>(c.unet.base_channels);
  w.pod<std::int32_t>(c.unet.in_channels);
  w.pod<std::int32_t>(c.unet.out_channels);
  w.pod<std::uint8_t>(c.unet.activation == ops::Activation::relu ? 0 : 1);
  w.pod<std::uint8_t>(c.with_wiener ? 1 : 0);
  w.pod<std::int32_t>(c.wiener.kernel_size);
  w.pod(c.wiener.gaussian_std);
  w.pod(c.wiener.sigma2_init);
  w.pod(c.wiener.epsilon);
}

ModelConfig read_model_config(Reader& r) {
  ModelConfig c;
  c.unet.depth = r.pod<std::int32_t>();
  c.unet.base_channels = r.pod<std::int32_t>();
  c.unet.in_channels = r.pod<std::int32_t>();
  c.unet.out_channels = r.pod<std::int32_t>();
  c.unet.activation = r.pod<std::uint8_t>() == 0 ? ops::Activation::relu : ops::Activation::leaky_relu;
  c.with_wiener = r.pod<std::uint8_t>() != 0;
  c.wiener.kernel_size = r.pod<std::int32_t>();
  c.wiener.gaussian_std = r.pod<double>();
  c.wiener.sigma2_init = r.pod<double>();
  c.wiener.epsilon = r.pod<double>();
  return c;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes.insert(w.bytes.end(), std::begin(kMagic), std::end(kMagic));
  w.str(Checkpoint::kFormatVersion);
  w.str(ckpt.config_hash);
  w.str(ckpt.config_json);
  write_model_config(w, ckpt.params.config);
  w.pod<std::uint64_t>(ckpt.step);

  const auto views = parameter_views(ckpt.params);
  w.pod<std::uint64_t>(views.size());
  for (const auto& v : views) {
    w.str(std::string(v.name));
    w.tensor(Tensor(v.shape, std::vector<double>(v.values.begin(), v.values.end())));
  }
  if (ckpt.params.wiener) w.pod(ckpt.params.wiener->epsilon);

  const auto& opt = ckpt.optimizer;
  w.pod<std::uint64_t>(opt.t);
  const bool moments = !opt.m.empty();
  if (moments && (opt.m.size() != views.size() || opt.v.size() != views.size())) {
    throw CheckpointError("optimizer state does not match the parameter list");
  }
  w.pod<std::uint8_t>(moments ? 1 : 0);
  if (moments) {
    for (const auto& t : opt.m) w.tensor(t);
    for (const auto& t : opt.v) w.tensor(t);
  }
  Sha256 h;
  h.update(w.bytes.data(), w.bytes.size());
  const auto d = h.digest();
  w.bytes.insert(w.bytes.end(), d.begin(), d.end());
  return std::move(w.bytes);
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError(fmt::format("cannot write checkpoint {}", path.string()));
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError(fmt::format("write failed: {}", path.string()));
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kMagic + kDigestSize || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic or truncated header)");
  }
  const std::size_t body = bytes.size() - kDigestSize;
  Reader r(bytes.data() + sizeof kMagic, body - sizeof kMagic);
  const std::string version = r.str();
  if (version != Checkpoint::kFormatVersion) {
    throw CheckpointError(
        fmt::format("checkpoint format version '{}' is not supported (expected '{}')", version, Checkpoint::kFormatVersion));
  }
  Sha256 h;
  h.update(bytes.data(), body);
  const auto d = h.digest();
  if (std::memcmp(d.data(), bytes.data() + body, kDigestSize) != 0) {
    throw CheckpointError("checkpoint digest mismatch (file truncated or corrupt)");
  }

  Checkpoint ck;
  ck.config_hash = r.str();
  ck.config_json = r.str();
  const ModelConfig cfg = read_model_config(r);
  ck.step = r.pod<std::uint64_t>();
  try {
    ck.params = build_model(cfg, 0);
  } catch (const Error& e) {
    throw CheckpointError(fmt::format("checkpoint model config invalid: {}", e.what()));
  }
  auto views = parameter_views(ck.params);
  const auto count = r.pod<std::uint64_t>();
  if (count != views.size()) {
    throw CheckpointError(fmt::format("checkpoint holds {} tensors, model needs {}", count, views.size()));
  }
  for (auto& v : views) {
    const std::string name = r.str();
    const Tensor t = r.tensor();
    if (name != v.name || t.shape() != v.shape) {
      throw CheckpointError(fmt::format("checkpoint tensor '{}' {} does not match '{}' {}", name, t.shape().str(),
                                        v.name, v.shape.str()));
    }
    std::copy(t.values().begin(), t.values().end(), v.values.begin());
  }
  if (ck.params.wiener) ck.params.wiener->epsilon = r.pod<double>();
  ck.optimizer.t = r.pod<std::uint64_t>();
  if (r.pod<std::uint8_t>()) {
    for (auto* dst : {&ck.optimizer.m, &ck.optimizer.v}) {
      for (const auto& v : views) {
        Tensor t = r.tensor();
        if (t.shape() != v.shape) throw CheckpointError(fmt::format("optimizer moment for '{}' has wrong shape", v.name));
        dst->push_back(std::move(t));
      }
    }
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(fmt::format("cannot open checkpoint {}", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

Checkpoint load_checkpoint_for_resume(const std::filesystem::path& path, const std::string& expected_config_hash) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.config_hash != expected_config_hash) {
    throw CheckpointError(fmt::format("refusing to resume from {}: config hash {} differs from current config {}",
                                      path.string(), ck.config_hash, expected_config_hash));
  }
  return ck;
}

}  // namespace ulw::network
