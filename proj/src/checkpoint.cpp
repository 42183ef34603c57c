#include "vaegan/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

namespace vaegan {
namespace {

constexpr char kMagic[4] = {'V', 'G', 'C', 'P'};
constexpr NetworkId kNetworks[] = {NetworkId::enc, NetworkId::dec, NetworkId::dis};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw CheckpointError("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return b_.size() - pos_; }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string hex_u64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::uint64_t parse_hex_u64(const std::string& s) {
  if (s.size() != 16) throw CheckpointError("malformed rng word '" + s + "'");
  std::uint64_t v = 0;
  for (char c : s) {
    int d;
    if (c >= '0' && c <= '9') d = c - '0';
    else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
    else throw CheckpointError("malformed rng word '" + s + "'");
    v = (v << 4) | static_cast<std::uint64_t>(d);
  }
  return v;
}

const std::string& header_at(const CheckpointFile& f, const std::string& key) {
  auto it = f.header.find(key);
  if (it == f.header.end()) throw CheckpointError("checkpoint header lacks '" + key + "'");
  return it->second;
}

std::map<std::string, std::string> prefixed(const std::map<std::string, std::string>& kv, const std::string& p) {
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : kv)
    if (k.compare(0, p.size(), p) == 0) out.emplace(k.substr(p.size()), v);
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(file.header.size()));
  for (const auto& [k, v] : file.header) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos || v.find('\n') != std::string::npos)
      throw CheckpointError("header entry '" + k + "' cannot be encoded");
    w.str(k + "=" + v);
  }
  w.u32(static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, t] : file.tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u64(e);
    for (double v : t.data()) w.u64(std::bit_cast<std::uint64_t>(v));
  }
  w.u32(crc_of(w.out.data(), w.out.size()));
  return std::move(w.out);
}

CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError("not a checkpoint (bad magic)");
  Reader r(bytes.subspan(4));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  CheckpointFile f;
  const std::uint32_t lines = r.u32();
  for (std::uint32_t i = 0; i < lines; ++i) {
    const std::string line = r.str();
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed header line");
    f.header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    r.need(std::size_t{8} * rank);
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& e : shape) {
      e = r.u64();
      if (e == 0) throw CheckpointError("tensor '" + name + "' has a zero extent");
      if (n > r.remaining() / e) throw CheckpointError("checkpoint truncated");
      n *= e;
    }
    r.need(n * 8);
    std::vector<double> values(n);
    for (auto& v : values) v = std::bit_cast<double>(r.u64());
    f.tensors.insert_or_assign(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (r.remaining() < 4) throw CheckpointError("checkpoint truncated");
  if (r.remaining() > 4) throw CheckpointError("checkpoint has trailing bytes");
  const std::size_t body = 4 + r.pos();
  const std::uint32_t stored = r.u32();
  if (stored != crc_of(bytes.data(), body)) throw CheckpointError("checkpoint checksum mismatch");
  return f;
}

void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file) {
  const auto bytes = encode_checkpoint(file);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

std::string checkpoint_kind(const TrainingState& state) {
  return state.config.mode == TrainMode::gan ? "gan" : "vaegan";
}

CheckpointFile to_checkpoint(const TrainingState& s) {
  CheckpointFile f;
  f.header["kind"] = checkpoint_kind(s);
  for (const auto& [k, v] : s.config.to_key_values()) f.header["train." + k] = v;
  for (const auto& [k, v] : model_config_key_values(s.model.config())) f.header["model." + k] = v;
  f.header["step"] = std::to_string(s.step);
  f.header["feature_tap"] = std::to_string(s.model.feature_tap());
  const auto& st = s.rng.state();
  f.header["rng"] = hex_u64(st[0]) + " " + hex_u64(st[1]) + " " + hex_u64(st[2]) + " " + hex_u64(st[3]);

  for (NetworkId id : kNetworks) {
    const std::string net = network_name(id);
    for (const auto& [name, t] : s.model.params().network(id)) f.tensors.emplace(net + "/" + name, t);
    for (const auto& [layer, bn] : s.model.network(id).bn_states()) {
      f.tensors.emplace(net + "/" + layer + ".running_mean", bn.running_mean);
      f.tensors.emplace(net + "/" + layer + ".running_var", bn.running_var);
    }
    auto it = s.rms.find(id);
    if (it != s.rms.end())
      for (const auto& [name, t] : it->second) f.tensors.emplace("rms/" + net + "/" + name, t);
  }
  return f;
}

TrainingState from_checkpoint(const CheckpointFile& f) {
  TrainingState s;
  try {
    s.config = TrainConfig::from_key_values(prefixed(f.header, "train."));
    s.config.validate();
    s.model = VaeGan(model_config_from_key_values(prefixed(f.header, "model.")), 0);
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("invalid checkpoint header: ") + e.what());
  }
  s.step = std::stoull(header_at(f, "step"));
  s.model.set_feature_tap(std::stoull(header_at(f, "feature_tap")));

  const std::string& rng = header_at(f, "rng");
  if (rng.size() != 4 * 16 + 3) throw CheckpointError("malformed rng state");
  Rng::State st;
  for (std::size_t i = 0; i < 4; ++i) st[i] = parse_hex_u64(rng.substr(i * 17, 16));
  s.rng = Rng::from_state(st);

  std::size_t used = 0;
  auto take = [&](const std::string& key, Tensor& dst) {
    auto it = f.tensors.find(key);
    if (it == f.tensors.end()) throw CheckpointError("checkpoint lacks tensor '" + key + "'");
    if (it->second.shape() != dst.shape())
      throw CheckpointError("tensor '" + key + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                            shape_str(dst.shape()));
    dst = it->second;
    ++used;
  };
  for (NetworkId id : kNetworks) {
    const std::string net = network_name(id);
    auto& params = s.model.params().network(id);
    for (auto& [name, t] : params) take(net + "/" + name, t);
    for (auto& [layer, bn] : s.model.network(id).bn_states()) {
      take(net + "/" + layer + ".running_mean", bn.running_mean);
      take(net + "/" + layer + ".running_var", bn.running_var);
    }
    for (const auto& [name, t] : params) {
      Tensor acc = Tensor::zeros_like(t);
      take("rms/" + net + "/" + name, acc);
      s.rms[id].emplace(name, std::move(acc));
    }
  }
  if (used != f.tensors.size()) throw CheckpointError("checkpoint holds unexpected tensors");
  return s;
}

void save_checkpoint(const std::filesystem::path& path, const TrainingState& state) {
  write_checkpoint_file(path, to_checkpoint(state));
}

TrainingState load_checkpoint(const std::filesystem::path& path) {
  const CheckpointFile f = read_checkpoint_file(path);
  try {
    return from_checkpoint(f);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace vaegan
