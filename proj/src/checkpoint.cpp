#include "ket/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace ket {

namespace {

constexpr char kMagic[8] = {'K', 'E', 'T', 'C', 'K', 'P', 'T', '\n'};
constexpr uint32_t kVersion = 1;

// All integers and floats are written little-endian byte by byte so the file
// format does not depend on host endianness.
void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}

  void need(size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  float f32() {
    const uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

const Checkpoint::Entry* Checkpoint::find(const std::string& name) const {
  for (const Entry& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

const Checkpoint::Entry& Checkpoint::require(const std::string& name) const {
  const Entry* e = find(name);
  if (!e) throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
  return *e;
}

Checkpoint Checkpoint::from_params(const std::string& config_json, const NamedParams& params) {
  Checkpoint ck;
  ck.config_json = config_json;
  ck.entries.reserve(params.size());
  for (const auto& [name, tensor] : params) {
    ck.entries.push_back(Entry{name, tensor->shape(), tensor->data()});
  }
  return ck;
}

void Checkpoint::load_into(const NamedParams& params, bool allow_unused) const {
  std::map<std::string, bool> used;
  for (const Entry& e : entries) used[e.name] = false;
  for (const auto& [name, tensor] : params) {
    const Entry& e = require(name);
    if (e.shape != tensor->shape()) {
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file has " +
                               shape_str(e.shape) + ", model expects " +
                               shape_str(tensor->shape()));
    }
    tensor->data() = e.values;
    used[name] = true;
  }
  if (!allow_unused) {
    for (const auto& [name, was_used] : used) {
      if (!was_used) throw std::runtime_error("checkpoint: unexpected parameter '" + name + "'");
    }
  }
}

void Checkpoint::save(const std::string& path) const {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u64(out, config_json.size());
  out += config_json;
  put_u32(out, static_cast<uint32_t>(entries.size()));
  uint64_t offset = 0;
  for (const Entry& e : entries) {
    put_u32(out, static_cast<uint32_t>(e.name.size()));
    out += e.name;
    put_u32(out, static_cast<uint32_t>(e.shape.size()));
    for (const int64_t d : e.shape) put_u64(out, static_cast<uint64_t>(d));
    put_u64(out, offset);
    offset += static_cast<uint64_t>(e.values.size());
  }
  put_u64(out, offset);
  for (const Entry& e : entries) {
    for (const double v : e.values) put_f32(out, static_cast<float>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("checkpoint: short write to " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r(buf);
  const std::string magic = r.bytes(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(ck.version) + " in " + path);
  }
  const uint64_t cfg_len = r.u64();
  ck.config_json = r.bytes(cfg_len);
  const uint32_t n_params = r.u32();
  struct Raw {
    std::string name;
    Shape shape;
    uint64_t offset;
    uint64_t count;
  };
  std::vector<Raw> raws;
  raws.reserve(n_params);
  for (uint32_t i = 0; i < n_params; ++i) {
    Raw raw;
    raw.name = r.bytes(r.u32());
    const uint32_t ndim = r.u32();
    for (uint32_t d = 0; d < ndim; ++d) raw.shape.push_back(static_cast<int64_t>(r.u64()));
    raw.offset = r.u64();
    raw.count = static_cast<uint64_t>(shape_numel(raw.shape));
    raws.push_back(std::move(raw));
  }
  const uint64_t payload_count = r.u64();

  // Manifest offsets must partition the payload: in order, adjacent, and
  // ending exactly at its end.
  uint64_t expect = 0;
  for (const Raw& raw : raws) {
    if (raw.offset != expect) {
      throw std::runtime_error("checkpoint: parameter '" + raw.name +
                               "' has offset " + std::to_string(raw.offset) + ", expected " +
                               std::to_string(expect));
    }
    expect += raw.count;
  }
  if (expect != payload_count) {
    throw std::runtime_error("checkpoint: manifest covers " + std::to_string(expect) +
                             " floats but payload holds " + std::to_string(payload_count));
  }

  std::vector<double> payload(payload_count);
  for (uint64_t i = 0; i < payload_count; ++i) payload[i] = static_cast<double>(r.f32());
  if (r.pos != buf.size()) throw std::runtime_error("checkpoint: trailing bytes in " + path);

  for (Raw& raw : raws) {
    Entry e;
    e.name = std::move(raw.name);
    e.shape = std::move(raw.shape);
    e.values.assign(payload.begin() + static_cast<long>(raw.offset),
                    payload.begin() + static_cast<long>(raw.offset + raw.count));
    ck.entries.push_back(std::move(e));
  }
  return ck;
}

}  // namespace ket
