#include "helprank/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "helprank/error.hpp"
#include "helprank/rng.hpp"

namespace helprank {

namespace {

constexpr char kMagic[4] = {'H', 'R', 'N', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<uint32_t>(v));
}

class Reader {
 public:
  Reader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string bytes(size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  const char* raw(size_t n) {
    need(n);
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }

  size_t pos() const { return pos_; }

 private:
  void need(size_t n) {
    if (pos_ + n > buf_.size())
      raise("CorruptTable", path_ + ": truncated (need " + std::to_string(n) +
                                " bytes at offset " + std::to_string(pos_) + ")");
  }

  const std::string& buf_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const ParamSet<float>& params,
                     const nlohmann::json& meta) {
  std::string header;
  header.append(kMagic, 4);
  put_u32(header, kVersion);
  put_u32(header, static_cast<uint32_t>(params.tensor_count()));

  std::string payload;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, m] : params) {
    put_u32(header, static_cast<uint32_t>(name.size()));
    header.append(name);
    put_u64(header, m.rows());
    put_u64(header, m.cols());
    for (size_t i = 0; i < m.size(); ++i) put_f32(payload, m[i]);
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  }
  uint64_t checksum = fnv1a64(payload.data(), payload.size());

  std::string out = header + payload;
  put_u64(out, checksum);

  // Write through a temp file so readers never observe a half-written table.
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) raise("IoError", "cannot write " + tmp);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) raise("IoError", "short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);

  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(checksum));
  nlohmann::json sidecar = {{"format_version", kVersion},
                            {"checksum", std::string(hex)},
                            {"tensors", tensors},
                            {"meta", meta}};
  std::string side_tmp = path + ".json.tmp";
  {
    std::ofstream f(side_tmp, std::ios::trunc);
    if (!f) raise("IoError", "cannot write " + side_tmp);
    f << sidecar.dump(2) << "\n";
  }
  std::filesystem::rename(side_tmp, path + ".json");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) raise("IoError", "cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  std::string buf = ss.str();

  Reader r(buf, path);
  std::string magic = r.bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    raise("CorruptTable", path + ": bad magic");
  uint32_t version = r.u32();
  if (version != kVersion)
    raise("CorruptTable", path + ": unsupported version " + std::to_string(version));
  uint32_t count = r.u32();

  struct Entry {
    std::string name;
    uint64_t rows, cols;
  };
  std::vector<Entry> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = r.u32();
    Entry e;
    e.name = r.bytes(name_len);
    e.rows = r.u64();
    e.cols = r.u64();
    entries.push_back(std::move(e));
  }

  size_t payload_start = r.pos();
  Checkpoint ck;
  for (const Entry& e : entries) {
    Mat<float>& m = ck.params.add(e.name, e.rows, e.cols);
    for (size_t i = 0; i < m.size(); ++i) m[i] = r.f32();
  }
  size_t payload_len = r.pos() - payload_start;
  uint64_t stored = r.u64();
  uint64_t actual = fnv1a64(buf.data() + payload_start, payload_len);
  if (stored != actual) raise("CorruptTable", path + ": checksum mismatch");

  std::ifstream side(path + ".json");
  if (side) {
    nlohmann::json sidecar = nlohmann::json::parse(side, nullptr, false);
    if (!sidecar.is_discarded() && sidecar.contains("meta")) ck.meta = sidecar["meta"];
  }
  return ck;
}

}  // namespace helprank
