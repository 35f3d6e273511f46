#include "flowctl/dataset_io.hpp"

#include "flowctl/checkpoint.hpp"  // atomic_write_file

#include <cstring>
#include <fstream>

namespace flowctl {

namespace {

constexpr char kMagic[5] = {'F', 'C', 'D', 'S', '1'};
constexpr int kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  std::string path;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("truncated dataset file: " + path);
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    need(4);
    float v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
};

void put_matrix(std::string& out, const Matf& m) {
  for (long r = 0; r < m.rows(); ++r) {
    for (long c = 0; c < m.cols(); ++c) put_f32(out, m(r, c));
  }
}

Matf get_matrix(Reader& rd, long rows, long cols) {
  Matf m(rows, cols);
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) m(r, c) = rd.f32();
  }
  return m;
}

}  // namespace

void save_dataset(const std::string& path, const Dataset& ds) {
  nlohmann::json header = ds.header;
  header["version"] = kVersion;
  header["count"] = ds.utterances.size();
  std::string hstr = header.dump();

  std::string out(kMagic, 5);
  put_u64(out, hstr.size());
  out += hstr;
  for (const auto& u : ds.utterances) {
    put_u32(out, static_cast<uint32_t>(u.spec.tokens.size()));
    for (int tok : u.spec.tokens) put_u32(out, static_cast<uint32_t>(tok));
    put_u32(out, static_cast<uint32_t>(u.spec.segments.size()));
    for (const auto& s : u.spec.segments) {
      put_u32(out, static_cast<uint32_t>(s.length_frames));
      put_f32(out, s.arousal);
      put_f32(out, s.valence);
    }
    put_u32(out, u.spec.speaker_id);
    put_f32(out, u.spec.noise_std);
    put_u32(out, static_cast<uint32_t>(u.features.cols()));
    put_matrix(out, u.features);
    put_matrix(out, u.emotion);
  }
  atomic_write_file(path, out);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open dataset: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 13 || std::memcmp(buf.data(), kMagic, 5) != 0) {
    throw std::runtime_error("bad dataset magic: " + path);
  }
  Reader rd{buf, 5, path};
  uint64_t hlen = rd.u64();
  rd.need(hlen);
  Dataset ds;
  try {
    ds.header = nlohmann::json::parse(buf.substr(rd.pos, hlen));
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("unparseable dataset header: ") + e.what());
  }
  rd.pos += hlen;
  if (ds.header.value("version", 0) != kVersion) {
    throw std::runtime_error("unsupported dataset version: " + path);
  }

  const int F = ds.F();
  const size_t count = ds.header.at("count").get<size_t>();
  ds.utterances.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    SynthUtterance u;
    uint32_t ntok = rd.u32();
    u.spec.tokens.resize(ntok);
    for (uint32_t j = 0; j < ntok; ++j) u.spec.tokens[j] = static_cast<int>(rd.u32());
    uint32_t nseg = rd.u32();
    u.spec.segments.resize(nseg);
    for (uint32_t j = 0; j < nseg; ++j) {
      u.spec.segments[j].length_frames = static_cast<int>(rd.u32());
      u.spec.segments[j].arousal = rd.f32();
      u.spec.segments[j].valence = rd.f32();
    }
    u.spec.speaker_id = rd.u32();
    u.spec.noise_std = rd.f32();
    uint32_t T = rd.u32();
    u.features = get_matrix(rd, F, T);
    u.emotion = get_matrix(rd, 2, T);
    ds.utterances.push_back(std::move(u));
  }
  return ds;
}

}  // namespace flowctl
