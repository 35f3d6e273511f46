#include "flowctl/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

namespace flowctl {

namespace {

constexpr char kMagic[5] = {'F', 'C', 'C', 'P', '1'};
constexpr int kVersion = 1;

void append_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

uint64_t read_u64(const std::string& buf, size_t pos) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  return v;
}

// Row-major float32 serialization regardless of in-memory layout.
void append_tensor(std::string& out, const TensorView<float>& v) {
  Eigen::Map<const Matf> m(v.data, v.rows, v.cols);
  for (long r = 0; r < v.rows; ++r) {
    for (long c = 0; c < v.cols; ++c) {
      float x = m(r, c);
      char bytes[4];
      std::memcpy(bytes, &x, 4);
      out.append(bytes, 4);
    }
  }
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointErrorKind::io, "cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return buf;
}

struct ParsedHeader {
  nlohmann::json header;
  size_t payload_start = 0;
};

ParsedHeader parse_container(const std::string& buf, const std::string& path) {
  if (buf.size() < 13 || std::memcmp(buf.data(), kMagic, 5) != 0) {
    throw CheckpointError(CheckpointErrorKind::bad_magic, "bad checkpoint magic: " + path);
  }
  uint64_t hlen = read_u64(buf, 5);
  if (13 + hlen > buf.size()) {
    throw CheckpointError(CheckpointErrorKind::truncated, "truncated checkpoint header: " + path);
  }
  ParsedHeader out;
  try {
    out.header = nlohmann::json::parse(buf.substr(13, hlen));
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointErrorKind::bad_header,
                          std::string("unparseable checkpoint header: ") + e.what());
  }
  if (!out.header.contains("version") || out.header["version"].get<int>() != kVersion) {
    throw CheckpointError(CheckpointErrorKind::bad_version, "unsupported checkpoint version: " + path);
  }
  out.payload_start = 13 + hlen;
  return out;
}

std::string build_container(const std::string& kind, std::vector<TensorView<float>> views,
                            nlohmann::json header) {
  header["version"] = kVersion;
  header["kind"] = kind;
  nlohmann::json index = nlohmann::json::array();
  uint64_t offset = 0;
  std::string payload;
  for (const auto& v : views) {
    index.push_back({{"name", v.name}, {"rows", v.rows}, {"cols", v.cols}, {"offset", offset}});
    append_tensor(payload, v);
    offset += static_cast<uint64_t>(v.size()) * 4;
  }
  header["tensors"] = index;
  std::string hstr = header.dump();
  std::string out(kMagic, 5);
  append_u64(out, hstr.size());
  out += hstr;
  out += payload;
  return out;
}

void load_tensors(const std::string& buf, const ParsedHeader& ph,
                  std::vector<TensorView<float>> views, const std::string& path) {
  const auto& index = ph.header.at("tensors");
  if (index.size() != views.size()) {
    throw CheckpointError(CheckpointErrorKind::shape_mismatch,
                          "tensor count mismatch in " + path);
  }
  for (size_t i = 0; i < views.size(); ++i) {
    const auto& e = index[i];
    const std::string name = e.at("name").get<std::string>();
    if (name != views[i].name || e.at("rows").get<long>() != views[i].rows ||
        e.at("cols").get<long>() != views[i].cols) {
      throw CheckpointError(CheckpointErrorKind::shape_mismatch,
                            "tensor '" + name + "' does not match expected shape of '" +
                                views[i].name + "'");
    }
    size_t off = ph.payload_start + e.at("offset").get<uint64_t>();
    size_t bytes = static_cast<size_t>(views[i].size()) * 4;
    if (off + bytes > buf.size()) {
      throw CheckpointError(CheckpointErrorKind::truncated,
                            "truncated payload for tensor '" + name + "'");
    }
    Eigen::Map<Matf> m(views[i].data, views[i].rows, views[i].cols);
    const char* src = buf.data() + off;
    for (long r = 0; r < views[i].rows; ++r) {
      for (long c = 0; c < views[i].cols; ++c) {
        float x;
        std::memcpy(&x, src, 4);
        src += 4;
        m(r, c) = x;
      }
    }
  }
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"F", c.F},           {"D", c.D},       {"B", c.B}, {"heads", c.heads},
          {"mlp_ratio", c.mlp_ratio}, {"V", c.V}, {"L", c.L}, {"max_T", c.max_T}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.F = j.at("F").get<int>();
  c.D = j.at("D").get<int>();
  c.B = j.at("B").get<int>();
  c.heads = j.at("heads").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.V = j.at("V").get<int>();
  c.L = j.at("L").get<int>();
  c.max_T = j.at("max_T").get<int>();
  c.validate();
  return c;
}

nlohmann::json ctrl_config_to_json(const CtrlConfig& c) {
  return {{"blocks", c.blocks},
          {"t_emo", c.t_emo},
          {"lambda_default", c.lambda_default},
          {"emo_window", c.emo_window}};
}

CtrlConfig ctrl_config_from_json(const nlohmann::json& j) {
  CtrlConfig c;
  c.blocks = j.at("blocks").get<std::vector<int>>();
  c.t_emo = j.at("t_emo").get<double>();
  c.lambda_default = j.at("lambda_default").get<double>();
  c.emo_window = j.at("emo_window").get<int>();
  return c;
}

void atomic_write_file(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, p);
}

void save_base_checkpoint(const std::string& path, const BaseParams& params,
                          const nlohmann::json& extra_header) {
  nlohmann::json header = extra_header.is_null() ? nlohmann::json::object() : extra_header;
  header["model"] = model_config_to_json(params.cfg);
  auto views = tensor_views(const_cast<BaseParams&>(params));
  atomic_write_file(path, build_container("base", views, header));
}

BaseParams load_base_checkpoint(const std::string& path, nlohmann::json* header_out) {
  std::string buf = read_file(path);
  ParsedHeader ph = parse_container(buf, path);
  if (ph.header.value("kind", "") != "base") {
    throw CheckpointError(CheckpointErrorKind::bad_header, "not a base checkpoint: " + path);
  }
  BaseParams params = init_base(model_config_from_json(ph.header.at("model")), 0);
  load_tensors(buf, ph, tensor_views(params), path);
  if (header_out) *header_out = ph.header;
  return params;
}

void save_ctrl_checkpoint(const std::string& path, const CtrlParams& params,
                          const nlohmann::json& extra_header) {
  nlohmann::json header = extra_header.is_null() ? nlohmann::json::object() : extra_header;
  header["model"] = model_config_to_json(params.model_cfg);
  header["ctrl"] = ctrl_config_to_json(params.cfg);
  auto views = tensor_views(const_cast<CtrlParams&>(params));
  atomic_write_file(path, build_container("ctrl", views, header));
}

CtrlParams load_ctrl_checkpoint(const std::string& path, const BaseParams& base,
                                nlohmann::json* header_out) {
  std::string buf = read_file(path);
  ParsedHeader ph = parse_container(buf, path);
  if (ph.header.value("kind", "") != "ctrl") {
    throw CheckpointError(CheckpointErrorKind::bad_header, "not a ctrl checkpoint: " + path);
  }
  ModelConfig mc = model_config_from_json(ph.header.at("model"));
  if (mc.F != base.cfg.F || mc.D != base.cfg.D || mc.B != base.cfg.B) {
    throw CheckpointError(CheckpointErrorKind::shape_mismatch,
                          "ctrl checkpoint model config does not match the base: " + path);
  }
  CtrlParams params = init_ctrlnet(base, ctrl_config_from_json(ph.header.at("ctrl")), 0);
  load_tensors(buf, ph, tensor_views(params), path);
  if (header_out) *header_out = ph.header;
  return params;
}

uint64_t hash_base_params(const BaseParams& params) {
  return hash_views(tensor_views(const_cast<BaseParams&>(params)));
}

uint64_t hash_ctrl_params(const CtrlParams& params) {
  return hash_views(tensor_views(const_cast<CtrlParams&>(params)));
}

}  // namespace flowctl
