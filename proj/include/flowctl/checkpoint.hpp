#pragma once

// "FCCP1" checkpoint container, shared by the base network and the control
// branch: 5-byte magic, u64 little-endian header length, JSON header (config
// plus a named-tensor index with shapes and payload offsets), then row-major
// little-endian float32 tensor payloads.

#include "flowctl/ctrlnet.hpp"
#include "flowctl/model.hpp"

#include <nlohmann/json.hpp>

#include <string>

namespace flowctl {

enum class CheckpointErrorKind { bad_magic, bad_version, bad_header, truncated, shape_mismatch, io };

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

// Extra header fields (e.g. training metadata) may be supplied; reserved keys
// are overwritten by the writer.
void save_base_checkpoint(const std::string& path, const BaseParams& params,
                          const nlohmann::json& extra_header = {});
BaseParams load_base_checkpoint(const std::string& path, nlohmann::json* header_out = nullptr);

void save_ctrl_checkpoint(const std::string& path, const CtrlParams& params,
                          const nlohmann::json& extra_header = {});
CtrlParams load_ctrl_checkpoint(const std::string& path, const BaseParams& base,
                                nlohmann::json* header_out = nullptr);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json ctrl_config_to_json(const CtrlConfig& cfg);
CtrlConfig ctrl_config_from_json(const nlohmann::json& j);

// Writes content to path atomically (temp file in the same directory, then
// rename), creating parent directories as needed.
void atomic_write_file(const std::string& path, const std::string& content);

uint64_t hash_base_params(const BaseParams& params);
uint64_t hash_ctrl_params(const CtrlParams& params);

}  // namespace flowctl
