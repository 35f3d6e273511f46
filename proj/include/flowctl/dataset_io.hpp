#pragma once

// "FCDS1" dataset container: 5-byte magic, u64 little-endian header length,
// JSON header (domain configuration, seeds, record count), then per-utterance
// records: spec fields followed by the row-major little-endian float32
// feature matrix and ground-truth emotion track.

#include "flowctl/synthdata.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace flowctl {

struct Dataset {
  nlohmann::json header;
  std::vector<SynthUtterance> utterances;

  int F() const { return header.at("F").get<int>(); }
  int vocab() const { return header.at("V").get<int>(); }
  int frames_per_token() const { return header.at("L").get<int>(); }
  uint64_t codebook_seed() const { return header.at("codebook_seed").get<uint64_t>(); }
  uint64_t speaker_table_seed() const { return header.at("speaker_table_seed").get<uint64_t>(); }

  Codebook codebook() const { return make_codebook(F() / 2, vocab(), codebook_seed()); }
};

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace flowctl
