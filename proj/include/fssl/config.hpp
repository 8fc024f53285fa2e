#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fssl/pipeline.hpp"

namespace fssl {

struct ExperimentConfig {
  ExperimentPlan plan;
  std::vector<std::uint64_t> seeds{1};
  std::string out_dir = "out";
};

// Strict parse: unknown keys anywhere in the tree are rejected with their
// full path; missing keys keep their defaults.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical serialization of the effective config (defaults included), and
// the hash recorded in every output file.
std::string config_to_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

// Short source revision compiled into the binary.
std::string build_id();

}  // namespace fssl
