#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "spncf/common.hpp"

namespace spncf::pipeline {

// Parsed experiment configuration: the JSON document after applying
// key.path=value overrides, plus the resolved output root and global seed.
struct ExperimentConfig {
  nlohmann::json raw;
  std::filesystem::path output_root;
  std::uint64_t seed = 0;
  std::string config_hash;  // FNV-1a of the canonical dump

  const nlohmann::json& section(const std::string& name) const;
};

// Precedence: config file < SPNCF_OUTPUT_ROOT < --set overrides.
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides);
ExperimentConfig config_from_json(nlohmann::json raw,
                                  const std::vector<std::string>& overrides);

inline constexpr const char* kStageNames[] = {
    "gen-data", "train-vae", "export-latents", "learn-spn",
    "eval-clf", "gen-cf",    "eval-cf",        "diffmap"};

// Runs one stage; throws (with the stage named in the message) on failure.
// Stages read only artifacts of earlier stages and write their own outputs
// plus a <stage>_manifest.json recording {stage, config_hash, seed, outputs}.
void run_stage(const std::string& name, const ExperimentConfig& config);

}  // namespace spncf::pipeline
