#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>

namespace spncf::io {

// Writes via temp file + rename so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path,
                       const std::string& content);

std::string read_file(const std::filesystem::path& path);
nlohmann::json read_json_file(const std::filesystem::path& path);

// Shortest round-trip decimal form for CSV output.
std::string format_double(double v);

// FNV-1a over a canonical JSON dump; stage manifests use it to detect
// config drift.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace spncf::io
