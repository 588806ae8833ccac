#pragma once

#include <filesystem>
#include <json.hpp>

#include "spncf/circuit.hpp"

namespace spncf::circuit {

// Versioned on-disk format:
//   {version, dimension, class_priors, nodes: [{id, kind, ...}], root}
// class_priors is empty for a circuit without a class partition. Doubles are
// emitted in shortest round-trip form, so save -> load reproduces
// log_density bit-identically.
nlohmann::json to_json(const Circuit& c);
Circuit from_json(const nlohmann::json& j);

void save_circuit(const Circuit& c, const std::filesystem::path& path);
Circuit load_circuit(const std::filesystem::path& path);

}  // namespace spncf::circuit
