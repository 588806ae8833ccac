#include "spncf/circuit_json.hpp"

#include <fstream>

#include "spncf/io_util.hpp"

namespace spncf::circuit {

using nlohmann::json;

nlohmann::json to_json(const Circuit& c) {
  const CircuitGraph& g = c.graph();
  json nodes = json::array();
  for (NodeId id = 0; id < g.nodes.size(); ++id) {
    json n;
    n["id"] = id;
    if (const auto* leaf = std::get_if<GaussianLeaf>(&g.nodes[id])) {
      n["kind"] = "leaf";
      n["variable"] = leaf->variable;
      n["mean"] = leaf->mean;
      n["stddev"] = leaf->stddev;
    } else if (const auto* sum = std::get_if<SumNode>(&g.nodes[id])) {
      n["kind"] = "sum";
      n["children"] = sum->children;
      n["weights"] = sum->weights;
    } else {
      n["kind"] = "product";
      n["children"] = std::get<ProductNode>(g.nodes[id]).children;
    }
    nodes.push_back(std::move(n));
  }
  json j;
  j["version"] = 1;
  j["dimension"] = g.dimension;
  j["class_priors"] = g.classed ? c.class_priors() : std::vector<double>{};
  j["nodes"] = std::move(nodes);
  j["root"] = g.root;
  return j;
}

Circuit from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("version", 0) != 1)
    throw IoError("unsupported circuit document (expected version 1)");
  CircuitGraph g;
  g.dimension = j.at("dimension").get<int>();
  g.root = j.at("root").get<NodeId>();

  const auto& nodes = j.at("nodes");
  g.nodes.resize(nodes.size());
  for (const auto& n : nodes) {
    const auto id = n.at("id").get<NodeId>();
    if (id >= g.nodes.size())
      throw IoError("node id " + std::to_string(id) + " out of range");
    const std::string kind = n.at("kind").get<std::string>();
    if (kind == "leaf") {
      g.nodes[id] = GaussianLeaf{n.at("variable").get<int>(),
                                 n.at("mean").get<double>(),
                                 n.at("stddev").get<double>()};
    } else if (kind == "sum") {
      g.nodes[id] = SumNode{n.at("children").get<std::vector<NodeId>>(),
                            n.at("weights").get<std::vector<double>>()};
    } else if (kind == "product") {
      g.nodes[id] = ProductNode{n.at("children").get<std::vector<NodeId>>()};
    } else {
      throw IoError("unknown node kind '" + kind + "'");
    }
  }

  const auto priors = j.at("class_priors").get<std::vector<double>>();
  if (!priors.empty()) {
    const auto* root_sum = std::get_if<SumNode>(&g.nodes[g.root]);
    if (root_sum == nullptr || root_sum->weights != priors)
      throw IoError("class_priors do not match the root sum weights");
    g.classed = true;
  }
  return Circuit::compile(std::move(g));
}

void save_circuit(const Circuit& c, const std::filesystem::path& path) {
  io::write_file_atomic(path, to_json(c).dump(2) + "\n");
}

Circuit load_circuit(const std::filesystem::path& path) {
  return from_json(io::read_json_file(path));
}

}  // namespace spncf::circuit
