#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "spncf/common.hpp"

namespace spncf::circuit {

using NodeId = std::uint32_t;

// Leaf standard deviations are floored here to keep densities bounded even
// when a data column is (nearly) constant.
inline constexpr double kSigmaFloor = 1e-3;

struct GaussianLeaf {
  int variable = 0;
  double mean = 0.0;
  double stddev = 1.0;
};

struct SumNode {
  std::vector<NodeId> children;
  std::vector<double> weights;  // positive, sum to 1
};

struct ProductNode {
  std::vector<NodeId> children;
};

using Node = std::variant<GaussianLeaf, SumNode, ProductNode>;

// Set of variable indices; fixed universe [0, dimension).
class VarSet {
 public:
  VarSet() = default;
  explicit VarSet(int dimension)
      : dim_(dimension), bits_((dimension + 63) / 64, 0) {}

  void add(int v) { bits_[v >> 6] |= (1ULL << (v & 63)); }
  bool contains(int v) const { return (bits_[v >> 6] >> (v & 63)) & 1ULL; }
  void unite(const VarSet& o) {
    for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] |= o.bits_[i];
  }
  bool intersects(const VarSet& o) const {
    for (std::size_t i = 0; i < bits_.size(); ++i)
      if (bits_[i] & o.bits_[i]) return true;
    return false;
  }
  bool operator==(const VarSet& o) const { return bits_ == o.bits_; }
  int count() const;
  int dimension() const { return dim_; }
  std::vector<int> to_vector() const;

 private:
  int dim_ = 0;
  std::vector<std::uint64_t> bits_;
};

// Mutable node graph. Tests and the structure learner assemble one of these;
// Circuit::compile is the only way to obtain something evaluable, and it
// refuses graphs whose ValidationReport has any failure.
struct CircuitGraph {
  std::vector<Node> nodes;
  NodeId root = 0;
  int dimension = 0;
  // When true the root is a class partition: its children are the per-class
  // sub-SPNs and its weights are the class priors.
  bool classed = false;

  NodeId add_leaf(int variable, double mean, double stddev);
  NodeId add_sum(std::vector<NodeId> children, std::vector<double> weights);
  NodeId add_product(std::vector<NodeId> children);
};

struct CheckResult {
  bool pass = true;
  std::vector<NodeId> offenders;
};

struct ValidationReport {
  CheckResult acyclic;
  CheckResult complete;
  CheckResult decomposable;
  CheckResult weights_normalized;
  CheckResult scope_covers_all_variables;

  bool ok() const {
    return acyclic.pass && complete.pass && decomposable.pass &&
           weights_normalized.pass && scope_covers_all_variables.pass;
  }
  std::string summary() const;
};

// Structural sanity (dangling children, empty child lists, bad leaf
// parameters) throws StructuralError naming the node; the report covers the
// five semantic checks.
ValidationReport validate(const CircuitGraph& graph);

// Per-variable evidence: an assigned value or marginalized-out.
class Evidence {
 public:
  explicit Evidence(int dimension)
      : values_(dimension, std::nullopt) {}
  static Evidence all_marginalized(int dimension) { return Evidence(dimension); }
  static Evidence assign_all(std::span<const double> z);

  void set(int variable, double value) { values_[variable] = value; }
  void marginalize(int variable) { values_[variable] = std::nullopt; }
  const std::optional<double>& operator[](int v) const { return values_[v]; }
  int dimension() const { return static_cast<int>(values_.size()); }

 private:
  std::vector<std::optional<double>> values_;
};

struct GradTarget {
  enum class Kind { LogMarginal, LogPosterior };
  Kind kind = Kind::LogMarginal;
  int class_index = 0;

  static GradTarget log_marginal() { return {Kind::LogMarginal, 0}; }
  static GradTarget log_posterior(int class_index) {
    return {Kind::LogPosterior, class_index};
  }
};

struct Posterior {
  std::vector<double> probabilities;  // sums to 1
  std::vector<double> log_joint;      // log prior_k + log p(z | k)
};

// Immutable, validated sum-product network over Gaussian leaves. All
// evaluation is in natural-log space and is safe to call concurrently.
class Circuit {
 public:
  static Circuit compile(CircuitGraph graph);

  int dimension() const { return graph_.dimension; }
  std::size_t node_count() const { return graph_.nodes.size(); }
  NodeId root() const { return graph_.root; }
  const CircuitGraph& graph() const { return graph_; }

  // Class partition; an unclassed circuit behaves as a single class with
  // prior 1 whose sub-SPN is the whole circuit.
  int num_classes() const;
  std::vector<NodeId> class_children() const;
  std::vector<double> class_priors() const;

  // Memoized scope lookup, O(1) per query.
  const VarSet& scope(NodeId node) const;

  double log_density(const Evidence& evidence) const;
  double log_marginal(std::span<const double> z) const;
  Posterior class_posterior(std::span<const double> z) const;
  std::vector<double> grad_z(std::span<const double> z, GradTarget target) const;

  // Ties break toward the smaller class index.
  int argmax_class(std::span<const double> z) const;

  // Nodes in children-before-parents order, reachable from the root.
  const std::vector<NodeId>& topo_order() const { return topo_; }

 private:
  Circuit() = default;
  friend class Evaluator;

  CircuitGraph graph_;
  std::vector<NodeId> topo_;
  std::vector<VarSet> scopes_;
};

// Reusable workspace for tight loops (quadrature, counterfactual descent).
// Not thread-safe; one per thread.
class Evaluator {
 public:
  explicit Evaluator(const Circuit& c);

  double log_density(const Evidence& evidence);
  double log_marginal(std::span<const double> z);
  Posterior class_posterior(std::span<const double> z);
  void grad_z(std::span<const double> z, GradTarget target,
              std::span<double> grad_out);
  int argmax_class(std::span<const double> z);

 private:
  void forward_assigned(std::span<const double> z);
  void check_input(std::span<const double> z) const;
  std::vector<double> log_joints(std::span<const double> z);

  const Circuit* c_;
  std::vector<double> values_;
  std::vector<double> adjoints_;
};

}  // namespace spncf::circuit
