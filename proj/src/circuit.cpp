#include "spncf/circuit.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

namespace spncf::circuit {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;  // log(2*pi)

double gaussian_log_pdf(double x, double mean, double stddev) {
  const double t = (x - mean) / stddev;
  return -0.5 * t * t - std::log(stddev) - 0.5 * kLogTwoPi;
}

const std::vector<NodeId>* children_of(const Node& node) {
  if (const auto* s = std::get_if<SumNode>(&node)) return &s->children;
  if (const auto* p = std::get_if<ProductNode>(&node)) return &p->children;
  return nullptr;
}

}  // namespace

int VarSet::count() const {
  int n = 0;
  for (auto w : bits_) n += std::popcount(w);
  return n;
}

std::vector<int> VarSet::to_vector() const {
  std::vector<int> out;
  for (int v = 0; v < dim_; ++v)
    if (contains(v)) out.push_back(v);
  return out;
}

NodeId CircuitGraph::add_leaf(int variable, double mean, double stddev) {
  nodes.emplace_back(GaussianLeaf{variable, mean, stddev});
  return static_cast<NodeId>(nodes.size() - 1);
}

NodeId CircuitGraph::add_sum(std::vector<NodeId> children,
                             std::vector<double> weights) {
  nodes.emplace_back(SumNode{std::move(children), std::move(weights)});
  return static_cast<NodeId>(nodes.size() - 1);
}

NodeId CircuitGraph::add_product(std::vector<NodeId> children) {
  nodes.emplace_back(ProductNode{std::move(children)});
  return static_cast<NodeId>(nodes.size() - 1);
}

std::string ValidationReport::summary() const {
  auto line = [](const char* name, const CheckResult& c) {
    std::ostringstream os;
    os << name << ": " << (c.pass ? "pass" : "FAIL");
    if (!c.offenders.empty()) {
      os << " (nodes";
      for (auto id : c.offenders) os << ' ' << id;
      os << ')';
    }
    os << '\n';
    return os.str();
  };
  return line("acyclic", acyclic) + line("complete", complete) +
         line("decomposable", decomposable) +
         line("weights_normalized", weights_normalized) +
         line("scope_covers_all_variables", scope_covers_all_variables);
}

namespace {

// Throws StructuralError for graphs the semantic checks cannot even inspect.
void check_well_formed(const CircuitGraph& g) {
  const auto n = g.nodes.size();
  if (n == 0) throw StructuralError("circuit has no nodes");
  if (g.root >= n)
    throw StructuralError("root id " + std::to_string(g.root) +
                          " out of range");
  if (g.dimension <= 0) throw StructuralError("circuit dimension must be >= 1");
  for (NodeId id = 0; id < n; ++id) {
    const Node& node = g.nodes[id];
    if (const auto* leaf = std::get_if<GaussianLeaf>(&node)) {
      if (leaf->variable < 0 || leaf->variable >= g.dimension)
        throw StructuralError("leaf node " + std::to_string(id) +
                              " references variable " +
                              std::to_string(leaf->variable) +
                              " outside dimension " +
                              std::to_string(g.dimension));
      if (!std::isfinite(leaf->mean) || !std::isfinite(leaf->stddev) ||
          leaf->stddev < kSigmaFloor)
        throw StructuralError("leaf node " + std::to_string(id) +
                              " has invalid parameters (stddev floor " +
                              std::to_string(kSigmaFloor) + ")");
    } else if (const auto* sum = std::get_if<SumNode>(&node)) {
      if (sum->children.empty())
        throw StructuralError("sum node " + std::to_string(id) +
                              " has no children");
      if (sum->children.size() != sum->weights.size())
        throw StructuralError("sum node " + std::to_string(id) +
                              " has mismatched children/weights");
      for (auto c : sum->children)
        if (c >= n)
          throw StructuralError("sum node " + std::to_string(id) +
                                " references dangling node " +
                                std::to_string(c));
    } else {
      const auto& prod = std::get<ProductNode>(node);
      if (prod.children.empty())
        throw StructuralError("product node " + std::to_string(id) +
                              " has no children");
      for (auto c : prod.children)
        if (c >= n)
          throw StructuralError("product node " + std::to_string(id) +
                                " references dangling node " +
                                std::to_string(c));
    }
  }
  if (g.classed && !std::holds_alternative<SumNode>(g.nodes[g.root]))
    throw StructuralError("class-partitioned circuit requires a sum root");
}

// DFS from root. Returns reachable nodes in children-before-parents order;
// reports the first node found on a cycle.
bool topo_sort(const CircuitGraph& g, std::vector<NodeId>& order,
               NodeId& cycle_node) {
  enum : std::uint8_t { kWhite, kGray, kBlack };
  std::vector<std::uint8_t> color(g.nodes.size(), kWhite);
  order.clear();

  // Explicit stack; frames carry the next child index to visit.
  std::vector<std::pair<NodeId, std::size_t>> stack;
  stack.emplace_back(g.root, 0);
  color[g.root] = kGray;
  while (!stack.empty()) {
    auto& [id, next] = stack.back();
    const auto* kids = children_of(g.nodes[id]);
    if (kids == nullptr || next == kids->size()) {
      color[id] = kBlack;
      order.push_back(id);
      stack.pop_back();
      continue;
    }
    const NodeId child = (*kids)[next++];
    if (color[child] == kGray) {
      cycle_node = child;
      return false;
    }
    if (color[child] == kWhite) {
      color[child] = kGray;
      stack.emplace_back(child, 0);
    }
  }
  return true;
}

}  // namespace

ValidationReport validate(const CircuitGraph& g) {
  check_well_formed(g);
  ValidationReport report;

  // Weight normalization is independent of graph shape.
  for (NodeId id = 0; id < g.nodes.size(); ++id) {
    if (const auto* sum = std::get_if<SumNode>(&g.nodes[id])) {
      double total = 0.0;
      bool nonneg = true;  // zero allowed so a class prior can be exactly 0
      for (double w : sum->weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) nonneg = false;
        total += w;
      }
      if (!nonneg || std::abs(total - 1.0) > 1e-9) {
        report.weights_normalized.pass = false;
        report.weights_normalized.offenders.push_back(id);
      }
    }
  }

  std::vector<NodeId> order;
  NodeId cycle_node = 0;
  if (!topo_sort(g, order, cycle_node)) {
    report.acyclic.pass = false;
    report.acyclic.offenders.push_back(cycle_node);
    return report;  // scope-based checks are undefined on a cyclic graph
  }

  std::vector<VarSet> scopes(g.nodes.size());
  for (NodeId id : order) {
    VarSet scope(g.dimension);
    const Node& node = g.nodes[id];
    if (const auto* leaf = std::get_if<GaussianLeaf>(&node)) {
      scope.add(leaf->variable);
    } else {
      for (NodeId c : *children_of(node)) scope.unite(scopes[c]);
    }
    scopes[id] = std::move(scope);
  }

  for (NodeId id : order) {
    const Node& node = g.nodes[id];
    if (const auto* sum = std::get_if<SumNode>(&node)) {
      for (std::size_t i = 1; i < sum->children.size(); ++i) {
        if (!(scopes[sum->children[i]] == scopes[sum->children[0]])) {
          report.complete.pass = false;
          report.complete.offenders.push_back(id);
          break;
        }
      }
    } else if (const auto* prod = std::get_if<ProductNode>(&node)) {
      VarSet seen(g.dimension);
      for (NodeId c : prod->children) {
        if (seen.intersects(scopes[c])) {
          report.decomposable.pass = false;
          report.decomposable.offenders.push_back(id);
          break;
        }
        seen.unite(scopes[c]);
      }
    }
  }

  if (scopes[g.root].count() != g.dimension) {
    report.scope_covers_all_variables.pass = false;
    report.scope_covers_all_variables.offenders.push_back(g.root);
  }
  return report;
}

Evidence Evidence::assign_all(std::span<const double> z) {
  Evidence e(static_cast<int>(z.size()));
  for (std::size_t i = 0; i < z.size(); ++i) e.values_[i] = z[i];
  return e;
}

Circuit Circuit::compile(CircuitGraph graph) {
  ValidationReport report = validate(graph);
  if (!report.ok())
    throw StructuralError("circuit failed validation:\n" + report.summary());

  Circuit c;
  c.graph_ = std::move(graph);
  NodeId cycle_node = 0;
  topo_sort(c.graph_, c.topo_, cycle_node);

  c.scopes_.assign(c.graph_.nodes.size(), VarSet(c.graph_.dimension));
  for (NodeId id : c.topo_) {
    const Node& node = c.graph_.nodes[id];
    if (const auto* leaf = std::get_if<GaussianLeaf>(&node)) {
      c.scopes_[id].add(leaf->variable);
    } else {
      for (NodeId ch : *children_of(node)) c.scopes_[id].unite(c.scopes_[ch]);
    }
  }
  return c;
}

int Circuit::num_classes() const {
  if (!graph_.classed) return 1;
  return static_cast<int>(std::get<SumNode>(graph_.nodes[graph_.root]).children.size());
}

std::vector<NodeId> Circuit::class_children() const {
  if (!graph_.classed) return {graph_.root};
  return std::get<SumNode>(graph_.nodes[graph_.root]).children;
}

std::vector<double> Circuit::class_priors() const {
  if (!graph_.classed) return {1.0};
  return std::get<SumNode>(graph_.nodes[graph_.root]).weights;
}

const VarSet& Circuit::scope(NodeId node) const {
  if (node >= graph_.nodes.size())
    throw StructuralError("unknown node " + std::to_string(node));
  return scopes_[node];
}

double Circuit::log_density(const Evidence& evidence) const {
  return Evaluator(*this).log_density(evidence);
}

double Circuit::log_marginal(std::span<const double> z) const {
  return Evaluator(*this).log_marginal(z);
}

Posterior Circuit::class_posterior(std::span<const double> z) const {
  return Evaluator(*this).class_posterior(z);
}

std::vector<double> Circuit::grad_z(std::span<const double> z,
                                    GradTarget target) const {
  std::vector<double> grad(dimension(), 0.0);
  Evaluator(*this).grad_z(z, target, grad);
  return grad;
}

int Circuit::argmax_class(std::span<const double> z) const {
  return Evaluator(*this).argmax_class(z);
}

Evaluator::Evaluator(const Circuit& c)
    : c_(&c),
      values_(c.graph_.nodes.size(), 0.0),
      adjoints_(c.graph_.nodes.size(), 0.0) {}

void Evaluator::check_input(std::span<const double> z) const {
  if (static_cast<int>(z.size()) != c_->dimension())
    throw InputError("latent vector length " + std::to_string(z.size()) +
                     " does not match circuit dimension " +
                     std::to_string(c_->dimension()));
  for (double v : z)
    if (!std::isfinite(v)) throw InputError("non-finite latent value");
}

double Evaluator::log_density(const Evidence& evidence) {
  if (evidence.dimension() != c_->dimension())
    throw InputError("evidence length does not match circuit dimension");
  for (int v = 0; v < evidence.dimension(); ++v)
    if (evidence[v] && !std::isfinite(*evidence[v]))
      throw InputError("non-finite assigned value for variable " +
                       std::to_string(v));

  const auto& nodes = c_->graph_.nodes;
  for (NodeId id : c_->topo_) {
    const Node& node = nodes[id];
    if (const auto* leaf = std::get_if<GaussianLeaf>(&node)) {
      const auto& assigned = evidence[leaf->variable];
      values_[id] =
          assigned ? gaussian_log_pdf(*assigned, leaf->mean, leaf->stddev) : 0.0;
    } else if (const auto* sum = std::get_if<SumNode>(&node)) {
      double acc = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < sum->children.size(); ++i)
        acc = log_add_exp(acc, std::log(sum->weights[i]) + values_[sum->children[i]]);
      values_[id] = acc;
    } else {
      const auto& prod = std::get<ProductNode>(node);
      double acc = 0.0;
      for (NodeId ch : prod.children) acc += values_[ch];
      values_[id] = acc;
    }
  }
  return values_[c_->graph_.root];
}

void Evaluator::forward_assigned(std::span<const double> z) {
  const auto& nodes = c_->graph_.nodes;
  for (NodeId id : c_->topo_) {
    const Node& node = nodes[id];
    if (const auto* leaf = std::get_if<GaussianLeaf>(&node)) {
      values_[id] = gaussian_log_pdf(z[leaf->variable], leaf->mean, leaf->stddev);
    } else if (const auto* sum = std::get_if<SumNode>(&node)) {
      double acc = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < sum->children.size(); ++i)
        acc = log_add_exp(acc, std::log(sum->weights[i]) + values_[sum->children[i]]);
      values_[id] = acc;
    } else {
      const auto& prod = std::get<ProductNode>(node);
      double acc = 0.0;
      for (NodeId ch : prod.children) acc += values_[ch];
      values_[id] = acc;
    }
  }
}

double Evaluator::log_marginal(std::span<const double> z) {
  check_input(z);
  forward_assigned(z);
  return values_[c_->graph_.root];
}

std::vector<double> Evaluator::log_joints(std::span<const double> z) {
  forward_assigned(z);
  const auto children = c_->class_children();
  const auto priors = c_->class_priors();
  std::vector<double> joints(children.size());
  for (std::size_t k = 0; k < children.size(); ++k)
    joints[k] = (priors[k] > 0.0 ? std::log(priors[k])
                                 : -std::numeric_limits<double>::infinity()) +
                values_[children[k]];
  return joints;
}

Posterior Evaluator::class_posterior(std::span<const double> z) {
  check_input(z);
  Posterior post;
  post.log_joint = log_joints(z);
  double lse = -std::numeric_limits<double>::infinity();
  for (double j : post.log_joint) lse = log_add_exp(lse, j);
  post.probabilities.resize(post.log_joint.size());
  double total = 0.0;
  for (std::size_t k = 0; k < post.log_joint.size(); ++k) {
    post.probabilities[k] = std::exp(post.log_joint[k] - lse);
    total += post.probabilities[k];
  }
  // Renormalize away the last ulps so the components sum to 1 exactly enough
  // for downstream accumulation.
  for (double& p : post.probabilities) p /= total;
  return post;
}

int Evaluator::argmax_class(std::span<const double> z) {
  const Posterior post = class_posterior(z);
  int best = 0;
  for (std::size_t k = 1; k < post.log_joint.size(); ++k)
    if (post.log_joint[k] > post.log_joint[best]) best = static_cast<int>(k);
  return best;
}

void Evaluator::grad_z(std::span<const double> z, GradTarget target,
                       std::span<double> grad_out) {
  check_input(z);
  if (grad_out.size() != z.size())
    throw InputError("gradient buffer size mismatch");

  const auto& nodes = c_->graph_.nodes;
  forward_assigned(z);
  std::fill(adjoints_.begin(), adjoints_.end(), 0.0);
  std::fill(grad_out.begin(), grad_out.end(), 0.0);

  // Seed adjoints. For the marginal the root carries derivative 1. For a
  // class posterior, log p(k|z) = j_k - logsumexp_j(j_j) differentiates to
  // seeds of (1 - p_k) on class k and -p_j on the others, applied directly
  // to the class sub-roots (the root node itself is skipped).
  bool skip_root = false;
  if (target.kind == GradTarget::Kind::LogMarginal) {
    adjoints_[c_->graph_.root] = 1.0;
  } else {
    const int num_classes = c_->num_classes();
    if (target.class_index < 0 || target.class_index >= num_classes)
      throw InputError("class index " + std::to_string(target.class_index) +
                       " out of range for " + std::to_string(num_classes) +
                       " classes");
    const Posterior post = class_posterior(z);
    const auto children = c_->class_children();
    for (std::size_t k = 0; k < children.size(); ++k) {
      const double seed = (static_cast<int>(k) == target.class_index ? 1.0 : 0.0) -
                          post.probabilities[k];
      adjoints_[children[k]] += seed;
    }
    skip_root = c_->graph_.classed;
  }

  // Reverse topological order: parents before children.
  for (auto it = c_->topo_.rbegin(); it != c_->topo_.rend(); ++it) {
    const NodeId id = *it;
    if (skip_root && id == c_->graph_.root) continue;
    const double a = adjoints_[id];
    if (a == 0.0) continue;
    const Node& node = nodes[id];
    if (const auto* leaf = std::get_if<GaussianLeaf>(&node)) {
      const double score =
          (leaf->mean - z[leaf->variable]) / (leaf->stddev * leaf->stddev);
      grad_out[leaf->variable] += a * score;
    } else if (const auto* sum = std::get_if<SumNode>(&node)) {
      for (std::size_t i = 0; i < sum->children.size(); ++i) {
        const NodeId ch = sum->children[i];
        const double w =
            std::exp(std::log(sum->weights[i]) + values_[ch] - values_[id]);
        adjoints_[ch] += a * w;
      }
    } else {
      for (NodeId ch : std::get<ProductNode>(node).children) adjoints_[ch] += a;
    }
  }
}

}  // namespace spncf::circuit
