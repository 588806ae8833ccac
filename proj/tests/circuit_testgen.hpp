#pragma once

// Random valid circuits plus independent oracles (trapezoid quadrature,
// finite differences) shared by the property tests and the acceptance suite.
// The oracles only consume the public evaluation API; they never look at the
// implementation's internals.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "spncf/circuit.hpp"
#include "spncf/common.hpp"

namespace testgen {

using spncf::Rng;
namespace sc = spncf::circuit;

struct GenOptions {
  int max_dim = 4;
  int max_nodes = 20;
  int num_classes = 2;  // root sum children when classed
  bool classed = true;
};

// Cheapest completion over a scope: one leaf, or one leaf per variable
// under a product.
inline int min_cost(const std::vector<int>& scope) {
  return scope.size() == 1 ? 1 : static_cast<int>(scope.size()) + 1;
}

// Leaf parameters are kept tame (mu in [-2,2], sigma in [0.5,1.5]) so that
// [-10,10] quadrature windows capture essentially all probability mass.
// budget is an exclusive node allowance for this subtree; the call creates at
// most budget nodes provided budget >= min_cost(scope).
inline sc::NodeId gen_sub(sc::CircuitGraph& g, Rng& rng,
                          const std::vector<int>& scope, int budget,
                          int depth) {
  auto leaf = [&](int var) {
    return g.add_leaf(var, 4.0 * rng.uniform() - 2.0,
                      0.5 + rng.uniform() * 1.0);
  };
  auto factorized = [&]() {
    if (scope.size() == 1) return leaf(scope[0]);
    std::vector<sc::NodeId> leaves;
    for (int v : scope) leaves.push_back(leaf(v));
    return g.add_product(std::move(leaves));
  };

  if (depth >= 4 || budget < 2 * min_cost(scope) + 1) return factorized();

  if (scope.size() == 1) {
    if (rng.uniform() < 0.5) return leaf(scope[0]);
    // small mixture over one variable (costs 3 <= budget here)
    std::vector<sc::NodeId> children{leaf(scope[0]), leaf(scope[0])};
    std::vector<double> weights{0.2 + rng.uniform(), 0.2 + rng.uniform()};
    const double total = weights[0] + weights[1];
    for (auto& w : weights) w /= total;
    return g.add_sum(std::move(children), std::move(weights));
  }

  if (rng.uniform() < 0.5) {
    // product: split the scope into two non-empty halves and split the
    // remaining budget between them
    std::vector<int> shuffled = scope;
    rng.shuffle(shuffled);
    const std::size_t cut = 1 + rng.index(shuffled.size() - 1);
    std::vector<int> left(shuffled.begin(), shuffled.begin() + cut);
    std::vector<int> right(shuffled.begin() + cut, shuffled.end());
    std::sort(left.begin(), left.end());
    std::sort(right.begin(), right.end());
    const int spare = budget - 1 - min_cost(left) - min_cost(right);
    const int left_budget = min_cost(left) + spare / 2;
    const int right_budget = budget - 1 - left_budget;
    const auto a = gen_sub(g, rng, left, left_budget, depth + 1);
    const auto b = gen_sub(g, rng, right, right_budget, depth + 1);
    return g.add_product({a, b});
  }
  // sum over the same scope; each child gets an exclusive half
  std::vector<sc::NodeId> children;
  std::vector<double> weights;
  double total = 0.0;
  for (int i = 0; i < 2; ++i) {
    children.push_back(gen_sub(g, rng, scope, (budget - 1) / 2, depth + 1));
    weights.push_back(0.2 + rng.uniform());
    total += weights.back();
  }
  for (auto& w : weights) w /= total;
  return g.add_sum(std::move(children), std::move(weights));
}

inline sc::CircuitGraph random_graph(Rng& rng, const GenOptions& opt = {}) {
  sc::CircuitGraph g;
  g.dimension = 1 + static_cast<int>(rng.index(opt.max_dim));
  std::vector<int> scope(g.dimension);
  for (int v = 0; v < g.dimension; ++v) scope[v] = v;

  const int budget = opt.max_nodes - 1;
  if (opt.classed) {
    std::vector<sc::NodeId> children;
    std::vector<double> weights;
    double total = 0.0;
    const int per_class = budget / opt.num_classes;
    for (int k = 0; k < opt.num_classes; ++k) {
      children.push_back(gen_sub(g, rng, scope, per_class, 1));
      weights.push_back(0.2 + rng.uniform());
      total += weights.back();
    }
    for (auto& w : weights) w /= total;
    g.root = g.add_sum(std::move(children), std::move(weights));
    g.classed = true;
  } else {
    g.root = gen_sub(g, rng, scope, budget, 0);
  }
  return g;
}

// ---- oracles ---------------------------------------------------------------

inline constexpr double kQuadLo = -10.0;
inline constexpr double kQuadHi = 10.0;

// Trapezoid rule over [lo,hi]; spectrally accurate for Gaussian mixtures
// whose sigma is not tiny.
inline double trapezoid(const std::function<double(double)>& f, double lo,
                        double hi, int points) {
  const double h = (hi - lo) / (points - 1);
  double sum = 0.5 * (f(lo) + f(hi));
  for (int i = 1; i + 1 < points; ++i) sum += f(lo + i * h);
  return sum * h;
}

// Integral of the joint density over the full box (dimension <= 3 grids).
inline double quadrature_mass(const sc::Circuit& c,
                              std::vector<double>& z, int var, int points) {
  if (var == c.dimension()) return std::exp(c.log_marginal(z));
  return trapezoid(
      [&](double t) {
        z[var] = t;
        return quadrature_mass(c, z, var + 1, points);
      },
      kQuadLo, kQuadHi, points);
}

inline double quadrature_normalization(const sc::Circuit& c, int points = 41) {
  if (c.dimension() > 3)
    throw spncf::InputError("full-grid quadrature is for dimension <= 3");
  std::vector<double> z(c.dimension());
  return quadrature_mass(c, z, 0, points);
}

// For 4-D circuits: integrate the implementation's own 3-D marginal; valid
// only in combination with the 1-D marginalization-consistency oracle below.
inline double quadrature_normalization_marginalized(const sc::Circuit& c,
                                                    int points = 41) {
  sc::Evidence e(c.dimension());
  std::vector<int> kept;
  for (int v = 0; v < std::min(c.dimension(), 3); ++v) kept.push_back(v);
  std::function<double(std::size_t)> rec = [&](std::size_t i) -> double {
    if (i == kept.size()) return std::exp(c.log_density(e));
    return trapezoid(
        [&](double t) {
          e.set(kept[i], t);
          return rec(i + 1);
        },
        kQuadLo, kQuadHi, points);
  };
  return rec(0);
}

// Numeric integral over one variable vs the implementation's marginal.
struct MarginalCheck {
  double numeric = 0.0;
  double reported = 0.0;
};

inline MarginalCheck marginalization_consistency(const sc::Circuit& c,
                                                 Rng& rng, int var,
                                                 int points = 161) {
  sc::Evidence e(c.dimension());
  for (int v = 0; v < c.dimension(); ++v)
    if (v != var) e.set(v, 6.0 * rng.uniform() - 3.0);
  MarginalCheck out;
  out.reported = std::exp(c.log_density(e));
  out.numeric = trapezoid(
      [&](double t) {
        e.set(var, t);
        return std::exp(c.log_density(e));
      },
      kQuadLo, kQuadHi, points);
  return out;
}

// Numerically stable log posterior used as the finite-difference target.
inline double log_posterior(const sc::Circuit& c, std::span<const double> z,
                            int k) {
  const auto post = c.class_posterior(z);
  double lse = post.log_joint[0];
  for (std::size_t i = 1; i < post.log_joint.size(); ++i)
    lse = spncf::log_add_exp(lse, post.log_joint[i]);
  return post.log_joint[k] - lse;
}

// ---- targeted mutations (each breaks exactly one named property) -----------

// Returns the candidate internal nodes of a kind.
template <typename NodeT>
std::vector<sc::NodeId> nodes_of(const sc::CircuitGraph& g) {
  std::vector<sc::NodeId> out;
  for (sc::NodeId id = 0; id < g.nodes.size(); ++id)
    if (std::holds_alternative<NodeT>(g.nodes[id])) out.push_back(id);
  return out;
}

// Sum child swapped for a fresh single-variable leaf: scopes now differ.
// Requires a sum whose scope has >= 2 variables; returns the mutated node.
inline std::optional<sc::NodeId> mutate_incomplete(sc::CircuitGraph& g,
                                                   const sc::Circuit& compiled,
                                                   Rng& rng) {
  auto sums = nodes_of<sc::SumNode>(g);
  rng.shuffle(sums);
  for (const auto id : sums) {
    if (compiled.scope(id).count() < 2) continue;
    const int var = compiled.scope(id).to_vector()[0];
    // add_leaf may reallocate g.nodes, so take the reference afterwards
    const auto leaf = g.add_leaf(var, 0.0, 1.0);
    auto& sum = std::get<sc::SumNode>(g.nodes[id]);
    sum.children[rng.index(sum.children.size())] = leaf;
    return id;
  }
  return std::nullopt;
}

// Extra product child duplicating a variable already in scope.
inline std::optional<sc::NodeId> mutate_overlapping(sc::CircuitGraph& g,
                                                    const sc::Circuit& compiled,
                                                    Rng& rng) {
  auto products = nodes_of<sc::ProductNode>(g);
  if (products.empty()) return std::nullopt;
  const auto id = products[rng.index(products.size())];
  const int var = compiled.scope(id).to_vector()[0];
  const auto leaf = g.add_leaf(var, 0.5, 1.0);
  std::get<sc::ProductNode>(g.nodes[id]).children.push_back(leaf);
  return id;
}

// Self-loop on an internal node.
inline std::optional<sc::NodeId> mutate_cycle(sc::CircuitGraph& g, Rng& rng) {
  std::vector<sc::NodeId> internal;
  for (sc::NodeId id = 0; id < g.nodes.size(); ++id)
    if (!std::holds_alternative<sc::GaussianLeaf>(g.nodes[id]))
      internal.push_back(id);
  if (internal.empty()) return std::nullopt;
  const auto id = internal[rng.index(internal.size())];
  if (auto* sum = std::get_if<sc::SumNode>(&g.nodes[id]))
    sum->children[rng.index(sum->children.size())] = id;
  else
    std::get<sc::ProductNode>(g.nodes[id])
        .children[rng.index(
            std::get<sc::ProductNode>(g.nodes[id]).children.size())] = id;
  return id;
}

// One weight nudged without rebalancing (or flipped negative).
inline std::optional<sc::NodeId> mutate_weights(sc::CircuitGraph& g, Rng& rng) {
  auto sums = nodes_of<sc::SumNode>(g);
  if (sums.empty()) return std::nullopt;
  const auto id = sums[rng.index(sums.size())];
  auto& sum = std::get<sc::SumNode>(g.nodes[id]);
  const auto slot = rng.index(sum.weights.size());
  if (rng.uniform() < 0.5)
    sum.weights[slot] += 0.25;
  else
    sum.weights[slot] = -sum.weights[slot] - 0.1;
  return id;
}

}  // namespace testgen
