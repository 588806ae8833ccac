#include <cmath>
#include <vector>

#include "circuit_testgen.hpp"
#include "doctest.h"
#include "spncf/circuit.hpp"
#include "spncf/common.hpp"

using namespace spncf;
namespace sc = spncf::circuit;

namespace {

sc::CircuitGraph fresh_graph(std::uint64_t seed) {
  Rng rng(seed);
  return testgen::random_graph(rng);
}

std::vector<double> random_point(Rng& rng, int dim) {
  std::vector<double> z(dim);
  for (auto& v : z) v = 6.0 * rng.uniform() - 3.0;
  return z;
}

}  // namespace

TEST_CASE("random circuits compile and integrate to one") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    auto graph = fresh_graph(seed);
    CAPTURE(seed);
    REQUIRE(graph.nodes.size() <= 20);
    REQUIRE(sc::validate(graph).ok());
    const auto c = sc::Circuit::compile(graph);
    const double mass = c.dimension() <= 3
                            ? testgen::quadrature_normalization(c)
                            : testgen::quadrature_normalization_marginalized(c);
    CHECK(std::abs(mass - 1.0) < 1e-3);
  }
}

TEST_CASE("single-variable marginals match 1-D quadrature") {
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    const auto c = sc::Circuit::compile(fresh_graph(seed));
    Rng rng(seed * 31 + 7);
    for (int var = 0; var < c.dimension(); ++var) {
      for (int rep = 0; rep < 2; ++rep) {
        const auto mc = testgen::marginalization_consistency(c, rng, var);
        CAPTURE(seed);
        CAPTURE(var);
        if (mc.reported < 1e-290) {
          CHECK(mc.numeric < 1e-280);
        } else {
          CHECK(std::abs(mc.numeric / mc.reported - 1.0) < 1e-3);
        }
      }
    }
  }
}

TEST_CASE("class posteriors sum to one at random points") {
  for (std::uint64_t seed = 200; seed < 240; ++seed) {
    const auto c = sc::Circuit::compile(fresh_graph(seed));
    Rng rng(seed + 5);
    for (int rep = 0; rep < 4; ++rep) {
      const auto z = random_point(rng, c.dimension());
      const auto post = c.class_posterior(z);
      double total = 0.0;
      for (const double p : post.probabilities) total += p;
      CAPTURE(seed);
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("analytic gradients track central differences") {
  const double h = 1e-5;
  for (std::uint64_t seed = 300; seed < 330; ++seed) {
    const auto c = sc::Circuit::compile(fresh_graph(seed));
    Rng rng(seed * 13 + 1);
    auto z = random_point(rng, c.dimension());
    CAPTURE(seed);

    const auto gm = c.grad_z(z, sc::GradTarget::log_marginal());
    for (int v = 0; v < c.dimension(); ++v) {
      const double save = z[v];
      z[v] = save + h;
      const double hi = c.log_marginal(z);
      z[v] = save - h;
      const double lo = c.log_marginal(z);
      z[v] = save;
      const double fd = (hi - lo) / (2.0 * h);
      CHECK(std::abs(gm[v] - fd) / std::max(1.0, std::abs(fd)) < 1e-4);
    }

    for (int k = 0; k < c.num_classes(); ++k) {
      const auto gp = c.grad_z(z, sc::GradTarget::log_posterior(k));
      for (int v = 0; v < c.dimension(); ++v) {
        const double save = z[v];
        z[v] = save + h;
        const double hi = testgen::log_posterior(c, z, k);
        z[v] = save - h;
        const double lo = testgen::log_posterior(c, z, k);
        z[v] = save;
        const double fd = (hi - lo) / (2.0 * h);
        CHECK(std::abs(gp[v] - fd) / std::max(1.0, std::abs(fd)) < 1e-4);
      }
    }
  }
}

// Each mutation damages exactly one property; validate must both fail that
// check and name the node that was touched.

TEST_CASE("incomplete sums are caught and named") {
  int caught = 0;
  for (std::uint64_t seed = 400; caught < 50; ++seed) {
    REQUIRE(seed < 4000);  // generator must not starve
    auto graph = fresh_graph(seed);
    const auto c = sc::Circuit::compile(graph);
    Rng rng(seed ^ 0xabc);
    const auto mutated = testgen::mutate_incomplete(graph, c, rng);
    if (!mutated) continue;
    const auto report = sc::validate(graph);
    CAPTURE(seed);
    REQUIRE_FALSE(report.complete.pass);
    const auto& off = report.complete.offenders;
    REQUIRE(std::find(off.begin(), off.end(), *mutated) != off.end());
    ++caught;
  }
}

TEST_CASE("non-decomposable products are caught and named") {
  int caught = 0;
  for (std::uint64_t seed = 500; caught < 50; ++seed) {
    REQUIRE(seed < 5000);
    auto graph = fresh_graph(seed);
    const auto c = sc::Circuit::compile(graph);
    Rng rng(seed ^ 0xdef);
    const auto mutated = testgen::mutate_overlapping(graph, c, rng);
    if (!mutated) continue;
    const auto report = sc::validate(graph);
    CAPTURE(seed);
    REQUIRE_FALSE(report.decomposable.pass);
    const auto& off = report.decomposable.offenders;
    REQUIRE(std::find(off.begin(), off.end(), *mutated) != off.end());
    ++caught;
  }
}

TEST_CASE("cycles are caught and named") {
  int caught = 0;
  for (std::uint64_t seed = 600; caught < 50; ++seed) {
    REQUIRE(seed < 6000);
    auto graph = fresh_graph(seed);
    Rng rng(seed ^ 0x123);
    const auto mutated = testgen::mutate_cycle(graph, rng);
    if (!mutated) continue;
    const auto report = sc::validate(graph);
    CAPTURE(seed);
    REQUIRE_FALSE(report.acyclic.pass);
    const auto& off = report.acyclic.offenders;
    REQUIRE(std::find(off.begin(), off.end(), *mutated) != off.end());
    CHECK_THROWS_AS((void)sc::Circuit::compile(graph), Error);
    ++caught;
  }
}

TEST_CASE("unnormalized or negative weights are caught and named") {
  int caught = 0;
  for (std::uint64_t seed = 700; caught < 50; ++seed) {
    REQUIRE(seed < 7000);
    auto graph = fresh_graph(seed);
    Rng rng(seed ^ 0x456);
    const auto mutated = testgen::mutate_weights(graph, rng);
    if (!mutated) continue;
    const auto report = sc::validate(graph);
    CAPTURE(seed);
    REQUIRE_FALSE(report.weights_normalized.pass);
    const auto& off = report.weights_normalized.offenders;
    REQUIRE(std::find(off.begin(), off.end(), *mutated) != off.end());
    CHECK_THROWS_AS((void)sc::Circuit::compile(graph), Error);
    ++caught;
  }
}
