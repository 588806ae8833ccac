#include <doctest.h>

#include <cmath>

#include "spncf/circuit.hpp"

using namespace spncf;
using namespace spncf::circuit;

namespace {

// single standard-normal leaf over variable 0
Circuit standard_normal() {
  CircuitGraph g;
  g.dimension = 1;
  g.root = g.add_leaf(0, 0.0, 1.0);
  return Circuit::compile(std::move(g));
}

// equal-weight mixture of N(-1,1) and N(1,1) over one variable
Circuit mirror_mixture(bool classed) {
  CircuitGraph g;
  g.dimension = 1;
  const auto l = g.add_leaf(0, -1.0, 1.0);
  const auto r = g.add_leaf(0, 1.0, 1.0);
  g.root = g.add_sum({l, r}, {0.5, 0.5});
  g.classed = classed;
  return Circuit::compile(std::move(g));
}

}  // namespace

TEST_CASE("standard normal leaf log density") {
  const auto c = standard_normal();
  const double z0 = 0.0;
  CHECK(c.log_marginal(std::span(&z0, 1)) ==
        doctest::Approx(-0.9189385332046727).epsilon(1e-12));
  const double z2 = 2.0;
  CHECK(c.log_marginal(std::span(&z2, 1)) ==
        doctest::Approx(-0.9189385332046727 - 2.0).epsilon(1e-12));
}

TEST_CASE("mixture density at the symmetry point") {
  const auto c = mirror_mixture(false);
  const double z = 0.0;
  // ln(0.5*N(0;-1,1) + 0.5*N(0;1,1)) = ln N(0;1,1)
  CHECK(c.log_marginal(std::span(&z, 1)) ==
        doctest::Approx(-1.4189385332046727).epsilon(1e-12));
}

TEST_CASE("product factorizes and marginalization drops a factor") {
  CircuitGraph g;
  g.dimension = 2;
  const auto a = g.add_leaf(0, 0.0, 1.0);
  const auto b = g.add_leaf(1, 3.0, 2.0);
  g.root = g.add_product({a, b});
  const auto c = Circuit::compile(std::move(g));

  const std::vector<double> z{0.5, 3.0};
  const double joint = c.log_marginal(z);
  const double la = -0.5 * std::log(2 * M_PI) - 0.5 * 0.25;
  const double lb = -0.5 * std::log(2 * M_PI) - std::log(2.0);
  CHECK(joint == doctest::Approx(la + lb).epsilon(1e-12));

  Evidence e(2);
  e.set(0, 0.5);  // variable 1 marginalized out
  CHECK(c.log_density(e) == doctest::Approx(la).epsilon(1e-12));

  // marginalizing everything integrates to 1
  CHECK(c.log_density(Evidence::all_marginalized(2)) ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("class posterior sums to 1 and matches bayes") {
  const auto c = mirror_mixture(true);
  REQUIRE(c.num_classes() == 2);

  const double z0 = 0.0;
  auto post = c.class_posterior(std::span(&z0, 1));
  CHECK(post.probabilities[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(post.probabilities[0] + post.probabilities[1] ==
        doctest::Approx(1.0).epsilon(1e-15));

  const double z1 = 1.0;
  post = c.class_posterior(std::span(&z1, 1));
  // sigma(2z) for the class at +1
  CHECK(post.probabilities[1] ==
        doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));
}

TEST_CASE("zero class prior is tolerated and yields zero posterior") {
  CircuitGraph g;
  g.dimension = 1;
  const auto l = g.add_leaf(0, -1.0, 1.0);
  const auto r = g.add_leaf(0, 1.0, 1.0);
  g.root = g.add_sum({l, r}, {1.0, 0.0});
  g.classed = true;
  const auto c = Circuit::compile(std::move(g));
  const double z = 5.0;
  const auto post = c.class_posterior(std::span(&z, 1));
  CHECK(post.probabilities[0] == doctest::Approx(1.0));
  CHECK(post.probabilities[1] == 0.0);
  CHECK(std::isfinite(c.log_marginal(std::span(&z, 1))));
}

TEST_CASE("argmax breaks ties toward the smaller class") {
  const auto c = mirror_mixture(true);
  const double z = 0.0;
  CHECK(c.argmax_class(std::span(&z, 1)) == 0);
  const double zr = 0.5;
  CHECK(c.argmax_class(std::span(&zr, 1)) == 1);
}

TEST_CASE("log posterior gradient of the mirror circuit at 0 is +1") {
  const auto c = mirror_mixture(true);
  const double z = 0.0;
  const auto grad =
      c.grad_z(std::span(&z, 1), GradTarget::log_posterior(1));
  CHECK(grad[0] == doctest::Approx(1.0).epsilon(1e-12));
  // and the mirror class gets the mirrored gradient
  const auto grad0 =
      c.grad_z(std::span(&z, 1), GradTarget::log_posterior(0));
  CHECK(grad0[0] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("log marginal gradient matches the gaussian score") {
  const auto c = standard_normal();
  const double z = 1.7;
  const auto grad = c.grad_z(std::span(&z, 1), GradTarget::log_marginal());
  CHECK(grad[0] == doctest::Approx(-1.7).epsilon(1e-12));
}

TEST_CASE("gradients match central finite differences") {
  CircuitGraph g;
  g.dimension = 2;
  const auto a0 = g.add_leaf(0, -0.5, 0.8);
  const auto a1 = g.add_leaf(1, 0.3, 1.2);
  const auto b0 = g.add_leaf(0, 1.0, 0.6);
  const auto b1 = g.add_leaf(1, -1.0, 0.9);
  const auto pa = g.add_product({a0, a1});
  const auto pb = g.add_product({b0, b1});
  g.root = g.add_sum({pa, pb}, {0.3, 0.7});
  g.classed = true;
  const auto c = Circuit::compile(std::move(g));

  const double h = 1e-5;
  std::vector<double> z{0.4, -0.2};
  for (const auto target :
       {GradTarget::log_marginal(), GradTarget::log_posterior(0),
        GradTarget::log_posterior(1)}) {
    const auto grad = c.grad_z(z, target);
    for (int v = 0; v < 2; ++v) {
      auto eval = [&](double dv) {
        auto zz = z;
        zz[v] += dv;
        if (target.kind == GradTarget::Kind::LogMarginal)
          return c.log_marginal(zz);
        const auto post = c.class_posterior(zz);
        return std::log(post.probabilities[target.class_index]);
      };
      const double fd = (eval(h) - eval(-h)) / (2 * h);
      CHECK(std::abs(grad[v] - fd) / std::max(1.0, std::abs(fd)) < 1e-7);
    }
  }
}

TEST_CASE("evaluator workspace agrees with the circuit methods") {
  const auto c = mirror_mixture(true);
  Evaluator ev(c);
  for (double z : {-2.0, -0.3, 0.0, 1.1, 4.0}) {
    CHECK(ev.log_marginal(std::span(&z, 1)) ==
          c.log_marginal(std::span(&z, 1)));
    CHECK(ev.argmax_class(std::span(&z, 1)) ==
          c.argmax_class(std::span(&z, 1)));
    double g1 = 0.0, g2 = 0.0;
    ev.grad_z(std::span(&z, 1), GradTarget::log_posterior(1),
              std::span(&g1, 1));
    g2 = c.grad_z(std::span(&z, 1), GradTarget::log_posterior(1))[0];
    CHECK(g1 == g2);
  }
}

TEST_CASE("structural garbage is rejected with the node named") {
  CircuitGraph dangling;
  dangling.dimension = 1;
  dangling.nodes.push_back(SumNode{{5}, {1.0}});
  dangling.root = 0;
  CHECK_THROWS_WITH_AS(validate(dangling),
                       doctest::Contains("dangling"), StructuralError);

  CircuitGraph bad_leaf;
  bad_leaf.dimension = 1;
  bad_leaf.root = bad_leaf.add_leaf(0, 0.0, 1e-9);
  CHECK_THROWS_AS(validate(bad_leaf), StructuralError);

  CircuitGraph bad_var;
  bad_var.dimension = 1;
  bad_var.root = bad_var.add_leaf(3, 0.0, 1.0);
  CHECK_THROWS_AS(validate(bad_var), StructuralError);
}

TEST_CASE("semantic violations produce a failing report, compile refuses") {
  // incomplete sum: children with different scopes
  CircuitGraph g;
  g.dimension = 2;
  const auto a = g.add_leaf(0, 0.0, 1.0);
  const auto b = g.add_leaf(1, 0.0, 1.0);
  g.root = g.add_sum({a, b}, {0.5, 0.5});
  const auto report = validate(g);
  CHECK_FALSE(report.complete.pass);
  CHECK(report.complete.offenders == std::vector<NodeId>{g.root});
  CHECK_THROWS_AS(Circuit::compile(std::move(g)), StructuralError);
}

TEST_CASE("scope must cover all declared variables") {
  CircuitGraph g;
  g.dimension = 3;
  g.root = g.add_leaf(0, 0.0, 1.0);
  const auto report = validate(g);
  CHECK_FALSE(report.scope_covers_all_variables.pass);
}

TEST_CASE("cycles are reported, not followed") {
  CircuitGraph g;
  g.dimension = 1;
  g.nodes.push_back(SumNode{{1}, {1.0}});
  g.nodes.push_back(SumNode{{0}, {1.0}});
  g.root = 0;
  const auto report = validate(g);
  CHECK_FALSE(report.acyclic.pass);
  CHECK_FALSE(report.ok());
}

TEST_CASE("input validation on evaluation") {
  const auto c = standard_normal();
  const std::vector<double> wrong{1.0, 2.0};
  CHECK_THROWS_AS(c.log_marginal(wrong), InputError);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(c.log_marginal(std::span(&nan, 1)), InputError);
  CHECK_THROWS_AS(c.grad_z(std::span(&nan, 1), GradTarget::log_marginal()),
                  InputError);
}

TEST_CASE("unclassed circuit behaves as a single class") {
  const auto c = standard_normal();
  CHECK(c.num_classes() == 1);
  CHECK(c.class_priors() == std::vector<double>{1.0});
  const double z = 0.2;
  const auto post = c.class_posterior(std::span(&z, 1));
  CHECK(post.probabilities == std::vector<double>{1.0});
}
