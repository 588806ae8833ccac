#include <doctest.h>

#include <cmath>
#include <set>

#include "spncf/common.hpp"

using namespace spncf;

TEST_CASE("rng is deterministic per seed and differs across seeds") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
  }
  bool any_diff = false;
  Rng a2(42);
  for (int i = 0; i < 100; ++i) any_diff |= a2.next_u64() != c.next_u64();
  CHECK(any_diff);
}

TEST_CASE("uniform stays in [0,1) and covers the range") {
  Rng rng(7);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("normal has roughly standard moments") {
  Rng rng(11);
  const int n = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);       // ~6 standard errors
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("index is unbiased enough and in range") {
  Rng rng(3);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) ++counts[rng.index(5)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);
}

TEST_CASE("shuffle permutes deterministically") {
  std::vector<int> v{1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<int> w = v;
  Rng a(9), b(9);
  a.shuffle(v);
  b.shuffle(w);
  CHECK(v == w);
  CHECK(std::set<int>(v.begin(), v.end()).size() == 8);
}

TEST_CASE("zero-seed rng still produces varied output") {
  Rng rng(0);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 100; ++i) seen.insert(rng.next_u64());
  CHECK(seen.size() == 100);
}

TEST_CASE("log_add_exp matches direct computation and handles -inf") {
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(log_add_exp(std::log(2.0), std::log(3.0)) ==
        doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(log_add_exp(-inf, std::log(3.0)) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(log_add_exp(-inf, -inf) == -inf);
  // extreme magnitudes do not overflow
  CHECK(log_add_exp(1000.0, 1000.0) ==
        doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-12));
}
