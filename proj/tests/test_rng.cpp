#include "augbc/rng.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <set>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"

using namespace augbc;
using namespace augbc::testutil;

namespace {

// Reference splitmix64 written out independently (Steele, Lea, Flood 2014).
std::uint64_t ref_mix(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

std::uint64_t ref_next(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  return ref_mix(state);
}

}  // namespace

TEST_CASE("stream matches the splitmix64 construction it documents") {
  std::uint64_t seed = 42;
  std::uint64_t state = ref_mix(seed ^ 0x6A09E667F3BCC909ULL);
  RngStream rng(seed);
  for (int i = 0; i < 100; ++i) CHECK(rng.next_u64() == ref_next(state));
}

TEST_CASE("same seed replays, different seeds diverge") {
  RngStream a(7), b(7), c(8);
  bool diverged = false;
  for (int i = 0; i < 64; ++i) {
    std::uint64_t va = a.next_u64();
    CHECK(va == b.next_u64());
    if (va != c.next_u64()) diverged = true;
  }
  CHECK(diverged);
}

TEST_CASE("child derivation ignores how much the parent has consumed") {
  RngStream fresh(123);
  RngStream used(123);
  for (int i = 0; i < 17; ++i) used.next_u64();

  RngStream from_fresh = fresh.child(5);
  RngStream from_used = used.child(5);
  for (int i = 0; i < 32; ++i) CHECK(from_fresh.next_u64() == from_used.next_u64());
}

TEST_CASE("distinct child indices and nesting give distinct streams") {
  RngStream root(9);
  std::set<std::uint64_t> firsts;
  for (std::size_t i = 0; i < 100; ++i) firsts.insert(root.child(i).next_u64());
  CHECK(firsts.size() == 100);

  RngStream a = root.child(1).child(2);
  RngStream b = root.child(2).child(1);
  CHECK(a.next_u64() != b.next_u64());
}

TEST_CASE("uniform stays in range with the right first two moments") {
  RngStream rng(1001);
  std::vector<double> xs;
  for (int i = 0; i < 100000; ++i) {
    double x = rng.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    xs.push_back(x);
  }
  CHECK(mean_of(xs) == doctest::Approx(0.5).epsilon(0.01));
  CHECK(variance_of(xs) == doctest::Approx(1.0 / 12.0).epsilon(0.03));

  RngStream rng2(1002);
  for (int i = 0; i < 1000; ++i) {
    double x = rng2.uniform(-2.0, 3.0);
    CHECK(x >= -2.0);
    CHECK(x < 3.0);
  }
}

TEST_CASE("normal matches requested moments and tail mass") {
  RngStream rng(2002);
  std::vector<double> xs;
  int beyond3 = 0;
  for (int i = 0; i < 100000; ++i) {
    double x = rng.normal(1.5, 2.0);
    xs.push_back(x);
    if (std::abs(x - 1.5) > 6.0) ++beyond3;
  }
  CHECK(mean_of(xs) == doctest::Approx(1.5).epsilon(0.02));
  CHECK(std::sqrt(variance_of(xs)) == doctest::Approx(2.0).epsilon(0.02));
  // 3-sigma tail holds about 0.27 percent of the mass.
  CHECK(beyond3 > 100);
  CHECK(beyond3 < 500);
}

TEST_CASE("gamma moments for shapes below and above one") {
  for (double shape : {0.4, 4.0}) {
    RngStream rng(3000 + static_cast<std::uint64_t>(shape * 10));
    std::vector<double> xs;
    for (int i = 0; i < 200000; ++i) {
      double x = rng.gamma(shape);
      CHECK(x >= 0.0);
      xs.push_back(x);
    }
    CHECK(mean_of(xs) == doctest::Approx(shape).epsilon(0.02));
    CHECK(variance_of(xs) == doctest::Approx(shape).epsilon(0.05));
  }
  RngStream rng(1);
  CHECK_THROWS_AS(rng.gamma(0.0), std::invalid_argument);
  CHECK_THROWS_AS(rng.gamma(-1.0), std::invalid_argument);
}

TEST_CASE("beta(0.4, 0.4) draws live in [0,1] with the expected spread") {
  RngStream rng(4004);
  std::vector<double> xs;
  for (int i = 0; i < 200000; ++i) {
    double x = rng.beta(0.4, 0.4);
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
    xs.push_back(x);
  }
  CHECK(mean_of(xs) == doctest::Approx(0.5).epsilon(0.01));
  // var = ab / ((a+b)^2 (a+b+1)) = 0.138888...
  CHECK(variance_of(xs) == doctest::Approx(0.4 * 0.4 / (0.64 * 1.8)).epsilon(0.02));
}

TEST_CASE("below is unbiased across residue classes") {
  RngStream rng(5005);
  std::size_t n = 20, total = 100000;
  std::vector<std::size_t> counts(n, 0);
  for (std::size_t i = 0; i < total; ++i) {
    std::size_t v = rng.below(n);
    REQUIRE(v < n);
    ++counts[v];
  }
  CHECK(chi_square_uniform(counts, total) < chi_square_crit_999(n - 1));

  CHECK(rng.below(1) == 0);
  CHECK_THROWS_AS(rng.below(0), std::invalid_argument);
}

TEST_CASE("sample_indices draws distinct in-range indices uniformly") {
  RngStream rng(6006);
  std::vector<std::size_t> hits(10, 0);
  std::size_t rounds = 30000;
  for (std::size_t r = 0; r < rounds; ++r) {
    auto idx = rng.sample_indices(10, 3);
    REQUIRE(idx.size() == 3);
    std::set<std::size_t> uniq(idx.begin(), idx.end());
    REQUIRE(uniq.size() == 3);
    for (std::size_t i : idx) {
      REQUIRE(i < 10);
      ++hits[i];
    }
  }
  CHECK(chi_square_uniform(hits, rounds * 3) < chi_square_crit_999(9));

  auto all = rng.sample_indices(6, 6);
  std::sort(all.begin(), all.end());
  CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
  CHECK_THROWS_AS(rng.sample_indices(3, 4), std::invalid_argument);
}

TEST_CASE("shuffle permutes in place deterministically") {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  std::vector<int> w = v;

  RngStream a(7007), b(7007), c(7008);
  a.shuffle(v);
  b.shuffle(w);
  CHECK(v == w);

  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> expect(50);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(sorted == expect);

  std::vector<int> u(50);
  std::iota(u.begin(), u.end(), 0);
  c.shuffle(u);
  CHECK(u != v);
}
