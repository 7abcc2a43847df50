#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "pgvae/injection.hpp"
#include "test_support.hpp"

using namespace pgvae;
using testing::Gen;

namespace {

std::vector<PatchPair> pool_of(int n, int ps = 4) {
  Gen g(100);
  std::vector<PatchPair> pool;
  for (int i = 0; i < n; ++i) pool.push_back(g.patch(ps, i));
  return pool;
}

// Marks its output so tests can tell synthetic members apart by content too.
PatchPair fake_synthetic(const PatchPair& src, std::uint64_t seed) {
  PatchPair p = src;
  p.image[0] = static_cast<float>(seed % 1000) / 1000.0f;
  return p;
}

int count(const std::vector<PatchPair>& b, Provenance p) {
  return static_cast<int>(std::count_if(b.begin(), b.end(), [&](const PatchPair& x) { return x.provenance == p; }));
}

}  // namespace

TEST_CASE("plan counts for the documented examples") {
  CHECK(plan_batch(8, 0.75) == MixPlan{8, 0.75, 6, 2});
  CHECK(plan_batch(8, 0.0) == MixPlan{8, 0.0, 0, 8});
  CHECK(plan_batch(8, 1.0) == MixPlan{8, 1.0, 8, 0});
  CHECK(plan_batch(10, 0.25).n_synth == 3);  // 2.5 rounds half up
  CHECK(plan_batch(1, 0.5).n_synth == 1);
  CHECK_THROWS_AS(plan_batch(0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(plan_batch(8, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(plan_batch(8, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(plan_batch(8, NAN), std::invalid_argument);
}

TEST_CASE("plan counts over the full grid") {
  for (int b = 1; b <= 64; ++b)
    for (double r : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const auto p = plan_batch(b, r);
      REQUIRE(p.n_synth + p.n_real == b);
      REQUIRE(p.n_synth == static_cast<int>(std::floor(r * b + 0.5)));
      REQUIRE(std::abs(p.n_synth - r * b) <= 0.5);
    }
}

TEST_CASE("extreme ratios give single-provenance batches") {
  const auto pool = pool_of(12);
  int calls = 0;
  const SyntheticGenerator counted = [&](const PatchPair& s, std::uint64_t seed) {
    ++calls;
    return fake_synthetic(s, seed);
  };
  const auto real = mix_batch(pool, counted, plan_batch(8, 0.0), 5);
  CHECK(calls == 0);
  CHECK(count(real, Provenance::Real) == 8);
  const auto synth = mix_batch(pool, counted, plan_batch(8, 1.0), 5);
  CHECK(calls == 8);
  CHECK(count(synth, Provenance::Synthetic) == 8);
  // r = 0 needs no generator at all.
  CHECK(mix_batch(pool, SyntheticGenerator{}, plan_batch(4, 0.0), 1).size() == 4u);
  CHECK_THROWS_AS(mix_batch(pool, SyntheticGenerator{}, plan_batch(4, 0.5), 1), std::invalid_argument);
  CHECK_THROWS_AS(mix_batch(pool_of(3), counted, plan_batch(8, 0.0), 1), std::invalid_argument);
}

TEST_CASE("mixing is deterministic per seed") {
  const auto pool = pool_of(20);
  const auto plan = plan_batch(8, 0.5);
  const auto a = mix_batch(pool, fake_synthetic, plan, 77);
  CHECK(a == mix_batch(pool, fake_synthetic, plan, 77));
  CHECK(a != mix_batch(pool, fake_synthetic, plan, 78));
}

TEST_CASE("fuzzed batches have planned provenance counts and distinct real members") {
  Gen g(1);
  for (int k = 0; k < 200; ++k) {
    const int n = g.integer(1, 30);
    const auto pool = pool_of(n);
    const int b = g.integer(1, n);
    const double r = g.uniform(0.0, 1.0);
    const auto plan = plan_batch(b, r);
    const auto batch = mix_batch(pool, fake_synthetic, plan, g.engine()());
    REQUIRE(static_cast<int>(batch.size()) == b);
    REQUIRE(count(batch, Provenance::Synthetic) == plan.n_synth);
    REQUIRE(count(batch, Provenance::Real) == plan.n_real);
    std::vector<int> ids;
    for (const auto& p : batch)
      if (p.provenance == Provenance::Real) ids.push_back(p.source.volume_id);
    std::sort(ids.begin(), ids.end());
    REQUIRE(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
  }
}

TEST_CASE("real members for a lower ratio are a subset of those for a higher real count") {
  const auto pool = pool_of(16);
  auto real_ids = [&](double r) {
    std::vector<int> ids;
    for (const auto& p : mix_batch(pool, fake_synthetic, plan_batch(8, r), 9))
      if (p.provenance == Provenance::Real) ids.push_back(p.source.volume_id);
    std::sort(ids.begin(), ids.end());
    return ids;
  };
  const auto all = real_ids(0.0), some = real_ids(0.75);
  CHECK(all.size() == 8u);
  CHECK(some.size() == 2u);
  CHECK(std::includes(all.begin(), all.end(), some.begin(), some.end()));
}
