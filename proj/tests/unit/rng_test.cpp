#include "bpf/rng.hpp"

#include <gtest/gtest.h>

#include <set>

#include "bpf/parallel.hpp"
#include "test_util.hpp"

namespace bpf {
namespace {

TEST(CounterRng, DrawIsAFunctionOfKeyAndCounter) {
  CounterRng a(42), b(42);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a(), b());
  CounterRng c(42, 5);
  CounterRng d(42);
  for (int i = 0; i < 5; ++i) d();
  EXPECT_EQ(c(), d());
}

TEST(CounterRng, DistinctKeysGiveDistinctStreams) {
  StreamFactory f(7);
  auto s1 = f.stream(StreamDomain::particle_epoch, 1, 1);
  auto s2 = f.stream(StreamDomain::particle_epoch, 1, 2);
  auto s3 = f.stream(StreamDomain::particle_epoch, 2, 1);
  EXPECT_NE(s1.key(), s2.key());
  EXPECT_NE(s1.key(), s3.key());
  EXPECT_NE(f.child(0).seed(), f.child(1).seed());
}

TEST(CounterRng, UniformMomentsAndRange) {
  CounterRng rng(123);
  std::vector<double> u(200000);
  for (auto& v : u) {
    v = uniform01(rng);
    ASSERT_GE(v, 0.0);
    ASSERT_LT(v, 1.0);
  }
  EXPECT_NEAR(testing::mean(u), 0.5, 5 * std::sqrt(1.0 / 12 / u.size()));
  EXPECT_NEAR(testing::variance(u), 1.0 / 12, 5 * std::sqrt(1.0 / 180 / u.size()));
}

TEST(CounterRng, NormalMoments) {
  CounterRng rng(99);
  std::vector<double> z(200000);
  for (auto& v : z) v = standard_normal(rng);
  EXPECT_NEAR(testing::mean(z), 0.0, 5 / std::sqrt(z.size()));
  EXPECT_NEAR(testing::variance(z), 1.0, 5 * std::sqrt(2.0 / z.size()));
}

TEST(ParallelFor, ResultIndependentOfThreadCount) {
  auto run = [](std::size_t threads) {
    std::vector<std::uint64_t> out(1000);
    parallel_for(out.size(), [&](std::size_t i) { out[i] = CounterRng(hash_key(5, {i}))(); }, threads);
    return out;
  };
  EXPECT_EQ(run(1), run(4));
}

}  // namespace
}  // namespace bpf
