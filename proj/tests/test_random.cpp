#include <cmath>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "sfpe/parallel.hpp"
#include "sfpe/random.hpp"

using namespace sfpe;

// Known-answer vectors published with the Random123 reference implementation.
TEST(Philox, KnownAnswers) {
  using C = Philox4x32::Counter;
  EXPECT_EQ(Philox4x32::block({0, 0, 0, 0}, {0, 0}), (C{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  EXPECT_EQ(Philox4x32::block({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}),
            (C{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
  EXPECT_EQ(Philox4x32::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}),
            (C{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Xoshiro, FirstOutputFromReferenceState) {
  Xoshiro256pp g({1, 2, 3, 4});
  EXPECT_EQ(g(), 41943041u);
}

TEST(PathNoise, SameKeyGivesSameSequence) {
  PathNoise a(11, 3, 42), b(11, 3, 42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.normal(), b.normal());
}

TEST(PathNoise, DifferentPathsStreamsAndSeedsDiffer) {
  std::set<double> first;
  for (std::uint64_t seed : {1u, 2u})
    for (std::uint64_t stream : {0u, 1u})
      for (std::uint64_t path : {0u, 1u, 2u}) first.insert(BrownianDriver{seed, stream}.path(path).normal());
  EXPECT_EQ(first.size(), 12u);
}

TEST(PathNoise, PathDrawsDoNotDependOnEvaluationOrder) {
  const BrownianDriver drv{99, 5};
  std::vector<double> forward(64), backward(64);
  for (std::size_t i = 0; i < 64; ++i) forward[i] = drv.path(i).normal();
  for (std::size_t i = 64; i-- > 0;) backward[i] = drv.path(i).normal();
  EXPECT_EQ(forward, backward);
}

TEST(PathNoise, StandardNormalMoments) {
  PathNoise noise(mix64(2024), 0, 0);
  const int n = 400000;
  double s1 = 0, s2 = 0, s4 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = noise.normal();
    s1 += z;
    s2 += z * z;
    s4 += z * z * z * z;
  }
  EXPECT_NEAR(s1 / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 4.0 * std::sqrt(2.0 / n));
  EXPECT_NEAR(s4 / n, 3.0, 4.0 * std::sqrt(96.0 / n));
}

TEST(PathNoise, UniformIsInUnitInterval) {
  PathNoise noise(5, 0, 0);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = noise.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 100000, 0.5, 4.0 * std::sqrt(1.0 / 12.0 / 100000));
}

TEST(BrownianDriver, SubstreamsAreDistinctAndStable) {
  const BrownianDriver root{7, 0};
  EXPECT_EQ(root.substream(3).stream, root.substream(3).stream);
  std::set<std::uint64_t> streams;
  for (std::uint64_t tag = 0; tag < 1000; ++tag) streams.insert(root.substream(tag).stream);
  EXPECT_EQ(streams.size(), 1000u);
  EXPECT_NE(root.substream(1).substream(2).stream, root.substream(2).substream(1).stream);
}

TEST(Parallel, ResultsIndependentOfThreadCount) {
  auto run = [](std::size_t threads) {
    std::vector<double> out(1000);
    parallel_for(out.size(), threads, [&](std::size_t i) { out[i] = BrownianDriver{3, 1}.path(i).normal(); });
    return out;
  };
  const auto one = run(1);
  EXPECT_EQ(one, run(3));
  EXPECT_EQ(one, run(8));
}

TEST(Parallel, RethrowsWorkerExceptions) {
  EXPECT_THROW(parallel_for(100, 4,
                            [](std::size_t i) {
                              if (i == 57) throw std::runtime_error("boom");
                            }),
               std::runtime_error);
}

TEST(Parallel, ExplicitThreadCountWins) { EXPECT_EQ(resolve_threads(5), 5u); }
