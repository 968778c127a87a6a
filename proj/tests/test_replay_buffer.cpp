#include <random>

#include <gtest/gtest.h>

#include "htcl/replay_buffer.hpp"

using namespace htcl;

namespace {

ReplaySample item(int id) {
  ReplaySample s;
  s.input = Eigen::VectorXd::Constant(1, id);
  s.label = id % 2;
  s.source_task = id;
  return s;
}

}  // namespace

TEST(Reservoir, FillsUpToCapacity) {
  ReplayBuffer b(5);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 5; ++i) EXPECT_TRUE(b.insert_reservoir(item(i), rng));
  ASSERT_EQ(b.size(), 5u);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(b.entries()[static_cast<std::size_t>(i)].source_task, i);
}

TEST(Reservoir, SizeNeverExceedsCapacity) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> cap(0, 20), len(0, 200);
  for (int trial = 0; trial < 200; ++trial) {
    ReplayBuffer b(static_cast<std::size_t>(cap(rng)));
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
      b.insert_reservoir(item(i), rng);
      ASSERT_LE(b.size(), b.capacity());
    }
    EXPECT_EQ(b.seen_count(), static_cast<std::uint64_t>(n));
    EXPECT_EQ(b.size(), std::min<std::size_t>(b.capacity(), static_cast<std::size_t>(n)));
  }
}

TEST(Reservoir, EarlyItemInclusionProbability) {
  std::mt19937_64 rng(3);
  int kept = 0;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    ReplayBuffer b(50);
    for (int i = 0; i < 5000; ++i) b.insert_reservoir(item(i), rng);
    for (const auto& e : b.entries())
      if (e.source_task == 0) ++kept;
  }
  EXPECT_NEAR(static_cast<double>(kept) / trials, 0.01, 0.002);
}

TEST(Reservoir, SingleSlotCoinFlip) {
  std::mt19937_64 rng(4);
  int second = 0;
  const int trials = 20000;
  for (int t = 0; t < trials; ++t) {
    ReplayBuffer b(1);
    b.insert_reservoir(item(0), rng);
    b.insert_reservoir(item(1), rng);
    if (b.entries()[0].source_task == 1) ++second;
  }
  EXPECT_NEAR(static_cast<double>(second) / trials, 0.5, 0.02);
}

TEST(Reservoir, UniformInclusionAcrossStream) {
  // Every stream position should be retained with probability capacity / N.
  std::mt19937_64 rng(5);
  const int n = 40, cap = 8, trials = 20000;
  std::vector<int> counts(n, 0);
  for (int t = 0; t < trials; ++t) {
    ReplayBuffer b(cap);
    for (int i = 0; i < n; ++i) b.insert_reservoir(item(i), rng);
    for (const auto& e : b.entries()) ++counts[static_cast<std::size_t>(e.source_task)];
  }
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / trials, 0.2, 0.02);
}

TEST(Reservoir, ZeroCapacityStoresNothing) {
  ReplayBuffer b(0);
  std::mt19937_64 rng(6);
  EXPECT_FALSE(b.insert_reservoir(item(1), rng));
  EXPECT_TRUE(b.empty());
  EXPECT_THROW(b.sample_indices(1, rng), std::logic_error);
}

TEST(Buffer, BatchConversionKeepsTargets) {
  ReplayBuffer b(3);
  std::mt19937_64 rng(7);
  for (int i = 0; i < 3; ++i) b.insert_reservoir(item(i), rng);
  ModelSpec spec{{1, 2, 2}};
  const Batch all = b.to_batch(spec);
  ASSERT_EQ(all.size(), 3);
  EXPECT_EQ(all.inputs(2, 0), 2.0);
  EXPECT_EQ(all.labels, (std::vector<int>{0, 1, 0}));
  const Batch some = b.gather({2, 2, 0}, spec);
  EXPECT_EQ(some.labels, (std::vector<int>{0, 0, 0}));
  EXPECT_EQ(some.inputs(1, 0), 2.0);

  ModelSpec reg{{1, 2, 1}, Activation::tanh, TaskKind::regression};
  ReplayBuffer r(1);
  ReplaySample s = item(4);
  s.value = 1.5;
  r.insert_reservoir(s, rng);
  EXPECT_EQ(r.to_batch(reg).values(0), 1.5);
}

TEST(Buffer, SampleIndicesInRange) {
  ReplayBuffer b(4);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 3; ++i) b.insert_reservoir(item(i), rng);
  for (auto i : b.sample_indices(500, rng)) EXPECT_LT(i, 3u);
}
