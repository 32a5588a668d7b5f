#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "droptop/replay.hpp"
#include "reservoir_props.hpp"

using namespace droptop;

namespace {
MemoryItem item(int label, std::size_t seen) {
  MemoryItem m;
  m.label = label;
  m.seen_index = seen;
  m.image = {static_cast<float>(seen)};
  return m;
}
}  // namespace

TEST(Update, FirstCapacityItemsAllStored) {
  for (auto policy : {UpdatePolicy::random, UpdatePolicy::reservoir}) {
    ReplayBuffer buf(5, policy);
    Rng rng(1);
    for (std::size_t i = 0; i < 5; ++i) buf.update(item(0, i), rng);
    ASSERT_EQ(buf.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(buf[i].seen_index, i);
  }
}

TEST(Update, ZeroCapacityStaysEmpty) {
  ReplayBuffer buf(0, UpdatePolicy::reservoir);
  Rng rng(1);
  for (std::size_t i = 0; i < 10; ++i) buf.update(item(0, i), rng);
  EXPECT_TRUE(buf.empty());
  EXPECT_EQ(buf.n_seen(), 10u);
  EXPECT_TRUE(buf.retrieve(4, rng).empty());
}

TEST(Update, SizeAndSeenInvariants) {
  ReplayBuffer buf(7, UpdatePolicy::random);
  Rng rng(2);
  for (std::size_t i = 0; i < 100; ++i) {
    buf.update(item(static_cast<int>(i % 3), i), rng);
    EXPECT_LE(buf.size(), buf.capacity());
    EXPECT_GE(buf.n_seen(), buf.size());
  }
}

TEST(Update, ReservoirDrawsOverWholeStream) {
  ReplayBuffer buf(2, UpdatePolicy::reservoir);
  reservoir_props::ScriptedRng rng{{1, 3}, {}, 0};
  for (std::size_t i = 0; i < 4; ++i) buf.update(item(0, i), rng);
  EXPECT_EQ(rng.bounds, (std::vector<std::uint64_t>{3, 4}));
  // Third item draws 1 < 2 and evicts slot 1; fourth draws 3 and is dropped.
  EXPECT_EQ(buf[0].seen_index, 0u);
  EXPECT_EQ(buf[1].seen_index, 2u);
}

TEST(Update, ExhaustiveReservoirInclusion) {
  for (std::size_t cap = 1; cap <= 3; ++cap)
    for (std::size_t n = cap; n <= 6; ++n) {
      const auto p = reservoir_props::exhaustive_inclusion(cap, n);
      for (std::size_t i = 0; i < n; ++i)
        EXPECT_NEAR(p[i], static_cast<double>(cap) / static_cast<double>(n), 1e-12) << cap << " " << n << " " << i;
    }
}

TEST(Update, MonteCarloInclusionBothPolicies) {
  for (auto policy : {UpdatePolicy::reservoir, UpdatePolicy::random}) {
    const auto mc = reservoir_props::inclusion(policy, 20, 400, 4000, 3);
    EXPECT_TRUE(mc.consistent()) << to_string(policy) << " outside 3 sigma: " << mc.outside(3.0);
  }
}

TEST(Retrieve, ClampsAndEmpty) {
  ReplayBuffer buf(10, UpdatePolicy::reservoir);
  Rng rng(4);
  EXPECT_TRUE(buf.retrieve(5, rng).empty());
  for (std::size_t i = 0; i < 3; ++i) buf.update(item(0, i), rng);
  auto idx = buf.retrieve(5, rng);
  std::sort(idx.begin(), idx.end());
  EXPECT_EQ(idx, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Retrieve, NoDuplicatesAndUniform) {
  ReplayBuffer buf(500, UpdatePolicy::reservoir);
  Rng rng(5);
  for (std::size_t i = 0; i < 500; ++i) buf.update(item(0, i), rng);
  reservoir_props::MonteCarlo mc{std::vector<std::size_t>(500, 0), 100000, 32.0 / 500.0};
  for (int t = 0; t < 100000; ++t) {
    const auto idx = buf.retrieve(32, rng);
    ASSERT_EQ(idx.size(), 32u);
    for (auto i : idx) ++mc.counts[i];
    if (t < 100) ASSERT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 32u);
  }
  EXPECT_TRUE(mc.consistent()) << "outside 3 sigma: " << mc.outside(3.0);
}

TEST(ClassSamples, OrderAndPartition) {
  ReplayBuffer buf(10, UpdatePolicy::reservoir);
  Rng rng(6);
  buf.update(item(0, 0), rng);
  buf.update(item(1, 1), rng);
  buf.update(item(0, 2), rng);
  EXPECT_EQ(buf.class_samples(0), (std::vector<std::size_t>{0, 2}));
  EXPECT_TRUE(buf.class_samples(7).empty());
  std::multiset<std::size_t> all;
  for (int c : buf.labels_present())
    for (auto i : buf.class_samples(c)) all.insert(i);
  EXPECT_EQ(all, (std::multiset<std::size_t>{0, 1, 2}));
}

TEST(ClassSamples, SortedBySeenIndexAfterEvictions) {
  ReplayBuffer buf(4, UpdatePolicy::reservoir);
  Rng rng(7);
  for (std::size_t i = 0; i < 50; ++i) buf.update(item(static_cast<int>(i % 2), i), rng);
  const auto idx = buf.class_samples(0);
  for (std::size_t k = 1; k < idx.size(); ++k) EXPECT_LT(buf[idx[k - 1]].seen_index, buf[idx[k]].seen_index);
}

TEST(Buffer, DeterministicPerSeed) {
  auto fill = [](std::uint64_t seed) {
    ReplayBuffer buf(8, UpdatePolicy::random);
    Rng rng(seed, "buffer");
    for (std::size_t i = 0; i < 200; ++i) buf.update(item(0, i), rng);
    std::ostringstream os;
    buf.write_audit_csv(os);
    return os.str();
  };
  EXPECT_EQ(fill(3), fill(3));
  EXPECT_NE(fill(3), fill(4));
  EXPECT_EQ(fill(3).substr(0, fill(3).find('\n')), "slot,label,task_id,seen_index");
}
