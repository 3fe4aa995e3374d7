#include <gtest/gtest.h>

#include <random>
#include <set>

#include "ptk/partition.hpp"
#include "test_support.hpp"

namespace {

using namespace ptk;

TEST(ComputeSplits, FormulaExamples) {
  EXPECT_EQ(compute_splits(51200, 12800, 5), 4u);
  EXPECT_EQ(compute_splits(512, 12800, 5), 1u);
  EXPECT_EQ(compute_splits(1'000'000'000, 512, 5), 5u);
}

TEST(ComputeSplits, RejectsZeroArguments) {
  EXPECT_THROW(compute_splits(10, 0, 5), Error);
  EXPECT_THROW(compute_splits(10, 5, 0), Error);
}

TEST(CellOf, IntervalBoundaries) {
  AxisBounds b{{0, 0, 0}, {1, 1, 1}};
  EXPECT_EQ(cell_of({0.3, 0.3, 0.0}, b, {2, 1, 1}).z, 0u);
  EXPECT_EQ(cell_of({0.3, 0.3, 1.0}, b, {2, 1, 1}).z, 1u);
  EXPECT_EQ(cell_of({0.3, 0.3, 0.5}, b, {2, 1, 1}).z, 1u);
}

TEST(CellOf, ZeroWidthAxisMapsToZero) {
  AxisBounds b{{0, 0, 0.5}, {1, 1, 0.5}};
  EXPECT_EQ(cell_of({0.9, 0.9, 0.5}, b, {3, 3, 3}), (CellIndex{0, 2, 2}));
}

TEST(CellOf, OutOfBoundsBeyondTolerance) {
  AxisBounds b{{0, 0, 0}, {1, 1, 1}};
  EXPECT_NO_THROW(cell_of({1.0 + 5e-10, 0, 0}, b, {1, 1, 2}));
  try {
    cell_of({1.0 + 1e-6, 0, 0}, b, {1, 1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::OutOfBounds);
  }
}

TEST(Partition, SmallCloudIsSingleCell) {
  std::mt19937_64 rng(1);
  auto cloud = ptk::testing::random_cloud(rng, 40);
  auto grid = partition(cloud, 64, 5);
  ASSERT_EQ(grid.cells.size(), 1u);
  EXPECT_EQ(grid.cells.begin()->first, (CellIndex{0, 0, 0}));
  EXPECT_EQ(grid.cells.begin()->second.size(), 40u);
}

TEST(Partition, LatticeRealizesTwoByThreeByThree) {
  const std::size_t m = 16;
  auto cloud = normalize(ptk::testing::lattice_cloud(m));
  auto grid = partition(cloud, m, 3);
  EXPECT_EQ(grid.plan.splits_z, 2u);
  ASSERT_EQ(grid.cells.size(), 18u);
  std::set<CellIndex> expected;
  for (std::uint32_t z = 0; z < 2; ++z)
    for (std::uint32_t y = 0; y < 3; ++y)
      for (std::uint32_t x = 0; x < 3; ++x) expected.insert({z, y, x});
  for (const auto& [idx, members] : grid.cells) {
    EXPECT_TRUE(expected.contains(idx));
    EXPECT_EQ(members.size(), m);
  }
}

TEST(Partition, DumpFormat) {
  auto cloud = normalize(ptk::testing::lattice_cloud(4));
  auto dump = dump_grid(partition(cloud, 4, 3));
  EXPECT_EQ(dump.substr(0, 16), "0 0 0 4\n0 0 1 4\n");
  EXPECT_EQ(std::count(dump.begin(), dump.end(), '\n'), 18);
}

TEST(PartitionProperty, MatchesBruteForceOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 3000;
    auto cloud = trial % 2 ? ptk::testing::random_cloud(rng, n) : ptk::testing::clustered_cloud(rng, n);
    const std::size_t m = 1 + rng() % 64, k = 1 + rng() % 6;
    auto grid = partition(cloud, m, k);
    auto oracle = ptk::testing::oracle_cells(cloud, m, k);
    std::vector<int> seen(n, 0);
    for (const auto& [idx, members] : grid.cells) {
      ASSERT_FALSE(members.empty());
      ASSERT_TRUE(std::is_sorted(members.begin(), members.end()));
      for (auto i : members) {
        ++seen[i];
        ASSERT_EQ(oracle[i], idx) << "point " << i;
      }
    }
    for (int s : seen) ASSERT_EQ(s, 1);
  }
}

TEST(PartitionProperty, SplitCountsWithinOneAndK) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto cloud = ptk::testing::clustered_cloud(rng, 1 + rng() % 5000);
    const std::size_t k = 1 + rng() % 6;
    auto grid = partition(cloud, 1 + rng() % 32, k);
    const auto& plan = grid.plan;
    ASSERT_EQ(plan.splits_y.size(), plan.splits_z);
    ASSERT_EQ(plan.splits_x.size(), plan.splits_z);
    auto ok = [k](std::size_t s) { return s >= 1 && s <= k; };
    EXPECT_TRUE(ok(plan.splits_z));
    for (std::size_t z = 0; z < plan.splits_z; ++z) {
      EXPECT_TRUE(ok(plan.splits_y[z]));
      ASSERT_EQ(plan.splits_x[z].size(), plan.splits_y[z]);
      for (auto s : plan.splits_x[z]) EXPECT_TRUE(ok(s));
    }
    for (const auto& [idx, members] : grid.cells) {
      ASSERT_LT(idx.z, plan.splits_z);
      ASSERT_LT(idx.y, plan.splits_y[idx.z]);
      ASSERT_LT(idx.x, plan.splits_x[idx.z][idx.y]);
    }
  }
}

TEST(PartitionProperty, ZIndexMonotoneInZ) {
  std::mt19937_64 rng(9);
  AxisBounds b{{0, 0, 0}, {1, 1, 1}};
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t s = 1 + rng() % 7;
    double a = ptk::testing::unit(rng), c = ptk::testing::unit(rng);
    if (a > c) std::swap(a, c);
    EXPECT_LE(cell_of({0.5, 0.5, a}, b, {s, 1, 1}).z, cell_of({0.5, 0.5, c}, b, {s, 1, 1}).z);
  }
}

TEST(PartitionProperty, MembershipIndependentOfInputOrder) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    auto cloud = ptk::testing::clustered_cloud(rng, 500 + rng() % 2000);
    std::vector<std::size_t> perm(cloud.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    PointCloud shuffled = cloud;
    for (std::size_t i = 0; i < perm.size(); ++i) shuffled.points[i] = cloud.points[perm[i]];
    auto g1 = partition(cloud, 16, 4);
    auto g2 = partition(shuffled, 16, 4);
    ASSERT_EQ(g1.cells.size(), g2.cells.size());
    for (const auto& [idx, members] : g2.cells) {
      std::vector<std::size_t> orig;
      for (auto i : members) orig.push_back(perm[i]);
      std::sort(orig.begin(), orig.end());
      ASSERT_EQ(orig, g1.cells.at(idx));
    }
  }
}

TEST(Partition, GlobalCountsFlagUsesWholeCloud) {
  // Two layers: a dense one and a sparse one. Per-parent counts give the
  // sparse layer one row, whole-cloud counts give it k.
  PointCloud c;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) c.points.push_back({{ptk::testing::unit(rng), ptk::testing::unit(rng), 0.1}, {0, 0, 0}});
  for (int i = 0; i < 4; ++i) c.points.push_back({{ptk::testing::unit(rng), ptk::testing::unit(rng), 0.9}, {0, 0, 0}});
  c = normalize(c);
  auto local = partition(c, 4, 3);
  auto global = partition(c, 4, 3, {.global_counts = true});
  ASSERT_EQ(local.plan.splits_z, 3u);
  EXPECT_EQ(local.plan.splits_y.back(), 1u);
  EXPECT_EQ(global.plan.splits_y.back(), 3u);
}

}  // namespace
