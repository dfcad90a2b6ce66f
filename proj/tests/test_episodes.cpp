#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "support.hpp"

using namespace boostmt;

namespace {

Dataset four_class_dataset() {
  GeneratorConfig g;
  g.dim = 2;
  g.superclasses = 1;
  g.classes_per_superclass = 6;
  g.samples_per_class = 10;
  g.base_classes = 4;
  g.val_classes = 1;
  g.novel_classes = 1;
  g.seed = 1;
  return generate_synthetic(g);
}

}  // namespace

TEST(Rng, DerivedStreamsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(42, "tasks"), derive_seed(42, "tasks"));
  EXPECT_NE(derive_seed(42, "tasks"), derive_seed(42, "batches"));
  EXPECT_NE(derive_seed(42, std::uint64_t{0}), derive_seed(42, std::uint64_t{1}));
  Rng a(derive_seed(1, "x")), b(derive_seed(1, "x"));
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, UniformIndexIsUnbiased) {
  Rng rng(3);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[rng.uniform_index(7)];
  for (int c : counts) EXPECT_NEAR(c / static_cast<double>(n), 1.0 / 7.0, 0.01);
}

TEST(Rng, NormalMoments) {
  Rng rng(5);
  double s = 0.0, ss = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal(2.0, 3.0);
    s += x;
    ss += x * x;
  }
  const double mean = s / n;
  EXPECT_NEAR(mean, 2.0, 0.05);
  EXPECT_NEAR(std::sqrt(ss / n - mean * mean), 3.0, 0.05);
}

TEST(Sampler, ForcedAllClassesAndShape) {
  const Dataset ds = four_class_dataset();
  Rng rng(2);
  const Task t = sample_task(ds, Split::base, {4, 3, 2}, rng);
  EXPECT_EQ(t.class_map, ds.classes(Split::base));
  EXPECT_EQ(t.support_x.rows(), 12u);
  EXPECT_EQ(t.query_x.rows(), 8u);
}

TEST(Sampler, SameStateSameTask) {
  const Dataset ds = four_class_dataset();
  Rng a(11), b(11);
  EXPECT_EQ(sample_task(ds, Split::base, {2, 2, 3}, a), sample_task(ds, Split::base, {2, 2, 3}, b));
}

TEST(Sampler, PairFrequenciesAreUniform) {
  const Dataset ds = four_class_dataset();
  Rng rng(derive_seed(8, "pairs"));
  std::map<std::pair<std::size_t, std::size_t>, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const Task t = sample_task(ds, Split::base, {2, 1, 1}, rng);
    ++counts[{t.class_map[0], t.class_map[1]}];
  }
  EXPECT_EQ(counts.size(), 6u);
  for (const auto& [pair, c] : counts) EXPECT_NEAR(c / static_cast<double>(draws), 1.0 / 6.0, 0.02);
}

TEST(Sampler, RandomizedInvariants) {
  const Dataset ds = generate_synthetic(boostmt::testing::tiny_generator(4));
  Rng rng(99);
  for (int trial = 0; trial < 20000; ++trial) {
    const EpisodeShape shape{2 + rng.uniform_index(5), 1 + rng.uniform_index(5), 1 + rng.uniform_index(10)};
    const Task t = sample_task(ds, Split::base, shape, rng);
    ASSERT_EQ(t.class_map.size(), shape.ways);
    ASSERT_TRUE(std::is_sorted(t.class_map.begin(), t.class_map.end()));
    ASSERT_EQ(std::set<std::size_t>(t.class_map.begin(), t.class_map.end()).size(), shape.ways);
    std::set<std::size_t> support(t.support_ids.begin(), t.support_ids.end());
    ASSERT_EQ(support.size(), shape.ways * shape.shots);
    for (std::size_t i = 0; i < t.query_ids.size(); ++i) {
      ASSERT_FALSE(support.count(t.query_ids[i]));
      ASSERT_EQ(ds.label(t.query_ids[i]), t.class_map[t.query_y[i]]);
      ASSERT_EQ(ds.split_of(ds.label(t.query_ids[i])), Split::base);
    }
    for (std::size_t i = 0; i < t.support_ids.size(); ++i) {
      ASSERT_EQ(ds.label(t.support_ids[i]), t.class_map[t.support_y[i]]);
      ASSERT_EQ(t.support_y[i], i / shape.shots);
    }
  }
}

TEST(Sampler, CapacityErrors) {
  const Dataset ds = four_class_dataset();
  Rng rng(1);
  EXPECT_THROW(sample_task(ds, Split::base, {5, 1, 1}, rng), CapacityError);
  EXPECT_THROW(sample_task(ds, Split::base, {2, 6, 5}, rng), CapacityError);
}

TEST(Batches, EpochIsAPermutationCutInOrder) {
  const Dataset ds = generate_synthetic(boostmt::testing::tiny_generator(4));
  Rng rng(6);
  const auto& base = ds.samples(Split::base);
  const auto batches = epoch_batches(ds, Split::base, 32, rng);
  EXPECT_EQ(batches.size(), batches_per_epoch(base.size(), 32));
  std::vector<std::size_t> all;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    EXPECT_EQ(batches[i].size(), i + 1 < batches.size() ? 32u : base.size() - 32 * (batches.size() - 1));
    all.insert(all.end(), batches[i].begin(), batches[i].end());
  }
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, base);

  Rng whole(6);
  const auto one = epoch_batches(ds, Split::base, base.size(), whole);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].size(), base.size());

  Rng again(6);
  EXPECT_EQ(epoch_batches(ds, Split::base, 32, again), batches);
}

TEST(Batches, LabelsAreSplitPositions) {
  const Dataset ds = generate_synthetic(boostmt::testing::tiny_generator(4));
  Rng rng(6);
  const Batch b = make_batch(ds, epoch_batches(ds, Split::base, 16, rng)[0]);
  for (std::size_t i = 0; i < b.ids.size(); ++i) {
    EXPECT_EQ(ds.classes(Split::base)[b.y[i]], ds.label(b.ids[i]));
  }
}
