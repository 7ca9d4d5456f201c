#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace kvzap;

TEST(PagedKvCache, MatchesFlatReferenceUnderRandomOperations) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) EXPECT_EQ(fixtures::cache_model_failure(seed), "");
}

TEST(PagedKvCache, FullyDeadBlocksReturnToThePool) {
  PagedKvCache<float> c(1, 1, 2, 4);
  const float z[2] = {0, 0};
  for (Position p = 0; p < 8; ++p) c.append(0, 0, p, z, z);
  EXPECT_EQ(c.resident_blocks(0, 0), 2u);
  EXPECT_EQ(c.evict(0, 0, {0, 1, 2}), 3u);
  EXPECT_EQ(c.resident_blocks(0, 0), 2u);
  EXPECT_EQ(c.stats().fragmentation_bytes(), 3 * c.entry_bytes());
  EXPECT_EQ(c.evict(0, 0, {3, 3, 99}), 1u);
  EXPECT_EQ(c.resident_blocks(0, 0), 1u);
  EXPECT_EQ(c.free_blocks(), 1u);
  c.append(0, 0, 8, z, z);
  c.append(0, 0, 9, z, z);
  c.append(0, 0, 10, z, z);
  c.append(0, 0, 11, z, z);
  c.append(0, 0, 12, z, z);
  EXPECT_EQ(c.free_blocks(), 0u);
  EXPECT_EQ(c.pool_blocks(), 3u);
}

TEST(PagedKvCache, ErrorsOnBadInput) {
  PagedKvCache<float> c(1, 2, 2);
  const float z[2] = {0, 0};
  const float one[1] = {0};
  EXPECT_THROW(c.append(0, 2, 0, z, z), Error);
  EXPECT_THROW(c.append(0, 0, 0, one, one), Error);
  EXPECT_THROW(c.stats().removed_fraction(), Error);
  EXPECT_THROW(PagedKvCache<float>(0, 1, 1), Error);
}

TEST(CacheStats, CompressionFactorExamples) {
  EXPECT_DOUBLE_EQ(compression_factor_of(0.0), 1.0);
  EXPECT_DOUBLE_EQ(compression_factor_of(0.5), 2.0);
  EXPECT_DOUBLE_EQ(compression_factor_of(0.75), 4.0);
  EXPECT_TRUE(std::isinf(compression_factor_of(1.0)));
  EXPECT_NEAR(compression_factor_of(0.67), 3.0, 0.05);
  EXPECT_NEAR(compression_factor_of(0.63), 2.7, 0.05);
}

TEST(CacheStats, AggregateIsAppendWeighted) {
  PagedKvCache<float> c(1, 2, 2, 2);
  const float z[2] = {0, 0};
  for (Position p = 0; p < 4; ++p) {
    c.append(0, 0, p, z, z);
    c.append(0, 1, p, z, z);
  }
  c.evict(0, 0, {0, 1, 2, 3});
  const auto s = compression_report(c);
  EXPECT_DOUBLE_EQ(s.removed_fraction(), 0.5);
  EXPECT_DOUBLE_EQ(s.compression_factor(), 2.0);
  EXPECT_EQ(s.to_json()["heads"].size(), 2u);
  c.evict(0, 1, {0, 1, 2, 3});
  EXPECT_TRUE(c.stats().to_json()["compression_factor"].is_null());
}
