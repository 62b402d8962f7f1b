#include <algorithm>

#include <gtest/gtest.h>

#include "partsmamba/ops.hpp"
#include "partsmamba/temporal.hpp"

using namespace partsmamba;

namespace {

Tensor matmul_naive(const Tensor& a, const Tensor& b) {
  Tensor out({a.extent(0), b.extent(1)});
  for (std::size_t i = 0; i < a.extent(0); ++i) {
    for (std::size_t j = 0; j < b.extent(1); ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < a.extent(1); ++k) acc += a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  }
  return out;
}

Tensor run_block(const Tensor& x, const TemporalLayer& layer, std::size_t chunk = 3) {
  Tape tape(false);
  return temporal_block(tape, tape.constant(x), layer, chunk).value();
}

struct Fixture {
  ParamStore store;
  TemporalLayer layer;
  Fixture(std::size_t v, std::size_t c, std::size_t n, std::uint64_t seed,
          std::vector<std::size_t> order = {}) {
    Rng rng(seed);
    layer = TemporalLayer::create(store, "t", v, c, n, 3, std::move(order), rng);
  }
};

}  // namespace

TEST(StReorder, TwoSectionsTokenOrder) {
  // x[t, v] = 10t + v with one channel.
  Tensor x({2, 4, 1});
  for (std::size_t t = 0; t < 2; ++t) {
    for (std::size_t v = 0; v < 4; ++v) x.at(t, v, 0) = 10.0 * t + v;
  }
  const Tensor tokens = st_reorder(x, 2);
  EXPECT_EQ(tokens, Tensor({4, 2}, {0, 1, 2, 3, 10, 11, 12, 13}));
}

TEST(StReorder, CustomJointOrder) {
  Tensor x({1, 4, 1}, {0, 1, 2, 3});
  EXPECT_EQ(st_reorder(x, 2, {3, 1, 0, 2}), Tensor({2, 2}, {3, 1, 0, 2}));
}

TEST(StReorder, OneSectionIsFrameFlattening) {
  Rng rng(1);
  const Tensor x = Tensor::uniform({3, 5, 2}, -1, 1, rng);
  EXPECT_EQ(st_reorder(x, 1), x.reshaped({3, 10}));
}

TEST(StReorder, RoundTripsForEveryDivisor) {
  Rng rng(2);
  const Tensor x = Tensor::uniform({4, 12, 3}, -1, 1, rng);
  for (std::size_t n : {1u, 2u, 3u, 4u, 6u, 12u}) {
    EXPECT_TRUE(bit_identical(st_restore(st_reorder(x, n), n, 3), x)) << "n = " << n;
    std::vector<std::size_t> order(12);
    for (std::size_t i = 0; i < 12; ++i) order[i] = (i * 5) % 12;
    EXPECT_TRUE(bit_identical(st_restore(st_reorder(x, n, order), n, 3, order), x));
  }
}

TEST(StReorder, IndicesArePermutation) {
  auto idx = st_reorder_indices(3, 6, 2, 3);
  std::sort(idx.begin(), idx.end());
  for (std::size_t i = 0; i < idx.size(); ++i) ASSERT_EQ(idx[i], i);
}

TEST(StReorder, RejectsNonDivisorSections) {
  EXPECT_THROW(st_reorder_indices(2, 25, 1, 3), ConfigError);
  EXPECT_THROW(st_reorder_indices(2, 4, 1, 0), ConfigError);
  EXPECT_THROW(st_reorder(Tensor({2, 25, 1}), 4), ConfigError);
  Rng rng(3);
  ParamStore ps;
  EXPECT_THROW(TemporalLayer::create(ps, "t", 25, 2, 3, 2, {}, rng), ConfigError);
}

TEST(StReorder, RejectsBadJointOrder) {
  EXPECT_THROW(st_reorder_indices(1, 4, 1, 2, {0, 1, 2}), ConfigError);
  EXPECT_THROW(st_reorder_indices(1, 4, 1, 2, {0, 1, 1, 2}), ConfigError);
}

TEST(TemporalBlock, OneSectionMatchesReference) {
  const std::size_t v = 4, t = 5, c = 2;
  Fixture f(v, c, 1, 4);
  Rng rng(5);
  const Tensor x = Tensor::uniform({v, t, c}, -1, 1, rng);
  Tensor tokens({t, v * c});
  for (std::size_t a = 0; a < v; ++a) {
    for (std::size_t b = 0; b < t; ++b) {
      for (std::size_t k = 0; k < c; ++k) tokens.at(b, a * c + k) = x.at(a, b, k);
    }
  }
  const Tensor inner = matmul_naive(tokens, f.layer.w_in->value);
  const Tensor scanned = selective_scan_seq(inner, f.layer.ssm.values());
  const Tensor back = matmul_naive(scanned, f.layer.w_out->value);
  const Tensor y = run_block(x, f.layer);
  for (std::size_t a = 0; a < v; ++a) {
    for (std::size_t b = 0; b < t; ++b) {
      for (std::size_t k = 0; k < c; ++k) {
        EXPECT_NEAR(y.at(a, b, k), x.at(a, b, k) + back.at(b, a * c + k), 1e-12);
      }
    }
  }
}

TEST(TemporalBlock, InnerWidthIsTwiceChannels) {
  Fixture f(6, 3, 2, 6);
  EXPECT_EQ(f.layer.w_in->value.shape(), (Shape{9, 6}));
  EXPECT_EQ(f.layer.w_out->value.shape(), (Shape{6, 9}));
  EXPECT_EQ(f.layer.ssm.values().channels(), 6u);
}

TEST(TemporalBlock, ZeroInputIsFixedPoint) {
  Fixture f(6, 2, 3, 7);
  EXPECT_EQ(run_block(Tensor({6, 4, 2}), f.layer), Tensor({6, 4, 2}));
}

TEST(TemporalBlock, FrameCausality) {
  Fixture f(6, 2, 2, 8);
  Rng rng(9);
  for (int probe = 0; probe < 10; ++probe) {
    const Tensor x = Tensor::uniform({6, 5, 2}, -1, 1, rng);
    const std::size_t t0 = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
    Tensor x2 = x;
    for (std::size_t j = 0; j < 6; ++j) {
      for (std::size_t t = t0; t < 5; ++t) x2.at(j, t, 0) += 0.5;
    }
    const Tensor y1 = run_block(x, f.layer), y2 = run_block(x2, f.layer);
    for (std::size_t j = 0; j < 6; ++j) {
      for (std::size_t t = 0; t < t0; ++t) {
        for (std::size_t k = 0; k < 2; ++k) ASSERT_EQ(y1.at(j, t, k), y2.at(j, t, k));
      }
    }
    EXPECT_GT(max_abs_diff(y1, y2), 0.0);
  }
}

TEST(TemporalBlock, SubFrameCausality) {
  // Joints 0..2 form the first section of each frame; perturbing a joint in
  // the second section of frame t leaves the first section of frame t alone
  // and reaches the first section of frame t + 1.
  Fixture f(6, 2, 2, 10);
  Rng rng(11);
  const Tensor x = Tensor::uniform({6, 3, 2}, -1, 1, rng);
  Tensor x2 = x;
  x2.at(4, 1, 1) += 0.5;
  const Tensor y1 = run_block(x, f.layer), y2 = run_block(x2, f.layer);
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(y1.at(j, 1, k), y2.at(j, 1, k));
  }
  EXPECT_NE(y1.at(0, 2, 0), y2.at(0, 2, 0));
}

TEST(TemporalBlock, GroupedOrderFollowsSections) {
  // With sections drawn from {5, 0, 3} then {1, 4, 2}, joint 1 comes after
  // joint 3 within the same frame.
  Fixture f(6, 2, 2, 12, {5, 0, 3, 1, 4, 2});
  Rng rng(13);
  const Tensor x = Tensor::uniform({6, 2, 2}, -1, 1, rng);
  Tensor x2 = x;
  x2.at(1, 0, 0) += 0.5;
  const Tensor y1 = run_block(x, f.layer), y2 = run_block(x2, f.layer);
  for (std::size_t j : {5u, 0u, 3u}) EXPECT_EQ(y1.at(j, 0, 0), y2.at(j, 0, 0));
  EXPECT_NE(y1.at(2, 0, 0), y2.at(2, 0, 0));
}

TEST(TemporalBlock, ChunkSizeDoesNotChangeResult) {
  Fixture f(4, 2, 2, 14);
  Rng rng(15);
  const Tensor x = Tensor::uniform({4, 7, 2}, -1, 1, rng);
  const Tensor ref = run_block(x, f.layer, 1);
  for (std::size_t chunk : {2u, 5u, 14u, 64u}) {
    EXPECT_LE(max_rel_error(run_block(x, f.layer, chunk), ref, 1e-8), 1e-10);
  }
}

TEST(TemporalBlock, RejectsWrongRank) {
  Fixture f(4, 2, 2, 16);
  EXPECT_THROW(run_block(Tensor({4, 2}), f.layer), ShapeError);
}
