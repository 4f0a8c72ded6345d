#include <gtest/gtest.h>

#include "test_util.hpp"

namespace camix {
namespace {

using testing::random_binary;
using testing::random_labels;
using testing::random_tensor;

TEST(MixImages, ThousandRandomTriplesSelectExactly) {
  SeededRng rng(1, 1);
  for (int k = 0; k < 1000; ++k) {
    const std::size_t C = 1 + rng.below(4), H = 1 + rng.below(12), W = 1 + rng.below(12);
    const auto xs = random_tensor<float>({C, H, W}, rng, 0.0, 0.5);
    const auto xt = random_tensor<float>({C, H, W}, rng, 0.5001, 1.0);  // disjoint ranges
    const ContextualMask m{random_binary(H, W, rng, rng.uniform()), {}};
    const auto xm = mix_images(xs, xt, m);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H * W; ++i) {
        const float v = xm[c * H * W + i];
        const bool from_t = v == xt[c * H * W + i], from_s = v == xs[c * H * W + i];
        ASSERT_NE(from_t, from_s);
        ASSERT_EQ(from_t, m.m[i] == 1);
      }
  }
}

TEST(MixLabelsAndSignificance, ThousandRandomTriples) {
  SeededRng rng(2, 1);
  for (int k = 0; k < 1000; ++k) {
    const std::size_t H = 1 + rng.below(12), W = 1 + rng.below(12);
    auto ys = random_labels(H, W, 4, rng);
    auto yt = random_labels(H, W, 4, rng);
    for (auto& v : yt.cells) v = static_cast<std::uint8_t>(v + 4);  // disjoint id ranges
    const ContextualMask m{random_binary(H, W, rng, rng.uniform()), {}};
    const SignificanceMask ut{random_binary(H, W, rng)};
    const auto ym = mix_labels(ys, yt, m);
    const auto um = mix_significance(ut, m);
    for (std::size_t i = 0; i < H * W; ++i) {
      ASSERT_EQ(ym[i], m.m[i] ? yt[i] : ys[i]);
      ASSERT_EQ(um.u[i], m.m[i] ? ut.u[i] : 1);
      if (!m.m[i]) {
        ASSERT_EQ(um.u[i], 1);
      }
    }
  }
}

TEST(MixImages, EdgeMasks) {
  SeededRng rng(3, 1);
  const auto xs = random_tensor<double>({3, 4, 5}, rng), xt = random_tensor<double>({3, 4, 5}, rng);
  EXPECT_EQ(mix_images(xs, xt, ContextualMask{BinaryGrid(4, 5, 0), {}}), xs);
  EXPECT_EQ(mix_images(xs, xt, ContextualMask{BinaryGrid(4, 5, 1), {}}), xt);
}

TEST(MixLabels, IgnoreIdPassesThroughFromSelectedSide) {
  LabelMap ys(1, 2, kIgnoreId), yt(1, 2, 3);
  BinaryGrid m(1, 2, 0);
  m[1] = 1;
  const auto ym = mix_labels(ys, yt, ContextualMask{m, {}});
  EXPECT_EQ(ym[0], kIgnoreId);
  EXPECT_EQ(ym[1], 3);
}

TEST(Mixup, ShapeMismatchesThrow) {
  const ContextualMask m{BinaryGrid(4, 4, 1), {}};
  EXPECT_THROW(mix_images(Tensor<double>({3, 4, 4}), Tensor<double>({3, 4, 5}), m), ShapeError);
  EXPECT_THROW(mix_images(Tensor<double>({3, 4, 5}), Tensor<double>({3, 4, 5}), m), ShapeError);
  EXPECT_THROW(mix_labels(LabelMap(4, 4), LabelMap(4, 5), m), ShapeError);
  EXPECT_THROW(mix_significance(SignificanceMask{BinaryGrid(3, 4)}, m), ShapeError);
}

}  // namespace
}  // namespace camix
