#include <gtest/gtest.h>

#include <random>

#include "mmseg/blocks.hpp"
#include "mmseg/gradcheck.hpp"
#include "mmseg/ops.hpp"

using namespace mmseg;

namespace {

// Output projection switched on so the block is not the identity.
MambaBlock live_mamba(Index channels, std::mt19937_64& rng, const std::vector<ScanDirection>& dirs = default_directions()) {
  MambaBlock p = MambaBlock::init(channels, 4, dirs, rng);
  p.out_weight = Tensor::randn({channels, p.hidden()}, rng, 0.3, true);
  p.out_bias = Tensor::randn({channels}, rng, 0.1, true);
  return p;
}

ScalarFn probe(const std::function<Tensor(const Tensor&)>& f, const Tensor& r) {
  return [f, r](const Tensor& v) { return sum(mul(f(v), r)); };
}

}  // namespace

TEST(MambaBlock, PreservesShape) {
  std::mt19937_64 rng(1);
  const MambaBlock p = live_mamba(8, rng);
  EXPECT_EQ(mamba_block(Tensor::randn({8, 4, 4, 4}, rng), p).shape(), (Shape{8, 4, 4, 4}));
}

TEST(MambaBlock, IdentityAtInit) {
  std::mt19937_64 rng(2);
  for (Index c : {1, 4, 8}) {
    const MambaBlock p = MambaBlock::init(c, 8, default_directions(), rng);
    const Tensor x = Tensor::randn({c, 2, 4, 2}, rng, 3.0);
    EXPECT_TRUE((mamba_block(x, p).values() == x.values()).all());
  }
}

TEST(MambaBlock, ChannelMismatchThrows) {
  std::mt19937_64 rng(3);
  const MambaBlock p = MambaBlock::init(4, 4, default_directions(), rng);
  EXPECT_THROW(mamba_block(Tensor::zeros({3, 2, 2, 2}), p), std::invalid_argument);
}

TEST(MambaBlock, GradientCheck) {
  std::mt19937_64 rng(4);
  const MambaBlock p = live_mamba(4, rng);
  const Tensor x = Tensor::uniform({4, 3, 3, 3}, rng, -1, 1);
  const Tensor r = Tensor::randn({4, 3, 3, 3}, rng);
  EXPECT_LT(grad_check(probe([&](const Tensor& v) { return mamba_block(v, p); }, r), x), 1e-4);
}

TEST(MambaBlock, ParametersAreCollectedWithDecayFlags) {
  std::mt19937_64 rng(5);
  const MambaBlock p = MambaBlock::init(4, 4, default_directions(), rng);
  ParameterList list;
  p.collect("m.", list);
  EXPECT_EQ(list.size(), 17u);
  for (const auto& np : list) {
    const bool is_norm = np.name.find("ln.") != std::string::npos;
    EXPECT_EQ(np.decay, !is_norm) << np.name;
    EXPECT_TRUE(np.tensor.requires_grad()) << np.name;
  }
}

TEST(ResBlock, ZeroConvolutionsGiveIdentity) {
  std::mt19937_64 rng(6);
  ResBlock p = ResBlock::init(4, 4, rng);
  p.conv1_weight = Tensor::zeros(p.conv1_weight.shape());
  p.conv2_weight = Tensor::zeros(p.conv2_weight.shape());
  const Tensor x = Tensor::randn({4, 3, 3, 3}, rng);
  EXPECT_TRUE((res_block(x, p).values() == x.values()).all());
}

TEST(ResBlock, ChannelChangeUsesProjectionShortcut) {
  std::mt19937_64 rng(7);
  const ResBlock p = ResBlock::init(4, 8, rng);
  EXPECT_TRUE(p.shortcut_weight.defined());
  EXPECT_EQ(p.shortcut_weight.shape(), (Shape{8, 4, 1, 1, 1}));
  EXPECT_EQ(res_block(Tensor::randn({4, 3, 5, 2}, rng), p).shape(), (Shape{8, 3, 5, 2}));
  EXPECT_FALSE(ResBlock::init(4, 4, rng).shortcut_weight.defined());
}

TEST(ResBlock, GradientCheck) {
  std::mt19937_64 rng(8);
  ResBlock p = ResBlock::init(2, 2, rng);
  p.norm1_bias = Tensor::from({2}, {0.3, -0.2}, true);
  p.norm2_bias = Tensor::from({2}, {0.1, 0.25}, true);
  const Tensor x = Tensor::uniform({2, 3, 3, 3}, rng, -1, 1);
  const Tensor r = Tensor::randn({2, 3, 3, 3}, rng);
  EXPECT_LT(grad_check(probe([&](const Tensor& v) { return res_block(v, p); }, r), x), 1e-4);
}

TEST(Resample, ShapeRules) {
  std::mt19937_64 rng(9);
  EXPECT_EQ(downsample(Tensor::randn({4, 8, 8, 8}, rng), Downsample::init(4, rng)).shape(), (Shape{8, 4, 4, 4}));
  EXPECT_EQ(upsample(Tensor::randn({8, 4, 4, 4}, rng), Upsample::init(8, rng)).shape(), (Shape{4, 8, 8, 8}));
}

TEST(Resample, OddExtentThrows) {
  std::mt19937_64 rng(10);
  EXPECT_THROW(downsample(Tensor::zeros({4, 8, 7, 8}), Downsample::init(4, rng)), std::invalid_argument);
  EXPECT_THROW(Upsample::init(3, rng), std::invalid_argument);
}

TEST(Resample, NearestUpsampleOfConstantIsConstant) {
  const Tensor y = upsample_nearest2(Tensor::full({3, 2, 3, 1}, 1.75));
  EXPECT_EQ(y.shape(), (Shape{3, 4, 6, 2}));
  EXPECT_TRUE((y.values() == 1.75).all());
}

TEST(Resample, NearestUpsampleCopiesEachVoxelToItsOctant) {
  std::mt19937_64 rng(11);
  const Tensor x = Tensor::randn({2, 2, 3, 2}, rng);
  const Tensor y = upsample_nearest2(x);
  for (Index c = 0; c < 2; ++c)
    for (Index z = 0; z < 4; ++z)
      for (Index yy = 0; yy < 6; ++yy)
        for (Index xx = 0; xx < 4; ++xx) EXPECT_EQ(y.at({c, z, yy, xx}), x.at({c, z / 2, yy / 2, xx / 2}));
}

TEST(Blocks, StayFiniteOnBoundedInputs) {
  std::mt19937_64 rng(12);
  const MambaBlock m = live_mamba(2, rng);
  const ResBlock r = ResBlock::init(2, 4, rng);
  const Downsample d = Downsample::init(2, rng);
  const Upsample u = Upsample::init(2, rng);
  for (int trial = 0; trial < 1000; ++trial) {
    const Tensor x = Tensor::uniform({2, 2, 2, 2}, rng, -10.0, 10.0);
    ASSERT_TRUE(mamba_block(x, m).values().allFinite());
    ASSERT_TRUE(res_block(x, r).values().allFinite());
    ASSERT_TRUE(downsample(x, d).values().allFinite());
    ASSERT_TRUE(upsample(x, u).values().allFinite());
  }
}

TEST(Blocks, CompositeGradientCheck) {
  std::mt19937_64 rng(13);
  const MambaBlock m = live_mamba(2, rng);
  const ResBlock r = ResBlock::init(2, 3, rng);
  const Tensor x = Tensor::uniform({2, 2, 3, 2}, rng, -1, 1);
  const Tensor probe_r = Tensor::randn({3, 2, 3, 2}, rng);
  EXPECT_LT(grad_check(probe([&](const Tensor& v) { return res_block(mamba_block(v, m), r); }, probe_r), x), 1e-4);
}
