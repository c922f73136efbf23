// Central finite-difference checks of every graph op and of a tiny U-Net.

#include <gtest/gtest.h>

#include "gridcast/graph.hpp"
#include "gridcast/unet.hpp"
#include "oracles.hpp"

using namespace gridcast;
using gridcast::testing::random_tensor;

namespace {

using G = Graph<double>;
using NodeId = G::NodeId;
using Op = gridcast::testing::GradOp;
using gridcast::testing::away_from_zero;

constexpr double kOpTolerance = 1e-4;
constexpr int kInstances = 20;

constexpr auto check_op = gridcast::testing::op_gradient_error;

}  // namespace

TEST(GradCheck, Conv2d) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> cdist(1, 3), sdist(3, 6), kdist(0, 1);
  double worst = 0;
  for (int i = 0; i < kInstances; ++i) {
    const Index cin = cdist(rng), cout = cdist(rng), h = sdist(rng), w = sdist(rng);
    const Index k = kdist(rng) ? 3 : 1, pad = k == 3 ? kdist(rng) : 0, stride = 1 + kdist(rng);
    if (h + 2 * pad < k || w + 2 * pad < k) continue;
    Op op = [&](G& g, const std::vector<NodeId>& in) { return g.conv2d(in[0], in[1], in[2], pad, stride); };
    worst = std::max(worst, check_op(op,
                                     {random_tensor({cin, h, w}, rng), random_tensor({cout, cin, k, k}, rng),
                                      random_tensor({cout}, rng)},
                                     rng));
  }
  EXPECT_LE(worst, kOpTolerance);
}

TEST(GradCheck, ConvTranspose2d) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> cdist(1, 3), sdist(1, 4);
  double worst = 0;
  for (int i = 0; i < kInstances; ++i) {
    const Index cin = cdist(rng), cout = cdist(rng), h = sdist(rng), w = sdist(rng);
    Op op = [](G& g, const std::vector<NodeId>& in) { return g.conv_transpose2d(in[0], in[1], in[2]); };
    worst = std::max(worst, check_op(op,
                                     {random_tensor({cin, h, w}, rng), random_tensor({cin, cout, 2, 2}, rng),
                                      random_tensor({cout}, rng)},
                                     rng));
  }
  EXPECT_LE(worst, kOpTolerance);
}

TEST(GradCheck, MaxPool2) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> cdist(1, 3), sdist(1, 3);
  double worst = 0;
  for (int i = 0; i < kInstances; ++i) {
    // Continuous random values: ties (and argmax flips under +-h) have probability ~0.
    Op op = [](G& g, const std::vector<NodeId>& in) { return g.maxpool2(in[0]); };
    worst = std::max(worst, check_op(op, {random_tensor({cdist(rng), 2 * sdist(rng), 2 * sdist(rng)}, rng)}, rng));
  }
  EXPECT_LE(worst, kOpTolerance);
}

TEST(GradCheck, GroupNorm) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> gdist(1, 3), cpg_dist(1, 4), sdist(2, 4);
  double worst = 0;
  for (int i = 0; i < kInstances; ++i) {
    const Index cpg = cpg_dist(rng), c = cpg * gdist(rng);
    Op op = [cpg](G& g, const std::vector<NodeId>& in) { return g.group_norm(in[0], in[1], in[2], cpg); };
    worst = std::max(worst, check_op(op,
                                     {random_tensor({c, sdist(rng), sdist(rng)}, rng), random_tensor({c}, rng, 0.5, 1.5),
                                      random_tensor({c}, rng)},
                                     rng));
  }
  EXPECT_LE(worst, kOpTolerance);
}

TEST(GradCheck, Relu) {
  std::mt19937_64 rng(5);
  double worst = 0;
  for (int i = 0; i < kInstances; ++i) {
    Op op = [](G& g, const std::vector<NodeId>& in) { return g.relu(in[0]); };
    worst = std::max(worst, check_op(op, {away_from_zero(random_tensor({2, 3, 4}, rng))}, rng));
  }
  EXPECT_LE(worst, kOpTolerance);
}

TEST(GradCheck, ConcatPadCrop) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> cdist(1, 3), sdist(2, 5);
  double worst = 0;
  for (int i = 0; i < kInstances; ++i) {
    const Index h = sdist(rng), w = sdist(rng);
    Op cat = [](G& g, const std::vector<NodeId>& in) { return g.concat_channels(in[0], in[1]); };
    worst = std::max(worst, check_op(cat, {random_tensor({cdist(rng), h, w}, rng), random_tensor({cdist(rng), h, w}, rng)}, rng));
    Op pad = [h, w](G& g, const std::vector<NodeId>& in) { return g.pad(in[0], h + 2, w + 1); };
    worst = std::max(worst, check_op(pad, {random_tensor({cdist(rng), h, w}, rng)}, rng));
    Op crop = [h, w](G& g, const std::vector<NodeId>& in) { return g.crop(in[0], h - 1, w - 1); };
    worst = std::max(worst, check_op(crop, {random_tensor({cdist(rng), h, w}, rng)}, rng));
  }
  EXPECT_LE(worst, kOpTolerance);
}

TEST(GradCheck, Mse) {
  std::mt19937_64 rng(7);
  double worst = 0;
  for (int i = 0; i < kInstances; ++i) {
    // check_op already ends in mse; an identity-like op isolates it.
    Op op = [](G& g, const std::vector<NodeId>& in) { return g.pad(in[0], 3, 4); };
    worst = std::max(worst, check_op(op, {random_tensor({2, 3, 4}, rng)}, rng));
  }
  EXPECT_LE(worst, kOpTolerance);
}

TEST(GradCheck, TinyUNetEndToEnd) {
  UNetConfig cfg;
  cfg.depth = 1;
  cfg.base_filters = 8;
  cfg.in_channels = 4;
  cfg.out_channels = 2;
  cfg.seed = 11;
  std::mt19937_64 rng(8);
  const Tensor<double> x = random_tensor({4, 8, 8}, rng);
  const Tensor<double> target = random_tensor({2, 8, 8}, rng);
  EXPECT_LE(gridcast::testing::unet_gradient_error(cfg, x, target), 1e-3);
}
