#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "rfelut/metrics.hpp"

namespace {

using namespace rfelut;
using namespace rfelut::metrics;

FeatureMap random_image(int h, int w, std::uint64_t seed) {
    FeatureMap f(h, w, 1);
    std::mt19937_64 rng(seed);
    for (double& v : f.data()) v = static_cast<double>(rng() % 256);
    return f;
}

FeatureMap random_mask(int h, int w, double p, std::uint64_t seed) {
    FeatureMap f(h, w, 1);
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution b(p);
    for (double& v : f.data()) v = b(rng) ? 255.0 : 0.0;
    return f;
}

TEST(Psnr, Examples) {
    const auto a = random_image(16, 16, 1);
    EXPECT_EQ(psnr(a, a), 99.0);
    FeatureMap c(16, 16, 1, 100.0), d(16, 16, 1, 116.0);
    EXPECT_NEAR(psnr(c, d), 10 * std::log10(65025.0 / 256.0), 1e-12);
    EXPECT_NEAR(psnr(c, d), 24.0484, 1e-4);
    const auto b = random_image(16, 16, 9);
    EXPECT_EQ(psnr(a, b), psnr(b, a));
    EXPECT_THROW(psnr(a, FeatureMap(16, 15, 1)), ShapeError);
}

TEST(Ssim, Examples) {
    const auto a = random_image(24, 24, 2);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
    // High-contrast fixture: checkerboard of 0/255 blocks.
    FeatureMap chk(32, 32, 1);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) chk.at(x, y) = ((x / 4 + y / 4) % 2) ? 255.0 : 0.0;
    FeatureMap inv = chk;
    for (double& v : inv.data()) v = 255 - v;
    EXPECT_LT(ssim(chk, inv), 0.5);
    const auto b = random_image(24, 24, 3);
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
    EXPECT_THROW(ssim(FeatureMap(10, 20, 1), FeatureMap(10, 20, 1)), ShapeError);
}

TEST(Overlap, Examples) {
    const auto m = random_mask(8, 8, 0.4, 4);
    EXPECT_EQ(dice(m, m), 1.0);
    EXPECT_EQ(iou(m, m), 1.0);

    FeatureMap a(1, 6, 1), b(1, 6, 1);
    for (int x : {0, 1, 2, 3}) a.at(x, 0) = 255;
    for (int x : {2, 3, 4, 5}) b.at(x, 0) = 255;
    EXPECT_DOUBLE_EQ(dice(a, b), 0.5);
    EXPECT_NEAR(iou(a, b), 1.0 / 3.0, 1e-12);
    EXPECT_DOUBLE_EQ(miou({0.5, 1.0}), 0.75);

    const FeatureMap empty(4, 4, 1);
    EXPECT_EQ(dice(empty, empty), 1.0);
    EXPECT_EQ(iou(empty, empty), 1.0);
    EXPECT_THROW(dice(a, FeatureMap(2, 6, 1)), ShapeError);
}

TEST(Overlap, DiceIouIdentityAndRanges) {
    for (std::uint64_t s = 0; s < 200; ++s) {
        const auto p = random_mask(9, 7, 0.1 + 0.004 * static_cast<double>(s), s);
        const auto g = random_mask(9, 7, 0.5, s + 1000);
        const double i = iou(p, g), d = dice(p, g);
        EXPECT_NEAR(d, 2 * i / (1 + i), 1e-12);
        for (double v : {i, d, precision(p, g), sensitivity(p, g), binary_miou(p, g)}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Confusion, PrecisionAndSensitivity) {
    FeatureMap p(1, 4, 1), g(1, 4, 1);
    p.at(0, 0) = p.at(1, 0) = 255;
    g.at(1, 0) = g.at(2, 0) = g.at(3, 0) = 255;
    EXPECT_DOUBLE_EQ(precision(p, g), 0.5);
    EXPECT_DOUBLE_EQ(sensitivity(p, g), 1.0 / 3.0);
    // Threshold sits at half the value range.
    FeatureMap soft(1, 4, 1, 127.0);
    EXPECT_EQ(confusion(soft, g).tp, 0.0);
    soft.data().assign(4, 128.0);
    EXPECT_EQ(confusion(soft, g).tp, 3.0);
}

TEST(Hausdorff, Examples) {
    const std::vector<Point> a{{0, 0}, {1, 2}, {5, 5}};
    EXPECT_EQ(hausdorff(a, a), 0.0);
    EXPECT_DOUBLE_EQ(hausdorff({{0, 0}}, {{3, 4}}), 5.0);
    const std::vector<Point> b{{2, 2}, {7, 1}};
    EXPECT_EQ(hausdorff(a, b), hausdorff(b, a));
    EXPECT_THROW(hausdorff({}, a), EmptySetError);
}

TEST(Hausdorff, AddingPredPointsNeverIncreasesDirectedDistanceToThem) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 50);
    for (int t = 0; t < 100; ++t) {
        std::vector<Point> gt(10), pred(5);
        for (auto& p : gt) p = {u(rng), u(rng)};
        for (auto& p : pred) p = {u(rng), u(rng)};
        const double before = directed_hausdorff(gt, pred);
        pred.push_back({u(rng), u(rng)});
        EXPECT_LE(directed_hausdorff(gt, pred), before);
    }
}

TEST(Hausdorff, BoundaryOfFilledSquare) {
    FeatureMap m(6, 6, 1);
    for (int y = 1; y <= 4; ++y)
        for (int x = 1; x <= 4; ++x) m.at(x, y) = 255;
    EXPECT_EQ(boundary_points(m).size(), 12u);
}

TEST(Mae, Examples) {
    const FeatureMap a(4, 4, 1, 0.3);
    EXPECT_EQ(mae(a, a), 0.0);
    EXPECT_EQ(mae(FeatureMap(4, 4, 1, 1.0), FeatureMap(4, 4, 1, 0.0)), 1.0);
    EXPECT_NEAR(mae(FeatureMap(4, 4, 1, 0.75), FeatureMap(4, 4, 1, 0.5)), 0.25, 1e-15);
}

}  // namespace
