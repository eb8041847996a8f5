#include <random>

#include <gtest/gtest.h>

#include "rfelut/lutize.hpp"

namespace {

using namespace rfelut;
using namespace rfelut::lutize;
using refnet::TinyNet;

TinyNet net_for(const idc::SamplingPattern& p, std::vector<double> steps, int m, std::uint64_t seed) {
    return TinyNet::random(p, std::move(steps), 1.0, m, {6, 5}, seed);
}

TEST(Enumerate, EntryCountOfSrGrid) {
    auto net = net_for(idc::library::block2x2(), {16, 16, 16, 16}, 1, 1);
    const auto t = enumerate_table(net, lut::ValueType::U8);
    EXPECT_EQ(t.header().entry_count(), 83521u);
    EXPECT_EQ(t.values().size(), 83521u);
    EXPECT_EQ(t.header().pattern_id, net.pattern().id());
}

TEST(Enumerate, SrBundleStorage) {
    auto net = net_for(idc::library::block2x2(), {16, 16, 16, 16}, 16, 2);
    EXPECT_EQ(header_for(net, lut::ValueType::U8).storage(), 1336336u);
}

TEST(Enumerate, ConstantNet) {
    auto net = net_for(idc::library::tee({2, 3}), {32, 64, 16, 128}, 2, 3);
    for (auto& L : net.layers()) std::fill(L.weight.begin(), L.weight.end(), 0.0);
    net.layers().back().bias = {0.3, 0.7};
    const auto t = enumerate_table(net, lut::ValueType::U8);
    for (std::uint64_t i = 0; i < t.header().entry_count(); ++i) {
        ASSERT_EQ(t.entry(i)[0], lut::quantize_value(0.3 * 255, lut::ValueType::U8));
        ASSERT_EQ(t.entry(i)[1], lut::quantize_value(0.7 * 255, lut::ValueType::U8));
    }
}

TEST(Enumerate, ExhaustiveTwoInputGrid) {
    const auto p = idc::make_pattern_from_taps(3, {1, 1}, {{0, 0}, {1, 0}});
    auto net = net_for(p, {16, 16}, 3, 4);
    const auto t = enumerate_table(net);
    ASSERT_EQ(t.header().grid_sizes, (std::vector<std::uint32_t>{17, 17}));
    // Independent oracle: evaluate the net at every grid point directly.
    const std::vector<double> zero(2, 0.0);
    std::vector<double> ref(3);
    for (int a = 0; a < 17; ++a)
        for (int b = 0; b < 17; ++b) {
            const std::vector<double> x{16.0 * a, 16.0 * b};
            net.forward_index(x, refnet::QuantizerMode::Inference, zero, ref);
            const auto e = t.entry(static_cast<std::uint64_t>(a * 17 + b));
            for (int c = 0; c < 3; ++c) ASSERT_EQ(e[static_cast<std::size_t>(c)], static_cast<float>(ref[static_cast<std::size_t>(c)]));
        }
}

TEST(Enumerate, StorageCap) {
    auto net = net_for(idc::library::block2x2(), {1, 1, 1, 1}, 16, 5);
    EXPECT_THROW(enumerate_table(net, lut::ValueType::F32), StorageOverflow);
    auto small = net_for(idc::library::block2x2(), {16, 16, 16, 16}, 1, 5);
    EXPECT_THROW(enumerate_table(small, lut::ValueType::U8, 1000), StorageOverflow);
}

TEST(Enumerate, RequiresFloatSteps) {
    auto net = net_for(idc::library::block2x2(), {16.1, 16, 16, 16}, 1, 6);
    EXPECT_THROW(enumerate_table(net), InvalidInput);
}

TEST(Enumerate, PartitionIndependent) {
    auto net = net_for(idc::library::corners3x3({2, 1}), {24, 40, 16, 50}, 2, 7);
    net.set_steps({static_cast<float>(24.3), 40, 16, static_cast<float>(50.7)});
    const auto one = lut::serialize(enumerate_table(net, lut::ValueType::I16, kDefaultStorageCap, 1));
    for (std::size_t parts : {2u, 3u, 7u, 64u})
        EXPECT_EQ(lut::serialize(enumerate_table(net, lut::ValueType::I16, kDefaultStorageCap, parts)), one);
}

TEST(Fidelity, F32TableIsExactOnGrid) {
    const auto p = idc::make_pattern_from_taps(3, {1, 1}, {{0, 0}, {1, 0}, {0, 1}});
    auto net = net_for(p, {16, 8, 32}, 2, 8);
    const auto t = enumerate_table(net);
    const auto rep = verify_fidelity(net, t, 10000, 1);
    EXPECT_EQ(rep.max_grid_dev, 0.0);
    EXPECT_EQ(rep.grid_points_checked, t.header().entry_count());
    EXPECT_LE(rep.max_offgrid_dev_nearest, rep.offgrid_bound);
}

TEST(Fidelity, QuantizedValuesWithinHalfStep) {
    auto net = net_for(idc::library::block2x2(), {32, 32, 32, 32}, 1, 9);
    const auto t = enumerate_table(net, lut::ValueType::U8);
    const auto rep = verify_fidelity(net, t, 1000, 2);
    EXPECT_LE(rep.max_grid_dev, 0.5);
    EXPECT_EQ(rep.grid_points_checked, kSampledGridPoints);
    EXPECT_LE(rep.max_offgrid_dev_nearest, rep.offgrid_bound);
}

TEST(Fidelity, TamperedEntryIsCaught) {
    const auto p = idc::make_pattern_from_taps(3, {1, 1}, {{0, 0}, {1, 0}});
    auto net = net_for(p, {16, 16}, 1, 10);
    const auto t = enumerate_table(net);
    auto values = t.values();
    values[123] += 1.0f;
    const lut::LookupTable bad(t.header(), values);
    try {
        verify_fidelity(net, bad, 10, 1);
        FAIL() << "tampered table passed";
    } catch (const FidelityError& e) {
        EXPECT_NE(std::string(e.what()).find("offset 123"), std::string::npos);
    }
}

TEST(Fidelity, HeaderStepsMatchNetBitForBit) {
    auto net = net_for(idc::library::tee({2, 3}), {16, 16, 16, 16}, 1, 11);
    net.set_steps({static_cast<float>(17.3), static_cast<float>(29.9), 16, static_cast<float>(100.01)});
    const auto t = enumerate_table(net, lut::ValueType::U8);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(static_cast<double>(t.header().steps[j]), net.steps()[j]);
    auto other = net;
    other.set_steps({16, 16, 16, 16});
    EXPECT_THROW(verify_fidelity(other, t, 1, 1), FidelityError);
}

}  // namespace
