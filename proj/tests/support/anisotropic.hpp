#pragma once

// Two-axis regression with unequal spread: x ~ N(127.5, diag(40^2, 10^2)),
// target = x. Compares a net trained on a fixed uniform grid against one that
// learns its per-axis steps, both held to the same table budget.

#include <cmath>
#include <random>
#include <vector>

#include "rfelut/refnet.hpp"

namespace rfelut::experiments {

struct AnisotropicResult {
    double sq_loss = 0.0;   ///< held-out inference L1, fixed uniform steps
    double lvq_loss = 0.0;  ///< held-out inference L1, learned steps
    std::vector<double> learned_steps;
    double budget = 0.0;
    double lvq_storage = 0.0;  ///< compiled (floor) storage of the learned grid
};

inline constexpr double kAnisoSigmaWide = 40.0;
inline constexpr double kAnisoSigmaNarrow = 10.0;
inline constexpr double kAnisoSqStep = 32.0;

inline std::vector<refnet::Sample> anisotropic_samples(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<refnet::Sample> out(n);
    for (auto& s : out) {
        const double a = std::clamp(127.5 + kAnisoSigmaWide * g(rng), 0.0, 255.0);
        const double b = std::clamp(127.5 + kAnisoSigmaNarrow * g(rng), 0.0, 255.0);
        s.x = {a, b};
        s.y = {a, b};
    }
    return out;
}

inline double inference_l1(const refnet::TinyNet& net, const std::vector<refnet::Sample>& set) {
    const std::vector<double> zero(2, 0.0);
    std::vector<double> out(2);
    double acc = 0.0;
    for (const auto& s : set) {
        net.forward_index(s.x, refnet::QuantizerMode::Inference, zero, out);
        acc += refnet::task_loss(refnet::TaskLoss::L1, net.value_range(), out, s.y, {});
    }
    return acc / static_cast<double>(set.size());
}

inline AnisotropicResult run_anisotropic(std::uint64_t seed, int epochs = 100, double step_lr = 1000.0,
                                         double learning_rate = 0.01) {
    const auto pattern = idc::make_pattern_from_taps(3, {1, 1}, {{0, 0}, {1, 0}});
    const auto train = anisotropic_samples(4000, seed);
    const auto test = anisotropic_samples(4000, seed + 1000);
    const std::vector<double> sq_steps(2, kAnisoSqStep);
    const double m = 2.0, bv = 1.0;
    const double budget = std::pow(256.0 / kAnisoSqStep + 1.0, 2) * m * bv;

    refnet::TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 32;
    cfg.learning_rate = learning_rate;
    cfg.seed = seed;
    cfg.value_bytes = bv;

    // Both nets get the same number of weight updates; the LVQ net learns its
    // steps in the first phase and keeps them frozen while the weights settle.
    auto sq = refnet::TinyNet::random(pattern, sq_steps, 1.0, 2, {16}, seed);
    cfg.epochs = 2 * epochs;
    refnet::fit(sq, train, cfg);

    auto lvq = refnet::TinyNet::random(pattern, sq_steps, 1.0, 2, {16}, seed);
    cfg.epochs = epochs;
    cfg.step_learning_rate = step_lr;
    cfg.lambda = 1e-3;
    cfg.budget_bytes = budget;
    cfg.fill_budget = true;
    refnet::fit(lvq, train, cfg);
    cfg.step_learning_rate = 0.0;
    refnet::fit(lvq, train, cfg);

    AnisotropicResult r;
    r.sq_loss = inference_l1(sq, test);
    r.lvq_loss = inference_l1(lvq, test);
    r.learned_steps = lvq.steps();
    r.budget = budget;
    r.lvq_storage = m * bv;
    for (auto g : lvq.grid_sizes()) r.lvq_storage *= g;
    return r;
}

}  // namespace rfelut::experiments
