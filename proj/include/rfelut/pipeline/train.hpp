#pragma once

// Graph training and per-image evaluation for the pipeline tasks.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <numeric>
#include <vector>

#include "rfelut/metrics.hpp"
#include "rfelut/parallel.hpp"
#include "rfelut/pipeline/model.hpp"

namespace rfelut::pipeline {

struct TrainSettings {
    int epochs = 20;           ///< passes with learned steps (or all passes for fixed-step variants)
    int finetune_epochs = 10;  ///< extra passes with frozen steps
    int batch_size = 4;        ///< images per SGD step
    double learning_rate = 0.05;
    double step_learning_rate = 300.0;
    double link_learning_rate = 1e-5;
    double lambda = 1e-3;
    std::uint64_t seed = 1;
};

/// Per-branch training config: budget is the branch's own table budget.
inline refnet::TrainConfig branch_config(const ModelSpec& spec, const TrainSettings& ts, const refnet::TinyNet& net,
                                         bool learn_steps) {
    refnet::TrainConfig c;
    c.learning_rate = ts.learning_rate;
    c.step_learning_rate = learn_steps ? ts.step_learning_rate : 0.0;
    c.lambda = learn_steps ? ts.lambda : 0.0;
    c.task_loss = spec.task == Task::Seg ? refnet::TaskLoss::CrossEntropy : refnet::TaskLoss::L1;
    c.value_bytes = static_cast<double>(lut::bytes_per_value(spec.value_type));
    c.budget_bytes = branch_budget(spec, net.taps(), net.out_arity());
    c.fill_budget = true;
    c.batch_size = ts.batch_size;
    c.seed = ts.seed;
    return c;
}

/// One SGD step on every branch and link. Returns the pre-step objective.
inline double train_graph_step(ulut::ULutGraph& g, const ModelSpec& spec, const TrainSettings& ts,
                               std::span<const ulut::GraphSample> batch, bool learn_steps, std::uint64_t seed) {
    ulut::GraphTrainConfig gc;
    gc.net = branch_config(spec, ts, *g.pools().front().branches.front().net(), learn_steps);
    gc.link_learning_rate = ts.link_learning_rate;
    auto grad = ulut::zero_grad(g);
    const double value = ulut::graph_loss(g, batch, gc, seed, &grad);
    if (!std::isfinite(value)) throw DivergenceError("non-finite training loss; reduce the learning rate");
    for (std::size_t l = 0; l < g.pools().size(); ++l)
        for (std::size_t k = 0; k < g.pools()[l].branches.size(); ++k) {
            auto& net = *g.pools()[l].branches[k].net();
            const auto cfg = branch_config(spec, ts, net, learn_steps);
            refnet::apply_sgd(net, grad.branches[l][k], cfg.learning_rate, cfg.step_learning_rate, cfg);
        }
    for (std::size_t i = 0; i < g.links().size(); ++i) {
        auto& W = g.links()[i];
        for (std::size_t j = 0; j < W.weight.size(); ++j) W.weight[j] -= ts.link_learning_rate * grad.links[i].weight[j];
        for (std::size_t j = 0; j < W.bias.size(); ++j) W.bias[j] -= ts.link_learning_rate * grad.links[i].bias[j];
    }
    return value;
}

/// Trains a fresh graph for `spec`. Variants with learned steps spend
/// `epochs` passes learning steps and weights, then `finetune_epochs` with the
/// steps frozen; the fixed-step baseline gets the same number of passes.
/// Returns the mean objective per epoch in `history` when given.
inline ulut::ULutGraph train_model(const ModelSpec& spec, const std::vector<Pair>& data, const TrainSettings& ts,
                                   std::vector<double>* history = nullptr) {
    if (data.empty()) throw InvalidInput("training needs data");
    if (ts.batch_size < 1 || ts.epochs < 0 || ts.finetune_epochs < 0) throw ConfigError("bad epoch or batch settings");
    auto g = build_graph(spec, ts.seed);
    std::vector<ulut::GraphSample> samples;
    for (const auto& p : data) samples.push_back(to_graph_sample(spec.task, p));
    std::vector<std::size_t> order(samples.size());
    std::vector<ulut::GraphSample> batch;
    std::uint64_t step = 0;
    const int total = ts.epochs + ts.finetune_epochs;
    for (int e = 0; e < total; ++e) {
        const bool learn = learns_steps(spec.variant) && e < ts.epochs;
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[hash_combine(hash_combine(ts.seed, 0x5eedULL + static_cast<std::uint64_t>(e)), i) % i]);
        double acc = 0.0;
        int batches = 0;
        for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(ts.batch_size)) {
            batch.clear();
            for (std::size_t i = s; i < std::min(order.size(), s + static_cast<std::size_t>(ts.batch_size)); ++i)
                batch.push_back(samples[order[i]]);
            acc += train_graph_step(g, spec, ts, batch, learn, hash_combine(ts.seed, step++));
            ++batches;
        }
        if (history) history->push_back(acc / batches);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Evaluation

struct SrScores {
    double psnr = 0.0;
    double ssim = 0.0;
};

struct SegScores {
    double hd = 0.0;    ///< pixels; image diagonal when exactly one side is empty
    double pre = 0.0;
    double dsc = 0.0;
    double sen = 0.0;
    double miou = 0.0;
};

inline SrScores score_sr(const FeatureMap& pred, const FeatureMap& gt) {
    FeatureMap p = pred;
    round_8bit(p);
    return {metrics::psnr(p, gt), metrics::ssim(p, gt)};
}

inline SegScores score_seg(const FeatureMap& prob, const FeatureMap& gt) {
    const auto m = binarize(prob);
    SegScores s;
    s.pre = metrics::precision(m, gt);
    s.dsc = metrics::dice(m, gt);
    s.sen = metrics::sensitivity(m, gt);
    s.miou = metrics::binary_miou(m, gt);
    const auto a = metrics::boundary_points(m), b = metrics::boundary_points(gt);
    if (a.empty() && b.empty())
        s.hd = 0.0;
    else if (a.empty() || b.empty())
        s.hd = std::hypot(gt.width(), gt.height());
    else
        s.hd = metrics::hausdorff(a, b);
    return s;
}

/// Runs `fn(i)` for every index in parallel; results land in slot i.
template <typename T, typename Fn>
std::vector<T> map_images(std::size_t n, Fn&& fn) {
    std::vector<T> out(n);
    parallel_for(n, [&](std::size_t i) { out[i] = fn(i); });
    return out;
}

inline SegScores mean_seg(const std::vector<SegScores>& v) {
    SegScores m;
    for (const auto& s : v) {
        m.hd += s.hd;
        m.pre += s.pre;
        m.dsc += s.dsc;
        m.sen += s.sen;
        m.miou += s.miou;
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, v.size()));
    m.hd /= n;
    m.pre /= n;
    m.dsc /= n;
    m.sen /= n;
    m.miou /= n;
    return m;
}

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace rfelut::pipeline
