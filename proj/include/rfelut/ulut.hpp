#pragma once

// LUT pools wired into a resolution-preserving U-shaped cascade.
//
//   G_l     = mean_k Branch_k(F_l)                       (pool)
//   F_{l+1} = P_l(G_l)                 l <= floor(L/2)    (encoder link)
//   F_{l+1} = C_l([G_l, G_{L-l}])      l >  floor(L/2)    (decoder link, skip fusion)
//
// Output is G_L. Links are 1x1 maps kept as arithmetic; every pool output
// and link output is rounded and clamped to [0, 255] at inference so the next
// level's tables are indexed in their 8-bit domain. The middle level (where
// the skip partner would be the level itself or a later one) uses a plain
// projection.
//
// A branch reads every input channel through the same unit and averages the
// per-channel responses. Units are TinyNets while training and compiled
// tables at inference; the graph code is shared.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rfelut/error.hpp"
#include "rfelut/feature_map.hpp"
#include "rfelut/idc.hpp"
#include "rfelut/lut.hpp"
#include "rfelut/refnet.hpp"
#include "rfelut/rng.hpp"

namespace rfelut::ulut {

using lvq::QuantizerMode;

enum class LookupMode { Nearest, Interpolated };

struct EvalOptions {
    QuantizerMode mode = QuantizerMode::Inference;
    LookupMode lookup = LookupMode::Nearest;
    std::uint64_t seed = 0;
    bool noiseless = false;  ///< training-mode quantizer with u = 0: the unquantized float network
};

/// Float reference: TinyNet branches see raw inputs, nothing is requantized.
inline EvalOptions float_eval() { return {QuantizerMode::Training, LookupMode::Nearest, 0, true}; }

struct CompiledUnit {
    idc::SamplingPattern pattern;
    lut::LookupTable table;
};

class Branch {
public:
    explicit Branch(refnet::TinyNet net) : unit_(std::move(net)) {}

    explicit Branch(CompiledUnit unit) : unit_(std::move(unit)) {
        const auto& c = std::get<CompiledUnit>(unit_);
        if (c.table.dim() != c.pattern.tap_count()) throw ShapeError("table dimension differs from pattern tap count");
        if (c.table.header().pattern_id != c.pattern.id()) throw ShapeError("table was compiled for another pattern");
    }

    bool trainable() const noexcept { return std::holds_alternative<refnet::TinyNet>(unit_); }
    refnet::TinyNet* net() noexcept { return std::get_if<refnet::TinyNet>(&unit_); }
    const refnet::TinyNet* net() const noexcept { return std::get_if<refnet::TinyNet>(&unit_); }
    const CompiledUnit* compiled() const noexcept { return std::get_if<CompiledUnit>(&unit_); }

    const idc::SamplingPattern& pattern() const {
        return trainable() ? net()->pattern() : compiled()->pattern;
    }
    int taps() const { return pattern().tap_count(); }
    int out_arity() const {
        return trainable() ? net()->out_arity() : static_cast<int>(compiled()->table.arity());
    }

    /// One site from its raw tap vector. `noise` is read only in training mode.
    void evaluate_site(std::span<const double> x, const EvalOptions& opt, std::span<const double> noise,
                       std::span<double> out) const {
        if (const auto* n = net()) {
            n->forward_index(x, opt.mode, noise, out);
        } else if (opt.lookup == LookupMode::Nearest) {
            compiled()->table.lookup_nearest(x, out);
        } else {
            compiled()->table.lookup_interpolated(x, out);
        }
    }

    /// Table bytes if compiled, else the bytes its compiled table would take.
    std::uint64_t storage_bytes(lut::ValueType value_type = lut::ValueType::U8) const {
        if (const auto* c = compiled()) return c->table.header().storage();
        std::vector<std::uint64_t> m;
        for (auto g : net()->grid_sizes()) m.push_back(g);
        return lut::storage_bytes(m, static_cast<std::uint64_t>(out_arity()), lut::bytes_per_value(value_type));
    }

private:
    std::variant<refnet::TinyNet, CompiledUnit> unit_;
};

inline std::uint64_t noise_key(std::uint64_t seed, std::uint64_t tag, std::uint64_t site) {
    return hash_combine(hash_combine(seed, tag), site);
}

/// Branch response over the whole map, averaged across input channels.
inline FeatureMap branch_forward(const Branch& branch, const FeatureMap& in, const EvalOptions& opt,
                                 std::uint64_t tag = 0) {
    const int m = branch.out_arity();
    const auto offsets = idc::pixel_offsets(branch.pattern());
    FeatureMap out(in.height(), in.width(), m);
    std::vector<double> x(offsets.size()), u(offsets.size(), 0.0), v(static_cast<std::size_t>(m));
    const double inv_c = 1.0 / in.channels();
    for (int c = 0; c < in.channels(); ++c) {
        const std::uint64_t ctag = tag * 64 + static_cast<std::uint64_t>(c);
        for (int q = 0; q < in.height(); ++q)
            for (int p = 0; p < in.width(); ++p) {
                idc::gather_into(in, offsets, p, q, c, x.data());
                if (opt.mode == QuantizerMode::Training && !opt.noiseless)
                    refnet::fill_noise(noise_key(opt.seed, ctag, in.index(p, q)), u);
                branch.evaluate_site(x, opt, u, v);
                double* dst = &out.at(p, q, 0);
                if (in.channels() == 1) {
                    for (int o = 0; o < m; ++o) dst[o] = v[static_cast<std::size_t>(o)];
                } else {
                    for (int o = 0; o < m; ++o) dst[o] += v[static_cast<std::size_t>(o)] * inv_c;
                }
            }
    }
    return out;
}

struct LutPool {
    std::vector<Branch> branches;
    int in_channels = 1;

    int out_channels() const { return branches.empty() ? 0 : branches.front().out_arity(); }
};

/// Arithmetic mean of the branch outputs; re-quantized to 8 bits at inference.
inline FeatureMap pool_forward(const LutPool& pool, const FeatureMap& feature, const EvalOptions& opt = {},
                               std::uint64_t tag = 0) {
    if (pool.branches.empty()) throw ShapeError("pool has no branches");
    if (feature.channels() != pool.in_channels) throw ShapeError("feature width does not match pool input");
    FeatureMap acc;
    for (std::size_t k = 0; k < pool.branches.size(); ++k) {
        auto g = branch_forward(pool.branches[k], feature, opt, tag * 16 + k);
        if (k == 0) {
            acc = std::move(g);
            continue;
        }
        if (!g.same_shape(acc)) throw ShapeError("branch outputs differ in shape");
        for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += g.data()[i];
    }
    if (pool.branches.size() > 1) {
        const double inv_k = 1.0 / static_cast<double>(pool.branches.size());
        for (double& v : acc.data()) v *= inv_k;
    }
    if (opt.mode == QuantizerMode::Inference) requantize_8bit(acc);
    return acc;
}

/// 1x1 channel map, output clamped to [0, 255] (and rounded at inference).
struct Linear1x1 {
    int in = 0;
    int out = 0;
    std::vector<double> weight;  ///< out x in
    std::vector<double> bias;

    static Linear1x1 averaging(int in, int out) {
        Linear1x1 l{in, out, std::vector<double>(static_cast<std::size_t>(in * out), 1.0 / in),
                    std::vector<double>(static_cast<std::size_t>(out), 0.0)};
        return l;
    }

    static Linear1x1 identity(int width) {
        Linear1x1 l{width, width, std::vector<double>(static_cast<std::size_t>(width * width), 0.0),
                    std::vector<double>(static_cast<std::size_t>(width), 0.0)};
        for (int i = 0; i < width; ++i) l.weight[static_cast<std::size_t>(i * width + i)] = 1.0;
        return l;
    }

    /// Pre-clamp output.
    FeatureMap linear(const FeatureMap& x) const {
        if (x.channels() != in) throw ShapeError("1x1 map input width mismatch");
        FeatureMap z(x.height(), x.width(), out);
        for (int q = 0; q < x.height(); ++q)
            for (int p = 0; p < x.width(); ++p) {
                const double* src = &x.at(p, q, 0);
                double* dst = &z.at(p, q, 0);
                for (int o = 0; o < out; ++o) {
                    double s = bias[static_cast<std::size_t>(o)];
                    for (int i = 0; i < in; ++i) s += weight[static_cast<std::size_t>(o * in + i)] * src[i];
                    dst[o] = s;
                }
            }
        return z;
    }
};

inline FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
    if (a.height() != b.height() || a.width() != b.width()) throw ShapeError("concat of maps with different extents");
    FeatureMap out(a.height(), a.width(), a.channels() + b.channels());
    for (int q = 0; q < a.height(); ++q)
        for (int p = 0; p < a.width(); ++p) {
            for (int c = 0; c < a.channels(); ++c) out.at(p, q, c) = a.at(p, q, c);
            for (int c = 0; c < b.channels(); ++c) out.at(p, q, a.channels() + c) = b.at(p, q, c);
        }
    return out;
}

/// Intermediate maps of one forward pass (1-based level l lives at index l-1).
struct ForwardTrace {
    std::vector<FeatureMap> inputs;   ///< F_l
    std::vector<FeatureMap> pooled;   ///< G_l
    std::vector<FeatureMap> link_pre; ///< pre-clamp link output feeding F_{l+1}
};

class ULutGraph {
public:
    ULutGraph(std::vector<LutPool> pools, std::vector<Linear1x1> links, int input_channels)
        : pools_(std::move(pools)), links_(std::move(links)), input_channels_(input_channels) {
        const int L = levels();
        if (L < 1) throw ShapeError("graph needs at least one level");
        if (static_cast<int>(links_.size()) != L - 1) throw ShapeError("graph needs L-1 links");
        if (pools_.front().in_channels != input_channels_) throw ShapeError("first pool width differs from input");
        for (int l = 1; l <= L; ++l) {
            const auto& pool = pools_[static_cast<std::size_t>(l - 1)];
            if (pool.branches.empty()) throw ShapeError("every pool needs a branch");
            for (const auto& b : pool.branches) {
                if (b.out_arity() != pool.out_channels()) throw ShapeError("branches of a pool differ in output width");
                if (b.taps() > idc::kMaxTaps) throw InvalidPattern("branch exceeds 4 active taps");
            }
        }
        for (int l = 1; l < L; ++l) {
            const auto& link = links_[static_cast<std::size_t>(l - 1)];
            if (link.in != link_input_width(l)) throw ShapeError("link " + std::to_string(l) + " input width mismatch");
            if (link.out != pools_[static_cast<std::size_t>(l)].in_channels)
                throw ShapeError("link " + std::to_string(l) + " output width mismatch");
        }
    }

    int levels() const noexcept { return static_cast<int>(pools_.size()); }
    int input_channels() const noexcept { return input_channels_; }
    const std::vector<LutPool>& pools() const noexcept { return pools_; }
    std::vector<LutPool>& pools() noexcept { return pools_; }
    const std::vector<Linear1x1>& links() const noexcept { return links_; }
    std::vector<Linear1x1>& links() noexcept { return links_; }
    const LutPool& pool(int level) const { return pools_.at(static_cast<std::size_t>(level - 1)); }

    /// Link l (1-based, l < L) fuses a skip partner when it is a decoder link.
    bool is_decoder_link(int l) const noexcept { return l > levels() / 2 && l < levels(); }
    int skip_partner(int l) const noexcept { return levels() - l; }

    int link_input_width(int l) const {
        int w = pool(l).out_channels();
        if (is_decoder_link(l)) w += pool(skip_partner(l)).out_channels();
        return w;
    }

    std::size_t max_branches() const {
        std::size_t k = 0;
        for (const auto& p : pools_) k = std::max(k, p.branches.size());
        return k;
    }

    FeatureMap forward(const FeatureMap& input, const EvalOptions& opt = {}, ForwardTrace* trace = nullptr) const {
        if (input.channels() != input_channels_) throw ShapeError("input width does not match the channel plan");
        const int L = levels();
        std::vector<FeatureMap> pooled(static_cast<std::size_t>(L));
        FeatureMap f = input;
        if (trace) *trace = {};
        for (int l = 1; l <= L; ++l) {
            const auto li = static_cast<std::size_t>(l - 1);
            pooled[li] = pool_forward(pools_[li], f, opt, static_cast<std::uint64_t>(l));
            if (trace) trace->inputs.push_back(f);
            if (l == L) break;
            const FeatureMap link_in = is_decoder_link(l)
                                           ? concat_channels(pooled[li], pooled[static_cast<std::size_t>(skip_partner(l) - 1)])
                                           : pooled[li];
            FeatureMap z = links_[li].linear(link_in);
            if (trace) trace->link_pre.push_back(z);
            for (double& v : z.data()) v = std::clamp(v, 0.0, 255.0);
            if (opt.mode == QuantizerMode::Inference) requantize_8bit(z);
            f = std::move(z);
        }
        if (!trace) return std::move(pooled.back());
        FeatureMap out = pooled.back();
        trace->pooled = std::move(pooled);
        return out;
    }

private:
    std::vector<LutPool> pools_;
    std::vector<Linear1x1> links_;
    int input_channels_;
};

inline FeatureMap ulut_forward(const ULutGraph& graph, const FeatureMap& input, const EvalOptions& opt = {}) {
    return graph.forward(input, opt);
}

// ---------------------------------------------------------------------------
// Memory accounting

struct MemoryReport {
    std::uint64_t bound = 0;  ///< L * K_max * (2^(8-q)+1)^4 * m * B_v
    std::uint64_t exact = 0;  ///< sum over branches of (2^(8-q)+1)^r * m * B_v
};

/// `taps[l][k]` is the active-tap count of branch k at level l.
inline MemoryReport memory_bound(const std::vector<std::vector<int>>& taps, int q, std::uint64_t entry_arity,
                                 std::uint64_t value_bytes) {
    if (q < 1 || q > 8) throw InvalidInput("bit depth q must be in [1, 8]");
    const std::uint64_t grid = (std::uint64_t{1} << (8 - q)) + 1;
    auto table = [&](int r) {
        std::vector<std::uint64_t> sizes(static_cast<std::size_t>(r), grid);
        return lut::storage_bytes(sizes, entry_arity, value_bytes);
    };
    MemoryReport rep;
    std::size_t k_max = 0;
    for (const auto& level : taps) {
        k_max = std::max(k_max, level.size());
        for (int r : level) {
            if (r < 1 || r > idc::kMaxTaps) throw InvalidPattern("branch tap count outside [1, 4]");
            rep.exact += table(r);
        }
    }
    rep.bound = static_cast<std::uint64_t>(taps.size()) * k_max * table(idc::kMaxTaps);
    return rep;
}

inline MemoryReport total_memory_bound(const ULutGraph& graph, int q, std::uint64_t entry_arity,
                                       std::uint64_t value_bytes) {
    std::vector<std::vector<int>> taps;
    for (const auto& p : graph.pools()) {
        taps.emplace_back();
        for (const auto& b : p.branches) taps.back().push_back(b.taps());
    }
    return memory_bound(taps, q, entry_arity, value_bytes);
}

/// Bytes of the actual (or would-be) compiled tables.
inline std::uint64_t actual_storage(const ULutGraph& graph, lut::ValueType value_type = lut::ValueType::U8) {
    std::uint64_t s = 0;
    for (const auto& p : graph.pools())
        for (const auto& b : p.branches) s += b.storage_bytes(value_type);
    return s;
}

// ---------------------------------------------------------------------------
// Training

struct GraphSample {
    FeatureMap input;
    FeatureMap target;  ///< H x W x (final pool width), output units
};

struct GraphTrainConfig {
    refnet::TrainConfig net;          ///< per-branch settings (lambda, steps, budget, loss)
    double link_learning_rate = 1e-4;
};

struct GraphGrad {
    std::vector<std::vector<refnet::TinyNetGrad>> branches;
    std::vector<Linear1x1> links;  ///< gradient buffers shaped like the links
};

inline GraphGrad zero_grad(const ULutGraph& g) {
    GraphGrad gr;
    for (const auto& p : g.pools()) {
        gr.branches.emplace_back();
        for (const auto& b : p.branches) {
            if (!b.trainable()) throw InvalidInput("only TinyNet-backed graphs can be trained");
            gr.branches.back().push_back(b.net()->zero_grad());
        }
    }
    for (const auto& l : g.links()) {
        Linear1x1 z = l;
        std::fill(z.weight.begin(), z.weight.end(), 0.0);
        std::fill(z.bias.begin(), z.bias.end(), 0.0);
        gr.links.push_back(std::move(z));
    }
    return gr;
}

namespace detail {

/// Back-propagates dG (pool-output gradient already divided by K) through
/// one branch, accumulating into the branch grads and d(input).
inline void branch_backward(const Branch& branch, const FeatureMap& in, const FeatureMap& dG, double scale,
                            const EvalOptions& opt, std::uint64_t tag, refnet::TinyNetGrad& grad, FeatureMap& dF) {
    const auto& net = *branch.net();
    const int m = net.out_arity();
    const auto offsets = idc::pixel_offsets(net.pattern());
    std::vector<double> x(offsets.size()), u(offsets.size()), v(static_cast<std::size_t>(m)),
        g(static_cast<std::size_t>(m)), dx(offsets.size());
    refnet::Tape tape;
    const double s = scale / in.channels();
    for (int c = 0; c < in.channels(); ++c) {
        const std::uint64_t ctag = tag * 64 + static_cast<std::uint64_t>(c);
        for (int q = 0; q < in.height(); ++q)
            for (int p = 0; p < in.width(); ++p) {
                const double* up = &dG.at(p, q, 0);
                bool any = false;
                for (int o = 0; o < m; ++o) {
                    g[static_cast<std::size_t>(o)] = up[o] * s;
                    any |= g[static_cast<std::size_t>(o)] != 0.0;
                }
                if (!any) continue;
                idc::gather_into(in, offsets, p, q, c, x.data());
                refnet::fill_noise(noise_key(opt.seed, ctag, in.index(p, q)), u);
                net.forward_index(x, QuantizerMode::Training, u, v, &tape);
                net.backward(tape, g, grad, dx);
                for (std::size_t j = 0; j < offsets.size(); ++j)
                    dF.at(std::clamp(p + offsets[j].dx, 0, in.width() - 1), std::clamp(q + offsets[j].dy, 0, in.height() - 1),
                          c) += dx[j];
            }
    }
}

}  // namespace detail

/// Mean per-pixel task loss of the final output plus lambda * sum_k ln S_k.
/// Fills `grad` when provided.
inline double graph_loss(const ULutGraph& graph, std::span<const GraphSample> batch, const GraphTrainConfig& cfg,
                         std::uint64_t seed, GraphGrad* grad = nullptr) {
    if (batch.empty()) throw InvalidInput("graph loss needs a nonempty batch");
    const int L = graph.levels();
    double total = 0.0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const auto& sample = batch[s];
        EvalOptions opt{QuantizerMode::Training, LookupMode::Nearest, hash_combine(seed, s)};
        ForwardTrace tr;
        const FeatureMap out = graph.forward(sample.input, opt, &tr);
        if (!out.same_shape(sample.target)) throw ShapeError("target shape differs from graph output");
        const int m = out.channels();
        const double inv = 1.0 / (static_cast<double>(batch.size()) * out.height() * out.width());
        const auto& last_net = *graph.pool(L).branches.front().net();
        FeatureMap dG(out.height(), out.width(), m);
        for (int q = 0; q < out.height(); ++q)
            for (int p = 0; p < out.width(); ++p) {
                std::span<const double> v(&out.at(p, q, 0), static_cast<std::size_t>(m));
                std::span<const double> y(&sample.target.at(p, q, 0), static_cast<std::size_t>(m));
                std::span<double> dv(&dG.at(p, q, 0), static_cast<std::size_t>(m));
                total += refnet::task_loss(cfg.net.task_loss, last_net.value_range(), v, y,
                                           grad ? dv : std::span<double>()) * inv;
            }
        if (!grad) continue;
        for (double& v : dG.data()) v *= inv;

        std::vector<FeatureMap> dGs(static_cast<std::size_t>(L));
        for (int l = 1; l <= L; ++l) dGs[static_cast<std::size_t>(l - 1)] = FeatureMap(out.height(), out.width(), graph.pool(l).out_channels());
        dGs.back() = std::move(dG);
        for (int l = L; l >= 1; --l) {
            const auto li = static_cast<std::size_t>(l - 1);
            const auto& pool = graph.pools()[li];
            const auto& in = tr.inputs[li];
            FeatureMap dF(in.height(), in.width(), in.channels());
            const double inv_k = 1.0 / static_cast<double>(pool.branches.size());
            for (std::size_t k = 0; k < pool.branches.size(); ++k)
                detail::branch_backward(pool.branches[k], in, dGs[li], inv_k, opt,
                                        static_cast<std::uint64_t>(l) * 16 + k, grad->branches[li][k], dF);
            if (l == 1) break;
            // Link l-1 produced F_l.
            const int link = l - 1;
            const auto lk = static_cast<std::size_t>(link - 1);
            const auto& W = graph.links()[lk];
            auto& gW = grad->links[lk];
            const auto& zpre = tr.link_pre[lk];
            const bool dec = graph.is_decoder_link(link);
            const auto& ga = tr.pooled[static_cast<std::size_t>(link - 1)];
            const FeatureMap* gb = dec ? &tr.pooled[static_cast<std::size_t>(graph.skip_partner(link) - 1)] : nullptr;
            auto& dA = dGs[static_cast<std::size_t>(link - 1)];
            FeatureMap* dB = dec ? &dGs[static_cast<std::size_t>(graph.skip_partner(link) - 1)] : nullptr;
            const int ca = ga.channels();
            for (int q = 0; q < in.height(); ++q)
                for (int p = 0; p < in.width(); ++p)
                    for (int o = 0; o < W.out; ++o) {
                        const double z = zpre.at(p, q, o);
                        if (!(z >= 0.0 && z <= 255.0)) continue;
                        const double dz = dF.at(p, q, o);
                        if (dz == 0.0) continue;
                        gW.bias[static_cast<std::size_t>(o)] += dz;
                        for (int i = 0; i < W.in; ++i) {
                            const bool first = i < ca;
                            const double a = first ? ga.at(p, q, i) : gb->at(p, q, i - ca);
                            gW.weight[static_cast<std::size_t>(o * W.in + i)] += dz * a;
                            const double back = W.weight[static_cast<std::size_t>(o * W.in + i)] * dz;
                            if (first)
                                dA.at(p, q, i) += back;
                            else
                                dB->at(p, q, i - ca) += back;
                        }
                    }
        }
    }
    for (std::size_t l = 0; l < graph.pools().size(); ++l)
        for (std::size_t k = 0; k < graph.pools()[l].branches.size(); ++k) {
            const auto& net = *graph.pools()[l].branches[k].net();
            if (cfg.net.lambda == 0.0) continue;
            total += cfg.net.lambda * refnet::log_storage(net.steps(), net.out_arity(), cfg.net.value_bytes);
            if (grad)
                for (std::size_t j = 0; j < net.steps().size(); ++j)
                    grad->branches[l][k].steps[j] += cfg.net.lambda * refnet::log_storage_grad(net.steps()[j]);
        }
    return total;
}

/// One SGD step over all branch nets and links. Returns the pre-step objective.
inline double graph_train_step(ULutGraph& graph, std::span<const GraphSample> batch, const GraphTrainConfig& cfg,
                               std::uint64_t seed) {
    cfg.net.validate();
    auto grad = zero_grad(graph);
    const double value = graph_loss(graph, batch, cfg, seed, &grad);
    if (!std::isfinite(value)) throw DivergenceError("non-finite graph loss; reduce the learning rate");
    for (std::size_t l = 0; l < graph.pools().size(); ++l)
        for (std::size_t k = 0; k < graph.pools()[l].branches.size(); ++k)
            refnet::apply_sgd(*graph.pools()[l].branches[k].net(), grad.branches[l][k], cfg.net.learning_rate,
                              cfg.net.step_learning_rate, cfg.net);
    for (std::size_t i = 0; i < graph.links().size(); ++i) {
        auto& W = graph.links()[i];
        for (std::size_t j = 0; j < W.weight.size(); ++j) W.weight[j] -= cfg.link_learning_rate * grad.links[i].weight[j];
        for (std::size_t j = 0; j < W.bias.size(); ++j) W.bias[j] -= cfg.link_learning_rate * grad.links[i].bias[j];
    }
    return value;
}

}  // namespace rfelut::ulut
