#pragma once

// The trainable network behind every table.
//
// A TinyNet reads n taps through a SamplingPattern, quantizes them on its own
// diagonal lattice, and runs a stack of 1x1 (dense) layers:
//
//   u   = Q(x) / 255
//   h_l = clamp(W_l h_{l-1} + c_l, 0, hidden_cap)      hidden layers
//   v   = lo + (hi - lo) * act(W_L h + c_L)            act = clamp01 | sigmoid
//
// Training replaces rounding with x + b*u, u ~ U(-1/2, 1/2), so gradients
// reach both the weights and the per-axis steps. The objective adds
// lambda * ln S(steps), S being the table size with continuous grid counts.
// Training keeps steps at float precision so a compiled table header can
// carry them exactly.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rfelut/error.hpp"
#include "rfelut/feature_map.hpp"
#include "rfelut/idc.hpp"
#include "rfelut/lut.hpp"
#include "rfelut/lvq.hpp"
#include "rfelut/rng.hpp"

namespace rfelut::refnet {

using lvq::QuantizerMode;

enum class OutputActivation { Clamp, Sigmoid };
enum class TaskLoss { L1, CrossEntropy };

struct Dense {
    int in = 0;
    int out = 0;
    std::vector<double> weight;  ///< out x in, row-major
    std::vector<double> bias;

    double w(int o, int i) const { return weight[static_cast<std::size_t>(o * in + i)]; }
};

struct ValueRange {
    double lo = 0.0;
    double hi = 255.0;
};

/// Nearest float at or above v.
inline float float_at_least(double v) {
    float f = static_cast<float>(v);
    if (static_cast<double>(f) < v) f = std::nextafter(f, std::numeric_limits<float>::infinity());
    return f;
}

inline double float_round(double v) { return static_cast<double>(static_cast<float>(v)); }

/// Per-sample intermediate values kept for back-propagation.
struct Tape {
    std::vector<double> noise;               ///< u per tap (training mode only)
    std::vector<double> input;               ///< normalized quantized input
    std::vector<std::vector<double>> pre;    ///< pre-activations per layer
    std::vector<std::vector<double>> post;   ///< activations per layer (last = output act in [0,1])
};

struct TinyNetGrad {
    std::vector<std::vector<double>> weight;
    std::vector<std::vector<double>> bias;
    std::vector<double> steps;

    void add(const TinyNetGrad& o) {
        for (std::size_t l = 0; l < weight.size(); ++l) {
            for (std::size_t i = 0; i < weight[l].size(); ++i) weight[l][i] += o.weight[l][i];
            for (std::size_t i = 0; i < bias[l].size(); ++i) bias[l][i] += o.bias[l][i];
        }
        for (std::size_t j = 0; j < steps.size(); ++j) steps[j] += o.steps[j];
    }

    void scale(double s) {
        for (auto& w : weight)
            for (double& v : w) v *= s;
        for (auto& b : bias)
            for (double& v : b) v *= s;
        for (double& v : steps) v *= s;
    }
};

class TinyNet {
public:
    TinyNet(idc::SamplingPattern pattern, std::vector<double> steps, double step_min, std::vector<Dense> layers,
            OutputActivation output = OutputActivation::Clamp, ValueRange range = {}, double hidden_cap = 1.0)
        : pattern_(std::move(pattern)),
          step_min_(step_min),
          layers_(std::move(layers)),
          output_(output),
          range_(range),
          hidden_cap_(hidden_cap) {
        set_steps(std::move(steps));
        if (layers_.empty()) throw InvalidInput("TinyNet needs at least one layer");
        if (layers_.front().in != pattern_.tap_count()) throw ShapeError("first layer must consume the gather output");
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& L = layers_[l];
            if (l > 0 && L.in != layers_[l - 1].out) throw ShapeError("layer widths do not chain");
            if (L.weight.size() != static_cast<std::size_t>(L.in * L.out) || L.bias.size() != static_cast<std::size_t>(L.out))
                throw ShapeError("layer parameter sizes do not match its shape");
            for (double v : L.weight)
                if (!std::isfinite(v)) throw InvalidInput("non-finite weight");
            for (double v : L.bias)
                if (!std::isfinite(v)) throw InvalidInput("non-finite bias");
        }
        if (!(range_.hi > range_.lo)) throw InvalidInput("empty value range");
        if (!(hidden_cap_ > 0.0)) throw InvalidInput("hidden cap must be positive");
    }

    /// Randomly initialized net with the given hidden widths.
    static TinyNet random(idc::SamplingPattern pattern, std::vector<double> steps, double step_min, int out_arity,
                          const std::vector<int>& hidden, std::uint64_t seed,
                          OutputActivation output = OutputActivation::Clamp, ValueRange range = {},
                          double hidden_cap = 1.0) {
        std::vector<int> widths{pattern.tap_count()};
        widths.insert(widths.end(), hidden.begin(), hidden.end());
        widths.push_back(out_arity);
        std::vector<Dense> layers;
        std::uint64_t counter = 0;
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            Dense d;
            d.in = widths[l];
            d.out = widths[l + 1];
            const double limit = std::sqrt(6.0 / (d.in + d.out));
            d.weight.resize(static_cast<std::size_t>(d.in * d.out));
            for (double& w : d.weight) w = 2.0 * limit * centered_uniform(seed, counter++);
            const bool last = l + 2 == widths.size();
            d.bias.assign(static_cast<std::size_t>(d.out), last ? (output == OutputActivation::Clamp ? 0.5 : 0.0) : 0.1);
            layers.push_back(std::move(d));
        }
        return TinyNet(std::move(pattern), std::move(steps), step_min, std::move(layers), output, range, hidden_cap);
    }

    const idc::SamplingPattern& pattern() const noexcept { return pattern_; }
    int taps() const noexcept { return pattern_.tap_count(); }
    int out_arity() const noexcept { return layers_.back().out; }
    const std::vector<Dense>& layers() const noexcept { return layers_; }
    std::vector<Dense>& layers() noexcept { return layers_; }
    const std::vector<double>& steps() const noexcept { return steps_; }
    double step_min() const noexcept { return step_min_; }
    OutputActivation output_activation() const noexcept { return output_; }
    ValueRange value_range() const noexcept { return range_; }
    double hidden_cap() const noexcept { return hidden_cap_; }
    lvq::DiagonalLattice lattice() const { return lvq::DiagonalLattice(steps_, step_min_); }

    /// Grid sizes of the compiled table, floor(256/b)+1 per axis.
    std::vector<std::uint32_t> grid_sizes() const {
        std::vector<std::uint32_t> m;
        for (double b : steps_) m.push_back(lut::grid_size_for_step(b));
        return m;
    }

    /// Steps must stay >= step_min.
    void set_steps(std::vector<double> steps) {
        if (static_cast<int>(steps.size()) != pattern_.tap_count()) throw ShapeError("one step per tap is required");
        for (double b : steps)
            if (!std::isfinite(b) || b < step_min_) throw InvalidInput("lattice step below step_min");
        steps_ = std::move(steps);
    }

    /// True when every step is exactly representable as f32 (required to compile).
    bool steps_are_float() const {
        return std::all_of(steps_.begin(), steps_.end(), [](double b) { return float_round(b) == b; });
    }

    /// Quantizer front end. Inference: per-axis rounding, index clamped to the
    /// table grid. Training: x + b*u with u taken from `noise`.
    void quantize_input(std::span<const double> x, QuantizerMode mode, std::span<const double> noise,
                        std::span<double> xq) const {
        for (std::size_t j = 0; j < steps_.size(); ++j) {
            const double b = steps_[j];
            if (mode == QuantizerMode::Inference) {
                const auto top = static_cast<std::int64_t>(lut::grid_size_for_step(b)) - 1;
                xq[j] = b * static_cast<double>(std::clamp<std::int64_t>(lvq::round_half_away(x[j] / b), 0, top));
            } else {
                xq[j] = x[j] + b * noise[j];
            }
        }
    }

    /// Post-gather stack on an already quantized index vector (raw 8-bit units).
    void evaluate_stack(std::span<const double> xq, std::span<double> out, Tape* tape = nullptr) const {
        thread_local std::vector<double> a, z;
        const int n = taps();
        a.assign(xq.begin(), xq.end());
        for (int j = 0; j < n; ++j) a[static_cast<std::size_t>(j)] /= 255.0;
        if (tape) {
            tape->input = a;
            tape->pre.resize(layers_.size());
            tape->post.resize(layers_.size());
        }
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const Dense& L = layers_[l];
            z.assign(static_cast<std::size_t>(L.out), 0.0);
            for (int o = 0; o < L.out; ++o) {
                double s = L.bias[static_cast<std::size_t>(o)];
                const double* w = L.weight.data() + static_cast<std::size_t>(o * L.in);
                for (int i = 0; i < L.in; ++i) s += w[i] * a[static_cast<std::size_t>(i)];
                z[static_cast<std::size_t>(o)] = s;
            }
            const bool last = l + 1 == layers_.size();
            if (tape) tape->pre[l] = z;
            a.resize(z.size());
            for (std::size_t o = 0; o < z.size(); ++o) {
                if (!last)
                    a[o] = std::clamp(z[o], 0.0, hidden_cap_);
                else if (output_ == OutputActivation::Clamp)
                    a[o] = std::clamp(z[o], 0.0, 1.0);
                else
                    a[o] = 1.0 / (1.0 + std::exp(-z[o]));
            }
            if (tape) tape->post[l] = a;
        }
        for (std::size_t o = 0; o < a.size(); ++o) out[o] = range_.lo + (range_.hi - range_.lo) * a[o];
    }

    /// Gather-free forward on a raw index vector.
    void forward_index(std::span<const double> x, QuantizerMode mode, std::span<const double> noise,
                       std::span<double> out, Tape* tape = nullptr) const {
        thread_local std::vector<double> xq;
        xq.resize(x.size());
        quantize_input(x, mode, noise, xq);
        if (tape) tape->noise.assign(noise.begin(), noise.end());
        evaluate_stack(xq, out, tape);
    }

    /// Back-propagates d(loss)/d(output) through one recorded sample.
    /// Accumulates parameter and step gradients into `grad` and writes
    /// d(loss)/d(raw input taps) into `dx` when non-empty.
    void backward(const Tape& tape, std::span<const double> dout, TinyNetGrad& grad, std::span<double> dx) const {
        thread_local std::vector<double> delta, prev;
        const std::size_t L = layers_.size();
        const auto& last_pre = tape.pre[L - 1];
        const auto& last_post = tape.post[L - 1];
        delta.resize(last_pre.size());
        for (std::size_t o = 0; o < delta.size(); ++o) {
            double d_act;
            if (output_ == OutputActivation::Clamp)
                d_act = (last_pre[o] >= 0.0 && last_pre[o] <= 1.0) ? 1.0 : 0.0;
            else
                d_act = last_post[o] * (1.0 - last_post[o]);
            delta[o] = dout[o] * (range_.hi - range_.lo) * d_act;
        }
        for (std::size_t l = L; l-- > 0;) {
            const Dense& D = layers_[l];
            const auto& input = l == 0 ? tape.input : tape.post[l - 1];
            auto& gw = grad.weight[l];
            auto& gb = grad.bias[l];
            for (int o = 0; o < D.out; ++o) {
                const double d = delta[static_cast<std::size_t>(o)];
                if (d == 0.0) continue;
                gb[static_cast<std::size_t>(o)] += d;
                double* g = gw.data() + static_cast<std::size_t>(o * D.in);
                for (int i = 0; i < D.in; ++i) g[i] += d * input[static_cast<std::size_t>(i)];
            }
            prev.assign(static_cast<std::size_t>(D.in), 0.0);
            for (int o = 0; o < D.out; ++o) {
                const double d = delta[static_cast<std::size_t>(o)];
                if (d == 0.0) continue;
                const double* w = D.weight.data() + static_cast<std::size_t>(o * D.in);
                for (int i = 0; i < D.in; ++i) prev[static_cast<std::size_t>(i)] += w[i] * d;
            }
            if (l > 0) {
                const auto& z = tape.pre[l - 1];
                for (std::size_t i = 0; i < prev.size(); ++i)
                    if (!(z[i] >= 0.0 && z[i] <= hidden_cap_)) prev[i] = 0.0;
            }
            delta.swap(prev);
        }
        // delta = dL/du with u = xq / 255.
        for (std::size_t j = 0; j < steps_.size(); ++j) {
            const double dxq = delta[j] / 255.0;
            if (!tape.noise.empty()) grad.steps[j] += dxq * tape.noise[j];
            if (!dx.empty()) dx[j] = dxq;
        }
    }

    TinyNetGrad zero_grad() const {
        TinyNetGrad g;
        for (const auto& L : layers_) {
            g.weight.emplace_back(L.weight.size(), 0.0);
            g.bias.emplace_back(L.bias.size(), 0.0);
        }
        g.steps.assign(steps_.size(), 0.0);
        return g;
    }

    /// Output Lipschitz constant w.r.t. the quantized input (2-norms).
    double lipschitz_bound() const {
        double c = (range_.hi - range_.lo) / 255.0;
        if (output_ == OutputActivation::Sigmoid) c *= 0.25;
        for (const auto& L : layers_) {
            const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W(
                L.weight.data(), L.out, L.in);
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(W);
            c *= svd.singularValues()(0);
        }
        return c;
    }

private:
    idc::SamplingPattern pattern_;
    std::vector<double> steps_;
    double step_min_;
    std::vector<Dense> layers_;
    OutputActivation output_;
    ValueRange range_;
    double hidden_cap_;
};

/// Training noise for sample `index` under `seed`.
inline std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index) { return hash_combine(seed, index); }

inline void fill_noise(std::uint64_t seed, std::span<double> u) {
    for (std::size_t j = 0; j < u.size(); ++j) u[j] = centered_uniform(seed, j);
}

/// forward at site (p, q) of channel `channel`.
inline std::vector<double> forward(const TinyNet& net, const FeatureMap& feature, int p, int q, QuantizerMode mode,
                                   std::uint64_t seed = 0, int channel = 0) {
    const auto x = idc::gather(feature, net.pattern(), p, q, channel);
    std::vector<double> u(x.size(), 0.0);
    if (mode == QuantizerMode::Training) fill_noise(seed, u);
    std::vector<double> out(static_cast<std::size_t>(net.out_arity()));
    net.forward_index(x, mode, u, out);
    return out;
}

// ---------------------------------------------------------------------------
// Objective

/// ln S with continuous grid counts 256/b + 1.
inline double log_storage(std::span<const double> steps, double entry_arity, double value_bytes) {
    double s = std::log(entry_arity * value_bytes);
    for (double b : steps) s += std::log(256.0 / b + 1.0);
    return s;
}

/// d ln S / d b_j.
inline double log_storage_grad(double b) { return -256.0 / (b * (256.0 + b)); }

struct Sample {
    std::vector<double> x;  ///< raw tap values in [0, 255]
    std::vector<double> y;  ///< targets in output units
};

/// Task loss for one output vector and its gradient w.r.t. the output.
inline double task_loss(TaskLoss kind, ValueRange range, std::span<const double> v, std::span<const double> y,
                        std::span<double> dv) {
    const double span = range.hi - range.lo;
    const double inv_m = 1.0 / static_cast<double>(v.size());
    double loss = 0.0;
    for (std::size_t o = 0; o < v.size(); ++o) {
        if (kind == TaskLoss::L1) {
            const double e = (v[o] - y[o]) / span;
            loss += std::abs(e) * inv_m;
            if (!dv.empty()) dv[o] = (e > 0 ? 1.0 : e < 0 ? -1.0 : 0.0) * inv_m / span;
        } else {
            constexpr double eps = 1e-7;
            const double p = std::clamp((v[o] - range.lo) / span, eps, 1.0 - eps);
            const double t = std::clamp((y[o] - range.lo) / span, 0.0, 1.0);
            loss += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p)) * inv_m;
            if (!dv.empty()) dv[o] = (p - t) / (p * (1.0 - p)) * inv_m / span;
        }
    }
    return loss;
}

struct TrainConfig {
    double lambda = 0.0;            ///< storage penalty weight
    double step_min = 1.0;          ///< floor on every lattice step
    double learning_rate = 0.05;    ///< SGD rate for weights
    double step_learning_rate = 0.0;  ///< SGD rate for lattice steps; 0 freezes them
    int epochs = 10;
    int batch_size = 32;
    std::uint64_t seed = 1;
    TaskLoss task_loss = TaskLoss::L1;
    double value_bytes = 1.0;       ///< B_v used in the storage penalty
    double budget_bytes = 0.0;      ///< optional hard cap on continuous S; 0 disables
    bool fill_budget = false;       ///< rescale steps onto S = budget instead of only capping

    void validate() const {
        if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
        if (!(step_min > 0.0)) throw ConfigError("step_min must be > 0");
        if (!(learning_rate >= 0.0) || !(step_learning_rate >= 0.0)) throw ConfigError("learning rates must be >= 0");
        if (batch_size < 1 || epochs < 0) throw ConfigError("batch_size must be >= 1 and epochs >= 0");
    }
};

/// Mean task loss (training-mode forward) + lambda ln S. Noise for sample i is
/// keyed by sample_seed(seed, i). Gradients (of the full objective) go to `grad`.
inline double loss(const TinyNet& net, std::span<const Sample> batch, double lambda, std::uint64_t seed,
                   TaskLoss kind = TaskLoss::L1, double value_bytes = 1.0, TinyNetGrad* grad = nullptr) {
    if (batch.empty()) throw InvalidInput("loss needs a nonempty batch");
    const auto m = static_cast<std::size_t>(net.out_arity());
    std::vector<double> u(static_cast<std::size_t>(net.taps())), out(m), dv(m);
    Tape tape;
    double total = 0.0;
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        fill_noise(sample_seed(seed, i), u);
        net.forward_index(batch[i].x, QuantizerMode::Training, u, out, grad ? &tape : nullptr);
        total += task_loss(kind, net.value_range(), out, batch[i].y, grad ? std::span<double>(dv) : std::span<double>());
        if (grad) {
            for (double& g : dv) g *= inv_n;
            net.backward(tape, dv, *grad, {});
        }
    }
    total *= inv_n;
    total += lambda * log_storage(net.steps(), static_cast<double>(m), value_bytes);
    if (grad && lambda != 0.0)
        for (std::size_t j = 0; j < net.steps().size(); ++j) grad->steps[j] += lambda * log_storage_grad(net.steps()[j]);
    return total;
}

/// Uniform rescaling of the steps so that the continuous S meets the budget:
/// only shrinks S when over budget, or lands on it exactly with `fill`.
inline std::vector<double> project_to_budget(std::vector<double> steps, double entry_arity, double value_bytes,
                                             double budget, bool fill = false) {
    if (budget <= 0.0) return steps;
    const double log_budget = std::log(budget);
    auto log_s = [&](double log_t) {
        double s = std::log(entry_arity * value_bytes);
        for (double b : steps) s += std::log(256.0 / (b * std::exp(log_t)) + 1.0);
        return s;
    };
    if (log_s(0.0) <= log_budget && !fill) return steps;
    if (std::log(entry_arity * value_bytes) >= log_budget) throw BudgetError("budget below a single table entry");
    // log_s is decreasing in log_t.
    double lo = 0.0, hi = 0.0;
    while (log_s(hi) > log_budget) {
        hi += 1.0;
        if (hi > 64.0) throw BudgetError("storage budget unreachable by scaling steps");
    }
    while (log_s(lo) < log_budget) {
        lo -= 1.0;
        if (lo < -64.0) throw BudgetError("storage budget unreachable by scaling steps");
    }
    for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        (log_s(mid) > log_budget ? lo : hi) = mid;
    }
    for (double& b : steps) b *= std::exp(hi);
    return steps;
}

/// Projects steps onto the feasible set: b_j >= step_min, optional budget,
/// float precision (rounded upward so neither constraint is re-violated).
inline std::vector<double> project_steps(std::vector<double> steps, const TrainConfig& cfg, double entry_arity) {
    for (double& b : steps) b = std::max(b, cfg.step_min);
    steps = project_to_budget(std::move(steps), entry_arity, cfg.value_bytes, cfg.budget_bytes, cfg.fill_budget);
    for (double& b : steps) b = std::max(static_cast<double>(float_at_least(b)), static_cast<double>(float_at_least(cfg.step_min)));
    return steps;
}

inline void apply_sgd(TinyNet& net, const TinyNetGrad& g, double lr, double step_lr, const TrainConfig& cfg) {
    auto& layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        for (std::size_t i = 0; i < layers[l].weight.size(); ++i) layers[l].weight[i] -= lr * g.weight[l][i];
        for (std::size_t i = 0; i < layers[l].bias.size(); ++i) layers[l].bias[i] -= lr * g.bias[l][i];
    }
    if (step_lr > 0.0) {
        std::vector<double> steps = net.steps();
        for (std::size_t j = 0; j < steps.size(); ++j) steps[j] -= step_lr * g.steps[j];
        net.set_steps(project_steps(std::move(steps), cfg, net.out_arity()));
    }
}

/// One joint SGD step on weights and steps. Returns the pre-step objective.
inline double train_step(TinyNet& net, std::span<const Sample> batch, const TrainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    auto grad = net.zero_grad();
    const double value = loss(net, batch, cfg.lambda, seed, cfg.task_loss, cfg.value_bytes, &grad);
    if (!std::isfinite(value)) throw DivergenceError("non-finite training loss; reduce the learning rate");
    apply_sgd(net, grad, cfg.learning_rate, cfg.step_learning_rate, cfg);
    return value;
}

/// Runs cfg.epochs passes over the samples in seeded shuffled minibatches.
/// Returns the mean objective per epoch.
inline std::vector<double> fit(TinyNet& net, const std::vector<Sample>& samples, const TrainConfig& cfg) {
    cfg.validate();
    if (samples.empty()) throw InvalidInput("fit needs samples");
    std::vector<std::size_t> order(samples.size());
    std::vector<double> history;
    std::vector<Sample> batch;
    std::uint64_t step = 0;
    for (int e = 0; e < cfg.epochs; ++e) {
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) {
            const auto r = hash_combine(hash_combine(cfg.seed, 0xfeedULL + static_cast<std::uint64_t>(e)), i) % i;
            std::swap(order[i - 1], order[r]);
        }
        double acc = 0.0;
        std::size_t batches = 0;
        for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
            batch.clear();
            for (std::size_t i = s; i < std::min(order.size(), s + static_cast<std::size_t>(cfg.batch_size)); ++i)
                batch.push_back(samples[order[i]]);
            acc += train_step(net, batch, cfg, hash_combine(cfg.seed, step++));
            ++batches;
        }
        history.push_back(acc / static_cast<double>(batches));
    }
    return history;
}

/// Equal steps giving the largest grid whose table fits the byte budget.
inline std::vector<double> init_steps(int d, double budget_bytes, double entry_arity, double value_bytes) {
    if (d < 1) throw InvalidInput("init_steps needs d >= 1");
    const double entry = entry_arity * value_bytes;
    if (!(budget_bytes >= entry)) throw BudgetError("budget below a single table entry");
    auto fits = [&](double m) { return d * std::log(m) + std::log(entry) <= std::log(budget_bytes) + 1e-12; };
    if (!fits(2.0)) throw BudgetError("budget cannot hold a two-point grid per axis");
    double lo = 2.0, hi = 3.0;
    while (fits(hi)) {
        lo = hi;
        hi *= 2.0;
    }
    while (hi - lo > 1.0) {
        const double mid = std::floor((lo + hi) / 2.0);
        (fits(mid) ? lo : hi) = mid;
    }
    // Exact integer confirmation on the boundary.
    auto m = static_cast<std::uint64_t>(lo);
    auto exact_fits = [&](std::uint64_t g) {
        long double s = entry;
        for (int j = 0; j < d; ++j) s *= static_cast<long double>(g);
        return s <= static_cast<long double>(budget_bytes);
    };
    while (!exact_fits(m)) --m;
    while (exact_fits(m + 1)) ++m;
    return std::vector<double>(static_cast<std::size_t>(d), 256.0 / static_cast<double>(m - 1));
}

// ---------------------------------------------------------------------------
// Checkpoint: text header followed by a little-endian f32 parameter block.
//
//   rfelut-net 1
//   pattern idc k=3 dil=1,1 mask=...
//   steps <b_1> ... <b_n>
//   step_min <v>
//   output clamp|sigmoid <lo> <hi>
//   hidden_cap <v>
//   layers <count>
//   layer <in> <out>          (one line per layer)
//   weights <float count>
//   <binary block: per layer, weights row-major then biases>

namespace detail {
inline void write_f32_block(std::ostream& os, const std::vector<double>& v) {
    for (double d : v) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(d));
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
        os.write(b, 4);
    }
}

inline std::vector<double> read_f32_block(std::istream& is, std::size_t count) {
    std::vector<double> v(count);
    for (auto& d : v) {
        unsigned char b[4];
        if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("checkpoint weight block truncated");
        std::uint32_t bits = 0;
        for (int i = 0; i < 4; ++i) bits |= std::uint32_t{b[i]} << (8 * i);
        d = std::bit_cast<float>(bits);
    }
    return v;
}

inline std::string expect_line(std::istream& is, const std::string& key) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("checkpoint ended before '" + key + "'");
    if (line.rfind(key + " ", 0) != 0 && line != key) throw ConfigError("expected '" + key + "' in checkpoint, got '" + line + "'");
    return line.size() > key.size() ? line.substr(key.size() + 1) : std::string();
}
}  // namespace detail

inline void write_checkpoint(std::ostream& os, const TinyNet& net) {
    os << "rfelut-net 1\n";
    os << "pattern " << net.pattern().descriptor() << "\n";
    os.precision(17);
    os << "steps";
    for (double b : net.steps()) os << ' ' << b;
    os << "\nstep_min " << net.step_min() << "\n";
    os << "output " << (net.output_activation() == OutputActivation::Clamp ? "clamp" : "sigmoid") << ' '
       << net.value_range().lo << ' ' << net.value_range().hi << "\n";
    os << "hidden_cap " << net.hidden_cap() << "\n";
    os << "layers " << net.layers().size() << "\n";
    std::size_t count = 0;
    for (const auto& L : net.layers()) {
        os << "layer " << L.in << ' ' << L.out << "\n";
        count += L.weight.size() + L.bias.size();
    }
    os << "weights " << count << "\n";
    for (const auto& L : net.layers()) {
        detail::write_f32_block(os, L.weight);
        detail::write_f32_block(os, L.bias);
    }
}

inline TinyNet read_checkpoint(std::istream& is) {
    if (detail::expect_line(is, "rfelut-net") != "1") throw ConfigError("unsupported net checkpoint version");
    auto pattern = idc::parse_pattern(detail::expect_line(is, "pattern"));
    std::vector<double> steps;
    {
        std::istringstream ss(detail::expect_line(is, "steps"));
        double b;
        while (ss >> b) steps.push_back(b);
    }
    const double step_min = std::stod(detail::expect_line(is, "step_min"));
    std::istringstream out(detail::expect_line(is, "output"));
    std::string act;
    ValueRange range;
    if (!(out >> act >> range.lo >> range.hi) || (act != "clamp" && act != "sigmoid"))
        throw ConfigError("malformed output line in checkpoint");
    const double cap = std::stod(detail::expect_line(is, "hidden_cap"));
    const auto n_layers = std::stoul(detail::expect_line(is, "layers"));
    std::vector<Dense> layers(n_layers);
    for (auto& L : layers) {
        std::istringstream ls(detail::expect_line(is, "layer"));
        if (!(ls >> L.in >> L.out) || L.in <= 0 || L.out <= 0) throw ConfigError("malformed layer line");
    }
    const auto count = std::stoul(detail::expect_line(is, "weights"));
    std::size_t expected = 0;
    for (const auto& L : layers) expected += static_cast<std::size_t>(L.in * L.out + L.out);
    if (count != expected) throw ConfigError("checkpoint weight count disagrees with layer shapes");
    for (auto& L : layers) {
        L.weight = detail::read_f32_block(is, static_cast<std::size_t>(L.in * L.out));
        L.bias = detail::read_f32_block(is, static_cast<std::size_t>(L.out));
    }
    return TinyNet(std::move(pattern), std::move(steps), step_min, std::move(layers),
                   act == "clamp" ? OutputActivation::Clamp : OutputActivation::Sigmoid, range, cap);
}

}  // namespace rfelut::refnet
