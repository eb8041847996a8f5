#pragma once

// Network-to-table compiler: evaluates a trained TinyNet at every point of its
// lattice grid and stores the responses.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rfelut/error.hpp"
#include "rfelut/lut.hpp"
#include "rfelut/parallel.hpp"
#include "rfelut/refnet.hpp"
#include "rfelut/rng.hpp"

namespace rfelut::lutize {

/// Default refusal threshold for table builds (1 GiB).
inline constexpr std::uint64_t kDefaultStorageCap = std::uint64_t{1} << 30;

inline lut::TableHeader header_for(const refnet::TinyNet& net, lut::ValueType value_type) {
    if (!net.steps_are_float()) throw InvalidInput("net steps must be f32-exact before compilation");
    std::vector<float> steps;
    for (double b : net.steps()) steps.push_back(static_cast<float>(b));
    return lut::make_header(steps, static_cast<std::uint32_t>(net.out_arity()), value_type, net.pattern().id());
}

/// Fills entries [begin, end) of `values` (flat-offset order).
inline void enumerate_range(const refnet::TinyNet& net, const lut::TableHeader& h, std::uint64_t begin,
                            std::uint64_t end, std::vector<float>& values) {
    const auto d = static_cast<std::size_t>(h.dim());
    const auto m = static_cast<std::size_t>(h.entry_arity);
    std::vector<double> xq(d), out(m);
    auto index = lut::unflatten(h, begin);
    for (std::uint64_t off = begin; off < end; ++off) {
        for (std::size_t j = 0; j < d; ++j) xq[j] = net.steps()[j] * static_cast<double>(index[j]);
        net.evaluate_stack(xq, out);
        for (std::size_t c = 0; c < m; ++c) values[off * m + c] = lut::quantize_value(out[c], h.value_type);
        for (std::size_t j = d; j-- > 0;) {
            if (static_cast<std::uint64_t>(++index[j]) < h.grid_sizes[j]) break;
            index[j] = 0;
        }
    }
}

/// Enumerates every grid point Bz (inference mode, no noise). Partitioned
/// into contiguous offset ranges; the result does not depend on the partition.
inline lut::LookupTable enumerate_table(const refnet::TinyNet& net, lut::ValueType value_type = lut::ValueType::F32,
                                        std::uint64_t storage_cap = kDefaultStorageCap, std::size_t partitions = 0) {
    auto h = header_for(net, value_type);
    if (h.storage() > storage_cap)
        throw StorageOverflow("table of " + std::to_string(h.storage()) + " bytes exceeds the storage cap");
    const std::uint64_t n = h.entry_count();
    std::vector<float> values(n * h.entry_arity);
    if (partitions == 0) partitions = thread_count();
    parallel_chunks(n, partitions, [&](std::size_t, std::size_t b, std::size_t e) { enumerate_range(net, h, b, e, values); });
    return lut::LookupTable(std::move(h), std::move(values));
}

struct FidelityReport {
    double max_grid_dev = 0.0;           ///< max |table - value-quantized net| over checked grid points
    std::uint64_t grid_points_checked = 0;
    double max_offgrid_dev_nearest = 0.0;  ///< max ||nearest lookup - float stack||_2
    double max_offgrid_dev_interp = 0.0;   ///< max ||interpolated lookup - float stack||_2
    double lipschitz = 0.0;              ///< output Lipschitz constant of the stack
    double offgrid_bound = 0.0;          ///< lipschitz * ||b||_2 / 2 + value quantization
};

inline constexpr std::size_t kSampledGridPoints = 100000;

/// Compares a compiled table against its source net.
/// Grid points: exhaustive for d <= 3, kSampledGridPoints random indices above.
/// Off-grid: trial_count random inputs inside the covered grid range, lookups
/// compared with the unquantized float stack.
inline FidelityReport verify_fidelity(const refnet::TinyNet& net, const lut::LookupTable& table,
                                      std::size_t trial_count, std::uint64_t seed) {
    const auto& h = table.header();
    if (h.dim() != net.taps() || static_cast<int>(h.entry_arity) != net.out_arity())
        throw ShapeError("table shape does not match the net");
    for (int j = 0; j < h.dim(); ++j)
        if (static_cast<double>(h.steps[static_cast<std::size_t>(j)]) != net.steps()[static_cast<std::size_t>(j)])
            throw FidelityError("table steps differ from the net's steps");

    const auto d = static_cast<std::size_t>(h.dim());
    const auto m = static_cast<std::size_t>(h.entry_arity);
    const double tol = lut::value_tolerance(h.value_type);
    FidelityReport rep;
    std::vector<double> x(d), ref(m), got(m), zero(d, 0.0);

    auto check_grid = [&](std::uint64_t off) {
        const auto z = lut::unflatten(h, off);
        for (std::size_t j = 0; j < d; ++j) x[j] = net.steps()[j] * static_cast<double>(z[j]);
        net.forward_index(x, refnet::QuantizerMode::Inference, zero, ref);
        table.lookup_nearest(x, got);
        for (std::size_t c = 0; c < m; ++c) {
            // A faithful entry is exactly the value-quantized response.
            const double expected = lut::quantize_value(ref[c], h.value_type);
            rep.max_grid_dev = std::max(rep.max_grid_dev, std::abs(got[c] - expected));
            const double limit = h.value_type == lut::ValueType::F32 ? std::abs(ref[c]) * 0x1p-24 : tol;
            const double dev = std::abs(got[c] - ref[c]);
            if (dev > limit)
                throw FidelityError("table entry at offset " + std::to_string(off) + " deviates from the net by " +
                                    std::to_string(dev));
        }
        ++rep.grid_points_checked;
    };
    if (d <= 3) {
        for (std::uint64_t off = 0; off < h.entry_count(); ++off) check_grid(off);
    } else {
        for (std::size_t i = 0; i < kSampledGridPoints; ++i)
            check_grid(hash_combine(seed, 0x9e1dULL + i) % h.entry_count());
    }

    rep.lipschitz = net.lipschitz_bound();
    double step_norm = 0.0;
    for (double b : net.steps()) step_norm += b * b;
    rep.offgrid_bound = rep.lipschitz * std::sqrt(step_norm) / 2.0 + tol * std::sqrt(static_cast<double>(m));

    for (std::size_t t = 0; t < trial_count; ++t) {
        for (std::size_t j = 0; j < d; ++j) {
            const double top = std::min(255.0, net.steps()[j] * static_cast<double>(h.grid_sizes[j] - 1));
            x[j] = top * (centered_uniform(seed, (t * d + j) * 2 + 1) + 0.5);
        }
        net.evaluate_stack(x, ref);
        auto dist = [&] {
            double s = 0.0;
            for (std::size_t c = 0; c < m; ++c) s += (got[c] - ref[c]) * (got[c] - ref[c]);
            return std::sqrt(s);
        };
        table.lookup_nearest(x, got);
        rep.max_offgrid_dev_nearest = std::max(rep.max_offgrid_dev_nearest, dist());
        if (d <= 4) {
            table.lookup_interpolated(x, got);
            rep.max_offgrid_dev_interp = std::max(rep.max_offgrid_dev_interp, dist());
        }
    }
    return rep;
}

}  // namespace rfelut::lutize
