#pragma once

// Model variants, graph construction, compilation and the on-disk formats.
//
// Every variant is a ULutGraph over a 1-channel input:
//   baseline-sq  one pool, regular patterns, fixed uniform steps
//   +lvq         same, steps learned under the same per-table budget
//   +lvq+idc     one pool, irregular dilated patterns, learned steps
//   +lvq+ulut    U-shaped cascade, regular patterns, learned steps
//   full         U-shaped cascade, irregular dilated patterns, learned steps
// sr4 predicts a 4x4 HR block per LR pixel (16 outputs, depth-to-space);
// seg predicts a foreground probability scaled to [0, 255].

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rfelut/error.hpp"
#include "rfelut/feature_map.hpp"
#include "rfelut/idc.hpp"
#include "rfelut/lut.hpp"
#include "rfelut/lutize.hpp"
#include "rfelut/pipeline/synthetic.hpp"
#include "rfelut/refnet.hpp"
#include "rfelut/ulut.hpp"

namespace rfelut::pipeline {

enum class Variant { BaselineSq, Lvq, LvqIdc, LvqUlut, Full };

inline const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v{Variant::BaselineSq, Variant::Lvq, Variant::LvqIdc, Variant::LvqUlut,
                                        Variant::Full};
    return v;
}

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::BaselineSq: return "baseline-sq";
        case Variant::Lvq: return "+lvq";
        case Variant::LvqIdc: return "+lvq+idc";
        case Variant::LvqUlut: return "+lvq+ulut";
        case Variant::Full: return "full";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    for (auto v : all_variants())
        if (variant_name(v) == s) return v;
    throw ConfigError("unknown variant '" + s + "'");
}

inline bool learns_steps(Variant v) { return v != Variant::BaselineSq; }
inline bool uses_idc(Variant v) { return v == Variant::LvqIdc || v == Variant::Full; }
inline bool uses_ulut(Variant v) { return v == Variant::LvqUlut || v == Variant::Full; }

inline int task_outputs(Task t) { return t == Task::Sr4 ? kSrScale * kSrScale : 1; }

struct ModelSpec {
    Task task = Task::Seg;
    Variant variant = Variant::Full;
    int levels = 3;          ///< cascade depth for the U-LUT variants
    int branches = 2;        ///< K per pool
    int channels = 2;        ///< width of inner pools and links
    std::vector<int> hidden{16};
    int grid = 9;            ///< uniform grid points per axis defining the per-table budget
    lut::ValueType value_type = lut::ValueType::U8;
};

/// Dilations used by the IDC variants, cycled over branches.
inline const std::vector<idc::Dilation>& idc_dilations() {
    static const std::vector<idc::Dilation> d{{1, 2}, {2, 1}, {2, 3}, {3, 2}};
    return d;
}

/// Branch k at level l (both 0-based). Regular and IDC variants share tap
/// shapes and differ only in dilation. sr4 keeps the 2x2 block on its first
/// branch.
inline idc::SamplingPattern branch_pattern(const ModelSpec& s, int level, int k) {
    using namespace idc::library;
    if (s.task == Task::Sr4 && level == 0 && k == 0) return block2x2();
    const auto& dils = idc_dilations();
    const idc::Dilation d = uses_idc(s.variant) ? dils[static_cast<std::size_t>(level + k) % dils.size()]
                                                : idc::Dilation{1, 1};
    return (level + k) % 2 == 0 ? tee(d) : diagonal(d);
}

/// Byte budget of one branch table with `taps` inputs and `arity` outputs.
inline double branch_budget(const ModelSpec& s, int taps, int arity) {
    return std::pow(static_cast<double>(s.grid), taps) * arity * static_cast<double>(lut::bytes_per_value(s.value_type));
}

inline ulut::ULutGraph build_graph(const ModelSpec& s, std::uint64_t seed) {
    if (s.levels < 1 || s.branches < 1 || s.channels < 1) throw ConfigError("levels, branches and channels must be >= 1");
    if (s.grid < 2) throw ConfigError("grid must be >= 2");
    const int L = uses_ulut(s.variant) ? s.levels : 1;
    const int out = task_outputs(s.task);
    std::vector<ulut::LutPool> pools;
    std::vector<ulut::Linear1x1> links;
    for (int l = 0; l < L; ++l) {
        const bool last = l + 1 == L;
        ulut::LutPool pool;
        pool.in_channels = l == 0 ? 1 : s.channels;
        const int arity = last ? out : s.channels;
        const auto act = last && s.task == Task::Seg ? refnet::OutputActivation::Sigmoid : refnet::OutputActivation::Clamp;
        for (int k = 0; k < s.branches; ++k) {
            auto pattern = branch_pattern(s, l, k);
            const int taps = pattern.tap_count();
            const auto steps = refnet::init_steps(taps, branch_budget(s, taps, arity), arity,
                                                  static_cast<double>(lut::bytes_per_value(s.value_type)));
            pool.branches.emplace_back(refnet::TinyNet::random(std::move(pattern), steps, 1.0, arity, s.hidden,
                                                               hash_combine(seed, static_cast<std::uint64_t>(l * 64 + k)),
                                                               act));
        }
        pools.push_back(std::move(pool));
    }
    for (int l = 1; l < L; ++l) {
        const bool decoder = l > L / 2 && l < L;
        links.push_back(ulut::Linear1x1::averaging(decoder ? 2 * s.channels : s.channels, s.channels));
    }
    return ulut::ULutGraph(std::move(pools), std::move(links), 1);
}

// ---------------------------------------------------------------------------
// Task plumbing

/// H x W x 1 image -> (H/4) x (W/4) x 16, channel 4*j+i holds pixel (4x+i, 4y+j).
inline FeatureMap space_to_depth(const FeatureMap& hr) {
    const int s = kSrScale;
    if (hr.channels() != 1 || hr.width() % s || hr.height() % s) throw ShapeError("space_to_depth needs 1 channel, size % 4 == 0");
    FeatureMap out(hr.height() / s, hr.width() / s, s * s);
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x)
            for (int j = 0; j < s; ++j)
                for (int i = 0; i < s; ++i) out.at(x, y, j * s + i) = hr.at(x * s + i, y * s + j);
    return out;
}

inline FeatureMap depth_to_space(const FeatureMap& f) {
    const int s = kSrScale;
    if (f.channels() != s * s) throw ShapeError("depth_to_space needs 16 channels");
    FeatureMap hr(f.height() * s, f.width() * s, 1);
    for (int y = 0; y < f.height(); ++y)
        for (int x = 0; x < f.width(); ++x)
            for (int j = 0; j < s; ++j)
                for (int i = 0; i < s; ++i) hr.at(x * s + i, y * s + j) = f.at(x, y, j * s + i);
    return hr;
}

inline ulut::GraphSample to_graph_sample(Task task, const Pair& p) {
    return {p.input, task == Task::Sr4 ? space_to_depth(p.target) : p.target};
}

/// Task-level prediction: HR image for sr4, [0, 255] probability map for seg.
inline FeatureMap predict(const ulut::ULutGraph& g, Task task, const FeatureMap& input, const ulut::EvalOptions& opt) {
    auto out = g.forward(input, opt);
    return task == Task::Sr4 ? depth_to_space(out) : out;
}

inline FeatureMap binarize(const FeatureMap& prob) {
    FeatureMap m = prob;
    for (double& v : m.data()) v = v > 127.5 ? 255.0 : 0.0;
    return m;
}

// ---------------------------------------------------------------------------
// Compilation

struct CompileReport {
    std::uint64_t storage_bytes = 0;
    double max_grid_dev = 0.0;
    double max_offgrid_dev_nearest = 0.0;
    double worst_offgrid_margin = 0.0;  ///< max over branches of dev / bound (<= 1 passes)
};

/// Enumerates every branch into a table, checking fidelity; links are kept.
/// Throws FidelityError on any failed check.
inline ulut::ULutGraph compile_graph(const ulut::ULutGraph& g, lut::ValueType vt, std::size_t trials = 1000,
                                     std::uint64_t seed = 1, CompileReport* report = nullptr) {
    std::vector<ulut::LutPool> pools;
    CompileReport rep;
    for (std::size_t l = 0; l < g.pools().size(); ++l) {
        ulut::LutPool pool;
        pool.in_channels = g.pools()[l].in_channels;
        for (std::size_t k = 0; k < g.pools()[l].branches.size(); ++k) {
            const auto* net = g.pools()[l].branches[k].net();
            if (!net) throw InvalidInput("graph is already compiled");
            auto table = lutize::enumerate_table(*net, vt);
            const auto f = lutize::verify_fidelity(*net, table, trials, hash_combine(seed, l * 64 + k));
            if (f.max_offgrid_dev_nearest > f.offgrid_bound)
                throw FidelityError("off-grid deviation above the Lipschitz bound in level " + std::to_string(l + 1) +
                                    " branch " + std::to_string(k + 1));
            rep.storage_bytes += table.header().storage();
            rep.max_grid_dev = std::max(rep.max_grid_dev, f.max_grid_dev);
            rep.max_offgrid_dev_nearest = std::max(rep.max_offgrid_dev_nearest, f.max_offgrid_dev_nearest);
            if (f.offgrid_bound > 0)
                rep.worst_offgrid_margin = std::max(rep.worst_offgrid_margin, f.max_offgrid_dev_nearest / f.offgrid_bound);
            pool.branches.emplace_back(ulut::CompiledUnit{net->pattern(), std::move(table)});
        }
        pools.push_back(std::move(pool));
    }
    if (report) *report = rep;
    return ulut::ULutGraph(std::move(pools), g.links(), g.input_channels());
}

// ---------------------------------------------------------------------------
// Files. Both formats are a line-oriented text header with embedded binary
// blocks:
//
//   rfelut-graph 1 | rfelut-bundle 1
//   task <sr4|seg>
//   input_channels <c>
//   levels <L>
//   pool <l> <in_channels> <K>            (L lines)
//   link <l> <in> <out>                   (L-1 lines, then in*out+out LE f32)
//   branch <l> <k>                        (graph: a TinyNet checkpoint follows)
//   table <l> <k> <byte count> <pattern>  (bundle: that many table bytes follow)

namespace detail {

inline void write_links(std::ostream& os, const ulut::ULutGraph& g) {
    for (std::size_t i = 0; i < g.links().size(); ++i) {
        const auto& W = g.links()[i];
        os << "link " << i + 1 << ' ' << W.in << ' ' << W.out << '\n';
        refnet::detail::write_f32_block(os, W.weight);
        refnet::detail::write_f32_block(os, W.bias);
    }
}

struct GraphHeader {
    Task task = Task::Seg;
    int input_channels = 1;
    std::vector<std::pair<int, int>> pools;  ///< (in_channels, K)
    std::vector<ulut::Linear1x1> links;
};

inline GraphHeader read_header(std::istream& is, const std::string& magic) {
    using refnet::detail::expect_line;
    if (expect_line(is, magic) != "1") throw ConfigError("unsupported " + magic + " version");
    GraphHeader h;
    h.task = parse_task(expect_line(is, "task"));
    h.input_channels = std::stoi(expect_line(is, "input_channels"));
    const int L = std::stoi(expect_line(is, "levels"));
    if (L < 1 || L > 64) throw ConfigError("level count out of range");
    for (int l = 1; l <= L; ++l) {
        std::istringstream ss(expect_line(is, "pool"));
        int idx = 0, in = 0, k = 0;
        if (!(ss >> idx >> in >> k) || idx != l || in < 1 || k < 1) throw ConfigError("malformed pool line");
        h.pools.emplace_back(in, k);
    }
    for (int l = 1; l < L; ++l) {
        std::istringstream ss(expect_line(is, "link"));
        int idx = 0;
        ulut::Linear1x1 W;
        if (!(ss >> idx >> W.in >> W.out) || idx != l || W.in < 1 || W.out < 1) throw ConfigError("malformed link line");
        W.weight = refnet::detail::read_f32_block(is, static_cast<std::size_t>(W.in * W.out));
        W.bias = refnet::detail::read_f32_block(is, static_cast<std::size_t>(W.out));
        h.links.push_back(std::move(W));
    }
    return h;
}

inline void write_header(std::ostream& os, const std::string& magic, Task task, const ulut::ULutGraph& g) {
    os << magic << " 1\ntask " << task_name(task) << "\ninput_channels " << g.input_channels() << "\nlevels "
       << g.levels() << '\n';
    for (int l = 1; l <= g.levels(); ++l)
        os << "pool " << l << ' ' << g.pool(l).in_channels << ' ' << g.pool(l).branches.size() << '\n';
    write_links(os, g);
}

inline std::pair<int, int> branch_line(std::istream& is, const std::string& key, std::string* rest) {
    std::istringstream ss(refnet::detail::expect_line(is, key));
    int l = 0, k = 0;
    if (!(ss >> l >> k)) throw ConfigError("malformed " + key + " line");
    if (rest) std::getline(ss >> std::ws, *rest);
    return {l, k};
}

}  // namespace detail

struct TaskGraph {
    Task task = Task::Seg;
    ulut::ULutGraph graph;
};

inline void write_graph(std::ostream& os, Task task, const ulut::ULutGraph& g) {
    detail::write_header(os, "rfelut-graph", task, g);
    for (int l = 1; l <= g.levels(); ++l)
        for (std::size_t k = 0; k < g.pool(l).branches.size(); ++k) {
            const auto* net = g.pool(l).branches[k].net();
            if (!net) throw InvalidInput("only TinyNet graphs are written as checkpoints");
            os << "branch " << l << ' ' << k + 1 << '\n';
            refnet::write_checkpoint(os, *net);
        }
}

inline TaskGraph read_graph(std::istream& is) {
    auto h = detail::read_header(is, "rfelut-graph");
    std::vector<ulut::LutPool> pools;
    for (std::size_t l = 0; l < h.pools.size(); ++l) {
        ulut::LutPool pool;
        pool.in_channels = h.pools[l].first;
        for (int k = 0; k < h.pools[l].second; ++k) {
            const auto [li, ki] = detail::branch_line(is, "branch", nullptr);
            if (li != static_cast<int>(l) + 1 || ki != k + 1) throw ConfigError("branch records out of order");
            pool.branches.emplace_back(refnet::read_checkpoint(is));
        }
        pools.push_back(std::move(pool));
    }
    return {h.task, ulut::ULutGraph(std::move(pools), std::move(h.links), h.input_channels)};
}

inline void write_bundle(std::ostream& os, Task task, const ulut::ULutGraph& g) {
    detail::write_header(os, "rfelut-bundle", task, g);
    for (int l = 1; l <= g.levels(); ++l)
        for (std::size_t k = 0; k < g.pool(l).branches.size(); ++k) {
            const auto* c = g.pool(l).branches[k].compiled();
            if (!c) throw InvalidInput("bundle needs a compiled graph");
            const auto bytes = lut::serialize(c->table);
            os << "table " << l << ' ' << k + 1 << ' ' << bytes.size() << ' ' << c->pattern.descriptor() << '\n';
            os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        }
}

inline TaskGraph read_bundle(std::istream& is) {
    auto h = detail::read_header(is, "rfelut-bundle");
    std::vector<ulut::LutPool> pools;
    for (std::size_t l = 0; l < h.pools.size(); ++l) {
        ulut::LutPool pool;
        pool.in_channels = h.pools[l].first;
        for (int k = 0; k < h.pools[l].second; ++k) {
            std::string rest;
            const auto [li, ki] = detail::branch_line(is, "table", &rest);
            if (li != static_cast<int>(l) + 1 || ki != k + 1) throw ConfigError("table records out of order");
            std::istringstream ss(rest);
            std::size_t n = 0;
            if (!(ss >> n)) throw ConfigError("malformed table line");
            std::string desc;
            std::getline(ss >> std::ws, desc);
            auto pattern = idc::parse_pattern(desc);
            std::vector<std::uint8_t> bytes(n);
            if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n)))
                throw IoError("bundle truncated inside a table");
            pool.branches.emplace_back(ulut::CompiledUnit{std::move(pattern), lut::deserialize(bytes)});
        }
        pools.push_back(std::move(pool));
    }
    return {h.task, ulut::ULutGraph(std::move(pools), std::move(h.links), h.input_channels)};
}

/// Malformed files surface as IoError (or ParseError for a bad table block).
template <typename Fn>
auto with_input_file(const std::string& path, Fn&& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    try {
        return fn(in);
    } catch (const IoError&) {
        throw;
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {  // includes std::stoi failures and absurd sizes
        throw IoError(path + ": " + e.what());
    }
}

template <typename Fn>
void with_output_file(const std::string& path, Fn&& fn) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    fn(out);
    if (!out) throw IoError("short write to " + path);
}

inline TaskGraph load_graph(const std::string& path) {
    return with_input_file(path, [](std::istream& is) { return read_graph(is); });
}
inline TaskGraph load_bundle(const std::string& path) {
    return with_input_file(path, [](std::istream& is) { return read_bundle(is); });
}
inline void save_graph(const std::string& path, Task task, const ulut::ULutGraph& g) {
    with_output_file(path, [&](std::ostream& os) { write_graph(os, task, g); });
}
inline void save_bundle(const std::string& path, Task task, const ulut::ULutGraph& g) {
    with_output_file(path, [&](std::ostream& os) { write_bundle(os, task, g); });
}

}  // namespace rfelut::pipeline
