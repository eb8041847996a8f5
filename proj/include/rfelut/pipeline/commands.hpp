#pragma once

// Subcommand implementations behind the rfe_lut tool. Each returns normally
// or throws; exit_code_for() maps exceptions onto the documented codes.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rfelut/error.hpp"
#include "rfelut/pipeline/config.hpp"
#include "rfelut/pipeline/image_io.hpp"
#include "rfelut/pipeline/model.hpp"
#include "rfelut/pipeline/synthetic.hpp"
#include "rfelut/pipeline/train.hpp"

namespace rfelut::pipeline {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitFidelity = 3, kExitIo = 4 };

/// I/O and file-format failures -> 4, fidelity -> 3, everything else -> 2.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const FidelityError*>(&e)) return kExitFidelity;
    if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const ParseError*>(&e)) return kExitIo;
    return kExitConfig;
}

/// Index offset separating held-out synthetic pairs from training pairs.
inline constexpr std::size_t kTestIndexBase = 1'000'000;

inline std::vector<Pair> training_data(const PipelineConfig& c, std::uint64_t seed) {
    return c.data_dir.empty() ? make_dataset(c.task, c.train_count, c.size, seed) : load_dataset(c.data_dir);
}

inline std::vector<Pair> test_data(const PipelineConfig& c, std::uint64_t seed) {
    return c.test_dir.empty() ? make_dataset(c.task, c.test_count, c.size, seed, kTestIndexBase) : load_dataset(c.test_dir);
}

inline std::string ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (!std::filesystem::is_directory(dir)) throw IoError("cannot create output directory " + dir);
    return dir;
}

inline std::string out_path(const PipelineConfig& c, const std::string& name) {
    return (std::filesystem::path(ensure_out_dir(c.out_dir)) / name).string();
}

inline std::string fmt(double v, int decimals = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("short write to " + path);
}

// ---------------------------------------------------------------------------

/// Trains the configured model and writes <out>/model.graph and
/// <out>/train_log.csv. Returns the checkpoint path.
inline std::string cmd_train(const PipelineConfig& c, ulut::ULutGraph* trained = nullptr) {
    std::vector<double> history;
    auto g = train_model(c.model, training_data(c, c.seed), c.train, &history);
    std::string log = "epoch,objective\n";
    for (std::size_t e = 0; e < history.size(); ++e) log += std::to_string(e + 1) + "," + fmt(history[e], 6) + "\n";
    write_text(out_path(c, "train_log.csv"), log);
    const auto path = out_path(c, "model.graph");
    save_graph(path, c.task, g);
    if (trained) *trained = std::move(g);
    return path;
}

/// Compiles a checkpoint into a bundle after checking fidelity.
inline CompileReport cmd_lutize(const std::string& checkpoint, const std::string& bundle, lut::ValueType vt,
                                std::size_t trials = 1000, std::uint64_t seed = 1) {
    const auto tg = load_graph(checkpoint);
    CompileReport rep;
    const auto compiled = compile_graph(tg.graph, vt, trials, seed, &rep);
    save_bundle(bundle, tg.task, compiled);
    return rep;
}

/// Runs a bundle on one image: HR output for sr4, {0, 255} mask for seg.
inline void cmd_infer(const std::string& bundle, const std::string& input, const std::string& output,
                      ulut::LookupMode lookup = ulut::LookupMode::Interpolated) {
    const auto tg = load_bundle(bundle);
    auto img = read_image(input);
    if (img.channels() != 1) throw ShapeError("models take single-channel (P5) input");
    auto out = predict(tg.graph, tg.task, img, {lvq::QuantizerMode::Inference, lookup, 0});
    write_image(output, tg.task == Task::Seg ? binarize(out) : out);
}

// ---------------------------------------------------------------------------
// bench

struct BenchTiming {
    double float_ms = 0.0;   ///< float TinyNet graph, per image
    double table_ms = 0.0;   ///< compiled graph, per image, load excluded
    double load_ms = 0.0;    ///< bundle parse
    int size = 0;
};

struct BenchResult {
    std::string csv;         ///< per-image metrics (deterministic)
    std::string timing_csv;  ///< wall-clock (machine dependent)
    std::uint64_t storage_bytes = 0;
    double mean_float = 0.0;   ///< PSNR (sr4) or Dice (seg), float network
    double mean_nearest = 0.0;
    double mean_interp = 0.0;
    BenchTiming timing;
};

/// Median of `reps` timed runs of fn(), in ms.
template <typename Fn>
double time_ms(int reps, Fn&& fn, bool warm_up = true) {
    if (warm_up) fn();
    std::vector<double> t;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        t.push_back(elapsed_ms(t0));
    }
    std::sort(t.begin(), t.end());
    return t[t.size() / 2];
}

/// Times float-network and table inference on one bench_size^2 input.
inline BenchTiming time_inference(const ulut::ULutGraph& net_graph, const std::string& bundle_path, int side,
                                  ulut::LookupMode lookup, int reps = 5) {
    BenchTiming t;
    t.size = side;
    const auto img = make_pair(Task::Seg, std::max(32, side), 0xbe7c, 0).input;
    t.load_ms = time_ms(1, [&] { (void)load_bundle(bundle_path); }, false);
    const auto tg = load_bundle(bundle_path);
    t.float_ms = time_ms(reps, [&] { (void)net_graph.forward(img, ulut::float_eval()); });
    t.table_ms = time_ms(reps, [&] { (void)tg.graph.forward(img, {lvq::QuantizerMode::Inference, lookup, 0}); });
    return t;
}

inline std::string bundle_for(const PipelineConfig& c, const std::string& checkpoint) {
    if (!c.bundle.empty()) return c.bundle;
    const auto path = out_path(c, "model.bundle");
    cmd_lutize(checkpoint, path, c.model.value_type, c.fidelity_trials, c.seed);
    return path;
}

/// Per-image metrics for the float network and both lookup modes, storage of
/// the bundle, and separate timing of bundle load and table inference.
/// Trains and compiles first unless `checkpoint` / `bundle` are given.
inline BenchResult cmd_bench(const PipelineConfig& c) {
    const std::string ckpt = c.checkpoint.empty() ? cmd_train(c) : c.checkpoint;
    const auto net = load_graph(ckpt);
    if (net.task != c.task) throw ConfigError("checkpoint task differs from the config task");
    const std::string bundle_path = bundle_for(c, ckpt);
    const auto tables = load_bundle(bundle_path);
    if (tables.task != c.task) throw ConfigError("bundle task differs from the config task");

    BenchResult r;
    r.storage_bytes = ulut::actual_storage(tables.graph);
    const auto test = test_data(c, c.seed);
    const ulut::EvalOptions nearest{lvq::QuantizerMode::Inference, ulut::LookupMode::Nearest, 0};
    const ulut::EvalOptions interp{lvq::QuantizerMode::Inference, ulut::LookupMode::Interpolated, 0};
    const auto& chosen = c.lookup == ulut::LookupMode::Nearest ? nearest : interp;
    const std::string storage = std::to_string(r.storage_bytes);
    std::string csv;
    if (c.task == Task::Sr4) {
        struct Row { SrScores f, n, i; };
        const auto rows = map_images<Row>(test.size(), [&](std::size_t k) {
            const auto& p = test[k];
            return Row{score_sr(predict(net.graph, c.task, p.input, ulut::float_eval()), p.target),
                       score_sr(predict(tables.graph, c.task, p.input, nearest), p.target),
                       score_sr(predict(tables.graph, c.task, p.input, interp), p.target)};
        });
        csv = "image,psnr_float,psnr_nearest,psnr_interp,ssim_float,ssim_interp,storage_bytes\n";
        double sf = 0, sn = 0, si = 0, qf = 0, qi = 0;
        for (std::size_t k = 0; k < rows.size(); ++k) {
            const auto& w = rows[k];
            csv += std::to_string(k) + "," + fmt(w.f.psnr) + "," + fmt(w.n.psnr) + "," + fmt(w.i.psnr) + "," +
                   fmt(w.f.ssim) + "," + fmt(w.i.ssim) + "," + storage + "\n";
            sf += w.f.psnr, sn += w.n.psnr, si += w.i.psnr, qf += w.f.ssim, qi += w.i.ssim;
        }
        const double n = static_cast<double>(rows.size());
        r.mean_float = sf / n, r.mean_nearest = sn / n, r.mean_interp = si / n;
        csv += "mean," + fmt(sf / n) + "," + fmt(sn / n) + "," + fmt(si / n) + "," + fmt(qf / n) + "," + fmt(qi / n) +
               "," + storage + "\n";
    } else {
        struct Row { SegScores f, n, i, t; };
        const auto rows = map_images<Row>(test.size(), [&](std::size_t k) {
            const auto& p = test[k];
            const auto sn = score_seg(predict(tables.graph, c.task, p.input, nearest), p.target);
            const auto si = score_seg(predict(tables.graph, c.task, p.input, interp), p.target);
            return Row{score_seg(predict(net.graph, c.task, p.input, ulut::float_eval()), p.target), sn, si,
                       &chosen == &nearest ? sn : si};
        });
        csv = "image,dsc_float,dsc_nearest,dsc_interp,HD,PRE,SEN,MIOU,storage_bytes\n";
        std::vector<SegScores> f, nn, ii, tt;
        for (std::size_t k = 0; k < rows.size(); ++k) {
            const auto& w = rows[k];
            csv += std::to_string(k) + "," + fmt(w.f.dsc) + "," + fmt(w.n.dsc) + "," + fmt(w.i.dsc) + "," +
                   fmt(w.t.hd) + "," + fmt(w.t.pre) + "," + fmt(w.t.sen) + "," + fmt(w.t.miou) + "," + storage + "\n";
            f.push_back(w.f), nn.push_back(w.n), ii.push_back(w.i), tt.push_back(w.t);
        }
        const auto mf = mean_seg(f), mn = mean_seg(nn), mi = mean_seg(ii), mt = mean_seg(tt);
        r.mean_float = mf.dsc, r.mean_nearest = mn.dsc, r.mean_interp = mi.dsc;
        csv += "mean," + fmt(mf.dsc) + "," + fmt(mn.dsc) + "," + fmt(mi.dsc) + "," + fmt(mt.hd) + "," + fmt(mt.pre) +
               "," + fmt(mt.sen) + "," + fmt(mt.miou) + "," + storage + "\n";
    }
    r.csv = csv;
    write_text(out_path(c, "bench.csv"), csv);

    r.timing = time_inference(net.graph, bundle_path, c.bench_size, c.lookup);
    r.timing_csv = "size,float_ms,table_ms,table_load_ms,lookup,speedup\n" + std::to_string(r.timing.size) + "," +
                   fmt(r.timing.float_ms, 3) + "," + fmt(r.timing.table_ms, 3) + "," + fmt(r.timing.load_ms, 3) + "," +
                   (c.lookup == ulut::LookupMode::Nearest ? "nearest" : "interpolated") + "," +
                   fmt(r.timing.float_ms / std::max(r.timing.table_ms, 1e-9), 2) + "\n";
    write_text(out_path(c, "bench_timing.csv"), r.timing_csv);
    return r;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
    Variant variant = Variant::BaselineSq;
    SegScores seg;   ///< mean over seeds (seg)
    SrScores sr;     ///< mean over seeds (sr4)
    std::vector<double> per_seed;  ///< Dice (seg) or PSNR (sr4) per seed
    std::uint64_t storage_bytes = 0;  ///< largest over seeds
};

struct AblationResult {
    std::vector<AblationRow> rows;
    std::string csv;
    std::string seeds_csv;
};

/// Trains, compiles and scores every variant for every seed. Synthetic
/// training and test sets are drawn per seed; scores use table inference.
inline AblationResult cmd_ablate(const PipelineConfig& c) {
    AblationResult res;
    const ulut::EvalOptions opt{lvq::QuantizerMode::Inference, c.lookup, 0};
    res.csv = c.task == Task::Seg ? "variant,HD,PRE,DSC,SEN,MIOU,storage_bytes\n" : "variant,PSNR,SSIM,storage_bytes\n";
    res.seeds_csv = c.task == Task::Seg ? "variant,seed,HD,PRE,DSC,SEN,MIOU,storage_bytes\n"
                                        : "variant,seed,PSNR,SSIM,storage_bytes\n";
    for (auto v : all_variants()) {
        AblationRow row;
        row.variant = v;
        std::vector<SegScores> seg_means;
        std::vector<SrScores> sr_means;
        for (auto seed : c.seeds) {
            PipelineConfig cv = c;
            cv.variant = cv.model.variant = v;
            cv.seed = cv.train.seed = seed;
            const auto g = train_model(cv.model, training_data(cv, seed), cv.train);
            const auto tables = compile_graph(g, cv.model.value_type, cv.fidelity_trials, seed);
            const auto storage = ulut::actual_storage(tables);
            row.storage_bytes = std::max(row.storage_bytes, storage);
            const auto test = test_data(cv, seed);
            const std::string prefix = variant_name(v) + "," + std::to_string(seed) + ",";
            if (c.task == Task::Seg) {
                const auto s = mean_seg(map_images<SegScores>(test.size(), [&](std::size_t k) {
                    return score_seg(predict(tables, c.task, test[k].input, opt), test[k].target);
                }));
                seg_means.push_back(s);
                row.per_seed.push_back(s.dsc);
                res.seeds_csv += prefix + fmt(s.hd) + "," + fmt(100 * s.pre) + "," + fmt(100 * s.dsc) + "," +
                                 fmt(100 * s.sen) + "," + fmt(100 * s.miou) + "," + std::to_string(storage) + "\n";
            } else {
                const auto scores = map_images<SrScores>(test.size(), [&](std::size_t k) {
                    return score_sr(predict(tables, c.task, test[k].input, opt), test[k].target);
                });
                SrScores s;
                for (const auto& x : scores) s.psnr += x.psnr / scores.size(), s.ssim += x.ssim / scores.size();
                sr_means.push_back(s);
                row.per_seed.push_back(s.psnr);
                res.seeds_csv += prefix + fmt(s.psnr) + "," + fmt(s.ssim) + "," + std::to_string(storage) + "\n";
            }
        }
        const std::string st = std::to_string(row.storage_bytes);
        if (c.task == Task::Seg) {
            row.seg = mean_seg(seg_means);
            res.csv += variant_name(v) + "," + fmt(row.seg.hd) + "," + fmt(100 * row.seg.pre) + "," +
                       fmt(100 * row.seg.dsc) + "," + fmt(100 * row.seg.sen) + "," + fmt(100 * row.seg.miou) + "," + st + "\n";
        } else {
            for (const auto& s : sr_means) row.sr.psnr += s.psnr / sr_means.size(), row.sr.ssim += s.ssim / sr_means.size();
            res.csv += variant_name(v) + "," + fmt(row.sr.psnr) + "," + fmt(row.sr.ssim) + "," + st + "\n";
        }
        res.rows.push_back(std::move(row));
    }
    write_text(out_path(c, "ablate.csv"), res.csv);
    write_text(out_path(c, "ablate_seeds.csv"), res.seeds_csv);
    return res;
}

}  // namespace rfelut::pipeline
