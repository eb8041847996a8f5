#pragma once

// Procedural stand-in datasets.
//
// sr4: textured HR tiles (oriented gratings, shaded discs and bars) paired
//      with x4 box-downsampled LR tiles.
// seg: small soft-edged elliptical blobs on a noisy background, with the
//      exact blob interiors as {0, 255} masks.
//
// Everything is drawn from a counter-based generator, so output depends only
// on (task, index, size, seed).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "rfelut/error.hpp"
#include "rfelut/feature_map.hpp"
#include "rfelut/pipeline/image_io.hpp"
#include "rfelut/rng.hpp"

namespace rfelut::pipeline {

enum class Task { Sr4, Seg };

inline std::string task_name(Task t) { return t == Task::Sr4 ? "sr4" : "seg"; }

inline Task parse_task(const std::string& s) {
    if (s == "sr4") return Task::Sr4;
    if (s == "seg") return Task::Seg;
    throw ConfigError("unknown task '" + s + "' (expected sr4 or seg)");
}

/// Input/target pair. sr4: LR input, HR target. seg: image, mask.
struct Pair {
    FeatureMap input;
    FeatureMap target;
};

inline constexpr int kSrScale = 4;

class Draw {
public:
    explicit Draw(std::uint64_t seed) : seed_(seed) {}
    double uniform() { return centered_uniform(seed_, counter_++) + 0.5; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal() {
        const double u1 = std::max(uniform(), 1e-300);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
    int integer(int lo, int hi) { return lo + static_cast<int>(uniform() * (hi - lo + 1)) % (hi - lo + 1); }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

inline void round_8bit(FeatureMap& f) {
    for (double& v : f.data()) v = std::clamp(std::round(v), 0.0, 255.0);
}

inline FeatureMap box_downsample(const FeatureMap& hr, int s) {
    if (hr.width() % s || hr.height() % s) throw ShapeError("image size is not a multiple of the scale");
    FeatureMap lr(hr.height() / s, hr.width() / s, hr.channels());
    for (int y = 0; y < lr.height(); ++y)
        for (int x = 0; x < lr.width(); ++x)
            for (int c = 0; c < hr.channels(); ++c) {
                double acc = 0.0;
                for (int j = 0; j < s; ++j)
                    for (int i = 0; i < s; ++i) acc += hr.at(x * s + i, y * s + j, c);
                lr.at(x, y, c) = acc / (s * s);
            }
    round_8bit(lr);
    return lr;
}

inline Pair make_sr_pair(int size, std::uint64_t seed) {
    Draw r(seed);
    FeatureMap hr(size, size, 1, r.uniform(60, 190));
    const int gratings = r.integer(1, 3);
    for (int g = 0; g < gratings; ++g) {
        const double theta = r.uniform(0, std::numbers::pi), period = r.uniform(6, 40), amp = r.uniform(10, 45);
        const double phase = r.uniform(0, 2 * std::numbers::pi), c = std::cos(theta), s = std::sin(theta);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) hr.at(x, y) += amp * std::sin(2 * std::numbers::pi * (c * x + s * y) / period + phase);
    }
    const int shapes = r.integer(2, 6);
    for (int k = 0; k < shapes; ++k) {
        const double cx = r.uniform(0, size), cy = r.uniform(0, size), rad = r.uniform(3, size / 3.0);
        const double level = r.uniform(-80, 80), edge = r.uniform(0.4, 2.0);
        const bool bar = r.uniform() < 0.4;
        const double theta = r.uniform(0, std::numbers::pi), c = std::cos(theta), s = std::sin(theta);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                const double d = bar ? std::abs(c * dx + s * dy) - rad / 3 : std::hypot(dx, dy) - rad;
                hr.at(x, y) += level / (1.0 + std::exp(d / edge));
            }
    }
    round_8bit(hr);
    return {box_downsample(hr, kSrScale), std::move(hr)};
}

inline Pair make_seg_pair(int size, std::uint64_t seed) {
    Draw r(seed);
    FeatureMap img(size, size, 1, r.uniform(55, 85)), mask(size, size, 1);
    // The background level varies per image by about one blob contrast, so a
    // pixel's intensity alone is ambiguous without surrounding context.
    const int blobs = std::max(2, size * size / 60);
    for (int k = 0; k < blobs; ++k) {
        const double cx = r.uniform(0, size), cy = r.uniform(0, size);
        const double ra = r.uniform(1.2, 3.0), rb = ra * r.uniform(0.6, 1.0);
        const double theta = r.uniform(0, std::numbers::pi), c = std::cos(theta), s = std::sin(theta);
        const double contrast = r.uniform(25, 45), edge = r.uniform(0.5, 1.0);
        // The edge profile is below 1e-3 grey levels 12 px outside the ellipse.
        const int x0 = std::max(0, static_cast<int>(cx - ra) - 12), x1 = std::min(size, static_cast<int>(cx + ra) + 13);
        const int y0 = std::max(0, static_cast<int>(cy - ra) - 12), y1 = std::min(size, static_cast<int>(cy + ra) + 13);
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                const double u = (c * dx + s * dy) / ra, v = (-s * dx + c * dy) / rb;
                const double rho = std::sqrt(u * u + v * v);
                const double dist = (rho - 1.0) * rb;  // approximate signed distance in pixels
                img.at(x, y) += contrast / (1.0 + std::exp(dist / edge));
                if (rho < 1.0) mask.at(x, y) = 255.0;
            }
    }
    const double sigma = r.uniform(5, 9);
    for (double& v : img.data()) v += sigma * r.normal();
    round_8bit(img);
    return {std::move(img), std::move(mask)};
}

inline Pair make_pair(Task task, int size, std::uint64_t seed, std::size_t index) {
    if (size < 32) throw ConfigError("synthetic images need size >= 32");
    if (task == Task::Sr4 && size % kSrScale) throw ConfigError("sr4 tiles need a size divisible by 4");
    const std::uint64_t s = hash_combine(hash_combine(seed, task == Task::Sr4 ? 0x5234 : 0x5e9), index);
    return task == Task::Sr4 ? make_sr_pair(size, s) : make_seg_pair(size, s);
}

inline std::vector<Pair> make_dataset(Task task, std::size_t count, int size, std::uint64_t seed, std::size_t first = 0) {
    std::vector<Pair> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(make_pair(task, size, seed, first + i));
    return out;
}

// ---------------------------------------------------------------------------
// On-disk layout: <dir>/input/NNNN.pgm and <dir>/target/NNNN.pgm.

inline std::string sample_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04zu.pgm", i);
    return buf;
}

/// Writes `count` pairs. Returns the number written.
inline std::size_t gen_synthetic(Task task, std::size_t count, int size, std::uint64_t seed, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "input", ec);
    fs::create_directories(fs::path(dir) / "target", ec);
    if (ec || !fs::is_directory(fs::path(dir) / "input")) throw IoError("cannot create dataset directory " + dir);
    for (std::size_t i = 0; i < count; ++i) {
        const auto p = make_pair(task, size, seed, i);
        write_image((fs::path(dir) / "input" / sample_name(i)).string(), p.input);
        write_image((fs::path(dir) / "target" / sample_name(i)).string(), p.target);
    }
    return count;
}

/// Loads every pair under `dir`, in file-name order.
inline std::vector<Pair> load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path in = fs::path(dir) / "input";
    if (!fs::is_directory(in)) throw IoError("no input/ directory under " + dir);
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(in))
        if (e.path().extension() == ".pgm" || e.path().extension() == ".ppm") names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw IoError("dataset " + dir + " is empty");
    std::vector<Pair> out;
    for (const auto& n : names)
        out.push_back({read_image((in / n).string()), read_image((fs::path(dir) / "target" / n).string())});
    return out;
}

}  // namespace rfelut::pipeline
