#pragma once

// Line-based `key = value` configuration with `#` comments.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rfelut/error.hpp"
#include "rfelut/lut.hpp"
#include "rfelut/pipeline/model.hpp"
#include "rfelut/pipeline/train.hpp"
#include "rfelut/ulut.hpp"

namespace rfelut::pipeline {

using KeyValues = std::map<std::string, std::string>;

namespace detail {
inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}
}  // namespace detail

inline void parse_assignment(const std::string& raw, KeyValues& kv, const std::string& where) {
    const std::string line = detail::trim(raw.substr(0, raw.find('#')));
    if (line.empty()) return;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (kv.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    kv[key] = detail::trim(line.substr(eq + 1));
}

inline KeyValues parse_config_text(const std::string& text, const std::string& source = "config") {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) parse_assignment(line, kv, source + ":" + std::to_string(n));
    return kv;
}

inline KeyValues read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

enum class Preset { S, L };

struct PipelineConfig {
    Task task = Task::Seg;
    Variant variant = Variant::Full;
    Preset preset = Preset::S;
    ModelSpec model;
    TrainSettings train;
    std::uint64_t seed = 1;
    std::vector<std::uint64_t> seeds{1, 2, 3};  ///< ablation seeds
    int size = 48;
    std::size_t train_count = 32;
    std::size_t test_count = 16;
    std::string data_dir;  ///< training pairs; synthetic in memory when empty
    std::string test_dir;  ///< held-out pairs; synthetic in memory when empty
    std::string out_dir = "out";
    std::string checkpoint;  ///< bench: reuse instead of training
    std::string bundle;      ///< bench: reuse instead of compiling
    ulut::LookupMode lookup = ulut::LookupMode::Interpolated;
    std::size_t fidelity_trials = 1000;
    int bench_size = 256;  ///< side of the timing image
};

namespace detail {

inline double to_double(const std::string& k, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("'" + k + "' expects a number, got '" + v + "'");
    }
}

inline long long to_int(const std::string& k, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long n = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError("'" + k + "' expects an integer, got '" + v + "'");
    }
}

inline long long positive(const std::string& k, const std::string& v) {
    const auto n = to_int(k, v);
    if (n < 1) throw ConfigError("'" + k + "' must be >= 1");
    return n;
}

inline std::vector<long long> int_list(const std::string& k, const std::string& v) {
    std::vector<long long> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_int(k, trim(item)));
    if (out.empty()) throw ConfigError("'" + k + "' needs at least one value");
    return out;
}

inline lut::ValueType parse_value_type(const std::string& v) {
    if (v == "u8") return lut::ValueType::U8;
    if (v == "i16") return lut::ValueType::I16;
    if (v == "f32") return lut::ValueType::F32;
    throw ConfigError("value_type must be u8, i16 or f32");
}

}  // namespace detail

/// Preset defaults. S: 9-point grid, L: 17-point grid (b = 16 at 4 taps).
inline void apply_preset(PipelineConfig& c) {
    c.model.grid = c.preset == Preset::S ? 9 : 17;
    c.train.lambda = c.preset == Preset::S ? 1e-2 : 1e-3;
}

/// Task defaults, then preset, then explicit keys. Unknown keys are errors.
inline PipelineConfig make_config(const KeyValues& kv) {
    using namespace detail;
    PipelineConfig c;
    auto it = kv.find("task");
    if (it == kv.end()) throw ConfigError("config needs 'task'");
    c.task = parse_task(it->second);
    if (c.task == Task::Sr4) {
        c.variant = Variant::BaselineSq;
        c.preset = Preset::L;
        c.size = 48;
        c.model.hidden = {32, 32};
        c.model.branches = 1;
        c.train_count = 256;
        c.train.learning_rate = 0.05;
        c.train.step_learning_rate = 300.0;
        c.train.batch_size = 1;
        c.train.epochs = 30;
        c.train.finetune_epochs = 10;
    } else {
        c.variant = Variant::Full;
        c.preset = Preset::S;
        c.model.hidden = {16};
        c.train.learning_rate = 0.5;
        c.train.step_learning_rate = 3000.0;
        c.train.batch_size = 1;
        c.train.epochs = 80;
        c.train.finetune_epochs = 40;
    }
    if (auto p = kv.find("preset"); p != kv.end()) {
        if (p->second != "S" && p->second != "L") throw ConfigError("preset must be S or L");
        c.preset = p->second == "S" ? Preset::S : Preset::L;
    }
    apply_preset(c);

    for (const auto& [k, v] : kv) {
        if (k == "task" || k == "preset") continue;
        if (k == "variant") c.variant = parse_variant(v);
        else if (k == "seed") c.seed = static_cast<std::uint64_t>(to_int(k, v));
        else if (k == "seeds") {
            c.seeds.clear();
            for (auto s : int_list(k, v)) c.seeds.push_back(static_cast<std::uint64_t>(s));
        }
        else if (k == "size") c.size = static_cast<int>(positive(k, v));
        else if (k == "train_count") c.train_count = static_cast<std::size_t>(positive(k, v));
        else if (k == "test_count") c.test_count = static_cast<std::size_t>(positive(k, v));
        else if (k == "data_dir") c.data_dir = v;
        else if (k == "test_dir") c.test_dir = v;
        else if (k == "out_dir") c.out_dir = v;
        else if (k == "checkpoint") c.checkpoint = v;
        else if (k == "bundle") c.bundle = v;
        else if (k == "epochs") c.train.epochs = static_cast<int>(to_int(k, v));
        else if (k == "finetune_epochs") c.train.finetune_epochs = static_cast<int>(to_int(k, v));
        else if (k == "batch_size") c.train.batch_size = static_cast<int>(positive(k, v));
        else if (k == "learning_rate") c.train.learning_rate = to_double(k, v);
        else if (k == "step_learning_rate") c.train.step_learning_rate = to_double(k, v);
        else if (k == "link_learning_rate") c.train.link_learning_rate = to_double(k, v);
        else if (k == "lambda") c.train.lambda = to_double(k, v);
        else if (k == "levels") c.model.levels = static_cast<int>(positive(k, v));
        else if (k == "branches") c.model.branches = static_cast<int>(positive(k, v));
        else if (k == "channels") c.model.channels = static_cast<int>(positive(k, v));
        else if (k == "grid") c.model.grid = static_cast<int>(positive(k, v));
        else if (k == "hidden") {
            c.model.hidden.clear();
            for (auto h : int_list(k, v)) {
                if (h < 1) throw ConfigError("hidden widths must be >= 1");
                c.model.hidden.push_back(static_cast<int>(h));
            }
        }
        else if (k == "value_type") c.model.value_type = parse_value_type(v);
        else if (k == "lookup") {
            if (v != "nearest" && v != "interpolated") throw ConfigError("lookup must be nearest or interpolated");
            c.lookup = v == "nearest" ? ulut::LookupMode::Nearest : ulut::LookupMode::Interpolated;
        }
        else if (k == "fidelity_trials") c.fidelity_trials = static_cast<std::size_t>(positive(k, v));
        else if (k == "bench_size") c.bench_size = static_cast<int>(positive(k, v));
        else throw ConfigError("unknown config key '" + k + "'");
    }
    if (c.size < 32) throw ConfigError("size must be >= 32");
    if (c.task == Task::Sr4 && c.size % kSrScale) throw ConfigError("sr4 size must be a multiple of 4");
    if (!(c.train.lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
    if (c.model.grid < 2) throw ConfigError("grid must be >= 2");
    c.model.task = c.task;
    c.model.variant = c.variant;
    c.train.seed = c.seed;
    return c;
}

}  // namespace rfelut::pipeline
