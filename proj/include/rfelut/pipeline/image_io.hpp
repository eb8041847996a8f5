#pragma once

// Binary netpbm: P5 (grayscale) and P6 (RGB), maxval 255.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "rfelut/error.hpp"
#include "rfelut/feature_map.hpp"

namespace rfelut::pipeline {

namespace detail {

inline std::string next_token(const std::vector<std::uint8_t>& buf, std::size_t& pos) {
    while (pos < buf.size()) {
        if (buf[pos] == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else if (std::isspace(buf[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (pos < buf.size() && !std::isspace(buf[pos]) && buf[pos] != '#') tok.push_back(static_cast<char>(buf[pos++]));
    return tok;
}

inline int parse_dim(const std::string& tok, const std::string& path) {
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
        throw IoError(path + ": malformed netpbm header");
    const long v = std::stol(tok);
    if (v <= 0 || v > 1 << 16) throw IoError(path + ": netpbm dimension out of range");
    return static_cast<int>(v);
}

}  // namespace detail

/// Reads a P5 or P6 file into an H x W x (1|3) map of values in [0, 255].
inline FeatureMap read_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    const std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    const std::string magic = detail::next_token(buf, pos);
    if (magic != "P5" && magic != "P6") throw IoError(path + ": not a binary PGM/PPM file");
    const int channels = magic == "P5" ? 1 : 3;
    const int w = detail::parse_dim(detail::next_token(buf, pos), path);
    const int h = detail::parse_dim(detail::next_token(buf, pos), path);
    if (detail::parse_dim(detail::next_token(buf, pos), path) != 255) throw IoError(path + ": only maxval 255 is supported");
    ++pos;  // single whitespace byte before the raster
    const std::size_t n = static_cast<std::size_t>(w) * h * channels;
    if (buf.size() < pos + n) throw IoError(path + ": raster truncated");
    FeatureMap f(h, w, channels);
    for (std::size_t i = 0; i < n; ++i) f.data()[i] = buf[pos + i];
    return f;
}

/// Writes a 1- or 3-channel map, rounding and clamping into [0, 255].
inline void write_image(const std::string& path, const FeatureMap& f) {
    if (f.channels() != 1 && f.channels() != 3) throw ShapeError("netpbm output needs 1 or 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << (f.channels() == 1 ? "P5" : "P6") << '\n' << f.width() << ' ' << f.height() << "\n255\n";
    std::vector<char> raster(f.size());
    for (std::size_t i = 0; i < f.size(); ++i)
        raster[i] = static_cast<char>(static_cast<std::uint8_t>(std::clamp(std::round(f.data()[i]), 0.0, 255.0)));
    out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
    if (!out) throw IoError("short write to " + path);
}

}  // namespace rfelut::pipeline
