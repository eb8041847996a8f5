#pragma once

// Irregular dilated sampling patterns.
//
// A pattern is a k x k binary mask over tap coordinates (m, n) in
// [-k/2, k/2]^2 plus an anisotropic dilation (dx, dy). Tap (m, n) reads the
// pixel at (p + dx*m, q + dy*n). Taps are ordered row-major over the mask
// (n outer, m inner); that order is the table's index-dimension order.

#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "rfelut/error.hpp"
#include "rfelut/feature_map.hpp"

namespace rfelut::idc {

/// Upper bound on active taps per table.
inline constexpr int kMaxTaps = 4;

struct Tap {
    int m = 0;
    int n = 0;
    friend bool operator==(const Tap&, const Tap&) = default;
};

struct Offset {
    int dx = 0;
    int dy = 0;
    friend bool operator==(const Offset&, const Offset&) = default;
};

struct Dilation {
    int x = 1;
    int y = 1;
    friend bool operator==(const Dilation&, const Dilation&) = default;
};

struct Extent {
    int width = 1;
    int height = 1;
    friend bool operator==(const Extent&, const Extent&) = default;
};

class SamplingPattern {
public:
    int k() const noexcept { return k_; }
    int half() const noexcept { return k_ / 2; }
    Dilation dilation() const noexcept { return dilation_; }
    /// k*k row-major mask; row index n + k/2, column index m + k/2.
    const std::vector<std::uint8_t>& mask() const noexcept { return mask_; }
    bool active(int m, int n) const { return mask_[static_cast<std::size_t>((n + half()) * k_ + (m + half()))] != 0; }
    const std::vector<Tap>& taps() const noexcept { return taps_; }
    int tap_count() const noexcept { return static_cast<int>(taps_.size()); }
    bool coprime_dilation() const { return std::gcd(dilation_.x, dilation_.y) == 1; }

    /// Text form: `idc k=3 dil=2,3 mask=010;101;010`.
    std::string descriptor() const {
        std::ostringstream os;
        os << "idc k=" << k_ << " dil=" << dilation_.x << ',' << dilation_.y << " mask=";
        for (int r = 0; r < k_; ++r) {
            if (r) os << ';';
            for (int c = 0; c < k_; ++c) os << (mask_[static_cast<std::size_t>(r * k_ + c)] ? '1' : '0');
        }
        return os.str();
    }

    /// Stable identifier written into table headers (CRC-32 of the descriptor).
    std::uint32_t id() const {
        const auto d = descriptor();
        return static_cast<std::uint32_t>(
            ::crc32(::crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(d.data()), static_cast<uInt>(d.size())));
    }

    friend bool operator==(const SamplingPattern& a, const SamplingPattern& b) {
        return a.k_ == b.k_ && a.dilation_ == b.dilation_ && a.mask_ == b.mask_;
    }

private:
    friend SamplingPattern make_pattern(int, Dilation, std::vector<std::uint8_t>, std::vector<std::string>*);

    int k_ = 1;
    Dilation dilation_;
    std::vector<std::uint8_t> mask_;
    std::vector<Tap> taps_;
};

/// Validates and builds a pattern. A non-coprime dilation is legal but noted
/// in `warnings` when provided.
inline SamplingPattern make_pattern(int k, Dilation dilation, std::vector<std::uint8_t> mask,
                                    std::vector<std::string>* warnings = nullptr) {
    if (k < 1 || k % 2 == 0) throw InvalidPattern("kernel extent must be odd and positive");
    if (dilation.x < 1 || dilation.y < 1) throw InvalidPattern("dilation components must be >= 1");
    if (mask.size() != static_cast<std::size_t>(k) * k) throw InvalidPattern("mask must be k x k");
    SamplingPattern p;
    p.k_ = k;
    p.dilation_ = dilation;
    p.mask_ = std::move(mask);
    const int h = k / 2;
    for (int n = -h; n <= h; ++n)
        for (int m = -h; m <= h; ++m) {
            auto& cell = p.mask_[static_cast<std::size_t>((n + h) * k + (m + h))];
            if (cell > 1) throw InvalidPattern("mask entries must be 0 or 1");
            if (cell) p.taps_.push_back({m, n});
        }
    if (p.taps_.empty()) throw InvalidPattern("pattern has no active taps");
    if (p.tap_count() > kMaxTaps) throw InvalidPattern("pattern exceeds 4 active taps");
    if (warnings && !p.coprime_dilation())
        warnings->push_back("dilation (" + std::to_string(dilation.x) + "," + std::to_string(dilation.y) +
                            ") is not coprime; sampled taps overlap periodically");
    return p;
}

/// Convenience: build from a tap list instead of a mask.
inline SamplingPattern make_pattern_from_taps(int k, Dilation dilation, const std::vector<Tap>& taps,
                                              std::vector<std::string>* warnings = nullptr) {
    if (k < 1 || k % 2 == 0) throw InvalidPattern("kernel extent must be odd and positive");
    const int h = k / 2;
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(k) * k, 0);
    for (const auto& t : taps) {
        if (t.m < -h || t.m > h || t.n < -h || t.n > h) throw InvalidPattern("tap outside the k x k window");
        mask[static_cast<std::size_t>((t.n + h) * k + (t.m + h))] = 1;
    }
    return make_pattern(k, dilation, std::move(mask), warnings);
}

inline SamplingPattern parse_pattern(std::string_view text, std::vector<std::string>* warnings = nullptr) {
    std::istringstream is{std::string(text)};
    std::string word;
    if (!(is >> word) || word != "idc") throw InvalidPattern("pattern descriptor must start with 'idc'");
    std::optional<int> k;
    std::optional<Dilation> dil;
    std::optional<std::vector<std::string>> rows;
    auto parse_int = [](const std::string& s) {
        if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
            throw InvalidPattern("expected a positive integer, got '" + s + "'");
        return std::stoi(s);
    };
    while (is >> word) {
        const auto eq = word.find('=');
        if (eq == std::string::npos) throw InvalidPattern("malformed pattern field '" + word + "'");
        const auto key = word.substr(0, eq);
        const auto val = word.substr(eq + 1);
        if (key == "k" && !k) {
            k = parse_int(val);
        } else if (key == "dil" && !dil) {
            const auto comma = val.find(',');
            if (comma == std::string::npos) throw InvalidPattern("dilation must be 'dx,dy'");
            dil = Dilation{parse_int(val.substr(0, comma)), parse_int(val.substr(comma + 1))};
        } else if (key == "mask" && !rows) {
            rows.emplace();
            std::string row;
            std::istringstream rs(val);
            while (std::getline(rs, row, ';')) rows->push_back(row);
            if (!val.empty() && val.back() == ';') throw InvalidPattern("trailing ';' in mask");
        } else {
            throw InvalidPattern("unknown or repeated pattern field '" + key + "'");
        }
    }
    if (!k || !dil || !rows) throw InvalidPattern("pattern descriptor needs k, dil and mask");
    if (static_cast<int>(rows->size()) != *k) throw InvalidPattern("mask must have k rows");
    std::vector<std::uint8_t> mask;
    for (const auto& row : *rows) {
        if (static_cast<int>(row.size()) != *k) throw InvalidPattern("mask rows must have k columns");
        for (char c : row) {
            if (c != '0' && c != '1') throw InvalidPattern("mask entries must be 0 or 1");
            mask.push_back(static_cast<std::uint8_t>(c - '0'));
        }
    }
    return make_pattern(*k, *dil, std::move(mask), warnings);
}

/// (dx*m, dy*n) per active tap, in tap order.
inline std::vector<Offset> pixel_offsets(const SamplingPattern& p) {
    std::vector<Offset> out;
    out.reserve(p.taps().size());
    for (const auto& t : p.taps()) out.push_back({p.dilation().x * t.m, p.dilation().y * t.n});
    return out;
}

inline Extent receptive_extent(const std::vector<Offset>& offsets) {
    int x0 = offsets.front().dx, x1 = x0, y0 = offsets.front().dy, y1 = y0;
    for (const auto& o : offsets) {
        x0 = std::min(x0, o.dx);
        x1 = std::max(x1, o.dx);
        y0 = std::min(y0, o.dy);
        y1 = std::max(y1, o.dy);
    }
    return {x1 - x0 + 1, y1 - y0 + 1};
}

inline Extent receptive_extent(const SamplingPattern& p) { return receptive_extent(pixel_offsets(p)); }

/// Reads the tap values at (p, q), replicate-padded, in the given offset order.
inline void gather_into(const FeatureMap& f, const std::vector<Offset>& offsets, int p, int q, int channel,
                        double* out) {
    for (std::size_t i = 0; i < offsets.size(); ++i) out[i] = f.clamped(p + offsets[i].dx, q + offsets[i].dy, channel);
}

inline std::vector<double> gather(const FeatureMap& f, const SamplingPattern& pattern, int p, int q, int channel = 0) {
    if (p < 0 || q < 0 || p >= f.width() || q >= f.height()) throw InvalidInput("gather position outside the map");
    if (channel < 0 || channel >= f.channels()) throw InvalidInput("gather channel out of range");
    const auto offsets = pixel_offsets(pattern);
    std::vector<double> out(offsets.size());
    gather_into(f, offsets, p, q, channel, out.data());
    return out;
}

/// Quarter-turn rotation: tap (m, n) -> (-n, m), dilation components swap so
/// that pixel offsets rotate the same way.
inline SamplingPattern rotate_pattern(const SamplingPattern& p, int quarter_turns) {
    const int t = ((quarter_turns % 4) + 4) % 4;
    std::vector<Tap> taps = p.taps();
    Dilation dil = p.dilation();
    for (int s = 0; s < t; ++s) {
        for (auto& tap : taps) tap = {-tap.n, tap.m};
        dil = {dil.y, dil.x};
    }
    return make_pattern_from_taps(p.k(), dil, taps);
}

/// Pixel offsets of the rotated pattern, kept in the original tap order, so a
/// table compiled for `p` can be driven by any rotation of it.
inline std::vector<Offset> rotated_offsets(const SamplingPattern& p, int quarter_turns) {
    const int t = ((quarter_turns % 4) + 4) % 4;
    auto offs = pixel_offsets(p);
    for (int s = 0; s < t; ++s)
        for (auto& o : offs) o = {-o.dy, o.dx};
    return offs;
}

// A small fixed library of patterns used by the pipeline presets.
namespace library {

/// 2x2 block {(0,0),(1,0),(0,1),(1,1)}.
inline SamplingPattern block2x2(Dilation d = {1, 1}) {
    return make_pattern_from_taps(3, d, {{0, 0}, {1, 0}, {0, 1}, {1, 1}});
}

/// Four corners of the 3x3 window: a regular dilated 2x2 kernel centred on the site.
inline SamplingPattern corners3x3(Dilation d = {1, 1}) {
    return make_pattern_from_taps(3, d, {{-1, -1}, {1, -1}, {-1, 1}, {1, 1}});
}

/// Centre plus three arms of a cross (T shape).
inline SamplingPattern tee(Dilation d) { return make_pattern_from_taps(3, d, {{0, -1}, {-1, 0}, {0, 0}, {1, 0}}); }

/// Centre plus three diagonal taps.
inline SamplingPattern diagonal(Dilation d) {
    return make_pattern_from_taps(3, d, {{-1, -1}, {0, 0}, {1, -1}, {0, 1}});
}

}  // namespace library

}  // namespace rfelut::idc
