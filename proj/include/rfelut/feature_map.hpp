#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "rfelut/error.hpp"

namespace rfelut {

/// H x W x C grid of values, channels innermost.
class FeatureMap {
public:
    FeatureMap() = default;
    FeatureMap(int height, int width, int channels, double fill = 0.0)
        : height_(height), width_(width), channels_(channels) {
        if (height <= 0 || width <= 0 || channels <= 0) throw ShapeError("feature map dimensions must be positive");
        data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    int channels() const noexcept { return channels_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool same_shape(const FeatureMap& o) const noexcept {
        return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
    }

    std::size_t index(int x, int y, int c = 0) const noexcept {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    double& at(int x, int y, int c = 0) noexcept { return data_[index(x, y, c)]; }
    const double& at(int x, int y, int c = 0) const noexcept { return data_[index(x, y, c)]; }

    /// Replicate-padded read.
    double clamped(int x, int y, int c = 0) const noexcept {
        return at(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1), c);
    }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

/// Round and clamp every value into the 8-bit domain.
inline void requantize_8bit(FeatureMap& f) {
    for (double& v : f.data()) {
        // Half away from zero; on [0, 255] that is truncation plus a carry.
        const double c = v > 0.0 ? std::min(v, 255.0) : 0.0;
        const int i = static_cast<int>(c);
        v = i + (c - i >= 0.5 ? 1.0 : 0.0);
    }
}

/// Rotates the map by quarter turns. One turn sends pixel (x, y) to (H-1-y, x).
inline FeatureMap rotate_map(const FeatureMap& f, int quarter_turns) {
    const int t = ((quarter_turns % 4) + 4) % 4;
    if (t == 0) return f;
    FeatureMap cur = f;
    for (int s = 0; s < t; ++s) {
        FeatureMap next(cur.width(), cur.height(), cur.channels());
        for (int y = 0; y < cur.height(); ++y)
            for (int x = 0; x < cur.width(); ++x)
                for (int c = 0; c < cur.channels(); ++c) next.at(cur.height() - 1 - y, x, c) = cur.at(x, y, c);
        cur = std::move(next);
    }
    return cur;
}

}  // namespace rfelut
