#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "rfelut/error.hpp"
#include "rfelut/feature_map.hpp"

namespace rfelut::metrics {

/// Reported for identical images instead of +inf.
inline constexpr double kPsnrCap = 99.0;

inline void require_same_shape(const FeatureMap& a, const FeatureMap& b) {
    if (!a.same_shape(b)) throw ShapeError("metric inputs differ in shape");
}

inline double mse(const FeatureMap& a, const FeatureMap& b) {
    require_same_shape(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

inline double psnr(const FeatureMap& a, const FeatureMap& b, double peak = 255.0) {
    const double e = mse(a, b);
    if (e == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / e));
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// evaluated at every position where the window fits, per channel.
inline double ssim(const FeatureMap& a, const FeatureMap& b, double peak = 255.0) {
    require_same_shape(a, b);
    constexpr int kWin = 11;
    constexpr int kHalf = kWin / 2;
    if (a.width() < kWin || a.height() < kWin) throw ShapeError("ssim needs images of at least 11x11");
    double w[kWin];
    double wsum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        w[i] = std::exp(-((i - kHalf) * (i - kHalf)) / (2.0 * 1.5 * 1.5));
        wsum += w[i];
    }
    for (double& v : w) v /= wsum;
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);

    double total = 0.0;
    std::size_t count = 0;
    for (int c = 0; c < a.channels(); ++c)
        for (int y = kHalf; y < a.height() - kHalf; ++y)
            for (int x = kHalf; x < a.width() - kHalf; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int dy = -kHalf; dy <= kHalf; ++dy)
                    for (int dx = -kHalf; dx <= kHalf; ++dx) {
                        const double g = w[dy + kHalf] * w[dx + kHalf];
                        const double va = a.at(x + dx, y + dy, c);
                        const double vb = b.at(x + dx, y + dy, c);
                        ma += g * va;
                        mb += g * vb;
                        saa += g * va * va;
                        sbb += g * vb * vb;
                        sab += g * va * vb;
                    }
                const double var_a = saa - ma * ma;
                const double var_b = sbb - mb * mb;
                const double cov = sab - ma * mb;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
                ++count;
            }
    return total / static_cast<double>(count);
}

/// Binary masks: a value counts as foreground when > threshold.
struct Confusion {
    double tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Confusion confusion(const FeatureMap& pred, const FeatureMap& gt, double threshold = 127.5) {
    require_same_shape(pred, gt);
    Confusion c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.data()[i] > threshold;
        const bool g = gt.data()[i] > threshold;
        (p ? (g ? c.tp : c.fp) : (g ? c.fn : c.tn)) += 1.0;
    }
    return c;
}

/// 2|A and B| / (|A| + |B|); both empty -> 1.
inline double dice(const FeatureMap& pred, const FeatureMap& gt, double threshold = 127.5) {
    const auto c = confusion(pred, gt, threshold);
    const double denom = 2 * c.tp + c.fp + c.fn;
    return denom == 0.0 ? 1.0 : 2 * c.tp / denom;
}

/// |A and B| / |A or B|; both empty -> 1.
inline double iou(const FeatureMap& pred, const FeatureMap& gt, double threshold = 127.5) {
    const auto c = confusion(pred, gt, threshold);
    const double denom = c.tp + c.fp + c.fn;
    return denom == 0.0 ? 1.0 : c.tp / denom;
}

/// Unweighted mean of per-class IoUs.
inline double miou(const std::vector<double>& class_ious) {
    if (class_ious.empty()) throw InvalidInput("miou needs at least one class");
    double s = 0.0;
    for (double v : class_ious) s += v;
    return s / static_cast<double>(class_ious.size());
}

/// Foreground/background mean IoU of a binary segmentation.
inline double binary_miou(const FeatureMap& pred, const FeatureMap& gt, double threshold = 127.5) {
    const auto c = confusion(pred, gt, threshold);
    const double fg = (c.tp + c.fp + c.fn) == 0.0 ? 1.0 : c.tp / (c.tp + c.fp + c.fn);
    const double bg = (c.tn + c.fp + c.fn) == 0.0 ? 1.0 : c.tn / (c.tn + c.fp + c.fn);
    return miou({fg, bg});
}

/// TP / (TP + FP); no positive predictions -> 1 if there are no positives either, else 0.
inline double precision(const FeatureMap& pred, const FeatureMap& gt, double threshold = 127.5) {
    const auto c = confusion(pred, gt, threshold);
    if (c.tp + c.fp == 0.0) return c.fn == 0.0 ? 1.0 : 0.0;
    return c.tp / (c.tp + c.fp);
}

/// TP / (TP + FN); no positives -> 1.
inline double sensitivity(const FeatureMap& pred, const FeatureMap& gt, double threshold = 127.5) {
    const auto c = confusion(pred, gt, threshold);
    if (c.tp + c.fn == 0.0) return 1.0;
    return c.tp / (c.tp + c.fn);
}

struct Point {
    double x = 0.0;
    double y = 0.0;
};

inline double directed_hausdorff(const std::vector<Point>& from, const std::vector<Point>& to) {
    if (from.empty() || to.empty()) throw EmptySetError("hausdorff distance of an empty point set");
    double worst = 0.0;
    for (const auto& a : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& b : to) {
            best = std::min(best, (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y));
            if (best <= worst) break;
        }
        worst = std::max(worst, best);
    }
    return std::sqrt(worst);
}

/// Symmetric Hausdorff distance (plain max, no percentile trimming), in pixels.
inline double hausdorff(const std::vector<Point>& a, const std::vector<Point>& b) {
    return std::max(directed_hausdorff(a, b), directed_hausdorff(b, a));
}

/// Foreground pixels with at least one 4-neighbour outside the foreground.
inline std::vector<Point> boundary_points(const FeatureMap& mask, double threshold = 127.5) {
    std::vector<Point> pts;
    auto fg = [&](int x, int y) {
        return x >= 0 && y >= 0 && x < mask.width() && y < mask.height() && mask.at(x, y) > threshold;
    };
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (fg(x, y) && (!fg(x - 1, y) || !fg(x + 1, y) || !fg(x, y - 1) || !fg(x, y + 1)))
                pts.push_back({static_cast<double>(x), static_cast<double>(y)});
    return pts;
}

/// Mean |pred - gt| for maps in [0, 1].
inline double mae(const FeatureMap& pred, const FeatureMap& gt) {
    require_same_shape(pred, gt);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred.data()[i] - gt.data()[i]);
    return s / static_cast<double>(pred.size());
}

}  // namespace rfelut::metrics
