#pragma once

// Lattice geometry and nearest-point decoding.
//
// A lattice is {B z : z integer}. Decoding follows two routes:
//  * babai_round: z = round(B^-1 x), O(d^2), exact for orthogonal bases;
//  * exact_cvp: exhaustive search in a box around the Babai point, kept for
//    verification of small dimensions only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rfelut/error.hpp"
#include "rfelut/rng.hpp"

namespace rfelut::lvq {

using LatticeIndex = std::vector<std::int64_t>;

enum class QuantizerMode {
    Inference,  ///< hard rounding
    Training    ///< additive uniform(-1/2, 1/2) noise in lattice coordinates
};

struct Decoded {
    LatticeIndex index;
    std::vector<double> point;
};

/// Ties round away from zero (std::round semantics).
inline std::int64_t round_half_away(double v) { return static_cast<std::int64_t>(std::round(v)); }

namespace detail {
inline void require_finite(std::span<const double> x) {
    for (double v : x)
        if (!std::isfinite(v)) throw InvalidInput("lattice input contains a non-finite value");
}
}  // namespace detail

class GeneralLattice {
public:
    explicit GeneralLattice(Eigen::MatrixXd basis) : basis_(std::move(basis)) {
        if (basis_.rows() != basis_.cols() || basis_.rows() == 0)
            throw InvalidInput("lattice basis must be a non-empty square matrix");
        if (!basis_.allFinite()) throw InvalidInput("lattice basis is not finite");
        if (std::abs(basis_.determinant()) <= 1e-9) throw InvalidInput("lattice basis is singular");
        inverse_ = basis_.inverse();
        const Eigen::MatrixXd residual = basis_ * inverse_ - Eigen::MatrixXd::Identity(dim(), dim());
        if (residual.cwiseAbs().rowwise().sum().maxCoeff() >= 1e-6)
            throw InvalidInput("lattice basis is too ill-conditioned to invert");
    }

    int dim() const noexcept { return static_cast<int>(basis_.rows()); }
    const Eigen::MatrixXd& basis() const noexcept { return basis_; }
    const Eigen::MatrixXd& basis_inverse() const noexcept { return inverse_; }

    /// Cell volume |det B|.
    double volume() const { return std::abs(basis_.determinant()); }

    std::vector<double> point(const LatticeIndex& z) const {
        Eigen::VectorXd zv(dim());
        for (int i = 0; i < dim(); ++i) zv[i] = static_cast<double>(z[i]);
        const Eigen::VectorXd p = basis_ * zv;
        return {p.data(), p.data() + p.size()};
    }

private:
    Eigen::MatrixXd basis_;
    Eigen::MatrixXd inverse_;
};

/// Hyper-rectangular lattice diag(b_1..b_d). Decoding is d scalar roundings.
class DiagonalLattice {
public:
    DiagonalLattice(std::vector<double> steps, double step_min) : steps_(std::move(steps)), step_min_(step_min) {
        if (steps_.empty()) throw InvalidInput("diagonal lattice needs at least one dimension");
        if (!(step_min_ > 0.0) || !std::isfinite(step_min_)) throw InvalidInput("step_min must be positive");
        for (double b : steps_)
            if (!std::isfinite(b) || b < step_min_) throw InvalidInput("lattice step below step_min");
    }

    int dim() const noexcept { return static_cast<int>(steps_.size()); }
    const std::vector<double>& steps() const noexcept { return steps_; }
    double step(int j) const { return steps_.at(static_cast<std::size_t>(j)); }
    double step_min() const noexcept { return step_min_; }

    GeneralLattice to_general() const {
        Eigen::VectorXd diag(dim());
        for (int j = 0; j < dim(); ++j) diag[j] = steps_[static_cast<std::size_t>(j)];
        return GeneralLattice(diag.asDiagonal().toDenseMatrix());
    }

private:
    std::vector<double> steps_;
    double step_min_;
};

inline Decoded babai_round(const GeneralLattice& lattice, std::span<const double> x) {
    if (static_cast<int>(x.size()) != lattice.dim()) throw InvalidInput("input dimension does not match lattice");
    detail::require_finite(x);
    const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
    const Eigen::VectorXd coords = lattice.basis_inverse() * xv;
    Decoded out;
    out.index.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out.index[i] = round_half_away(coords[static_cast<Eigen::Index>(i)]);
    out.point = lattice.point(out.index);
    return out;
}

inline Decoded babai_round(const DiagonalLattice& lattice, std::span<const double> x) {
    if (static_cast<int>(x.size()) != lattice.dim()) throw InvalidInput("input dimension does not match lattice");
    detail::require_finite(x);
    Decoded out;
    out.index.resize(x.size());
    out.point.resize(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double b = lattice.steps()[j];
        out.index[j] = round_half_away(x[j] / b);
        out.point[j] = b * static_cast<double>(out.index[j]);
    }
    return out;
}

inline constexpr int kExactCvpMaxDim = 6;
inline constexpr int kDefaultSearchRadius = 3;

/// Exhaustive nearest-point search over the box babai_index +/- search_radius.
/// Ties go to the lexicographically smallest index.
inline Decoded exact_cvp(const GeneralLattice& lattice, std::span<const double> x,
                         int search_radius = kDefaultSearchRadius) {
    const int d = lattice.dim();
    if (d > kExactCvpMaxDim) throw DimensionTooLarge("exact_cvp supports d <= 6");
    if (search_radius < 1) throw InvalidInput("search_radius must be >= 1");
    const Decoded center = babai_round(lattice, x);

    // Fixed-size scratch; d <= 6.
    double basis[kExactCvpMaxDim][kExactCvpMaxDim];
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) basis[r][c] = lattice.basis()(r, c);
    std::int64_t z[kExactCvpMaxDim], lo[kExactCvpMaxDim], hi[kExactCvpMaxDim], best[kExactCvpMaxDim];
    for (int i = 0; i < d; ++i) {
        lo[i] = center.index[static_cast<std::size_t>(i)] - search_radius;
        hi[i] = center.index[static_cast<std::size_t>(i)] + search_radius;
        z[i] = lo[i];
    }
    double best_dist = std::numeric_limits<double>::infinity();
    for (;;) {
        double dist = 0.0;
        for (int r = 0; r < d; ++r) {
            double e = x[static_cast<std::size_t>(r)];
            for (int c = 0; c < d; ++c) e -= basis[r][c] * static_cast<double>(z[c]);
            dist += e * e;
        }
        if (dist < best_dist) {
            best_dist = dist;
            std::copy(z, z + d, best);
        }
        // Odometer increment, last coordinate fastest -> lexicographic order.
        int i = d - 1;
        for (; i >= 0; --i) {
            if (z[i] < hi[i]) {
                ++z[i];
                break;
            }
            z[i] = lo[i];
        }
        if (i < 0) break;
    }
    LatticeIndex best_index(best, best + d);
    return {best_index, lattice.point(best_index)};
}

/// Uniform(-1/2, 1/2) noise vector for training-mode quantization.
inline std::vector<double> training_noise(int d, std::uint64_t seed) {
    std::vector<double> u(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) u[static_cast<std::size_t>(j)] = centered_uniform(seed, static_cast<std::uint64_t>(j));
    return u;
}

/// Inference: B round(B^-1 x). Training: B (B^-1 x + u), evaluated as x + B u.
inline std::vector<double> quantize(const GeneralLattice& lattice, std::span<const double> x, QuantizerMode mode,
                                    std::uint64_t seed = 0) {
    if (mode == QuantizerMode::Inference) return babai_round(lattice, x).point;
    if (static_cast<int>(x.size()) != lattice.dim()) throw InvalidInput("input dimension does not match lattice");
    detail::require_finite(x);
    const auto u = training_noise(lattice.dim(), seed);
    const Eigen::Map<const Eigen::VectorXd> uv(u.data(), lattice.dim());
    const Eigen::VectorXd shift = lattice.basis() * uv;
    std::vector<double> out(x.begin(), x.end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += shift[static_cast<Eigen::Index>(i)];
    return out;
}

/// Diagonal case. In training mode d(out_j)/d(x_j) = 1 and d(out_j)/d(b_j) = u_j.
inline std::vector<double> quantize(const DiagonalLattice& lattice, std::span<const double> x, QuantizerMode mode,
                                    std::uint64_t seed = 0) {
    if (mode == QuantizerMode::Inference) return babai_round(lattice, x).point;
    if (static_cast<int>(x.size()) != lattice.dim()) throw InvalidInput("input dimension does not match lattice");
    detail::require_finite(x);
    const auto u = training_noise(lattice.dim(), seed);
    std::vector<double> out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double b = lattice.steps()[j];
        out[j] = b * (x[j] / b + u[j]);
    }
    return out;
}

enum class Decoder { Babai, Exact };

/// Mean squared quantization error over samples.
inline double distortion_mse(const GeneralLattice& lattice, const std::vector<std::vector<double>>& samples,
                             Decoder decoder = Decoder::Babai) {
    if (samples.empty()) throw InvalidInput("distortion_mse needs at least one sample");
    double acc = 0.0;
    for (const auto& x : samples) {
        const auto q = decoder == Decoder::Babai ? babai_round(lattice, x).point : exact_cvp(lattice, x).point;
        for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - q[i]) * (x[i] - q[i]);
    }
    return acc / static_cast<double>(samples.size());
}

inline double distortion_mse(const DiagonalLattice& lattice, const std::vector<std::vector<double>>& samples) {
    if (samples.empty()) throw InvalidInput("distortion_mse needs at least one sample");
    double acc = 0.0;
    for (const auto& x : samples) {
        const auto q = babai_round(lattice, x).point;
        for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - q[i]) * (x[i] - q[i]);
    }
    return acc / static_cast<double>(samples.size());
}

/// Dimensionless second moment: per-dimension MSE divided by V^(2/d).
inline double normalized_second_moment(const GeneralLattice& lattice, double mse) {
    const double d = lattice.dim();
    return mse / d / std::pow(lattice.volume(), 2.0 / d);
}

}  // namespace rfelut::lvq
