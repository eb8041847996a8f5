#pragma once

// Compiled lookup tables over a diagonal lattice grid.
//
// Values are kept in memory as float regardless of the declared value type;
// integer-typed tables hold integral values inside the type's range, and the
// declared type only governs the serialized width.
//
// Binary format (little-endian):
//   "RFLT" | u16 version=1 | u8 d | u8 reserved
//   d x { u32 grid_size, f32 step }
//   u32 entry_arity | u8 bytes_per_value | u8 value_type | u32 pattern_id
//   value block (storage_bytes long)
//   u32 CRC-32 of everything above

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <zlib.h>

#ifdef __SSE2__
#include <emmintrin.h>
#endif

#include "rfelut/error.hpp"
#include "rfelut/lvq.hpp"

namespace rfelut::lut {

enum class ValueType : std::uint8_t { U8 = 0, I16 = 1, F32 = 2 };

constexpr std::uint8_t bytes_per_value(ValueType t) {
    switch (t) {
        case ValueType::U8: return 1;
        case ValueType::I16: return 2;
        case ValueType::F32: return 4;
    }
    return 0;
}

/// Largest 8-bit input the tables are built for.
inline constexpr double kInputDomainMax = 255.0;

/// Grid points along an axis with step b over the 8-bit domain: floor(256/b) + 1.
inline std::uint32_t grid_size_for_step(double step) {
    if (!(step > 0.0) || !std::isfinite(step)) throw InvalidInput("grid step must be positive and finite");
    return static_cast<std::uint32_t>(std::floor(256.0 / step)) + 1u;
}

/// (prod M_j) * m * B_v. Rejects anything that does not fit below 2^63.
inline std::uint64_t storage_bytes(std::span<const std::uint64_t> grid_sizes, std::uint64_t entry_arity,
                                   std::uint64_t value_bytes) {
    if (entry_arity == 0 || value_bytes == 0) throw InvalidInput("storage_bytes inputs must be positive");
    constexpr std::uint64_t kCap = std::uint64_t{1} << 63;
    std::uint64_t total = entry_arity;
    auto mul = [&](std::uint64_t f) {
        if (f == 0) throw InvalidInput("grid sizes must be positive");
        if (__builtin_mul_overflow(total, f, &total) || total >= kCap)
            throw StorageOverflow("table storage exceeds 2^63 bytes");
    };
    mul(value_bytes);
    for (auto m : grid_sizes) mul(m);
    return total;
}

struct TableHeader {
    std::vector<std::uint32_t> grid_sizes;
    std::vector<float> steps;
    std::uint32_t entry_arity = 1;
    ValueType value_type = ValueType::F32;
    std::uint32_t pattern_id = 0;

    int dim() const noexcept { return static_cast<int>(grid_sizes.size()); }
    std::uint8_t value_bytes() const noexcept { return bytes_per_value(value_type); }

    std::uint64_t entry_count() const {
        std::uint64_t n = 1;
        for (auto m : grid_sizes) n *= m;
        return n;
    }

    std::uint64_t storage() const {
        std::vector<std::uint64_t> sizes(grid_sizes.begin(), grid_sizes.end());
        return storage_bytes(sizes, entry_arity, value_bytes());
    }

    friend bool operator==(const TableHeader&, const TableHeader&) = default;
};

/// Header for a table over the 8-bit domain with the given per-axis steps.
inline TableHeader make_header(std::span<const float> steps, std::uint32_t entry_arity, ValueType value_type,
                               std::uint32_t pattern_id = 0) {
    if (steps.empty()) throw InvalidInput("table needs at least one index dimension");
    if (steps.size() > 255) throw DimensionTooLarge("table dimension must fit in u8");
    if (entry_arity == 0) throw InvalidInput("entry arity must be positive");
    TableHeader h;
    h.steps.assign(steps.begin(), steps.end());
    for (float b : steps) h.grid_sizes.push_back(grid_size_for_step(b));
    h.entry_arity = entry_arity;
    h.value_type = value_type;
    h.pattern_id = pattern_id;
    (void)h.storage();  // overflow check
    return h;
}

/// Round-half-away-from-zero with saturation for integer value types.
inline float quantize_value(double v, ValueType t) {
    switch (t) {
        case ValueType::U8: return static_cast<float>(std::clamp(std::round(v), 0.0, 255.0));
        case ValueType::I16: return static_cast<float>(std::clamp(std::round(v), -32768.0, 32767.0));
        case ValueType::F32: return static_cast<float>(v);
    }
    return static_cast<float>(v);
}

/// Largest deviation introduced by quantize_value for in-range inputs.
inline double value_tolerance(ValueType t) { return t == ValueType::F32 ? 0.0 : 0.5; }

inline std::uint64_t flat_offset(const TableHeader& header, std::span<const std::int64_t> index) {
    if (static_cast<int>(index.size()) != header.dim()) throw IndexOutOfBounds("index arity does not match table");
    std::uint64_t off = 0;
    for (std::size_t j = 0; j < index.size(); ++j) {
        if (index[j] < 0 || static_cast<std::uint64_t>(index[j]) >= header.grid_sizes[j])
            throw IndexOutOfBounds("table index out of range on axis " + std::to_string(j));
        off = off * header.grid_sizes[j] + static_cast<std::uint64_t>(index[j]);
    }
    return off;
}

/// Inverse of flat_offset.
inline std::vector<std::int64_t> unflatten(const TableHeader& header, std::uint64_t offset) {
    if (offset >= header.entry_count()) throw IndexOutOfBounds("flat offset out of range");
    std::vector<std::int64_t> index(header.grid_sizes.size());
    for (std::size_t j = index.size(); j-- > 0;) {
        index[j] = static_cast<std::int64_t>(offset % header.grid_sizes[j]);
        offset /= header.grid_sizes[j];
    }
    return index;
}

class LookupTable {
public:
    LookupTable(TableHeader header, std::vector<float> values) : header_(std::move(header)), values_(std::move(values)) {
        if (header_.dim() == 0 || header_.steps.size() != header_.grid_sizes.size())
            throw InvalidInput("malformed table header");
        if (values_.size() != header_.entry_count() * header_.entry_arity)
            throw InvalidInput("table value count does not match header");
        for (float v : values_)
            if (!std::isfinite(v)) throw InvalidInput("table values must be finite");
        stride_.resize(header_.grid_sizes.size());
        std::uint64_t s = header_.entry_arity;
        for (int j = dim() - 1; j >= 0; --j) {
            stride_[static_cast<std::size_t>(j)] = s;
            s *= header_.grid_sizes[static_cast<std::size_t>(j)];
        }
        // Byte-valued tables are read from a packed copy: a quarter of the
        // memory traffic on the lookup path.
        if (header_.value_type == ValueType::U8 &&
            std::all_of(values_.begin(), values_.end(), [](float v) { return v >= 0.0f && v <= 255.0f && v == std::floor(v); })) {
            packed_.assign(values_.begin(), values_.end());
        }
    }

    const TableHeader& header() const noexcept { return header_; }
    const std::vector<float>& values() const noexcept { return values_; }
    int dim() const noexcept { return header_.dim(); }
    std::uint32_t arity() const noexcept { return header_.entry_arity; }

    std::span<const float> entry(std::uint64_t offset) const {
        return {values_.data() + offset * header_.entry_arity, header_.entry_arity};
    }

    /// Nearest grid index along axis j, clamped to [0, M_j - 1].
    std::int64_t nearest_index(int j, double x) const {
        const auto jj = static_cast<std::size_t>(j);
        const std::int64_t top = static_cast<std::int64_t>(header_.grid_sizes[jj]) - 1;
        return std::clamp<std::int64_t>(lvq::round_half_away(x / static_cast<double>(header_.steps[jj])), 0, top);
    }

    /// Per-axis Babai rounding then a single fetch. No arithmetic on weights.
    void lookup_nearest(std::span<const double> x, std::span<double> out) const {
        std::uint64_t off = 0;
        for (int j = 0; j < dim(); ++j) off += static_cast<std::uint64_t>(nearest_index(j, x[j])) * stride_[static_cast<std::size_t>(j)];
        if (!packed_.empty()) {
            const std::uint8_t* e = packed_.data() + off;
            for (std::uint32_t c = 0; c < header_.entry_arity; ++c) out[c] = e[c];
        } else {
            const float* e = values_.data() + off;
            for (std::uint32_t c = 0; c < header_.entry_arity; ++c) out[c] = e[c];
        }
    }

    std::vector<double> lookup_nearest(std::span<const double> x) const {
        check_arity(x);
        std::vector<double> out(header_.entry_arity);
        lookup_nearest(x, out);
        return out;
    }

    /// Multilinear interpolation over the 2^d corners of the enclosing cell.
    void lookup_interpolated(std::span<const double> x, std::span<double> out) const {
        const int d = dim();
        if (d > 4) throw DimensionTooLarge("interpolated lookup supports d <= 4");
        std::array<std::uint64_t, 4> base{}, up{};
        std::array<double, 4> frac{};
        for (int j = 0; j < d; ++j) {
            const auto jj = static_cast<std::size_t>(j);
            const std::uint32_t m = header_.grid_sizes[jj];
            if (m == 1) continue;  // single grid point: weight stays on the lower corner
            const double t = x[jj] / static_cast<double>(header_.steps[jj]);
            const double lo = std::clamp(std::floor(t), 0.0, static_cast<double>(m - 2));
            base[jj] = static_cast<std::uint64_t>(lo) * stride_[jj];
            up[jj] = stride_[jj];
            frac[jj] = std::clamp(t - lo, 0.0, 1.0);
        }
        if (!packed_.empty()) {
#ifdef __SSE2__
            if (d == 4 && header_.entry_arity == 16) return interpolate4_u8x16(base, up, frac, out);
#endif
            interpolate(packed_.data(), d, base, up, frac, out);
        } else {
            interpolate(values_.data(), d, base, up, frac, out);
        }
    }

    std::vector<double> lookup_interpolated(std::span<const double> x) const {
        check_arity(x);
        std::vector<double> out(header_.entry_arity);
        lookup_interpolated(x, out);
        return out;
    }

    friend bool operator==(const LookupTable& a, const LookupTable& b) {
        return a.header_ == b.header_ && a.values_ == b.values_;
    }

private:
    void check_arity(std::span<const double> x) const {
        if (static_cast<int>(x.size()) != dim()) throw InvalidInput("lookup input arity does not match table");
    }

    template <typename T>
    void interpolate(const T* values, int d, const std::array<std::uint64_t, 4>& base,
                     const std::array<std::uint64_t, 4>& up, const std::array<double, 4>& frac,
                     std::span<double> out) const {
        // Corner weights and offsets by doubling, axis 0 most significant.
        // A single-point axis has up = 0, so its upper corner aliases the
        // lower one with weight 0 and every fetch stays in range.
        std::array<double, 16> w{1.0};
        std::array<std::uint64_t, 16> off{0};
        unsigned corners = 1;
        for (int j = 0; j < d; ++j) {
            const auto jj = static_cast<std::size_t>(j);
            const double hi = up[jj] ? frac[jj] : 0.0;
            for (unsigned k = corners; k-- > 0;) {
                w[2 * k + 1] = w[k] * hi;
                w[2 * k] = w[k] * (1.0 - hi);
                off[2 * k + 1] = off[k] + base[jj] + up[jj];
                off[2 * k] = off[k] + base[jj];
            }
            corners *= 2;
        }
        switch (header_.entry_arity) {
            case 1: return accumulate<T, 1>(values, corners, w, off, out);
            case 2: return accumulate<T, 2>(values, corners, w, off, out);
            case 4: return accumulate<T, 4>(values, corners, w, off, out);
            case 16: return accumulate<T, 16>(values, corners, w, off, out);
            default: break;
        }
        for (std::uint32_t c = 0; c < header_.entry_arity; ++c) {
            double acc = 0.0;
            for (unsigned k = 0; k < corners; ++k) acc += w[k] * static_cast<double>(values[off[k] + c]);
            out[c] = acc;
        }
    }

    // Byte tables accumulate in float, error ~1e-4 levels. Local accumulators
    // because byte entries may alias `out`, which blocks vectorization.
    template <typename T, int N>
    static void accumulate(const T* values, unsigned corners, const std::array<double, 16>& w,
                           const std::array<std::uint64_t, 16>& off, std::span<double> out) {
        using Acc = std::conditional_t<std::is_same_v<T, std::uint8_t>, float, double>;
        std::array<Acc, N> acc{};
        for (unsigned k = 0; k < corners; ++k) {
            const T* e = values + off[k];
            const Acc wk = static_cast<Acc>(w[k]);
            for (int c = 0; c < N; ++c) acc[static_cast<std::size_t>(c)] += wk * static_cast<Acc>(e[c]);
        }
        for (int c = 0; c < N; ++c) out[static_cast<std::size_t>(c)] = acc[static_cast<std::size_t>(c)];
    }

#ifdef __SSE2__
    // d = 4, 16 outputs, byte entries: the common compiled-branch shape.
    // Corner weights factor as w01[i] * w23[j] over axis pairs (0,1), (2,3).
    void interpolate4_u8x16(const std::array<std::uint64_t, 4>& base, const std::array<std::uint64_t, 4>& up,
                            const std::array<double, 4>& frac, std::span<double> out) const {
        std::array<float, 4> f{}, g{};
        for (std::size_t j = 0; j < 4; ++j) {
            f[j] = up[j] ? static_cast<float>(frac[j]) : 0.0f;
            g[j] = 1.0f - f[j];
        }
        const std::array<float, 4> w01{g[0] * g[1], g[0] * f[1], f[0] * g[1], f[0] * f[1]};
        const std::array<float, 4> w23{g[2] * g[3], g[2] * f[3], f[2] * g[3], f[2] * f[3]};
        const std::uint64_t b = base[0] + base[1] + base[2] + base[3];
        const std::array<std::uint64_t, 4> o01{0, up[1], up[0], up[0] + up[1]};
        const std::array<std::uint64_t, 4> o23{0, up[3], up[2], up[2] + up[3]};
        const std::uint8_t* v = packed_.data() + b;
        const __m128i zero = _mm_setzero_si128();
        __m128 a0 = _mm_setzero_ps(), a1 = a0, a2 = a0, a3 = a0;
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                const __m128i e = _mm_loadu_si128(reinterpret_cast<const __m128i*>(v + o01[i] + o23[j]));
                const __m128i lo = _mm_unpacklo_epi8(e, zero), hi = _mm_unpackhi_epi8(e, zero);
                const __m128 wk = _mm_set1_ps(w01[i] * w23[j]);
                a0 = _mm_add_ps(a0, _mm_mul_ps(wk, _mm_cvtepi32_ps(_mm_unpacklo_epi16(lo, zero))));
                a1 = _mm_add_ps(a1, _mm_mul_ps(wk, _mm_cvtepi32_ps(_mm_unpackhi_epi16(lo, zero))));
                a2 = _mm_add_ps(a2, _mm_mul_ps(wk, _mm_cvtepi32_ps(_mm_unpacklo_epi16(hi, zero))));
                a3 = _mm_add_ps(a3, _mm_mul_ps(wk, _mm_cvtepi32_ps(_mm_unpackhi_epi16(hi, zero))));
            }
        alignas(16) std::array<float, 16> acc;
        _mm_store_ps(acc.data(), a0);
        _mm_store_ps(acc.data() + 4, a1);
        _mm_store_ps(acc.data() + 8, a2);
        _mm_store_ps(acc.data() + 12, a3);
        for (std::size_t c = 0; c < 16; ++c) out[c] = acc[c];
    }
#endif

    TableHeader header_;
    std::vector<float> values_;
    std::vector<std::uint64_t> stride_;  ///< per-axis offset in values
    std::vector<std::uint8_t> packed_;
};

// ---------------------------------------------------------------------------
// Serialization

inline constexpr std::array<std::uint8_t, 4> kMagic{'R', 'F', 'L', 'T'};
inline constexpr std::uint16_t kFormatVersion = 1;

namespace detail {

class Writer {
public:
    void u8(std::uint8_t v) { buf.push_back(v); }
    void u16(std::uint16_t v) { raw(v); }
    void u32(std::uint32_t v) { raw(v); }
    void f32(float v) { raw(std::bit_cast<std::uint32_t>(v)); }
    void i16(std::int16_t v) { raw(static_cast<std::uint16_t>(v)); }

    std::vector<std::uint8_t> buf;

private:
    template <typename U>
    void raw(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(raw<1>()); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(raw<2>()); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(raw<4>()); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
    std::size_t pos() const noexcept { return pos_; }

private:
    template <std::size_t N>
    std::uint64_t raw() {
        if (bytes_.size() - pos_ < N) throw ParseError(ParseError::Kind::Truncated, "table file truncated");
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < N; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
        pos_ += N;
        return v;
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    std::size_t done = 0;
    while (done < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
        crc = ::crc32(crc, bytes.data() + done, chunk);
        done += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const LookupTable& table) {
    const auto& h = table.header();
    detail::Writer w;
    for (auto c : kMagic) w.u8(c);
    w.u16(kFormatVersion);
    w.u8(static_cast<std::uint8_t>(h.dim()));
    w.u8(0);
    for (int j = 0; j < h.dim(); ++j) {
        w.u32(h.grid_sizes[static_cast<std::size_t>(j)]);
        w.f32(h.steps[static_cast<std::size_t>(j)]);
    }
    w.u32(h.entry_arity);
    w.u8(h.value_bytes());
    w.u8(static_cast<std::uint8_t>(h.value_type));
    w.u32(h.pattern_id);
    w.buf.reserve(w.buf.size() + h.storage() + 4);
    for (float v : table.values()) {
        switch (h.value_type) {
            case ValueType::U8: w.u8(static_cast<std::uint8_t>(v)); break;
            case ValueType::I16: w.i16(static_cast<std::int16_t>(v)); break;
            case ValueType::F32: w.f32(v); break;
        }
    }
    w.u32(detail::crc32_of(w.buf));
    return std::move(w.buf);
}

inline LookupTable deserialize(std::span<const std::uint8_t> bytes) {
    using Kind = ParseError::Kind;
    detail::Reader r(bytes);
    std::array<std::uint8_t, 4> magic{};
    for (auto& c : magic) c = r.u8();
    if (magic != kMagic) throw ParseError(Kind::BadMagic, "not an RFLT table file");
    if (const auto version = r.u16(); version != kFormatVersion)
        throw ParseError(Kind::VersionMismatch, "unsupported table format version " + std::to_string(version));
    const std::uint8_t d = r.u8();
    (void)r.u8();
    if (d == 0) throw ParseError(Kind::BadHeader, "table dimension is zero");

    TableHeader h;
    for (std::uint8_t j = 0; j < d; ++j) {
        h.grid_sizes.push_back(r.u32());
        h.steps.push_back(r.f32());
        if (h.grid_sizes.back() == 0) throw ParseError(Kind::BadHeader, "zero grid size");
        if (!(h.steps.back() > 0.0f) || !std::isfinite(h.steps.back()))
            throw ParseError(Kind::BadHeader, "non-positive grid step");
    }
    h.entry_arity = r.u32();
    const std::uint8_t declared_bytes = r.u8();
    const std::uint8_t tag = r.u8();
    h.pattern_id = r.u32();
    if (h.entry_arity == 0) throw ParseError(Kind::BadHeader, "zero entry arity");
    if (tag > 2) throw ParseError(Kind::BadHeader, "unknown value type tag");
    h.value_type = static_cast<ValueType>(tag);
    if (declared_bytes != h.value_bytes()) throw ParseError(Kind::BadHeader, "bytes-per-value disagrees with value type");

    std::uint64_t block = 0;
    try {
        block = h.storage();
    } catch (const StorageOverflow&) {
        throw ParseError(Kind::BadHeader, "declared table size overflows");
    }
    const std::uint64_t expected = r.pos() + block + 4;
    if (bytes.size() < expected) throw ParseError(Kind::Truncated, "table value block truncated");
    if (bytes.size() > expected) throw ParseError(Kind::LengthMismatch, "trailing bytes after table");

    const auto body = bytes.first(static_cast<std::size_t>(expected - 4));
    detail::Reader crc_reader(bytes.subspan(body.size()));
    if (crc_reader.u32() != detail::crc32_of(body)) throw ParseError(Kind::BadChecksum, "table checksum mismatch");

    std::vector<float> values(static_cast<std::size_t>(block / h.value_bytes()));
    for (auto& v : values) {
        switch (h.value_type) {
            case ValueType::U8: v = r.u8(); break;
            case ValueType::I16: v = r.i16(); break;
            case ValueType::F32:
                v = r.f32();
                if (!std::isfinite(v)) throw ParseError(Kind::BadValue, "non-finite table value");
                break;
        }
    }
    return LookupTable(std::move(h), std::move(values));
}

inline void save(const LookupTable& table, const std::string& path) {
    const auto bytes = serialize(table);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path);
}

inline LookupTable load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace rfelut::lut
