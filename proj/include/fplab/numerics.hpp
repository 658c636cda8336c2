// Copyright (c) 2026, fplab authors
// SPDX-License-Identifier: Apache-2.0
//
// Software emulation of reduced-precision binary floating point.
//
// Values are carried in `double`. A value "belongs" to a FloatFormat when
// quantize(format, v) == v. Every emulated arithmetic op evaluates in double
// and rounds once into the target format. For operands with at most 24
// significant bits, binary64 has enough headroom (53 >= 2*24 + 2) that the
// double-then-format rounding equals the exact result rounded once.

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fplab {

struct FloatFormat {
    int exponent_bits = 8;
    int mantissa_bits = 23;
    bool supports_subnormals = true;
    std::string name = "fp32";

    /// Native binary64 passthrough. quantize() is the identity for it.
    [[nodiscard]] bool is_native() const noexcept { return exponent_bits == 11 && mantissa_bits == 52; }

    [[nodiscard]] int bias() const noexcept { return (1 << (exponent_bits - 1)) - 1; }
    [[nodiscard]] int min_exponent() const noexcept { return 1 - bias(); }
    [[nodiscard]] int max_exponent() const noexcept { return bias(); }

    [[nodiscard]] double smallest_normal() const noexcept { return std::ldexp(1.0, min_exponent()); }
    [[nodiscard]] double smallest_subnormal() const noexcept {
        return std::ldexp(1.0, min_exponent() - mantissa_bits);
    }
    [[nodiscard]] double largest_finite() const noexcept {
        return std::ldexp(2.0 - std::ldexp(1.0, -mantissa_bits), max_exponent());
    }
    /// Spacing of the grid in [1, 2).
    [[nodiscard]] double epsilon() const noexcept { return std::ldexp(1.0, -mantissa_bits); }
    [[nodiscard]] double next_above_one() const noexcept { return 1.0 + epsilon(); }

    friend bool operator==(const FloatFormat& a, const FloatFormat& b) {
        return a.exponent_bits == b.exponent_bits && a.mantissa_bits == b.mantissa_bits &&
               a.supports_subnormals == b.supports_subnormals;
    }
};

/// Validating constructor for arbitrary emulated formats.
inline FloatFormat make_format(int exponent_bits, int mantissa_bits, bool subnormals = true,
                               std::string name = "custom") {
    if (exponent_bits < 2 || mantissa_bits < 1 || exponent_bits + mantissa_bits > 31) {
        throw std::invalid_argument("invalid float format: exponent_bits=" + std::to_string(exponent_bits) +
                                    " mantissa_bits=" + std::to_string(mantissa_bits));
    }
    return FloatFormat{exponent_bits, mantissa_bits, subnormals, std::move(name)};
}

namespace formats {
inline FloatFormat fp16() { return {5, 10, true, "fp16"}; }
inline FloatFormat bf16() { return {8, 7, true, "bf16"}; }
inline FloatFormat fp32() { return {8, 23, true, "fp32"}; }
inline FloatFormat fp64() { return {11, 52, true, "fp64"}; }
} // namespace formats

inline std::optional<FloatFormat> format_by_name(std::string_view name) {
    if (name == "fp16") return formats::fp16();
    if (name == "bf16") return formats::bf16();
    if (name == "fp32") return formats::fp32();
    if (name == "fp64") return formats::fp64();
    return std::nullopt;
}

inline FloatFormat parse_format(std::string_view name) {
    if (auto f = format_by_name(name)) return *f;
    throw std::invalid_argument("unknown float format '" + std::string(name) + "' (expected fp16, bf16, fp32 or fp64)");
}

/// Round-to-nearest, ties-to-even into `format`. Overflow goes to infinity,
/// underflow to signed zero. Total and idempotent.
inline double quantize(const FloatFormat& format, double x) noexcept {
    constexpr std::uint64_t sign_mask = std::uint64_t{1} << 63;
    constexpr std::uint64_t inf_bits = 0x7ffull << 52;
    if (format.is_native()) return x;
    const auto bits = std::bit_cast<std::uint64_t>(x);
    const std::uint64_t abits = bits & ~sign_mask;
    if (abits == 0 || abits >= inf_bits) return x;

    const int drop = std::numeric_limits<double>::digits - 1 - format.mantissa_bits;
    const std::uint64_t ulp = std::uint64_t{1} << drop;
    const auto min_normal_bits = static_cast<std::uint64_t>(1023 + format.min_exponent()) << 52;
    std::uint64_t r;
    if (abits < min_normal_bits) {
        // Fixed quantum below the normal range; both scalings are exact.
        const double q = std::bit_cast<double>(static_cast<std::uint64_t>(1023 + format.min_exponent() - format.mantissa_bits) << 52);
        const double ax = std::bit_cast<double>(abits);
        r = std::bit_cast<std::uint64_t>(std::nearbyint(ax / q) * q);
        if (!format.supports_subnormals && r < min_normal_bits) r = 0;
    } else {
        const std::uint64_t round = (ulp >> 1) - 1 + ((abits >> drop) & 1u);
        r = (abits + round) & ~(ulp - 1);
        const auto largest_bits = (static_cast<std::uint64_t>(1023 + format.max_exponent()) << 52) | ((std::uint64_t{1} << 52) - ulp);
        if (r > largest_bits) r = inf_bits;
    }
    return std::bit_cast<double>(r | (bits & sign_mask));
}

// One rounding per emulated operation.
inline double qadd(const FloatFormat& f, double a, double b) noexcept { return quantize(f, a + b); }
inline double qsub(const FloatFormat& f, double a, double b) noexcept { return quantize(f, a - b); }
inline double qmul(const FloatFormat& f, double a, double b) noexcept { return quantize(f, a * b); }
inline double qdiv(const FloatFormat& f, double a, double b) noexcept { return quantize(f, a / b); }
inline double qexp(const FloatFormat& f, double a) noexcept { return quantize(f, std::exp(a)); }
inline double qtanh(const FloatFormat& f, double a) noexcept { return quantize(f, std::tanh(a)); }

/// NaN for non-positive input; callers test std::isnan.
inline double qlog(const FloatFormat& f, double a) noexcept {
    if (!(a > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    return quantize(f, std::log(a));
}

enum class ReductionOrder { Sequential, Pairwise };

inline std::string_view to_string(ReductionOrder order) {
    return order == ReductionOrder::Sequential ? "sequential" : "pairwise";
}

inline ReductionOrder parse_reduction_order(std::string_view s) {
    if (s == "sequential") return ReductionOrder::Sequential;
    if (s == "pairwise") return ReductionOrder::Pairwise;
    throw std::invalid_argument("unknown reduction order '" + std::string(s) + "' (expected sequential or pairwise)");
}

namespace detail {
inline double pairwise_sum(const FloatFormat& f, std::span<const double> v) noexcept {
    if (v.size() == 1) return v[0];
    if (v.size() == 2) return qadd(f, v[0], v[1]);
    const std::size_t half = v.size() / 2;
    return qadd(f, pairwise_sum(f, v.first(half)), pairwise_sum(f, v.subspan(half)));
}
} // namespace detail

/// Sum with one quantization per partial sum. SEQUENTIAL folds left to
/// right; PAIRWISE splits [0, n/2) | [n/2, n) recursively.
inline double reduce(const FloatFormat& f, std::span<const double> values, ReductionOrder order) noexcept {
    if (values.empty()) return 0.0;
    if (order == ReductionOrder::Pairwise) return detail::pairwise_sum(f, values);
    double acc = values[0];
    for (std::size_t i = 1; i < values.size(); ++i) acc = qadd(f, acc, values[i]);
    return acc;
}

} // namespace fplab
