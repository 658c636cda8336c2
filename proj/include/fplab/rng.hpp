// Copyright (c) 2026, fplab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace fplab {

inline constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Order-sensitive hash of a tuple of integers, used to key rng streams.
inline constexpr std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts) noexcept {
    std::uint64_t h = 0x6a09e667f3bcc909ull;
    for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
    return h;
}

/// Counter-based generator: output i is a pure function of (key, i), so the
/// full state is two integers and any stream can be re-created or forked.
class CounterRng {
public:
    struct State {
        std::uint64_t key = 0;
        std::uint64_t counter = 0;
        friend bool operator==(const State&, const State&) = default;
    };

    CounterRng() = default;
    explicit CounterRng(std::uint64_t key) : state_{key, 0} {}
    explicit CounterRng(State s) : state_(s) {}
    CounterRng(std::initializer_list<std::uint64_t> key_parts) : state_{stream_key(key_parts), 0} {}

    [[nodiscard]] State state() const noexcept { return state_; }

    std::uint64_t next_u64() noexcept { return splitmix64(state_.key + 0x9e3779b97f4a7c15ull * ++state_.counter); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). Multiply-shift; bias is below 2^-32 for n < 2^32.
    std::uint64_t below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Box-Muller, one output per call.
    double normal() noexcept {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    State state_{};
};

} // namespace fplab
