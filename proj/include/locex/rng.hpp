#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string_view>

namespace locex {

// SplitMix64 finalizer. Used both as the generator step and as the mixing
// function that derives independent sub-streams from (seed, counter) pairs.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Counter-based splittable generator.
///
/// Every stream is addressed by a 64-bit key; `split(i)` returns the i-th
/// child stream without advancing the parent, so a batch of draws can be
/// evaluated in any order (or in parallel) and still produce bit-identical
/// results. Satisfies UniformRandomBitGenerator.
class Stream {
public:
    using result_type = std::uint64_t;

    constexpr explicit Stream(std::uint64_t key) noexcept : state_(mix64(key ^ 0x6a09e667f3bcc909ULL)) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix64(state_);
    }

    [[nodiscard]] constexpr Stream split(std::uint64_t index) const noexcept {
        return Stream(mix64(state_ + 0x9e3779b97f4a7c15ULL * (index + 1)) ^ 0xd1b54a32d192ed03ULL);
    }

    /// Named sub-stream; the name is hashed with FNV-1a.
    [[nodiscard]] Stream split(std::string_view name) const noexcept {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : name) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return split(h);
    }

    /// Uniform on the open interval (0, 1); never returns exactly 0 or 1.
    double uniform() noexcept {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Uniform integer on [0, n) by Lemire's multiply-and-reject.
    std::uint64_t below(std::uint64_t n) noexcept {
        if (n <= 1) return 0;
        __uint128_t m = static_cast<__uint128_t>((*this)()) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                m = static_cast<__uint128_t>((*this)()) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Standard normal via Box-Muller (one value per call, the pair's second
    /// half is discarded so the stream position depends only on call count).
    double normal() noexcept {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t state_;
};

}  // namespace locex
