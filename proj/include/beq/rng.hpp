#pragma once

// Counter-based random streams keyed by an index tuple. A stream's draws
// depend only on (seed, keys...), never on the order in which streams are
// created or consumed, so parallel schedules reproduce serial results.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace beq {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Mixes an ordered key tuple into a single 64-bit stream identifier.
inline constexpr std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) noexcept {
    std::uint64_t h = splitmix64(seed ^ 0x5DEECE66DULL);
    for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k + 0x632BE59BD9B4E019ULL));
    return h;
}

class KeyedStream {
public:
    explicit KeyedStream(std::uint64_t key) noexcept : key_(key) {}
    KeyedStream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) noexcept
        : key_(derive_key(seed, keys)) {}

    std::uint64_t next_u64() noexcept { return splitmix64(key_ + (++counter_) * 0xD1B54A32D192ED03ULL); }

    /// Uniform on the open interval (0, 1).
    double uniform() noexcept { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    /// Standard normal via Box-Muller (one variate per two uniforms).
    double normal() noexcept {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace beq
