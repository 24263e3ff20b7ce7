#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace bisnn {

// Counter-based random numbers. Every draw is a pure function of
// (seed, stream, counter), so results do not depend on call order or on how
// work is split between threads.

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace detail

class CounterRng {
public:
    constexpr CounterRng() = default;
    constexpr explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
        : key_(detail::splitmix64(detail::splitmix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL))) {}

    /// Derive an independent generator, e.g. one per epoch or per ensemble member.
    [[nodiscard]] constexpr CounterRng substream(std::uint64_t id) const noexcept {
        CounterRng r;
        r.key_ = detail::splitmix64(key_ ^ detail::splitmix64(id + 0x632be59bd9b4e019ULL));
        return r;
    }

    [[nodiscard]] constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
        return detail::splitmix64(key_ + detail::splitmix64(counter));
    }

    /// Uniform in the open interval (0, 1).
    [[nodiscard]] constexpr double uniform(std::uint64_t counter) const noexcept {
        return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller on counters 2k and 2k+1.
    [[nodiscard]] double normal(std::uint64_t counter) const noexcept {
        const double u1 = uniform(2 * counter);
        const double u2 = uniform(2 * counter + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [0, n).
    [[nodiscard]] constexpr std::uint64_t below(std::uint64_t counter, std::uint64_t n) const noexcept {
        return static_cast<std::uint64_t>(uniform(counter) * static_cast<double>(n)) % n;
    }

private:
    std::uint64_t key_ = 0;
};

/// Sequential convenience wrapper around a CounterRng.
class RngStream {
public:
    explicit RngStream(CounterRng rng) noexcept : rng_(rng) {}
    explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0) noexcept : rng_(seed, stream) {}

    double uniform() noexcept { return rng_.uniform(next_++); }
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    double normal() noexcept { return rng_.normal(next_++); }
    std::uint64_t below(std::uint64_t n) noexcept { return rng_.below(next_++, n); }

private:
    CounterRng rng_;
    std::uint64_t next_ = 0;
};

} // namespace bisnn
