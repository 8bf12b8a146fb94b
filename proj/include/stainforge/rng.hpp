#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <utility>

namespace stainforge {

/// SplitMix64 output finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Counter-based generator: draw i is mix64(key + i * golden). A generator is
/// fully identified by its key, so independent streams for (seed, index)
/// pairs can be created in any order on any thread with identical results.
///
/// All helpers below are defined bit-for-bit (no std distributions) so the
/// streams are reproducible across standard libraries and by the Python
/// oracle scripts under tests/oracles.
class Rng {
public:
    using result_type = std::uint64_t;

    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

    explicit constexpr Rng(std::uint64_t key) noexcept : key_(key) {}

    /// Generator for stream `stream` of `seed`.
    static constexpr Rng derive(std::uint64_t seed, std::uint64_t stream) noexcept
    {
        return Rng(mix64(seed ^ mix64(stream ^ 0xD1B54A32D192ED03ULL)));
    }

    /// Child stream; used to give sub-steps their own generator.
    constexpr Rng split(std::uint64_t stream) const noexcept { return derive(key_, stream); }

    constexpr std::uint64_t key() const noexcept { return key_; }

    constexpr std::uint64_t next_u64() noexcept
    {
        ++counter_;
        return mix64(key_ + counter_ * kGolden);
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }
    constexpr result_type operator()() noexcept { return next_u64(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Unbiased integer in [0, n) (Lemire's multiply-shift with rejection). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n) noexcept
    {
        unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                m = static_cast<unsigned __int128>(next_u64()) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Standard normal via Box-Muller (one variate per two uniforms).
    double normal() noexcept
    {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Fisher-Yates, high index first.
    template <typename T>
    void shuffle(std::span<T> items) noexcept
    {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_index(i));
            using std::swap;
            swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace stainforge
