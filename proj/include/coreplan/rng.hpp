#pragma once

#include <cstdint>
#include <limits>

namespace coreplan {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives the key of a child stream from a parent key and a stream id.
constexpr std::uint64_t derive_stream_key(std::uint64_t key, std::uint64_t stream_id) noexcept {
    return mix64(key ^ mix64(stream_id + 0x632be59bd9b4e019ULL));
}

/**
 * Counter-based random stream.
 *
 * The i-th output is a pure function of (key, i), so a stream can be
 * reproduced or split without sharing mutable generator state. Satisfies
 * UniformRandomBitGenerator, so it plugs into <random> and <algorithm>.
 */
class CounterRng {
public:
    using result_type = std::uint64_t;

    CounterRng() = default;
    CounterRng(std::uint64_t seed, std::uint64_t stream_id)
        : key_(derive_stream_key(mix64(seed), stream_id)) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        return mix64(key_ ^ mix64(counter_++));
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept {
        return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Uses rejection so the result is unbiased.
    std::uint64_t below(std::uint64_t n) noexcept {
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t x;
        do {
            x = (*this)();
        } while (x >= limit);
        return x % n;
    }

    CounterRng split(std::uint64_t stream_id) const noexcept {
        CounterRng child;
        child.key_ = derive_stream_key(key_, stream_id);
        return child;
    }

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t draws() const noexcept { return counter_; }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace coreplan
