#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>

namespace mmdp {

// SplitMix64 step. Used to expand seeds and to derive independent stream keys.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Hash an ordered list of keys into one 64-bit stream seed.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys) {
    std::uint64_t h = 0x6A09E667F3BCC908ULL;
    for (std::uint64_t k : keys) {
        std::uint64_t s = h ^ k;
        h = splitmix64(s);
    }
    return h;
}

/// xoshiro256++ generator. Cheap to construct, so one generator is created per
/// (experiment seed, trajectory id) pair; serial and parallel runs therefore
/// produce identical streams.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) { reseed(seed); }
    Rng(std::uint64_t seed, std::uint64_t stream) { reseed(derive_seed({seed, stream})); }

    void reseed(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::array<std::uint64_t, 4> state_{};
};

/// Inverse-CDF draw from a probability vector; consumes exactly one uniform.
inline int draw_categorical(std::span<const double> probs, Rng& rng) {
    double u = rng.uniform();
    const int n = static_cast<int>(probs.size());
    for (int i = 0; i < n; ++i) {
        u -= probs[static_cast<std::size_t>(i)];
        if (u < 0.0) return i;
    }
    // Round-off: return the last index with positive mass.
    for (int i = n - 1; i >= 0; --i)
        if (probs[static_cast<std::size_t>(i)] > 0.0) return i;
    return n - 1;
}

/// Standard normal via Box-Muller; consumes exactly two uniforms.
inline double draw_normal(Rng& rng) {
    double u1 = rng.uniform();
    const double u2 = rng.uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

inline bool draw_bernoulli(double p, Rng& rng) { return rng.uniform() < p; }

}  // namespace mmdp
