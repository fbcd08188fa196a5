// SPDX-License-Identifier: Apache-2.0
//
// Seeded PRNG for bit-reproducible experiments: splitmix64 expands the seed
// into xoshiro256++ state, and split() derives independent child streams so
// concurrent components never share a sequence. Discrete draws use an
// explicit inverse-CDF walk over the enumerated outcome probabilities, which
// keeps sampled ids identical across platforms for the same seed.

#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace gvpolab {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) {
            word = splitmix64_next(sm);
        }
    }

    // Child stream independent of this one and of other stream ids.
    Rng split(std::uint64_t stream) const {
        std::uint64_t sm = seed_ ^ (0x9e3779b97f4a7c15ull * (stream + 1));
        return Rng(splitmix64_next(sm));
    }

    std::uint64_t next_u64() {
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

    // Uniform in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0, n), n >= 1. Lemire multiply-shift, no rejection.
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Inverse-CDF draw over an enumerated probability vector.
    std::size_t sample_index(std::span<const double> probs) {
        const double u = next_double();
        double cum = 0.0;
        for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
            cum += probs[i];
            if (u < cum) {
                return i;
            }
        }
        return probs.empty() ? 0 : probs.size() - 1;
    }

    std::uint64_t seed() const { return seed_; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t seed_;
    std::array<std::uint64_t, 4> state_;
};

}  // namespace gvpolab
