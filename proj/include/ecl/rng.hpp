#pragma once

#include <array>
#include <cstdint>

#include "ecl/common.hpp"

namespace ecl {

// xoshiro256** with a splitmix64 seeder. Self-contained so that sequences
// are reproducible across platforms and serializable into checkpoints
// (std:: distributions are implementation-defined).
class Rng {
public:
    Rng() : Rng(0) {}

    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& s : state_) {
            // splitmix64
            x += 0x9e3779b97f4a7c15ULL;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            s = z ^ (z >> 31);
        }
    }

    // Independent child stream; used to give each env copy / agent its own rng.
    Rng split(uint64_t stream_id) {
        return Rng(next_u64() ^ (0x9e3779b97f4a7c15ULL * (stream_id + 1)));
    }

    uint64_t next_u64() {
        auto rotl = [](uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection-free enough for our n << 2^64.
    int uniform_int(int n) {
        if (n <= 0) fail("uniform_int: n must be positive, got ", n);
        return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
    }

    // Sample an index from an (unnormalized is not allowed) probability vector.
    template <typename T>
    int sample_index(const T* probs, int n) {
        double r = uniform();
        double cum = 0.0;
        for (int i = 0; i < n; ++i) {
            cum += static_cast<double>(probs[i]);
            if (r < cum) return i;
        }
        return n - 1;  // guard against rounding spill
    }

    std::array<uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

private:
    std::array<uint64_t, 4> state_{};
};

}  // namespace ecl
