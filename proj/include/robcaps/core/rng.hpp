#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "robcaps/core/tensor.hpp"

namespace robcaps {

/// Seeded generator wrapper. All randomness in the library flows through
/// explicitly seeded instances of this; nothing reads the system entropy pool.
class Rng {
public:
    explicit Rng(uint64_t seed) : base_(seed), eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * (static_cast<double>(eng_() >> 11) * (1.0 / 9007199254740992.0));
    }

    /// Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(eng_() % span);
    }

    bool coin() { return (eng_() & 1u) != 0; }

    double normal(double mean, double stddev) {
        double u1 = uniform(1e-12, 1.0);
        double u2 = uniform(0.0, 1.0);
        return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    /// Normal resampled into +/-2 standard deviations.
    double truncated_normal(double mean, double stddev) {
        for (;;) {
            double z = normal(0.0, 1.0);
            if (std::abs(z) <= 2.0) return mean + stddev * z;
        }
    }

    /// Derive an independent stream; stable given (seed, tag).
    Rng fork(uint64_t tag) const {
        uint64_t h = base_ ^ 0x9e3779b97f4a7c15ull;
        h = (h ^ (tag * 0xbf58476d1ce4e5b9ull)) * 0x94d049bb133111ebull;
        h ^= h >> 31;
        return Rng(h);
    }

    template <class T>
    void fill_uniform(Tensor<T>& t, double lo, double hi) {
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(uniform(lo, hi));
    }
    template <class T>
    void fill_truncated_normal(Tensor<T>& t, double mean, double stddev) {
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(truncated_normal(mean, stddev));
    }

    template <class It>
    void shuffle(It first, It last) {
        auto n = last - first;
        for (auto i = n - 1; i > 0; --i) std::swap(first[i], first[uniform_int(0, i)]);
    }

private:
    uint64_t base_;
    std::mt19937_64 eng_;
};

} // namespace robcaps
