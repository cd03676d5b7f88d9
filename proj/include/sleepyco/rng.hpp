#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace sleepyco {

// splitmix64 step; used both as a generator seeder and as a key mixer.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives a stream key from a seed plus up to three coordinates. Streams with
// distinct coordinates are independent, so batches are reproducible under any
// parallel schedule.
inline std::uint64_t derive_key(std::uint64_t seed, std::uint64_t a = 0,
                                std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t s = seed;
    std::uint64_t k = splitmix64(s);
    s ^= a + 0x165667b19e3779f9ULL;
    k ^= splitmix64(s);
    s ^= b + 0x27d4eb2f165667c5ULL;
    k ^= splitmix64(s);
    s ^= c + 0x85ebca77c2b2ae63ULL;
    k ^= splitmix64(s);
    return k;
}

inline std::uint64_t hash_string(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic random stream. Distribution sampling is hand-rolled (rejection
// for integers, Box-Muller for normals) so results do not depend on the
// standard library's distribution internals.
class RngStream {
public:
    explicit RngStream(std::uint64_t key) : gen_(key) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    long uniform_int(long lo, long hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t v;
        do {
            v = gen_();
        } while (v >= limit);
        return lo + static_cast<long>(v % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller; no cached spare, so the draw count per
    // call is fixed and replay is schedule-independent.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

private:
    std::mt19937_64 gen_;
};

inline RngStream keyed_stream(std::uint64_t seed, std::uint64_t a = 0,
                              std::uint64_t b = 0, std::uint64_t c = 0) {
    return RngStream(derive_key(seed, a, b, c));
}

}  // namespace sleepyco
