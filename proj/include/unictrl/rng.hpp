#ifndef UNICTRL_RNG_HPP
#define UNICTRL_RNG_HPP

#include <cmath>
#include <cstdint>

namespace unictrl {

// Counter-based random stream: output i depends only on (seed, counter + i),
// so fills can run in parallel and any draw can be replayed exactly.
struct RngStream {
    uint64_t seed = 0;
    uint64_t counter = 0;
};

namespace rng_detail {

constexpr uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

inline uint64_t mix64(uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

inline uint64_t word_at(uint64_t seed, uint64_t counter) {
    return mix64(mix64(seed + kGamma) + (counter + 1) * kGamma);
}

}  // namespace rng_detail

// Independent stream for a named sub-purpose of the same run seed.
inline RngStream derive_stream(uint64_t seed, uint64_t domain) {
    return RngStream{rng_detail::mix64(rng_detail::mix64(seed) ^ rng_detail::word_at(domain, 0)), 0};
}

inline uint64_t next_u64(RngStream& s) {
    return rng_detail::word_at(s.seed, s.counter++);
}

// Uniform in [0, 1).
inline double next_unit(RngStream& s) {
    return double(next_u64(s) >> 11) * 0x1.0p-53;
}

// Uniform integer in [lo, hi] inclusive.
inline int64_t next_int(RngStream& s, int64_t lo, int64_t hi) {
    uint64_t span = uint64_t(hi - lo) + 1;
    return lo + int64_t(next_u64(s) % span);
}

// Standard normal draw for counter slot `index` of the stream. One slot per
// value; Box-Muller over the two 32-bit halves of one mixed word.
inline float normal_at(const RngStream& s, uint64_t index) {
    uint64_t w = rng_detail::word_at(s.seed, s.counter + index);
    uint32_t hi = uint32_t(w >> 32);
    uint32_t lo = uint32_t(w);
    double u1 = (double(hi) + 0.5) * 0x1.0p-32;  // (0, 1)
    double u2 = double(lo) * 0x1.0p-32;          // [0, 1)
    double r = std::sqrt(-2.0 * std::log(u1));
    return float(r * std::cos(6.283185307179586 * u2));
}

inline float next_normal(RngStream& s) {
    float v = normal_at(s, 0);
    s.counter += 1;
    return v;
}

}  // namespace unictrl

#endif
