#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace glyphdiff {

// Counter-based deterministic RNG. A stream is (seed, name) -> key; every
// draw mixes key with an incrementing counter through splitmix64, so the
// k-th value of a stream is a pure function of (seed, name, k). Distinct
// names give statistically independent streams for the same seed.
class RngStream {
public:
    RngStream(uint64_t seed, std::string_view name) : key_(derive_key(seed, name)) {}

    uint64_t next_u64() {
        uint64_t z = key_ + 0x9e3779b97f4a7c15ull * ++counter_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1), 24-bit mantissa so the value is exact in f32.
    float uniform() { return static_cast<float>(next_u64() >> 40) * 0x1p-24f; }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; second value of each pair is cached.
    float normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        float u1 = uniform(), u2 = uniform();
        // avoid log(0)
        u1 = u1 < 0x1p-24f ? 0x1p-24f : u1;
        float r = std::sqrt(-2.0f * std::log(u1));
        float a = 6.2831853071795864769f * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0, n)
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    uint64_t counter() const { return counter_; }

private:
    static uint64_t derive_key(uint64_t seed, std::string_view name) {
        // FNV-1a over the name, folded with the seed and remixed.
        uint64_t h = 0xcbf29ce484222325ull;
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        uint64_t z = seed ^ h;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t key_;
    uint64_t counter_ = 0;
    float cached_ = 0.0f;
    bool have_cached_ = false;
};

}  // namespace glyphdiff
