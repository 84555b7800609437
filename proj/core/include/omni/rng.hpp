#pragma once

#include <cmath>
#include <cstdint>

namespace omni {

// splitmix64: the single mixing function used everywhere determinism
// matters (init, data generation, sampling, stub encoders). Chosen over
// <random> distributions because its output is bit-identical across
// standard-library implementations.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Combine a seed with a stream id so independent consumers of one seed
// never overlap.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

// Small deterministic generator. Not cryptographic; stable across
// platforms, which is what the reproducibility contract needs.
class Rng {
  public:
    explicit Rng(uint64_t seed = 0) : state_(splitmix64(seed ^ 0x8e9c04d7f3a1b5c2ULL)) {}

    uint64_t next_u64() {
        state_ = splitmix64(state_);
        return state_;
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [0, n)
    uint64_t uniform_int(uint64_t n) {
        return next_u64() % n;
    }

    // standard normal via Box-Muller (no caching, two uniforms per draw)
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

  private:
    uint64_t state_;
};

// fnv1a-64 over raw bytes; used for artifact hashes in run manifests and
// for the parameter-freeze byte checks.
inline uint64_t fnv1a64(const void * data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char * p = static_cast<const unsigned char *>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace omni
