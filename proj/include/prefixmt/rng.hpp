#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

namespace prefixmt {

// xoshiro256++ with splitmix64 seeding. The standard <random> distributions
// are not bit-stable across library implementations, so every draw the
// project depends on for reproducibility goes through this generator.
class Rng {
public:
    explicit Rng(uint64_t seed) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& s : state_) s = splitmix64(x);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // uniform in [0, 1), 53-bit resolution, exact double
    double uniform_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    float uniform() { return static_cast<float>(uniform_double()); }

    float uniform(float lo, float hi) {
        return lo + (hi - lo) * uniform();
    }

    // integer in [0, n), n > 0
    int uniform_int(int n) {
        return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
    }

    bool bernoulli(double p) { return uniform_double() < p; }

    // Box-Muller; draws two uniforms per call, discards the sine branch so
    // no hidden cache state has to be serialized.
    float normal() {
        double u1 = uniform_double();
        double u2 = uniform_double();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        return static_cast<float>(r * std::cos(2.0 * M_PI * u2));
    }

    std::array<uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ull;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d49bb133111ebull;
        return z ^ (z >> 31);
    }

    // stable seed derivation: mix(seed, tag) for independent streams
    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
        return splitmix64(x);
    }

    static uint64_t mix(uint64_t a, const std::string& tag) {
        uint64_t h = 0xcbf29ce484222325ull;
        for (unsigned char c : tag) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        return mix(a, h);
    }

private:
    static uint64_t rotl(uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::array<uint64_t, 4> state_{};
};

// FNV-1a over raw bytes; used for parameter-group and oracle content hashes.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace prefixmt
