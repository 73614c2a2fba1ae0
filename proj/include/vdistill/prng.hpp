#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>

namespace vdistill {

// SplitMix64. Every random draw in the project goes through this generator so
// that manifests and synthetic data can be reproduced from the documented
// algorithm in any language:
//
//   state += 0x9E3779B97F4A7C15
//   z = state
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   return z ^ (z >> 31)
//
// Derived draws:
//   uniform01()       = (next() >> 11) * 2^-53                      in [0, 1)
//   uniform_int(a, b) = a + x % r, r = b - a + 1, rejecting x >= 2^64 - (2^64 mod r)
//   gaussian()        = Box-Muller on (u1, u2) = (1 - uniform01(), uniform01()),
//                       returning sqrt(-2 ln u1) cos(2 pi u2) then the cached sin branch
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed = 0) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    double uniform01() { return double(next() >> 11) * 0x1.0p-53; }

    // inclusive bounds, lo <= hi
    uint64_t uniform_int(uint64_t lo, uint64_t hi);

    double gaussian();

    // Fisher-Yates, drawing j = uniform_int(0, i) for i = n-1 down to 1
    template <typename T>
    void shuffle(std::span<T> items) {
        for (size_t i = items.size(); i > 1; --i) {
            const size_t j = size_t(uniform_int(0, i - 1));
            std::swap(items[i - 1], items[j]);
        }
    }

    uint64_t state() const { return state_; }

private:
    uint64_t              state_;
    std::optional<double> spare_;
};

// Independent stream seed for (seed, stream) pairs: first output of SplitMix64(seed ^ mix(stream)).
uint64_t derive_seed(uint64_t seed, uint64_t stream);

} // namespace vdistill
