#include "vdistill/prng.hpp"

#include "vdistill/error.hpp"

#include <cmath>
#include <numbers>

namespace vdistill {

uint64_t SplitMix64::uniform_int(uint64_t lo, uint64_t hi) {
    if (hi < lo) {
        throw Error(ErrorCode::InvalidArgument, "uniform_int with hi < lo");
    }
    const uint64_t span = hi - lo;
    if (span == UINT64_MAX) {
        return next();
    }
    const uint64_t r = span + 1;
    // 2^64 - (2^64 mod r), computed without 128-bit arithmetic
    const uint64_t rem = (UINT64_MAX % r + 1) % r;
    const uint64_t limit = rem == 0 ? 0 : UINT64_MAX - rem + 1;
    uint64_t x = next();
    while (limit != 0 && x >= limit) {
        x = next();
    }
    return lo + x % r;
}

double SplitMix64::gaussian() {
    if (spare_) {
        const double s = *spare_;
        spare_.reset();
        return s;
    }
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    return radius * std::cos(angle);
}

uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    SplitMix64 mixer(stream);
    SplitMix64 g(seed ^ mixer.next());
    return g.next();
}

} // namespace vdistill
