#include "support.hpp"

#include "doctest.h"

#include <fstream>
#include <set>

using namespace vdtest;

namespace {

std::vector<std::string> data_lines(const std::string & name) {
    std::ifstream in(data_dir() / name);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line[0] != '#') {
            out.push_back(line);
        }
    }
    return out;
}

} // namespace

TEST_CASE("splitmix64 golden outputs, seed 0") {
    const auto lines = data_lines("prng_seed0.txt");
    REQUIRE(lines.size() == 16);
    SplitMix64 rng(0);
    for (const auto & l : lines) {
        CHECK(rng.next() == std::stoull(l, nullptr, 16));
    }
}

TEST_CASE("uniform_int golden draws") {
    const auto lines = data_lines("prng_uniform_int_seed42.txt");
    REQUIRE(lines.size() == 16);
    SplitMix64 rng(42);
    for (const auto & l : lines) {
        CHECK(rng.uniform_int(0, 9) == std::stoull(l));
    }
}

TEST_CASE("gaussian golden draws") {
    const auto lines = data_lines("prng_gaussian_seed7.txt");
    REQUIRE(lines.size() == 8);
    SplitMix64 rng(7);
    for (const auto & l : lines) {
        const double want = std::stod(l);
        CHECK(rng.gaussian() == doctest::Approx(want).epsilon(1e-14));
    }
}

TEST_CASE("uniform_int stays in range and covers it") {
    SplitMix64 rng(3);
    std::set<uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const auto x = rng.uniform_int(5, 12);
        CHECK(x >= 5);
        CHECK(x <= 12);
        seen.insert(x);
    }
    CHECK(seen.size() == 8);
    CHECK(rng.uniform_int(4, 4) == 4);
    CHECK(rng.uniform_int(0, UINT64_MAX) >= 0);
}

TEST_CASE("uniform01 in [0, 1)") {
    SplitMix64 rng(11);
    double lo = 1, hi = 0;
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform01();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
}

TEST_CASE("derived streams are distinct and reproducible") {
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) != derive_seed(2, 2));
}

TEST_CASE("shuffle is a seeded permutation") {
    std::vector<int> a(50), b(50);
    for (int i = 0; i < 50; ++i) {
        a[i] = b[i] = i;
    }
    SplitMix64 r1(9), r2(9);
    r1.shuffle(std::span<int>(a));
    r2.shuffle(std::span<int>(b));
    CHECK(a == b);
    std::vector<int> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) {
        CHECK(sorted[i] == i);
    }
}
