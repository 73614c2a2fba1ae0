#include "support.hpp"

#include "vdistill/dfm.hpp"
#include "vdistill/error.hpp"
#include "vdistill/oracle.hpp"

#include "doctest.h"

#include <algorithm>
#include <numeric>

using namespace vdtest;

namespace {

struct Instance {
    PatchGrid                frame;
    std::optional<PatchGrid> keyframe;
    QueryEmbedding           query;
    double                   lambda = 1.0;
};

Instance random_instance(uint64_t seed, uint32_t max_m, uint32_t max_d) {
    SplitMix64 rng(seed);
    const uint32_t m = uint32_t(rng.uniform_int(1, max_m));
    const uint32_t d = uint32_t(rng.uniform_int(2, max_d));
    Instance in;
    in.frame = random_grid(rng, 1, m, d);
    if (rng.uniform01() < 0.75) {
        in.keyframe = random_grid(rng, 0, m, d);
    }
    in.query.patch_space = random_unit_vector(rng, d);
    in.query.frame_space = in.query.patch_space;
    in.lambda = 2.0 * rng.uniform01();
    return in;
}

const PatchGrid * key_ptr(const Instance & in) { return in.keyframe ? &*in.keyframe : nullptr; }

} // namespace

TEST_CASE("patch_saliency") {
    const auto q = query_of({1, 0});
    const auto frame = grid_of(1, {{0, 1}, {1, 0}});
    const auto key = grid_of(0, {{0, 1}, {0, 1}});
    SUBCASE("duplicate of keyframe patch, orthogonal to query") {
        const auto s = patch_saliency(frame, &key, q, 1.0);
        CHECK(s[0] == -1.0);
        CHECK(s[1] == 1.0);
    }
    SUBCASE("no keyframe") {
        const auto s = patch_saliency(frame, nullptr, q, 1.0);
        CHECK(s == std::vector<double>{0.0, 1.0});
    }
    SUBCASE("lambda 0") {
        CHECK(patch_saliency(frame, &key, q, 0.0) == patch_saliency(frame, nullptr, q, 1.0));
    }
    SUBCASE("errors") {
        const auto small = grid_of(0, {{0, 1}});
        try {
            patch_saliency(frame, &small, q, 1.0);
            FAIL("no throw");
        } catch (const Error & e) {
            CHECK(e.code() == ErrorCode::PatchCountMismatch);
        }
        try {
            patch_saliency(frame, nullptr, query_of({1, 0, 0}), 1.0);
            FAIL("no throw");
        } catch (const Error & e) {
            CHECK(e.code() == ErrorCode::DimensionMismatch);
        }
    }
}

TEST_CASE("merge_weights") {
    const std::vector<double> flat = {0.3, 0.3, 0.3, 0.3};
    for (double w : merge_weights(flat, 0.01)) {
        CHECK(w == doctest::Approx(0.25).epsilon(1e-15));
    }
    const auto w = merge_weights(std::vector<double>{0.2, -0.1}, 0.1);
    CHECK(std::fabs(w[0] - 0.95257) < 1e-5);
    CHECK(std::fabs(w[1] - 0.04743) < 1e-5);

    const auto wide = merge_weights(std::vector<double>{1.0, -2.0, 0.5}, 1e6);
    for (double x : wide) {
        CHECK(std::fabs(x - 1.0 / 3.0) < 1e-6);
    }
    // raw exponents of magnitude 300 must not overflow
    const auto sharp = merge_weights(std::vector<double>{1.0, -2.0, 0.99}, 1e-2);
    CHECK(std::isfinite(sharp[0]));
    CHECK(std::fabs(std::accumulate(sharp.begin(), sharp.end(), 0.0) - 1.0) < 1e-12);

    try {
        merge_weights(flat, 0.0);
        FAIL("no throw");
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::NonPositiveAlpha);
    }
    CHECK_THROWS_AS(merge_weights(flat, -1.0), Error);
}

TEST_CASE("merge_frame examples") {
    SUBCASE("two patches") {
        const auto frame = grid_of(1, {{1, 0}, {0, 1}});
        const auto t = pool(frame, std::vector<double>{0.95257, 0.04743});
        CHECK(std::fabs(t[0] - 0.95257) < 1e-5);
        CHECK(std::fabs(t[1] - 0.04743) < 1e-5);
    }
    SUBCASE("constant saliency is the mean") {
        const auto frame = grid_of(1, {{1, 0}, {0, 1}, {0.6f, 0.8f}});
        const auto t = pool(frame, merge_weights(std::vector<double>{0.1, 0.1, 0.1}, 0.01));
        CHECK(t[0] == doctest::Approx((1.0 + 0.0 + 0.6f) / 3.0));
        CHECK(t[1] == doctest::Approx((0.0 + 1.0 + 0.8f) / 3.0));
    }
    SUBCASE("sharp limit picks the argmax patch") {
        const auto frame = grid_of(3, {{1, 0}, {0, 1}, {0.6f, 0.8f}});
        const auto q = query_of({0.8f, 0.6f});
        // relevances 0.8, 0.6, 0.96
        const auto tok = merge_frame(frame, nullptr, q, {1.0, 1e-6});
        CHECK(std::fabs(tok.vector[0] - 0.6) < 1e-6);
        CHECK(std::fabs(tok.vector[1] - 0.8) < 1e-6);
    }
}

TEST_CASE("merge_frame records provenance") {
    const auto frame = grid_of(5, {{1, 0}, {0, 1}});
    const auto key = grid_of(2, {{1, 0}, {1, 0}});
    const auto tok = merge_frame(frame, &key, query_of({1, 0}), {});
    CHECK(tok.source_frame == 5);
    REQUIRE(tok.paired_keyframe);
    CHECK(*tok.paired_keyframe == 2);
    CHECK(tok.weights.size() == 2);
    CHECK_FALSE(merge_frame(frame, nullptr, query_of({1, 0}), {}).paired_keyframe);
    CHECK_THROWS_AS(merge_frame(frame, nullptr, query_of({1, 0}), {-1.0, 0.01}), Error);
}

TEST_CASE("weight and pooling properties") {
    for (uint64_t seed = 0; seed < 200; ++seed) {
        const auto in = random_instance(seed, 24, 12);
        CAPTURE(seed);
        const double alpha = std::pow(10.0, -3.0 + 4.0 * SplitMix64(seed ^ 0xabc).uniform01());
        const auto s = patch_saliency(in.frame, key_ptr(in), in.query, in.lambda);
        const auto w = merge_weights(s, alpha);

        double sum = 0.0;
        for (double x : w) {
            CHECK(x >= 0.0);
            sum += x;
        }
        CHECK(std::fabs(sum - 1.0) < 1e-9);

        // shift invariance
        auto shifted = s;
        for (auto & x : shifted) {
            x += 3.75;
        }
        CHECK(max_abs_diff(merge_weights(shifted, alpha), w) < 1e-12);

        // convexity
        const auto t = pool(in.frame, w);
        double tn = 0.0;
        for (double x : t) {
            tn += x * x;
        }
        double max_norm = 0.0;
        for (uint32_t m = 0; m < in.frame.m; ++m) {
            max_norm = std::max(max_norm, l2_norm(in.frame.patch(m)));
        }
        CHECK(std::sqrt(tn) <= max_norm + 1e-6);
        for (uint32_t k = 0; k < in.frame.d; ++k) {
            double lo = 1e9, hi = -1e9;
            for (uint32_t m = 0; m < in.frame.m; ++m) {
                lo = std::min<double>(lo, in.frame.patch(m)[k]);
                hi = std::max<double>(hi, in.frame.patch(m)[k]);
            }
            CHECK(t[k] >= lo - 1e-12);
            CHECK(t[k] <= hi + 1e-12);
        }
    }
}

TEST_CASE("permutation equivariance") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        auto in = random_instance(500 + seed, 12, 6);
        if (!in.keyframe) {
            continue;
        }
        const uint32_t m = in.frame.m, d = in.frame.d;
        std::vector<uint32_t> perm(m);
        std::iota(perm.begin(), perm.end(), 0u);
        SplitMix64 rng(seed);
        rng.shuffle(std::span<uint32_t>(perm));
        PatchGrid pf = in.frame, pk = *in.keyframe;
        for (uint32_t i = 0; i < m; ++i) {
            std::copy_n(in.frame.patch(perm[i]).begin(), d, pf.patch(i).begin());
            std::copy_n(in.keyframe->patch(perm[i]).begin(), d, pk.patch(i).begin());
        }
        const auto a = merge_frame(in.frame, &*in.keyframe, in.query, {in.lambda, 0.05});
        const auto b = merge_frame(pf, &pk, in.query, {in.lambda, 0.05});
        CAPTURE(seed);
        CHECK(max_abs_diff(a.vector, b.vector) < 1e-12);
        for (uint32_t i = 0; i < m; ++i) {
            CHECK(std::fabs(b.weights[i] - a.weights[perm[i]]) < 1e-14);
        }
    }
}

TEST_CASE("limit laws") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        const auto in = random_instance(2000 + seed, 16, 8);
        CAPTURE(seed);
        const auto flat = merge_frame(in.frame, key_ptr(in), in.query, {in.lambda, 1e6});
        for (uint32_t k = 0; k < in.frame.d; ++k) {
            double mean = 0.0;
            for (uint32_t m = 0; m < in.frame.m; ++m) {
                mean += in.frame.patch(m)[k];
            }
            mean /= in.frame.m;
            CHECK(std::fabs(flat.vector[k] - mean) < 1e-6);
        }

        const auto s = patch_saliency(in.frame, key_ptr(in), in.query, in.lambda);
        auto sorted = s;
        std::sort(sorted.rbegin(), sorted.rend());
        if (sorted.size() > 1 && sorted[0] - sorted[1] < 1e-4) {
            continue; // the sharp limit needs a clear maximum at alpha = 1e-6
        }
        const auto top = uint32_t(std::max_element(s.begin(), s.end()) - s.begin());
        const auto sharp = merge_frame(in.frame, key_ptr(in), in.query, {in.lambda, 1e-6});
        for (uint32_t k = 0; k < in.frame.d; ++k) {
            CHECK(std::fabs(sharp.vector[k] - in.frame.patch(top)[k]) < 1e-6);
        }
    }
}

TEST_CASE("analytic gradient matches central differences") {
    SUBCASE("constant saliency, identical patches") {
        const auto frame = grid_of(0, {{0.6f, 0.8f}, {0.6f, 0.8f}, {0.6f, 0.8f}});
        const auto J = merge_gradient(frame, std::vector<double>{0.2, 0.2, 0.2}, 0.01);
        for (double x : J.data) {
            CHECK(x == doctest::Approx(0.0));
        }
    }
    SUBCASE("flat softmax") {
        const auto frame = grid_of(0, {{1, 0}, {0, 1}, {0.6f, 0.8f}});
        const auto J = merge_gradient(frame, std::vector<double>{0.5, -0.5, 0.1}, 1e6);
        for (double x : J.data) {
            CHECK(std::fabs(x) <= 1e-5);
        }
    }
    SUBCASE("seeded instances") {
        const double h = 1e-5;
        for (uint64_t seed = 0; seed < 100; ++seed) {
            const auto in = random_instance(7000 + seed, 16, 8);
            const double alpha = 0.05 + SplitMix64(seed).uniform01();
            const auto s = patch_saliency(in.frame, key_ptr(in), in.query, in.lambda);
            const auto J = merge_gradient(in.frame, s, alpha);
            REQUIRE(J.rows == in.frame.d);
            REQUIRE(J.cols == in.frame.m);
            double num = 0.0, den = 0.0;
            for (uint32_t j = 0; j < in.frame.m; ++j) {
                auto sp = s, sm = s;
                sp[j] += h;
                sm[j] -= h;
                const auto tp = pool(in.frame, merge_weights(sp, alpha));
                const auto tm = pool(in.frame, merge_weights(sm, alpha));
                for (uint32_t r = 0; r < in.frame.d; ++r) {
                    const double fd = (tp[r] - tm[r]) / (2 * h);
                    num += (fd - J(r, j)) * (fd - J(r, j));
                    den += fd * fd + J(r, j) * J(r, j);
                }
            }
            CAPTURE(seed);
            if (den > 1e-20) {
                CHECK(std::sqrt(num / den) < 1e-4);
            }
        }
    }
    CHECK_THROWS_AS(merge_gradient(grid_of(0, {{1, 0}}), std::vector<double>{0.0}, 0.0), Error);
}

TEST_CASE("merge_frame agrees with the extended-precision oracle") {
    for (uint64_t seed = 0; seed < 300; ++seed) {
        const auto in = random_instance(90000 + seed, 32, 16);
        const double alpha = std::pow(10.0, -3.0 + 3.0 * SplitMix64(seed + 1).uniform01());
        const auto tok = merge_frame(in.frame, key_ptr(in), in.query, {in.lambda, alpha});
        const auto ref = dfm_oracle(in.frame, key_ptr(in), in.query, in.lambda, alpha);
        CAPTURE(seed);
        for (size_t k = 0; k < tok.vector.size(); ++k) {
            CHECK(std::fabs(tok.vector[k] - double(ref.vector[k])) < 1e-9);
        }
        for (size_t m = 0; m < tok.weights.size(); ++m) {
            CHECK(std::fabs(tok.weights[m] - double(ref.weights[m])) < 1e-9);
        }
    }
}

TEST_CASE("oracle boundary cases") {
    const auto frame = grid_of(1, {{1, 0}, {0, 1}});
    const auto q = query_of({0.70710678f, 0.70710678f});
    const auto ref = dfm_oracle(frame, nullptr, q, 1.0, 0.01);
    CHECK(double(ref.vector[0]) == doctest::Approx(0.5));
    CHECK(double(ref.saliency[0]) == doctest::Approx(0.70710678));
    const auto key = grid_of(0, {{1, 0}, {1, 0}});
    const auto ref2 = dfm_oracle(frame, &key, q, 1.0, 0.01);
    CHECK(double(ref2.saliency[0]) == doctest::Approx(0.70710678 - 1.0));
}
