#include "support.hpp"

#include "vdistill/error.hpp"
#include "vdistill/pipeline.hpp"

#include "doctest.h"

#include <algorithm>
#include <cstring>

using namespace vdtest;

namespace {

// attaches seeded random patch grids to a frame-only video
void attach_patches(VideoEmbeddingSet & video, uint32_t m, uint32_t d, uint64_t seed) {
    SplitMix64 rng(seed);
    std::vector<PatchGrid> grids;
    for (uint32_t n = 0; n < video.n_frames(); ++n) {
        grids.push_back(random_grid(rng, n, m, d));
    }
    video.patches = std::make_shared<InMemoryPatchProvider>(std::move(grids));
}

// yields only the first `limit` grids of another provider
class TruncatedProvider final : public PatchProvider {
public:
    TruncatedProvider(std::shared_ptr<const PatchProvider> inner, uint32_t limit) : inner_(std::move(inner)), limit_(limit) {}

    std::unique_ptr<PatchSource> open() const override {
        struct Src : PatchSource {
            std::unique_ptr<PatchSource> inner;
            uint32_t                     left;
            std::optional<PatchGrid> next() override {
                if (left == 0) {
                    return std::nullopt;
                }
                --left;
                return inner->next();
            }
        };
        auto s = std::make_unique<Src>();
        s->inner = inner_->open();
        s->left = limit_;
        return s;
    }
    uint32_t n_frames() const override { return inner_->n_frames(); }
    uint32_t patches_per_frame() const override { return inner_->patches_per_frame(); }
    uint32_t dim() const override { return inner_->dim(); }

private:
    std::shared_ptr<const PatchProvider> inner_;
    uint32_t                             limit_;
};

bool same_bits(const std::vector<double> & a, const std::vector<double> & b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool identical(const DistilledSequence & a, const DistilledSequence & b) {
    if (a.items.size() != b.items.size() || a.selection.keyframe_indices != b.selection.keyframe_indices ||
        a.selection.selection_order != b.selection.selection_order || a.saturated != b.saturated ||
        a.budget.compressed_tokens != b.budget.compressed_tokens) {
        return false;
    }
    for (size_t i = 0; i < a.items.size(); ++i) {
        if (a.items[i].index() != b.items[i].index()) {
            return false;
        }
        if (const auto * ka = std::get_if<KeyframeGrid>(&a.items[i])) {
            const auto & kb = std::get<KeyframeGrid>(b.items[i]);
            if (ka->grid.frame_index != kb.grid.frame_index || ka->grid.data != kb.grid.data) {
                return false;
            }
        } else {
            const auto & ta = std::get<MergedToken>(a.items[i]);
            const auto & tb = std::get<MergedToken>(b.items[i]);
            if (ta.source_frame != tb.source_frame || ta.paired_keyframe != tb.paired_keyframe ||
                !same_bits(ta.vector, tb.vector) || !same_bits(ta.weights, tb.weights)) {
                return false;
            }
        }
    }
    return true;
}

} // namespace

TEST_CASE("budget") {
    const auto r = budget(128, 729, 32);
    CHECK(r.original_tokens == 93312);
    CHECK(r.compressed_tokens == 23424);
    CHECK(r.reduction_ratio == doctest::Approx(0.7490).epsilon(1e-4));
    CHECK(r.reduction_ratio > 0.70);

    const auto full = budget(10, 4, 10);
    CHECK(full.compressed_tokens == 40);
    CHECK(full.reduction_ratio == 0.0);

    try {
        budget(4, 4, 5);
        FAIL("no throw");
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::KExceedsN);
    }
    CHECK_THROWS_AS(budget(4, 0, 1), Error);
    CHECK_THROWS_AS(budget(4, 4, 0), Error);

    for (uint64_t n = 1; n < 40; ++n) {
        for (uint64_t k = 1; k <= n; ++k) {
            const auto b = budget(n, 9, k);
            CHECK(b.compressed_tokens <= b.original_tokens);
            CHECK(b.compressed_tokens == 9 * k + (n - k));
        }
    }
}

TEST_CASE("estimate_cost") {
    CHECK(estimate_cost(0) == 0.0);
    CHECK(estimate_cost(100) == 100.0);
    const CostProfile quad{1.0, 1e-4};
    CHECK(estimate_cost(23424, quad) < estimate_cost(93312, quad));
    double prev = -1.0;
    for (uint64_t l = 0; l < 1000; l += 37) {
        const double c = estimate_cost(l, quad);
        CHECK(c > prev);
        prev = c;
    }
}

TEST_CASE("one-frame video") {
    auto video = frames_of({{1, 0}});
    attach_patches(video, 4, 3, 1);
    const auto q = query_of({1, 0}, unit({1, 1, 1}));
    const auto seq = distill(video, q, {});
    REQUIRE(seq.items.size() == 1);
    CHECK(std::holds_alternative<KeyframeGrid>(seq.items[0]));
    CHECK(seq.budget.compressed_tokens == 4);
    CHECK(count_tokens(seq) == 4);
    CHECK_FALSE(seq.saturated);
}

TEST_CASE("hand-traced pairing, keyframes {0, 7}") {
    std::vector<std::vector<float>> rows(10, std::vector<float>{0, 1});
    rows[0] = {1, 0};
    rows[7] = {0.6f, 0.8f};
    auto video = frames_of(rows);
    attach_patches(video, 3, 4, 2);
    const auto q = query_of({1, 0}, unit({1, 2, 3, 4}));
    DistillConfig cfg;
    cfg.dks.k_max = 2;
    const auto seq = distill(video, q, cfg);
    CHECK(seq.selection.keyframe_indices == std::vector<uint32_t>{0, 7});
    REQUIRE(seq.items.size() == 10);
    for (uint32_t i = 0; i < 10; ++i) {
        CHECK(item_frame_index(seq.items[i]) == i);
        if (i == 0 || i == 7) {
            CHECK(std::holds_alternative<KeyframeGrid>(seq.items[i]));
        } else {
            const auto & t = std::get<MergedToken>(seq.items[i]);
            REQUIRE(t.paired_keyframe);
            CHECK(*t.paired_keyframe == (i < 7 ? 0u : 7u));
        }
    }
    CHECK(seq.budget.compressed_tokens == 3 * 2 + 8);
    CHECK_FALSE(seq.saturated);
}

TEST_CASE("uniform sampling") {
    auto video = frames_of(std::vector<std::vector<float>>(8, std::vector<float>{1, 0}));
    DistillConfig cfg;
    cfg.mode = SamplingMode::Uniform;
    cfg.dks.k_max = 4;
    const auto sel = select_frames(video, query_of({1, 0}), cfg);
    CHECK(sel.keyframe_indices == std::vector<uint32_t>{0, 2, 4, 6});
    CHECK(sel.relevance.empty());
    cfg.dks.k_max = 20;
    CHECK(select_frames(video, query_of({1, 0}), cfg).keyframe_indices.size() == 8);
    CHECK(parse_sampling_mode("query_only") == SamplingMode::QueryOnly);
    CHECK(sampling_mode_name(SamplingMode::Uniform) == "uniform");
    CHECK_THROWS_AS(parse_sampling_mode("random"), Error);
}

TEST_CASE("uniform mode ignores the query") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        SynthSpec spec;
        spec.seed = seed;
        spec.n_frames = 5 + uint32_t(seed);
        spec.m_patches = 3;
        const auto sv = gen_embeddings(spec);
        DistillConfig cfg;
        cfg.mode = SamplingMode::Uniform;
        cfg.dks.k_max = 4;
        auto q2 = sv.query;
        std::reverse(q2.frame_space.begin(), q2.frame_space.end());
        const auto a = distill(sv.video, sv.query, cfg);
        const auto b = distill(sv.video, q2, cfg);
        CHECK(a.selection.keyframe_indices == b.selection.keyframe_indices);
    }
}

TEST_CASE("query-only sampling keeps temporal order") {
    auto video = frames_of({{0, 1}, {1, 0}, {1, 0}, {0.6f, 0.8f}});
    attach_patches(video, 2, 2, 3);
    DistillConfig cfg;
    cfg.mode = SamplingMode::QueryOnly;
    cfg.dks.k_max = 2;
    const auto seq = distill(video, query_of({1, 0}), cfg);
    // duplicates are both kept: no redundancy check in this mode
    CHECK(seq.selection.selection_order == std::vector<uint32_t>{1, 2});
    CHECK(item_frame_index(seq.items[3]) == 3);
    CHECK(*std::get<MergedToken>(seq.items[3]).paired_keyframe == 2);
    CHECK_FALSE(std::get<MergedToken>(seq.items[0]).paired_keyframe);
}

TEST_CASE("sequence invariants and streaming equivalence") {
    const SamplingMode modes[] = {SamplingMode::Dks, SamplingMode::QueryOnly, SamplingMode::Uniform};
    for (uint64_t seed = 0; seed < 60; ++seed) {
        SplitMix64 rng(seed);
        SynthSpec spec;
        spec.seed = seed;
        spec.n_frames = uint32_t(rng.uniform_int(1, 40));
        spec.m_patches = uint32_t(rng.uniform_int(1, 6));
        spec.d_f = uint32_t(rng.uniform_int(2, 8));
        spec.d_p = uint32_t(rng.uniform_int(2, 8));
        spec.cluster_centers = uint32_t(rng.uniform_int(1, 4));
        spec.blend = rng.uniform01();
        spec.lazy_patches = seed % 2 == 0;
        const auto sv = gen_embeddings(spec);
        DistillConfig cfg;
        cfg.mode = modes[seed % 3];
        cfg.dks.tau = 0.3 + 0.7 * rng.uniform01();
        cfg.dks.k_max = uint32_t(rng.uniform_int(1, 8));
        cfg.dfm.alpha = 1e-3 + rng.uniform01();
        CAPTURE(seed);

        const auto seq = distill(sv.video, sv.query, cfg);
        StreamStats stats;
        const auto st = stream_distill(sv.video, sv.query, cfg, &stats);
        CHECK(identical(seq, st));
        CHECK(stats.peak_resident_grids <= 2);
        CHECK(stats.grids_read == spec.n_frames);

        CHECK(count_tokens(seq) == seq.budget.compressed_tokens);
        CHECK(seq.items.size() == spec.n_frames);
        size_t grids = 0;
        for (size_t i = 0; i < seq.items.size(); ++i) {
            CHECK(item_frame_index(seq.items[i]) == i);
            if (std::holds_alternative<KeyframeGrid>(seq.items[i])) {
                ++grids;
                continue;
            }
            const auto & t = std::get<MergedToken>(seq.items[i]);
            const auto & ks = seq.selection.keyframe_indices;
            const auto it = std::lower_bound(ks.begin(), ks.end(), uint32_t(i));
            if (it == ks.begin()) {
                CHECK_FALSE(t.paired_keyframe);
            } else {
                REQUIRE(t.paired_keyframe);
                CHECK(*t.paired_keyframe == *(it - 1));
            }
        }
        CHECK(grids == seq.selection.size());
        CHECK(seq.saturated == (seq.selection.size() < std::min<size_t>(cfg.dks.k_max, spec.n_frames)));
    }
}

TEST_CASE("stream sink sees items in frame order") {
    SynthSpec spec;
    spec.n_frames = 30;
    spec.lazy_patches = true;
    const auto sv = gen_embeddings(spec);
    std::vector<uint32_t> order;
    const auto seq = stream_distill(sv.video, sv.query, {}, [&](SequenceItem && item) {
        order.push_back(item_frame_index(item));
    });
    CHECK(seq.items.empty());
    REQUIRE(order.size() == 30);
    for (uint32_t i = 0; i < 30; ++i) {
        CHECK(order[i] == i);
    }
}

TEST_CASE("truncated patch stream") {
    SynthSpec spec;
    spec.n_frames = 12;
    auto sv = gen_embeddings(spec);
    sv.video.patches = std::make_shared<TruncatedProvider>(sv.video.patches, 7);
    try {
        stream_distill(sv.video, sv.query, {});
        FAIL("no throw");
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::StreamExhausted);
    }
    CHECK_THROWS_AS(distill(sv.video, sv.query, {}), Error);
}

TEST_CASE("saturation is flagged, not backfilled") {
    auto video = frames_of(std::vector<std::vector<float>>(6, std::vector<float>{0.6f, 0.8f}));
    attach_patches(video, 2, 2, 5);
    const auto seq = distill(video, query_of({1, 0}), {});
    CHECK(seq.selection.size() == 1);
    CHECK(seq.saturated);
    CHECK(seq.budget.keyframes == 1);
}

TEST_CASE("sweep") {
    std::vector<VideoEmbeddingSet> videos;
    std::vector<QueryEmbedding> queries;
    for (uint64_t s = 0; s < 3; ++s) {
        SynthSpec spec;
        spec.seed = s;
        spec.n_frames = 40;
        spec.cluster_centers = 4;
        spec.blend = 0.9;
        spec.m_patches = 2;
        auto sv = gen_embeddings(spec);
        videos.push_back(sv.video);
        queries.push_back(sv.query);
    }
    const auto rows = run_sweep(videos, queries, kSweepTauGrid, kSweepAlphaGrid, {});
    REQUIRE(rows.size() == 16);
    CHECK(rows[0].alpha == 1.0);
    CHECK(rows[0].tau == 0.35);
    CHECK(rows[1].tau == 0.5);
    CHECK(rows[4].alpha == 0.1);
    for (const auto & r : rows) {
        CHECK(r.n_videos == 3);
        CHECK_FALSE(r.score);
    }
    // keyframe count does not depend on alpha
    CHECK(rows[0].mean_keyframes == rows[4].mean_keyframes);

    const double one_tau[] = {0.85}, one_alpha[] = {0.01};
    const auto single = run_sweep(videos, std::span<const QueryEmbedding>(queries).first(1), one_tau, one_alpha, {},
                                  [](double t, double a) { return std::optional<double>(t + a); });
    REQUIRE(single.size() == 1);
    CHECK(*single[0].score == doctest::Approx(0.86));

    const auto threaded = run_sweep(videos, queries, kSweepTauGrid, kSweepAlphaGrid, {}, {}, 3);
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(threaded[i].mean_keyframes == rows[i].mean_keyframes);
        CHECK(threaded[i].mean_reduction == rows[i].mean_reduction);
    }

    try {
        run_sweep(videos, queries, std::span<const double>(), kSweepAlphaGrid, {});
        FAIL("no throw");
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::EmptyGrid);
    }
}
