#include "vdistill/synth.hpp"

#include "vdistill/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vdistill {

std::vector<float> random_unit_vector(SplitMix64 & rng, uint32_t d) {
    std::vector<double> g(d);
    double sq = 0.0;
    for (auto & x : g) {
        x = rng.gaussian();
        sq += x * x;
    }
    const double norm = std::sqrt(sq);
    std::vector<float> out(d);
    for (uint32_t i = 0; i < d; ++i) {
        out[i] = float(g[i] / norm);
    }
    return out;
}

namespace {

std::vector<float> blended(const std::vector<float> & noise, std::span<const float> center, double blend) {
    std::vector<float> v(noise.size());
    for (size_t i = 0; i < v.size(); ++i) {
        v[i] = float((1.0 - blend) * double(noise[i]) + blend * double(center[i]));
    }
    if (!normalize(v)) {
        throw Error(ErrorCode::NormViolation, "synthetic vector collapsed to zero");
    }
    return v;
}

uint32_t cluster_of(uint32_t n, uint32_t n_frames, uint32_t clusters) {
    return uint32_t(uint64_t(n) * clusters / n_frames);
}

} // namespace

SynthVideo gen_embeddings(const SynthSpec & spec) {
    if (spec.n_frames == 0 || spec.d_f == 0 || (spec.m_patches > 0 && spec.d_p == 0) || spec.cluster_centers == 0) {
        throw Error(ErrorCode::InvalidArgument, "synthetic spec needs positive dimensions and at least one cluster");
    }
    if (!(spec.blend >= 0.0 && spec.blend <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "blend must lie in [0, 1]");
    }
    SplitMix64 rng(spec.seed);
    std::vector<std::vector<float>> centers;
    for (uint32_t c = 0; c < spec.cluster_centers; ++c) {
        centers.push_back(random_unit_vector(rng, spec.d_f));
    }

    SynthVideo out;
    out.query.frame_space = random_unit_vector(rng, spec.d_f);
    out.query.patch_space = random_unit_vector(rng, std::max<uint32_t>(spec.d_p, 1));
    out.video.video_id = spec.video_id;
    out.video.frames.reserve(spec.n_frames);
    for (uint32_t n = 0; n < spec.n_frames; ++n) {
        const auto noise = random_unit_vector(rng, spec.d_f);
        const auto & center = centers[cluster_of(n, spec.n_frames, spec.cluster_centers)];
        out.video.frames.push_back(FrameEmbedding{n, blended(noise, center, spec.blend)});
    }

    if (spec.m_patches == 0) {
        return out;
    }

    // patch centers: [cluster][position] -> d_p
    auto patch_centers = std::make_shared<std::vector<float>>();
    {
        SplitMix64 crng(derive_seed(spec.seed, 0));
        for (uint32_t c = 0; c < spec.cluster_centers; ++c) {
            for (uint32_t m = 0; m < spec.m_patches; ++m) {
                const auto v = random_unit_vector(crng, spec.d_p);
                patch_centers->insert(patch_centers->end(), v.begin(), v.end());
            }
        }
    }
    auto make_grid = [spec, patch_centers](uint32_t n) {
        SplitMix64 frng(derive_seed(spec.seed, uint64_t(n) + 1));
        PatchGrid g{n, spec.m_patches, spec.d_p, {}};
        g.data.reserve(size_t(spec.m_patches) * spec.d_p);
        const uint32_t c = cluster_of(n, spec.n_frames, spec.cluster_centers);
        for (uint32_t m = 0; m < spec.m_patches; ++m) {
            const auto noise = random_unit_vector(frng, spec.d_p);
            const std::span<const float> center(patch_centers->data() + (size_t(c) * spec.m_patches + m) * spec.d_p,
                                                spec.d_p);
            const auto v = blended(noise, center, spec.blend);
            g.data.insert(g.data.end(), v.begin(), v.end());
        }
        return g;
    };

    if (spec.lazy_patches) {
        out.video.patches =
            std::make_shared<GeneratedPatchProvider>(spec.n_frames, spec.m_patches, spec.d_p, make_grid);
    } else {
        std::vector<PatchGrid> grids;
        grids.reserve(spec.n_frames);
        for (uint32_t n = 0; n < spec.n_frames; ++n) {
            grids.push_back(make_grid(n));
        }
        out.video.patches = std::make_shared<InMemoryPatchProvider>(std::move(grids));
    }
    return out;
}

namespace {

// ceil(frac * count), tolerant of products like 0.05 * 100 landing a hair above an integer
uint64_t fraction_count(double frac, uint64_t count) {
    const double x = frac * double(count);
    return std::clamp<uint64_t>(uint64_t(std::ceil(x - 1e-9)), 1, count);
}

std::vector<uint32_t> shuffled_indices(uint64_t count, SplitMix64 & rng) {
    std::vector<uint32_t> idx(count);
    std::iota(idx.begin(), idx.end(), 0u);
    rng.shuffle(std::span<uint32_t>(idx));
    return idx;
}

void check_fractions(double top_frac, double mass_frac) {
    if (!(top_frac > 0.0 && top_frac < 1.0) || !(mass_frac > 0.0 && mass_frac <= 1.0)) {
        throw Error(ErrorCode::InvalidFractions, "need 0 < top_frac < 1 and 0 < mass_frac <= 1");
    }
}

} // namespace

AttentionDump gen_attention_dump(uint32_t n, uint32_t m, double top_frac, double mass_frac, uint64_t seed) {
    check_fractions(top_frac, mass_frac);
    if (n == 0 || m == 0) {
        throw Error(ErrorCode::InvalidArgument, "attention dump needs n, m >= 1");
    }
    AttentionDump dump;
    dump.video_id = "synth";
    dump.n = n;
    dump.m = m;
    dump.weights.assign(size_t(n) * m, 0.0);

    const uint64_t top = fraction_count(top_frac, n);
    SplitMix64 rng(seed);
    const auto order = shuffled_indices(n, rng);
    if (top == n) {
        std::fill(dump.weights.begin(), dump.weights.end(), 1.0 / (double(n) * m));
        return dump;
    }
    const double top_patch = mass_frac / (double(top) * m);
    const double rest_patch = (1.0 - mass_frac) / (double(n - top) * m);
    for (uint64_t r = 0; r < n; ++r) {
        const double w = r < top ? top_patch : rest_patch;
        std::fill_n(dump.weights.begin() + size_t(order[r]) * m, m, w);
    }
    return dump;
}

AttentionDump gen_patch_attention_dump(uint32_t n, uint32_t m, uint32_t k_top, double top_frac, double mass_frac,
                                       uint64_t seed) {
    check_fractions(top_frac, mass_frac);
    if (k_top == 0 || k_top >= n || m == 0) {
        throw Error(ErrorCode::InvalidArgument, "need 1 <= k_top < n and m >= 1");
    }
    SplitMix64 rng(seed);
    const auto frame_order = shuffled_indices(n, rng);
    std::vector<bool> is_key(n, false);
    for (uint32_t i = 0; i < k_top; ++i) {
        is_key[frame_order[i]] = true;
    }

    const uint64_t patches = uint64_t(n - k_top) * m;
    const uint64_t top = fraction_count(top_frac, patches);
    const auto patch_order = shuffled_indices(patches, rng);
    std::vector<double> nonkey(patches);
    const double top_w = mass_frac / double(top);
    const double rest_w = top == patches ? 0.0 : (1.0 - mass_frac) / double(patches - top);
    for (uint64_t r = 0; r < patches; ++r) {
        nonkey[patch_order[r]] = r < top ? top_w : rest_w;
    }

    // keyframes must outrank every non-keyframe by frame mass
    double max_frame = 0.0;
    for (uint64_t f = 0; f < n - k_top; ++f) {
        max_frame = std::max(max_frame, std::accumulate(nonkey.begin() + f * m, nonkey.begin() + (f + 1) * m, 0.0));
    }
    const double key_patch = 2.0 * max_frame / m;
    const double total = 1.0 + 2.0 * max_frame * k_top;

    AttentionDump dump;
    dump.video_id = "synth-patch";
    dump.n = n;
    dump.m = m;
    dump.weights.resize(size_t(n) * m);
    uint64_t next_nonkey = 0;
    for (uint32_t f = 0; f < n; ++f) {
        for (uint32_t p = 0; p < m; ++p) {
            const double raw = is_key[f] ? key_patch : nonkey[next_nonkey * m + p];
            dump.weights[size_t(f) * m + p] = raw / total;
        }
        if (!is_key[f]) {
            ++next_nonkey;
        }
    }
    return dump;
}

} // namespace vdistill
