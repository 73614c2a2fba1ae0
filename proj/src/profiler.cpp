#include "vdistill/profiler.hpp"

#include "vdistill/error.hpp"
#include "vdistill/prng.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <set>

namespace vdistill {

namespace {

void check_dump(const AttentionDump & dump, const AttentionCheck & check) {
    if (dump.n == 0 || dump.m == 0 || dump.weights.size() != size_t(dump.n) * dump.m) {
        throw Error(ErrorCode::DimensionMismatch, "attention dump shape");
    }
    for (size_t i = 0; i < dump.weights.size(); ++i) {
        const double w = dump.weights[i];
        if (!(w >= 0.0 && w <= 1.0)) {
            throw Error(ErrorCode::NormalizationViolation,
                        "attention weight " + std::to_string(i) + " = " + std::to_string(w) + " outside [0, 1]");
        }
    }
    const double mass = dump.total_mass();
    if (!(std::fabs(mass - 1.0) <= check.mass_epsilon)) {
        const std::string msg = "total attention mass " + std::to_string(mass) + " differs from 1 by more than " +
                                std::to_string(check.mass_epsilon);
        if (!check.lenient) {
            throw Error(ErrorCode::NormalizationViolation, msg);
        }
        std::cerr << "warning: " << msg << "\n";
    }
}

BucketMeans bucket_means(std::span<const double> values_by_rank) {
    const size_t n = values_by_rank.size();
    std::vector<double> sum(kPercentileBuckets, 0.0);
    std::vector<size_t> count(kPercentileBuckets, 0);
    for (size_t r = 0; r < n; ++r) {
        const size_t b = r * kPercentileBuckets / n;
        sum[b] += values_by_rank[r];
        ++count[b];
    }
    BucketMeans out(kPercentileBuckets);
    for (int b = 0; b < kPercentileBuckets; ++b) {
        if (count[b] > 0) {
            out[b] = sum[b] / double(count[b]);
        }
    }
    return out;
}

} // namespace

std::vector<double> frame_attention(const AttentionDump & dump, const AttentionCheck & check) {
    check_dump(dump, check);
    std::vector<double> a(dump.n, 0.0);
    for (uint32_t f = 0; f < dump.n; ++f) {
        for (uint32_t p = 0; p < dump.m; ++p) {
            a[f] += dump.at(f, p);
        }
    }
    return a;
}

std::vector<uint32_t> rank_by_attention(std::span<const double> scores) {
    std::vector<uint32_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) { return scores[a] > scores[b]; });
    return order;
}

std::vector<double> cumulative_curve(std::span<const double> scores) {
    if (scores.empty()) {
        throw Error(ErrorCode::AllZero, "no scores");
    }
    double total = 0.0;
    for (double s : scores) {
        if (!(s >= 0.0)) {
            throw Error(ErrorCode::InvalidArgument, "scores must be non-negative");
        }
        total += s;
    }
    if (!(total > 0.0)) {
        throw Error(ErrorCode::AllZero, "all scores are zero");
    }

    const auto order = rank_by_attention(scores);
    const size_t n = scores.size();
    std::vector<double> prefix(n + 1, 0.0);
    for (size_t i = 0; i < n; ++i) {
        prefix[i + 1] = prefix[i] + scores[order[i]];
    }

    std::vector<double> curve(kPercentileBuckets + 1);
    for (int p = 0; p <= kPercentileBuckets; ++p) {
        // x = p% of n, split into whole items and a fractional remainder
        const size_t scaled = size_t(p) * n;
        const size_t whole = scaled / kPercentileBuckets;
        const double frac = double(scaled % kPercentileBuckets) / kPercentileBuckets;
        double mass = prefix[whole];
        if (whole < n) {
            mass += frac * scores[order[whole]];
        }
        curve[p] = mass / total;
    }
    return curve;
}

std::vector<double> neighbor_similarity_per_frame(std::span<const FrameEmbedding> ranked, uint32_t window) {
    const size_t n = ranked.size();
    if (window == 0 || n < size_t(window) + 1) {
        throw Error(ErrorCode::TooFewFrames,
                    "neighbor similarity needs at least window + 1 = " + std::to_string(window + 1) + " frames");
    }
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        uint32_t taken = 0;
        for (size_t dist = 1; taken < window; ++dist) {
            if (dist <= i && taken < window) {
                acc += cosine(ranked[i].vector, ranked[i - dist].vector);
                ++taken;
            }
            if (i + dist < n && taken < window) {
                acc += cosine(ranked[i].vector, ranked[i + dist].vector);
                ++taken;
            }
        }
        out[i] = acc / window;
    }
    return out;
}

BucketMeans neighbor_similarity(std::span<const FrameEmbedding> ranked, uint32_t window) {
    return bucket_means(neighbor_similarity_per_frame(ranked, window));
}

double random_pair_baseline(std::span<const FrameEmbedding> frames, size_t n_pairs, uint64_t seed) {
    const uint64_t n = frames.size();
    if (n < 2) {
        throw Error(ErrorCode::TooFewFrames, "random pair baseline needs at least two frames");
    }
    if (n_pairs == 0) {
        throw Error(ErrorCode::InvalidArgument, "n_pairs must be positive");
    }
    const uint64_t all_pairs = n * (n - 1) / 2;
    double acc = 0.0;
    if (n_pairs >= all_pairs) {
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = i + 1; j < n; ++j) {
                acc += cosine(frames[i].vector, frames[j].vector);
            }
        }
        return acc / double(all_pairs);
    }
    SplitMix64 rng(seed);
    std::set<std::pair<uint64_t, uint64_t>> seen;
    while (seen.size() < n_pairs) {
        const uint64_t a = rng.uniform_int(0, n - 1);
        const uint64_t b = rng.uniform_int(0, n - 1);
        if (a == b) {
            continue;
        }
        const auto key = std::minmax(a, b);
        if (!seen.insert({key.first, key.second}).second) {
            continue;
        }
        acc += cosine(frames[key.first].vector, frames[key.second].vector);
    }
    return acc / double(n_pairs);
}

AttentionProfile frame_profile(const AttentionDump & dump, std::span<const FrameEmbedding> frames,
                               const FrameProfileOptions & opts) {
    if (frames.size() != dump.n) {
        throw Error(ErrorCode::DimensionMismatch, "dump has " + std::to_string(dump.n) + " frames, embeddings have " +
                                                      std::to_string(frames.size()));
    }
    AttentionProfile prof;
    prof.frame_scores = frame_attention(dump, opts.check);
    prof.cumulative_curve = cumulative_curve(prof.frame_scores);
    std::vector<FrameEmbedding> ranked;
    ranked.reserve(frames.size());
    for (uint32_t idx : rank_by_attention(prof.frame_scores)) {
        ranked.push_back(frames[idx]);
    }
    prof.neighbor_similarity = neighbor_similarity(ranked, opts.window);
    prof.random_baseline = random_pair_baseline(frames, opts.n_pairs, opts.seed);
    return prof;
}

PatchProfile patch_profile(const AttentionDump & dump, const PatchProvider & patches, uint32_t k_top,
                           const AttentionCheck & check) {
    if (patches.n_frames() != dump.n || patches.patches_per_frame() != dump.m) {
        throw Error(ErrorCode::DimensionMismatch, "dump is " + std::to_string(dump.n) + "x" +
                                                      std::to_string(dump.m) + ", patch grids are " +
                                                      std::to_string(patches.n_frames()) + "x" +
                                                      std::to_string(patches.patches_per_frame()));
    }
    if (k_top == 0) {
        throw Error(ErrorCode::InvalidArgument, "k_top must be >= 1");
    }
    if (k_top > dump.n) {
        throw Error(ErrorCode::KTopExceedsN, "k_top = " + std::to_string(k_top) + " exceeds N = " +
                                                 std::to_string(dump.n));
    }
    const auto scores = frame_attention(dump, check);
    const auto ranked = rank_by_attention(scores);

    PatchProfile prof;
    prof.keyframes.assign(ranked.begin(), ranked.begin() + k_top);
    std::sort(prof.keyframes.begin(), prof.keyframes.end());
    if (k_top == dump.n) {
        prof.empty = true;
        return prof;
    }

    std::vector<bool> is_key(dump.n, false);
    for (uint32_t k : prof.keyframes) {
        is_key[k] = true;
    }

    // The first keyframe grid serves the non-keyframes that precede it; fetch
    // it with a separate pass so the main pass stays strictly sequential.
    const uint32_t first_key = prof.keyframes.front();
    std::optional<PatchGrid> keyframe;
    {
        auto src = patches.open();
        for (uint32_t i = 0; i <= first_key; ++i) {
            keyframe = src->next();
            if (!keyframe) {
                throw Error(ErrorCode::StreamExhausted, "patch source ended before first keyframe");
            }
        }
    }

    double nonkey_mass = 0.0;
    for (uint32_t f = 0; f < dump.n; ++f) {
        if (!is_key[f]) {
            for (uint32_t p = 0; p < dump.m; ++p) {
                nonkey_mass += dump.at(f, p);
            }
        }
    }
    if (!(nonkey_mass > 0.0)) {
        throw Error(ErrorCode::AllZero, "non-keyframe patches carry no attention mass");
    }

    auto src = patches.open();
    for (uint32_t f = 0; f < dump.n; ++f) {
        auto grid = src->next();
        if (!grid) {
            throw Error(ErrorCode::StreamExhausted, "patch source ended at frame " + std::to_string(f));
        }
        if (is_key[f]) {
            keyframe = std::move(grid);
            continue;
        }
        for (uint32_t p = 0; p < dump.m; ++p) {
            prof.weights.push_back(dump.at(f, p) / nonkey_mass);
            prof.similarity.push_back(cosine(grid->patch(p), keyframe->patch(p)));
        }
    }
    prof.n_patches = prof.weights.size();
    prof.cumulative_curve = cumulative_curve(prof.weights);

    std::vector<double> sim_by_rank;
    sim_by_rank.reserve(prof.n_patches);
    for (uint32_t idx : rank_by_attention(prof.weights)) {
        sim_by_rank.push_back(prof.similarity[idx]);
    }
    prof.similarity_by_percentile = bucket_means(sim_by_rank);
    return prof;
}

} // namespace vdistill
