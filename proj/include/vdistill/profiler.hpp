#pragma once

// Frame- and patch-level redundancy analysis over precomputed attention dumps.
//
// Percentile axes use 1% resolution. A curve is 101 values, curve[p] for
// p = 0..100, where curve[p] is the share of total mass held by the top p% of
// items ranked by mass. When p% of the item count is fractional the step
// function is linearly interpolated. Similarity buckets are 100 values; bucket
// b holds items whose rank r (0-based, out of n) satisfies floor(100 r / n) == b.
// Buckets that receive no items are empty.

#include "vdistill/embedding.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace vdistill {

inline constexpr int kPercentileBuckets = 100;

struct AttentionCheck {
    double mass_epsilon = 1e-3;
    bool   lenient      = false; // warn on stderr instead of throwing NormalizationViolation
};

// a_n = sum_m a_n^m
std::vector<double> frame_attention(const AttentionDump & dump, const AttentionCheck & check = {});

// descending by score, ties by ascending index
std::vector<uint32_t> rank_by_attention(std::span<const double> scores);

std::vector<double> cumulative_curve(std::span<const double> scores);

using BucketMeans = std::vector<std::optional<double>>;

// Mean cosine from each frame to its `window` nearest neighbours in the given
// (attention-ranked) order, bucketed by rank. Neighbours are taken by
// increasing rank distance, the higher-ranked side first on equal distance.
BucketMeans neighbor_similarity(std::span<const FrameEmbedding> ranked_frames, uint32_t window = 3);

// Per-frame values before bucketing (same neighbour rule).
std::vector<double> neighbor_similarity_per_frame(std::span<const FrameEmbedding> ranked_frames, uint32_t window = 3);

// Mean cosine over n_pairs distinct unordered index pairs drawn with
// SplitMix64(seed): i, j = uniform_int(0, N-1), rejecting i == j and repeats.
// Requests beyond N(N-1)/2 pairs use every pair once.
double random_pair_baseline(std::span<const FrameEmbedding> frames, size_t n_pairs, uint64_t seed);

struct AttentionProfile {
    std::vector<double> frame_scores;
    std::vector<double> cumulative_curve;
    BucketMeans         neighbor_similarity;
    double              random_baseline = 0.0;
};

struct FrameProfileOptions {
    uint32_t       window  = 3;
    size_t         n_pairs = 1000;
    uint64_t       seed    = 0;
    AttentionCheck check;
};

AttentionProfile frame_profile(const AttentionDump & dump, std::span<const FrameEmbedding> frames,
                               const FrameProfileOptions & opts = {});

struct PatchProfile {
    bool                  empty = false; // no non-keyframes: nothing to profile
    std::vector<uint32_t> keyframes;     // ascending
    size_t                n_patches = 0; // non-keyframe patches profiled
    std::vector<double>   weights;       // normalized attention per non-keyframe patch, frame-major
    std::vector<double>   similarity;    // cosine to the paired keyframe patch, same order
    std::vector<double>   cumulative_curve;
    BucketMeans           similarity_by_percentile;
};

// Designates the top k_top frames by a_n as keyframes. Each non-keyframe patch
// is paired with the same position in the nearest preceding keyframe, or the
// first keyframe when none precedes it.
PatchProfile patch_profile(const AttentionDump & dump, const PatchProvider & patches, uint32_t k_top = 32,
                           const AttentionCheck & check = {});

} // namespace vdistill
