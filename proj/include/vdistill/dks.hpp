#pragma once

// Differential keyframe selection: frames are ranked by query relevance and
// admitted greedily while their maximum cosine similarity to the already
// selected set stays below a threshold.

#include "vdistill/embedding.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vdistill {

struct DksConfig {
    double   tau   = 0.85; // similarity threshold, in (-1, 1]
    uint32_t k_max = 32;   // maximum keyframes, >= 1

    // throws InvalidConfig
    void check() const;
};

struct KeyframeSelection {
    std::string           video_id;
    double                tau   = 0.0;
    uint32_t              k_max = 0;
    std::vector<uint32_t> keyframe_indices; // ascending
    std::vector<uint32_t> selection_order;  // order of admission
    std::vector<double>   relevance;        // per frame; empty when the selection ignored the query

    size_t size() const { return keyframe_indices.size(); }
    bool contains(uint32_t frame) const;
};

// cos(frame, query.frame_space)
double frame_relevance(const FrameEmbedding & frame, const QueryEmbedding & query);

// Max cosine between frame and any context member; -1 for an empty context.
double frame_redundancy(const FrameEmbedding & frame, std::span<const FrameEmbedding> context);

// Ranking used by the selection: relevance descending, ties by ascending frame index.
std::vector<uint32_t> rank_by_relevance(std::span<const double> relevance);

KeyframeSelection select_keyframes(const VideoEmbeddingSet & video, const QueryEmbedding & query, const DksConfig & cfg);

// Naive reference with no code shared with select_keyframes: selection-sort
// ranking and a full similarity recomputation against the selected set for
// every candidate.
KeyframeSelection select_keyframes_oracle(const VideoEmbeddingSet & video, const QueryEmbedding & query,
                                          const DksConfig & cfg);

} // namespace vdistill
