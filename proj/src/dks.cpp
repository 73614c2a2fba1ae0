#include "vdistill/dks.hpp"

#include "vdistill/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vdistill {

void DksConfig::check() const {
    if (!(tau > -1.0 && tau <= 1.0)) {
        throw Error(ErrorCode::InvalidConfig, "tau must lie in (-1, 1], got " + std::to_string(tau));
    }
    if (k_max < 1) {
        throw Error(ErrorCode::InvalidConfig, "k_max must be >= 1");
    }
}

bool KeyframeSelection::contains(uint32_t frame) const {
    return std::binary_search(keyframe_indices.begin(), keyframe_indices.end(), frame);
}

double frame_relevance(const FrameEmbedding & frame, const QueryEmbedding & query) {
    if (frame.vector.size() != query.frame_space.size()) {
        throw Error(ErrorCode::DimensionMismatch, "frame " + std::to_string(frame.frame_index) + " has dimension " +
                                                      std::to_string(frame.vector.size()) + ", query has " +
                                                      std::to_string(query.frame_space.size()));
    }
    return cosine(frame.vector, query.frame_space);
}

double frame_redundancy(const FrameEmbedding & frame, std::span<const FrameEmbedding> context) {
    double best = -1.0;
    for (const auto & c : context) {
        if (c.vector.size() != frame.vector.size()) {
            throw Error(ErrorCode::DimensionMismatch, "context frame " + std::to_string(c.frame_index));
        }
        best = std::max(best, cosine(frame.vector, c.vector));
    }
    return best;
}

std::vector<uint32_t> rank_by_relevance(std::span<const double> relevance) {
    std::vector<uint32_t> order(relevance.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
        if (relevance[a] != relevance[b]) {
            return relevance[a] > relevance[b];
        }
        return a < b;
    });
    return order;
}

KeyframeSelection select_keyframes(const VideoEmbeddingSet & video, const QueryEmbedding & query, const DksConfig & cfg) {
    cfg.check();
    const uint32_t n = video.n_frames();
    if (n == 0) {
        throw Error(ErrorCode::TooFewFrames, "video " + video.video_id + " has no frames");
    }

    KeyframeSelection sel;
    sel.video_id = video.video_id;
    sel.tau = cfg.tau;
    sel.k_max = cfg.k_max;
    sel.relevance.resize(n);
    for (uint32_t i = 0; i < n; ++i) {
        sel.relevance[i] = frame_relevance(video.frames[i], query);
    }

    const auto ranked = rank_by_relevance(sel.relevance);
    sel.selection_order.push_back(ranked.front());

    // O(N K): each candidate is compared with at most K selected frames, and the
    // scan stops as soon as the budget is full.
    for (size_t r = 1; r < ranked.size() && sel.selection_order.size() < cfg.k_max; ++r) {
        const auto & candidate = video.frames[ranked[r]].vector;
        bool redundant = false;
        for (uint32_t k : sel.selection_order) {
            if (cosine(candidate, video.frames[k].vector) >= cfg.tau) {
                redundant = true;
                break;
            }
        }
        if (!redundant) {
            sel.selection_order.push_back(ranked[r]);
        }
    }

    sel.keyframe_indices = sel.selection_order;
    std::sort(sel.keyframe_indices.begin(), sel.keyframe_indices.end());
    return sel;
}

} // namespace vdistill
