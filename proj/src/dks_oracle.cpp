// Reference implementation of keyframe selection used for differential
// testing. Deliberately shares nothing with dks.cpp beyond the public types.

#include "vdistill/dks.hpp"

#include "vdistill/error.hpp"

#include <cmath>

namespace vdistill {

namespace {

double naive_cosine(const std::vector<float> & a, const std::vector<float> & b) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::DimensionMismatch, "oracle: dimension mismatch");
    }
    double ab = 0.0;
    double aa = 0.0;
    double bb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        ab += double(a[i]) * double(b[i]);
    }
    for (size_t i = 0; i < a.size(); ++i) {
        aa += double(a[i]) * double(a[i]);
    }
    for (size_t i = 0; i < b.size(); ++i) {
        bb += double(b[i]) * double(b[i]);
    }
    return ab / std::sqrt(aa * bb);
}

} // namespace

KeyframeSelection select_keyframes_oracle(const VideoEmbeddingSet & video, const QueryEmbedding & query,
                                          const DksConfig & cfg) {
    if (!(cfg.tau > -1.0 && cfg.tau <= 1.0) || cfg.k_max < 1) {
        throw Error(ErrorCode::InvalidConfig, "oracle: bad config");
    }
    const size_t n = video.frames.size();
    if (n == 0) {
        throw Error(ErrorCode::TooFewFrames, "oracle: empty video");
    }

    KeyframeSelection out;
    out.video_id = video.video_id;
    out.tau = cfg.tau;
    out.k_max = cfg.k_max;
    for (size_t i = 0; i < n; ++i) {
        out.relevance.push_back(naive_cosine(video.frames[i].vector, query.frame_space));
    }

    // selection sort: repeatedly extract the most relevant unranked frame,
    // lowest index first among equals
    std::vector<bool> ranked(n, false);
    std::vector<uint32_t> sorted;
    for (size_t step = 0; step < n; ++step) {
        size_t best = n;
        for (size_t i = 0; i < n; ++i) {
            if (ranked[i]) {
                continue;
            }
            if (best == n || out.relevance[i] > out.relevance[best]) {
                best = i;
            }
        }
        ranked[best] = true;
        sorted.push_back(uint32_t(best));
    }

    std::vector<bool> chosen(n, false);
    out.selection_order.push_back(sorted[0]);
    chosen[sorted[0]] = true;
    for (size_t r = 0; r < n; ++r) {
        const uint32_t cand = sorted[r];
        if (chosen[cand]) {
            continue;
        }
        // full recomputation of the similarity to every selected frame
        std::vector<double> sims;
        for (uint32_t k : out.selection_order) {
            sims.push_back(naive_cosine(video.frames[k].vector, video.frames[cand].vector));
        }
        double redundancy = -1.0;
        for (double s : sims) {
            if (s > redundancy) {
                redundancy = s;
            }
        }
        if (out.selection_order.size() < cfg.k_max && redundancy < cfg.tau) {
            out.selection_order.push_back(cand);
            chosen[cand] = true;
        }
    }

    for (size_t i = 0; i < n; ++i) {
        if (chosen[i]) {
            out.keyframe_indices.push_back(uint32_t(i));
        }
    }
    return out;
}

} // namespace vdistill
