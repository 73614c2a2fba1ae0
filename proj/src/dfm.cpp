#include "vdistill/dfm.hpp"

#include "vdistill/error.hpp"

#include <algorithm>
#include <cmath>

namespace vdistill {

void DfmConfig::check() const {
    if (!(lambda >= 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "lambda must be >= 0");
    }
    if (!(alpha > 0.0)) {
        throw Error(ErrorCode::NonPositiveAlpha, "alpha must be > 0, got " + std::to_string(alpha));
    }
}

std::vector<double> patch_saliency(const PatchGrid & frame, const PatchGrid * keyframe, const QueryEmbedding & query,
                                   double lambda) {
    if (frame.d != query.patch_space.size()) {
        throw Error(ErrorCode::DimensionMismatch, "patch dimension " + std::to_string(frame.d) + " vs query " +
                                                      std::to_string(query.patch_space.size()));
    }
    if (keyframe) {
        if (keyframe->m != frame.m) {
            throw Error(ErrorCode::PatchCountMismatch, "frame " + std::to_string(frame.frame_index) + " has " +
                                                           std::to_string(frame.m) + " patches, keyframe has " +
                                                           std::to_string(keyframe->m));
        }
        if (keyframe->d != frame.d) {
            throw Error(ErrorCode::DimensionMismatch, "keyframe patch dimension");
        }
    }
    std::vector<double> saliency(frame.m);
    for (uint32_t i = 0; i < frame.m; ++i) {
        const auto p = frame.patch(i);
        double s = cosine(p, query.patch_space);
        if (keyframe) {
            s -= lambda * cosine(p, keyframe->patch(i));
        }
        saliency[i] = s;
    }
    return saliency;
}

std::vector<double> merge_weights(std::span<const double> saliency, double alpha) {
    if (!(alpha > 0.0)) {
        throw Error(ErrorCode::NonPositiveAlpha, "alpha must be > 0, got " + std::to_string(alpha));
    }
    if (saliency.empty()) {
        throw Error(ErrorCode::InvalidArgument, "merge_weights needs at least one saliency value");
    }
    const double peak = *std::max_element(saliency.begin(), saliency.end());
    std::vector<double> w(saliency.size());
    double total = 0.0;
    for (size_t i = 0; i < saliency.size(); ++i) {
        w[i] = std::exp((saliency[i] - peak) / alpha);
        total += w[i];
    }
    for (double & x : w) {
        x /= total;
    }
    return w;
}

std::vector<double> pool(const PatchGrid & frame, std::span<const double> weights) {
    if (weights.size() != frame.m) {
        throw Error(ErrorCode::PatchCountMismatch, "weights vs patches");
    }
    std::vector<double> t(frame.d, 0.0);
    double wsum = 0.0;
    for (uint32_t i = 0; i < frame.m; ++i) {
        const auto p = frame.patch(i);
        for (uint32_t k = 0; k < frame.d; ++k) {
            t[k] += weights[i] * double(p[k]);
        }
        wsum += weights[i];
    }
    for (double & x : t) {
        x /= wsum;
    }
    return t;
}

MergedToken merge_frame(const PatchGrid & frame, const PatchGrid * keyframe, const QueryEmbedding & query,
                        const DfmConfig & cfg) {
    cfg.check();
    MergedToken tok;
    tok.source_frame = frame.frame_index;
    if (keyframe) {
        tok.paired_keyframe = keyframe->frame_index;
    }
    const auto saliency = patch_saliency(frame, keyframe, query, cfg.lambda);
    tok.weights = merge_weights(saliency, cfg.alpha);
    tok.vector = pool(frame, tok.weights);
    return tok;
}

Jacobian merge_gradient(const PatchGrid & frame, std::span<const double> saliency, double alpha) {
    const auto w = merge_weights(saliency, alpha);
    const auto t = pool(frame, w);
    Jacobian jac{frame.d, frame.m, std::vector<double>(size_t(frame.d) * frame.m)};
    for (uint32_t j = 0; j < frame.m; ++j) {
        const auto p = frame.patch(j);
        const double scale = w[j] / alpha;
        for (uint32_t r = 0; r < frame.d; ++r) {
            jac.data[size_t(r) * frame.m + j] = scale * (double(p[r]) - t[r]);
        }
    }
    return jac;
}

} // namespace vdistill
