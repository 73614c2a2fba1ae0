#pragma once

// Differential feature merging: a non-keyframe's patches are pooled into one
// token, weighting each patch by a softmax over (query relevance - lambda x
// similarity to the same patch position in the paired keyframe).

#include "vdistill/embedding.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace vdistill {

struct DfmConfig {
    double lambda = 1.0;  // relevance / redundancy trade-off, >= 0
    double alpha  = 1e-2; // softmax temperature, > 0

    void check() const;
};

struct MergedToken {
    std::vector<double>     vector; // d_p, double precision; narrowed to float32 on output
    uint32_t                source_frame = 0;
    std::optional<uint32_t> paired_keyframe;
    std::vector<double>     weights; // M, non-negative, sums to 1
};

// D_m = cos(p_m, q) - lambda * cos(p_m, k_m). Without a keyframe the redundancy term is zero.
std::vector<double> patch_saliency(const PatchGrid & frame, const PatchGrid * keyframe, const QueryEmbedding & query,
                                   double lambda);

// softmax(saliency / alpha), max-subtracted
std::vector<double> merge_weights(std::span<const double> saliency, double alpha);

// (sum_m w_m p_m) / (sum_m w_m), summed left to right in double precision
std::vector<double> pool(const PatchGrid & frame, std::span<const double> weights);

MergedToken merge_frame(const PatchGrid & frame, const PatchGrid * keyframe, const QueryEmbedding & query,
                        const DfmConfig & cfg);

// Jacobian of pool(frame, merge_weights(saliency, alpha)) with respect to the
// saliency vector, row-major d_p x M: column j is (1/alpha) w_j (p_j - t).
struct Jacobian {
    uint32_t            rows = 0;
    uint32_t            cols = 0;
    std::vector<double> data;

    double operator()(uint32_t r, uint32_t c) const { return data[size_t(r) * cols + c]; }
};

Jacobian merge_gradient(const PatchGrid & frame, std::span<const double> saliency, double alpha);

} // namespace vdistill
