#pragma once

// Reference re-derivation of feature merging in extended precision. Kept
// separate from the merging code it checks: this header and its source may
// only depend on the embedding containers.

#include "vdistill/embedding.hpp"

#include <vector>

namespace vdistill {

struct OracleToken {
    std::vector<long double> vector;
    std::vector<long double> saliency;
    std::vector<long double> weights;
};

OracleToken dfm_oracle(const PatchGrid & frame, const PatchGrid * keyframe, const QueryEmbedding & query,
                       double lambda, double alpha);

} // namespace vdistill
