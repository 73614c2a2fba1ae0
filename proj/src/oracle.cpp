#include "vdistill/oracle.hpp"

#include "vdistill/error.hpp"

#include <cmath>

namespace vdistill {

OracleToken dfm_oracle(const PatchGrid & frame, const PatchGrid * keyframe, const QueryEmbedding & query,
                       double lambda, double alpha) {
    if (!(alpha > 0.0)) {
        throw Error(ErrorCode::NonPositiveAlpha, "oracle: alpha must be positive");
    }
    if (query.patch_space.size() != frame.d) {
        throw Error(ErrorCode::DimensionMismatch, "oracle: query dimension");
    }
    if (keyframe && keyframe->m != frame.m) {
        throw Error(ErrorCode::PatchCountMismatch, "oracle: keyframe patch count");
    }
    if (keyframe && keyframe->d != frame.d) {
        throw Error(ErrorCode::DimensionMismatch, "oracle: keyframe dimension");
    }
    const uint32_t m_count = frame.m;
    const uint32_t d = frame.d;
    const float * p = frame.data.data();
    const float * q = query.patch_space.data();

    long double qq = 0.0L;
    for (uint32_t k = 0; k < d; ++k) {
        qq += (long double)q[k] * q[k];
    }

    OracleToken out;
    for (uint32_t m = 0; m < m_count; ++m) {
        const float * pm = p + size_t(m) * d;
        long double pq = 0.0L, pp = 0.0L;
        for (uint32_t k = 0; k < d; ++k) {
            pq += (long double)pm[k] * q[k];
            pp += (long double)pm[k] * pm[k];
        }
        long double relevance = pq / std::sqrt(pp * qq);
        long double redundancy = 0.0L;
        if (keyframe) {
            const float * km = keyframe->data.data() + size_t(m) * d;
            long double pk = 0.0L, kk = 0.0L;
            for (uint32_t k = 0; k < d; ++k) {
                pk += (long double)pm[k] * km[k];
                kk += (long double)km[k] * km[k];
            }
            redundancy = pk / std::sqrt(pp * kk);
        }
        out.saliency.push_back(relevance - (long double)lambda * redundancy);
    }

    long double top = out.saliency[0];
    for (long double s : out.saliency) {
        top = s > top ? s : top;
    }
    long double z = 0.0L;
    for (long double s : out.saliency) {
        out.weights.push_back(std::exp((s - top) / (long double)alpha));
        z += out.weights.back();
    }
    for (long double & w : out.weights) {
        w /= z;
    }

    out.vector.assign(d, 0.0L);
    long double wsum = 0.0L;
    for (uint32_t m = 0; m < m_count; ++m) {
        for (uint32_t k = 0; k < d; ++k) {
            out.vector[k] += out.weights[m] * p[size_t(m) * d + k];
        }
        wsum += out.weights[m];
    }
    for (long double & x : out.vector) {
        x /= wsum;
    }
    return out;
}

} // namespace vdistill
