#pragma once

// Deterministic synthetic inputs. Everything is drawn from SplitMix64 (see
// prng.hpp) so a generated set can be rebuilt bit-for-bit from its spec.

#include "vdistill/embedding.hpp"
#include "vdistill/prng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vdistill {

struct SynthSpec {
    uint32_t    n_frames        = 16;
    uint32_t    m_patches       = 4;  // 0: frame embeddings only
    uint32_t    d_f             = 8;
    uint32_t    d_p             = 8;
    uint32_t    cluster_centers = 1;
    double      blend           = 0.0; // 0: independent draws, 1: every cluster member equals its center
    uint64_t    seed            = 0;
    bool        lazy_patches    = false; // generate grids on demand instead of holding them
    std::string video_id        = "synth";
};

struct SynthVideo {
    VideoEmbeddingSet video;
    QueryEmbedding    query;
};

// Draw order from SplitMix64(seed): cluster_centers frame centers (d_f
// Gaussians each), query frame_space, query patch_space, then per frame n the
// d_f Gaussians of its noise vector. Frame n belongs to cluster
// floor(n * C / N) and equals normalize((1 - blend) * noise + blend * center)
// with noise normalized first. Patch grid n is drawn from its own stream
// SplitMix64(derive_seed(seed, n + 1)) against per-(cluster, position) patch
// centers drawn from SplitMix64(derive_seed(seed, 0)).
SynthVideo gen_embeddings(const SynthSpec & spec);

// d Gaussians, L2-normalized
std::vector<float> random_unit_vector(SplitMix64 & rng, uint32_t d);

// ceil(top_frac * n) frames (a seeded shuffle picks which) share mass_frac of
// the total uniformly across their patches; the rest share 1 - mass_frac.
// When every frame is a top frame the dump is uniform.
AttentionDump gen_attention_dump(uint32_t n, uint32_t m, double top_frac, double mass_frac, uint64_t seed);

// Patch-level analogue: k_top keyframes carry enough mass to be designated by
// attention, and among the non-keyframe patches ceil(top_frac * P) of them hold
// mass_frac of the non-keyframe mass.
AttentionDump gen_patch_attention_dump(uint32_t n, uint32_t m, uint32_t k_top, double top_frac, double mass_frac,
                                       uint64_t seed);

} // namespace vdistill
