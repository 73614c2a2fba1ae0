#pragma once

#include "vdistill/embedding.hpp"
#include "vdistill/prng.hpp"
#include "vdistill/synth.hpp"

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace vdtest {

using namespace vdistill;

inline std::filesystem::path data_dir() { return VDISTILL_TEST_DATA; }

// fresh directory under the system temp dir, removed on destruction
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string & tag) {
        static uint64_t counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("vdistill-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::filesystem::path operator/(const std::string & name) const { return path / name; }
};

inline std::vector<float> unit(std::vector<float> v) {
    normalize(v);
    return v;
}

inline VideoEmbeddingSet frames_of(const std::vector<std::vector<float>> & rows, const std::string & id = "v") {
    VideoEmbeddingSet v;
    v.video_id = id;
    for (size_t i = 0; i < rows.size(); ++i) {
        v.frames.push_back(FrameEmbedding{uint32_t(i), rows[i]});
    }
    return v;
}

inline PatchGrid grid_of(uint32_t frame, const std::vector<std::vector<float>> & patches) {
    PatchGrid g{frame, uint32_t(patches.size()), uint32_t(patches.front().size()), {}};
    for (const auto & p : patches) {
        g.data.insert(g.data.end(), p.begin(), p.end());
    }
    return g;
}

inline QueryEmbedding query_of(std::vector<float> frame_space, std::vector<float> patch_space = {}) {
    QueryEmbedding q;
    q.frame_space = std::move(frame_space);
    q.patch_space = patch_space.empty() ? q.frame_space : std::move(patch_space);
    return q;
}

inline PatchGrid random_grid(SplitMix64 & rng, uint32_t frame, uint32_t m, uint32_t d) {
    PatchGrid g{frame, m, d, {}};
    for (uint32_t i = 0; i < m; ++i) {
        const auto v = random_unit_vector(rng, d);
        g.data.insert(g.data.end(), v.begin(), v.end());
    }
    return g;
}

// Seeded random video with frame embeddings only. Roughly a third of the
// instances draw from a few clusters so that the threshold actually bites.
inline SynthVideo random_video(uint64_t seed, uint32_t max_n, uint32_t max_d, uint32_t m = 0) {
    SplitMix64 rng(seed);
    SynthSpec spec;
    spec.n_frames = uint32_t(rng.uniform_int(1, max_n));
    spec.d_f = uint32_t(rng.uniform_int(2, max_d));
    spec.d_p = uint32_t(rng.uniform_int(2, max_d));
    spec.m_patches = m;
    spec.cluster_centers = uint32_t(rng.uniform_int(1, 4));
    spec.blend = rng.uniform01() < 0.35 ? 0.6 + 0.4 * rng.uniform01() : 0.3 * rng.uniform01();
    spec.seed = rng.next();
    return gen_embeddings(spec);
}

inline double max_abs_diff(const std::vector<double> & a, const std::vector<double> & b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::fabs(a[i] - b[i]));
    }
    return worst;
}

} // namespace vdtest
