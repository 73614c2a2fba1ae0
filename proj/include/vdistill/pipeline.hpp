#pragma once

#include "vdistill/dfm.hpp"
#include "vdistill/dks.hpp"
#include "vdistill/embedding.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

namespace vdistill {

enum class SamplingMode {
    Dks,       // thresholded greedy selection
    QueryOnly, // top-K by relevance, no redundancy check
    Uniform,   // floor(i * N / K), ignores the query
};

std::string_view sampling_mode_name(SamplingMode mode);
SamplingMode parse_sampling_mode(std::string_view name);

struct DistillConfig {
    DksConfig    dks;
    DfmConfig    dfm;
    SamplingMode mode = SamplingMode::Dks;
};

struct KeyframeGrid {
    PatchGrid grid;
};

using SequenceItem = std::variant<KeyframeGrid, MergedToken>;

uint32_t item_frame_index(const SequenceItem & item);

struct BudgetReport {
    uint64_t n_frames          = 0;
    uint64_t patches_per_frame = 0;
    uint64_t keyframes         = 0;
    uint64_t original_tokens   = 0; // M N
    uint64_t compressed_tokens = 0; // M K + (N - K)
    double   reduction_ratio   = 0.0;
};

// throws KExceedsN when K > N, InvalidArgument when K or M is zero
BudgetReport budget(uint64_t n, uint64_t m, uint64_t k);

struct CostProfile {
    double per_token_cost            = 1.0;
    double attention_quadratic_coeff = 0.0;
};

// a L + b L^2. A token-count proxy, not a FLOP count.
double estimate_cost(uint64_t token_count, const CostProfile & profile = {});

struct DistilledSequence {
    std::vector<SequenceItem> items; // one per frame, in frame order
    BudgetReport              budget;
    KeyframeSelection         selection;
    SamplingMode              mode = SamplingMode::Dks;
    // selection stopped below min(k_max, N); the pipeline does not backfill
    bool                      saturated = false;
};

// tokens actually present in the items: M per keyframe grid, 1 per merged token
uint64_t count_tokens(const DistilledSequence & seq);

KeyframeSelection select_frames(const VideoEmbeddingSet & video, const QueryEmbedding & query, const DistillConfig & cfg);

// Materializes all patch grids and assembles the sequence.
DistilledSequence distill(const VideoEmbeddingSet & video, const QueryEmbedding & query, const DistillConfig & cfg);

struct StreamStats {
    size_t peak_resident_grids = 0; // working set of the merge pass
    size_t grids_read          = 0;
};

using ItemSink = std::function<void(SequenceItem &&)>;

// Two passes: frame embeddings only for selection, then a single in-order pass
// over the patch source holding at most the current grid and the most recent
// keyframe grid. Items are handed to `sink` as they are produced.
DistilledSequence stream_distill(const VideoEmbeddingSet & video, const QueryEmbedding & query,
                                 const DistillConfig & cfg, const ItemSink & sink, StreamStats * stats = nullptr);

// Same, collecting items into the returned sequence.
DistilledSequence stream_distill(const VideoEmbeddingSet & video, const QueryEmbedding & query,
                                 const DistillConfig & cfg, StreamStats * stats = nullptr);

inline constexpr std::array<double, 4> kSweepTauGrid   = {0.35, 0.5, 0.85, 1.0};
inline constexpr std::array<double, 4> kSweepAlphaGrid = {1.0, 1e-1, 1e-2, 1e-3};

struct SweepRow {
    double                tau            = 0.0;
    double                alpha          = 0.0;
    size_t                n_videos       = 0;
    double                mean_keyframes = 0.0;
    double                mean_reduction = 0.0;
    std::optional<double> score;
};

// Downstream score for a (tau, alpha) cell, supplied from outside the artifact.
using ScoreHook = std::function<std::optional<double>(double tau, double alpha)>;

// One row per (alpha, tau) cell, alpha outer. `queries` holds one query per
// video or a single shared query. Videos are distributed over `jobs` threads;
// the result does not depend on `jobs`.
std::vector<SweepRow> run_sweep(std::span<const VideoEmbeddingSet> videos, std::span<const QueryEmbedding> queries,
                                std::span<const double> tau_grid, std::span<const double> alpha_grid,
                                const DistillConfig & base, const ScoreHook & score = {}, unsigned jobs = 1);

} // namespace vdistill
