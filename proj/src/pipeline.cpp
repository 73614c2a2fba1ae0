#include "vdistill/pipeline.hpp"

#include "vdistill/error.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <thread>

namespace vdistill {

std::string_view sampling_mode_name(SamplingMode mode) {
    switch (mode) {
        case SamplingMode::Dks:       return "dks";
        case SamplingMode::QueryOnly: return "query_only";
        case SamplingMode::Uniform:   return "uniform";
    }
    return "unknown";
}

SamplingMode parse_sampling_mode(std::string_view name) {
    if (name == "dks") return SamplingMode::Dks;
    if (name == "query_only") return SamplingMode::QueryOnly;
    if (name == "uniform") return SamplingMode::Uniform;
    throw Error(ErrorCode::InvalidConfig, "unknown sampling mode '" + std::string(name) + "'");
}

uint32_t item_frame_index(const SequenceItem & item) {
    if (const auto * kg = std::get_if<KeyframeGrid>(&item)) {
        return kg->grid.frame_index;
    }
    return std::get<MergedToken>(item).source_frame;
}

BudgetReport budget(uint64_t n, uint64_t m, uint64_t k) {
    if (k == 0 || m == 0) {
        throw Error(ErrorCode::InvalidArgument, "budget needs K >= 1 and M >= 1");
    }
    if (k > n) {
        throw Error(ErrorCode::KExceedsN, "K = " + std::to_string(k) + " exceeds N = " + std::to_string(n));
    }
    BudgetReport b;
    b.n_frames = n;
    b.patches_per_frame = m;
    b.keyframes = k;
    b.original_tokens = m * n;
    b.compressed_tokens = m * k + (n - k);
    b.reduction_ratio = 1.0 - double(b.compressed_tokens) / double(b.original_tokens);
    return b;
}

double estimate_cost(uint64_t token_count, const CostProfile & profile) {
    const double l = double(token_count);
    return profile.per_token_cost * l + profile.attention_quadratic_coeff * l * l;
}

uint64_t count_tokens(const DistilledSequence & seq) {
    uint64_t total = 0;
    for (const auto & item : seq.items) {
        if (const auto * kg = std::get_if<KeyframeGrid>(&item)) {
            total += kg->grid.m;
        } else {
            total += 1;
        }
    }
    return total;
}

KeyframeSelection select_frames(const VideoEmbeddingSet & video, const QueryEmbedding & query,
                                const DistillConfig & cfg) {
    if (cfg.mode == SamplingMode::Dks) {
        return select_keyframes(video, query, cfg.dks);
    }
    cfg.dks.check();
    const uint32_t n = video.n_frames();
    if (n == 0) {
        throw Error(ErrorCode::TooFewFrames, "video " + video.video_id + " has no frames");
    }
    const uint32_t k = std::min(cfg.dks.k_max, n);

    KeyframeSelection sel;
    sel.video_id = video.video_id;
    sel.tau = cfg.dks.tau;
    sel.k_max = cfg.dks.k_max;
    if (cfg.mode == SamplingMode::QueryOnly) {
        sel.relevance.resize(n);
        for (uint32_t i = 0; i < n; ++i) {
            sel.relevance[i] = frame_relevance(video.frames[i], query);
        }
        const auto ranked = rank_by_relevance(sel.relevance);
        sel.selection_order.assign(ranked.begin(), ranked.begin() + k);
    } else {
        for (uint32_t i = 0; i < k; ++i) {
            const auto idx = uint32_t(uint64_t(i) * n / k);
            if (sel.selection_order.empty() || sel.selection_order.back() != idx) {
                sel.selection_order.push_back(idx);
            }
        }
    }
    sel.keyframe_indices = sel.selection_order;
    std::sort(sel.keyframe_indices.begin(), sel.keyframe_indices.end());
    return sel;
}

namespace {

void check_patches(const VideoEmbeddingSet & video, const QueryEmbedding & query) {
    if (!video.patches) {
        throw Error(ErrorCode::InvalidArgument, "video " + video.video_id + " has no patch grids");
    }
    if (video.patches->dim() != query.patch_space.size()) {
        throw Error(ErrorCode::DimensionMismatch, "patch dimension " + std::to_string(video.patches->dim()) +
                                                      " vs query " + std::to_string(query.patch_space.size()));
    }
}

DistilledSequence start_sequence(const VideoEmbeddingSet & video, const QueryEmbedding & query,
                                 const DistillConfig & cfg) {
    cfg.dfm.check();
    check_patches(video, query);
    DistilledSequence seq;
    seq.mode = cfg.mode;
    seq.selection = select_frames(video, query, cfg);
    const uint64_t n = video.n_frames();
    seq.saturated = seq.selection.size() < std::min<uint64_t>(cfg.dks.k_max, n);
    seq.budget = budget(n, video.patches->patches_per_frame(), seq.selection.size());
    return seq;
}

void check_grid(const PatchGrid & g, uint32_t expected_index, uint32_t m) {
    if (g.frame_index != expected_index) {
        throw Error(ErrorCode::InvalidArgument, "patch stream out of order: expected frame " +
                                                    std::to_string(expected_index) + ", got " +
                                                    std::to_string(g.frame_index));
    }
    if (g.m != m) {
        throw Error(ErrorCode::PatchCountMismatch, "frame " + std::to_string(g.frame_index) + " has " +
                                                       std::to_string(g.m) + " patches, expected " + std::to_string(m));
    }
}

} // namespace

DistilledSequence distill(const VideoEmbeddingSet & video, const QueryEmbedding & query, const DistillConfig & cfg) {
    DistilledSequence seq = start_sequence(video, query, cfg);
    const uint32_t n = video.n_frames();
    const uint32_t m = video.patches->patches_per_frame();

    const std::vector<PatchGrid> grids = materialize(*video.patches);
    if (grids.size() < n) {
        throw Error(ErrorCode::StreamExhausted, "patch source yielded " + std::to_string(grids.size()) +
                                                    " grids for " + std::to_string(n) + " frames");
    }
    for (uint32_t i = 0; i < n; ++i) {
        check_grid(grids[i], i, m);
    }

    const auto & keys = seq.selection.keyframe_indices;
    seq.items.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
        auto it = std::lower_bound(keys.begin(), keys.end(), i);
        if (it != keys.end() && *it == i) {
            seq.items.emplace_back(KeyframeGrid{grids[i]});
            continue;
        }
        // nearest preceding keyframe, if any
        const PatchGrid * paired = it == keys.begin() ? nullptr : &grids[*std::prev(it)];
        seq.items.emplace_back(merge_frame(grids[i], paired, query, cfg.dfm));
    }
    return seq;
}

DistilledSequence stream_distill(const VideoEmbeddingSet & video, const QueryEmbedding & query,
                                 const DistillConfig & cfg, const ItemSink & sink, StreamStats * stats) {
    DistilledSequence seq = start_sequence(video, query, cfg);
    const uint32_t n = video.n_frames();
    const uint32_t m = video.patches->patches_per_frame();

    // selection flags by frame index, so pass 2 needs no search
    std::vector<bool> is_key(n, false);
    for (uint32_t k : seq.selection.keyframe_indices) {
        is_key[k] = true;
    }

    StreamStats local;
    std::optional<PatchGrid> keyframe;
    auto source = video.patches->open();
    for (uint32_t i = 0; i < n; ++i) {
        std::optional<PatchGrid> current = source->next();
        if (!current) {
            throw Error(ErrorCode::StreamExhausted,
                        "patch source ended after " + std::to_string(i) + " of " + std::to_string(n) + " frames");
        }
        ++local.grids_read;
        check_grid(*current, i, m);
        local.peak_resident_grids = std::max<size_t>(local.peak_resident_grids, 1 + (keyframe ? 1 : 0));

        if (is_key[i]) {
            sink(KeyframeGrid{*current});
            keyframe = std::move(current);
        } else {
            sink(merge_frame(*current, keyframe ? &*keyframe : nullptr, query, cfg.dfm));
        }
    }
    if (stats) {
        *stats = local;
    }
    return seq;
}

DistilledSequence stream_distill(const VideoEmbeddingSet & video, const QueryEmbedding & query,
                                 const DistillConfig & cfg, StreamStats * stats) {
    std::vector<SequenceItem> items;
    DistilledSequence seq = stream_distill(
        video, query, cfg, [&](SequenceItem && item) { items.push_back(std::move(item)); }, stats);
    seq.items = std::move(items);
    return seq;
}

std::vector<SweepRow> run_sweep(std::span<const VideoEmbeddingSet> videos, std::span<const QueryEmbedding> queries,
                                std::span<const double> tau_grid, std::span<const double> alpha_grid,
                                const DistillConfig & base, const ScoreHook & score, unsigned jobs) {
    if (tau_grid.empty() || alpha_grid.empty()) {
        throw Error(ErrorCode::EmptyGrid, "sweep needs at least one tau and one alpha");
    }
    if (videos.empty()) {
        throw Error(ErrorCode::InvalidArgument, "sweep needs at least one video");
    }
    if (queries.size() != 1 && queries.size() != videos.size()) {
        throw Error(ErrorCode::InvalidArgument, "sweep needs one query per video or a single shared query");
    }

    const size_t cells = tau_grid.size() * alpha_grid.size();
    // per (video, cell): keyframes and reduction
    std::vector<double> keyframes(videos.size() * cells);
    std::vector<double> reduction(videos.size() * cells);

    auto run_video = [&](size_t v) {
        const QueryEmbedding & q = queries.size() == 1 ? queries[0] : queries[v];
        for (size_t a = 0; a < alpha_grid.size(); ++a) {
            for (size_t t = 0; t < tau_grid.size(); ++t) {
                DistillConfig cfg = base;
                cfg.dks.tau = tau_grid[t];
                cfg.dfm.alpha = alpha_grid[a];
                const auto seq = distill(videos[v], q, cfg);
                const size_t cell = a * tau_grid.size() + t;
                keyframes[v * cells + cell] = double(seq.budget.keyframes);
                reduction[v * cells + cell] = seq.budget.reduction_ratio;
            }
        }
    };

    const unsigned workers = std::max(1u, std::min<unsigned>(jobs, unsigned(videos.size())));
    if (workers == 1) {
        for (size_t v = 0; v < videos.size(); ++v) {
            run_video(v);
        }
    } else {
        std::atomic<size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mu;
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (size_t v = next++; v < videos.size(); v = next++) {
                    try {
                        run_video(v);
                    } catch (...) {
                        std::lock_guard lock(failure_mu);
                        if (!failure) {
                            failure = std::current_exception();
                        }
                    }
                }
            });
        }
        for (auto & t : pool) {
            t.join();
        }
        if (failure) {
            std::rethrow_exception(failure);
        }
    }

    std::vector<SweepRow> rows;
    rows.reserve(cells);
    for (size_t a = 0; a < alpha_grid.size(); ++a) {
        for (size_t t = 0; t < tau_grid.size(); ++t) {
            const size_t cell = a * tau_grid.size() + t;
            SweepRow row;
            row.tau = tau_grid[t];
            row.alpha = alpha_grid[a];
            row.n_videos = videos.size();
            for (size_t v = 0; v < videos.size(); ++v) {
                row.mean_keyframes += keyframes[v * cells + cell];
                row.mean_reduction += reduction[v * cells + cell];
            }
            row.mean_keyframes /= double(videos.size());
            row.mean_reduction /= double(videos.size());
            if (score) {
                row.score = score(row.tau, row.alpha);
            }
            rows.push_back(row);
        }
    }
    return rows;
}

} // namespace vdistill
