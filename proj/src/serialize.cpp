#include "vdistill/serialize.hpp"

#include "vdistill/error.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <fstream>
#include <memory>
#include <sstream>

#ifndef VDISTILL_VERSION
#define VDISTILL_VERSION "0.0.0"
#endif

namespace vdistill {

std::string_view tool_version() { return VDISTILL_VERSION; }

namespace {

struct MdCtxDeleter {
    void operator()(EVP_MD_CTX * ctx) const { EVP_MD_CTX_free(ctx); }
};

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
            throw Error(ErrorCode::IoFailure, "sha256 unavailable");
        }
    }
    void update(const void * data, size_t len) { EVP_DigestUpdate(ctx_.get(), data, len); }
    std::string hex() {
        unsigned char md[EVP_MAX_MD_SIZE];
        unsigned int  len = 0;
        EVP_DigestFinal_ex(ctx_.get(), md, &len);
        static constexpr char digits[] = "0123456789abcdef";
        std::string out;
        for (unsigned i = 0; i < len; ++i) {
            out += digits[md[i] >> 4];
            out += digits[md[i] & 15];
        }
        return out;
    }

private:
    std::unique_ptr<EVP_MD_CTX, MdCtxDeleter> ctx_;
};

} // namespace

std::string sha256_bytes(std::string_view bytes) {
    Sha256 h;
    h.update(bytes.data(), bytes.size());
    return h.hex();
}

std::string sha256_file(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    }
    Sha256 h;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), std::streamsize(buf.size()));
        h.update(buf.data(), size_t(in.gcount()));
    }
    return h.hex();
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

nlohmann::ordered_json meta_to_json(const ArtifactMeta & meta) {
    nlohmann::ordered_json inputs = nlohmann::ordered_json::array();
    for (const auto & [role, path] : meta.inputs) {
        inputs.push_back({{"role", role}, {"path", path.generic_string()}, {"sha256", sha256_file(path)}});
    }
    return {{"tool", "vdistill"},
            {"version", tool_version()},
            {"command", meta.command},
            {"config", meta.config},
            {"inputs", inputs}};
}

std::string meta_to_csv_comments(const ArtifactMeta & meta) {
    std::ostringstream out;
    out << "# tool: vdistill " << tool_version() << "\n";
    out << "# command: " << meta.command << "\n";
    for (const auto & [key, value] : meta.config.items()) {
        out << "# config." << key << ": " << value.dump() << "\n";
    }
    for (const auto & [role, path] : meta.inputs) {
        out << "# input." << role << ": " << path.generic_string() << " sha256=" << sha256_file(path) << "\n";
    }
    return out.str();
}

nlohmann::ordered_json config_to_json(const DistillConfig & cfg) {
    return {{"mode", sampling_mode_name(cfg.mode)},
            {"tau", cfg.dks.tau},
            {"k", cfg.dks.k_max},
            {"lambda", cfg.dfm.lambda},
            {"alpha", cfg.dfm.alpha}};
}

nlohmann::ordered_json selection_to_json(const KeyframeSelection & sel) {
    return {{"video_id", sel.video_id},
            {"tau", sel.tau},
            {"k_max", sel.k_max},
            {"keyframe_indices", sel.keyframe_indices},
            {"selection_order", sel.selection_order},
            {"relevance", sel.relevance}};
}

std::string format_percent(double ratio) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f%%", ratio * 100.0);
    return buf;
}

nlohmann::ordered_json budget_to_json(const BudgetReport & r) {
    return {{"n_frames", r.n_frames},
            {"patches_per_frame", r.patches_per_frame},
            {"keyframes", r.keyframes},
            {"original_tokens", r.original_tokens},
            {"compressed_tokens", r.compressed_tokens},
            {"reduction_ratio", r.reduction_ratio},
            {"reduction", format_percent(r.reduction_ratio)}};
}

namespace {

std::vector<float> narrowed(std::span<const double> v) { return std::vector<float>(v.begin(), v.end()); }

} // namespace

nlohmann::ordered_json sequence_to_json(const DistilledSequence & seq, const DistillConfig & cfg,
                                        const SequenceJsonOptions & opts) {
    nlohmann::ordered_json items = nlohmann::ordered_json::array();
    size_t token_row = 0;
    for (const auto & item : seq.items) {
        if (const auto * kf = std::get_if<KeyframeGrid>(&item)) {
            nlohmann::ordered_json j = {{"type", "keyframe"},
                                        {"frame_index", kf->grid.frame_index},
                                        {"tokens", kf->grid.m}};
            if (opts.inline_keyframe_patches) {
                j["patches"] = kf->grid.data;
            }
            items.push_back(std::move(j));
        } else {
            const auto & t = std::get<MergedToken>(item);
            nlohmann::ordered_json j = {{"type", "merged"}, {"frame_index", t.source_frame}};
            j["paired_keyframe"] = t.paired_keyframe ? nlohmann::ordered_json(*t.paired_keyframe) : nullptr;
            if (opts.inline_tokens) {
                j["vector"] = narrowed(t.vector);
            } else {
                j["token_row"] = token_row;
            }
            ++token_row;
            items.push_back(std::move(j));
        }
    }
    return {{"video_id", seq.selection.video_id},
            {"mode", sampling_mode_name(seq.mode)},
            {"config", config_to_json(cfg)},
            {"saturated", seq.saturated},
            {"budget", budget_to_json(seq.budget)},
            {"token_count", count_tokens(seq)},
            {"selection", selection_to_json(seq.selection)},
            {"items", items}};
}

TokenMatrix merged_tokens(const DistilledSequence & seq) {
    TokenMatrix out;
    for (const auto & item : seq.items) {
        if (const auto * t = std::get_if<MergedToken>(&item)) {
            if (out.n == 0) {
                out.d = uint32_t(t->vector.size());
            }
            for (double x : t->vector) {
                out.data.push_back(float(x));
            }
            ++out.n;
        }
    }
    return out;
}

std::string weights_csv(const DistilledSequence & seq) {
    std::ostringstream out;
    out << "frame_index,patch,weight\n";
    for (const auto & item : seq.items) {
        if (const auto * t = std::get_if<MergedToken>(&item)) {
            for (size_t m = 0; m < t->weights.size(); ++m) {
                out << t->source_frame << ',' << m << ',' << format_double(t->weights[m]) << '\n';
            }
        }
    }
    return out.str();
}

std::string sweep_csv(std::span<const SweepRow> rows) {
    std::ostringstream out;
    out << "tau,alpha,n_videos,mean_keyframes,mean_reduction,score\n";
    for (const auto & r : rows) {
        out << format_double(r.tau) << ',' << format_double(r.alpha) << ',' << r.n_videos << ','
            << format_double(r.mean_keyframes) << ',' << format_double(r.mean_reduction) << ','
            << (r.score ? format_double(*r.score) : "") << '\n';
    }
    return out.str();
}

std::string profile_csv(std::span<const double> curve, const BucketMeans & similarity) {
    std::ostringstream out;
    out << "percentile,cumulative_mass,mean_similarity\n";
    for (size_t p = 0; p < curve.size(); ++p) {
        out << p << ',' << format_double(curve[p]) << ',';
        if (p < similarity.size() && similarity[p]) {
            out << format_double(*similarity[p]);
        }
        out << '\n';
    }
    return out.str();
}

std::string score_csv(const ScoreGrid & grid) {
    std::ostringstream out;
    out << "length,bucket_lo,bucket_hi,correct,total,accuracy\n";
    for (const auto & c : grid.cells) {
        out << c.length << ',' << format_double(c.lo) << ',' << format_double(c.hi) << ',' << c.correct << ','
            << c.total << ',' << (c.accuracy ? format_double(*c.accuracy) : "") << '\n';
    }
    return out.str();
}

} // namespace vdistill
