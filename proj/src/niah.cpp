#include "vdistill/niah.hpp"

#include "vdistill/error.hpp"
#include "vdistill/prng.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <unordered_set>

namespace vdistill {

namespace fs = std::filesystem;

double niah_depth(uint32_t insert_index, uint32_t haystack_len, uint32_t needle_len) {
    if (haystack_len == needle_len) {
        return 0.0;
    }
    return double(insert_index) / double(haystack_len - needle_len);
}

namespace {

std::string case_id_for(uint32_t length, uint32_t index) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "L%05u-%05u", length, index);
    return buf;
}

template <typename T>
const T & pick(SplitMix64 & rng, const std::vector<T> & items) {
    return items[size_t(rng.uniform_int(0, items.size() - 1))];
}

} // namespace

NiahManifest build_manifest(std::span<const CatalogEntry> catalog, const NiahConfig & cfg, uint64_t seed) {
    if (cfg.lengths.empty()) {
        throw Error(ErrorCode::InvalidConfig, "no haystack lengths configured");
    }
    if (cfg.needle_min == 0 || cfg.needle_min > cfg.needle_max) {
        throw Error(ErrorCode::InvalidConfig, "needle range must satisfy 1 <= needle_min <= needle_max");
    }

    // needle candidates grouped by question type; one group ("") when no labels exist
    std::vector<const CatalogEntry *> needles;
    for (const auto & e : catalog) {
        if (!e.query_id.empty() && e.length >= cfg.needle_min) {
            needles.push_back(&e);
        }
    }
    if (needles.empty()) {
        throw Error(ErrorCode::CatalogTooSmall, "no catalog entry can serve as a needle (needs query_id and length >= " +
                                                    std::to_string(cfg.needle_min) + ")");
    }
    const bool balanced =
        std::any_of(needles.begin(), needles.end(), [](const CatalogEntry * e) { return !e->question_type.empty(); });
    std::map<std::string, std::vector<const CatalogEntry *>> by_type;
    for (const auto * e : needles) {
        by_type[balanced ? e->question_type : std::string()].push_back(e);
    }
    std::vector<const std::vector<const CatalogEntry *> *> groups;
    for (const auto & [type, members] : by_type) {
        groups.push_back(&members);
    }

    NiahManifest manifest;
    manifest.seed = seed;
    manifest.config = cfg;
    SplitMix64 rng(seed);

    for (uint32_t length : cfg.lengths) {
        std::vector<const CatalogEntry *> hay;
        for (const auto & e : catalog) {
            if (e.length >= length) {
                hay.push_back(&e);
            }
        }
        if (hay.empty()) {
            throw Error(ErrorCode::CatalogTooSmall, "no haystack source with at least " + std::to_string(length) +
                                                        " frames");
        }
        if (length < cfg.needle_min) {
            throw Error(ErrorCode::CatalogTooSmall, "haystack length " + std::to_string(length) +
                                                        " is shorter than the minimum needle");
        }

        for (uint32_t c = 0; c < cfg.cases_per_length; ++c) {
            const auto & group = *groups[c % groups.size()];
            const CatalogEntry & needle = *pick(rng, group);

            NiahCase nc;
            nc.case_id = case_id_for(length, c);
            nc.haystack_len = length;
            nc.needle_source = needle.video_id;
            nc.query_id = needle.query_id;
            nc.answer_key = needle.answer_key;
            nc.question_type = needle.question_type;
            const uint32_t max_len = std::min({cfg.needle_max, needle.length, length});
            nc.needle_len = uint32_t(rng.uniform_int(cfg.needle_min, max_len));
            nc.needle_offset = uint32_t(rng.uniform_int(0, needle.length - nc.needle_len));

            std::vector<const CatalogEntry *> others;
            for (const auto * h : hay) {
                if (h->video_id != needle.video_id) {
                    others.push_back(h);
                }
            }
            nc.haystack_source = pick(rng, others.empty() ? hay : others)->video_id;
            nc.insert_index = uint32_t(rng.uniform_int(0, length - nc.needle_len));
            nc.depth = niah_depth(nc.insert_index, length, nc.needle_len);
            manifest.cases.push_back(std::move(nc));
        }
    }
    return manifest;
}

nlohmann::ordered_json manifest_to_json(const NiahManifest & m) {
    nlohmann::ordered_json j;
    j["schema"] = kNiahSchema;
    j["schema_version"] = kNiahSchemaVersion;
    j["generator_version"] = m.generator_version;
    j["seed"] = m.seed;
    j["config"] = {
        {"lengths", m.config.lengths},
        {"cases_per_length", m.config.cases_per_length},
        {"needle_min", m.config.needle_min},
        {"needle_max", m.config.needle_max},
    };
    auto cases = nlohmann::ordered_json::array();
    for (const auto & c : m.cases) {
        nlohmann::ordered_json jc;
        jc["case_id"] = c.case_id;
        jc["haystack_source"] = c.haystack_source;
        jc["needle_source"] = c.needle_source;
        jc["haystack_len"] = c.haystack_len;
        jc["needle_len"] = c.needle_len;
        jc["needle_offset"] = c.needle_offset;
        jc["insert_index"] = c.insert_index;
        jc["depth"] = c.depth;
        jc["query_id"] = c.query_id;
        jc["answer_key"] = c.answer_key;
        if (!c.question_type.empty()) {
            jc["question_type"] = c.question_type;
        }
        cases.push_back(std::move(jc));
    }
    j["cases"] = std::move(cases);
    return j;
}

NiahManifest manifest_from_json(const nlohmann::json & j) {
    try {
        if (j.at("schema").get<std::string>() != kNiahSchema) {
            throw Error(ErrorCode::InvalidArgument, "not a NIAH manifest");
        }
        if (j.at("schema_version").get<int>() != kNiahSchemaVersion) {
            throw Error(ErrorCode::VersionUnsupported, "manifest schema version " +
                                                           std::to_string(j.at("schema_version").get<int>()));
        }
        NiahManifest m;
        m.generator_version = j.at("generator_version").get<std::string>();
        m.seed = j.at("seed").get<uint64_t>();
        const auto & cfg = j.at("config");
        m.config.lengths = cfg.at("lengths").get<std::vector<uint32_t>>();
        m.config.cases_per_length = cfg.at("cases_per_length").get<uint32_t>();
        m.config.needle_min = cfg.at("needle_min").get<uint32_t>();
        m.config.needle_max = cfg.at("needle_max").get<uint32_t>();
        std::unordered_set<std::string> ids;
        for (const auto & jc : j.at("cases")) {
            NiahCase c;
            c.case_id = jc.at("case_id").get<std::string>();
            c.haystack_source = jc.at("haystack_source").get<std::string>();
            c.needle_source = jc.at("needle_source").get<std::string>();
            c.haystack_len = jc.at("haystack_len").get<uint32_t>();
            c.needle_len = jc.at("needle_len").get<uint32_t>();
            c.needle_offset = jc.value("needle_offset", 0u);
            c.insert_index = jc.at("insert_index").get<uint32_t>();
            c.depth = jc.at("depth").get<double>();
            c.query_id = jc.value("query_id", std::string());
            c.answer_key = jc.value("answer_key", std::string());
            c.question_type = jc.value("question_type", std::string());
            if (c.needle_len > c.haystack_len || c.insert_index > c.haystack_len - c.needle_len) {
                throw Error(ErrorCode::InvalidArgument, "case " + c.case_id + " violates the insert range");
            }
            if (!ids.insert(c.case_id).second) {
                throw Error(ErrorCode::InvalidArgument, "duplicate case_id " + c.case_id);
            }
            m.cases.push_back(std::move(c));
        }
        return m;
    } catch (const nlohmann::json::exception & e) {
        throw Error(ErrorCode::InvalidArgument, std::string("malformed manifest: ") + e.what());
    }
}

std::string serialize_manifest(const NiahManifest & manifest) { return manifest_to_json(manifest).dump(2) + "\n"; }

namespace {

nlohmann::json read_json(const fs::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception & e) {
        throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
    }
}

} // namespace

NiahManifest read_manifest(const fs::path & path) { return manifest_from_json(read_json(path)); }

std::vector<CatalogEntry> read_catalog(const fs::path & path) {
    const auto j = read_json(path);
    const auto & arr = j.is_array() ? j : j.at("videos");
    std::vector<CatalogEntry> out;
    try {
        for (const auto & e : arr) {
            CatalogEntry c;
            c.video_id = e.at("video_id").get<std::string>();
            c.length = e.at("length").get<uint32_t>();
            c.query_id = e.value("query_id", std::string());
            c.answer_key = e.value("answer_key", std::string());
            c.question_type = e.value("question_type", std::string());
            out.push_back(std::move(c));
        }
    } catch (const nlohmann::json::exception & e) {
        throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// splicing

namespace {

class SplicedPatchSource final : public PatchSource {
public:
    SplicedPatchSource(std::unique_ptr<PatchSource> hay, std::unique_ptr<PatchSource> needle,
                       std::vector<FrameOrigin> map, uint32_t needle_offset)
        : hay_(std::move(hay)), needle_(std::move(needle)), map_(std::move(map)), skip_(needle_offset) {}

    std::optional<PatchGrid> next() override {
        if (pos_ >= map_.size()) {
            return std::nullopt;
        }
        const auto & origin = map_[pos_];
        std::optional<PatchGrid> g;
        if (origin.from_needle) {
            for (; skip_ > 0; --skip_) {
                needle_->next();
            }
            g = needle_->next();
        } else {
            g = hay_->next();
        }
        if (!g) {
            throw Error(ErrorCode::StreamExhausted, "splice source ran out at output frame " + std::to_string(pos_));
        }
        g->frame_index = uint32_t(pos_++);
        return g;
    }

private:
    std::unique_ptr<PatchSource> hay_;
    std::unique_ptr<PatchSource> needle_;
    std::vector<FrameOrigin>     map_;
    uint32_t                     skip_;
    size_t                       pos_ = 0;
};

class SplicedPatchProvider final : public PatchProvider {
public:
    SplicedPatchProvider(std::shared_ptr<const PatchProvider> hay, std::shared_ptr<const PatchProvider> needle,
                         std::vector<FrameOrigin> map, uint32_t needle_offset)
        : hay_(std::move(hay)), needle_(std::move(needle)), map_(std::move(map)), offset_(needle_offset) {}

    std::unique_ptr<PatchSource> open() const override {
        return std::make_unique<SplicedPatchSource>(hay_->open(), needle_->open(), map_, offset_);
    }
    uint32_t n_frames() const override { return uint32_t(map_.size()); }
    uint32_t patches_per_frame() const override { return hay_->patches_per_frame(); }
    uint32_t dim() const override { return hay_->dim(); }

private:
    std::shared_ptr<const PatchProvider> hay_;
    std::shared_ptr<const PatchProvider> needle_;
    std::vector<FrameOrigin>             map_;
    uint32_t                             offset_;
};

} // namespace

SpliceResult splice_embeddings(const VideoEmbeddingSet & haystack, const VideoEmbeddingSet & needle,
                               const NiahCase & c) {
    if (c.needle_len > c.haystack_len) {
        throw Error(ErrorCode::SourceTooShort, "needle of " + std::to_string(c.needle_len) +
                                                   " frames does not fit a haystack of " +
                                                   std::to_string(c.haystack_len));
    }
    if (c.insert_index > c.haystack_len - c.needle_len) {
        throw Error(ErrorCode::InvalidArgument, "insert_index out of range for case " + c.case_id);
    }
    if (haystack.n_frames() < c.haystack_len) {
        throw Error(ErrorCode::SourceTooShort, "haystack " + haystack.video_id + " has " +
                                                   std::to_string(haystack.n_frames()) + " frames, case needs " +
                                                   std::to_string(c.haystack_len));
    }
    if (uint64_t(needle.n_frames()) < uint64_t(c.needle_offset) + c.needle_len) {
        throw Error(ErrorCode::SourceTooShort, "needle " + needle.video_id + " has " +
                                                   std::to_string(needle.n_frames()) + " frames, case needs " +
                                                   std::to_string(c.needle_offset + c.needle_len));
    }
    if (haystack.frame_dim() != needle.frame_dim()) {
        throw Error(ErrorCode::DimensionMismatch, "frame embedding dimensions differ between haystack and needle");
    }
    if (bool(haystack.patches) != bool(needle.patches)) {
        throw Error(ErrorCode::DimensionMismatch, "only one of haystack and needle carries patch grids");
    }
    if (haystack.patches && (haystack.patches->dim() != needle.patches->dim() ||
                             haystack.patches->patches_per_frame() != needle.patches->patches_per_frame())) {
        throw Error(ErrorCode::DimensionMismatch, "patch grid shapes differ between haystack and needle");
    }

    SpliceResult out;
    out.video.video_id = c.case_id;
    out.video.fps = haystack.fps;
    out.needle_begin = c.insert_index;
    out.needle_end = c.insert_index + c.needle_len;
    out.index_map.reserve(c.haystack_len);
    out.video.frames.reserve(c.haystack_len);

    uint32_t hay_pos = 0;
    for (uint32_t o = 0; o < c.haystack_len; ++o) {
        FrameOrigin origin;
        if (o >= out.needle_begin && o < out.needle_end) {
            origin = {true, c.needle_offset + (o - out.needle_begin)};
        } else {
            origin = {false, hay_pos++};
        }
        const auto & src = origin.from_needle ? needle.frames[origin.source_index] : haystack.frames[origin.source_index];
        out.video.frames.push_back(FrameEmbedding{o, src.vector});
        out.index_map.push_back(origin);
    }
    if (haystack.patches) {
        out.video.patches =
            std::make_shared<SplicedPatchProvider>(haystack.patches, needle.patches, out.index_map, c.needle_offset);
    }
    return out;
}

nlohmann::ordered_json index_map_to_json(const SpliceResult & splice, const NiahCase & c) {
    nlohmann::ordered_json j;
    j["case_id"] = c.case_id;
    j["haystack_source"] = c.haystack_source;
    j["needle_source"] = c.needle_source;
    j["needle_span"] = {splice.needle_begin, splice.needle_end};
    auto frames = nlohmann::ordered_json::array();
    for (const auto & o : splice.index_map) {
        frames.push_back({o.from_needle ? "needle" : "haystack", o.source_index});
    }
    j["frames"] = std::move(frames);
    return j;
}

// ---------------------------------------------------------------------------
// scoring

uint32_t depth_bucket(const NiahCase & c, uint32_t buckets) {
    if (c.haystack_len == c.needle_len) {
        return 0;
    }
    const uint64_t span = c.haystack_len - c.needle_len;
    const uint64_t b = uint64_t(c.insert_index) * buckets / span;
    return uint32_t(std::min<uint64_t>(b, buckets - 1));
}

const ScoreCell & ScoreGrid::at(uint32_t length, uint32_t bucket) const {
    for (const auto & cell : cells) {
        if (cell.length == length && cell.bucket == bucket) {
            return cell;
        }
    }
    throw Error(ErrorCode::InvalidArgument, "no cell for length " + std::to_string(length));
}

Predictions read_predictions(const fs::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    }
    Predictions out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            const auto id = j.at("case_id").get<std::string>();
            if (!out.emplace(id, j.at("answer").get<std::string>()).second) {
                throw Error(ErrorCode::InvalidArgument, path.string() + ":" + std::to_string(line_no) +
                                                            ": duplicate prediction for " + id);
            }
        } catch (const nlohmann::json::exception & e) {
            throw Error(ErrorCode::InvalidArgument, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

namespace {

std::string trimmed(const std::string & s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

ScoreGrid score(const NiahManifest & manifest, const Predictions & predictions, uint32_t buckets, bool strict) {
    if (buckets == 0) {
        throw Error(ErrorCode::InvalidArgument, "buckets must be >= 1");
    }
    std::map<std::string, const NiahCase *> by_id;
    for (const auto & c : manifest.cases) {
        by_id[c.case_id] = &c;
    }
    for (const auto & [id, answer] : predictions) {
        if (!by_id.count(id)) {
            throw Error(ErrorCode::UnknownCaseId, "prediction for unknown case " + id);
        }
    }

    // row order: configured lengths, then any other lengths present, ascending
    std::vector<uint32_t> lengths = manifest.config.lengths;
    std::set<uint32_t> extra;
    for (const auto & c : manifest.cases) {
        if (std::find(lengths.begin(), lengths.end(), c.haystack_len) == lengths.end()) {
            extra.insert(c.haystack_len);
        }
    }
    lengths.insert(lengths.end(), extra.begin(), extra.end());

    ScoreGrid grid;
    grid.buckets = buckets;
    std::map<std::pair<uint32_t, uint32_t>, size_t> slot;
    for (uint32_t len : lengths) {
        for (uint32_t b = 0; b < buckets; ++b) {
            slot[{len, b}] = grid.cells.size();
            grid.cells.push_back({len, b, double(b) / buckets, double(b + 1) / buckets, 0, 0, std::nullopt});
        }
    }

    for (const auto & c : manifest.cases) {
        auto & cell = grid.cells[slot.at({c.haystack_len, depth_bucket(c, buckets)})];
        auto it = predictions.find(c.case_id);
        if (it == predictions.end()) {
            ++grid.missing;
            if (strict) {
                ++cell.total;
            }
            continue;
        }
        ++cell.total;
        if (trimmed(it->second) == trimmed(c.answer_key)) {
            ++cell.correct;
        }
    }
    for (auto & cell : grid.cells) {
        if (cell.total > 0) {
            cell.accuracy = double(cell.correct) / double(cell.total);
        }
    }
    return grid;
}

} // namespace vdistill
