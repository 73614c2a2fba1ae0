#pragma once

// Needle-in-a-haystack benchmark fabric for long videos: reproducible splice
// manifests, embedding-level splicing, and depth x length scoring.

#include "vdistill/embedding.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vdistill {

inline constexpr const char * kNiahGeneratorVersion = "1";
inline constexpr const char * kNiahSchema = "vdistill.niah-manifest";
inline constexpr int kNiahSchemaVersion = 1;

// A video available as haystack or needle. Entries with a query_id can serve
// as needles; the question itself lives in an external catalog.
struct CatalogEntry {
    std::string video_id;
    uint32_t    length = 0; // frames at 1 FPS
    std::string query_id;
    std::string answer_key;
    std::string question_type;
};

struct NiahConfig {
    std::vector<uint32_t> lengths          = {2000, 4000, 6000, 8000, 10000};
    uint32_t              cases_per_length = 600;
    uint32_t              needle_min       = 30;
    uint32_t              needle_max       = 120;
};

struct NiahCase {
    std::string case_id;
    std::string haystack_source;
    std::string needle_source;
    uint32_t    haystack_len  = 0;
    uint32_t    needle_len    = 0;
    uint32_t    needle_offset = 0; // first frame of the clip within the needle source
    uint32_t    insert_index  = 0;
    double      depth         = 0.0;
    std::string query_id;
    std::string answer_key;
    std::string question_type;
};

struct NiahManifest {
    std::vector<NiahCase> cases;
    uint64_t              seed = 0;
    std::string           generator_version = kNiahGeneratorVersion;
    NiahConfig            config;
};

// insert_index / (haystack_len - needle_len), 0 when the needle fills the haystack
double niah_depth(uint32_t insert_index, uint32_t haystack_len, uint32_t needle_len);

// Deterministic for a given (catalog, cfg, seed). Cases are generated length by
// length in cfg order; per case the SplitMix64 stream is consumed as
//   needle      = candidates[uniform_int(0, size - 1)]   (within the round-robin type when labels exist)
//   needle_len  = uniform_int(needle_min, min(needle_max, needle.length, haystack_len))
//   offset      = uniform_int(0, needle.length - needle_len)
//   haystack    = candidates[uniform_int(0, size - 1)]   (sources of length >= haystack_len, other than the needle when possible)
//   insert      = uniform_int(0, haystack_len - needle_len)
NiahManifest build_manifest(std::span<const CatalogEntry> catalog, const NiahConfig & cfg, uint64_t seed);

nlohmann::ordered_json manifest_to_json(const NiahManifest & manifest);
NiahManifest manifest_from_json(const nlohmann::json & j);
std::string serialize_manifest(const NiahManifest & manifest);

NiahManifest read_manifest(const std::filesystem::path & path);
std::vector<CatalogEntry> read_catalog(const std::filesystem::path & path);

struct FrameOrigin {
    bool     from_needle  = false;
    uint32_t source_index = 0;
};

struct SpliceResult {
    VideoEmbeddingSet        video;
    std::vector<FrameOrigin> index_map; // one per output frame
    uint32_t                 needle_begin = 0;
    uint32_t                 needle_end   = 0; // exclusive
};

// Output has exactly haystack_len frames:
//   haystack[0, insert) ++ needle[offset, offset + needle_len) ++ haystack[insert, haystack_len - needle_len)
// Patch grids, when both inputs carry them, are spliced lazily in the same order.
SpliceResult splice_embeddings(const VideoEmbeddingSet & haystack, const VideoEmbeddingSet & needle,
                               const NiahCase & c);

nlohmann::ordered_json index_map_to_json(const SpliceResult & splice, const NiahCase & c);

struct ScoreCell {
    uint32_t              length  = 0;
    uint32_t              bucket  = 0;
    double                lo      = 0.0;
    double                hi      = 0.0;
    uint64_t              correct = 0;
    uint64_t              total   = 0;
    std::optional<double> accuracy; // empty cells carry no accuracy
};

struct ScoreGrid {
    uint32_t               buckets = 10;
    std::vector<ScoreCell> cells; // lengths (manifest order) x buckets
    size_t                 missing = 0; // cases without a prediction

    const ScoreCell & at(uint32_t length, uint32_t bucket) const;
};

// Bucket b covers depth in [b/B, (b+1)/B); the last bucket is closed. Computed
// in integer arithmetic from insert_index.
uint32_t depth_bucket(const NiahCase & c, uint32_t buckets);

using Predictions = std::map<std::string, std::string>;

// JSON lines: {"case_id": ..., "answer": ...}
Predictions read_predictions(const std::filesystem::path & path);

// A prediction is correct when it equals the answer key after trimming
// surrounding whitespace. Missing predictions count as incorrect only when
// strict; otherwise they are excluded and counted in `missing`.
ScoreGrid score(const NiahManifest & manifest, const Predictions & predictions, uint32_t buckets = 10,
                bool strict = false);

} // namespace vdistill
