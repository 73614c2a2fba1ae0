#pragma once

// JSON and CSV forms of the artifacts the CLI emits. Every artifact carries a
// `meta` object (or `# ` comment lines for CSV) naming the tool version, the
// resolved configuration and the SHA-256 of each input file.

#include "vdistill/niah.hpp"
#include "vdistill/pipeline.hpp"
#include "vdistill/profiler.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace vdistill {

std::string_view tool_version();

// lowercase hex SHA-256 of a file's bytes
std::string sha256_file(const std::filesystem::path & path);
std::string sha256_bytes(std::string_view bytes);

struct ArtifactMeta {
    std::string            command;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    // (role, path); digests are computed when the meta is rendered
    std::vector<std::pair<std::string, std::filesystem::path>> inputs;
};

nlohmann::ordered_json meta_to_json(const ArtifactMeta & meta);
// "# key: value" lines, one per config entry and input
std::string meta_to_csv_comments(const ArtifactMeta & meta);

nlohmann::ordered_json config_to_json(const DistillConfig & cfg);
nlohmann::ordered_json selection_to_json(const KeyframeSelection & sel);
nlohmann::ordered_json budget_to_json(const BudgetReport & report);

// two decimals and a percent sign: 0.749 -> "74.90%"
std::string format_percent(double ratio);

struct SequenceJsonOptions {
    // merged vectors are written inline unless a TOKENS file holds them
    bool inline_tokens = true;
    // keyframe grids are large; by default only their frame index is written
    bool inline_keyframe_patches = false;
};

nlohmann::ordered_json sequence_to_json(const DistilledSequence & seq, const DistillConfig & cfg,
                                        const SequenceJsonOptions & opts = {});

// merged tokens in item order, float32 rows
TokenMatrix merged_tokens(const DistilledSequence & seq);

// frame_index,patch,weight
std::string weights_csv(const DistilledSequence & seq);

// tau,alpha,n_videos,mean_keyframes,mean_reduction,score
std::string sweep_csv(std::span<const SweepRow> rows);

// percentile,cumulative_mass,mean_similarity
std::string profile_csv(std::span<const double> curve, const BucketMeans & similarity);

// length,bucket_lo,bucket_hi,correct,total,accuracy
std::string score_csv(const ScoreGrid & grid);

// shortest round-tripping decimal for a double
std::string format_double(double v);

} // namespace vdistill
