#pragma once

// Binary tensor files:
//
//   magic "VLMP" (4) | version u32 | kind u8 | pad (3) | n u32 | m u32 | d u32 | payload
//
// payload is n*m*d float32, little-endian, frame-major then patch then dimension.
// All integers are little-endian. The header is 24 bytes.

#include "vdistill/embedding.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>

namespace vdistill {

inline constexpr std::array<char, 4> kTensorMagic   = {'V', 'L', 'M', 'P'};
inline constexpr uint32_t            kTensorVersion = 1;
inline constexpr size_t              kHeaderBytes   = 24;

enum class TensorKind : uint8_t {
    FrameSet  = 0,
    PatchSet  = 1,
    Query     = 2,
    Attention = 3,
    Tokens    = 4, // merged-token output; exempt from the unit-norm rule
};

std::string_view tensor_kind_name(TensorKind kind);

struct TensorFileHeader {
    std::array<char, 4> magic   = kTensorMagic;
    uint32_t            version = kTensorVersion;
    TensorKind          kind    = TensorKind::FrameSet;
    uint32_t            n       = 0;
    uint32_t            m       = 1;
    uint32_t            d       = 0;

    uint64_t payload_bytes() const { return uint64_t(n) * m * d * 4; }
};

struct LoadOptions {
    // false: structural checks only (header, sizes); content invariants are left to validate()
    bool   check                = true;
    // explicit L2 renormalization of every stored vector; zero vectors are still rejected
    bool   renormalize          = false;
    double attention_mass_epsilon = 1e-3;
    // downgrade attention mass violations to a warning on stderr
    bool   lenient_attention_mass = false;
};

struct PatchSet {
    std::vector<PatchGrid> grids;
};

using TensorContent = std::variant<VideoEmbeddingSet, PatchSet, QueryEmbedding, AttentionDump, TokenMatrix>;

std::array<uint8_t, kHeaderBytes> encode_header(const TensorFileHeader & header);
TensorFileHeader                  decode_header(std::span<const uint8_t> bytes);

TensorFileHeader read_header(const std::filesystem::path & path);

// Fully validated load. FrameSet files yield a VideoEmbeddingSet without patches
// (video_id taken from the file stem).
TensorContent load_tensor_file(const std::filesystem::path & path, const LoadOptions & opts = {});

VideoEmbeddingSet load_frame_set(const std::filesystem::path & path, const LoadOptions & opts = {});
std::vector<PatchGrid> load_patch_set(const std::filesystem::path & path, const LoadOptions & opts = {});
AttentionDump load_attention(const std::filesystem::path & path, const LoadOptions & opts = {});
TokenMatrix load_tokens(const std::filesystem::path & path);

// A two-row query file carries (frame_space, patch_space). A one-row file is
// used for both spaces.
QueryEmbedding load_query(const std::filesystem::path & path, const LoadOptions & opts = {});
// Two one-row query files, for encoders with different frame and patch dimensions.
QueryEmbedding load_query_pair(const std::filesystem::path & frame_path, const std::filesystem::path & patch_path,
                               const LoadOptions & opts = {});

void write_tensor_file(const VideoEmbeddingSet & video, const std::filesystem::path & path); // frames only
void write_tensor_file(std::span<const PatchGrid> grids, const std::filesystem::path & path);
// streams one grid at a time
void write_tensor_file(const PatchProvider & provider, const std::filesystem::path & path);
void write_tensor_file(const QueryEmbedding & query, const std::filesystem::path & path);
void write_tensor_file(const AttentionDump & dump, const std::filesystem::path & path);
void write_tensor_file(const TokenMatrix & tokens, const std::filesystem::path & path);
// one-row QUERY file
void write_query_row(std::span<const float> row, const std::filesystem::path & path);

// Streams grids out of a PATCH_SET file without holding more than one grid.
class FilePatchProvider final : public PatchProvider {
public:
    explicit FilePatchProvider(std::filesystem::path path, bool renormalize = false);

    std::unique_ptr<PatchSource> open() const override;
    uint32_t n_frames() const override { return header_.n; }
    uint32_t patches_per_frame() const override { return header_.m; }
    uint32_t dim() const override { return header_.d; }

private:
    std::filesystem::path path_;
    TensorFileHeader      header_;
    bool                  renormalize_;
};

// JSON sidecar: {video_id, fps, frame_file, patch_file, n_frames}.
// Relative file paths resolve against the sidecar's directory.
struct VideoManifest {
    std::string video_id;
    double      fps = 1.0;
    std::string frame_file;
    std::string patch_file; // empty when the video has no patch grids
    uint32_t    n_frames = 0;
};

VideoManifest read_video_manifest(const std::filesystem::path & path);
void write_video_manifest(const VideoManifest & manifest, const std::filesystem::path & path);

// Loads frame embeddings eagerly and binds patches lazily. The patch file is
// validated with one streaming pass unless renormalization is requested.
VideoEmbeddingSet load_video(const std::filesystem::path & manifest_path, const LoadOptions & opts = {});

} // namespace vdistill
