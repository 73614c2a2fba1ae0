#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vdistill {

// unit-norm tolerance applied to every stored embedding vector
inline constexpr double kNormTolerance = 1e-4;

// float32 storage, float64 accumulation
double dot(std::span<const float> a, std::span<const float> b);
double squared_norm(std::span<const float> a);
double l2_norm(std::span<const float> a);

// cos(a, b) = <a,b> / sqrt(|a|^2 |b|^2). Equals the plain dot product for unit
// vectors up to rounding, and is exactly 1.0 for bitwise-identical inputs.
double cosine(std::span<const float> a, std::span<const float> b);

bool is_unit(std::span<const float> a);

// In-place L2 normalization. Returns false (and leaves v untouched) on a zero vector.
bool normalize(std::span<float> v);

struct FrameEmbedding {
    uint32_t           frame_index = 0;
    std::vector<float> vector;
};

// M patch vectors of dimension d, row-major.
struct PatchGrid {
    uint32_t           frame_index = 0;
    uint32_t           m           = 0;
    uint32_t           d           = 0;
    std::vector<float> data;

    std::span<const float> patch(uint32_t i) const {
        return std::span<const float>(data).subspan(size_t(i) * d, d);
    }
    std::span<float> patch(uint32_t i) {
        return std::span<float>(data).subspan(size_t(i) * d, d);
    }
};

struct QueryEmbedding {
    std::vector<float> frame_space;
    std::vector<float> patch_space;
};

// One sequential, in-order pass over the patch grids of a video.
class PatchSource {
public:
    virtual ~PatchSource() = default;
    // nullopt once the stream is exhausted
    virtual std::optional<PatchGrid> next() = 0;
};

// Factory for independent PatchSource handles. Concurrent consumers must each
// open their own source.
class PatchProvider {
public:
    virtual ~PatchProvider() = default;
    virtual std::unique_ptr<PatchSource> open() const = 0;
    virtual uint32_t n_frames() const = 0;
    virtual uint32_t patches_per_frame() const = 0;
    virtual uint32_t dim() const = 0;
};

class InMemoryPatchProvider final : public PatchProvider {
public:
    explicit InMemoryPatchProvider(std::vector<PatchGrid> grids);

    std::unique_ptr<PatchSource> open() const override;
    uint32_t n_frames() const override { return uint32_t(grids_->size()); }
    uint32_t patches_per_frame() const override { return m_; }
    uint32_t dim() const override { return d_; }

    const std::vector<PatchGrid> & grids() const { return *grids_; }

private:
    std::shared_ptr<const std::vector<PatchGrid>> grids_;
    uint32_t m_ = 0;
    uint32_t d_ = 0;
};

// Grids computed on demand, one at a time; nothing is retained between calls.
class GeneratedPatchProvider final : public PatchProvider {
public:
    using Generator = std::function<PatchGrid(uint32_t frame_index)>;

    GeneratedPatchProvider(uint32_t n, uint32_t m, uint32_t d, Generator gen);

    std::unique_ptr<PatchSource> open() const override;
    uint32_t n_frames() const override { return n_; }
    uint32_t patches_per_frame() const override { return m_; }
    uint32_t dim() const override { return d_; }

private:
    uint32_t  n_, m_, d_;
    Generator gen_;
};

struct VideoEmbeddingSet {
    std::string                          video_id;
    double                               fps = 1.0;
    std::vector<FrameEmbedding>          frames;
    std::shared_ptr<const PatchProvider> patches; // may be null when only frame embeddings exist

    uint32_t n_frames() const { return uint32_t(frames.size()); }
    uint32_t frame_dim() const { return frames.empty() ? 0 : uint32_t(frames.front().vector.size()); }
};

// Per-frame, per-patch attention mass, already averaged over query tokens,
// layers and heads by whatever produced the dump.
struct AttentionDump {
    std::string         video_id;
    uint32_t            n = 0;
    uint32_t            m = 0;
    std::vector<double> weights; // n*m, frame-major

    double at(uint32_t frame, uint32_t patch) const { return weights[size_t(frame) * m + patch]; }
    double total_mass() const;
};

// Unvalidated token vectors (merged tokens are convex combinations, not unit vectors).
struct TokenMatrix {
    uint32_t           n = 0;
    uint32_t           d = 0;
    std::vector<float> data;
};

struct Violation {
    enum class Kind { NormViolation, IndexGap, DimensionMismatch, PatchCountMismatch, RangeViolation, MassViolation };

    Kind        kind;
    std::string field;
    size_t      index    = 0;
    double      observed = 0.0;
};

std::string_view violation_kind_name(Violation::Kind kind);

std::vector<Violation> validate(const VideoEmbeddingSet & video);
std::vector<Violation> validate(std::span<const PatchGrid> grids);
std::vector<Violation> validate(const QueryEmbedding & query);
std::vector<Violation> validate(const AttentionDump & dump, double mass_epsilon = 1e-3);

// Reads every grid of a provider into memory.
std::vector<PatchGrid> materialize(const PatchProvider & provider);

} // namespace vdistill
