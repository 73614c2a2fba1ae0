#include "vdistill/embedding.hpp"

#include "vdistill/error.hpp"

#include <cmath>

namespace vdistill {

double dot(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::DimensionMismatch,
                    "dot of vectors with dimension " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    }
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        acc += double(a[i]) * double(b[i]);
    }
    return acc;
}

double squared_norm(std::span<const float> a) {
    double acc = 0.0;
    for (float x : a) {
        acc += double(x) * double(x);
    }
    return acc;
}

double l2_norm(std::span<const float> a) { return std::sqrt(squared_norm(a)); }

double cosine(std::span<const float> a, std::span<const float> b) {
    const double ab = dot(a, b);
    const double denom = std::sqrt(squared_norm(a) * squared_norm(b));
    if (denom == 0.0) {
        throw Error(ErrorCode::NormViolation, "cosine of a zero vector is undefined");
    }
    return ab / denom;
}

bool is_unit(std::span<const float> a) {
    return std::fabs(l2_norm(a) - 1.0) <= kNormTolerance;
}

bool normalize(std::span<float> v) {
    const double norm = l2_norm(v);
    if (norm == 0.0) {
        return false;
    }
    for (float & x : v) {
        x = float(double(x) / norm);
    }
    return true;
}

double AttentionDump::total_mass() const {
    double acc = 0.0;
    for (double w : weights) {
        acc += w;
    }
    return acc;
}

namespace {

class VectorPatchSource final : public PatchSource {
public:
    explicit VectorPatchSource(std::shared_ptr<const std::vector<PatchGrid>> grids) : grids_(std::move(grids)) {}

    std::optional<PatchGrid> next() override {
        if (pos_ >= grids_->size()) {
            return std::nullopt;
        }
        return (*grids_)[pos_++];
    }

private:
    std::shared_ptr<const std::vector<PatchGrid>> grids_;
    size_t pos_ = 0;
};

class GeneratorPatchSource final : public PatchSource {
public:
    GeneratorPatchSource(uint32_t n, GeneratedPatchProvider::Generator gen) : n_(n), gen_(std::move(gen)) {}

    std::optional<PatchGrid> next() override {
        if (pos_ >= n_) {
            return std::nullopt;
        }
        return gen_(pos_++);
    }

private:
    uint32_t n_;
    uint32_t pos_ = 0;
    GeneratedPatchProvider::Generator gen_;
};

} // namespace

InMemoryPatchProvider::InMemoryPatchProvider(std::vector<PatchGrid> grids)
    : grids_(std::make_shared<const std::vector<PatchGrid>>(std::move(grids))) {
    if (!grids_->empty()) {
        m_ = grids_->front().m;
        d_ = grids_->front().d;
    }
}

std::unique_ptr<PatchSource> InMemoryPatchProvider::open() const {
    return std::make_unique<VectorPatchSource>(grids_);
}

GeneratedPatchProvider::GeneratedPatchProvider(uint32_t n, uint32_t m, uint32_t d, Generator gen)
    : n_(n), m_(m), d_(d), gen_(std::move(gen)) {}

std::unique_ptr<PatchSource> GeneratedPatchProvider::open() const {
    return std::make_unique<GeneratorPatchSource>(n_, gen_);
}

std::vector<PatchGrid> materialize(const PatchProvider & provider) {
    std::vector<PatchGrid> out;
    out.reserve(provider.n_frames());
    auto src = provider.open();
    while (auto grid = src->next()) {
        out.push_back(std::move(*grid));
    }
    return out;
}

std::string_view violation_kind_name(Violation::Kind kind) {
    switch (kind) {
        case Violation::Kind::NormViolation:      return "NormViolation";
        case Violation::Kind::IndexGap:           return "IndexGap";
        case Violation::Kind::DimensionMismatch:  return "DimensionMismatch";
        case Violation::Kind::PatchCountMismatch: return "PatchCountMismatch";
        case Violation::Kind::RangeViolation:     return "RangeViolation";
        case Violation::Kind::MassViolation:      return "MassViolation";
    }
    return "Unknown";
}

namespace {

void check_unit(std::vector<Violation> & out, const std::string & field, size_t index, std::span<const float> v) {
    const double norm = l2_norm(v);
    if (!(std::fabs(norm - 1.0) <= kNormTolerance)) {
        out.push_back({Violation::Kind::NormViolation, field, index, norm});
    }
}

struct GridScan {
    std::vector<Violation> & out;
    uint32_t m = 0;
    uint32_t d = 0;
    size_t   count = 0;

    void visit(const PatchGrid & grid) {
        const size_t i = count++;
        if (i == 0) {
            m = grid.m;
            d = grid.d;
            if (m == 0) {
                out.push_back({Violation::Kind::PatchCountMismatch, "patches", i, 0.0});
            }
        }
        if (grid.frame_index != i) {
            out.push_back({Violation::Kind::IndexGap, "patches.frame_index", i, double(grid.frame_index)});
        }
        if (grid.m != m) {
            out.push_back({Violation::Kind::PatchCountMismatch, "patches.m", i, double(grid.m)});
            return;
        }
        if (grid.d != d || grid.data.size() != size_t(grid.m) * grid.d) {
            out.push_back({Violation::Kind::DimensionMismatch, "patches.d", i, double(grid.d)});
            return;
        }
        for (uint32_t p = 0; p < grid.m; ++p) {
            check_unit(out, "patches[" + std::to_string(i) + "]", p, grid.patch(p));
        }
    }
};

} // namespace

std::vector<Violation> validate(const VideoEmbeddingSet & video) {
    std::vector<Violation> out;
    if (video.frames.empty()) {
        out.push_back({Violation::Kind::IndexGap, "frames", 0, 0.0});
        return out;
    }
    if (!(video.fps > 0.0)) {
        out.push_back({Violation::Kind::RangeViolation, "fps", 0, video.fps});
    }
    const size_t d = video.frames.front().vector.size();
    if (d == 0) {
        out.push_back({Violation::Kind::DimensionMismatch, "frames.vector", 0, 0.0});
    }
    for (size_t i = 0; i < video.frames.size(); ++i) {
        const auto & f = video.frames[i];
        if (f.frame_index != i) {
            out.push_back({Violation::Kind::IndexGap, "frames.frame_index", i, double(f.frame_index)});
        }
        if (f.vector.size() != d) {
            out.push_back({Violation::Kind::DimensionMismatch, "frames.vector", i, double(f.vector.size())});
            continue;
        }
        if (d > 0) {
            check_unit(out, "frames.vector", i, f.vector);
        }
    }
    if (video.patches) {
        GridScan scan{out};
        auto src = video.patches->open();
        while (auto grid = src->next()) {
            scan.visit(*grid);
        }
        if (scan.count != video.frames.size()) {
            out.push_back({Violation::Kind::IndexGap, "patches.count", scan.count, double(scan.count)});
        }
    }
    return out;
}

std::vector<Violation> validate(std::span<const PatchGrid> grids) {
    std::vector<Violation> out;
    GridScan scan{out};
    for (const auto & g : grids) {
        scan.visit(g);
    }
    return out;
}

std::vector<Violation> validate(const QueryEmbedding & query) {
    std::vector<Violation> out;
    if (query.frame_space.empty()) {
        out.push_back({Violation::Kind::DimensionMismatch, "query.frame_space", 0, 0.0});
    } else {
        check_unit(out, "query.frame_space", 0, query.frame_space);
    }
    if (query.patch_space.empty()) {
        out.push_back({Violation::Kind::DimensionMismatch, "query.patch_space", 0, 0.0});
    } else {
        check_unit(out, "query.patch_space", 0, query.patch_space);
    }
    return out;
}

std::vector<Violation> validate(const AttentionDump & dump, double mass_epsilon) {
    std::vector<Violation> out;
    if (dump.weights.size() != size_t(dump.n) * dump.m || dump.n == 0 || dump.m == 0) {
        out.push_back({Violation::Kind::DimensionMismatch, "attention.weights", 0, double(dump.weights.size())});
        return out;
    }
    for (size_t i = 0; i < dump.weights.size(); ++i) {
        const double w = dump.weights[i];
        if (!(w >= 0.0 && w <= 1.0)) {
            out.push_back({Violation::Kind::RangeViolation, "attention.weights", i, w});
        }
    }
    const double mass = dump.total_mass();
    if (!(std::fabs(mass - 1.0) <= mass_epsilon)) {
        out.push_back({Violation::Kind::MassViolation, "attention.total_mass", 0, mass});
    }
    return out;
}

} // namespace vdistill
