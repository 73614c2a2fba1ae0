#include "vdistill/tensor_file.hpp"

#include "vdistill/error.hpp"

#include "json.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>

namespace vdistill {

namespace fs = std::filesystem;

std::string_view tensor_kind_name(TensorKind kind) {
    switch (kind) {
        case TensorKind::FrameSet:  return "FRAME_SET";
        case TensorKind::PatchSet:  return "PATCH_SET";
        case TensorKind::Query:     return "QUERY";
        case TensorKind::Attention: return "ATTENTION";
        case TensorKind::Tokens:    return "TOKENS";
    }
    return "UNKNOWN";
}

namespace {

void put_u32(uint8_t * dst, uint32_t v) {
    dst[0] = uint8_t(v);
    dst[1] = uint8_t(v >> 8);
    dst[2] = uint8_t(v >> 16);
    dst[3] = uint8_t(v >> 24);
}

uint32_t get_u32(const uint8_t * src) {
    return uint32_t(src[0]) | (uint32_t(src[1]) << 8) | (uint32_t(src[2]) << 16) | (uint32_t(src[3]) << 24);
}

void floats_to_le(std::span<const float> src, std::vector<uint8_t> & out) {
    const size_t base = out.size();
    out.resize(base + src.size() * 4);
    for (size_t i = 0; i < src.size(); ++i) {
        put_u32(out.data() + base + i * 4, std::bit_cast<uint32_t>(src[i]));
    }
}

void le_to_floats(const uint8_t * src, size_t count, float * dst) {
    for (size_t i = 0; i < count; ++i) {
        dst[i] = std::bit_cast<float>(get_u32(src + i * 4));
    }
}

std::vector<uint8_t> read_all(const fs::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    }
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw Error(ErrorCode::IoFailure, "read failed: " + path.string());
    }
    return bytes;
}

void write_all(const fs::path & path, const std::vector<uint8_t> & bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::IoFailure, "cannot open for writing: " + path.string());
    }
    out.write(reinterpret_cast<const char *>(bytes.data()), std::streamsize(bytes.size()));
    out.flush();
    if (!out) {
        throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
    }
}

TensorFileHeader checked_header(std::span<const uint8_t> bytes, const fs::path & path) {
    TensorFileHeader h = decode_header(bytes);
    const uint64_t actual = bytes.size() - kHeaderBytes;
    if (actual != h.payload_bytes()) {
        throw Error(ErrorCode::SizeMismatch, path.string() + ": header declares " + std::to_string(h.payload_bytes()) +
                                                 " payload bytes, file holds " + std::to_string(actual));
    }
    return h;
}

// Checks (or renormalizes) `count` consecutive rows of width d.
void enforce_unit_rows(std::span<float> data, uint32_t d, bool renormalize, const std::string & what,
                       bool check = true) {
    if (!check && !renormalize) {
        return;
    }
    const size_t rows = d == 0 ? 0 : data.size() / d;
    for (size_t r = 0; r < rows; ++r) {
        auto row = data.subspan(r * d, d);
        const double norm = l2_norm(row);
        if (norm == 0.0) {
            throw Error(ErrorCode::NormViolation, what + " row " + std::to_string(r) + " is a zero vector");
        }
        if (renormalize) {
            normalize(row);
        } else if (!(std::fabs(norm - 1.0) <= kNormTolerance)) {
            throw Error(ErrorCode::NormViolation,
                        what + " row " + std::to_string(r) + " has norm " + std::to_string(norm));
        }
    }
}

void require_kind(const TensorFileHeader & h, TensorKind kind, const fs::path & path) {
    if (h.kind != kind) {
        throw Error(ErrorCode::InvalidArgument, path.string() + ": expected " + std::string(tensor_kind_name(kind)) +
                                                    " file, found " + std::string(tensor_kind_name(h.kind)));
    }
}

std::vector<uint8_t> header_bytes(const TensorFileHeader & h) {
    auto hb = encode_header(h);
    return std::vector<uint8_t>(hb.begin(), hb.end());
}

} // namespace

std::array<uint8_t, kHeaderBytes> encode_header(const TensorFileHeader & header) {
    std::array<uint8_t, kHeaderBytes> out{};
    std::memcpy(out.data(), header.magic.data(), 4);
    put_u32(out.data() + 4, header.version);
    out[8] = uint8_t(header.kind);
    put_u32(out.data() + 12, header.n);
    put_u32(out.data() + 16, header.m);
    put_u32(out.data() + 20, header.d);
    return out;
}

TensorFileHeader decode_header(std::span<const uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kTensorMagic.data(), 4) != 0) {
        throw Error(ErrorCode::BadMagic, "file does not start with \"VLMP\"");
    }
    if (bytes.size() < kHeaderBytes) {
        throw Error(ErrorCode::SizeMismatch, "truncated header");
    }
    TensorFileHeader h;
    h.version = get_u32(bytes.data() + 4);
    if (h.version != kTensorVersion) {
        throw Error(ErrorCode::VersionUnsupported, "version " + std::to_string(h.version));
    }
    const uint8_t kind = bytes[8];
    if (kind > uint8_t(TensorKind::Tokens)) {
        throw Error(ErrorCode::InvalidArgument, "unknown tensor kind " + std::to_string(kind));
    }
    h.kind = TensorKind(kind);
    h.n = get_u32(bytes.data() + 12);
    h.m = get_u32(bytes.data() + 16);
    h.d = get_u32(bytes.data() + 20);
    return h;
}

TensorFileHeader read_header(const fs::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    }
    std::array<uint8_t, kHeaderBytes> buf{};
    in.read(reinterpret_cast<char *>(buf.data()), kHeaderBytes);
    return decode_header(std::span<const uint8_t>(buf.data(), size_t(in.gcount())));
}

namespace {

VideoEmbeddingSet frames_from(const TensorFileHeader & h, std::span<const uint8_t> payload, const fs::path & path,
                              const LoadOptions & opts) {
    if (h.m != 1 || h.d == 0 || h.n == 0) {
        throw Error(ErrorCode::DimensionMismatch, path.string() + ": FRAME_SET needs n>=1, m=1, d>=1");
    }
    VideoEmbeddingSet video;
    video.video_id = path.stem().string();
    video.frames.resize(h.n);
    for (uint32_t i = 0; i < h.n; ++i) {
        auto & f = video.frames[i];
        f.frame_index = i;
        f.vector.resize(h.d);
        le_to_floats(payload.data() + size_t(i) * h.d * 4, h.d, f.vector.data());
        enforce_unit_rows(f.vector, h.d, opts.renormalize, "frame " + std::to_string(i) + " (" + path.string() + ")",
                          opts.check);
    }
    return video;
}

std::vector<PatchGrid> grids_from(const TensorFileHeader & h, std::span<const uint8_t> payload,
                                  const fs::path & path, const LoadOptions & opts) {
    if (h.m == 0 || h.d == 0) {
        throw Error(ErrorCode::DimensionMismatch, path.string() + ": PATCH_SET needs m>=1, d>=1");
    }
    std::vector<PatchGrid> grids(h.n);
    const size_t grid_floats = size_t(h.m) * h.d;
    for (uint32_t i = 0; i < h.n; ++i) {
        auto & g = grids[i];
        g.frame_index = i;
        g.m = h.m;
        g.d = h.d;
        g.data.resize(grid_floats);
        le_to_floats(payload.data() + size_t(i) * grid_floats * 4, grid_floats, g.data.data());
        enforce_unit_rows(g.data, h.d, opts.renormalize, "frame " + std::to_string(i) + " patch", opts.check);
    }
    return grids;
}

QueryEmbedding query_from(const TensorFileHeader & h, std::span<const uint8_t> payload, const fs::path & path,
                          const LoadOptions & opts) {
    if ((h.n != 1 && h.n != 2) || h.m != 1 || h.d == 0) {
        throw Error(ErrorCode::DimensionMismatch, path.string() + ": QUERY needs n in {1,2}, m=1, d>=1");
    }
    std::vector<float> rows(size_t(h.n) * h.d);
    le_to_floats(payload.data(), rows.size(), rows.data());
    enforce_unit_rows(rows, h.d, opts.renormalize, "query (" + path.string() + ")", opts.check);
    QueryEmbedding q;
    q.frame_space.assign(rows.begin(), rows.begin() + h.d);
    q.patch_space.assign(rows.end() - h.d, rows.end());
    return q;
}

AttentionDump attention_from(const TensorFileHeader & h, std::span<const uint8_t> payload, const fs::path & path,
                             const LoadOptions & opts) {
    if (h.d != 1 || h.n == 0 || h.m == 0) {
        throw Error(ErrorCode::DimensionMismatch, path.string() + ": ATTENTION needs n>=1, m>=1, d=1");
    }
    AttentionDump dump;
    dump.video_id = path.stem().string();
    dump.n = h.n;
    dump.m = h.m;
    std::vector<float> raw(size_t(h.n) * h.m);
    le_to_floats(payload.data(), raw.size(), raw.data());
    dump.weights.assign(raw.begin(), raw.end());
    if (!opts.check) {
        return dump;
    }
    for (size_t i = 0; i < dump.weights.size(); ++i) {
        const double w = dump.weights[i];
        if (!(w >= 0.0 && w <= 1.0)) {
            throw Error(ErrorCode::NormalizationViolation,
                        path.string() + ": attention weight " + std::to_string(i) + " = " + std::to_string(w));
        }
    }
    const double mass = dump.total_mass();
    if (!(std::fabs(mass - 1.0) <= opts.attention_mass_epsilon)) {
        const std::string msg = path.string() + ": total attention mass " + std::to_string(mass);
        if (!opts.lenient_attention_mass) {
            throw Error(ErrorCode::NormalizationViolation, msg);
        }
        std::cerr << "warning: " << msg << "\n";
    }
    return dump;
}

} // namespace

TensorContent load_tensor_file(const fs::path & path, const LoadOptions & opts) {
    const auto bytes = read_all(path);
    const auto h = checked_header(bytes, path);
    const std::span<const uint8_t> payload(bytes.data() + kHeaderBytes, bytes.size() - kHeaderBytes);
    switch (h.kind) {
        case TensorKind::FrameSet:
            return frames_from(h, payload, path, opts);
        case TensorKind::PatchSet:
            return PatchSet{grids_from(h, payload, path, opts)};
        case TensorKind::Query:
            return query_from(h, payload, path, opts);
        case TensorKind::Attention:
            return attention_from(h, payload, path, opts);
        case TensorKind::Tokens: {
            if (h.m != 1) {
                throw Error(ErrorCode::DimensionMismatch, path.string() + ": TOKENS needs m=1");
            }
            TokenMatrix t{h.n, h.d, std::vector<float>(size_t(h.n) * h.d)};
            le_to_floats(payload.data(), t.data.size(), t.data.data());
            return t;
        }
    }
    throw Error(ErrorCode::InvalidArgument, "unreachable tensor kind");
}

namespace {

template <typename T>
T load_as(const fs::path & path, const LoadOptions & opts, TensorKind kind) {
    require_kind(read_header(path), kind, path);
    return std::get<T>(load_tensor_file(path, opts));
}

} // namespace

VideoEmbeddingSet load_frame_set(const fs::path & path, const LoadOptions & opts) {
    return load_as<VideoEmbeddingSet>(path, opts, TensorKind::FrameSet);
}

std::vector<PatchGrid> load_patch_set(const fs::path & path, const LoadOptions & opts) {
    return load_as<PatchSet>(path, opts, TensorKind::PatchSet).grids;
}

AttentionDump load_attention(const fs::path & path, const LoadOptions & opts) {
    return load_as<AttentionDump>(path, opts, TensorKind::Attention);
}

TokenMatrix load_tokens(const fs::path & path) { return load_as<TokenMatrix>(path, {}, TensorKind::Tokens); }

QueryEmbedding load_query(const fs::path & path, const LoadOptions & opts) {
    return load_as<QueryEmbedding>(path, opts, TensorKind::Query);
}

QueryEmbedding load_query_pair(const fs::path & frame_path, const fs::path & patch_path, const LoadOptions & opts) {
    QueryEmbedding fq = load_query(frame_path, opts);
    QueryEmbedding pq = load_query(patch_path, opts);
    return QueryEmbedding{std::move(fq.frame_space), std::move(pq.patch_space)};
}

void write_tensor_file(const VideoEmbeddingSet & video, const fs::path & path) {
    const uint32_t d = video.frame_dim();
    std::vector<uint8_t> bytes = header_bytes({kTensorMagic, kTensorVersion, TensorKind::FrameSet, video.n_frames(), 1, d});
    for (const auto & f : video.frames) {
        if (f.vector.size() != d) {
            throw Error(ErrorCode::DimensionMismatch, "frame " + std::to_string(f.frame_index));
        }
        floats_to_le(f.vector, bytes);
    }
    write_all(path, bytes);
}

void write_tensor_file(std::span<const PatchGrid> grids, const fs::path & path) {
    const uint32_t m = grids.empty() ? 1 : grids.front().m;
    const uint32_t d = grids.empty() ? 1 : grids.front().d;
    std::vector<uint8_t> bytes = header_bytes({kTensorMagic, kTensorVersion, TensorKind::PatchSet, uint32_t(grids.size()), m, d});
    for (const auto & g : grids) {
        if (g.m != m || g.d != d || g.data.size() != size_t(m) * d) {
            throw Error(ErrorCode::PatchCountMismatch, "grid " + std::to_string(g.frame_index));
        }
        floats_to_le(g.data, bytes);
    }
    write_all(path, bytes);
}

void write_tensor_file(const PatchProvider & provider, const fs::path & path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::IoFailure, "cannot open for writing: " + path.string());
    }
    const uint32_t m = provider.patches_per_frame();
    const uint32_t d = provider.dim();
    std::vector<uint8_t> bytes = header_bytes({kTensorMagic, kTensorVersion, TensorKind::PatchSet, provider.n_frames(), m, d});
    auto src = provider.open();
    uint32_t written = 0;
    while (auto g = src->next()) {
        if (g->m != m || g->d != d || g->data.size() != size_t(m) * d) {
            throw Error(ErrorCode::PatchCountMismatch, "grid " + std::to_string(g->frame_index));
        }
        floats_to_le(g->data, bytes);
        out.write(reinterpret_cast<const char *>(bytes.data()), std::streamsize(bytes.size()));
        bytes.clear();
        ++written;
    }
    out.write(reinterpret_cast<const char *>(bytes.data()), std::streamsize(bytes.size())); // header only when n = 0
    if (written != provider.n_frames()) {
        throw Error(ErrorCode::StreamExhausted, "patch source ended after " + std::to_string(written) + " grids");
    }
    out.flush();
    if (!out) {
        throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
    }
}

void write_tensor_file(const QueryEmbedding & query, const fs::path & path) {
    if (query.frame_space.size() != query.patch_space.size()) {
        throw Error(ErrorCode::DimensionMismatch,
                    "a two-row query file needs equal frame/patch dimensions; write two one-row files instead");
    }
    const uint32_t d = uint32_t(query.frame_space.size());
    std::vector<uint8_t> bytes = header_bytes({kTensorMagic, kTensorVersion, TensorKind::Query, 2, 1, d});
    floats_to_le(query.frame_space, bytes);
    floats_to_le(query.patch_space, bytes);
    write_all(path, bytes);
}

void write_query_row(std::span<const float> row, const fs::path & path) {
    std::vector<uint8_t> bytes = header_bytes({kTensorMagic, kTensorVersion, TensorKind::Query, 1, 1, uint32_t(row.size())});
    floats_to_le(row, bytes);
    write_all(path, bytes);
}

void write_tensor_file(const AttentionDump & dump, const fs::path & path) {
    std::vector<uint8_t> bytes = header_bytes({kTensorMagic, kTensorVersion, TensorKind::Attention, dump.n, dump.m, 1});
    std::vector<float> narrowed(dump.weights.begin(), dump.weights.end());
    floats_to_le(narrowed, bytes);
    write_all(path, bytes);
}

void write_tensor_file(const TokenMatrix & tokens, const fs::path & path) {
    std::vector<uint8_t> bytes = header_bytes({kTensorMagic, kTensorVersion, TensorKind::Tokens, tokens.n, 1, tokens.d});
    floats_to_le(tokens.data, bytes);
    write_all(path, bytes);
}

// ---------------------------------------------------------------------------
// streaming patch files

namespace {

class FilePatchSource final : public PatchSource {
public:
    FilePatchSource(const fs::path & path, const TensorFileHeader & h, bool renormalize)
        : in_(path, std::ios::binary), h_(h), renormalize_(renormalize), buf_(size_t(h.m) * h.d * 4) {
        if (!in_) {
            throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
        }
        in_.seekg(std::streamoff(kHeaderBytes));
    }

    std::optional<PatchGrid> next() override {
        if (pos_ >= h_.n) {
            return std::nullopt;
        }
        in_.read(reinterpret_cast<char *>(buf_.data()), std::streamsize(buf_.size()));
        if (size_t(in_.gcount()) != buf_.size()) {
            throw Error(ErrorCode::StreamExhausted, "patch file ended at frame " + std::to_string(pos_));
        }
        PatchGrid g{pos_, h_.m, h_.d, std::vector<float>(size_t(h_.m) * h_.d)};
        le_to_floats(buf_.data(), g.data.size(), g.data.data());
        if (renormalize_) {
            enforce_unit_rows(g.data, h_.d, true, "frame " + std::to_string(pos_) + " patch");
        }
        ++pos_;
        return g;
    }

private:
    std::ifstream        in_;
    TensorFileHeader     h_;
    bool                 renormalize_;
    std::vector<uint8_t> buf_;
    uint32_t             pos_ = 0;
};

} // namespace

FilePatchProvider::FilePatchProvider(fs::path path, bool renormalize)
    : path_(std::move(path)), header_(read_header(path_)), renormalize_(renormalize) {
    require_kind(header_, TensorKind::PatchSet, path_);
    std::error_code ec;
    const auto size = fs::file_size(path_, ec);
    if (ec) {
        throw Error(ErrorCode::IoFailure, "cannot stat " + path_.string());
    }
    if (size - kHeaderBytes != header_.payload_bytes()) {
        throw Error(ErrorCode::SizeMismatch, path_.string() + ": payload size disagrees with header");
    }
    if (header_.m == 0 || header_.d == 0) {
        throw Error(ErrorCode::DimensionMismatch, path_.string() + ": PATCH_SET needs m>=1, d>=1");
    }
}

std::unique_ptr<PatchSource> FilePatchProvider::open() const {
    return std::make_unique<FilePatchSource>(path_, header_, renormalize_);
}

// ---------------------------------------------------------------------------
// sidecar manifests

VideoManifest read_video_manifest(const fs::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
        VideoManifest m;
        m.video_id = j.at("video_id").get<std::string>();
        m.fps = j.value("fps", 1.0);
        m.frame_file = j.at("frame_file").get<std::string>();
        m.patch_file = j.value("patch_file", std::string());
        m.n_frames = j.at("n_frames").get<uint32_t>();
        return m;
    } catch (const nlohmann::json::exception & e) {
        throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
    }
}

void write_video_manifest(const VideoManifest & m, const fs::path & path) {
    nlohmann::ordered_json j;
    j["video_id"] = m.video_id;
    j["fps"] = m.fps;
    j["frame_file"] = m.frame_file;
    if (!m.patch_file.empty()) {
        j["patch_file"] = m.patch_file;
    }
    j["n_frames"] = m.n_frames;
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::IoFailure, "cannot open for writing: " + path.string());
    }
    out << j.dump(2) << "\n";
    if (!out) {
        throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
    }
}

VideoEmbeddingSet load_video(const fs::path & manifest_path, const LoadOptions & opts) {
    const VideoManifest m = read_video_manifest(manifest_path);
    const fs::path base = manifest_path.parent_path();
    auto resolve = [&](const std::string & p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

    VideoEmbeddingSet video = load_frame_set(resolve(m.frame_file), opts);
    video.video_id = m.video_id;
    video.fps = m.fps;
    if (!(m.fps > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, manifest_path.string() + ": fps must be positive");
    }
    if (video.n_frames() != m.n_frames) {
        throw Error(ErrorCode::SizeMismatch, manifest_path.string() + ": manifest n_frames " +
                                                 std::to_string(m.n_frames) + " vs frame file " +
                                                 std::to_string(video.n_frames()));
    }
    if (!m.patch_file.empty()) {
        auto provider = std::make_shared<FilePatchProvider>(resolve(m.patch_file), opts.renormalize);
        if (provider->n_frames() != m.n_frames) {
            throw Error(ErrorCode::SizeMismatch, manifest_path.string() + ": patch file holds " +
                                                     std::to_string(provider->n_frames()) + " frames");
        }
        if (opts.check && !opts.renormalize) {
            auto src = provider->open();
            while (auto g = src->next()) {
                enforce_unit_rows(g->data, g->d, false, "frame " + std::to_string(g->frame_index) + " patch");
            }
        }
        video.patches = std::move(provider);
    }
    return video;
}

} // namespace vdistill
