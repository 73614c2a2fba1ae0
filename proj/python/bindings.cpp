#include "vdistill/error.hpp"
#include "vdistill/niah.hpp"
#include "vdistill/pipeline.hpp"
#include "vdistill/profiler.hpp"
#include "vdistill/serialize.hpp"
#include "vdistill/synth.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace vdistill;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<float> to_vector(const FloatArray & a, const char * what) {
    if (a.ndim() != 1) {
        throw py::value_error(std::string(what) + " must be 1-D");
    }
    return {a.data(), a.data() + a.size()};
}

std::vector<FrameEmbedding> to_frames(const FloatArray & a) {
    if (a.ndim() != 2) {
        throw py::value_error("frames must be an (N, d) array");
    }
    std::vector<FrameEmbedding> out;
    const auto d = size_t(a.shape(1));
    for (py::ssize_t i = 0; i < a.shape(0); ++i) {
        out.push_back({uint32_t(i), std::vector<float>(a.data(i, 0), a.data(i, 0) + d)});
    }
    return out;
}

PatchGrid to_grid(const FloatArray & a, uint32_t frame_index) {
    if (a.ndim() != 2) {
        throw py::value_error("a patch grid must be an (M, d) array");
    }
    return {frame_index, uint32_t(a.shape(0)), uint32_t(a.shape(1)), std::vector<float>(a.data(), a.data() + a.size())};
}

std::shared_ptr<const PatchProvider> to_provider(const FloatArray & a) {
    if (a.ndim() != 3) {
        throw py::value_error("patches must be an (N, M, d) array");
    }
    std::vector<PatchGrid> grids;
    const auto stride = size_t(a.shape(1) * a.shape(2));
    for (py::ssize_t i = 0; i < a.shape(0); ++i) {
        grids.push_back({uint32_t(i), uint32_t(a.shape(1)), uint32_t(a.shape(2)),
                         std::vector<float>(a.data(i, 0, 0), a.data(i, 0, 0) + stride)});
    }
    return std::make_shared<InMemoryPatchProvider>(std::move(grids));
}

template <class T>
py::array_t<T> to_array(const std::vector<T> & v) {
    return py::array_t<T>(py::ssize_t(v.size()), v.data());
}

py::dict budget_dict(const BudgetReport & b) {
    py::dict d;
    d["n_frames"] = b.n_frames;
    d["patches_per_frame"] = b.patches_per_frame;
    d["keyframes"] = b.keyframes;
    d["original_tokens"] = b.original_tokens;
    d["compressed_tokens"] = b.compressed_tokens;
    d["reduction_ratio"] = b.reduction_ratio;
    return d;
}

py::array_t<float> grids_to_array(const std::vector<PatchGrid> & grids, uint32_t m, uint32_t d) {
    py::array_t<float> out({py::ssize_t(grids.size()), py::ssize_t(m), py::ssize_t(d)});
    float * dst = out.mutable_data();
    for (const auto & g : grids) {
        dst = std::copy(g.data.begin(), g.data.end(), dst);
    }
    return out;
}

} // namespace

PYBIND11_MODULE(_core, mod) {
    mod.attr("__version__") = tool_version();

    py::register_exception<Error>(mod, "Error", PyExc_ValueError);

    mod.def("budget", [](uint64_t n, uint64_t m, uint64_t k) { return budget_dict(budget(n, m, k)); },
            py::arg("n"), py::arg("m"), py::arg("k"));

    mod.def(
        "select_keyframes",
        [](const FloatArray & frames, const FloatArray & query, double tau, uint32_t k) {
            VideoEmbeddingSet video;
            video.frames = to_frames(frames);
            QueryEmbedding q{to_vector(query, "query"), {}};
            q.patch_space = q.frame_space;
            const auto sel = select_keyframes(video, q, {tau, k});
            return py::make_tuple(sel.keyframe_indices, sel.selection_order);
        },
        py::arg("frames"), py::arg("query"), py::arg("tau") = 0.85, py::arg("k") = 32,
        "Returns (keyframe_indices ascending, selection_order).");

    mod.def(
        "merge_frame",
        [](const FloatArray & patches, std::optional<FloatArray> keyframe, const FloatArray & query, double lambda,
           double alpha) {
            const auto frame = to_grid(patches, 1);
            std::optional<PatchGrid> key;
            if (keyframe) {
                key = to_grid(*keyframe, 0);
            }
            QueryEmbedding q{{}, to_vector(query, "query")};
            q.frame_space = q.patch_space;
            const auto tok = merge_frame(frame, key ? &*key : nullptr, q, {lambda, alpha});
            return py::make_tuple(to_array(tok.vector), to_array(tok.weights));
        },
        py::arg("patches"), py::arg("keyframe"), py::arg("query"), py::arg("lambda_") = 1.0, py::arg("alpha") = 1e-2,
        "Returns (merged token, merge weights).");

    mod.def(
        "distill",
        [](const FloatArray & frames, const FloatArray & patches, const FloatArray & query_frame,
           std::optional<FloatArray> query_patch, const std::string & mode, double tau, uint32_t k, double lambda,
           double alpha, bool stream) {
            VideoEmbeddingSet video;
            video.video_id = "python";
            video.frames = to_frames(frames);
            video.patches = to_provider(patches);
            QueryEmbedding q{to_vector(query_frame, "query_frame"), {}};
            q.patch_space = query_patch ? to_vector(*query_patch, "query_patch") : q.frame_space;
            DistillConfig cfg;
            cfg.mode = parse_sampling_mode(mode);
            cfg.dks = {tau, k};
            cfg.dfm = {lambda, alpha};
            const auto seq = stream ? stream_distill(video, q, cfg) : distill(video, q, cfg);

            const auto tokens = merged_tokens(seq);
            py::array_t<float> token_array({py::ssize_t(tokens.n), py::ssize_t(tokens.d)});
            std::copy(tokens.data.begin(), tokens.data.end(), token_array.mutable_data());
            std::vector<int64_t> paired;
            for (const auto & item : seq.items) {
                const auto * t = std::get_if<MergedToken>(&item);
                paired.push_back(t && t->paired_keyframe ? int64_t(*t->paired_keyframe) : -1);
            }
            py::dict d;
            d["keyframe_indices"] = seq.selection.keyframe_indices;
            d["selection_order"] = seq.selection.selection_order;
            d["saturated"] = seq.saturated;
            d["budget"] = budget_dict(seq.budget);
            d["token_count"] = count_tokens(seq);
            d["merged_tokens"] = token_array;
            d["paired_keyframe"] = paired;
            return d;
        },
        py::arg("frames"), py::arg("patches"), py::arg("query_frame"), py::arg("query_patch") = py::none(),
        py::arg("mode") = "dks", py::arg("tau") = 0.85, py::arg("k") = 32, py::arg("lambda_") = 1.0,
        py::arg("alpha") = 1e-2, py::arg("stream") = false,
        "Distill one video. `merged_tokens` holds one row per non-keyframe, in frame order.");

    mod.def(
        "cumulative_curve",
        [](const DoubleArray & scores) {
            return to_array(cumulative_curve(std::span<const double>(scores.data(), size_t(scores.size()))));
        },
        py::arg("scores"));

    mod.def(
        "gen",
        [](uint32_t n, uint32_t m, uint32_t d_f, uint32_t d_p, uint32_t clusters, double blend, uint64_t seed) {
            SynthSpec spec{n, m, d_f, d_p, clusters, blend, seed};
            const auto sv = gen_embeddings(spec);
            py::array_t<float> frames({py::ssize_t(n), py::ssize_t(d_f)});
            float * dst = frames.mutable_data();
            for (const auto & f : sv.video.frames) {
                dst = std::copy(f.vector.begin(), f.vector.end(), dst);
            }
            py::object patches = py::none();
            if (sv.video.patches) {
                patches = grids_to_array(materialize(*sv.video.patches), m, d_p);
            }
            return py::make_tuple(frames, patches, to_array(sv.query.frame_space), to_array(sv.query.patch_space));
        },
        py::arg("n"), py::arg("m") = 4, py::arg("d_f") = 8, py::arg("d_p") = 8, py::arg("clusters") = 1,
        py::arg("blend") = 0.0, py::arg("seed") = 0, "Returns (frames, patches or None, query_frame, query_patch).");

    mod.def(
        "build_manifest_json",
        [](const std::vector<std::map<std::string, py::object>> & catalog, std::vector<uint32_t> lengths,
           uint32_t cases_per_length, uint64_t seed) {
            std::vector<CatalogEntry> entries;
            for (const auto & e : catalog) {
                CatalogEntry c;
                auto str = [&](const char * key) {
                    const auto it = e.find(key);
                    return it == e.end() || it->second.is_none() ? std::string() : it->second.cast<std::string>();
                };
                c.video_id = str("video_id");
                c.length = e.at("length").cast<uint32_t>();
                c.query_id = str("query_id");
                c.answer_key = str("answer_key");
                c.question_type = str("question_type");
                entries.push_back(std::move(c));
            }
            NiahConfig cfg;
            cfg.lengths = std::move(lengths);
            cfg.cases_per_length = cases_per_length;
            return serialize_manifest(build_manifest(entries, cfg, seed));
        },
        py::arg("catalog"), py::arg("lengths") = NiahConfig{}.lengths, py::arg("cases_per_length") = 600,
        py::arg("seed") = 0);
}
