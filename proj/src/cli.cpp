#include "vdistill/cli.hpp"

#include "vdistill/error.hpp"
#include "vdistill/niah.hpp"
#include "vdistill/pipeline.hpp"
#include "vdistill/profiler.hpp"
#include "vdistill/serialize.hpp"
#include "vdistill/synth.hpp"
#include "vdistill/tensor_file.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

namespace vdistill {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

struct Globals {
    uint64_t    seed        = 0;
    bool        strict      = false;
    bool        renormalize = false;
    std::string out_dir;
    std::string format; // empty: the command's natural format
    unsigned    jobs = 1;
};

struct DistillArgs {
    std::vector<std::string> videos;
    std::vector<std::string> queries;
    std::vector<std::string> query_patches;
    std::string              mode = "dks";
    double                   tau    = 0.85;
    uint32_t                 k      = 32;
    double                   lambda = 1.0;
    double                   alpha  = 1e-2;
    bool                     stream = false;
    bool                     tokens_out   = false;
    bool                     dump_weights = false;
    bool                     inline_patches = false;
};

struct Args {
    Globals g;

    std::vector<std::string> validate_paths;
    double                   mass_eps = 1e-3;

    DistillArgs distill;

    uint64_t budget_n = 0, budget_m = 0, budget_k = 0;
    double   cost_a = 1.0, cost_b = 0.0;

    std::string attention;
    std::string frames;
    std::string patches;
    uint32_t    window  = 3;
    size_t      n_pairs = 1000;
    uint32_t    k_top   = 32;
    bool        lenient = false;

    std::string           catalog;
    std::vector<uint32_t> lengths = NiahConfig{}.lengths;
    uint32_t              cases_per_length = 600;
    uint32_t              needle_min = 30, needle_max = 120;
    std::string           manifest;
    std::string           case_id;
    std::string           haystack;
    std::string           needle;
    std::string           predictions;
    uint32_t              buckets = 10;

    DistillArgs         sweep;
    std::vector<double> taus   = {kSweepTauGrid.begin(), kSweepTauGrid.end()};
    std::vector<double> alphas = {kSweepAlphaGrid.begin(), kSweepAlphaGrid.end()};

    SynthSpec           synth;
    std::vector<double> gen_attention;
    std::vector<double> gen_patch_attention;
};

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- output

class Emitter {
public:
    Emitter(const Globals & g, std::ostream & out, std::ostream & err) : g_(g), out_(out), err_(err) {
        if (!g_.out_dir.empty()) {
            fs::create_directories(g_.out_dir);
        }
    }

    bool to_files() const { return !g_.out_dir.empty(); }
    fs::path dir() const { return g_.out_dir; }

    // writes to out-dir/name when an output directory is set, else stdout
    void emit(const std::string & name, const std::string & content) {
        if (to_files()) {
            const fs::path p = fs::path(g_.out_dir) / name;
            std::ofstream f(p, std::ios::binary | std::ios::trunc);
            f << content;
            if (!f) {
                throw Error(ErrorCode::IoFailure, "cannot write " + p.string());
            }
            err_ << "wrote " << p.generic_string() << "\n";
        } else {
            out_ << content;
        }
    }

    fs::path require_dir(const std::string & what) const {
        if (!to_files()) {
            throw UsageError(what + " needs --out-dir (or VLMP_OUT_DIR)");
        }
        return g_.out_dir;
    }

    std::ostream & err() { return err_; }

private:
    const Globals & g_;
    std::ostream &  out_;
    std::ostream &  err_;
};

std::string dump_json(const ojson & j) { return j.dump(2) + "\n"; }

std::string resolve_format(const Globals & g, const std::string & natural) {
    return g.format.empty() ? natural : g.format;
}

ojson globals_json(const Globals & g) {
    return {{"seed", g.seed}, {"strict", g.strict}, {"renormalize", g.renormalize}};
}

// ---------------------------------------------------------------- inputs

bool is_json(const fs::path & p) { return p.extension() == ".json"; }

LoadOptions load_opts(const Globals & g) {
    LoadOptions o;
    o.renormalize = g.renormalize;
    return o;
}

// a video sidecar (.json) or a bare FRAME_SET file
VideoEmbeddingSet load_video_arg(const fs::path & p, const LoadOptions & opts) {
    return is_json(p) ? load_video(p, opts) : load_frame_set(p, opts);
}

void add_video_inputs(ArtifactMeta & meta, const fs::path & p, const std::string & role) {
    meta.inputs.emplace_back(role, p);
    if (!is_json(p)) {
        return;
    }
    const auto vm = read_video_manifest(p);
    const fs::path base = p.parent_path();
    meta.inputs.emplace_back(role + ".frames", base / vm.frame_file);
    if (!vm.patch_file.empty()) {
        meta.inputs.emplace_back(role + ".patches", base / vm.patch_file);
    }
}

std::vector<QueryEmbedding> load_queries(const DistillArgs & a, const LoadOptions & opts, size_t n_videos,
                                         ArtifactMeta & meta) {
    if (a.queries.empty()) {
        throw UsageError("--query is required");
    }
    if (a.queries.size() != 1 && a.queries.size() != n_videos) {
        throw UsageError("give one --query for all videos or one per video");
    }
    if (!a.query_patches.empty() && a.query_patches.size() != a.queries.size()) {
        throw UsageError("--query-patch must be repeated as often as --query");
    }
    std::vector<QueryEmbedding> out;
    for (size_t i = 0; i < a.queries.size(); ++i) {
        meta.inputs.emplace_back("query", a.queries[i]);
        if (a.query_patches.empty()) {
            out.push_back(load_query(a.queries[i], opts));
        } else {
            meta.inputs.emplace_back("query_patch", a.query_patches[i]);
            out.push_back(load_query_pair(a.queries[i], a.query_patches[i], opts));
        }
    }
    return out;
}

DistillConfig distill_config(const DistillArgs & a) {
    DistillConfig cfg;
    cfg.mode = parse_sampling_mode(a.mode);
    cfg.dks.tau = a.tau;
    cfg.dks.k_max = a.k;
    cfg.dfm.lambda = a.lambda;
    cfg.dfm.alpha = a.alpha;
    cfg.dks.check();
    cfg.dfm.check();
    return cfg;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception is rethrown.
template <class Fn>
void parallel_for(size_t n, unsigned jobs, Fn fn) {
    jobs = std::max(1u, std::min<unsigned>(jobs, unsigned(n)));
    if (jobs <= 1) {
        for (size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < jobs; ++t) {
        pool.emplace_back([&] {
            for (size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto & th : pool) {
        th.join();
    }
    for (auto & e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

// ---------------------------------------------------------------- commands

int cmd_validate(const Args & a, Emitter & em) {
    ArtifactMeta meta{"validate", globals_json(a.g), {}};
    meta.config["mass_eps"] = a.mass_eps;
    LoadOptions opts;
    opts.check = false;
    ojson files = ojson::array();
    std::ostringstream csv;
    csv << "path,kind,violation,field,index,observed\n";
    size_t total = 0;
    for (const auto & path_str : a.validate_paths) {
        const fs::path p(path_str);
        std::vector<Violation> v;
        std::string kind;
        if (is_json(p)) {
            add_video_inputs(meta, p, "file");
            v = validate(load_video(p, opts));
            kind = "VIDEO";
        } else {
            meta.inputs.emplace_back("file", p);
            const auto content = load_tensor_file(p, opts);
            kind = std::string(tensor_kind_name(read_header(p).kind));
            v = std::visit(
                [&](const auto & c) -> std::vector<Violation> {
                    using T = std::decay_t<decltype(c)>;
                    if constexpr (std::is_same_v<T, PatchSet>) {
                        return validate(std::span<const PatchGrid>(c.grids));
                    } else if constexpr (std::is_same_v<T, AttentionDump>) {
                        return validate(c, a.mass_eps);
                    } else if constexpr (std::is_same_v<T, TokenMatrix>) {
                        return {};
                    } else {
                        return validate(c);
                    }
                },
                content);
        }
        ojson jv = ojson::array();
        for (const auto & x : v) {
            jv.push_back({{"kind", violation_kind_name(x.kind)},
                          {"field", x.field},
                          {"index", x.index},
                          {"observed", x.observed}});
            csv << p.generic_string() << ',' << kind << ',' << violation_kind_name(x.kind) << ',' << x.field << ','
                << x.index << ',' << format_double(x.observed) << '\n';
        }
        if (!v.empty()) {
            em.err() << p.generic_string() << ": " << v.size() << " violation(s), first: "
                     << violation_kind_name(v.front().kind) << " in " << v.front().field << " at "
                     << v.front().index << "\n";
        }
        total += v.size();
        files.push_back({{"path", p.generic_string()}, {"kind", kind}, {"ok", v.empty()}, {"violations", jv}});
    }
    if (resolve_format(a.g, "json") == "csv") {
        em.emit("validate.csv", meta_to_csv_comments(meta) + csv.str());
    } else {
        em.emit("validate.json", dump_json({{"meta", meta_to_json(meta)}, {"files", files}}));
    }
    return total == 0 ? 0 : 1;
}

int cmd_distill(const Args & a, Emitter & em) {
    const DistillArgs & d = a.distill;
    const DistillConfig cfg = distill_config(d);
    if ((d.tokens_out || d.dump_weights) && !em.to_files()) {
        em.require_dir("--tokens-out/--dump-weights");
    }
    const LoadOptions opts = load_opts(a.g);

    ArtifactMeta base_meta{"distill", globals_json(a.g), {}};
    base_meta.config.update(config_to_json(cfg));
    base_meta.config["stream"] = d.stream;
    const auto queries = load_queries(d, opts, d.videos.size(), base_meta);

    const size_t n = d.videos.size();
    std::vector<std::string> docs(n), names(n);
    std::vector<int> saturated(n, 0);
    parallel_for(n, a.g.jobs, [&](size_t i) {
        ArtifactMeta meta = base_meta;
        add_video_inputs(meta, d.videos[i], "video");
        const VideoEmbeddingSet video = load_video_arg(d.videos[i], opts);
        const QueryEmbedding & q = queries.size() == 1 ? queries[0] : queries[i];
        const DistilledSequence seq = d.stream ? stream_distill(video, q, cfg) : distill(video, q, cfg);
        saturated[i] = seq.saturated;

        SequenceJsonOptions jopts;
        jopts.inline_tokens = !d.tokens_out;
        jopts.inline_keyframe_patches = d.inline_patches;
        ojson doc = {{"meta", meta_to_json(meta)}};
        doc.update(sequence_to_json(seq, cfg, jopts));
        names[i] = video.video_id.empty() ? "video" + std::to_string(i) : video.video_id;
        if (d.tokens_out) {
            const std::string tok = names[i] + ".tokens.bin";
            write_tensor_file(merged_tokens(seq), em.dir() / tok);
            doc["tokens_file"] = tok;
        }
        if (d.dump_weights) {
            std::ofstream f(em.dir() / (names[i] + ".weights.csv"), std::ios::binary | std::ios::trunc);
            f << meta_to_csv_comments(meta) << weights_csv(seq);
        }
        docs[i] = doc.dump(2) + "\n";
    });

    for (size_t i = 0; i < n; ++i) {
        if (saturated[i]) {
            em.err() << (a.g.strict ? "error: " : "warning: ") << names[i]
                     << ": selection saturated below K; proceeding with the smaller set\n";
        }
    }
    if (em.to_files()) {
        for (size_t i = 0; i < n; ++i) {
            em.emit(names[i] + ".distilled.json", docs[i]);
        }
    } else if (n == 1) {
        em.emit("", docs[0]);
    } else {
        std::string all = "[\n";
        for (size_t i = 0; i < n; ++i) {
            all += docs[i].substr(0, docs[i].size() - 1) + (i + 1 < n ? ",\n" : "\n");
        }
        em.emit("", all + "]\n");
    }
    const bool any_saturated = std::any_of(saturated.begin(), saturated.end(), [](int s) { return s != 0; });
    return a.g.strict && any_saturated ? 1 : 0;
}

int cmd_budget(const Args & a, Emitter & em) {
    const BudgetReport r = budget(a.budget_n, a.budget_m, a.budget_k);
    const CostProfile cost{a.cost_a, a.cost_b};
    const double cost_orig = estimate_cost(r.original_tokens, cost);
    const double cost_comp = estimate_cost(r.compressed_tokens, cost);
    ArtifactMeta meta{"budget", globals_json(a.g), {}};
    meta.config["n"] = a.budget_n;
    meta.config["m"] = a.budget_m;
    meta.config["k"] = a.budget_k;
    meta.config["cost_a"] = a.cost_a;
    meta.config["cost_b"] = a.cost_b;

    const std::string fmt = resolve_format(a.g, em.to_files() ? "json" : "text");
    if (fmt == "json") {
        ojson doc = {{"meta", meta_to_json(meta)}, {"budget", budget_to_json(r)}};
        doc["cost"] = {{"original", cost_orig}, {"compressed", cost_comp}};
        em.emit("budget.json", dump_json(doc));
    } else if (fmt == "csv") {
        std::ostringstream s;
        s << meta_to_csv_comments(meta)
          << "n_frames,patches_per_frame,keyframes,original_tokens,compressed_tokens,reduction_ratio,"
             "cost_original,cost_compressed\n"
          << r.n_frames << ',' << r.patches_per_frame << ',' << r.keyframes << ',' << r.original_tokens << ','
          << r.compressed_tokens << ',' << format_double(r.reduction_ratio) << ',' << format_double(cost_orig) << ','
          << format_double(cost_comp) << '\n';
        em.emit("budget.csv", s.str());
    } else {
        std::ostringstream s;
        s << "original=" << r.original_tokens << " compressed=" << r.compressed_tokens
          << " reduction=" << format_percent(r.reduction_ratio) << " cost=" << format_double(cost_comp) << "\n";
        em.emit("budget.txt", s.str());
    }
    return 0;
}

AttentionCheck attention_check(const Args & a) {
    // --strict overrides --lenient
    return AttentionCheck{a.mass_eps, a.lenient && !a.g.strict};
}

AttentionDump load_dump(const Args & a) {
    LoadOptions o;
    o.check = false; // mass is checked by the profiler with the configured tolerance
    return load_attention(a.attention, o);
}

int cmd_profile_frame(const Args & a, Emitter & em) {
    ArtifactMeta meta{"profile frame", globals_json(a.g), {}};
    meta.config["window"] = a.window;
    meta.config["pairs"] = a.n_pairs;
    meta.config["mass_eps"] = a.mass_eps;
    meta.config["lenient"] = a.lenient;
    meta.inputs.emplace_back("attention", a.attention);
    add_video_inputs(meta, a.frames, "frames");

    const AttentionDump dump = load_dump(a);
    const VideoEmbeddingSet video = load_video_arg(a.frames, load_opts(a.g));
    FrameProfileOptions fo;
    fo.window = a.window;
    fo.n_pairs = a.n_pairs;
    fo.seed = a.g.seed;
    fo.check = attention_check(a);
    const AttentionProfile prof = frame_profile(dump, video.frames, fo);

    if (resolve_format(a.g, "csv") == "json") {
        ojson sim = ojson::array();
        for (const auto & s : prof.neighbor_similarity) {
            sim.push_back(s ? ojson(*s) : ojson(nullptr));
        }
        em.emit("profile_frame.json", dump_json({{"meta", meta_to_json(meta)},
                                                 {"random_baseline", prof.random_baseline},
                                                 {"frame_scores", prof.frame_scores},
                                                 {"cumulative_curve", prof.cumulative_curve},
                                                 {"neighbor_similarity", sim}}));
    } else {
        em.emit("profile_frame.csv", meta_to_csv_comments(meta) + "# random_baseline: " +
                                         format_double(prof.random_baseline) + "\n" +
                                         profile_csv(prof.cumulative_curve, prof.neighbor_similarity));
    }
    return 0;
}

int cmd_profile_patch(const Args & a, Emitter & em) {
    ArtifactMeta meta{"profile patch", globals_json(a.g), {}};
    meta.config["k_top"] = a.k_top;
    meta.config["mass_eps"] = a.mass_eps;
    meta.config["lenient"] = a.lenient;
    meta.inputs.emplace_back("attention", a.attention);
    add_video_inputs(meta, a.patches, "patches");

    const AttentionDump dump = load_dump(a);
    std::shared_ptr<const PatchProvider> provider;
    if (is_json(a.patches)) {
        provider = load_video(a.patches, load_opts(a.g)).patches;
        if (!provider) {
            throw Error(ErrorCode::InvalidArgument, a.patches + ": video has no patch file");
        }
    } else {
        provider = std::make_shared<FilePatchProvider>(a.patches, a.g.renormalize);
    }
    const PatchProfile prof = patch_profile(dump, *provider, a.k_top, attention_check(a));
    if (prof.empty) {
        em.err() << "warning: every frame is a keyframe; nothing to profile\n";
    }

    if (resolve_format(a.g, "csv") == "json") {
        ojson sim = ojson::array();
        for (const auto & s : prof.similarity_by_percentile) {
            sim.push_back(s ? ojson(*s) : ojson(nullptr));
        }
        em.emit("profile_patch.json", dump_json({{"meta", meta_to_json(meta)},
                                                 {"keyframes", prof.keyframes},
                                                 {"n_patches", prof.n_patches},
                                                 {"cumulative_curve", prof.cumulative_curve},
                                                 {"similarity_by_percentile", sim}}));
    } else {
        std::string head = meta_to_csv_comments(meta) + "# keyframes:";
        for (uint32_t k : prof.keyframes) {
            head += " " + std::to_string(k);
        }
        head += "\n# n_patches: " + std::to_string(prof.n_patches) + "\n";
        em.emit("profile_patch.csv", head + profile_csv(prof.cumulative_curve, prof.similarity_by_percentile));
    }
    return 0;
}

int cmd_niah_build(const Args & a, Emitter & em) {
    NiahConfig cfg;
    cfg.lengths = a.lengths;
    cfg.cases_per_length = a.cases_per_length;
    cfg.needle_min = a.needle_min;
    cfg.needle_max = a.needle_max;
    const auto catalog = read_catalog(a.catalog);
    const NiahManifest m = build_manifest(catalog, cfg, a.g.seed);

    ArtifactMeta meta{"niah build", globals_json(a.g), {}};
    meta.config["lengths"] = cfg.lengths;
    meta.config["cases_per_length"] = cfg.cases_per_length;
    meta.config["needle_min"] = cfg.needle_min;
    meta.config["needle_max"] = cfg.needle_max;
    meta.inputs.emplace_back("catalog", a.catalog);
    ojson doc = manifest_to_json(m);
    doc["meta"] = meta_to_json(meta);
    em.emit("niah_manifest.json", dump_json(doc));
    return 0;
}

int cmd_niah_splice(const Args & a, Emitter & em) {
    const fs::path dir = em.require_dir("niah splice");
    const NiahManifest m = read_manifest(a.manifest);
    const auto it = std::find_if(m.cases.begin(), m.cases.end(),
                                 [&](const NiahCase & c) { return c.case_id == a.case_id; });
    if (it == m.cases.end()) {
        throw Error(ErrorCode::UnknownCaseId, a.case_id);
    }
    const LoadOptions opts = load_opts(a.g);
    const VideoEmbeddingSet hay = load_video_arg(a.haystack, opts);
    const VideoEmbeddingSet needle = load_video_arg(a.needle, opts);
    for (const auto & [got, want, role] : {std::tuple{hay.video_id, it->haystack_source, "haystack"},
                                          std::tuple{needle.video_id, it->needle_source, "needle"}}) {
        if (got != want) {
            em.err() << (a.g.strict ? "error: " : "warning: ") << role << " video id '" << got
                     << "' differs from the manifest's '" << want << "'\n";
            if (a.g.strict) {
                return 1;
            }
        }
    }
    const SpliceResult s = splice_embeddings(hay, needle, *it);

    VideoManifest vm;
    vm.video_id = a.case_id;
    vm.fps = hay.fps;
    vm.n_frames = s.video.n_frames();
    vm.frame_file = a.case_id + ".frames.bin";
    write_tensor_file(s.video, dir / vm.frame_file);
    if (s.video.patches) {
        vm.patch_file = a.case_id + ".patches.bin";
        write_tensor_file(*s.video.patches, dir / vm.patch_file);
    }
    write_video_manifest(vm, dir / (a.case_id + ".json"));

    ArtifactMeta meta{"niah splice", globals_json(a.g), {}};
    meta.config["case_id"] = a.case_id;
    meta.inputs.emplace_back("manifest", a.manifest);
    add_video_inputs(meta, a.haystack, "haystack");
    add_video_inputs(meta, a.needle, "needle");
    ojson doc = {{"meta", meta_to_json(meta)}};
    doc.update(index_map_to_json(s, *it));
    em.emit(a.case_id + ".index.json", dump_json(doc));
    return 0;
}

int cmd_niah_score(const Args & a, Emitter & em) {
    const NiahManifest m = read_manifest(a.manifest);
    const Predictions preds = read_predictions(a.predictions);
    const ScoreGrid grid = score(m, preds, a.buckets, a.g.strict);
    ArtifactMeta meta{"niah score", globals_json(a.g), {}};
    meta.config["buckets"] = a.buckets;
    meta.inputs.emplace_back("manifest", a.manifest);
    meta.inputs.emplace_back("predictions", a.predictions);
    if (grid.missing > 0) {
        em.err() << "warning: " << grid.missing << " case(s) without a prediction were "
                 << (a.g.strict ? "counted as incorrect" : "excluded") << "\n";
    }
    if (resolve_format(a.g, "csv") == "json") {
        ojson cells = ojson::array();
        for (const auto & c : grid.cells) {
            cells.push_back({{"length", c.length},
                             {"bucket", c.bucket},
                             {"bucket_lo", c.lo},
                             {"bucket_hi", c.hi},
                             {"correct", c.correct},
                             {"total", c.total},
                             {"accuracy", c.accuracy ? ojson(*c.accuracy) : ojson(nullptr)}});
        }
        em.emit("niah_score.json",
                dump_json({{"meta", meta_to_json(meta)}, {"missing", grid.missing}, {"cells", cells}}));
    } else {
        em.emit("niah_score.csv", meta_to_csv_comments(meta) + "# missing: " + std::to_string(grid.missing) + "\n" +
                                      score_csv(grid));
    }
    return 0;
}

// JSON lines {"tau", "alpha", "score"} or {"tau", "alpha", "correct": bool};
// each cell's score is the mean of its records.
ScoreHook read_sweep_scores(const fs::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    }
    auto acc = std::make_shared<std::vector<std::tuple<double, double, double, size_t>>>();
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const auto j = nlohmann::json::parse(line);
        if (!j.contains("tau") || !j.contains("alpha") || !(j.contains("score") || j.contains("correct"))) {
            throw Error(ErrorCode::InvalidArgument,
                        path.string() + ":" + std::to_string(lineno) + ": need tau, alpha and score or correct");
        }
        const double tau = j["tau"], alpha = j["alpha"];
        const double v = j.contains("score") ? j["score"].get<double>() : (j["correct"].get<bool>() ? 1.0 : 0.0);
        auto it = std::find_if(acc->begin(), acc->end(), [&](const auto & t) {
            return std::get<0>(t) == tau && std::get<1>(t) == alpha;
        });
        if (it == acc->end()) {
            acc->emplace_back(tau, alpha, v, 1);
        } else {
            std::get<2>(*it) += v;
            ++std::get<3>(*it);
        }
    }
    return [acc](double tau, double alpha) -> std::optional<double> {
        for (const auto & [t, al, sum, count] : *acc) {
            if (std::fabs(t - tau) <= 1e-12 && std::fabs(al - alpha) <= 1e-12 * std::max(1.0, alpha)) {
                return sum / double(count);
            }
        }
        return std::nullopt;
    };
}

int cmd_sweep(const Args & a, Emitter & em) {
    const DistillArgs & d = a.sweep;
    DistillConfig base = distill_config(d);
    const LoadOptions opts = load_opts(a.g);
    ArtifactMeta meta{"sweep", globals_json(a.g), {}};
    meta.config.update(config_to_json(base));
    meta.config.erase("tau");
    meta.config.erase("alpha");
    meta.config["taus"] = a.taus;
    meta.config["alphas"] = a.alphas;
    meta.config["jobs"] = a.g.jobs;

    std::vector<VideoEmbeddingSet> videos(d.videos.size());
    for (const auto & v : d.videos) {
        add_video_inputs(meta, v, "video");
    }
    parallel_for(videos.size(), a.g.jobs, [&](size_t i) { videos[i] = load_video_arg(d.videos[i], opts); });
    const auto queries = load_queries(d, opts, videos.size(), meta);
    ScoreHook hook;
    if (!a.predictions.empty()) {
        meta.inputs.emplace_back("predictions", a.predictions);
        hook = read_sweep_scores(a.predictions);
    }
    const auto rows = run_sweep(videos, queries, a.taus, a.alphas, base, hook, a.g.jobs);

    if (resolve_format(a.g, "csv") == "json") {
        ojson jr = ojson::array();
        for (const auto & r : rows) {
            jr.push_back({{"tau", r.tau},
                          {"alpha", r.alpha},
                          {"n_videos", r.n_videos},
                          {"mean_keyframes", r.mean_keyframes},
                          {"mean_reduction", r.mean_reduction},
                          {"score", r.score ? ojson(*r.score) : ojson(nullptr)}});
        }
        em.emit("sweep.json", dump_json({{"meta", meta_to_json(meta)}, {"rows", jr}}));
    } else {
        em.emit("sweep.csv", meta_to_csv_comments(meta) + sweep_csv(rows));
    }
    return 0;
}

int cmd_gen(const Args & a, Emitter & em) {
    const fs::path dir = em.to_files() ? em.dir() : fs::path(".");
    SynthSpec spec = a.synth;
    spec.seed = a.g.seed;
    spec.lazy_patches = true;
    const SynthVideo sv = gen_embeddings(spec);
    const std::string id = spec.video_id;

    ojson files = ojson::array();
    VideoManifest vm;
    vm.video_id = id;
    vm.n_frames = spec.n_frames;
    vm.frame_file = id + ".frames.bin";
    write_tensor_file(sv.video, dir / vm.frame_file);
    files.push_back(vm.frame_file);
    if (sv.video.patches) {
        vm.patch_file = id + ".patches.bin";
        write_tensor_file(*sv.video.patches, dir / vm.patch_file);
        files.push_back(vm.patch_file);
    }
    write_video_manifest(vm, dir / (id + ".json"));
    files.push_back(id + ".json");
    if (spec.d_f == spec.d_p || spec.m_patches == 0) {
        QueryEmbedding q = sv.query;
        if (spec.m_patches == 0) {
            q.patch_space = q.frame_space;
        }
        write_tensor_file(q, dir / (id + ".query.bin"));
        files.push_back(id + ".query.bin");
    } else {
        write_query_row(sv.query.frame_space, dir / (id + ".query_frame.bin"));
        write_query_row(sv.query.patch_space, dir / (id + ".query_patch.bin"));
        files.push_back(id + ".query_frame.bin");
        files.push_back(id + ".query_patch.bin");
    }
    ArtifactMeta meta{"gen", globals_json(a.g), {}};
    meta.config["n"] = spec.n_frames;
    meta.config["m"] = spec.m_patches;
    meta.config["df"] = spec.d_f;
    meta.config["dp"] = spec.d_p;
    meta.config["clusters"] = spec.cluster_centers;
    meta.config["blend"] = spec.blend;
    meta.config["video_id"] = id;
    if (!a.gen_attention.empty()) {
        AttentionDump dump = gen_attention_dump(spec.n_frames, std::max<uint32_t>(spec.m_patches, 1),
                                                a.gen_attention[0], a.gen_attention[1], derive_seed(spec.seed, 101));
        dump.video_id = id;
        write_tensor_file(dump, dir / (id + ".attention.bin"));
        files.push_back(id + ".attention.bin");
        meta.config["attention"] = a.gen_attention;
    }
    if (!a.gen_patch_attention.empty()) {
        const double k = a.gen_patch_attention[0];
        if (k < 1 || k != std::floor(k)) {
            throw UsageError("--patch-attention K must be a positive integer");
        }
        AttentionDump dump =
            gen_patch_attention_dump(spec.n_frames, std::max<uint32_t>(spec.m_patches, 1), uint32_t(k),
                                     a.gen_patch_attention[1], a.gen_patch_attention[2], derive_seed(spec.seed, 102));
        dump.video_id = id;
        write_tensor_file(dump, dir / (id + ".patch_attention.bin"));
        files.push_back(id + ".patch_attention.bin");
        meta.config["patch_attention"] = a.gen_patch_attention;
    }
    const std::string doc = dump_json({{"meta", meta_to_json(meta)}, {"files", files}});
    std::ofstream f(dir / (id + ".gen.json"), std::ios::binary | std::ios::trunc);
    f << doc;
    em.err() << "wrote " << files.size() + 1 << " files to " << dir.generic_string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- parser

void add_distill_flags(CLI::App * sub, DistillArgs & d, bool sweep) {
    sub->add_option("--video", d.videos, "Video sidecar (.json) or FRAME_SET file; repeatable")->required();
    sub->add_option("--query", d.queries, "QUERY file; once for all videos or once per video")->required();
    sub->add_option("--query-patch", d.query_patches,
                    "Patch-space QUERY file when --query holds only the frame-space row");
    sub->add_option("--mode", d.mode, "Keyframe sampling: dks, query_only or uniform")
        ->check(CLI::IsMember({"dks", "query_only", "uniform"}))
        ->capture_default_str();
    sub->add_option("--k", d.k, "Maximum keyframe count K")->capture_default_str();
    sub->add_option("--lambda", d.lambda, "Relevance / redundancy trade-off")->capture_default_str();
    if (!sweep) {
        sub->add_option("--tau", d.tau, "Similarity threshold")->capture_default_str();
        sub->add_option("--alpha", d.alpha, "Merge softmax temperature")->capture_default_str();
        sub->add_flag("--stream", d.stream, "Single in-order pass over patch grids (bounded memory)");
        sub->add_flag("--tokens-out", d.tokens_out, "Write merged tokens to <video>.tokens.bin instead of inline");
        sub->add_flag("--dump-weights", d.dump_weights, "Write per-frame merge weights to <video>.weights.csv");
        sub->add_flag("--inline-patches", d.inline_patches, "Include keyframe patch grids in the JSON");
    }
}

struct Handlers {
    std::vector<std::pair<CLI::App *, int (*)(const Args &, Emitter &)>> list;
};

std::unique_ptr<CLI::App> build_app(Args & a, Handlers & h) {
    auto app = std::make_unique<CLI::App>(
        "Query-aware keyframe selection and token merging for long-video embeddings.", "vdistill");
    app->fallthrough();
    app->require_subcommand(1);
    app->add_option("--seed", a.g.seed, "Seed for every randomized step")->capture_default_str();
    app->add_flag("--strict", a.g.strict,
                  "Treat warnings as errors (saturated selection, attention mass, missing predictions)");
    app->add_flag("--renormalize", a.g.renormalize, "L2-renormalize stored vectors on load instead of rejecting them");
    app->add_option("--out-dir", a.g.out_dir, "Write artifacts here instead of standard output")->envname("VLMP_OUT_DIR");
    app->add_option("--format", a.g.format, "Output format")->check(CLI::IsMember({"json", "csv"}));
    app->add_option("--jobs", a.g.jobs, "Worker threads for per-video work")->capture_default_str()
        ->check(CLI::PositiveNumber);

    auto * validate = app->add_subcommand("validate", "Check tensor files and video sidecars against their invariants");
    validate->add_option("paths", a.validate_paths, "Files to check")->required();
    validate->add_option("--mass-eps", a.mass_eps, "Attention mass tolerance")->capture_default_str();
    h.list.emplace_back(validate, cmd_validate);

    auto * distill = app->add_subcommand("distill", "Select keyframes and merge the remaining frames");
    add_distill_flags(distill, a.distill, false);
    h.list.emplace_back(distill, cmd_distill);

    auto * budget = app->add_subcommand("budget", "Token count before and after distillation");
    budget->add_option("--n", a.budget_n, "Frames")->required();
    budget->add_option("--m", a.budget_m, "Patches per frame")->required();
    budget->add_option("--k", a.budget_k, "Keyframes")->required();
    budget->add_option("--cost-a", a.cost_a, "Per-token cost coefficient")->capture_default_str();
    budget->add_option("--cost-b", a.cost_b, "Quadratic attention cost coefficient")->capture_default_str();
    h.list.emplace_back(budget, cmd_budget);

    auto * profile = app->add_subcommand("profile", "Attention redundancy profiles");
    profile->require_subcommand(1);
    auto * pframe = profile->add_subcommand("frame", "Frame-level cumulative attention and neighbour similarity");
    pframe->add_option("--attention", a.attention, "ATTENTION file")->required();
    pframe->add_option("--frames", a.frames, "Video sidecar or FRAME_SET file")->required();
    pframe->add_option("--window", a.window, "Neighbours per frame")->capture_default_str();
    pframe->add_option("--pairs", a.n_pairs, "Random pairs for the baseline")->capture_default_str();
    auto * ppatch = profile->add_subcommand("patch", "Patch-level cumulative attention and keyframe similarity");
    ppatch->add_option("--attention", a.attention, "ATTENTION file")->required();
    ppatch->add_option("--patches", a.patches, "Video sidecar or PATCH_SET file")->required();
    ppatch->add_option("--k-top", a.k_top, "Frames designated as keyframes by attention")->capture_default_str();
    for (auto * sub : {pframe, ppatch}) {
        sub->add_option("--mass-eps", a.mass_eps, "Attention mass tolerance")->capture_default_str();
        sub->add_flag("--lenient", a.lenient, "Warn instead of failing when attention mass is off");
    }
    h.list.emplace_back(pframe, cmd_profile_frame);
    h.list.emplace_back(ppatch, cmd_profile_patch);

    auto * niah = app->add_subcommand("niah", "Needle-in-a-haystack manifests, splicing and scoring");
    niah->require_subcommand(1);
    auto * nbuild = niah->add_subcommand("build", "Build a seeded case manifest from a catalog");
    nbuild->add_option("--catalog", a.catalog, "Catalog JSON")->required();
    nbuild->add_option("--lengths", a.lengths, "Haystack lengths in frames")->capture_default_str();
    nbuild->add_option("--cases-per-length", a.cases_per_length, "Cases per haystack length")->capture_default_str();
    nbuild->add_option("--needle-min", a.needle_min, "Shortest needle in frames")->capture_default_str();
    nbuild->add_option("--needle-max", a.needle_max, "Longest needle in frames")->capture_default_str();
    auto * nsplice = niah->add_subcommand("splice", "Splice one case's embeddings");
    nsplice->add_option("--manifest", a.manifest, "Case manifest")->required();
    nsplice->add_option("--case-id", a.case_id, "Case to splice")->required();
    nsplice->add_option("--haystack", a.haystack, "Haystack video sidecar or FRAME_SET")->required();
    nsplice->add_option("--needle", a.needle, "Needle video sidecar or FRAME_SET")->required();
    auto * nscore = niah->add_subcommand("score", "Accuracy per haystack length and depth bucket");
    nscore->add_option("--manifest", a.manifest, "Case manifest")->required();
    nscore->add_option("--predictions", a.predictions, "JSON lines {case_id, answer}")->required();
    nscore->add_option("--buckets", a.buckets, "Depth buckets")->capture_default_str()->check(CLI::PositiveNumber);
    h.list.emplace_back(nbuild, cmd_niah_build);
    h.list.emplace_back(nsplice, cmd_niah_splice);
    h.list.emplace_back(nscore, cmd_niah_score);

    auto * sweep = app->add_subcommand("sweep", "Grid over (alpha, tau)");
    add_distill_flags(sweep, a.sweep, true);
    sweep->add_option("--taus", a.taus, "Threshold grid")->capture_default_str();
    sweep->add_option("--alphas", a.alphas, "Temperature grid")->capture_default_str();
    sweep->add_option("--predictions", a.predictions,
                      "JSON lines {tau, alpha, score} or {tau, alpha, correct} for the score column");
    h.list.emplace_back(sweep, cmd_sweep);

    auto * gen = app->add_subcommand("gen", "Write a synthetic video, query and optional attention dumps");
    gen->add_option("--n", a.synth.n_frames, "Frames")->capture_default_str();
    gen->add_option("--m", a.synth.m_patches, "Patches per frame (0: frames only)")->capture_default_str();
    gen->add_option("--df", a.synth.d_f, "Frame embedding dimension")->capture_default_str();
    gen->add_option("--dp", a.synth.d_p, "Patch embedding dimension")->capture_default_str();
    gen->add_option("--clusters", a.synth.cluster_centers, "Cluster centers")->capture_default_str();
    gen->add_option("--blend", a.synth.blend, "Pull toward the cluster center, 0..1")->capture_default_str();
    gen->add_option("--video-id", a.synth.video_id, "Video id and file stem")->capture_default_str();
    gen->add_option("--attention", a.gen_attention, "TOP_FRAC MASS_FRAC: frame-level attention dump")
        ->expected(2);
    gen->add_option("--patch-attention", a.gen_patch_attention,
                    "K TOP_FRAC MASS_FRAC: patch-level attention dump with K keyframes")
        ->expected(3);
    h.list.emplace_back(gen, cmd_gen);

    app->add_subcommand("man", "Print the manual page (roff)");
    return app;
}

std::string roff_escape(std::string s) {
    std::string out;
    for (char c : s) {
        if (c == '\\') {
            out += "\\e";
        } else if (c == '-') {
            out += "\\-";
        } else {
            out += c;
        }
    }
    if (!out.empty() && (out[0] == '.' || out[0] == '\'')) {
        out = "\\&" + out;
    }
    return out;
}

void roff_options(std::ostringstream & s, const CLI::App & app) {
    for (const CLI::Option * opt : app.get_options()) {
        if (opt->get_name() == "--help" || opt->get_name() == "-h,--help") {
            continue;
        }
        std::string names = opt->get_name(false, true);
        s << ".TP\n\\fB" << roff_escape(names) << "\\fR";
        if (opt->get_type_size() != 0) {
            s << " \\fI" << roff_escape(opt->get_type_name()) << "\\fR";
        }
        s << "\n" << roff_escape(opt->get_description());
        if (!opt->get_default_str().empty()) {
            s << " (default: " << roff_escape(opt->get_default_str()) << ")";
        }
        if (!opt->get_envname().empty()) {
            s << " [env: " << roff_escape(opt->get_envname()) << "]";
        }
        s << "\n";
    }
}

void roff_commands(std::ostringstream & s, const CLI::App & app, const std::string & prefix) {
    for (const CLI::App * sub : app.get_subcommands([](const CLI::App *) { return true; })) {
        const std::string name = prefix.empty() ? sub->get_name() : prefix + " " + sub->get_name();
        s << ".SS " << roff_escape(name) << "\n" << roff_escape(sub->get_description()) << "\n";
        roff_options(s, *sub);
        roff_commands(s, *sub, name);
    }
}

} // namespace

std::string manual_page() {
    Args a;
    Handlers h;
    auto app = build_app(a, h);
    std::ostringstream s;
    s << ".TH VDISTILL 1 \"\" \"vdistill " << tool_version() << "\" \"User Commands\"\n"
      << ".SH NAME\nvdistill \\- " << roff_escape(app->get_description()) << "\n"
      << ".SH SYNOPSIS\n\\fBvdistill\\fR [\\fIglobal options\\fR] \\fIcommand\\fR [\\fIoptions\\fR]\n"
      << ".SH DESCRIPTION\n"
         "Inputs are little\\-endian float32 tensor files (magic VLMP, version 1) and JSON sidecars. "
         "Every artifact records the tool version, the resolved configuration and the SHA\\-256 of each input; "
         "CSV artifacts carry this as leading '# ' comment lines. Identical inputs and seed give byte\\-identical "
         "output regardless of \\fB\\-\\-jobs\\fR.\n"
      << ".SH GLOBAL OPTIONS\n";
    roff_options(s, *app);
    s << ".SH COMMANDS\n";
    roff_commands(s, *app, "");
    s << ".SH CSV COLUMNS\n"
         ".TP\nprofile\npercentile (0..100), cumulative_mass (share of mass in the top percentile of items), "
         "mean_similarity (mean over items in that rank percentile; empty when none)\n"
         ".TP\nsweep\ntau, alpha, n_videos, mean_keyframes, mean_reduction, score (empty without predictions)\n"
         ".TP\nniah score\nlength, bucket_lo, bucket_hi, correct, total, accuracy (empty for empty cells)\n"
         ".TP\ndistill \\-\\-dump\\-weights\nframe_index, patch, weight\n"
      << ".SH ENVIRONMENT\n.TP\nVLMP_OUT_DIR\nFallback for \\fB\\-\\-out\\-dir\\fR.\n"
      << ".SH EXIT STATUS\n0 on success, 1 on a data or validation error, 2 on a usage error. "
         "Diagnostics go to standard error.\n";
    return s.str();
}

int dispatch(const std::vector<std::string> & args, std::ostream & out, std::ostream & err) {
    Args a;
    Handlers h;
    auto app = build_app(a, h);
    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app->parse(rev);
    } catch (const CLI::ParseError & e) {
        if (e.get_exit_code() == 0) {
            out << app->help();
            return 0;
        }
        err << "error: " << e.what() << "\n\n" << app->help();
        return 2;
    }
    try {
        if (app->got_subcommand("man")) {
            out << manual_page();
            return 0;
        }
        Emitter em(a.g, out, err);
        for (const auto & [sub, fn] : h.list) {
            if (sub->parsed()) {
                return fn(a, em);
            }
        }
        err << app->help();
        return 2;
    } catch (const UsageError & e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error & e) {
        err << "error [" << error_code_name(e.code()) << "]: " << e.what() << "\n";
        return e.code() == ErrorCode::InvalidConfig ? 2 : 1;
    } catch (const std::exception & e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace vdistill
