#include "support.hpp"

#include "vdistill/cli.hpp"
#include "vdistill/tensor_file.hpp"

#include "doctest.h"
#include "json.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace vdtest;

namespace {

struct Run {
    int         code = 0;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.code = dispatch(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const std::filesystem::path & p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_CASE("budget") {
    const auto r = run({"budget", "--n", "1000", "--m", "196", "--k", "50"});
    CHECK(r.code == 0);
    CHECK(r.out.find("original=196000") != std::string::npos);
    CHECK(r.out.find("compressed=10750") != std::string::npos);
    CHECK(r.out.find("reduction=94.52%") != std::string::npos);
    const auto j = run({"--format", "json", "budget", "--n", "4", "--m", "2", "--k", "1"});
    CHECK(nlohmann::json::parse(j.out)["budget"]["compressed_tokens"] == 5);
}

TEST_CASE("usage errors exit 2") {
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({}).code == 2);
    CHECK(run({"budget", "--n", "4"}).code == 2);
    CHECK(run({"--format", "xml", "budget", "--n", "4", "--m", "2", "--k", "1"}).code == 2);
}

TEST_CASE("data errors exit 1") {
    TempDir tmp("cli");
    std::ofstream(tmp / "junk.bin") << "not a tensor";
    const auto r = run({"validate", (tmp / "junk.bin").string()});
    CHECK(r.code == 1);
}

TEST_CASE("gen, validate, distill") {
    TempDir tmp("cli");
    const std::string dir = tmp.path.string();
    REQUIRE(run({"--seed", "3", "--out-dir", dir, "gen", "--n", "12", "--m", "3", "--df", "6", "--dp", "5",
                 "--clusters", "2", "--blend", "0.8", "--video-id", "vid", "--attention", "0.1", "0.9"})
                .code == 0);
    for (const char * f : {"vid.frames.bin", "vid.patches.bin", "vid.json", "vid.attention.bin"}) {
        CHECK(std::filesystem::exists(tmp / f));
    }
    CHECK(run({"validate", (tmp / "vid.json").string(), (tmp / "vid.attention.bin").string()}).code == 0);

    const std::vector<std::string> base = {"distill", "--video", (tmp / "vid.json").string(), "--query",
                                           (tmp / "vid.query_frame.bin").string(), "--query-patch",
                                           (tmp / "vid.query_patch.bin").string(), "--k", "4"};
    const auto a = run(base);
    REQUIRE(a.code == 0);
    CHECK(a.out == run(base).out);
    const auto j = nlohmann::json::parse(a.out);
    CHECK(j["token_count"] == j["budget"]["compressed_tokens"]);

    auto streamed = base;
    streamed.push_back("--stream");
    auto sj = nlohmann::json::parse(run(streamed).out);
    CHECK(sj["items"] == j["items"]);
    CHECK(sj["selection"] == j["selection"]);
}

TEST_CASE("one frame distills to its single keyframe") {
    TempDir tmp("cli");
    const std::string dir = tmp.path.string();
    REQUIRE(run({"--out-dir", dir, "gen", "--n", "1", "--m", "2", "--video-id", "one"}).code == 0);
    const auto r = run({"distill", "--video", (tmp / "one.json").string(), "--query", (tmp / "one.query.bin").string()});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["items"].size() == 1);
    CHECK(j["items"][0]["type"] == "keyframe");
    CHECK(j["saturated"] == false);
}

TEST_CASE("out dir from the environment") {
    TempDir tmp("cli");
    ::setenv("VLMP_OUT_DIR", tmp.path.c_str(), 1);
    const auto r = run({"gen", "--n", "3", "--m", "0", "--video-id", "env"});
    ::unsetenv("VLMP_OUT_DIR");
    CHECK(r.code == 0);
    CHECK(std::filesystem::exists(tmp / "env.frames.bin"));
}

TEST_CASE("niah build is byte-identical across runs") {
    TempDir tmp("cli");
    std::ofstream(tmp / "cat.json") << R"([{"video_id": "h", "length": 3000},
        {"video_id": "n", "length": 90, "query_id": "q", "answer_key": "B"}])";
    const std::vector<std::string> args = {"--seed", "5", "niah", "build", "--catalog", (tmp / "cat.json").string(),
                                           "--lengths", "2000", "--cases-per-length", "20"};
    const auto a = run(args);
    REQUIRE(a.code == 0);
    CHECK(a.out == run(args).out);
    CHECK(nlohmann::json::parse(a.out)["cases"].size() == 20);
}

TEST_CASE("manual page") {
    const auto r = run({"man"});
    CHECK(r.code == 0);
    CHECK(r.out.rfind(".TH", 0) == 0);
    CHECK(r.out.find("distill") != std::string::npos);
    CHECK(manual_page() == r.out);
}
