#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "cumamba/image_io.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace cumamba;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out, err;
};

Outcome run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("cumamba_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

fs::path write_config(const fs::path& dir, std::size_t steps) {
    const fs::path p = dir / "tiny.cfg";
    std::ofstream(p) << "levels = 2\nblocks_per_level = 1,1\nbase_width = 4\nstate_size = 4\npatch_h = 16\n"
                        "patch_w = 16\nsteps = "
                     << steps << "\nbatch = 2\nlr_start = 1e-3\ntrain_images = 4\ntest_images = 2\nlog_every = 2\n";
    return p;
}

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> d(0, 255);
    Image img({h, w, 3});
    for (float& v : img.mutable_data()) v = static_cast<float>(d(rng)) / 255.0f;
    return img;
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(run({}).code == cli::kExitUsage);
    CHECK(run({"train", "--bogus"}).code == cli::kExitUsage);
    CHECK(run({"frobnicate"}).code == cli::kExitUsage);
    CHECK(run({"infer", "--input", "x.png"}).code == cli::kExitUsage);
    CHECK(run({"train", "--threads", "0"}).code == cli::kExitUsage);
    const auto missing = run({"train", "--config", "/nonexistent/file.cfg"});
    CHECK(missing.code == cli::kExitUsage);
    CHECK(missing.err.find("does not exist") != std::string::npos);
    CHECK(run({"--help"}).code == cli::kExitOk);
}

TEST_CASE("malformed config is a usage error naming the line") {
    const fs::path dir = scratch("badcfg");
    std::ofstream(dir / "bad.cfg") << "levels = 2\nwat = 3\n";
    const auto r = run({"train", "--config", (dir / "bad.cfg").string(), "--out", (dir / "o").string()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("line 2") != std::string::npos);
}

TEST_CASE("train writes checkpoint, log and a replayable manifest") {
    const fs::path dir = scratch("train");
    const fs::path cfg = write_config(dir, 4);
    const auto r = run({"train", "--config", cfg.string(), "--seed", "7", "--out", (dir / "a").string()});
    REQUIRE(r.code == cli::kExitOk);
    for (const char* f : {"checkpoint.bin", "log.csv", "config.cfg", "manifest_train.json"})
        CHECK(fs::exists(dir / "a" / f));
    const auto m = nlohmann::json::parse(slurp(dir / "a" / "manifest_train.json"));
    CHECK(m["seed"] == 7);
    CHECK(m["subcommand"] == "train");
    CHECK(m["version"].get<std::string>().size() > 0);
    CHECK(m["config"].get<std::string>().find("seed = 7") != std::string::npos);

    const auto replay = run({"train", "--config", (dir / "a" / "config.cfg").string(), "--out", (dir / "b").string()});
    REQUIRE(replay.code == cli::kExitOk);
    CHECK(slurp(dir / "a" / "checkpoint.bin") == slurp(dir / "b" / "checkpoint.bin"));
}

TEST_CASE("infer with a zero-initialized network returns the input") {
    const fs::path dir = scratch("infer");
    REQUIRE(run({"train", "--config", write_config(dir, 0).string(), "--out", (dir / "z").string()}).code == 0);
    const Image img = random_image(20, 37, 3);
    save_image((dir / "in.ppm").string(), img);
    const auto r = run({"infer", "--checkpoint", (dir / "z" / "checkpoint.bin").string(), "--input",
                        (dir / "in.ppm").string(), "--output", (dir / "out.ppm").string(), "--out", dir.string()});
    REQUIRE(r.code == cli::kExitOk);
    CHECK(slurp(dir / "in.ppm") == slurp(dir / "out.ppm"));
    CHECK(fs::exists(dir / "manifest_infer.json"));

    save_image((dir / "small.png").string(), random_image(8, 8, 4));
    const auto small = run({"infer", "--checkpoint", (dir / "z" / "checkpoint.bin").string(), "--input",
                            (dir / "small.png").string(), "--out", dir.string()});
    CHECK(small.code == cli::kExitUsage);
    CHECK(small.err.find("patch") != std::string::npos);
}

TEST_CASE("eval on identical pairs reports infinite PSNR and SSIM 1") {
    const fs::path dir = scratch("eval");
    REQUIRE(run({"train", "--config", write_config(dir, 0).string(), "--out", (dir / "z").string()}).code == 0);
    fs::create_directories(dir / "clean");
    fs::create_directories(dir / "deg");
    for (int i = 0; i < 2; ++i) {
        const Image img = random_image(16, 24, 10 + i);
        const std::string name = "img" + std::to_string(i) + ".png";
        save_image((dir / "clean" / name).string(), img);
        save_image((dir / "deg" / name).string(), img);
    }
    const auto r = run({"eval", "--checkpoint", (dir / "z" / "checkpoint.bin").string(), "--degraded",
                        (dir / "deg").string(), "--clean", (dir / "clean").string(), "--out", dir.string()});
    REQUIRE(r.code == cli::kExitOk);
    CHECK(r.out.find("mean                             inf         inf    1.0000    1.0000") != std::string::npos);
    std::ofstream(dir / "clean" / "extra.png") << "x";
    const auto unpaired = run({"eval", "--checkpoint", (dir / "z" / "checkpoint.bin").string(), "--degraded",
                               (dir / "deg").string(), "--clean", (dir / "clean").string(), "--out", dir.string()});
    CHECK(unpaired.code == cli::kExitUsage);
    CHECK(unpaired.err.find("extra.png") != std::string::npos);
}

TEST_CASE("corrupt checkpoint is a runtime failure") {
    const fs::path dir = scratch("corrupt");
    std::ofstream(dir / "bad.bin") << "not a checkpoint";
    save_image((dir / "in.png").string(), random_image(16, 16, 1));
    const auto r = run({"infer", "--checkpoint", (dir / "bad.bin").string(), "--input", (dir / "in.png").string(),
                        "--out", dir.string()});
    CHECK(r.code == cli::kExitFailure);
}

TEST_CASE("bench writes the documented CSV schema") {
    const fs::path dir = scratch("bench");
    const auto r = run({"bench", "--lmin", "6", "--lmax", "8", "--channels", "4,8", "--state", "4", "--out",
                        dir.string()});
    REQUIRE(r.code == cli::kExitOk);
    std::istringstream csv(slurp(dir / "bench.csv"));
    std::string header;
    std::getline(csv, header);
    CHECK(header == "kernel,L,C,N,threads,reps,median_s,min_s,max_s,throughput");
    std::size_t rows = 0;
    for (std::string line; std::getline(csv, line);) ++rows;
    CHECK(rows == 3 * 2 * 2 + 3);
    CHECK(fs::exists(dir / "manifest_bench.json"));
    CHECK(run({"bench", "--reps", "3", "--out", dir.string()}).code == cli::kExitUsage);
}

TEST_CASE("gradcheck subcommand passes") {
    const fs::path dir = scratch("gradcheck");
    const auto r = run({"gradcheck", "--out", dir.string()});
    CHECK(r.code == cli::kExitOk);
    CHECK(r.out.find("all passed") != std::string::npos);
}
