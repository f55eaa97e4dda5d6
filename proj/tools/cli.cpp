#include "cli.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "cumamba/bench.hpp"
#include "cumamba/config.hpp"
#include "cumamba/gradcheck.hpp"
#include "cumamba/image_io.hpp"
#include "cumamba/objective.hpp"
#include "cumamba/runtime.hpp"
#include "cumamba/training.hpp"
#include "cumamba/unet.hpp"
#include "json.hpp"

namespace cumamba::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Input errors found after flag parsing map to the usage exit code.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::size_t threads = 1;
    std::string out_dir;
};

std::string join_args(const std::vector<std::string>& args) {
    std::string s = "cumamba";
    for (const auto& a : args) s += " " + a;
    return s;
}

void write_manifest(const std::string& dir, const std::string& subcommand, const std::vector<std::string>& args,
                    json details) {
    fs::create_directories(dir);
    json m;
    m["tool"] = "cumamba";
    m["version"] = kVersion;
    m["subcommand"] = subcommand;
    m["argv"] = args;
    m["command"] = join_args(args);
    for (auto& [key, value] : details.items()) m[key] = value;
    const fs::path path = fs::path(dir) / ("manifest_" + subcommand + ".json");
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write manifest '" + path.string() + "'");
    f << m.dump(2) << "\n";
}

RunConfig resolve_config(const Common& c) {
    RunConfig cfg;
    if (!c.config_path.empty()) {
        if (!fs::exists(c.config_path)) throw UsageError("config file '" + c.config_path + "' does not exist");
        try {
            cfg = load_config(c.config_path);
        } catch (const ConfigError& e) {
            throw UsageError(e.what());
        }
    }
    if (c.seed) cfg.seed = *c.seed;
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("invalid configuration: ") + e.what());
    }
    return cfg;
}

std::string fmt(double v, int precision = 3) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << v;
    return s.str();
}

Checkpoint open_checkpoint(const std::string& path) {
    if (!fs::exists(path)) throw UsageError("checkpoint '" + path + "' does not exist");
    return load_checkpoint(path);
}

std::unique_ptr<CuMambaNet<float>> network_from(const Checkpoint& ckpt) {
    auto net = std::make_unique<CuMambaNet<float>>(ckpt.config.model, ckpt.config.seed);
    load_parameters(*net, ckpt);
    return net;
}

Image restore(const CuMambaNet<float>& net, const Image& image, std::size_t overlap) {
    const auto& m = net.config();
    if (image.size(0) < m.patch_h || image.size(1) < m.patch_w) {
        throw UsageError("image is " + std::to_string(image.size(0)) + "x" + std::to_string(image.size(1)) +
                         " but the network patch is " + std::to_string(m.patch_h) + "x" + std::to_string(m.patch_w) +
                         "; pad or upscale it first");
    }
    NoGradGuard guard;
    Image out = tiled_infer(net, image, overlap);
    for (float& v : out.mutable_data()) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

bool is_image_path(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return ext == ".png" || ext == ".ppm";
}

std::size_t default_overlap(const CuMambaNet<float>& net) {
    return std::min(net.config().patch_h, net.config().patch_w) / 4;
}

void check_overlap(const CuMambaNet<float>& net, std::size_t overlap) {
    if (2 * overlap >= std::min(net.config().patch_h, net.config().patch_w))
        throw UsageError("--overlap must be less than half the network patch");
}

int cmd_train(const Common& c, const std::vector<std::string>& args, std::ostream& out) {
    const RunConfig cfg = resolve_config(c);
    set_num_threads(c.threads);
    const std::string dir = c.out_dir.empty() ? "runs/train" : c.out_dir;
    fs::create_directories(dir);
    {
        std::ofstream f(fs::path(dir) / "config.cfg");
        f << to_text(cfg);
    }
    write_manifest(dir, "train", args,
                   {{"seed", cfg.seed},
                    {"threads", c.threads},
                    {"config", to_text(cfg)},
                    {"replay", "cumamba train --config " + (fs::path(dir) / "config.cfg").string() + " --seed " +
                                   std::to_string(cfg.seed) + " --threads " + std::to_string(c.threads) +
                                   " --out " + dir}});
    out << "training " << block_kind_name(cfg.model.kind) << " for " << cfg.train.steps << " steps into " << dir
        << "\n";
    const TrainResult r = train_loop(cfg, dir, [&](const LogRow& row) {
        out << "step " << row.step << " lr " << std::scientific << std::setprecision(3) << row.lr << std::defaultfloat
            << " loss " << fmt(row.loss, 5) << " psnr " << fmt(row.psnr) << " ssim " << fmt(row.ssim, 4) << "\n";
        out.flush();
    });
    out << "test set (" << r.eval.images << " images): psnr " << fmt(r.eval.psnr_degraded) << " -> "
        << fmt(r.eval.psnr_restored) << " dB, ssim " << fmt(r.eval.ssim_degraded, 4) << " -> "
        << fmt(r.eval.ssim_restored, 4) << "\n";
    out << "checkpoint: " << (fs::path(dir) / "checkpoint.bin").string() << "\n";
    return kExitOk;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& degraded_dir,
             const std::string& clean_dir, std::optional<std::size_t> overlap, const std::vector<std::string>& args,
             std::ostream& out) {
    set_num_threads(c.threads);
    for (const auto& d : {degraded_dir, clean_dir})
        if (!fs::is_directory(d)) throw UsageError("'" + d + "' is not a directory");
    const Checkpoint ckpt = open_checkpoint(checkpoint);
    const auto net = network_from(ckpt);
    const std::size_t ov = overlap.value_or(default_overlap(*net));
    check_overlap(*net, ov);

    std::vector<fs::path> names;
    for (const auto& e : fs::directory_iterator(clean_dir))
        if (e.is_regular_file() && is_image_path(e.path())) names.push_back(e.path().filename());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw UsageError("no .png or .ppm images in '" + clean_dir + "'");
    for (const auto& n : names)
        if (!fs::exists(fs::path(degraded_dir) / n))
            throw UsageError("'" + n.string() + "' has no partner in '" + degraded_dir + "'");

    const std::string dir = c.out_dir.empty() ? "." : c.out_dir;
    write_manifest(dir, "eval", args,
                   {{"threads", c.threads},
                    {"checkpoint", checkpoint},
                    {"degraded", degraded_dir},
                    {"clean", clean_dir},
                    {"overlap", ov},
                    {"config", to_text(ckpt.config)}});
    std::ofstream csv(fs::path(dir) / "eval.csv");
    csv << "image,psnr_degraded,psnr_restored,ssim_degraded,ssim_restored\n";

    out << std::left << std::setw(24) << "image" << std::right << std::setw(12) << "psnr_in" << std::setw(12)
        << "psnr_out" << std::setw(10) << "ssim_in" << std::setw(10) << "ssim_out" << "\n";
    double sums[4] = {0, 0, 0, 0};
    for (const auto& n : names) {
        const Image clean = load_image((fs::path(clean_dir) / n).string());
        const Image degraded = load_image((fs::path(degraded_dir) / n).string());
        if (clean.shape() != degraded.shape())
            throw UsageError("'" + n.string() + "' differs in size between the two directories");
        const Image restored = restore(*net, degraded, ov);
        const double v[4] = {psnr(degraded, clean), psnr(restored, clean), ssim(degraded, clean),
                             ssim(restored, clean)};
        for (int i = 0; i < 4; ++i) sums[i] += v[i];
        out << std::left << std::setw(24) << n.string() << std::right << std::setw(12) << fmt(v[0]) << std::setw(12)
            << fmt(v[1]) << std::setw(10) << fmt(v[2], 4) << std::setw(10) << fmt(v[3], 4) << "\n";
        csv << n.string() << "," << v[0] << "," << v[1] << "," << v[2] << "," << v[3] << "\n";
    }
    const double k = static_cast<double>(names.size());
    out << std::left << std::setw(24) << "mean" << std::right << std::setw(12) << fmt(sums[0] / k) << std::setw(12)
        << fmt(sums[1] / k) << std::setw(10) << fmt(sums[2] / k, 4) << std::setw(10) << fmt(sums[3] / k, 4)
        << "\n";
    return kExitOk;
}

int cmd_infer(const Common& c, const std::string& checkpoint, const std::string& input, std::string output,
              std::optional<std::size_t> overlap, const std::vector<std::string>& args, std::ostream& out) {
    set_num_threads(c.threads);
    if (!fs::exists(input)) throw UsageError("input image '" + input + "' does not exist");
    const Checkpoint ckpt = open_checkpoint(checkpoint);
    const auto net = network_from(ckpt);
    const std::size_t ov = overlap.value_or(default_overlap(*net));
    check_overlap(*net, ov);
    const std::string dir = c.out_dir.empty() ? "." : c.out_dir;
    if (output.empty()) output = (fs::path(dir) / ("restored" + fs::path(input).extension().string())).string();
    (void)format_from_path(output);
    write_manifest(dir, "infer", args,
                   {{"threads", c.threads},
                    {"checkpoint", checkpoint},
                    {"input", input},
                    {"output", output},
                    {"overlap", ov},
                    {"config", to_text(ckpt.config)}});
    const Image image = load_image(input);
    const Image restored = restore(*net, image, ov);
    if (fs::path(output).has_parent_path()) fs::create_directories(fs::path(output).parent_path());
    save_image(output, restored);
    out << "wrote " << output << " (" << image.size(0) << "x" << image.size(1) << ")\n";
    return kExitOk;
}

struct BenchArgs {
    unsigned lo = 10, hi = 16;
    std::vector<std::size_t> channels{16, 32};
    std::size_t state = 16;
    std::size_t reps = kMinBenchReps;
    std::size_t warmup = 1;
    std::size_t chunk = 64;
    bool no_attention = false;
    bool no_sequential = false;
    unsigned attention_hi = 0;
};

int cmd_bench(const Common& c, const BenchArgs& b, const std::vector<std::string>& args, std::ostream& out) {
    if (b.lo > b.hi) throw UsageError("--lmin must not exceed --lmax");
    if (b.hi > 24) throw UsageError("--lmax above 24 would exhaust memory");
    BenchOptions o;
    o.L_grid = geometric_grid(b.lo, b.hi);
    o.C_grid = b.channels;
    o.N = b.state;
    o.threads = c.threads;
    o.reps = b.reps;
    o.warmup = b.warmup;
    o.chunk = b.chunk;
    o.sequential = !b.no_sequential;
    o.attention = !b.no_attention;
    o.attention_max_L = b.attention_hi ? std::size_t{1} << b.attention_hi : 0;
    o.seed = c.seed.value_or(0);
    if (o.reps < kMinBenchReps) throw UsageError("--reps must be at least " + std::to_string(kMinBenchReps));
    const std::string dir = c.out_dir.empty() ? "runs/bench" : c.out_dir;
    write_manifest(dir, "bench", args,
                   {{"seed", o.seed},
                    {"threads", o.threads},
                    {"lmin", b.lo},
                    {"lmax", b.hi},
                    {"channels", b.channels},
                    {"state", b.state},
                    {"reps", b.reps},
                    {"warmup", b.warmup},
                    {"chunk", b.chunk},
                    {"attention", o.attention},
                    {"attention_lmax", b.attention_hi}});
    const auto records = scaling_bench(o, [&](const BenchRecord& r) {
        out << r.kernel << " L=" << r.L << " C=" << r.C << " median " << std::scientific << std::setprecision(3)
            << r.median_s << " s" << std::defaultfloat << "\n";
        out.flush();
    });
    const fs::path csv_path = fs::path(dir) / "bench.csv";
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("cannot write '" + csv_path.string() + "'");
    write_bench_csv(csv, records);
    const auto top = top_half(o.L_grid);
    out << "scan_parallel slope (C=" << o.C_grid.front() << ", top half): "
        << fmt(loglog_slope(records, "scan_parallel", o.C_grid.front(), top)) << "\n";
    if (o.attention) {
        std::vector<std::size_t> att;
        for (std::size_t L : top)
            if (o.attention_max_L == 0 || L <= o.attention_max_L) att.push_back(L);
        if (att.size() >= 2)
            out << "attention slope (top half): " << fmt(loglog_slope(records, "attention", o.C_grid.front(), att))
                << "\n";
    }
    for (std::size_t C : o.C_grid)
        if (std::find(o.C_grid.begin(), o.C_grid.end(), 2 * C) != o.C_grid.end())
            out << "channel doubling " << C << "->" << 2 * C << " at L=" << o.L_grid.back() << ": "
                << fmt(channel_doubling_ratio(records, "scan_parallel", o.L_grid.back(), C)) << "\n";
    out << "csv: " << csv_path.string() << "\n";
    return kExitOk;
}

int cmd_gradcheck(const Common& c, const std::vector<std::string>& args, std::ostream& out) {
    set_num_threads(c.threads);
    const std::uint64_t seed = c.seed.value_or(2024);
    const std::string dir = c.out_dir.empty() ? "." : c.out_dir;
    write_manifest(dir, "gradcheck", args, {{"seed", seed}, {"threads", c.threads}});
    const auto results = run_gradcheck_suite(seed);
    bool ok = true;
    for (const auto& r : results) {
        ok = ok && r.passed;
        out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(28) << r.name << std::right
            << " max rel err " << std::scientific << std::setprecision(2) << r.max_rel_error << std::defaultfloat
            << " over " << r.entries << " entries";
        if (!r.passed) out << " (worst " << r.worst << ")";
        out << "\n";
    }
    out << results.size() << " checks, " << (ok ? "all passed" : "FAILURES") << "\n";
    return ok ? kExitOk : kExitFailure;
}

int cmd_ablate(const Common& c, const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& kind_names,
               const std::vector<std::string>& args, std::ostream& out) {
    const RunConfig cfg = resolve_config(c);
    set_num_threads(c.threads);
    std::vector<BlockKind> kinds;
    try {
        for (const auto& k : kind_names) kinds.push_back(parse_block_kind(k));
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (kinds.empty()) kinds = kAllBlockKinds;
    const std::string dir = c.out_dir.empty() ? "runs/ablate" : c.out_dir;
    write_manifest(dir, "ablate", args,
                   {{"seeds", seeds}, {"kinds", kind_names}, {"threads", c.threads}, {"config", to_text(cfg)}});
    const auto rows = ablation_harness(
        cfg, seeds,
        [&](const std::string& line) {
            out << line << "\n";
            out.flush();
        },
        kinds);
    const std::string table = format_ablation(rows);
    out << table;
    std::ofstream(fs::path(dir) / "ablation.txt") << table;
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"CU-Mamba image restoration: training, evaluation, inference and benchmarks", "cumamba"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    Common common;
    auto add_common = [&](CLI::App* sub, bool config, bool seed) {
        if (config) sub->add_option("--config", common.config_path, "key=value configuration file");
        if (seed) sub->add_option("--seed", common.seed, "seed overriding the configuration");
        sub->add_option("--threads", common.threads, "worker threads (default 1)")->check(CLI::PositiveNumber);
        sub->add_option("--out", common.out_dir, "output directory");
    };

    CLI::App* train = app.add_subcommand("train", "train a network and write checkpoint, log and manifest");
    add_common(train, true, true);

    std::string checkpoint, degraded_dir, clean_dir, input, output;
    std::optional<std::size_t> overlap;
    CLI::App* eval = app.add_subcommand("eval", "PSNR/SSIM of a checkpoint over paired image directories");
    add_common(eval, false, false);
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--degraded", degraded_dir, "directory of degraded images")->required();
    eval->add_option("--clean", clean_dir, "directory of clean images with the same file names")->required();
    eval->add_option("--overlap", overlap, "tile overlap in pixels");

    CLI::App* infer = app.add_subcommand("infer", "restore one image with a checkpoint");
    add_common(infer, false, false);
    infer->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    infer->add_option("--input", input, "degraded .png or .ppm image")->required();
    infer->add_option("--output", output, "restored image path (default <out>/restored.<ext>)");
    infer->add_option("--overlap", overlap, "tile overlap in pixels");

    BenchArgs bench_args;
    CLI::App* bench = app.add_subcommand("bench", "time the scans and the attention reference, write a CSV");
    add_common(bench, false, true);
    bench->add_option("--lmin", bench_args.lo, "smallest length exponent (L = 2^lmin)");
    bench->add_option("--lmax", bench_args.hi, "largest length exponent");
    bench->add_option("--channels", bench_args.channels, "channel counts")->delimiter(',');
    bench->add_option("--state", bench_args.state, "state size N")->check(CLI::PositiveNumber);
    bench->add_option("--reps", bench_args.reps, "timed repetitions (at least 5)");
    bench->add_option("--warmup", bench_args.warmup, "discarded repetitions");
    bench->add_option("--chunk", bench_args.chunk, "parallel scan chunk")->check(CLI::PositiveNumber);
    bench->add_flag("--no-attention", bench_args.no_attention, "skip the attention reference");
    bench->add_flag("--no-sequential", bench_args.no_sequential, "skip the sequential scan");
    bench->add_option("--attention-lmax", bench_args.attention_hi, "largest attention length exponent");

    CLI::App* grad = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
    add_common(grad, false, true);

    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::vector<std::string> kinds;
    CLI::App* ablate = app.add_subcommand("ablate", "train each block variant over several seeds");
    add_common(ablate, true, false);
    ablate->add_option("--seeds", seeds, "seeds")->delimiter(',');
    ablate->add_option("--kinds", kinds, "resblock,spatial,channel,combined")->delimiter(',');

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*train) return cmd_train(common, args, out);
        if (*eval) return cmd_eval(common, checkpoint, degraded_dir, clean_dir, overlap, args, out);
        if (*infer) return cmd_infer(common, checkpoint, input, output, overlap, args, out);
        if (*bench) return cmd_bench(common, bench_args, args, out);
        if (*grad) return cmd_gradcheck(common, args, out);
        if (*ablate) {
            if (seeds.empty()) throw UsageError("--seeds needs at least one seed");
            return cmd_ablate(common, seeds, kinds, args, out);
        }
    } catch (const UsageError& e) {
        err << "cumamba: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "cumamba: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace cumamba::cli
