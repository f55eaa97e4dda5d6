// Acceptance suite: one PASS/FAIL line per criterion.
//
//   cumamba_acceptance                 all criteria
//   cumamba_acceptance --criterion 5   one criterion
//
// Exit status is 0 when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cumamba/bench.hpp"
#include "cumamba/blocks.hpp"
#include "cumamba/gradcheck.hpp"
#include "cumamba/objective.hpp"
#include "cumamba/runtime.hpp"
#include "cumamba/ssm.hpp"
#include "cumamba/training.hpp"
#include "cumamba/unet.hpp"

using namespace cumamba;

namespace {

struct Verdict {
    bool pass = false;
    std::string summary;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fixed(double v, int precision) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << v;
    return s.str();
}

std::string sci(double v) {
    std::ostringstream s;
    s << std::scientific << std::setprecision(2) << v;
    return s.str();
}

void detail(const std::string& line) { std::cout << "    " << line << std::endl; }

template <typename T>
Tensor<T> uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor<T> t(std::move(shape));
    for (T& v : t.mutable_data()) v = static_cast<T>(d(rng));
    return t;
}

// The desk configuration shared by the training criteria.
RunConfig desk_config() {
    RunConfig c;
    c.model.levels = 2;
    c.model.blocks_per_level = {1, 1};
    c.model.base_width = 8;
    c.model.patch_h = c.model.patch_w = 32;
    c.model.kind = BlockKind::kCombined;
    c.train.batch = 4;
    c.train.lr_start = 1e-3;
    c.train.log_every = 100;
    c.seed = 1;
    return c;
}

// 1. Parallel scan against the sequential oracle.
Verdict scan_oracle() {
    const auto start = Clock::now();
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<std::size_t> Ld(1, 4096), Cd(1, 32), Nd(1, 16), chunkd(1, 256);
    std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(0.5));
    double worst_f = 0.0, worst_d = 0.0;
    const int instances = 200;
    for (int i = 0; i < instances; ++i) {
        const std::size_t L = Ld(rng), C = Cd(rng), N = Nd(rng), chunk = chunkd(rng);
        Tensor<double> delta({L, C});
        for (double& v : delta.mutable_data()) v = std::exp(log_dt(rng));
        const auto A = uniform<double>({C, N}, rng, -3.0, -0.1);
        const auto B = uniform<double>({L, N}, rng, -1.0, 1.0);
        const auto x = uniform<double>({L, C}, rng, -1.0, 1.0);
        const auto Ct = uniform<double>({L, N}, rng, -1.0, 1.0);
        const auto D = uniform<double>({C}, rng, -1.0, 1.0);
        const auto d = ssm::discretize(delta, A, B);
        const auto yd0 = ssm::scan_sequential(d.abar, d.bbar, x, Ct, D);
        const auto yd1 = ssm::scan_parallel(d.abar, d.bbar, x, Ct, D, chunk);
        for (std::size_t k = 0; k < yd0.numel(); ++k) worst_d = std::max(worst_d, std::abs(yd0[k] - yd1[k]));

        auto to_float = [](const Tensor<double>& t) {
            Tensor<float> f(t.shape());
            for (std::size_t k = 0; k < t.numel(); ++k) f.mutable_data()[k] = static_cast<float>(t[k]);
            return f;
        };
        const auto fa = to_float(d.abar), fb = to_float(d.bbar), fx = to_float(x), fc = to_float(Ct),
                   fD = to_float(D);
        const auto yf0 = ssm::scan_sequential(fa, fb, fx, fc, fD);
        const auto yf1 = ssm::scan_parallel(fa, fb, fx, fc, fD, chunk);
        for (std::size_t k = 0; k < yf0.numel(); ++k)
            worst_f = std::max(worst_f, static_cast<double>(std::abs(yf0[k] - yf1[k])));
    }
    const double t = seconds_since(start);
    detail("instances " + std::to_string(instances) + ", max |diff| float " + sci(worst_f) + " (limit 1e-5), double " +
           sci(worst_d) + " (limit 1e-10), " + fixed(t, 1) + " s (limit 60 s)");
    return {worst_f <= 1e-5 && worst_d <= 1e-10 && t < 60.0,
            "float " + sci(worst_f) + ", double " + sci(worst_d) + ", " + fixed(t, 1) + " s"};
}

// 2. Finite-difference gradient suite.
Verdict gradient_suite() {
    const auto start = Clock::now();
    const auto results = run_gradcheck_suite(2024);
    const double t = seconds_since(start);
    bool ok = true;
    double worst = 0.0;
    std::string worst_name;
    for (const auto& r : results) {
        ok = ok && r.passed;
        if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            worst_name = r.name + " " + r.worst;
        }
        detail(std::string(r.passed ? "ok   " : "FAIL ") + r.name + " rel err " + sci(r.max_rel_error) + " over " +
               std::to_string(r.entries) + " entries");
    }
    return {ok && t < 300.0, std::to_string(results.size()) + " checks, worst " + sci(worst) + " (" + worst_name +
                                 "), " + fixed(t, 1) + " s"};
}

// 3. Shape preservation, encoder geometry and the zero-init identity.
Verdict shape_identity() {
    std::mt19937_64 rng(303);
    InitRng init(304);
    bool ok = true;
    for (const auto& [C, H, W] : std::vector<std::tuple<std::size_t, std::size_t, std::size_t>>{
             {8, 32, 32}, {16, 16, 8}, {3, 5, 7}}) {
        const BlockConfig cfg{C, H, W, 8, 2, 4};
        SpatialSsmBlock<float> spatial(cfg, init);
        ChannelSsmBlock<float> channel(cfg, init);
        const auto x = uniform<float>({2, H, W, C}, rng, -1.0, 1.0);
        const Shape want{2, H, W, C};
        NoGradGuard guard;
        const bool same = spatial.forward(x).shape() == want && channel.forward(x).shape() == want;
        ok = ok && same;
        detail("blocks at " + std::to_string(H) + "x" + std::to_string(W) + "x" + std::to_string(C) + ": " +
               (same ? "shape preserved" : "SHAPE CHANGED"));
    }
    for (std::size_t levels : {2u, 3u, 4u}) {
        CuMambaConfig m = desk_config().model;
        m.levels = levels;
        m.blocks_per_level.assign(levels, 1);
        m.patch_h = m.patch_w = 32;
        CuMambaNet<float> net(m, 5);
        const auto image = uniform<float>({1, 32, 32, 3}, rng, 0.0, 1.0);
        NoGradGuard guard;
        const auto trace = net.trace(image);
        std::string shapes;
        for (std::size_t l = 0; l < trace.encoder.size(); ++l) {
            const Shape want{1, 32u >> l, 32u >> l, m.base_width << l};
            ok = ok && trace.encoder[l].shape() == want;
            shapes += (l ? " " : "") + shape_str(trace.encoder[l].shape());
        }
        ok = ok && trace.encoder.size() == levels;
        detail(std::to_string(levels) + "-level encoder: " + shapes);
    }
    std::size_t identical = 0, kinds = 0;
    for (BlockKind kind : kAllBlockKinds) {
        CuMambaConfig m = desk_config().model;
        m.kind = kind;
        CuMambaNet<float> net(m, 9);
        const auto image = uniform<float>({2, 32, 32, 3}, rng, 0.0, 1.0);
        NoGradGuard guard;
        const auto out = net.forward(image);
        const bool same = out.shape() == image.shape() &&
                          std::memcmp(out.data().data(), image.data().data(), image.numel() * sizeof(float)) == 0;
        identical += same;
        ++kinds;
        detail(block_kind_name(kind) + " zero-init output " + (same ? "bit-identical to input" : "DIFFERS"));
    }
    ok = ok && identical == kinds;
    return {ok, "block shapes, encoder geometry, identity " + std::to_string(identical) + "/" + std::to_string(kinds)};
}

// 4. Loss and metric anchors.
Verdict loss_anchors() {
    std::mt19937_64 rng(404);
    const auto img = uniform<double>({2, 16, 16, 3}, rng, 0.0, 1.0);
    const double loss = restoration_loss(img, img).item();
    const double fourier = fourier_l1(img, img).item();
    const double want = std::sqrt(1e-3);
    const Tensor<double> zero({32, 32, 3}, 0.0), tenth({32, 32, 3}, 0.1);
    const double p = psnr(zero, tenth);
    const auto natural = uniform<double>({32, 32, 3}, rng, 0.0, 1.0);
    const double s = ssim(natural, natural);
    detail("L(I, I) = " + fixed(loss, 10) + " (want " + fixed(want, 10) + "), fourier term " + sci(fourier));
    detail("PSNR(0, 0.1) = " + fixed(p, 9) + " dB, SSIM(x, x) = " + fixed(s, 12));
    const bool ok = std::abs(loss - want) < 1e-12 && fourier == 0.0 && std::abs(p - 20.0) <= 1e-6 &&
                    std::abs(s - 1.0) < 1e-12;
    return {ok, "loss " + fixed(loss, 7) + ", psnr " + fixed(p, 6) + ", ssim " + fixed(s, 6)};
}

// 5. Linear scaling of the scan against quadratic attention.
Verdict linear_scaling() {
    const auto start = Clock::now();
    BenchOptions o;
    o.L_grid = geometric_grid(10, 16);
    o.C_grid = {16, 32};
    o.N = 16;
    o.threads = 1;
    o.reps = kMinBenchReps;
    o.warmup = 1;
    o.seed = 505;
    const auto records = scaling_bench(o);
    const auto top = top_half(o.L_grid);
    const double scan = loglog_slope(records, "scan_parallel", 16, top);
    const double scan32 = loglog_slope(records, "scan_parallel", 32, top);
    const double seq = loglog_slope(records, "scan_sequential", 16, top);
    const double att = loglog_slope(records, "attention", 16, top);
    const double ratio = channel_doubling_ratio(records, "scan_parallel", o.L_grid.back(), 16);
    const double t = seconds_since(start);
    for (const auto& r : records)
        if (std::find(top.begin(), top.end(), r.L) != top.end())
            detail(r.kernel + " L=" + std::to_string(r.L) + " C=" + std::to_string(r.C) + " median " +
                   sci(r.median_s) + " s");
    detail("slopes over L = 2^13..2^16: scan_parallel " + fixed(scan, 3) + " (C=32: " + fixed(scan32, 3) +
           "), scan_sequential " + fixed(seq, 3) + ", attention " + fixed(att, 3));
    detail("C 16 -> 32 at L = 65536: time ratio " + fixed(ratio, 3) + "; " + fixed(t, 1) + " s (limit 600 s)");
    const bool ok = scan >= 0.8 && scan <= 1.2 && att >= 1.7 && ratio <= 2.5 && t < 600.0;
    return {ok, "scan slope " + fixed(scan, 3) + ", attention slope " + fixed(att, 3) + ", C-doubling " +
                    fixed(ratio, 2) + ", " + fixed(t, 0) + " s"};
}

// 6. Held-out denoising gain and single-pair memorization.
Verdict toy_restoration(std::size_t steps) {
    const auto start = Clock::now();
    RunConfig cfg = desk_config();
    cfg.train.steps = steps;
    const TrainResult r = train_loop(cfg, {}, [](const LogRow& row) {
        detail("step " + std::to_string(row.step) + " loss " + fixed(row.loss, 5) + " batch psnr " +
               fixed(row.psnr, 2));
    });
    const double gain = r.eval.psnr_restored - r.eval.psnr_degraded;
    detail("test set: " + fixed(r.eval.psnr_degraded, 3) + " -> " + fixed(r.eval.psnr_restored, 3) + " dB (gain " +
           fixed(gain, 3) + ", need 2), ssim " + fixed(r.eval.ssim_degraded, 4) + " -> " +
           fixed(r.eval.ssim_restored, 4));

    RunConfig one = desk_config();
    one.train.batch = 1;
    one.train.steps = 3000;
    one.train.train_images = 1;
    one.train.test_images = 1;
    one.train.augment = false;
    Trainer overfit(one);
    const ImageSample pair = overfit.dataset().test_set().front();
    const Tensor<float> degraded = stack_images({pair.degraded});
    const Tensor<float> clean = stack_images({pair.clean});
    const double before = evaluate(overfit.net(), {pair}).psnr_degraded;
    double after = before;
    std::size_t used = 0;
    while (overfit.step() < one.train.steps) {
        overfit.train_step(degraded, clean);
        if (overfit.step() % 100 == 0) {
            after = evaluate(overfit.net(), {pair}).psnr_restored;
            detail("overfit step " + std::to_string(overfit.step()) + ": " + fixed(after, 3) + " dB");
            if (after - before >= 10.0) break;
        }
    }
    used = overfit.step();
    const double over_gain = after - before;
    const double t = seconds_since(start);
    detail("single pair: " + fixed(before, 3) + " -> " + fixed(after, 3) + " dB (gain " + fixed(over_gain, 3) +
           ", need 10) after " + std::to_string(used) + " steps; " + fixed(t, 0) + " s (limit 1800 s)");
    return {gain >= 2.0 && over_gain >= 10.0 && t < 1800.0,
            "test gain " + fixed(gain, 2) + " dB, single-pair gain " + fixed(over_gain, 2) + " dB, " + fixed(t, 0) +
                " s"};
}

// 7. Ablation trend over seeds.
Verdict ablation_trend(std::size_t steps) {
    RunConfig cfg = desk_config();
    cfg.train.steps = steps;
    const std::vector<BlockKind> kinds{BlockKind::kResBlock, BlockKind::kSpatial, BlockKind::kCombined};
    const auto rows = ablation_harness(cfg, {1, 2, 3}, [](const std::string& line) { detail(line); }, kinds);
    std::istringstream table(format_ablation(rows));
    for (std::string line; std::getline(table, line);) detail(line);
    const auto& res = rows[0];
    const auto& spatial = rows[1];
    const auto& combined = rows[2];
    const bool psnr_ok = combined.psnr_mean >= spatial.psnr_mean && combined.psnr_mean >= res.psnr_mean;
    const bool params_ok = combined.params > spatial.params;
    return {psnr_ok && params_ok, "mean psnr combined " + fixed(combined.psnr_mean, 3) + ", spatial " +
                                      fixed(spatial.psnr_mean, 3) + ", resblock " + fixed(res.psnr_mean, 3) +
                                      "; params " + std::to_string(combined.params) + " > " +
                                      std::to_string(spatial.params)};
}

bool same_parameters(const CuMambaNet<float>& a, const CuMambaNet<float>& b) {
    const auto pa = a.parameters(), pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i].name != pb[i].name || pa[i].tensor.shape() != pb[i].tensor.shape()) return false;
        if (std::memcmp(pa[i].tensor.data().data(), pb[i].tensor.data().data(),
                        pa[i].tensor.numel() * sizeof(float)) != 0)
            return false;
    }
    return true;
}

// 8. Bit-reproducible training, checkpoint round trip and resume.
Verdict determinism() {
    RunConfig cfg = desk_config();
    cfg.train.steps = 8;
    cfg.train.log_every = 1;
    std::vector<double> loss_a, loss_b;
    Trainer a(cfg), b(cfg);
    a.run(8, [&](const LogRow& r) { loss_a.push_back(r.loss); });
    b.run(8, [&](const LogRow& r) { loss_b.push_back(r.loss); });
    const bool repro = loss_a == loss_b && same_parameters(a.net(), b.net());
    detail(std::string("two runs of 8 steps: ") + (repro ? "identical losses and parameters" : "DIVERGED"));

    const auto path = (std::filesystem::temp_directory_path() / "cumamba_acceptance_ckpt.bin").string();
    save_checkpoint(path, a.checkpoint());
    const Checkpoint loaded = load_checkpoint(path);
    CuMambaNet<float> restored(loaded.config.model, loaded.config.seed);
    load_parameters(restored, loaded);
    std::mt19937_64 rng(808);
    const auto image = uniform<float>({2, 32, 32, 3}, rng, 0.0, 1.0);
    bool forward_same = false;
    {
        NoGradGuard guard;
        const auto y0 = a.net().forward(image), y1 = restored.forward(image);
        forward_same = std::memcmp(y0.data().data(), y1.data().data(), y0.numel() * sizeof(float)) == 0;
    }
    detail(std::string("checkpoint reload: forward ") + (forward_same ? "bit-identical" : "DIFFERS"));

    RunConfig longer = cfg;
    longer.train.steps = 12;
    Trainer straight(longer), first(longer);
    straight.run(12);
    first.run(6);
    save_checkpoint(path, first.checkpoint());
    Trainer resumed(load_checkpoint(path));
    resumed.run(12);
    const bool resume_same = same_parameters(straight.net(), resumed.net()) && resumed.step() == 12;
    detail(std::string("resume at step 6 of 12: ") + (resume_same ? "parameters identical to a straight run" : "DIFFER"));
    std::filesystem::remove(path);
    return {repro && forward_same && resume_same,
            std::string("reproducible ") + (repro ? "yes" : "no") + ", round trip " + (forward_same ? "yes" : "no") +
                ", resume " + (resume_same ? "yes" : "no")};
}

struct Criterion {
    int id;
    const char* name;
    std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CU-Mamba acceptance criteria", "cumamba_acceptance"};
    std::vector<int> selected;
    std::size_t train_steps = 1000;
    std::size_t ablation_steps = 1000;
    app.add_option("--criterion", selected, "criteria to run (default all)")->check(CLI::Range(1, 8));
    app.add_option("--train-steps", train_steps, "optimizer steps for the held-out gain run");
    app.add_option("--ablation-steps", ablation_steps, "optimizer steps per ablation run");
    CLI11_PARSE(app, argc, argv);

    set_num_threads(1);
    const std::vector<Criterion> all{
        {1, "scan-oracle", scan_oracle},
        {2, "gradient-suite", gradient_suite},
        {3, "shape-identity", shape_identity},
        {4, "loss-anchors", loss_anchors},
        {5, "linear-scaling", linear_scaling},
        {6, "toy-restoration", [&] { return toy_restoration(train_steps); }},
        {7, "ablation-trend", [&] { return ablation_trend(ablation_steps); }},
        {8, "determinism", determinism},
    };
    if (selected.empty())
        for (const auto& c : all) selected.push_back(c.id);

    bool all_pass = true;
    for (const auto& c : all) {
        if (std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
        std::cout << "criterion " << c.id << " " << c.name << ":" << std::endl;
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        all_pass = all_pass && v.pass;
        std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << c.id << " " << c.name << ": " << v.summary
                  << std::endl;
    }
    return all_pass ? 0 : 1;
}
