#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "cumamba/data.hpp"
#include "cumamba/ops.hpp"
#include "cumamba/training.hpp"
#include "doctest.h"

using namespace cumamba;

namespace {

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image img({h, w, 3});
    for (float& v : img.mutable_data()) v = u(rng);
    return img;
}

bool same_bits(const Tensor<float>& a, const Tensor<float>& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

RunConfig tiny_config(BlockKind kind = BlockKind::kSpatial) {
    RunConfig c;
    c.model.levels = 2;
    c.model.blocks_per_level = {1, 1};
    c.model.base_width = 4;
    c.model.state_size = 4;
    c.model.patch_h = c.model.patch_w = 16;
    c.model.kind = kind;
    c.train.steps = 4;
    c.train.batch = 2;
    c.train.lr_start = 1e-3;
    c.train.train_images = 4;
    c.train.test_images = 2;
    c.train.log_every = 2;
    c.seed = 11;
    return c;
}

class Quadratic : public Module<float> {
public:
    explicit Quadratic(std::size_t n) { w = add_param("w", Tensor<float>({n}, 3.0f), true); }
    Tensor<float> w;
};

}  // namespace

TEST_CASE("cosine schedule endpoints, midpoint and range") {
    const CosineSchedule s{5e-5, 1e-6, 1000};
    CHECK(s.lr(0) == 5e-5);
    CHECK(s.lr(1000) == 1e-6);
    CHECK(s.lr(500) == doctest::Approx(2.55e-5).epsilon(1e-12));
    for (std::size_t t = 1; t <= 1000; ++t) CHECK(s.lr(t) <= s.lr(t - 1));
    CHECK_THROWS_AS(s.lr(1001), std::out_of_range);
}

TEST_CASE("adamw leaves parameters alone under zero gradients and zero decay") {
    Quadratic q(5);
    q.w.impl()->grad_buffer();
    AdamW opt(q.parameters(), {0.9, 0.999, 1e-8, 0.0});
    opt.step(1e-3);
    for (float v : q.w.data()) CHECK(v == 3.0f);
}

TEST_CASE("adamw first step moves by about lr") {
    Quadratic q(3);
    for (float& g : q.w.impl()->grad_buffer()) g = 1.0f;
    AdamW opt(q.parameters(), {0.9, 0.999, 1e-8, 0.0});
    opt.step(1e-2);
    for (float v : q.w.data()) CHECK(v == doctest::Approx(3.0 - 1e-2 / (1.0 + 1e-8)).epsilon(1e-6));
    CHECK(opt.step_count() == 1);
}

TEST_CASE("adamw decay is decoupled and skipped for no-decay parameters") {
    Quadratic q(2);
    q.w.impl()->grad_buffer();
    auto params = q.parameters();
    AdamW decayed(params, {0.9, 0.999, 1e-8, 0.1});
    decayed.step(0.5);
    CHECK(q.w[0] == doctest::Approx(3.0 * (1.0 - 0.5 * 0.1)));
    params[0].decay = false;
    AdamW plain(params, {0.9, 0.999, 1e-8, 0.1});
    const float before = q.w[0];
    plain.step(0.5);
    CHECK(q.w[0] == before);
}

TEST_CASE("adamw rejects a parameter without a gradient") {
    Quadratic q(2);
    AdamW opt(q.parameters(), {});
    CHECK_THROWS_AS(opt.step(1e-3), MissingGradientError);
}

TEST_CASE("adamw descends a quadratic bowl monotonically") {
    Quadratic q(4);
    AdamW opt(q.parameters(), {0.9, 0.999, 1e-8, 0.0});
    double previous = 1e30;
    for (int step = 0; step < 100; ++step) {
        q.zero_grad();
        const auto loss = ops::sum(ops::mul(q.w, q.w));
        const double value = loss.item();
        if (step >= 5) CHECK(value < previous);
        previous = value;
        loss.backward();
        opt.step(1e-2);
    }
    CHECK(previous < 36.0);
}

TEST_CASE("gradient clipping bounds the global norm") {
    Quadratic q(4);
    for (float& g : q.w.impl()->grad_buffer()) g = 2.0f;
    const auto params = q.parameters();
    CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(4.0));
    CHECK(global_grad_norm(params) == doctest::Approx(1.0));
    CHECK(clip_grad_norm(params, 10.0) == doctest::Approx(1.0));
    CHECK(global_grad_norm(params) == doctest::Approx(1.0));
}

TEST_CASE("dihedral transforms follow the coordinate map") {
    const std::size_t n = 5;
    const Image img = random_image(n, n, 1);
    const Image r = apply_dihedral(img, {false, 1});
    const Image f = apply_dihedral(img, {true, 0});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t c = 0; c < 3; ++c) {
                CHECK(r[((n - 1 - j) * n + i) * 3 + c] == img[(i * n + j) * 3 + c]);
                CHECK(f[(i * n + (n - 1 - j)) * 3 + c] == img[(i * n + j) * 3 + c]);
            }
    CHECK(same_bits(apply_dihedral(apply_dihedral(img, {false, 2}), {false, 2}), img));
}

TEST_CASE("dihedral group closes under composition") {
    const Image img = random_image(6, 6, 2);
    for (unsigned a = 0; a < 8; ++a)
        for (unsigned b = 0; b < 8; ++b) {
            const Dihedral first = Dihedral::from_code(a), second = Dihedral::from_code(b);
            const Image seq = apply_dihedral(apply_dihedral(img, first), second);
            CHECK(same_bits(seq, apply_dihedral(img, compose(first, second))));
        }
}

TEST_CASE("flip preserves the value histogram and rotation needs a square") {
    const Image img = random_image(4, 7, 3);
    const Image f = apply_dihedral(img, {true, 0});
    std::vector<float> a(img.data().begin(), img.data().end()), b(f.data().begin(), f.data().end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
    CHECK_THROWS_AS(apply_dihedral(img, {false, 1}), ShapeError);
    CHECK_NOTHROW(apply_dihedral(img, {false, 2 * 2}));
}

TEST_CASE("augment applies one transform to both images") {
    const Image clean = random_image(8, 8, 4);
    const ImageSample s = synthesize_pair(clean, Degradation{}, 5);
    std::mt19937_64 rng(6);
    for (int k = 0; k < 16; ++k) {
        const ImageSample a = augment(s, rng);
        bool matched = false;
        for (unsigned code = 0; code < 8; ++code) {
            const Dihedral t = Dihedral::from_code(code);
            if (same_bits(a.clean, apply_dihedral(s.clean, t)) && same_bits(a.degraded, apply_dihedral(s.degraded, t)))
                matched = true;
        }
        CHECK(matched);
    }
}

TEST_CASE("synthesize_pair identities and determinism") {
    const Image clean = random_image(12, 12, 7);
    Degradation none;
    none.sigma = 0.0;
    CHECK(same_bits(synthesize_pair(clean, none, 1).degraded, clean));
    Degradation blur1;
    blur1.kind = DegradationKind::kMotionBlur;
    blur1.blur_length = 1;
    CHECK(same_bits(synthesize_pair(clean, blur1, 1).degraded, clean));
    const Degradation noisy{};
    CHECK(same_bits(synthesize_pair(clean, noisy, 9).degraded, synthesize_pair(clean, noisy, 9).degraded));
    CHECK_FALSE(same_bits(synthesize_pair(clean, noisy, 9).degraded, synthesize_pair(clean, noisy, 10).degraded));
    const Image noisy_img = synthesize_pair(clean, noisy, 9).degraded;
    for (float v : noisy_img.data()) CHECK((v >= 0.0f && v <= 1.0f));
}

TEST_CASE("gaussian noise has the requested standard deviation") {
    const Image clean({128, 128, 3}, 0.5f);
    const ImageSample s = synthesize_pair(clean, Degradation{}, 3);
    double sum = 0, sq = 0;
    const std::size_t n = clean.numel();
    for (std::size_t i = 0; i < n; ++i) {
        const double d = s.degraded[i] - clean[i];
        sum += d;
        sq += d * d;
    }
    const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
    CHECK(sd == doctest::Approx(25.0 / 255.0).epsilon(0.05));
}

TEST_CASE("motion blur averages along its direction") {
    Image img({9, 9, 3});
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t c = 0; c < 3; ++c) img.mutable_data()[(i * 9 + 4) * 3 + c] = 1.0f;  // vertical line
    Degradation h;
    h.kind = DegradationKind::kMotionBlur;
    h.blur_length = 3;
    h.blur_kernel = 0;
    const Image out = synthesize_pair(img, h, 0).degraded;
    for (std::size_t j : {3u, 4u, 5u}) CHECK(out[(4 * 9 + j) * 3] == doctest::Approx(1.0 / 3.0));
    CHECK(out[(4 * 9 + 2) * 3] == 0.0f);
    h.blur_kernel = 1;
    CHECK(same_bits(synthesize_pair(img, h, 0).degraded, img));
    const Image flat({6, 6, 3}, 0.25f);
    h.blur_kernel = 2;
    h.blur_length = 7;
    const Image smeared = synthesize_pair(flat, h, 0).degraded;
    for (float v : smeared.data()) CHECK(v == doctest::Approx(0.25f));
}

TEST_CASE("unsupported degradations are rejected") {
    const Image clean({4, 4, 3}, 0.5f);
    Degradation d;
    d.sigma = 0.5;
    CHECK_THROWS_AS(synthesize_pair(clean, d, 0), std::invalid_argument);
    d = {};
    d.sigma = 1.0 / 255.0;
    CHECK_THROWS_AS(synthesize_pair(clean, d, 0), std::invalid_argument);
    d = {};
    d.kind = DegradationKind::kMotionBlur;
    d.blur_length = 2;
    CHECK_THROWS_AS(synthesize_pair(clean, d, 0), std::invalid_argument);
    d.blur_length = 16;
    CHECK_THROWS_AS(synthesize_pair(clean, d, 0), std::invalid_argument);
    d.blur_length = 5;
    d.blur_kernel = 4;
    CHECK_THROWS_AS(synthesize_pair(clean, d, 0), std::invalid_argument);
}

TEST_CASE("synthetic clean images are deterministic and in range") {
    const Image a = synthetic_clean(32, 32, 5);
    CHECK(same_bits(a, synthetic_clean(32, 32, 5)));
    CHECK_FALSE(same_bits(a, synthetic_clean(32, 32, 6)));
    float lo = 1, hi = 0;
    for (float v : a.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo >= 0.0f);
    CHECK(hi <= 1.0f);
    CHECK(hi - lo > 0.1f);
}

TEST_CASE("config text round-trips and rejects bad input") {
    RunConfig c = tiny_config(BlockKind::kCombined);
    c.train.degradation.kind = DegradationKind::kMotionBlur;
    c.train.clip_norm = 1.0;
    c.loss.lambda = 0.25;
    c.model.parallel_scan = false;
    const RunConfig back = parse_config(to_text(c));
    CHECK(back == c);
    CHECK(back.model.blocks_per_level == c.model.blocks_per_level);
    CHECK(back.train.lr_start == c.train.lr_start);

    const RunConfig p = parse_config("# comment\n  steps = 7  # trailing\n\nkind = channel\n");
    CHECK(p.train.steps == 7);
    CHECK(p.model.kind == BlockKind::kChannel);
    CHECK_THROWS_AS(parse_config("bogus = 1"), ConfigError);
    CHECK_THROWS_AS(parse_config("steps = -3"), ConfigError);
    CHECK_THROWS_AS(parse_config("steps"), ConfigError);
    CHECK_THROWS_AS(parse_config("kind = transformer"), ConfigError);
    CHECK_THROWS_AS(parse_config("lr_start = fast"), ConfigError);
    try {
        parse_config("steps = 1\nbatch = x\n");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("checkpoint round-trips parameters and forward outputs bit-exactly") {
    Trainer t(tiny_config());
    t.run(2);
    const Checkpoint ck = t.checkpoint();
    std::stringstream buf;
    write_checkpoint(buf, ck);
    const Checkpoint back = read_checkpoint(buf);
    CHECK(back.config == ck.config);
    CHECK(back.step == 2);
    CHECK(back.optimizer_step == 2);
    REQUIRE(back.params.size() == ck.params.size());
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
        CHECK(back.params[i].first == ck.params[i].first);
        CHECK(same_bits(back.params[i].second, ck.params[i].second));
    }
    CuMambaNet<float> net(back.config.model, 999);
    load_parameters(net, back);
    const Tensor<float> probe = stack_images({random_image(16, 16, 8), random_image(16, 16, 9)});
    NoGradGuard guard;
    CHECK(same_bits(net.forward(probe), t.net().forward(probe)));
}

TEST_CASE("malformed checkpoints are rejected") {
    std::stringstream bad("NOTACKPT....");
    CHECK_THROWS_AS(read_checkpoint(bad), CheckpointError);
    Trainer t(tiny_config());
    std::stringstream buf;
    write_checkpoint(buf, t.checkpoint());
    const std::string full = buf.str();
    std::stringstream cut(full.substr(0, full.size() / 2));
    CHECK_THROWS_AS(read_checkpoint(cut), CheckpointError);
    CuMambaNet<float> other(tiny_config(BlockKind::kResBlock).model, 1);
    CHECK_THROWS_AS(load_parameters(other, t.checkpoint()), CheckpointError);
}

TEST_CASE("zero steps returns the initial parameters") {
    RunConfig c = tiny_config();
    c.train.steps = 0;
    const TrainResult r = train_loop(c);
    CuMambaNet<float> fresh(c.model, c.seed);
    const auto params = fresh.parameters();
    REQUIRE(r.checkpoint.params.size() == params.size());
    for (std::size_t i = 0; i < params.size(); ++i) CHECK(same_bits(r.checkpoint.params[i].second, params[i].tensor));
    CHECK(r.checkpoint.step == 0);
    CHECK(r.log.empty());
}

TEST_CASE("fixed-seed training is bit-reproducible and resumes identically") {
    for (BlockKind kind : {BlockKind::kSpatial, BlockKind::kCombined}) {
        const RunConfig c = tiny_config(kind);
        Trainer a(c), b(c);
        std::vector<LogRow> la, lb;
        a.run(4, [&](const LogRow& r) { la.push_back(r); });
        b.run(4, [&](const LogRow& r) { lb.push_back(r); });
        REQUIRE(la.size() == 2);
        REQUIRE(lb.size() == 2);
        for (std::size_t i = 0; i < la.size(); ++i) CHECK(la[i].loss == lb[i].loss);
        const Checkpoint ca = a.checkpoint(), cb = b.checkpoint();
        for (std::size_t i = 0; i < ca.params.size(); ++i) CHECK(same_bits(ca.params[i].second, cb.params[i].second));

        Trainer first(c);
        first.run(2);
        std::stringstream buf;
        write_checkpoint(buf, first.checkpoint());
        Trainer resumed(read_checkpoint(buf));
        CHECK(resumed.step() == 2);
        std::vector<LogRow> lr;
        resumed.run(4, [&](const LogRow& r) { lr.push_back(r); });
        REQUIRE(lr.size() == 1);
        CHECK(lr[0].loss == la[1].loss);
        CHECK(lr[0].psnr == la[1].psnr);
        const Checkpoint cr = resumed.checkpoint();
        for (std::size_t i = 0; i < ca.params.size(); ++i) CHECK(same_bits(ca.params[i].second, cr.params[i].second));
        for (std::size_t i = 0; i < ca.moments.size(); ++i) CHECK(same_bits(ca.moments[i].second, cr.moments[i].second));
    }
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
    Trainer t(tiny_config());
    auto [degraded, clean] = t.dataset().train_batch(0, 2);
    degraded.mutable_data()[0] = std::nanf("");
    try {
        t.train_step(degraded, clean);
        FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
        const std::string msg = e.what();
        CHECK(msg.find("step 0") != std::string::npos);
        CHECK(msg.find("lr") != std::string::npos);
        CHECK(msg.find("grad norm") != std::string::npos);
    }
}

TEST_CASE("zero-initialized network restores nothing") {
    Trainer t(tiny_config());
    const EvalResult e = evaluate(t.net(), t.dataset().test_set());
    CHECK(e.images == 2);
    CHECK(e.psnr_restored == doctest::Approx(e.psnr_degraded).epsilon(1e-6));
    CHECK(e.ssim_restored == doctest::Approx(e.ssim_degraded).epsilon(1e-6));
}

TEST_CASE("train_loop writes a log and checkpoints") {
    RunConfig c = tiny_config();
    c.train.checkpoint_every = 2;
    const auto dir = std::filesystem::temp_directory_path() / "cumamba_train_loop_test";
    std::filesystem::remove_all(dir);
    const TrainResult r = train_loop(c, dir.string());
    CHECK(r.log.size() == 2);
    CHECK(std::filesystem::exists(dir / "checkpoint.bin"));
    CHECK(std::filesystem::exists(dir / "checkpoint_2.bin"));
    std::ifstream log(dir / "log.csv");
    std::string header;
    std::getline(log, header);
    CHECK(header == "step,lr,loss,psnr,ssim");
    const Checkpoint mid = load_checkpoint((dir / "checkpoint_2.bin").string());
    CHECK(mid.step == 2);
    std::filesystem::remove_all(dir);
}

TEST_CASE("ablation harness covers the four variants") {
    RunConfig c = tiny_config();
    c.train.steps = 1;
    const auto rows = ablation_harness(c, {1, 2});
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].kind == BlockKind::kResBlock);
    CHECK(rows[3].kind == BlockKind::kCombined);
    CHECK(rows[3].params > rows[1].params);
    CHECK(rows[0].psnr.size() == 2);
    RunConfig base = c;
    base.model.kind = BlockKind::kResBlock;
    base.seed = 2;
    CHECK(rows[0].psnr[1] == train_loop(base).eval.psnr_restored);
    CHECK(format_ablation(rows).find("combined") != std::string::npos);
}
