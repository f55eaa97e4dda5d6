#include <cmath>
#include <random>
#include <sstream>

#include "cumamba/bench.hpp"
#include "doctest.h"

using namespace cumamba;

TEST_CASE("grids") {
    CHECK(geometric_grid(2, 5) == std::vector<std::size_t>{4, 8, 16, 32});
    CHECK(top_half({4, 8, 16, 32}) == std::vector<std::size_t>{16, 32});
    CHECK(top_half({1024, 2048, 4096, 8192, 16384, 32768, 65536}) ==
          std::vector<std::size_t>{8192, 16384, 32768, 65536});
}

TEST_CASE("naive attention matches a double-precision softmax oracle") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    const std::size_t L = 37, d = 5;
    Tensor<float> q({L, d}), k({L, d}), v({L, d});
    for (auto* t : {&q, &k, &v})
        for (float& x : t->mutable_data()) x = 2.0f * u(rng);
    const Tensor<float> out = naive_attention(q, k, v);
    for (std::size_t i = 0; i < L; ++i) {
        std::vector<double> w(L);
        double total = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += double(q[i * d + c]) * k[j * d + c];
            w[j] = std::exp(s / std::sqrt(double(d)));
            total += w[j];
        }
        for (std::size_t c = 0; c < d; ++c) {
            double ref = 0.0;
            for (std::size_t j = 0; j < L; ++j) ref += w[j] / total * v[j * d + c];
            CHECK(out[i * d + c] == doctest::Approx(ref).epsilon(1e-4));
        }
    }
    CHECK_THROWS_AS(naive_attention(q, Tensor<float>({L, d + 1}), v), ShapeError);
}

TEST_CASE("log-log slope recovers exact power laws") {
    std::vector<BenchRecord> recs;
    for (std::size_t L : geometric_grid(10, 16)) {
        recs.push_back({"lin", L, 8, 16, 1, 5, 1e-6 * double(L), 0, 0, 0});
        recs.push_back({"quad", L, 8, 0, 1, 5, 1e-9 * double(L) * double(L), 0, 0, 0});
        recs.push_back({"lin", L, 16, 16, 1, 5, 2e-6 * double(L), 0, 0, 0});
    }
    CHECK(loglog_slope(recs, "lin", 8) == doctest::Approx(1.0));
    CHECK(loglog_slope(recs, "quad", 8, top_half(geometric_grid(10, 16))) == doctest::Approx(2.0));
    CHECK(channel_doubling_ratio(recs, "lin", 4096, 8) == doctest::Approx(2.0));
    CHECK_THROWS_AS(loglog_slope(recs, "missing", 8), std::invalid_argument);
    CHECK_THROWS_AS(channel_doubling_ratio(recs, "lin", 4096, 16), std::invalid_argument);
}

TEST_CASE("scaling bench emits one record per kernel and grid point") {
    BenchOptions o;
    o.L_grid = {256, 512};
    o.C_grid = {4, 8};
    o.N = 4;
    std::size_t seen = 0;
    const auto recs = scaling_bench(o, [&](const BenchRecord&) { ++seen; });
    CHECK(recs.size() == 2 * 2 * 2 + 2);
    CHECK(seen == recs.size());
    for (const auto& r : recs) {
        CHECK(r.reps >= kMinBenchReps);
        CHECK(r.min_s <= r.median_s);
        CHECK(r.median_s <= r.max_s);
        CHECK(r.throughput > 0.0);
    }
    std::ostringstream csv;
    write_bench_csv(csv, recs);
    CHECK(csv.str().rfind("kernel,L,C,N,threads,reps,median_s,min_s,max_s,throughput\n", 0) == 0);
    o.reps = 4;
    CHECK_THROWS_AS(scaling_bench(o), std::invalid_argument);
}
