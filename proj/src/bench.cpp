#include "cumamba/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <stdexcept>

#include "cumamba/simd/kernels.hpp"
#include "cumamba/ssm.hpp"

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace cumamba {

std::vector<std::size_t> geometric_grid(unsigned lo, unsigned hi) {
    std::vector<std::size_t> g;
    for (unsigned e = lo; e <= hi; ++e) g.push_back(std::size_t{1} << e);
    return g;
}

std::vector<std::size_t> top_half(const std::vector<std::size_t>& grid) {
    std::vector<std::size_t> sorted = grid;
    std::sort(sorted.begin(), sorted.end());
    return {sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end()};
}

namespace {

constexpr std::size_t kAttentionRows = 64;

// Eight interleaved partial results keep the loops vectorizable.
float row_max(const float* x, std::size_t n) {
    float part[8];
    std::fill(part, part + 8, x[0]);
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8)
        for (std::size_t u = 0; u < 8; ++u) part[u] = std::max(part[u], x[j + u]);
    float best = part[0];
    for (; j < n; ++j) best = std::max(best, x[j]);
    for (float p : part) best = std::max(best, p);
    return best;
}

float row_sum(const float* x, std::size_t n) {
    float part[8] = {};
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8)
        for (std::size_t u = 0; u < 8; ++u) part[u] += x[j + u];
    float total = 0.0f;
    for (; j < n; ++j) total += x[j];
    for (float p : part) total += p;
    return total;
}

}  // namespace

Tensor<float> naive_attention(const Tensor<float>& q, const Tensor<float>& k, const Tensor<float>& v) {
    if (q.dim() != 2 || k.shape() != q.shape() || v.shape() != q.shape()) {
        throw ShapeError("naive_attention expects equal [L, d] operands");
    }
    const std::size_t L = q.size(0), d = q.size(1);
    std::vector<float> kt(d * L);
    for (std::size_t j = 0; j < L; ++j)
        for (std::size_t c = 0; c < d; ++c) kt[c * L + j] = k[j * d + c];
    const float scale = 1.0f / std::sqrt(static_cast<float>(d));
    std::vector<float> qs(q.data().begin(), q.data().end());
    for (float& x : qs) x *= scale;
    Tensor<float> out({L, d});
    float* o = out.mutable_data().data();
    // Full score rows for a block of queries at a time.
    std::vector<float> scores(kAttentionRows * L);
    for (std::size_t i0 = 0; i0 < L; i0 += kAttentionRows) {
        const std::size_t rows = std::min(kAttentionRows, L - i0);
        simd::gemm(false, false, rows, L, d, qs.data() + i0 * d, d, kt.data(), L, scores.data(), L, false);
        float inv_sum[kAttentionRows];
        for (std::size_t r = 0; r < rows; ++r) {
            float* srow = scores.data() + r * L;
            const float mx = row_max(srow, L);
            for (std::size_t j = 0; j < L; ++j) srow[j] -= mx;
            simd::exp(srow, srow, L);
            inv_sum[r] = 1.0f / row_sum(srow, L);
        }
        float* orows = o + i0 * d;
        simd::gemm(false, false, rows, d, L, scores.data(), L, v.data().data(), d, orows, d, false);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) orows[r * d + c] *= inv_sum[r];
    }
    return out;
}

namespace {

Tensor<float> uniform(Shape shape, std::mt19937_64& rng, float lo, float hi) {
    std::uniform_real_distribution<float> u(lo, hi);
    Tensor<float> t(std::move(shape));
    for (float& x : t.mutable_data()) x = u(rng);
    return t;
}

template <typename F>
BenchRecord time_kernel(const std::string& name, std::size_t L, std::size_t C, std::size_t N,
                        const BenchOptions& o, double elements, F&& fn) {
    for (std::size_t r = 0; r < o.warmup; ++r) fn();
    std::vector<double> times;
    for (std::size_t r = 0; r < o.reps; ++r) {
        const auto start = std::chrono::steady_clock::now();
        fn();
        times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    std::sort(times.begin(), times.end());
    const double median = times.size() % 2 ? times[times.size() / 2]
                                           : 0.5 * (times[times.size() / 2 - 1] + times[times.size() / 2]);
    return {name, L, C, N, o.threads, o.reps, median, times.front(), times.back(), elements / median};
}

}  // namespace

std::vector<BenchRecord> scaling_bench(const BenchOptions& o,
                                       const std::function<void(const BenchRecord&)>& on_record) {
    if (o.reps < kMinBenchReps) {
        throw std::invalid_argument("benchmarks need at least " + std::to_string(kMinBenchReps) + " repetitions");
    }
    if (o.L_grid.empty() || o.C_grid.empty() || o.N == 0 || o.chunk == 0) {
        throw std::invalid_argument("benchmark grid, N and chunk must be non-empty");
    }
#if defined(_OPENMP)
    const int previous_threads = omp_get_max_threads();
    omp_set_num_threads(static_cast<int>(std::max<std::size_t>(1, o.threads)));
#endif
    std::vector<BenchRecord> records;
    auto emit = [&](BenchRecord r) {
        if (on_record) on_record(r);
        records.push_back(std::move(r));
    };
    std::mt19937_64 rng(o.seed);
    NoGradGuard guard;
    for (std::size_t C : o.C_grid) {
        for (std::size_t L : o.L_grid) {
            const Tensor<float> abar = uniform({L, C, o.N}, rng, 0.5f, 1.0f);
            const Tensor<float> bbar = uniform({L, C, o.N}, rng, -0.1f, 0.1f);
            const Tensor<float> x = uniform({L, C}, rng, -1.0f, 1.0f);
            const Tensor<float> Ct = uniform({L, o.N}, rng, -1.0f, 1.0f);
            const Tensor<float> D = uniform({C}, rng, -1.0f, 1.0f);
            const double elements = static_cast<double>(L * C * o.N);
            emit(time_kernel("scan_parallel", L, C, o.N, o, elements,
                             [&] { (void)ssm::scan_parallel(abar, bbar, x, Ct, D, o.chunk); }));
            if (o.sequential) {
                emit(time_kernel("scan_sequential", L, C, o.N, o, elements,
                                 [&] { (void)ssm::scan_sequential(abar, bbar, x, Ct, D); }));
            }
        }
    }
    if (o.attention) {
        // Head dimension equals the first channel count of the grid.
        const std::size_t d = o.C_grid.front();
        for (std::size_t L : o.L_grid) {
            if (o.attention_max_L != 0 && L > o.attention_max_L) continue;
            const Tensor<float> q = uniform({L, d}, rng, -1.0f, 1.0f);
            const Tensor<float> k = uniform({L, d}, rng, -1.0f, 1.0f);
            const Tensor<float> v = uniform({L, d}, rng, -1.0f, 1.0f);
            emit(time_kernel("attention", L, d, 0, o, static_cast<double>(L * d),
                             [&] { (void)naive_attention(q, k, v); }));
        }
    }
#if defined(_OPENMP)
    omp_set_num_threads(previous_threads);
#endif
    return records;
}

double loglog_slope(const std::vector<BenchRecord>& records, const std::string& kernel, std::size_t C,
                    const std::vector<std::size_t>& Ls) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : records) {
        if (r.kernel != kernel || r.C != C) continue;
        if (!Ls.empty() && std::find(Ls.begin(), Ls.end(), r.L) == Ls.end()) continue;
        pts.emplace_back(std::log(static_cast<double>(r.L)), std::log(r.median_s));
    }
    if (pts.size() < 2) throw std::invalid_argument("slope of '" + kernel + "' needs at least two grid points");
    double mx = 0, my = 0;
    for (const auto& [x, y] : pts) {
        mx += x;
        my += y;
    }
    mx /= static_cast<double>(pts.size());
    my /= static_cast<double>(pts.size());
    double sxy = 0, sxx = 0;
    for (const auto& [x, y] : pts) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    return sxy / sxx;
}

double channel_doubling_ratio(const std::vector<BenchRecord>& records, const std::string& kernel, std::size_t L,
                              std::size_t C) {
    const BenchRecord* base = nullptr;
    const BenchRecord* doubled = nullptr;
    for (const auto& r : records) {
        if (r.kernel != kernel || r.L != L) continue;
        if (r.C == C) base = &r;
        if (r.C == 2 * C) doubled = &r;
    }
    if (!base || !doubled) throw std::invalid_argument("channel doubling needs records at C and 2C");
    return doubled->median_s / base->median_s;
}

std::string bench_csv_header() { return "kernel,L,C,N,threads,reps,median_s,min_s,max_s,throughput"; }

void write_bench_csv(std::ostream& out, const std::vector<BenchRecord>& records) {
    out << bench_csv_header() << "\n";
    out << std::setprecision(9);
    for (const auto& r : records) {
        out << r.kernel << ',' << r.L << ',' << r.C << ',' << r.N << ',' << r.threads << ',' << r.reps << ','
            << r.median_s << ',' << r.min_s << ',' << r.max_s << ',' << r.throughput << "\n";
    }
}

}  // namespace cumamba
