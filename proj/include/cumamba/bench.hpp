#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "cumamba/tensor.hpp"

namespace cumamba {

inline constexpr std::size_t kMinBenchReps = 5;

struct BenchRecord {
    std::string kernel;  // scan_parallel, scan_sequential or attention
    std::size_t L = 0;
    std::size_t C = 0;
    std::size_t N = 0;
    std::size_t threads = 1;
    std::size_t reps = 0;
    double median_s = 0.0;
    double min_s = 0.0;
    double max_s = 0.0;
    double throughput = 0.0;  // L * C * N elements (L * C for attention) per second at the median
};

struct BenchOptions {
    std::vector<std::size_t> L_grid;
    std::vector<std::size_t> C_grid{16};
    std::size_t N = 16;
    std::size_t threads = 1;
    std::size_t reps = kMinBenchReps;
    std::size_t warmup = 1;  // discarded repetitions before timing
    std::size_t chunk = 64;
    bool sequential = true;
    bool attention = true;
    std::size_t attention_max_L = 0;  // longest attention length; 0 times the whole grid
    std::uint64_t seed = 0;
};

/// Powers of two 2^lo .. 2^hi.
std::vector<std::size_t> geometric_grid(unsigned lo, unsigned hi);

/// The larger half of a grid, including the middle entry of an odd grid.
std::vector<std::size_t> top_half(const std::vector<std::size_t>& grid);

/// Single-head softmax(Q K^T / sqrt(d)) V without masking, Q, K, V [L, d].
/// Quadratic in L; the contrast case for the scan timings.
Tensor<float> naive_attention(const Tensor<float>& q, const Tensor<float>& k, const Tensor<float>& v);

/// Times the kernels over L_grid x C_grid. Throws std::invalid_argument on
/// fewer than kMinBenchReps repetitions or an empty grid.
std::vector<BenchRecord> scaling_bench(const BenchOptions& options,
                                       const std::function<void(const BenchRecord&)>& on_record = {});

/// Least-squares slope of log(median) against log(L) over records of
/// `kernel` at channel count C whose L lies in `Ls` (all L when empty).
double loglog_slope(const std::vector<BenchRecord>& records, const std::string& kernel, std::size_t C,
                    const std::vector<std::size_t>& Ls = {});

/// Median time at (kernel, L, 2C) over (kernel, L, C).
double channel_doubling_ratio(const std::vector<BenchRecord>& records, const std::string& kernel, std::size_t L,
                              std::size_t C);

/// CSV with a header row naming the BenchRecord fields in order.
void write_bench_csv(std::ostream& out, const std::vector<BenchRecord>& records);
std::string bench_csv_header();

}  // namespace cumamba
