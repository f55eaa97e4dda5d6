#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cumamba/tensor.hpp"

namespace cumamba {

inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-4;
/// Denominator floor of the relative error, so entries whose analytic and
/// numeric values both vanish are compared absolutely.
inline constexpr double kGradcheckFloor = 1e-5;

struct GradcheckOptions {
    double step = kGradcheckStep;
    double tolerance = kGradcheckTolerance;
    /// Entries probed per tensor; 0 checks every entry. Sampled entries are
    /// drawn without replacement from `seed`.
    std::size_t max_entries = 0;
    std::uint64_t seed = 0;
};

struct GradcheckResult {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t entries = 0;
    std::string worst;  // "<tensor>[<index>]" of the largest error
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool passed = false;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
double gradcheck_relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients of the scalar `loss()` with respect to each
/// tensor in `inputs` against central finite differences.
GradcheckResult gradcheck(const std::string& name, const std::function<Tensor<double>()>& loss,
                          const std::vector<std::pair<std::string, Tensor<double>>>& inputs,
                          const GradcheckOptions& options = {});

/// The finite-difference suite over every primitive, the selective-SSM
/// block, both image blocks, a toy network and the training loss.
std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed);

}  // namespace cumamba
