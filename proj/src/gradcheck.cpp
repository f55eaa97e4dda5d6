#include "cumamba/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cumamba {

double gradcheck_relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradcheckFloor});
    return std::abs(analytic - numeric) / denom;
}

GradcheckResult gradcheck(const std::string& name, const std::function<Tensor<double>()>& loss,
                          const std::vector<std::pair<std::string, Tensor<double>>>& inputs,
                          const GradcheckOptions& options) {
    GradcheckResult result;
    result.name = name;
    for (const auto& [label, t] : inputs) {
        Tensor<double> handle = t;
        handle.set_requires_grad(true);
        handle.zero_grad();
    }
    const Tensor<double> root = loss();
    if (root.numel() != 1) throw ShapeError("gradcheck loss must be a scalar, got " + shape_str(root.shape()));
    root.backward();

    std::mt19937_64 rng(options.seed);
    for (const auto& [label, t] : inputs) {
        Tensor<double> handle = t;
        const std::vector<double> analytic = handle.has_grad()
                                                 ? std::vector<double>(handle.grad().begin(), handle.grad().end())
                                                 : std::vector<double>(handle.numel(), 0.0);
        std::vector<std::size_t> idx(handle.numel());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (options.max_entries != 0 && idx.size() > options.max_entries) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(options.max_entries);
        }
        NoGradGuard no_grad;
        for (std::size_t i : idx) {
            double& v = handle.mutable_data()[i];
            const double saved = v;
            v = saved + options.step;
            const double up = loss().item();
            v = saved - options.step;
            const double down = loss().item();
            v = saved;
            const double numeric = (up - down) / (2.0 * options.step);
            const double err = gradcheck_relative_error(analytic[i], numeric);
            ++result.entries;
            if (err >= result.max_rel_error) {
                result.max_rel_error = err;
                result.worst = label + "[" + std::to_string(i) + "]";
                result.worst_analytic = analytic[i];
                result.worst_numeric = numeric;
            }
        }
    }
    result.passed = std::isfinite(result.max_rel_error) && result.max_rel_error < options.tolerance;
    return result;
}

}  // namespace cumamba
