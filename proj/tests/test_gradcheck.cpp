#include <set>
#include <string>

#include "cumamba/gradcheck.hpp"
#include "doctest.h"

using namespace cumamba;

TEST_CASE("relative error uses the floor for vanishing values") {
    CHECK(gradcheck_relative_error(0.0, 0.0) == 0.0);
    CHECK(gradcheck_relative_error(1e-9, 0.0) == doctest::Approx(1e-4));
    CHECK(gradcheck_relative_error(2.0, 1.0) == doctest::Approx(0.5));
}

TEST_CASE("full gradient suite passes") {
    const auto results = run_gradcheck_suite(2024);
    std::set<std::string> names;
    for (const auto& r : results) {
        INFO(r.name << " worst " << r.worst << " err " << r.max_rel_error << " analytic " << r.worst_analytic
                    << " numeric " << r.worst_numeric);
        CHECK(r.entries > 0);
        CHECK(r.passed);
        names.insert(r.name);
    }
    for (const char* n : {"add", "mul", "leaky_relu", "layer_norm", "conv_transposed", "causal_conv1d",
                          "selective_scan_parallel", "selective_ssm_block", "spatial_ssm_block", "channel_ssm_block",
                          "unet_restoration_loss", "restoration_loss"})
        CHECK(names.count(n) == 1);
}
