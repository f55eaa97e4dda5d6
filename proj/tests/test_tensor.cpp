#include <algorithm>
#include <cmath>

#include "cumamba/ops.hpp"
#include "cumamba/tensor.hpp"
#include "doctest.h"

using cumamba::NoGradGuard;
using cumamba::Shape;
using cumamba::ShapeError;
using cumamba::Tape;
using cumamba::Tensor;
namespace ops = cumamba::ops;

TEST_CASE("shape and data length agree") {
    Tensor<float> t({2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK(t.dim() == 3);
    CHECK(t.size(1) == 3);
    CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST_CASE("handles share storage and clone copies") {
    Tensor<float> a({2}, std::vector<float>{1, 2});
    Tensor<float> b = a;
    b.mutable_data()[0] = 5;
    CHECK(a[0] == 5);
    Tensor<float> c = a.clone();
    c.mutable_data()[0] = 7;
    CHECK(a[0] == 5);
}

TEST_CASE("backward of sum gives ones") {
    Tensor<double> x({2, 3}, 0.5);
    x.set_requires_grad();
    ops::sum(x).backward();
    REQUIRE(x.has_grad());
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of sum(x*x) at [1,2] is [2,4]") {
    Tensor<double> x({2}, std::vector<double>{1, 2});
    x.set_requires_grad();
    ops::sum(ops::mul(x, x)).backward();
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("repeated backward accumulates leaf gradients") {
    Tensor<double> x({3}, 1.0);
    x.set_requires_grad();
    const auto loss = [&] { return ops::sum(ops::scale(x, 3.0)); };
    loss().backward();
    loss().backward();
    for (double g : x.grad()) CHECK(g == doctest::Approx(6.0));
    x.zero_grad();
    CHECK_FALSE(x.has_grad());
}

TEST_CASE("backward rejects non-scalar roots") {
    Tensor<double> x({2}, 1.0);
    x.set_requires_grad();
    const Tensor<double> y = ops::scale(x, 2.0);
    CHECK_THROWS_AS(y.backward(), ShapeError);
}

TEST_CASE("intermediate gradients are released, leaves keep theirs") {
    Tensor<double> x({2}, 1.0);
    x.set_requires_grad();
    const Tensor<double> y = ops::exp(x);
    const Tensor<double> z = ops::sum(y);
    z.backward();
    CHECK_FALSE(y.has_grad());
    CHECK(x.has_grad());
}

TEST_CASE("tape is topologically ordered") {
    Tensor<double> a({2}, 1.0);
    Tensor<double> b({2}, 2.0);
    a.set_requires_grad();
    b.set_requires_grad();
    const auto c = ops::mul(a, b);
    const auto d = ops::add(c, a);
    const auto e = ops::mul(d, c);
    const auto loss = ops::sum(e);
    const auto tape = Tape<double>::record(loss);
    const auto& order = tape.entries();
    const auto pos = [&](const Tensor<double>& t) {
        return std::find(order.begin(), order.end(), t.impl()) - order.begin();
    };
    CHECK(pos(c) < pos(d));
    CHECK(pos(d) < pos(e));
    CHECK(pos(e) < pos(loss));
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (!order[i]->grad_fn) continue;
        for (const auto& in : order[i]->grad_fn->inputs) {
            const auto j = std::find(order.begin(), order.end(), in) - order.begin();
            if (j != static_cast<std::ptrdiff_t>(order.size())) CHECK(static_cast<std::size_t>(j) < i);
        }
    }
}

TEST_CASE("tape replay equals analytic composition") {
    Tensor<double> x({3}, std::vector<double>{0.1, -0.4, 0.9});
    x.set_requires_grad();
    const auto loss = ops::sum(ops::mul(ops::sigmoid(x), x));
    Tape<double>::record(loss).replay(loss);
    for (std::size_t i = 0; i < 3; ++i) {
        const double v = x[i];
        const double s = 1.0 / (1.0 + std::exp(-v));
        CHECK(x.grad()[i] == doctest::Approx(s + v * s * (1 - s)).epsilon(1e-12));
    }
}

TEST_CASE("no-grad guard suppresses recording") {
    Tensor<double> x({2}, 1.0);
    x.set_requires_grad();
    {
        NoGradGuard guard;
        const auto y = ops::exp(x);
        CHECK_FALSE(y.requires_grad());
        CHECK(y.is_leaf());
    }
    CHECK(ops::exp(x).requires_grad());
}

TEST_CASE("detach drops history") {
    Tensor<double> x({2}, 1.0);
    x.set_requires_grad();
    const auto y = ops::exp(x).detach();
    CHECK(y.is_leaf());
    CHECK_FALSE(y.requires_grad());
    CHECK(y[0] == doctest::Approx(std::exp(1.0)));
}
