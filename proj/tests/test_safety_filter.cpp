#include "doctest.h"
#include "oracles.hpp"

#include "isps/grid.hpp"
#include "isps/safety_filter.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

using namespace isps;

namespace {

PNormBarrier case_barrier() {
    PNormBarrier b;
    b.p = 20;
    b.half_widths = Vec(4);
    b.half_widths << std::numbers::pi / 2, std::numbers::pi / 2, 0.2, 0.2;
    return b;
}

Vec random_state(std::mt19937_64& rng, const PNormBarrier& b, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vec x(4);
    for (int j = 0; j < 4; ++j) x[j] = scale * b.half_widths[j] * u(rng);
    return x;
}

const Gains case_gains{1.5, 503.0, 0.001};

}  // namespace

TEST_CASE("barrier: origin and boundary") {
    const auto b = case_barrier();
    const BarrierEval at0 = eval_barrier(Vec::Zero(4), b);
    CHECK(at0.value == 1.0);
    CHECK(at0.grad_x1.isZero(0.0));
    CHECK(at0.grad_x2.isZero(0.0));

    Vec edge = Vec::Zero(4);
    edge[0] = std::numbers::pi / 2;
    CHECK(std::abs(barrier_value(edge, b)) < 1e-15);
}

TEST_CASE("barrier: value and gradient against the extended-precision formula") {
    const auto b = case_barrier();
    std::mt19937_64 rng(17);
    for (int k = 0; k < 500; ++k) {
        const Vec x = random_state(rng, b, 1.3);
        const BarrierEval be = eval_barrier(x, b);
        CHECK(oracle::rel_err(be.value, oracle::barrier(x, b.half_widths, 20)) < 1e-13);
        const oracle::LVec g = oracle::barrier_gradient(x, b.half_widths, 20);
        for (int j = 0; j < 2; ++j) {
            CHECK(std::abs(be.grad_x1[j] - g[j]) <= 1e-12 * std::max(1.0L, std::abs(g[j])));
            CHECK(std::abs(be.grad_x2[j] - g[j + 2]) <= 1e-12 * std::max(1.0L, std::abs(g[j + 2])));
        }
    }
}

TEST_CASE("barrier: gradients match central finite differences on normalized coordinates") {
    const auto b = case_barrier();
    std::mt19937_64 rng(23);
    int checked = 0;
    for (int k = 0; k < 1000; ++k) {
        const Vec x = random_state(rng, b);
        const BarrierEval be = eval_barrier(x, b);
        Vec grad(4);
        grad << be.grad_x1, be.grad_x2;
        for (int j = 0; j < 4; ++j) {
            const double step = 1e-6 * b.half_widths[j];
            Vec hi = x, lo = x;
            hi[j] += step;
            lo[j] -= step;
            const double fd = (barrier_value(hi, b) - barrier_value(lo, b)) / (2.0 * step);
            // truncation error relative to the entry plus the round-off of differencing h ~ 1
            const double roundoff = 8.0 * std::numeric_limits<double>::epsilon() / (2.0 * step);
            CHECK(std::abs(fd - grad[j]) <= 1e-5 * std::abs(grad[j]) + roundoff);
            ++checked;
        }
    }
    CHECK(checked > 1000);
}

TEST_CASE("barrier: invalid parameters are rejected") {
    PNormBarrier b = case_barrier();
    b.p = 3;
    CHECK_THROWS_AS(b.validate(), std::invalid_argument);
    b = case_barrier();
    b.half_widths[2] = 0.0;
    CHECK_THROWS_AS(b.validate(), std::invalid_argument);
    CHECK_THROWS_AS(eval_barrier(Vec::Zero(3), case_barrier()), std::invalid_argument);
}

TEST_CASE("phi0 and phi1 at the origin and at gradient-free points") {
    const auto b = case_barrier();
    const BarrierEval be = eval_barrier(Vec::Zero(4), b);
    CHECK(phi0(Vec::Zero(4), be, case_gains, 2.5) == 2.5);
    CHECK(phi1(be).isZero(0.0));

    BarrierEval flat;
    flat.value = 0.3;
    flat.grad_x1 = Vec::Zero(2);
    flat.grad_x2 = Vec::Zero(2);
    CHECK(phi0(Vec::Constant(4, 0.1), flat, case_gains, 2.0) == doctest::Approx(0.6));
}

TEST_CASE("phi0 at random states against an independent evaluation") {
    const auto b = case_barrier();
    std::mt19937_64 rng(29);
    for (int k = 0; k < 200; ++k) {
        const Vec x = random_state(rng, b);
        const oracle::LVec g = oracle::barrier_gradient(x, b.half_widths, 20);
        const long double l1 = 1.5L, l2 = 503.0L;
        long double want = 0.7L * oracle::barrier(x, b.half_widths, 20);
        for (int j = 0; j < 2; ++j) {
            want += g[j] * x[j + 2];
            want += g[j + 2] * (-(l1 + l2) * x[j + 2] - l1 * l2 * x[j]);
        }
        const double got = phi0(x, eval_barrier(x, b), case_gains, 0.7);
        CHECK(std::abs(got - want) <= 1e-10 * std::max(1.0L, std::abs(want)));
    }
}

TEST_CASE("relu_correction: hand-evaluated cases") {
    const Vec e1 = Eigen::Vector2d(1.0, 0.0);
    CHECK(relu_correction(1.0, e1, Vec::Zero(2)).isZero(0.0));
    const Vec c = relu_correction(-2.0, e1, Vec::Zero(2));
    CHECK(c[0] == 2.0);
    CHECK(c[1] == 0.0);
    CHECK(relu_correction(-5.0, Vec::Constant(2, 1e-12), Vec::Zero(2)).isZero(0.0));
}

TEST_CASE("in_safe_set: inclusive boundary") {
    const auto b = case_barrier();
    const SafetyMargins m{0.2, 1.0};
    const SafeSetCheck origin = in_safe_set(Vec::Zero(4), b, m);
    CHECK(origin.inside);
    CHECK(origin.margin == doctest::Approx(1.2));

    Vec on = Vec::Zero(4);
    on[0] = 1.25 * b.half_widths[0];
    const double h = barrier_value(on, b);
    CHECK(h == doctest::Approx(-0.25).epsilon(1e-14));
    const SafetyMargins exact{-h, 1.0};
    CHECK(in_safe_set(on, b, exact).inside);
    CHECK(in_safe_set(on, b, exact).margin == 0.0);
    const SafetyMargins tight{-h - 0.01, 1.0};
    CHECK_FALSE(in_safe_set(on, b, tight).inside);
}

TEST_CASE("d_inf_norm: zero cases and grid maximization") {
    const auto b = case_barrier();
    const Mat grid = uniform_grid(-b.half_widths, b.half_widths, 9);
    CHECK(d_inf_norm(0.0, b, grid) == 0.0);

    // grid confined to x2 = 0 has vanishing velocity gradients
    Mat flat = grid;
    flat.col(2).setZero();
    flat.col(3).setZero();
    CHECK(d_inf_norm(0.19, b, flat) == 0.0);

    double brute = 0.0;
    for (Eigen::Index r = 0; r < grid.rows(); ++r) {
        const oracle::LVec g = oracle::barrier_gradient(grid.row(r).transpose(), b.half_widths, 20);
        brute = std::max(brute, static_cast<double>(std::hypot(g[2], g[3])));
    }
    CHECK(d_inf_norm(0.19, b, grid) == doctest::Approx(0.19 * brute).epsilon(1e-12));
}

TEST_CASE("sup_relu_term: inactive filter and single-point hand value") {
    const auto b = case_barrier();
    const Mat inputs = uniform_grid(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0), 3);
    Mat interior(1, 4);
    interior << 0.1, 0.1, 0.0, 0.0;
    CHECK(sup_relu_term(b, case_gains, 1e6, interior, inputs) == 0.0);

    // at x with x1 = 0 and x2 = [s, 0]: phi1 = [g, 0] with g < 0 and the ReLU argument is
    // -(phi0 + g v1); check against the formula evaluated by hand
    Mat one(1, 4);
    one << 0.0, 0.0, 0.19, 0.0;
    const BarrierEval be = eval_barrier(one.row(0).transpose(), b);
    const double p0 = phi0(one.row(0).transpose(), be, case_gains, 1.0);
    const double g = be.grad_x2[0];
    double want = 0.0;
    for (Eigen::Index r = 0; r < inputs.rows(); ++r) {
        const double a = std::max(0.0, -p0 - g * inputs(r, 0));
        want = std::max(want, a * a / (g * g));
    }
    CHECK(sup_relu_term(b, case_gains, 1.0, one, inputs) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("relu_correction: the phi0 = -2 correction has squared norm 4") {
    const Vec c = relu_correction(-2.0, Eigen::Vector2d(1.0, 0.0), Vec::Zero(2));
    CHECK(c.squaredNorm() == 4.0);
}
