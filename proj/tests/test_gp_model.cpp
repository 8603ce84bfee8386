#include "doctest.h"
#include "oracles.hpp"

#include "isps/gp_model.hpp"
#include "isps/grid.hpp"

#include <cmath>
#include <fstream>
#include <random>

using namespace isps;

namespace {

KernelParams kernel(double s, Vec l) {
    KernelParams k;
    k.signal_std = s;
    k.lengthscales = std::move(l);
    return k;
}

TrainingSet random_set(std::mt19937_64& rng, int n_samples, int d, int n_out, double noise) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    TrainingSet t;
    t.inputs.resize(n_samples, d);
    t.targets.resize(n_samples, n_out);
    for (int i = 0; i < n_samples; ++i) {
        for (int j = 0; j < d; ++j) t.inputs(i, j) = u(rng);
        for (int j = 0; j < n_out; ++j) t.targets(i, j) = 3.0 * u(rng);
    }
    t.noise_std = noise;
    t.noise_added.assign(static_cast<std::size_t>(n_samples), noise > 0.0);
    return t;
}

}  // namespace

TEST_CASE("kernel: zero distance gives the signal variance") {
    const auto k = kernel(2.0, Vec::Ones(3));
    const Vec x = Vec::Constant(3, 0.7);
    CHECK(eval_kernel(x, x, k) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("kernel: unit lengthscale at distance one") {
    const auto k = kernel(1.0, Vec::Ones(1));
    CHECK(eval_kernel(Vec::Zero(1), Vec::Ones(1), k) == doctest::Approx(0.606531).epsilon(1e-6));
    CHECK(eval_kernel(Vec::Zero(1), Vec::Ones(1), k) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
}

TEST_CASE("kernel: symmetry and agreement with the direct formula") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    Vec l(4);
    l << 1.54, 0.541, 136.0, 120.0;
    const auto k = kernel(115.0, l);
    for (int trial = 0; trial < 200; ++trial) {
        Vec a(4), b(4);
        for (int j = 0; j < 4; ++j) {
            a[j] = u(rng);
            b[j] = u(rng);
        }
        CHECK(eval_kernel(a, b, k) == eval_kernel(b, a, k));
        CHECK(oracle::rel_err(eval_kernel(a, b, k), oracle::se_kernel(a, b, 115.0, l)) < 1e-12);
    }
}

TEST_CASE("kernel: dimension mismatch is rejected") {
    const auto k = kernel(1.0, Vec::Ones(2));
    CHECK_THROWS_AS(eval_kernel(Vec::Zero(3), Vec::Zero(3), k), std::invalid_argument);
    CHECK_THROWS_AS(eval_kernel(Vec::Zero(2), Vec::Zero(3), k), std::invalid_argument);
}

TEST_CASE("fit: single sample closed form") {
    TrainingSet t;
    t.inputs = Mat::Zero(1, 1);
    t.targets = Mat::Ones(1, 1);
    t.noise_std = 0.1;
    t.noise_added = {true};
    const KernelParams k = kernel(1.0, Vec::Ones(1));
    const GpPosterior gp = fit(t, std::span<const KernelParams>(&k, 1));
    CHECK(gp.outputs()[0].weights[0] == doctest::Approx(1.0 / 1.01).epsilon(1e-12));
    CHECK(gp.predict_mean(Vec::Zero(1))[0] == doctest::Approx(0.990099).epsilon(1e-6));
}

TEST_CASE("fit: weights match a dense solve") {
    std::mt19937_64 rng(11);
    const TrainingSet t = random_set(rng, 5, 4, 1, 0.1);
    const KernelParams k = kernel(1.3, Vec::Constant(4, 0.8));
    const GpPosterior gp = fit(t, std::span<const KernelParams>(&k, 1));
    oracle::LMat km(5, 5);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) {
            km(i, j) = oracle::se_kernel(t.inputs.row(i).transpose(), t.inputs.row(j).transpose(), 1.3,
                                         k.lengthscales);
        }
        km(i, i) += 0.01L;
    }
    const oracle::LVec w = km.fullPivLu().solve(t.targets.col(0).cast<long double>());
    for (int i = 0; i < 5; ++i) CHECK(oracle::rel_err(gp.outputs()[0].weights[i], w[i]) < 1e-10);
}

TEST_CASE("fit: duplicate inputs are regularized by the noise") {
    TrainingSet t;
    t.inputs = Mat::Zero(2, 2);
    t.targets = Mat::Ones(2, 1);
    t.noise_std = 0.01;
    t.noise_added = {true, true};
    const KernelParams k = kernel(1.0, Vec::Ones(2));
    const GpPosterior gp = fit(t, std::span<const KernelParams>(&k, 1));
    CHECK(gp.predict_mean(Vec::Zero(2))[0] == doctest::Approx(2.0 / 2.0001).epsilon(1e-9));
}

TEST_CASE("fit: malformed inputs are rejected") {
    TrainingSet t;
    t.inputs = Mat::Zero(2, 2);
    t.targets = Mat::Ones(3, 1);
    t.noise_std = 0.1;
    t.noise_added = {true, true};
    const KernelParams k = kernel(1.0, Vec::Ones(2));
    CHECK_THROWS_AS(fit(t, std::span<const KernelParams>(&k, 1)), std::invalid_argument);

    t.targets = Mat::Ones(2, 1);
    t.inputs(0, 0) = std::nan("");
    CHECK_THROWS_AS(fit(t, std::span<const KernelParams>(&k, 1)), std::invalid_argument);

    t.inputs(0, 0) = 0.0;
    const KernelParams bad = kernel(-1.0, Vec::Ones(2));
    CHECK_THROWS_AS(fit(t, std::span<const KernelParams>(&bad, 1)), std::invalid_argument);
}

TEST_CASE("posterior: noiseless interpolation and zero variance at training points") {
    std::mt19937_64 rng(3);
    const TrainingSet t = random_set(rng, 6, 2, 1, 0.0);
    const KernelParams k = kernel(1.0, Vec::Constant(2, 0.5));
    const GpPosterior gp = fit(t, std::span<const KernelParams>(&k, 1));
    for (int i = 0; i < 6; ++i) {
        const Vec x = t.inputs.row(i).transpose();
        CHECK(gp.predict_mean(x)[0] == doctest::Approx(t.targets(i, 0)).epsilon(1e-6));
        CHECK(gp.predict_var(x)[0] == doctest::Approx(0.0).epsilon(1e-6));
    }
}

TEST_CASE("posterior: far from data the prior is recovered") {
    std::mt19937_64 rng(5);
    const TrainingSet t = random_set(rng, 10, 2, 1, 0.1);
    const KernelParams k = kernel(2.5, Vec::Constant(2, 0.3));
    const GpPosterior gp = fit(t, std::span<const KernelParams>(&k, 1));
    const Vec far = Vec::Constant(2, 50.0);
    CHECK(gp.predict_var(far)[0] == doctest::Approx(6.25).epsilon(1e-12));
    CHECK(std::abs(gp.predict_mean(far)[0]) < 1e-12);
}

TEST_CASE("posterior: 20-sample mean and variance against the dense formula") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const TrainingSet t = random_set(rng, 20, 4, 2, 0.05);
    const KernelParams ks[2] = {kernel(1.5, Vec::Constant(4, 0.9)), kernel(0.7, Vec::Constant(4, 1.4))};
    const GpPosterior gp = fit(t, ks);
    for (int q = 0; q < 25; ++q) {
        Vec x(4);
        for (int j = 0; j < 4; ++j) x[j] = u(rng);
        const Vec mu = gp.predict_mean(x);
        const Vec var = gp.predict_var(x);
        for (int i = 0; i < 2; ++i) {
            const auto ref = oracle::dense_gp(t.inputs, t.targets.col(i), 0.05, ks[i].signal_std,
                                              ks[i].lengthscales, x);
            CHECK(oracle::rel_err(mu[i], ref.mean) < 1e-8);
            CHECK(oracle::rel_err(var[i], ref.var) < 1e-8);
        }
    }
}

TEST_CASE("posterior: batch evaluation agrees with pointwise evaluation") {
    std::mt19937_64 rng(8);
    const TrainingSet t = random_set(rng, 30, 4, 2, 0.05);
    const KernelParams ks[2] = {kernel(1.0, Vec::Constant(4, 0.6)), kernel(2.0, Vec::Constant(4, 1.1))};
    const GpPosterior gp = fit(t, ks);
    const Mat grid = uniform_grid(Vec::Constant(4, -1.0), Vec::Constant(4, 1.0), 5);
    const auto [mean, var] = gp.predict_batch(grid);
    for (Eigen::Index r = 0; r < grid.rows(); r += 17) {
        const Vec x = grid.row(r).transpose();
        for (int i = 0; i < 2; ++i) {
            CHECK(mean(r, i) == doctest::Approx(gp.predict_mean(x)[i]).epsilon(1e-10));
            CHECK(var(r, i) == doctest::Approx(gp.predict_var(x)[i]).epsilon(1e-10));
        }
    }
}

TEST_CASE("max_std_bound: singleton grid, training grid, empty grid") {
    std::mt19937_64 rng(9);
    const TrainingSet t = random_set(rng, 8, 2, 1, 0.0);
    const KernelParams k = kernel(1.0, Vec::Constant(2, 0.4));
    const GpPosterior gp = fit(t, std::span<const KernelParams>(&k, 1));

    const Vec x = Vec::Constant(2, 0.3);
    const StdBound single = max_std_bound(gp, x.transpose());
    CHECK(single.rho_bar[0] == doctest::Approx(std::sqrt(gp.predict_var(x)[0])).epsilon(1e-12));

    const StdBound at_data = max_std_bound(gp, t.inputs);
    CHECK(at_data.rho_bar[0] < 1e-3);

    CHECK_THROWS_AS(max_std_bound(gp, Mat(0, 2)), std::invalid_argument);
}

TEST_CASE("compute_eta: hand-evaluated cases") {
    const Eta a = compute_eta(Vec::Ones(1), Vec::Zero(1), 0.5, 10);
    CHECK(a.eta[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));

    // (N + 1) / epsilon = e makes the log factor one
    const double eps = 2.0 / std::exp(1.0);
    const Eta b = compute_eta(Vec::Zero(1), Vec::Ones(1), eps, 1);
    CHECK(b.eta[0] == doctest::Approx(17.3205).epsilon(1e-5));
    CHECK(b.eta[0] == doctest::Approx(std::sqrt(300.0)).epsilon(1e-12));

    const Eta c = compute_eta(Vec::Ones(2), Vec::Zero(2), 0.1, 5);
    CHECK(c.norm == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("compute_eta: epsilon outside (0,1) is rejected") {
    CHECK_THROWS_AS(compute_eta(Vec::Ones(1), Vec::Ones(1), 0.0, 5), std::invalid_argument);
    CHECK_THROWS_AS(compute_eta(Vec::Ones(1), Vec::Ones(1), 1.0, 5), std::invalid_argument);
}

TEST_CASE("error bound: direct value is echoed and confidence is (1 - eps)^n") {
    const auto b = ErrorBoundParams::from_direct(0.19, 0.3, 0.01, 2);
    CHECK(b.bound() == 0.19);
    CHECK(b.confidence() == doctest::Approx(0.9801).epsilon(1e-14));
}

TEST_CASE("model file: round trip is bit-exact") {
    std::mt19937_64 rng(4);
    TrainingSet t = random_set(rng, 15, 4, 2, 0.01);
    const KernelParams ks[2] = {kernel(115.0, Vec::Constant(4, 1.2)), kernel(186.0, Vec::Constant(4, 0.7))};
    GpPosterior gp = fit(t, ks);
    gp.set_error_bound(ErrorBoundParams::from_direct(0.19, 0.25, 0.01, 2));
    const auto dir = oracle::scratch_dir("model_roundtrip");
    save_model(dir / "model.json", gp);
    const GpPosterior back = load_model(dir / "model.json");
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back.outputs()[i].weights == gp.outputs()[i].weights);
        CHECK(back.outputs()[i].jitter == gp.outputs()[i].jitter);
    }
    CHECK(back.inputs() == gp.inputs());
    const Vec x = Vec::Constant(4, 0.1);
    CHECK(back.predict_mean(x) == gp.predict_mean(x));
    REQUIRE(back.error_bound().has_value());
    CHECK(back.error_bound()->bound() == 0.19);
}

TEST_CASE("model file: wrong schema is rejected") {
    const auto dir = oracle::scratch_dir("model_schema");
    std::ofstream(dir / "bad.json") << R"({"schema":"something else","version":1})";
    CHECK_THROWS(load_model(dir / "bad.json"));
}
