#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "fbsde/paths.hpp"

using namespace fbsde;

TEST_CASE("bundle is reproducible and consistent") {
    TimeGrid grid{8, 1.0};
    auto a = sample_brownian(grid, 50, 2, 42);
    auto b = sample_brownian(grid, 50, 2, 42);
    auto c = sample_brownian(grid, 50, 2, 43);
    bool identical = true, differs = false;
    for (int p = 0; p < 50; ++p)
        for (int k = 0; k < 8; ++k)
            for (int i = 0; i < 2; ++i) {
                identical = identical && a.dw(p, k, i) == b.dw(p, k, i);
                differs = differs || a.dw(p, k, i) != c.dw(p, k, i);
            }
    CHECK(identical);
    CHECK(differs);
    // levels are prefix sums of increments, starting at zero
    for (int p = 0; p < 50; ++p) {
        CHECK(a.w(p, 0, 0) == 0.0);
        double acc = 0.0;
        for (int k = 0; k < 8; ++k) {
            acc += a.dw(p, k, 1);
            CHECK(a.w(p, k + 1, 1) == doctest::Approx(acc).epsilon(1e-14));
        }
    }
}

TEST_CASE("brownian moments match at MC accuracy") {
    TimeGrid grid{4, 1.0};
    const int M = 200000;
    auto bundle = sample_brownian(grid, M, 1, 7);
    double mean = 0.0, var = 0.0;
    for (int p = 0; p < M; ++p) mean += bundle.w(p, 4, 0);
    mean /= M;
    for (int p = 0; p < M; ++p) {
        double d = bundle.w(p, 4, 0) - mean;
        var += d * d;
    }
    var /= M - 1;
    CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(M)));
    CHECK(var == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("coarsen sums consecutive increments") {
    TimeGrid fine{16, 1.0};
    auto bundle = sample_brownian(fine, 20, 1, 5);
    auto coarse = coarsen(bundle, 4);
    CHECK(coarse.grid().n_steps == 4);
    CHECK(coarse.grid().horizon == 1.0);
    for (int p = 0; p < 20; ++p)
        for (int k = 0; k < 4; ++k) {
            double sum = 0.0;
            for (int j = 0; j < 4; ++j) sum += bundle.dw(p, 4 * k + j, 0);
            CHECK(coarse.dw(p, k, 0) == doctest::Approx(sum).epsilon(1e-14));
            CHECK(coarse.w(p, k + 1, 0) == doctest::Approx(bundle.w(p, 4 * (k + 1), 0)).epsilon(1e-14));
        }
    CHECK_THROWS_AS(coarsen(bundle, 3), PathError);
}

TEST_CASE("stochastic exponential has unit mean and exact log increments") {
    TimeGrid grid{32, 1.0};
    const int M = 100000;
    auto bundle = sample_brownian(grid, M, 1, 11);
    auto e = stochastic_exponential(bundle, [](double) { return Vec{-0.2}; });
    double mean = 0.0;
    for (int p = 0; p < M; ++p) mean += e.at(p, 32);
    mean /= M;
    CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
    // exact log increment: log E_{k+1} - log E_k = a dW - a^2 dt / 2
    const double dt = grid.dt();
    for (int p = 0; p < 5; ++p)
        for (int k = 0; k < 32; ++k) {
            double lhs = std::log(e.at(p, k + 1)) - std::log(e.at(p, k));
            double rhs = -0.2 * bundle.dw(p, k, 0) - 0.5 * 0.04 * dt;
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
        }
}

TEST_CASE("euler_sde reproduces deterministic linear ODE and flags blow-ups") {
    TimeGrid grid{1000, 1.0};
    auto bundle = sample_brownian(grid, 3, 1, 1);
    auto x = euler_sde(
        bundle, [](double, double v) { return v; }, [](double, double) { return Vec{0.0}; }, 1.0);
    // Euler compound growth (1 + dt)^N, not e, is the exact discrete answer
    const double expected = std::pow(1.0 + grid.dt(), 1000);
    for (int p = 0; p < 3; ++p) CHECK(x.at(p, 1000) == doctest::Approx(expected).epsilon(1e-12));

    CHECK_THROWS_AS(euler_sde(
                        bundle, [](double, double v) { return v * v * 1e100; },
                        [](double, double) { return Vec{0.0}; }, 1e200),
                    PathError);
}

TEST_CASE("wealth conventions satisfy their exact recursions") {
    TimeGrid grid{16, 1.0};
    auto mkt = MarketModel::build(1, 0, constant_theta({0.2}), 1.0);
    auto bundle = sample_brownian(grid, 40, 1, 9);
    std::vector<StatePaths> pi{StatePaths(grid, 40, 0.3)};
    const double dt = grid.dt();

    auto xa = wealth_amount(bundle, mkt, pi, 1.0);
    for (int p = 0; p < 40; ++p)
        for (int k = 0; k < 16; ++k) {
            double rhs = xa.at(p, k) + 0.3 * (bundle.dw(p, k, 0) + 0.2 * dt);
            CHECK(xa.at(p, k + 1) == doctest::Approx(rhs).epsilon(1e-13));
        }

    auto xp = wealth_proportion(bundle, mkt, pi, 1.0);
    for (int p = 0; p < 40; ++p)
        for (int k = 0; k < 16; ++k) {
            CHECK(xp.at(p, k) > 0.0);
            double rhs = std::log(xp.at(p, k)) + 0.3 * (bundle.dw(p, k, 0) + 0.2 * dt) -
                         0.5 * 0.09 * dt;
            CHECK(std::log(xp.at(p, k + 1)) == doctest::Approx(rhs).epsilon(1e-12));
        }
}
