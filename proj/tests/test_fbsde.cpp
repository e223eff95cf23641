#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "fbsde/fbsde.hpp"

using namespace fbsde;

namespace {

NumericsConfig small_numerics() {
    NumericsConfig nc;
    nc.n_steps = 32;
    nc.n_paths = 8000;
    return nc;
}

}  // namespace

TEST_CASE("zero market price of risk is solved exactly") {
    auto mkt = MarketModel::build(1, 0, constant_theta({0.0}), 1.0);

    SUBCASE("real line") {
        ProblemSpec spec{mkt, UtilityModel::exponential(1.0), 0.3, endowment_none()};
        auto sol = solve_complete_realline(spec, small_numerics());
        CHECK(sol.status == SolveStatus::Converged);
        REQUIRE(sol.m_star.has_value());
        CHECK(std::abs(*sol.m_star) < 1e-10);
        for (int p = 0; p < 50; ++p)
            for (int k = 0; k <= 32; ++k) {
                CHECK(std::abs(sol.y.at(p, k)) < 1e-10);
                CHECK(std::abs(sol.x.at(p, k) - 0.3) < 1e-10);
                CHECK(std::abs(sol.pi_star[0].at(p, k)) < 1e-8);
            }
    }

    SUBCASE("half line") {
        ProblemSpec spec{mkt, UtilityModel::power(0.5), 2.0, endowment_none()};
        auto sol = solve_complete_halfline(spec, small_numerics());
        CHECK(sol.status == SolveStatus::Converged);
        for (int p = 0; p < 50; ++p)
            for (int k = 0; k <= 32; ++k) {
                CHECK(std::abs(sol.y.at(p, k)) < 1e-10);
                CHECK(std::abs(sol.x.at(p, k) - 2.0) < 1e-10);
            }
    }
}

TEST_CASE("exponential Merton problem matches the closed form") {
    auto mkt = MarketModel::build(1, 0, constant_theta({0.2}), 1.0);
    ProblemSpec spec{mkt, UtilityModel::exponential(1.0), 0.0, endowment_none()};
    auto nc = small_numerics();
    nc.n_paths = 20000;
    auto sol = solve_complete_realline(spec, nc);
    CHECK(sol.status == SolveStatus::Converged);
    CHECK(sol.solver_name == "complete_realline");
    REQUIRE(sol.m_star.has_value());
    // Y_0 = m* = |theta|^2 T / 2 = 0.02; pi* = theta / alpha = 0.2
    CHECK(sol.y.at(0, 0) == doctest::Approx(0.02).epsilon(0.05));
    CHECK(*sol.m_star == doctest::Approx(0.02).epsilon(0.05));
    CHECK(std::abs(sol.y.at(0, 0) - *sol.m_star) <= nc.fp_tol);
    double pi_mean = 0.0;
    for (int p = 0; p < sol.bundle.n_paths(); ++p) pi_mean += sol.pi_star[0].at(p, 16);
    pi_mean /= sol.bundle.n_paths();
    CHECK(pi_mean == doctest::Approx(0.2).epsilon(0.02));
}

TEST_CASE("power Merton problem matches the closed form") {
    auto mkt = MarketModel::build(1, 0, constant_theta({0.2}), 1.0);
    ProblemSpec spec{mkt, UtilityModel::power(0.5), 1.0, endowment_none()};
    auto nc = small_numerics();
    nc.n_paths = 20000;
    auto sol = solve_complete_halfline(spec, nc);
    CHECK(sol.status == SolveStatus::Converged);
    CHECK(sol.solver_name == "complete_halfline");
    // Y_0 = |theta|^2 T / (2 (1 - gamma)^2) * ... for the log-value process:
    // gamma = 1/2 gives Y_0 = m* = 0.02 and pi* = theta / (1 - gamma) = 0.4
    CHECK(sol.y.at(0, 0) == doctest::Approx(0.02).epsilon(0.05));
    double pi_mean = 0.0;
    for (int p = 0; p < sol.bundle.n_paths(); ++p) pi_mean += sol.pi_star[0].at(p, 16);
    pi_mean /= sol.bundle.n_paths();
    CHECK(pi_mean == doctest::Approx(0.4).epsilon(0.02));
}

TEST_CASE("half-line construction keeps U'(X)e^Y on the dual ray pathwise") {
    auto mkt = MarketModel::build(1, 0, constant_theta({0.3}), 1.0);
    ProblemSpec spec{mkt, UtilityModel::power(0.5), 1.5,
                     endowment_affine_tanh(0.2, 0.1, 0)};
    auto sol = solve_complete_halfline(spec, small_numerics());
    REQUIRE(sol.status == SolveStatus::Converged);
    REQUIRE(sol.m_star.has_value());
    // U'(X_k) e^{Y_k} = U'(x0) e^{m*} E_k(-theta W) exactly, every node and path
    auto dens = stochastic_exponential(sol.bundle, [&](double t) {
        auto th = mkt.theta(t);
        for (double& v : th) v = -v;
        return th;
    });
    const double d0 = spec.utility.u1(spec.x0) * std::exp(*sol.m_star);
    double worst = 0.0;
    for (int p = 0; p < sol.bundle.n_paths(); ++p)
        for (int k = 0; k <= 32; ++k) {
            double lhs = spec.utility.u1(sol.x.at(p, k)) * std::exp(sol.y.at(p, k));
            double rhs = d0 * dens.at(p, k);
            worst = std::max(worst, std::abs(lhs / rhs - 1.0));
        }
    CHECK(worst < 1e-12);
}

TEST_CASE("real-line endowment shifts the terminal exactly") {
    auto mkt = MarketModel::build(1, 0, constant_theta({0.2}), 1.0);
    ProblemSpec spec{mkt, UtilityModel::exponential(1.0), 0.0,
                     endowment_affine_tanh(0.0, 0.5, 0)};
    auto sol = solve_complete_realline(spec, small_numerics());
    REQUIRE(sol.status == SolveStatus::Converged);
    // Y_N = H and X_N = P_N - H by construction
    for (int p = 0; p < 200; ++p) {
        CHECK(sol.terminal[p] ==
              doctest::Approx(0.5 * std::tanh(sol.bundle.w(p, 32, 0))).epsilon(1e-13));
        CHECK(sol.y.at(p, 32) == doctest::Approx(sol.terminal[p]).epsilon(1e-13));
    }
}

TEST_CASE("infeasible endowment is reported, not silently clipped") {
    auto mkt = MarketModel::build(1, 0, constant_theta({0.2}), 1.0);
    // x0 far below the certain part of the liability
    ProblemSpec spec{mkt, UtilityModel::power(0.5), 0.05,
                     endowment_affine_tanh(2.0, 0.1, 0)};
    auto sol = solve_complete_halfline(spec, small_numerics());
    CHECK(sol.status == SolveStatus::Infeasible);
    CHECK_FALSE(sol.message.empty());
}

TEST_CASE("strategy identities hold on every solver output") {
    auto nc = small_numerics();
    nc.n_paths = 4000;

    SUBCASE("real line: pi = -theta phi1(X + Y) - Z") {
        auto mkt = MarketModel::build(1, 0, constant_theta({0.2}), 1.0);
        ProblemSpec spec{mkt, UtilityModel::mixture_exp(1.0, 2.0), 0.3, endowment_none()};
        auto sol = solve_complete_realline(spec, nc);
        double worst = 0.0;
        for (int p = 0; p < 4000; ++p)
            for (int k = 0; k <= 32; ++k) {
                double expect = -0.2 * phi1(spec.utility, sol.x.at(p, k) + sol.y.at(p, k)) -
                                sol.z[0].at(p, k);
                worst = std::max(worst, std::abs(sol.pi_star[0].at(p, k) - expect));
            }
        CHECK(worst < 1e-12);
    }

    SUBCASE("half line: pi X = -phi1(X)(Z + theta)") {
        auto mkt = MarketModel::build(1, 0, constant_theta({0.2}), 1.0);
        ProblemSpec spec{mkt, UtilityModel::power(0.7), 1.0, endowment_none()};
        auto sol = solve_complete_halfline(spec, nc);
        double worst = 0.0;
        for (int p = 0; p < 4000; ++p)
            for (int k = 0; k <= 32; ++k) {
                double x = sol.x.at(p, k);
                double expect = -phi1(spec.utility, x) * (sol.z[0].at(p, k) + 0.2) / x;
                worst = std::max(worst, std::abs(sol.pi_star[0].at(p, k) - expect));
            }
        CHECK(worst < 1e-12);
    }
}

TEST_CASE("dispatch routes by domain and completeness") {
    auto nc = small_numerics();
    nc.n_paths = 2000;
    nc.picard_max_iter = 5;

    auto mkt_c = MarketModel::build(1, 0, constant_theta({0.2}), 1.0);
    ProblemSpec sr{mkt_c, UtilityModel::exponential(1.0), 0.0, endowment_none()};
    CHECK(solve(sr, nc).solver_name == "complete_realline");
    ProblemSpec sh{mkt_c, UtilityModel::power(0.5), 1.0, endowment_none()};
    CHECK(solve(sh, nc).solver_name == "complete_halfline");

    auto mkt_i = MarketModel::build(1, 1, constant_theta({0.2, 0.0}), 1.0);
    ProblemSpec si{mkt_i, UtilityModel::exponential(1.0), 0.0, endowment_none()};
    auto sol = solve(si, nc);
    CHECK(sol.solver_name == "incomplete_picard");
    CHECK(sol.experimental);
}

TEST_CASE("power endowment solver verifies the terminal identity") {
    auto mkt = MarketModel::build(1, 0, constant_theta({0.2}), 1.0);
    ProblemSpec spec{mkt, UtilityModel::power(0.5), 2.0, endowment_affine_tanh(0.5, 0.2, 0)};
    auto sol = solve_power_endowment(spec, small_numerics());
    REQUIRE(sol.status == SolveStatus::Converged);
    REQUIRE(sol.terminal_identity_gap.has_value());
    CHECK(*sol.terminal_identity_gap < 1e-12);
    // (gamma - 1) log(1 + H / X_N) against the stored terminal data
    for (int p = 0; p < 200; ++p) {
        double expect = -0.5 * std::log1p(sol.terminal[p] / sol.x.at(p, 32));
        CHECK(sol.y.at(p, 32) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("picard solver logs a residual history and reports honestly") {
    auto mkt = MarketModel::build(1, 1, constant_theta({0.2, 0.0}), 1.0);
    ProblemSpec spec{mkt, UtilityModel::exponential(1.0), 0.0, endowment_none()};
    auto nc = small_numerics();
    nc.n_paths = 4000;
    auto sol = solve_incomplete_picard(spec, nc);
    CHECK((sol.status == SolveStatus::Converged || sol.status == SolveStatus::MaxIterations));
    CHECK_FALSE(sol.iteration_log.empty());
    for (double r : sol.iteration_log) CHECK(std::isfinite(r));
    CHECK(sol.experimental);
}

TEST_CASE("configuration is validated up front") {
    auto mkt = MarketModel::build(1, 0, constant_theta({0.2}), 1.0);
    ProblemSpec spec{mkt, UtilityModel::exponential(1.0), 0.0, endowment_none()};
    auto nc = small_numerics();
    nc.n_steps = 0;
    CHECK_THROWS_AS(solve(spec, nc), FbsdeError);
    nc = small_numerics();
    nc.n_paths = 1;
    CHECK_THROWS_AS(solve(spec, nc), FbsdeError);
    nc = small_numerics();
    nc.damping = 0.0;
    CHECK_THROWS_AS(solve(spec, nc), FbsdeError);

    // half-line solver requires positive initial wealth
    ProblemSpec bad{mkt, UtilityModel::power(0.5), -1.0, endowment_none()};
    CHECK_THROWS_AS(solve(bad, small_numerics()), FbsdeError);
}
