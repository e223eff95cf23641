// End-to-end acceptance suite. Each numbered criterion prints one PASS/FAIL
// line; the process exits nonzero if any criterion fails. argv[1] must point
// at the command-line binary (used by the determinism criterion).
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fbsde/diagnostics.hpp"
#include "fbsde/fbsde.hpp"
#include "fbsde/parallel.hpp"

using namespace fbsde;

namespace {

int g_failures = 0;

void report(int id, const std::string& title, bool pass, const std::string& detail) {
    std::printf("[%s] %2d. %s — %s\n", pass ? "PASS" : "FAIL", id, title.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double mean_y0(const FbsdeSolution& s) {
    double m = 0.0;
    for (int p = 0; p < s.y.n_paths(); ++p) m += s.y.at(p, 0);
    return m / s.y.n_paths();
}

double node_mean(const StatePaths& s, int k) {
    double m = 0.0;
    for (int p = 0; p < s.n_paths(); ++p) m += s.at(p, k);
    return m / s.n_paths();
}

// Worst relative deviation of the node means of pi from target(t_k).
double worst_node_rel(const FbsdeSolution& s, const std::function<double(double)>& target) {
    const TimeGrid& g = s.y.grid();
    double worst = 0.0;
    for (int k = 0; k < g.n_nodes(); ++k) {
        double t = target(g.node(k));
        worst = std::max(worst, std::abs(node_mean(s.pi_star[0], k) / t - 1.0));
    }
    return worst;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

const CheckResult* find_check(const std::vector<CheckResult>& cs, const std::string& name) {
    for (const auto& c : cs)
        if (c.name == name) return &c;
    return nullptr;
}

// ---- criterion 1 -----------------------------------------------------------

FbsdeSolution criterion_merton(FbsdeSolution* exp_out) {
    auto mkt = MarketModel::build(1, 0, constant_theta({0.2}), 1.0);
    NumericsConfig nc;
    nc.n_steps = 64;
    nc.n_paths = 20000;

    ProblemSpec se{mkt, UtilityModel::exponential(1.0), 0.0, endowment_none()};
    set_thread_count(1);
    auto t0 = std::chrono::steady_clock::now();
    auto sol_exp = solve(se, nc);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    set_thread_count(hardware_thread_count());
    double worst_exp = worst_node_rel(sol_exp, [](double) { return 0.2; });

    ProblemSpec sp{mkt, UtilityModel::power(0.5), 1.0, endowment_none()};
    auto sol_pow = solve(sp, nc);
    double worst_pow = worst_node_rel(sol_pow, [](double) { return 0.4; });
    double y0_pow = mean_y0(sol_pow);

    auto mkt_t =
        MarketModel::build(1, 0, piecewise_linear_theta({{0.0, {0.1}}, {1.0, {0.2}}}), 1.0);
    ProblemSpec sl{mkt_t, UtilityModel::log_utility(), 1.0, endowment_none()};
    auto sol_log = solve(sl, nc);
    double worst_log = worst_node_rel(sol_log, [](double t) { return 0.1 + 0.1 * t; });

    bool pass = worst_exp < 0.05 && secs < 30.0 && worst_pow < 0.05 &&
                std::abs(y0_pow - 0.02) <= 2e-3 && worst_log < 0.05;
    report(1, "Merton closed-form recovery (exponential / power / log)", pass,
           "pi rel err " + fmt(worst_exp) + " / " + fmt(worst_pow) + " / " + fmt(worst_log) +
               ", power Y0 " + fmt(y0_pow) + ", exp runtime " + fmt(secs) + "s (1 thread)");
    if (exp_out) *exp_out = sol_exp;
    return sol_pow;
}

// ---- criterion 2 -----------------------------------------------------------

void criterion_fixed_point() {
    auto mkt = MarketModel::build(1, 0, constant_theta({0.2}), 1.0);
    ProblemSpec spec{mkt, UtilityModel::mixture_exp(1.0, 2.0), 0.0, endowment_none()};
    NumericsConfig nc;
    nc.n_steps = 64;
    nc.n_paths = 20000;

    bool all_converged = true;
    double gap = 0.0, lo = 1e300, hi = -1e300;
    for (std::uint64_t seed : {12345ULL, 7ULL, 99ULL, 2024ULL, 555ULL}) {
        nc.seed = seed;
        auto sol = solve(spec, nc);
        all_converged = all_converged && sol.status == SolveStatus::Converged &&
                        sol.m_star.has_value();
        double m = sol.m_star.value_or(0.0);
        gap = std::max(gap, std::abs(mean_y0(sol) - m));
        lo = std::min(lo, m);
        hi = std::max(hi, m);
    }
    bool pass = all_converged && gap <= 1e-3 && hi - lo <= 2e-3;
    report(2, "Fixed point on the non-HARA exponential mixture", pass,
           std::string(all_converged ? "converged" : "NOT converged") + ", |Y0 - m*| " +
               fmt(gap) + ", m* spread over 5 seeds " + fmt(hi - lo));
}

// ---- criterion 3 -----------------------------------------------------------

FbsdeSolution criterion_martingale_identities() {
    // (a) half-line dual-ray identity, exact by construction
    auto mkt = MarketModel::build(1, 0, constant_theta({0.2}), 1.0);
    ProblemSpec spec_h{mkt, UtilityModel::power(0.5), 1.5, endowment_affine_tanh(0.2, 0.1, 0)};
    NumericsConfig nc;
    nc.n_steps = 64;
    nc.n_paths = 20000;
    auto sol_h = solve_power_endowment(spec_h, nc);

    double worst_a = 1e300;
    if (sol_h.status == SolveStatus::Converged && sol_h.m_star.has_value()) {
        auto dens = stochastic_exponential(sol_h.bundle, [&](double t) {
            Vec th = mkt.theta(t);
            for (double& v : th) v = -v;
            return th;
        });
        const double d0 = spec_h.utility.u1(spec_h.x0) * std::exp(*sol_h.m_star);
        worst_a = 0.0;
        for (int p = 0; p < nc.n_paths; ++p)
            for (int k = 0; k <= nc.n_steps; ++k) {
                double lhs =
                    spec_h.utility.u1(sol_h.x.at(p, k)) * std::exp(sol_h.y.at(p, k));
                worst_a = std::max(worst_a, std::abs(lhs / (d0 * dens.at(p, k)) - 1.0));
            }
    }

    // (b) real-line identity U'(X + Y) = U'(x0 + m*) E(-theta W): the relative
    // RMS gap must shrink by a factor in [1.1, 2] per grid doubling
    ProblemSpec spec_r{mkt, UtilityModel::mixture_exp(1.0, 2.0), 0.3, endowment_none()};
    std::vector<double> rms;
    for (int n : {32, 64, 128}) {
        NumericsConfig nr;
        nr.n_steps = n;
        nr.n_paths = 20000;
        auto sol = solve(spec_r, nr);
        auto dens = stochastic_exponential(sol.bundle, [&](double t) {
            Vec th = mkt.theta(t);
            for (double& v : th) v = -v;
            return th;
        });
        const double d0 = spec_r.utility.u1(spec_r.x0 + sol.m_star.value_or(0.0));
        double acc = 0.0;
        std::size_t cnt = 0;
        for (int p = 0; p < nr.n_paths; ++p)
            for (int k = 0; k <= n; ++k) {
                double lhs = spec_r.utility.u1(sol.x.at(p, k) + sol.y.at(p, k));
                double rel = lhs / (d0 * dens.at(p, k)) - 1.0;
                acc += rel * rel;
                ++cnt;
            }
        rms.push_back(std::sqrt(acc / cnt));
    }
    double r1 = rms[0] / rms[1], r2 = rms[1] / rms[2];
    bool pass = worst_a < 1e-12 && r1 >= 1.1 && r1 <= 2.0 && r2 >= 1.1 && r2 <= 2.0;
    report(3, "Martingale identities (half-line exact, real-line refining)", pass,
           "half-line rel gap " + fmt(worst_a) + "; real-line RMS " + fmt(rms[0]) + " -> " +
               fmt(rms[1]) + " -> " + fmt(rms[2]) + " (ratios " + fmt(r1) + ", " + fmt(r2) +
               ")");
    return sol_h;
}

// ---- criterion 4 -----------------------------------------------------------

void criterion_first_order() {
    auto mkt = MarketModel::build(1, 0, constant_theta({0.2}), 1.0);
    ProblemSpec spec{mkt, UtilityModel::exponential(1.0), 0.0, endowment_none()};
    NumericsConfig nc;
    nc.n_steps = 64;
    nc.n_paths = 100000;
    auto sol = solve(spec, nc);

    auto checks = first_order_condition_test(sol, spec);
    bool opt_pass = checks.size() == 6;
    for (const auto& c : checks) opt_pass = opt_pass && c.passed;

    // the same test must reject the shifted strategy pi* + 0.5
    FbsdeSolution shifted = sol;
    std::vector<StatePaths> pi = sol.pi_star;
    for (auto& comp : pi)
        for (int p = 0; p < sol.bundle.n_paths(); ++p)
            for (int k = 0; k <= nc.n_steps; ++k) comp.at(p, k) += 0.5;
    shifted.x = wealth_amount(sol.bundle, mkt, pi, spec.x0);
    bool any_reject = false;
    for (const auto& c : first_order_condition_test(shifted, spec))
        any_reject = any_reject || !c.passed;

    report(4, "First-order optimality at 1e5 paths", opt_pass && any_reject,
           std::string("6 perturbations ") + (opt_pass ? "within 3 SE" : "FAILED") +
               "; shifted strategy " + (any_reject ? "rejected" : "NOT rejected"));
}

// ---- criterion 5 -----------------------------------------------------------

double strategy_gap(const FbsdeSolution& s, const ProblemSpec& spec) {
    const TimeGrid& g = s.y.grid();
    const UtilityModel& u = spec.utility;
    double worst = 0.0;
    for (int k = 0; k < g.n_nodes(); ++k) {
        Vec th = spec.market.theta_split(g.node(k)).first;
        for (int p = 0; p < s.y.n_paths(); ++p)
            for (int i = 0; i < spec.market.d1(); ++i) {
                double gap;
                if (u.domain() == Domain::RealLine) {
                    double p1 = phi1(u, s.x.at(p, k) + s.y.at(p, k));
                    gap = s.pi_star[i].at(p, k) + s.z[i].at(p, k) + th[i] * p1;
                } else {
                    double x = s.x.at(p, k);
                    gap = s.pi_star[i].at(p, k) * x * u.u2(x) +
                          u.u1(x) * (s.z[i].at(p, k) + th[i]);
                }
                worst = std::max(worst, std::abs(gap));
            }
    }
    return worst;
}

// ---- criterion 6 -----------------------------------------------------------

void criterion_cole_hopf() {
    auto mkt = MarketModel::build(1, 0, constant_theta({0.2}), 1.0);
    ProblemSpec spec{mkt, UtilityModel::power(0.5), 1.0, endowment_none()};

    bool terminal_exact = true, hamiltonian_ok = true;
    std::vector<double> lrms, ln;
    for (int n : {16, 32, 64, 128}) {
        NumericsConfig nc;
        nc.n_steps = n;
        // joint refinement: the residual is dominated by Z-regression noise
        // ~ 1/sqrt(M) with a mild upward drift in N, so M grows superlinearly
        nc.n_paths = static_cast<int>(500.0 * std::pow(static_cast<double>(n), 4.0 / 3.0));
        auto sol = solve(spec, nc);
        auto checks = cole_hopf_check(sol, spec);
        const CheckResult* term = find_check(checks, "cole_hopf.terminal");
        const CheckResult* rms = find_check(checks, "cole_hopf.residual_rms");
        const CheckResult* ham = find_check(checks, "cole_hopf.hamiltonian");
        terminal_exact = terminal_exact && term && term->statistic == 0.0;
        hamiltonian_ok = hamiltonian_ok && ham && ham->passed;
        if (rms) {
            lrms.push_back(std::log(rms->statistic));
            ln.push_back(std::log(static_cast<double>(n)));
        }
    }
    // least-squares slope of log(rms) against log(N); order = -slope
    double order = 0.0;
    if (lrms.size() == 4) {
        double mx = 0, my = 0;
        for (int i = 0; i < 4; ++i) mx += ln[i], my += lrms[i];
        mx /= 4, my /= 4;
        double num = 0, den = 0;
        for (int i = 0; i < 4; ++i) {
            num += (ln[i] - mx) * (lrms[i] - my);
            den += (ln[i] - mx) * (ln[i] - mx);
        }
        order = -num / den;
    }
    bool pass = terminal_exact && hamiltonian_ok && order >= 0.4;
    report(6, "Adjoint-system equivalence on the power problem", pass,
           std::string("terminal ") + (terminal_exact ? "exact" : "INEXACT") +
               ", residual order " + fmt(order) + ", Hamiltonian identity " +
               (hamiltonian_ok ? "within 1e-10" : "FAILED"));
}

// ---- criteria 7 + 8 --------------------------------------------------------

FbsdeSolution criterion_duality() {
    auto mkt = MarketModel::build(1, 1, constant_theta({0.2, 0.0}), 1.0);
    ProblemSpec spec{mkt, UtilityModel::power(0.5), 2.0, endowment_affine_tanh(1.0, 0.5, 1)};
    NumericsConfig nc;
    nc.n_steps = 32;
    nc.n_paths = 100000;

    auto sol = solve_power_endowment(spec, nc);
    auto checks = dual_consistency_check(sol, spec);
    const CheckResult* start = find_check(checks, "dual.start");
    const CheckResult* prod = find_check(checks, "dual.product_martingale");
    const CheckResult* zo = find_check(checks, "dual.zo_energy");
    bool repr_ok = true;
    for (const auto& c : checks)
        if (c.name.rfind("dual.representation", 0) == 0) repr_ok = repr_ok && c.passed;

    bool start_ok = start && start->statistic == 0.0;
    bool prod_ok = prod && prod->passed;
    double e1 = zo ? zo->statistic : 0.0;

    nc.seed = 777;
    auto sol2 = solve_power_endowment(spec, nc);
    const CheckResult* zo2 = find_check(dual_consistency_check(sol2, spec), "dual.zo_energy");
    double e2 = zo2 ? zo2->statistic : 0.0;
    bool zo_ok = std::isfinite(e1) && std::isfinite(e2) && e1 > 0.0 &&
                 std::abs(e2 / e1 - 1.0) <= 0.10;

    report(7, "Dual optimizer consistency with an untradable endowment",
           start_ok && prod_ok && repr_ok && zo_ok,
           std::string("Y*_0 ") + (start_ok ? "= 1 exactly" : "INEXACT") + ", E[X_N Y*_N] " +
               (prod_ok ? "matches x0" : "MISMATCH") + ", representation " +
               (repr_ok ? "within 3 SE" : "FAILED") + ", Z^O energy " + fmt(e1) + " vs " +
               fmt(e2) + " across seeds");
    return sol;
}

void criterion_power_terminal(const FbsdeSolution& complete, const FbsdeSolution& picard) {
    double g1 = complete.terminal_identity_gap.value_or(1e300);
    double g2 = picard.terminal_identity_gap.value_or(1e300);
    bool pass = g1 < 1e-12 && g2 < 1e-12;
    report(8, "Power terminal identity pathwise", pass,
           "max gap " + fmt(g1) + " (complete), " + fmt(g2) + " (Picard)");
}

// ---- criterion 9 -----------------------------------------------------------

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string strip_timestamp(const std::string& text) {
    std::istringstream in(text);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line))
        if (line.find("generated_at") == std::string::npos) out << line << '\n';
    return out.str();
}

int run_command(const std::string& cmd) { return std::system(cmd.c_str()); }

void criterion_determinism(const std::string& cli) {
    const std::string dir = "acceptance_tmp";
    run_command("rm -rf " + dir);
    run_command("mkdir -p " + dir);
    {
        std::ofstream cfg(dir + "/config.json");
        cfg << R"({
  "market": {"d1": 1, "d2": 0, "horizon": 1.0,
             "theta": {"type": "constant", "value": [0.2]}},
  "utility": {"family": "power", "gamma": 0.5},
  "problem": {"x0": 1.0},
  "numerics": {"n_steps": 32, "n_paths": 10000, "seed": 4242}
})";
    }
    bool ran = true;
    for (int threads : {1, 4, hardware_thread_count()}) {
        std::string cmd = cli + " solve --config " + dir + "/config.json --out " + dir +
                          "/t" + std::to_string(threads) + " --threads " +
                          std::to_string(threads) + " > /dev/null 2>&1";
        ran = ran && run_command(cmd) == 0;
    }
    bool identical = ran;
    if (ran) {
        std::string ref = dir + "/t1";
        for (int threads : {4, hardware_thread_count()}) {
            std::string other = dir + "/t" + std::to_string(threads);
            for (const char* f :
                 {"solution_X.csv", "solution_Y.csv", "solution_Z.csv", "solution_pi.csv"}) {
                std::string a = slurp(ref + "/" + f), b = slurp(other + "/" + f);
                identical = identical && !a.empty() && a == b;
            }
            identical = identical && strip_timestamp(slurp(ref + "/meta.json")) ==
                                         strip_timestamp(slurp(other + "/meta.json"));
        }
    }
    run_command("rm -rf " + dir);
    report(9, "Byte-identical output across thread counts {1, 4, hardware}",
           ran && identical,
           ran ? (identical ? "all CSV/JSON artifacts identical" : "artifacts DIFFER")
               : "command-line run failed");
}

// ---- criterion 10 ----------------------------------------------------------

void criterion_picard_embedding() {
    NumericsConfig nc;
    nc.n_steps = 32;
    nc.n_paths = 40000;
    nc.fp_tol = 2e-4;
    nc.picard_tol = 2e-4;

    auto mkt_c = MarketModel::build(1, 0, constant_theta({0.2}), 1.0);
    ProblemSpec spec_c{mkt_c, UtilityModel::exponential(1.0), 0.0,
                       endowment_affine_tanh(0.0, 0.4, 0)};
    auto sol_c = solve_complete_realline(spec_c, nc);

    auto mkt_i = MarketModel::build(1, 1, constant_theta({0.2, 0.0}), 1.0);
    ProblemSpec spec_e{mkt_i, UtilityModel::exponential(1.0), 0.0,
                       endowment_affine_tanh(0.0, 0.4, 0)};
    auto sol_e = solve_incomplete_picard(spec_e, nc);
    double gap = std::abs(mean_y0(sol_e) - mean_y0(sol_c));

    ProblemSpec spec_o{mkt_i, UtilityModel::exponential(1.0), 0.0,
                       endowment_affine_tanh(0.0, 0.4, 1)};
    nc.n_paths = 20000;
    auto sol_o = solve_incomplete_picard(spec_o, nc);
    bool honest = (sol_o.status == SolveStatus::Converged ||
                   sol_o.status == SolveStatus::MaxIterations) &&
                  !sol_o.iteration_log.empty() && sol_o.experimental;
    bool monotone = true;
    for (std::size_t i = 1; i < sol_o.iteration_log.size(); ++i)
        monotone = monotone &&
                   sol_o.iteration_log[i] <= sol_o.iteration_log[i - 1] * 1.10 + 1e-12;

    bool pass = gap <= 5e-3 && honest && monotone;
    report(10, "Picard solver: embedding agreement and honest reporting", pass,
           "embedded Y0 gap " + fmt(gap) + "; orthogonal endowment " +
               to_string(sol_o.status) + " after " +
               std::to_string(sol_o.iteration_log.size()) + " iterations, residual log " +
               (monotone ? "monotone" : "NOT monotone"));
}

}  // namespace

int main(int argc, char** argv) {
    set_thread_count(hardware_thread_count());

    FbsdeSolution sol_exp;
    FbsdeSolution sol_pow = criterion_merton(&sol_exp);
    criterion_fixed_point();
    FbsdeSolution sol_half = criterion_martingale_identities();
    criterion_first_order();
    criterion_cole_hopf();
    FbsdeSolution sol_dual = criterion_duality();
    criterion_power_terminal(sol_half, sol_dual);

    // criterion 5 checks every solution produced above
    {
        auto mkt1 = MarketModel::build(1, 0, constant_theta({0.2}), 1.0);
        auto mkt2 = MarketModel::build(1, 1, constant_theta({0.2, 0.0}), 1.0);
        ProblemSpec se{mkt1, UtilityModel::exponential(1.0), 0.0, endowment_none()};
        ProblemSpec sp{mkt1, UtilityModel::power(0.5), 1.0, endowment_none()};
        ProblemSpec sh{mkt1, UtilityModel::power(0.5), 1.5, endowment_affine_tanh(0.2, 0.1, 0)};
        ProblemSpec sd{mkt2, UtilityModel::power(0.5), 2.0, endowment_affine_tanh(1.0, 0.5, 1)};
        double worst = std::max({strategy_gap(sol_exp, se), strategy_gap(sol_pow, sp),
                                 strategy_gap(sol_half, sh), strategy_gap(sol_dual, sd)});
        report(5, "Strategy identities exact on every solver output", worst < 1e-12,
               "max pathwise gap " + fmt(worst));
    }

    if (argc > 1)
        criterion_determinism(argv[1]);
    else
        report(9, "Byte-identical output across thread counts {1, 4, hardware}", false,
               "command-line binary path not supplied");
    criterion_picard_embedding();

    std::printf("%d/10 criteria passed\n", 10 - g_failures);
    return g_failures == 0 ? 0 : 1;
}
