#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fbsde/diagnostics.hpp"
#include "fbsde/fbsde.hpp"
#include "fbsde/io.hpp"
#include "fbsde/parallel.hpp"

using nlohmann::json;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    fbsde::ProblemSpec spec;
    fbsde::NumericsConfig numerics;
    std::string out_dir = "out";
    int max_csv_paths = 100;
    bool power_family = false;
    json echo;
};

const json& need(const json& j, const char* key, const char* where) {
    auto it = j.find(key);
    if (it == j.end())
        throw ConfigError(std::string("config: missing field '") + key + "' in " + where);
    return *it;
}

fbsde::MarketModel parse_market(const json& j) {
    const int d1 = need(j, "d1", "market").get<int>();
    const int d2 = need(j, "d2", "market").get<int>();
    const double horizon = need(j, "horizon", "market").get<double>();
    const json& th = need(j, "theta", "market");
    const std::string type = need(th, "type", "market.theta").get<std::string>();
    fbsde::MarketModel::ThetaFn fn;
    if (type == "constant") {
        fn = fbsde::constant_theta(need(th, "value", "market.theta").get<fbsde::Vec>());
    } else if (type == "piecewise_linear") {
        std::vector<std::pair<double, fbsde::Vec>> bp;
        for (const auto& b : need(th, "breakpoints", "market.theta"))
            bp.emplace_back(need(b, "t", "breakpoint").get<double>(),
                            need(b, "value", "breakpoint").get<fbsde::Vec>());
        fn = fbsde::piecewise_linear_theta(std::move(bp));
    } else {
        throw ConfigError("config: unknown theta type '" + type + "'");
    }
    return fbsde::MarketModel::build(d1, d2, std::move(fn), horizon);
}

fbsde::UtilityModel parse_utility(const json& j) {
    const std::string family = need(j, "family", "utility").get<std::string>();
    if (family == "exponential")
        return fbsde::UtilityModel::exponential(need(j, "alpha", "utility").get<double>());
    if (family == "power")
        return fbsde::UtilityModel::power(need(j, "gamma", "utility").get<double>());
    if (family == "log") return fbsde::UtilityModel::log_utility();
    if (family == "quadratic")
        return fbsde::UtilityModel::quadratic(need(j, "bliss", "utility").get<double>());
    if (family == "mixture_exp")
        return fbsde::UtilityModel::mixture_exp(need(j, "a1", "utility").get<double>(),
                                                need(j, "a2", "utility").get<double>());
    if (family == "mixture_power")
        return fbsde::UtilityModel::mixture_power(need(j, "g1", "utility").get<double>(),
                                                  need(j, "g2", "utility").get<double>());
    throw ConfigError("config: unknown utility family '" + family + "'");
}

fbsde::EndowmentFn parse_endowment(const json& j) {
    const std::string type = need(j, "type", "endowment").get<std::string>();
    if (type == "none") return fbsde::endowment_none();
    if (type == "affine_tanh")
        return fbsde::endowment_affine_tanh(need(j, "a", "endowment").get<double>(),
                                            need(j, "b", "endowment").get<double>(),
                                            need(j, "component", "endowment").get<int>());
    if (type == "call")
        return fbsde::endowment_call(need(j, "strike", "endowment").get<double>(),
                                     need(j, "cap", "endowment").get<double>(),
                                     need(j, "component", "endowment").get<int>());
    throw ConfigError("config: unknown endowment type '" + type + "'");
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: parse error: ") + e.what());
    }
    RunConfig cfg{.spec = {parse_market(need(j, "market", "root")),
                           parse_utility(need(j, "utility", "root")), 1.0,
                           fbsde::endowment_none()}};
    const json& prob = need(j, "problem", "root");
    cfg.spec.x0 = need(prob, "x0", "problem").get<double>();
    if (prob.contains("endowment")) cfg.spec.endowment = parse_endowment(prob["endowment"]);
    cfg.power_family = cfg.spec.utility.family() == fbsde::Family::Power;
    if (j.contains("numerics")) {
        const json& n = j["numerics"];
        auto get = [&](const char* k, auto dflt) {
            return n.contains(k) ? n[k].get<decltype(dflt)>() : dflt;
        };
        cfg.numerics.n_steps = get("n_steps", cfg.numerics.n_steps);
        cfg.numerics.n_paths = get("n_paths", cfg.numerics.n_paths);
        cfg.numerics.seed = get("seed", cfg.numerics.seed);
        cfg.numerics.basis.degree = get("basis_degree", cfg.numerics.basis.degree);
        cfg.numerics.fp_tol = get("fp_tol", cfg.numerics.fp_tol);
        cfg.numerics.fp_max_iter = get("fp_max_iter", cfg.numerics.fp_max_iter);
        cfg.numerics.damping = get("damping", cfg.numerics.damping);
        cfg.numerics.picard_tol = get("picard_tol", cfg.numerics.picard_tol);
        cfg.numerics.picard_max_iter = get("picard_max_iter", cfg.numerics.picard_max_iter);
        cfg.numerics.domain_clip = get("domain_clip", cfg.numerics.domain_clip);
        if (cfg.numerics.n_paths < 2 || cfg.numerics.n_steps < 1)
            throw ConfigError("config: numerics.n_paths/n_steps out of range");
    }
    if (j.contains("output")) {
        const json& o = j["output"];
        if (o.contains("directory")) cfg.out_dir = o["directory"].get<std::string>();
        if (o.contains("max_csv_paths")) cfg.max_csv_paths = o["max_csv_paths"].get<int>();
    }
    cfg.echo = j;
    return cfg;
}

struct Overrides {
    std::uint64_t seed = 0;
    int paths = 0, steps = 0, threads = 0;
    std::string out;
    double tolerance = 0.05;
    bool json_out = false;

    void apply(RunConfig& cfg) const {
        if (seed) cfg.numerics.seed = seed;
        if (paths) cfg.numerics.n_paths = paths;
        if (steps) cfg.numerics.n_steps = steps;
        if (!out.empty()) cfg.out_dir = out;
        fbsde::set_thread_count(threads > 0 ? threads : fbsde::hardware_thread_count());
    }
};

void add_common(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("--seed", ov.seed, "random seed override")->envname("FBSDE_SEED");
    cmd->add_option("--paths", ov.paths, "path count override")->envname("FBSDE_PATHS");
    cmd->add_option("--steps", ov.steps, "time-step count override")->envname("FBSDE_STEPS");
    cmd->add_option("--out", ov.out, "output directory")->envname("FBSDE_OUT");
    cmd->add_option("--threads", ov.threads, "worker threads (default: hardware)")
        ->envname("FBSDE_THREADS");
    cmd->add_flag("--json", ov.json_out, "machine-readable output");
    cmd->add_option("--tolerance", ov.tolerance, "relative tolerance for benchmark checks")
        ->envname("FBSDE_TOLERANCE");
}

std::string timestamp_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

fbsde::FbsdeSolution dispatch(const RunConfig& cfg) {
    if (cfg.power_family && cfg.spec.endowment)
        return fbsde::solve_power_endowment(cfg.spec, cfg.numerics);
    return fbsde::solve(cfg.spec, cfg.numerics);
}

int status_exit(fbsde::SolveStatus s) {
    switch (s) {
        case fbsde::SolveStatus::Converged: return 0;
        case fbsde::SolveStatus::MaxIterations: return 2;
        case fbsde::SolveStatus::Infeasible: return 3;
    }
    return 1;
}

int cmd_solve(const std::string& config_path, const Overrides& ov) {
    RunConfig cfg = load_config(config_path);
    ov.apply(cfg);
    fbsde::FbsdeSolution sol = dispatch(cfg);

    std::filesystem::create_directories(cfg.out_dir);
    const auto dir = std::filesystem::path(cfg.out_dir);
    fbsde::write_process_csv((dir / "solution_X.csv").string(), sol.x, cfg.max_csv_paths);
    fbsde::write_process_csv((dir / "solution_Y.csv").string(), sol.y, cfg.max_csv_paths);
    for (std::size_t i = 0; i < sol.z.size(); ++i) {
        const std::string name = i == 0 ? "solution_Z.csv" : "solution_Z" + std::to_string(i) + ".csv";
        fbsde::write_process_csv((dir / name).string(), sol.z[i], cfg.max_csv_paths);
    }
    for (std::size_t i = 0; i < sol.pi_star.size(); ++i) {
        const std::string name =
            i == 0 ? "solution_pi.csv" : "solution_pi" + std::to_string(i) + ".csv";
        fbsde::write_process_csv((dir / name).string(), sol.pi_star[i], cfg.max_csv_paths);
    }
    json meta = fbsde::solution_meta(sol, cfg.numerics);
    meta["config"] = cfg.echo;
    meta["generated_at"] = timestamp_now();
    fbsde::write_json((dir / "meta.json").string(), meta);
    std::printf("status=%s solver=%s", fbsde::to_string(sol.status).c_str(),
                sol.solver_name.c_str());
    if (sol.m_star) std::printf(" m_star=%.6g", *sol.m_star);
    std::printf(" artifacts=%s\n", cfg.out_dir.c_str());
    return status_exit(sol.status);
}

int cmd_verify(const std::string& config_path, const Overrides& ov) {
    RunConfig cfg = load_config(config_path);
    ov.apply(cfg);
    fbsde::FbsdeSolution sol = dispatch(cfg);
    if (sol.status != fbsde::SolveStatus::Converged &&
        sol.status != fbsde::SolveStatus::MaxIterations) {
        std::printf("status=%s: %s\n", fbsde::to_string(sol.status).c_str(), sol.message.c_str());
        return status_exit(sol.status);
    }
    fbsde::DiagnosticsReport report = fbsde::run_verification(cfg.spec, sol);
    json rj = fbsde::report_to_json(report);
    rj["config"] = cfg.echo;
    std::filesystem::create_directories(cfg.out_dir);
    fbsde::write_json((std::filesystem::path(cfg.out_dir) / "report.json").string(), rj);
    if (ov.json_out) {
        std::cout << rj.dump(2) << "\n";
    } else {
        for (const auto& c : report.checks)
            std::printf("%-40s %-14s stat=% .6e se=%.6e %s\n", c.name.c_str(), c.kind.c_str(),
                        c.statistic, c.se, c.passed ? "pass" : "FAIL");
        std::printf("overall: %s (%zu checks)\n", report.overall_pass() ? "pass" : "FAIL",
                    report.checks.size());
    }
    if (!report.overall_pass()) return 4;
    return status_exit(sol.status);
}

struct BenchRow {
    std::string name;
    double target = 0.0;
    double computed = 0.0;
    double rel_err = 0.0;
    bool passed = false;
};

double mean_pi(const fbsde::FbsdeSolution& sol) {
    double s = 0.0;
    std::size_t n = 0;
    for (int p = 0; p < sol.y.n_paths(); ++p)
        for (int k = 0; k < sol.y.grid().n_nodes(); ++k, ++n) s += sol.pi_star[0].at(p, k);
    return s / static_cast<double>(n);
}

int cmd_benchmark(const Overrides& ov) {
    using namespace fbsde;
    NumericsConfig nc;
    nc.n_steps = ov.steps > 0 ? ov.steps : 64;
    nc.n_paths = ov.paths > 0 ? ov.paths : 20000;
    nc.seed = ov.seed ? ov.seed : 2024;
    set_thread_count(ov.threads > 0 ? ov.threads : hardware_thread_count());
    const double theta = 0.2, horizon = 1.0;
    auto mkt = MarketModel::build(1, 0, constant_theta({theta}), horizon);

    std::vector<BenchRow> rows;
    {
        ProblemSpec spec{mkt, UtilityModel::exponential(1.0), 0.0, endowment_none()};
        rows.push_back({"merton_exponential_pi", theta / 1.0,
                        mean_pi(solve_complete_realline(spec, nc))});
    }
    {
        ProblemSpec spec{mkt, UtilityModel::power(0.5), 1.0, endowment_none()};
        rows.push_back(
            {"merton_power_pi", theta / 0.5, mean_pi(solve_complete_halfline(spec, nc))});
    }
    {
        ProblemSpec spec{mkt, UtilityModel::log_utility(), 1.0, endowment_none()};
        rows.push_back({"merton_log_pi", theta, mean_pi(solve_complete_halfline(spec, nc))});
    }
    {
        // The power family is HARA: the state-free kappa driver must reproduce
        // the fixed-point solver's Y_0.
        ProblemSpec spec{mkt, UtilityModel::power(0.5), 1.0, endowment_none()};
        FbsdeSolution sol = solve_complete_halfline(spec, nc);
        const double kappa = *hara_kappa(spec.utility);
        Driver drv = driver_hara(kappa, mkt);
        BsdePaths hara = solve_bsde(sol.bundle, {}, std::vector<double>(nc.n_paths, 0.0), drv,
                                    nc.basis, StepMode::ImplicitNewton);
        double y0 = 0.0, h0 = 0.0;
        for (int p = 0; p < nc.n_paths; ++p) {
            y0 += sol.y.at(p, 0);
            h0 += hara.y.at(p, 0);
        }
        rows.push_back({"hara_power_y0", y0 / nc.n_paths, h0 / nc.n_paths});
    }
    bool all = true;
    for (auto& r : rows) {
        r.rel_err = std::abs(r.computed - r.target) / std::max(std::abs(r.target), 1e-12);
        r.passed = r.rel_err <= ov.tolerance;
        all = all && r.passed;
    }
    if (ov.json_out) {
        json out = json::array();
        for (const auto& r : rows)
            out.push_back({{"name", r.name},
                           {"kind", "deterministic"},
                           {"statistic", r.rel_err},
                           {"se", 0.0},
                           {"z", 0.0},
                           {"tolerance", ov.tolerance},
                           {"passed", r.passed},
                           {"context", json({{"target", r.target}, {"computed", r.computed}}).dump()}});
        std::cout << out.dump(2) << "\n";
    } else {
        std::printf("%-24s %12s %12s %10s  %s\n", "case", "target", "computed", "rel_err", "");
        for (const auto& r : rows)
            std::printf("%-24s %12.6g %12.6g %10.3e  %s\n", r.name.c_str(), r.target, r.computed,
                        r.rel_err, r.passed ? "pass" : "FAIL");
    }
    return all ? 0 : 4;
}

int cmd_convergence(const std::string& config_path, const Overrides& ov,
                    const std::vector<int>& ladder_steps, double target, bool has_target) {
    RunConfig cfg = load_config(config_path);
    ov.apply(cfg);
    std::vector<std::pair<int, int>> ladder;
    for (int n : ladder_steps) ladder.emplace_back(n, cfg.numerics.n_paths);
    std::optional<double> tgt;
    if (has_target) tgt = target;
    fbsde::ConvergenceTable table =
        fbsde::convergence_study(cfg.spec, cfg.numerics, ladder, tgt);
    if (ov.json_out) {
        std::cout << fbsde::table_to_json(table).dump(2) << "\n";
    } else {
        std::printf("%8s %10s %14s %14s\n", "n_steps", "n_paths", "y0", "error");
        for (const auto& r : table.rows)
            std::printf("%8d %10d %14.8g %14.6e\n", r.n_steps, r.n_paths, r.y0, r.error);
        std::printf("fitted order: %.3f\n", table.fitted_order);
    }
    return table.fitted_order >= 0.4 ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Coupled forward-backward SDE solvers for utility maximization"};
    app.require_subcommand(1);

    std::string cfg_solve, cfg_verify, cfg_conv;
    Overrides ov_solve, ov_verify, ov_bench, ov_conv;
    std::vector<int> ladder{16, 32, 64};
    double target = 0.0;

    CLI::App* solve = app.add_subcommand("solve", "solve a configured problem");
    solve->add_option("--config", cfg_solve, "problem configuration (JSON)")
        ->required()
        ->envname("FBSDE_CONFIG");
    add_common(solve, ov_solve);

    CLI::App* verify = app.add_subcommand("verify", "solve, then run the verification suite");
    verify->add_option("--config", cfg_verify, "problem configuration (JSON)")
        ->required()
        ->envname("FBSDE_CONFIG");
    add_common(verify, ov_verify);

    CLI::App* bench = app.add_subcommand("benchmark", "built-in closed-form benchmarks");
    add_common(bench, ov_bench);

    CLI::App* conv = app.add_subcommand("convergence", "grid-refinement study");
    conv->add_option("--config", cfg_conv, "problem configuration (JSON)")
        ->required()
        ->envname("FBSDE_CONFIG");
    CLI::Option* topt = conv->add_option("--target", target, "analytic Y_0 reference");
    conv->add_option("--ladder", ladder, "time-step ladder");
    add_common(conv, ov_conv);

    CLI11_PARSE(app, argc, argv);
    try {
        if (solve->parsed()) return cmd_solve(cfg_solve, ov_solve);
        if (verify->parsed()) return cmd_verify(cfg_verify, ov_verify);
        if (bench->parsed()) return cmd_benchmark(ov_bench);
        if (conv->parsed())
            return cmd_convergence(cfg_conv, ov_conv, ladder, target, topt->count() > 0);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
