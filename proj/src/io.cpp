#include "fbsde/io.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace fbsde {

void write_process_csv(const std::string& file, const StatePaths& process, int max_paths) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot open " + file + " for writing");
    out << "path,node,time,value\n";
    const int np = std::min(max_paths, process.n_paths());
    char buf[64];
    for (int p = 0; p < np; ++p)
        for (int k = 0; k < process.grid().n_nodes(); ++k) {
            std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g\n", p, k,
                          process.grid().node(k), process.at(p, k));
            out << buf;
        }
}

nlohmann::json check_to_json(const CheckResult& c) {
    return {{"name", c.name},          {"kind", c.kind},   {"statistic", c.statistic},
            {"se", c.se},              {"z", c.z},         {"tolerance", c.tolerance},
            {"passed", c.passed},      {"context", c.context}};
}

nlohmann::json report_to_json(const DiagnosticsReport& report) {
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& c : report.checks) checks.push_back(check_to_json(c));
    return {{"solver", report.solver_name},
            {"seed", report.seed},
            {"overall_pass", report.overall_pass()},
            {"checks", checks}};
}

nlohmann::json table_to_json(const ConvergenceTable& table) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : table.rows)
        rows.push_back({{"n_steps", r.n_steps},
                        {"n_paths", r.n_paths},
                        {"y0", r.y0},
                        {"error", r.error}});
    nlohmann::json out = {{"rows", rows}, {"fitted_order", table.fitted_order}};
    if (table.target) out["target"] = *table.target;
    return out;
}

nlohmann::json solution_meta(const FbsdeSolution& solution, const NumericsConfig& nc) {
    nlohmann::json meta = {
        {"version", kVersion},
        {"solver", solution.solver_name},
        {"status", to_string(solution.status)},
        {"message", solution.message},
        {"iteration_log", solution.iteration_log},
        {"experimental", solution.experimental},
        {"numerics",
         {{"n_steps", nc.n_steps},
          {"n_paths", nc.n_paths},
          {"seed", nc.seed},
          {"basis_degree", nc.basis.degree},
          {"fp_tol", nc.fp_tol},
          {"fp_max_iter", nc.fp_max_iter},
          {"damping", nc.damping},
          {"picard_tol", nc.picard_tol},
          {"picard_max_iter", nc.picard_max_iter},
          {"domain_clip", nc.domain_clip}}}};
    if (solution.m_star) meta["m_star"] = *solution.m_star;
    if (solution.terminal_identity_gap)
        meta["terminal_identity_gap"] = *solution.terminal_identity_gap;
    return meta;
}

void write_json(const std::string& file, const nlohmann::json& value) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot open " + file + " for writing");
    out << value.dump(2) << "\n";
}

}  // namespace fbsde
