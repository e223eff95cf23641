#pragma once

#include <string>

#include <json.hpp>

#include "fbsde/diagnostics.hpp"
#include "fbsde/fbsde.hpp"

namespace fbsde {

inline constexpr const char* kVersion = "0.1.0";

// Long-format CSV: path,node,time,value. Writes at most max_paths paths so
// artifacts stay bounded; the cap is echoed in the metadata.
void write_process_csv(const std::string& file, const StatePaths& process, int max_paths);

nlohmann::json check_to_json(const CheckResult& check);
nlohmann::json report_to_json(const DiagnosticsReport& report);
nlohmann::json table_to_json(const ConvergenceTable& table);

// Run metadata: solver outcome, iteration log, numerics echo, version. The
// caller adds the verbatim config echo; the timestamp lives in its own field
// so everything else is byte-stable across reruns.
nlohmann::json solution_meta(const FbsdeSolution& solution, const NumericsConfig& numerics);

void write_json(const std::string& file, const nlohmann::json& value);

}  // namespace fbsde
