#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fbsde/bsde.hpp"
#include "fbsde/market.hpp"
#include "fbsde/paths.hpp"
#include "fbsde/utility.hpp"

namespace fbsde {

struct FbsdeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Terminal endowment H as a functional of the Brownian path.
using EndowmentFn = std::function<double(const PathBundle&, int path)>;

EndowmentFn endowment_none();
// H = a + b tanh(W^comp_T)
EndowmentFn endowment_affine_tanh(double a, double b, int comp);
// H = min((W^comp_T - strike)^+, cap)
EndowmentFn endowment_call(double strike, double cap, int comp);

struct ProblemSpec {
    MarketModel market;
    UtilityModel utility;
    double x0 = 1.0;
    EndowmentFn endowment;  // null means H = 0
};

struct NumericsConfig {
    int n_steps = 64;
    int n_paths = 20000;
    RegressionBasis basis;
    double fp_tol = 1e-3;
    int fp_max_iter = 50;
    double damping = 0.5;
    int picard_max_iter = 60;
    double picard_tol = 1e-3;
    double domain_clip = 1e-8;
    std::uint64_t seed = 12345;
};

enum class SolveStatus { Converged, MaxIterations, Infeasible };

std::string to_string(SolveStatus s);

struct FbsdeSolution {
    PathBundle bundle;
    StatePaths x;
    StatePaths y;
    std::vector<StatePaths> z;        // d components
    std::vector<StatePaths> pi_star;  // d1 components
    std::vector<double> terminal;     // H per path
    std::optional<double> m_star;
    SolveStatus status = SolveStatus::Converged;
    std::vector<double> iteration_log;  // m sequence or Picard residuals
    RegressionDiagnostics diag;
    std::string solver_name;
    std::string message;
    // Max pathwise gap between the generic half-line terminal and the
    // power closed form; set by solve_power_endowment.
    std::optional<double> terminal_identity_gap;
    bool experimental = false;  // Picard outputs carry no convergence guarantee
};

// Complete-market real-line construction: P^m forward SDE + Lipschitz BSDE,
// damped fixed point over m with common random numbers, X = P - Y.
FbsdeSolution solve_complete_realline(const ProblemSpec& spec, const NumericsConfig& numerics);

// Complete-market half-line construction: G^m = U'(x0) e^m E(-theta.W),
// terminal inversion X_N = I(G_N) - H, implicit backward solve with the
// state reconstructed as X = I(G e^{-Y}), fixed point over m.
FbsdeSolution solve_complete_halfline(const ProblemSpec& spec, const NumericsConfig& numerics);

// Incomplete markets (d2 >= 1): alternating forward/backward Picard passes.
// Experimental; MaxIterations is reported, never hidden.
FbsdeSolution solve_incomplete_picard(const ProblemSpec& spec, const NumericsConfig& numerics);

// Power-utility specialization with endowment; verifies the power terminal
// identity pathwise and delegates by market completeness.
FbsdeSolution solve_power_endowment(const ProblemSpec& spec, const NumericsConfig& numerics);

// Dispatch by utility domain and market completeness.
FbsdeSolution solve(const ProblemSpec& spec, const NumericsConfig& numerics);

// Node-by-node optimal strategy from the domain-appropriate formula;
// also invoked by every solver before returning.
std::vector<StatePaths> extract_strategy(const FbsdeSolution& solution, const ProblemSpec& spec);

}  // namespace fbsde
