#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fbsde/fbsde.hpp"

namespace fbsde {

struct DiagnosticsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One verification check. Statistical checks pass iff |statistic| <= z * se
// (one-sided ones drop the absolute value); deterministic checks pass iff
// |statistic| <= tolerance. Pass/fail is recomputable from the fields alone.
struct CheckResult {
    std::string name;
    std::string kind;  // "statistical" | "deterministic" | "report"
    double statistic = 0.0;
    double se = 0.0;
    double z = 3.0;
    double tolerance = 0.0;
    bool passed = true;
    std::string context;
};

struct DiagnosticsReport {
    std::vector<CheckResult> checks;
    std::uint64_t seed = 0;
    std::string solver_name;

    bool overall_pass() const;
};

// Inverse standard normal CDF (Acklam's rational approximation plus one
// Halley refinement step), |error| < 1e-13.
double normal_quantile(double p);

// Widened multiplier so that a family of `count` tests keeps the family-wise
// error of a single two-sided z-test (Bonferroni).
double bonferroni_z(double z, int count);

// The paper's candidate martingale for a solution: U'(X+Y) on the real line,
// U'(X) e^Y on the half line.
StatePaths martingale_process(const FbsdeSolution& solution, const ProblemSpec& spec);

// Terminal test E[M_N - M_0] = 0 plus increment orthogonality
// E[psi(M_k)(M_{k+1}-M_k)] = 0 for standardized monomials psi at ~N/8
// evenly thinned nodes, Bonferroni-adjusted.
std::vector<CheckResult> martingale_test(const StatePaths& process, const PathBundle& bundle,
                                         const RegressionBasis& basis, double z = 3.0,
                                         const std::string& label = "martingale");

// One-sided version: conditional increments with nonnegative weights must
// not be significantly positive.
std::vector<CheckResult> supermartingale_test(const StatePaths& process, const PathBundle& bundle,
                                              const RegressionBasis& basis, double z = 3.0,
                                              const std::string& label = "supermartingale");

// Deterministic bounded perturbation h(t) of the strategy, d1 components.
using PerturbationFn = std::function<Vec(double)>;

// Constants +-1 and a sign switch at T/2 per component, plus two seeded
// random piecewise-constant perturbations.
std::vector<PerturbationFn> default_perturbations(int d1, double horizon,
                                                  std::uint64_t seed = 7);

// First-order optimality E[U'(X_N + H) sum_k h(t_k).(dW^H_k + theta^H dt)] = 0
// for each perturbation; real-line (amount convention) solutions only.
std::vector<CheckResult> first_order_condition_test(const FbsdeSolution& solution,
                                                    const ProblemSpec& spec,
                                                    std::vector<PerturbationFn> perturbations = {},
                                                    double z = 3.0);

// Node-by-node comparison of pi_star against the closed forms theta/alpha
// (exponential, amount), theta/(1-gamma) (power, proportion), theta (log,
// proportion). Requires H = 0.
std::vector<CheckResult> merton_benchmark(const ProblemSpec& spec, const FbsdeSolution& solution,
                                          double rel_tol = 0.05);

// Adjoint-system equivalence for d = 1, H = 0, half-line solutions:
// p~ = exp(Y) hits 1 at the terminal node, satisfies the discrete adjoint
// equation up to an O(sqrt(dt)) residual, and the Hamiltonian maximizer
// reproduces pi_star X.
std::vector<CheckResult> cole_hopf_check(const FbsdeSolution& solution, const ProblemSpec& spec,
                                         double z = 3.0);

// Dual-side consistency for half-line solutions: Y* = U'(X)e^Y / D_0 starts
// at 1, E[X_N Y*_N] = x0, the log-density increments match the stochastic
// exponential representation, and E[sum |Z^O|^2 dt] is reported.
std::vector<CheckResult> dual_consistency_check(const FbsdeSolution& solution,
                                                const ProblemSpec& spec, double z = 3.0);

// Monte Carlo estimate of E[U(X_N^pi + H)] under the domain's wealth
// convention. Errors out if more than 0.1% of paths leave the domain.
std::pair<double, double> utility_estimate(const ProblemSpec& spec,
                                           const std::vector<StatePaths>& pi,
                                           const PathBundle& bundle);

struct ConvergenceRow {
    int n_steps = 0;
    int n_paths = 0;
    double y0 = 0.0;
    double error = 0.0;
};

struct ConvergenceTable {
    std::vector<ConvergenceRow> rows;
    double fitted_order = 0.0;
    std::optional<double> target;  // analytic Y_0 when available
};

// Runs the dispatched solver over a ladder of (N, M) pairs; the error column
// is against the analytic target when given, else against the finest level.
ConvergenceTable convergence_study(const ProblemSpec& spec, const NumericsConfig& base,
                                   const std::vector<std::pair<int, int>>& ladder,
                                   std::optional<double> y0_target = std::nullopt);

// All checks applicable to the given solution, in a fixed order.
DiagnosticsReport run_verification(const ProblemSpec& spec, const FbsdeSolution& solution);

}  // namespace fbsde
