#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "fbsde/market.hpp"
#include "fbsde/paths.hpp"
#include "fbsde/utility.hpp"

namespace fbsde {

struct BsdeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Driver f(t, state, y, z) of a backward equation. prepare(t), when set, is
// invoked once per time step before the per-path evaluations (shared caches
// such as theta(t); evaluation itself must stay reentrant).
struct Driver {
    enum class ZDep { Linear, Quadratic };

    std::function<double(double t, const double* state, double y, const double* z)> f;
    ZDep zdep = ZDep::Linear;
    int n_state = 0;  // number of state coordinates the driver reads
    std::function<void(double)> prepare;
};

// Conditional-expectation estimator: global least-squares per step on
// monomials (total degree <= 5) of the standardized state coordinates, or
// hinge functions for one-dimensional states.
struct RegressionBasis {
    enum class Kind { Polynomial, PiecewiseLinear };
    Kind kind = Kind::Polynomial;
    int degree = 3;
    int bins = 8;
    // Leading state coordinates excluded from the basis but still passed to
    // the driver (e.g. a path-dependent wealth that is not a Markov state).
    int skip = 0;
};

enum class StepMode { Explicit, ImplicitNewton };

struct RegressionDiagnostics {
    std::vector<double> residual_rms;  // per step, continuation regression
    std::vector<double> condition;     // per step, retained-spectrum estimate
};

struct BsdePaths {
    StatePaths y;
    std::vector<StatePaths> z;  // one per Brownian component
    RegressionDiagnostics diag;
};

// Backward induction with least-squares conditional expectations.
// Z_k regresses Y_{k+1} dW_k / dt on the basis; Y_k is either the regressed
// continuation minus f dt (Explicit) or the scalar Newton solution of
// y = cont - f(t, state, y, Z_k) dt (ImplicitNewton, tol 1e-12, <= 20 iters).
// Regressed Y is clamped to +-y_clamp. Y at node N equals `terminal` exactly;
// Z at node N copies node N-1.
BsdePaths solve_bsde(const PathBundle& bundle, const std::vector<const StatePaths*>& state,
                     const std::vector<double>& terminal, const Driver& driver,
                     const RegressionBasis& basis, StepMode mode,
                     double y_clamp = 1e300);

// Driver of the complete-market real-line construction, reading the P
// process: f(t,p,z) = -1/2 |theta|^2 phi2(p) + |theta|^2 phi1(p) + z.theta.
Driver driver_lipschitz_realline(const UtilityModel& u, const MarketModel& market);

// Half-line driver reading the wealth state X:
// |z^H + theta^H|^2 phi2_halfline(x) - 1/2 |z|^2.
Driver driver_halfline(const UtilityModel& u, const MarketModel& market);

// HARA driver: -1/2 |z|^2 + kappa |z^H + theta^H|^2, state-free.
Driver driver_hara(double kappa, const MarketModel& market);

// Incomplete real-line driver, evaluated at p = x + y:
// -1/2 |theta^H|^2 phi2(p) + |theta^H|^2 phi1(p) + z^H.theta^H
// - 1/2 |z^O|^2 phi3(p).
Driver driver_incomplete_realline(const UtilityModel& u, const MarketModel& market);

}  // namespace fbsde
