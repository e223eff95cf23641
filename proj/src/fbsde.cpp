#include "fbsde/fbsde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <utility>

#include "fbsde/parallel.hpp"

namespace fbsde {

namespace {

std::vector<double> eval_endowment(const EndowmentFn& h, const PathBundle& bundle) {
    std::vector<double> out(bundle.n_paths(), 0.0);
    if (!h) return out;
    for (int p = 0; p < bundle.n_paths(); ++p) {
        out[p] = h(bundle, p);
        if (!std::isfinite(out[p]))
            throw FbsdeError("endowment evaluated to a non-finite value on path " +
                             std::to_string(p));
    }
    return out;
}

double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

double mean_node0(const StatePaths& y) {
    // Node 0 carries the regression constant; averaging also smooths clamping.
    double s = 0.0;
    for (int p = 0; p < y.n_paths(); ++p) s += y.at(p, 0);
    return s / y.n_paths();
}

struct FixedPointResult {
    double m = 0.0;
    SolveStatus status = SolveStatus::Converged;
    std::vector<double> log;  // g(m) per evaluation
    std::string message;
};

// Damped iteration m <- m + damping (g(m) - m); two successive sign flips of
// the update hand over to bisection of g(m) - m on an expanding bracket.
// On success the last evaluation of g happened exactly at the returned m, so
// callers may reuse their cached solve.
FixedPointResult fixed_point(const std::function<double(double)>& g, double tol, int max_iter,
                             double damping, double kbound) {
    FixedPointResult r;
    int evals = 0;
    double m = 0.0;
    double prev_resid = 0.0;
    int flips = 0;
    bool oscillating = false;
    while (evals < max_iter) {
        double gm = g(m);
        ++evals;
        r.log.push_back(gm);
        double resid = gm - m;
        if (std::abs(resid) <= tol) {
            r.m = m;
            return r;
        }
        if (evals > 1) {
            if (resid * prev_resid < 0.0) {
                if (++flips >= 2) {
                    oscillating = true;
                    break;
                }
            } else {
                flips = 0;
            }
        }
        prev_resid = resid;
        m += damping * resid;
    }
    if (!oscillating) {
        r.m = m - damping * prev_resid;  // the point of the last evaluation
        r.status = SolveStatus::MaxIterations;
        r.message = "fixed point did not reach tolerance in " + std::to_string(max_iter) +
                    " evaluations";
        return r;
    }

    // Bisection fallback.  phi(m) = g(m) - m changes sign at the target.
    double bmax = 10.0 * std::max(kbound, tol);
    double b = std::max(kbound, 10.0 * tol);
    double lo = 0.0, hi = 0.0, phi_lo = 0.0, phi_hi = 0.0;
    bool bracketed = false;
    while (b <= bmax * (1.0 + 1e-12)) {
        lo = -b;
        hi = b;
        phi_lo = g(lo) - lo;
        ++evals;
        r.log.push_back(phi_lo + lo);
        if (std::abs(phi_lo) <= tol) {
            r.m = lo;
            return r;
        }
        phi_hi = g(hi) - hi;
        ++evals;
        r.log.push_back(phi_hi + hi);
        if (std::abs(phi_hi) <= tol) {
            r.m = hi;
            return r;
        }
        if (phi_lo * phi_hi < 0.0) {
            bracketed = true;
            break;
        }
        b *= 2.0;
    }
    if (!bracketed) {
        r.m = hi;
        r.status = SolveStatus::Infeasible;
        r.message = "no sign change of g(m) - m in [-" + std::to_string(bmax) + ", " +
                    std::to_string(bmax) + "]";
        return r;
    }
    double mid = 0.5 * (lo + hi);
    while (evals < max_iter + 100) {
        mid = 0.5 * (lo + hi);
        double phi_mid = g(mid) - mid;
        ++evals;
        r.log.push_back(phi_mid + mid);
        if (std::abs(phi_mid) <= tol) {
            r.m = mid;
            return r;
        }
        if (phi_mid * phi_lo < 0.0) {
            hi = mid;
        } else {
            lo = mid;
            phi_lo = phi_mid;
        }
    }
    r.m = mid;
    r.status = SolveStatus::MaxIterations;
    r.message = "bisection did not reach tolerance";
    return r;
}

void validate_numerics(const NumericsConfig& nc) {
    if (nc.n_steps < 1 || nc.n_paths < 2)
        throw FbsdeError("numerics require n_steps >= 1 and n_paths >= 2");
    if (nc.fp_tol <= 0.0 || nc.picard_tol <= 0.0 || nc.domain_clip <= 0.0)
        throw FbsdeError("numerics tolerances must be positive");
    if (nc.damping <= 0.0 || nc.damping > 1.0)
        throw FbsdeError("damping must lie in (0, 1]");
    if (nc.fp_max_iter < 1 || nc.picard_max_iter < 1)
        throw FbsdeError("iteration limits must be positive");
}

}  // namespace

std::string to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Converged: return "converged";
        case SolveStatus::MaxIterations: return "max_iterations";
        case SolveStatus::Infeasible: return "infeasible";
    }
    return "unknown";
}

EndowmentFn endowment_none() { return EndowmentFn{}; }

EndowmentFn endowment_affine_tanh(double a, double b, int comp) {
    return [a, b, comp](const PathBundle& bundle, int path) {
        return a + b * std::tanh(bundle.w(path, bundle.grid().n_steps, comp));
    };
}

EndowmentFn endowment_call(double strike, double cap, int comp) {
    return [strike, cap, comp](const PathBundle& bundle, int path) {
        double v = bundle.w(path, bundle.grid().n_steps, comp) - strike;
        return std::min(std::max(v, 0.0), cap);
    };
}

std::vector<StatePaths> extract_strategy(const FbsdeSolution& solution, const ProblemSpec& spec) {
    const MarketModel& mkt = spec.market;
    const UtilityModel& u = spec.utility;
    const TimeGrid& grid = solution.y.grid();
    const int n_paths = solution.y.n_paths();
    const int d1 = mkt.d1();

    std::vector<Vec> th(grid.n_nodes());
    for (int k = 0; k < grid.n_nodes(); ++k) th[k] = mkt.theta_split(grid.node(k)).first;

    std::vector<StatePaths> pi(d1, StatePaths(grid, n_paths));
    parallel_blocks(static_cast<std::size_t>(n_paths), [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t p = b; p < e; ++p) {
            const int ip = static_cast<int>(p);
            for (int k = 0; k < grid.n_nodes(); ++k) {
                if (u.domain() == Domain::RealLine) {
                    double f1 = phi1(u, solution.x.at(ip, k) + solution.y.at(ip, k));
                    for (int i = 0; i < d1; ++i)
                        pi[i].at(ip, k) = -th[k][i] * f1 - solution.z[i].at(ip, k);
                } else {
                    double x = solution.x.at(ip, k);
                    double ratio = -u.u1(x) / (x * u.u2(x));
                    for (int i = 0; i < d1; ++i)
                        pi[i].at(ip, k) = ratio * (solution.z[i].at(ip, k) + th[k][i]);
                }
            }
        }
    });
    return pi;
}

FbsdeSolution solve_complete_realline(const ProblemSpec& spec, const NumericsConfig& nc) {
    const MarketModel& mkt = spec.market;
    const UtilityModel& u = spec.utility;
    validate_numerics(nc);
    if (mkt.d2() != 0)
        throw FbsdeError("complete real-line solver requires d2 == 0; use the Picard solver");
    if (u.domain() != Domain::RealLine)
        throw FbsdeError("complete real-line solver requires a real-line utility");

    TimeGrid grid{nc.n_steps, mkt.horizon()};
    PathBundle bundle = sample_brownian(grid, nc.n_paths, mkt.dim(), nc.seed);
    std::vector<double> endow = eval_endowment(spec.endowment, bundle);

    UtilityBounds ub = estimate_bounds(u);
    const double th2 = mkt.theta_bound() * mkt.theta_bound();
    const double kbound =
        max_abs(endow) + mkt.horizon() * th2 * (0.5 * ub.phi2_max + ub.phi1_max);
    const double clamp = kbound > 0.0 ? 10.0 * kbound : 1.0;

    Driver drv = driver_lipschitz_realline(u, mkt);

    struct Eval {
        double m;
        StatePaths p;
        BsdePaths bs;
    };
    std::optional<Eval> last;

    auto g = [&](double m) {
        StatePaths p = euler_sde(
            bundle,
            [&](double t, double x) { return -0.5 * mkt.theta_h_norm2(t) * phi2_realline(u, x); },
            [&](double t, double x) {
                Vec v = mkt.theta(t);
                const double f1 = phi1(u, x);
                for (double& c : v) c *= -f1;
                return v;
            },
            spec.x0 + m);
        BsdePaths bs = solve_bsde(bundle, {&p}, endow, drv, nc.basis, StepMode::Explicit, clamp);
        double y0 = mean_node0(bs.y);
        last = Eval{m, std::move(p), std::move(bs)};
        return y0;
    };

    FixedPointResult fp = fixed_point(g, nc.fp_tol, nc.fp_max_iter, nc.damping, kbound);
    if (!last || last->m != fp.m) g(fp.m);

    FbsdeSolution sol;
    sol.solver_name = "complete_realline";
    sol.bundle = std::move(bundle);
    sol.y = std::move(last->bs.y);
    sol.z = std::move(last->bs.z);
    sol.diag = std::move(last->bs.diag);
    sol.x = StatePaths(grid, nc.n_paths);
    for (int p = 0; p < nc.n_paths; ++p)
        for (int k = 0; k < grid.n_nodes(); ++k)
            sol.x.at(p, k) = last->p.at(p, k) - sol.y.at(p, k);
    sol.terminal = std::move(endow);
    sol.m_star = fp.m;
    sol.status = fp.status;
    sol.message = fp.message;
    sol.iteration_log = std::move(fp.log);
    sol.pi_star = extract_strategy(sol, spec);
    return sol;
}

FbsdeSolution solve_complete_halfline(const ProblemSpec& spec, const NumericsConfig& nc) {
    const MarketModel& mkt = spec.market;
    const UtilityModel& u = spec.utility;
    validate_numerics(nc);
    if (mkt.d2() != 0) return solve_incomplete_picard(spec, nc);
    if (u.domain() != Domain::HalfLine)
        throw FbsdeError("complete half-line solver requires a half-line utility");
    if (spec.x0 <= 0.0) throw FbsdeError("half-line problems require x0 > 0");

    TimeGrid grid{nc.n_steps, mkt.horizon()};
    PathBundle bundle = sample_brownian(grid, nc.n_paths, mkt.dim(), nc.seed);
    std::vector<double> endow = eval_endowment(spec.endowment, bundle);
    for (int p = 0; p < nc.n_paths; ++p)
        if (endow[p] < 0.0)
            throw FbsdeError("half-line problems require a nonnegative endowment (path " +
                             std::to_string(p) + ")");

    // The marginal-wealth martingale without the e^m factor; m only shifts
    // the log-state, which the standardized regression absorbs.
    StatePaths expo = stochastic_exponential(bundle, [&](double t) {
        Vec v = mkt.theta(t);
        for (double& c : v) c = -c;
        return v;
    });
    const double log_u1x0 = std::log(u.u1(spec.x0));
    StatePaths log_g0(grid, nc.n_paths);
    for (int p = 0; p < nc.n_paths; ++p)
        for (int k = 0; k < grid.n_nodes(); ++k)
            log_g0.at(p, k) = log_u1x0 + std::log(expo.at(p, k));

    UtilityBounds ub = estimate_bounds(u);
    const double th2 = mkt.theta_bound() * mkt.theta_bound();
    const int d1 = mkt.d1();
    const double clip = nc.domain_clip;

    struct Cache {
        Vec thh;
    };
    auto cache = std::make_shared<Cache>();

    struct Eval {
        double m;
        BsdePaths bs;
        std::vector<double> x_terminal;
        int n_clipped;
    };
    std::optional<Eval> last;

    auto g = [&](double m) {
        Driver drv;
        drv.zdep = Driver::ZDep::Quadratic;
        drv.n_state = 1;
        drv.prepare = [&, cache](double t) { cache->thh = mkt.theta_split(t).first; };
        drv.f = [&, cache, m](double, const double* s, double y, const double* z) {
            double x = u.inverse_marginal(std::exp(s[0] + m - y));
            if (x < clip) x = clip;
            double q = 0.0, zn2 = 0.0;
            for (int i = 0; i < d1; ++i) {
                const double a = z[i] + cache->thh[i];
                q += a * a;
                zn2 += z[i] * z[i];
            }
            return q * phi2_halfline(u, x) - 0.5 * zn2;
        };

        std::vector<double> x_term(nc.n_paths), y_term(nc.n_paths);
        int n_clipped = 0;
        const double scale = std::exp(m);
        for (int p = 0; p < nc.n_paths; ++p) {
            double gn = u.u1(spec.x0) * scale * expo.at(p, grid.n_steps);
            double x = u.inverse_marginal(gn) - endow[p];
            if (x < clip) {
                x = clip;
                ++n_clipped;
            }
            x_term[p] = x;
            y_term[p] = std::log(u.u1(x + endow[p])) - std::log(u.u1(x));
        }
        const double kb = max_abs(y_term) + mkt.horizon() * th2 * ub.phi2_max;
        const double clamp = 10.0 * std::max(kb, 0.1);

        BsdePaths bs = solve_bsde(bundle, {&log_g0}, y_term, drv, nc.basis,
                                  StepMode::ImplicitNewton, clamp);
        double y0 = mean_node0(bs.y);
        last = Eval{m, std::move(bs), std::move(x_term), n_clipped};
        return y0;
    };

    // A heavily clipped terminal inversion means the problem is infeasible
    // outright; the backward solve on such terminals is meaningless (and the
    // quadratic Newton step rightly refuses it), so bail out before it.
    {
        int n_bad = 0;
        for (int p = 0; p < nc.n_paths; ++p)
            if (u.inverse_marginal(u.u1(spec.x0) * expo.at(p, grid.n_steps)) - endow[p] < clip)
                ++n_bad;
        if (n_bad > nc.n_paths / 10) {
            FbsdeSolution sol;
            sol.solver_name = "complete_halfline";
            sol.status = SolveStatus::Infeasible;
            sol.message = "terminal inversion infeasible on " + std::to_string(n_bad) +
                          " of " + std::to_string(nc.n_paths) +
                          " paths: initial wealth is below the feasibility threshold for "
                          "this endowment";
            sol.y = StatePaths(grid, nc.n_paths);
            sol.z.assign(mkt.dim(), StatePaths(grid, nc.n_paths));
            sol.x = StatePaths(grid, nc.n_paths, spec.x0);
            sol.bundle = std::move(bundle);
            sol.terminal = std::move(endow);
            sol.pi_star = extract_strategy(sol, spec);
            return sol;
        }
    }

    const double kbound = 1.0 + th2 * mkt.horizon() * ub.phi2_max + max_abs(endow);
    FixedPointResult fp = fixed_point(g, nc.fp_tol, nc.fp_max_iter, nc.damping, kbound);
    if (!last || last->m != fp.m) g(fp.m);

    FbsdeSolution sol;
    sol.solver_name = "complete_halfline";
    sol.y = std::move(last->bs.y);
    sol.z = std::move(last->bs.z);
    sol.diag = std::move(last->bs.diag);
    sol.x = StatePaths(grid, nc.n_paths);
    const double scale = std::exp(fp.m);
    for (int p = 0; p < nc.n_paths; ++p) {
        for (int k = 0; k < grid.n_steps; ++k) {
            double gk = u.u1(spec.x0) * scale * expo.at(p, k);
            double x = u.inverse_marginal(gk * std::exp(-sol.y.at(p, k)));
            sol.x.at(p, k) = std::max(x, clip);
        }
        sol.x.at(p, grid.n_steps) = last->x_terminal[p];
    }
    sol.bundle = std::move(bundle);
    sol.terminal = std::move(endow);
    sol.m_star = fp.m;
    sol.status = fp.status;
    sol.message = fp.message;
    if (fp.status == SolveStatus::Converged && last->n_clipped > 0) {
        sol.status = SolveStatus::Infeasible;
        sol.message = "terminal inversion infeasible on " + std::to_string(last->n_clipped) +
                      " paths: initial wealth is below the feasibility threshold for this "
                      "endowment";
    }
    sol.iteration_log = std::move(fp.log);
    sol.pi_star = extract_strategy(sol, spec);
    return sol;
}

FbsdeSolution solve_incomplete_picard(const ProblemSpec& spec, const NumericsConfig& nc) {
    const MarketModel& mkt = spec.market;
    const UtilityModel& u = spec.utility;
    validate_numerics(nc);
    const bool halfline = u.domain() == Domain::HalfLine;
    if (halfline && spec.x0 <= 0.0) throw FbsdeError("half-line problems require x0 > 0");

    TimeGrid grid{nc.n_steps, mkt.horizon()};
    const int d = mkt.dim(), d1 = mkt.d1(), d2 = mkt.d2();
    PathBundle bundle = sample_brownian(grid, nc.n_paths, d, nc.seed);
    std::vector<double> endow = eval_endowment(spec.endowment, bundle);
    if (halfline)
        for (double h : endow)
            if (h < 0.0) throw FbsdeError("half-line problems require a nonnegative endowment");

    std::vector<Vec> th(grid.n_nodes()), thh(grid.n_nodes());
    for (int k = 0; k < grid.n_nodes(); ++k) {
        th[k] = mkt.theta(grid.node(k));
        thh[k] = mkt.theta_split(grid.node(k)).first;
    }

    // The full Brownian level vector enters the regression state alongside X:
    // with a state-dependent Z the wealth is path-dependent given W_t, so X
    // alone is not a sufficient statistic for the conditional expectations,
    // while (W^H, W^O) is (every process here is a functional of W).
    std::vector<StatePaths> wlev(d, StatePaths(grid, nc.n_paths));
    for (int j = 0; j < d; ++j)
        for (int p = 0; p < nc.n_paths; ++p)
            for (int k = 0; k < grid.n_nodes(); ++k) wlev[j].at(p, k) = bundle.w(p, k, j);

    UtilityBounds ub = estimate_bounds(u);
    const double th2 = mkt.theta_bound() * mkt.theta_bound();
    const double clamp =
        10.0 * std::max(max_abs(endow) +
                            mkt.horizon() * th2 * (0.5 * ub.phi2_max + ub.phi1_max + 1.0),
                        0.1);
    const double clip = nc.domain_clip;

    // Half-line wealth is heavy-tailed (lognormal-like), which wrecks the
    // conditioning of the monomial Gram matrix at large path counts, so the
    // regression sees log X and the driver maps the coordinate back.
    Driver drv = halfline ? driver_halfline(u, mkt) : driver_incomplete_realline(u, mkt);
    if (halfline) {
        auto inner = drv.f;
        drv.f = [inner](double t, const double* s, double y, const double* z) {
            const double x = std::exp(s[0]);
            return inner(t, &x, y, z);
        };
    }

    StatePaths ycur(grid, nc.n_paths), xcur(grid, nc.n_paths);
    std::vector<StatePaths> zcur(d, StatePaths(grid, nc.n_paths));
    const double dt = grid.dt();

    auto forward = [&](StatePaths& x) {
        parallel_blocks(static_cast<std::size_t>(nc.n_paths),
                        [&](std::size_t b, std::size_t e, std::size_t) {
            std::vector<double> pi(d1);
            for (std::size_t sp = b; sp < e; ++sp) {
                const int p = static_cast<int>(sp);
                double xv = spec.x0;
                x.at(p, 0) = xv;
                for (int k = 0; k < grid.n_steps; ++k) {
                    if (halfline) {
                        const double ratio = -u.u1(xv) / (xv * u.u2(xv));
                        double drift = 0.0, quad = 0.0, noise = 0.0;
                        for (int i = 0; i < d1; ++i) {
                            pi[i] = ratio * (zcur[i].at(p, k) + thh[k][i]);
                            noise += pi[i] * bundle.dw(p, k, i);
                            drift += pi[i] * thh[k][i];
                            quad += pi[i] * pi[i];
                        }
                        xv *= std::exp(noise + (drift - 0.5 * quad) * dt);
                        if (xv < clip) xv = clip;
                    } else {
                        const double f1 = phi1(u, xv + ycur.at(p, k));
                        double inc = 0.0;
                        for (int i = 0; i < d1; ++i) {
                            pi[i] = -th[k][i] * f1 - zcur[i].at(p, k);
                            inc += pi[i] * (bundle.dw(p, k, i) + th[k][i] * dt);
                        }
                        xv += inc;
                    }
                    if (!std::isfinite(xv))
                        throw FbsdeError("forward wealth left the finite range on path " +
                                         std::to_string(p) + " at step " + std::to_string(k));
                    x.at(p, k + 1) = xv;
                }
            }
        });
    };

    StatePaths xstate(grid, nc.n_paths);
    std::vector<const StatePaths*> state;
    state.push_back(halfline ? &xstate : &xcur);
    for (int j = 0; j < d; ++j) state.push_back(&wlev[j]);
    // Wealth is coordinate 0 for the driver only: it is path-dependent given
    // W_t (not Markov), and on early sweeps it is exactly collinear with a
    // Brownian level, which destabilizes cross-fitted evaluation.
    RegressionBasis basis = nc.basis;
    basis.skip = 1;

    FbsdeSolution sol;
    sol.solver_name = "incomplete_picard";
    sol.experimental = true;
    sol.status = SolveStatus::MaxIterations;

    std::vector<double> y_term(nc.n_paths);
    StatePaths ylast = ycur;
    std::vector<StatePaths> zlast = zcur;
    RegressionDiagnostics diag;
    double min_resid = std::numeric_limits<double>::infinity();
    int n_stalled = 0;
    for (int it = 0; it < nc.picard_max_iter; ++it) {
        forward(xcur);
        if (halfline)
            for (int p = 0; p < nc.n_paths; ++p)
                for (int k = 0; k < grid.n_nodes(); ++k)
                    xstate.at(p, k) = std::log(xcur.at(p, k));
        for (int p = 0; p < nc.n_paths; ++p) {
            const double xn = xcur.at(p, grid.n_steps);
            y_term[p] = halfline
                            ? std::log(u.u1(xn + endow[p])) - std::log(u.u1(xn))
                            : endow[p];
        }
        BsdePaths bs = solve_bsde(bundle, state, y_term, drv, basis,
                                  StepMode::ImplicitNewton, clamp);
        double ss = 0.0;
        for (int p = 0; p < nc.n_paths; ++p)
            for (int k = 0; k < grid.n_nodes(); ++k) {
                const double dd = bs.y.at(p, k) - ycur.at(p, k);
                ss += dd * dd;
            }
        const double resid =
            std::sqrt(ss / (static_cast<double>(nc.n_paths) * grid.n_nodes()));
        sol.iteration_log.push_back(resid);
        // Relax the iterate that feeds the forward coupling: full first step,
        // then the configured damping. The raw backward output is kept as the
        // reported solution so (y, z) remain the exact regression of the
        // final sweep.
        const double lam = it == 0 ? 1.0 : nc.damping;
        for (int p = 0; p < nc.n_paths; ++p)
            for (int k = 0; k < grid.n_nodes(); ++k) {
                ycur.at(p, k) += lam * (bs.y.at(p, k) - ycur.at(p, k));
                for (int c = 0; c < d; ++c)
                    zcur[c].at(p, k) += lam * (bs.z[c].at(p, k) - zcur[c].at(p, k));
            }
        ylast = std::move(bs.y);
        zlast = std::move(bs.z);
        diag = std::move(bs.diag);
        if (resid <= nc.picard_tol) {
            sol.status = SolveStatus::Converged;
            break;
        }
        if (resid > 5.0 * min_resid)
            throw FbsdeError("Picard iteration diverged: residual " + std::to_string(resid) +
                             " exceeds 5x the running minimum " + std::to_string(min_resid));
        // Successive iterates eventually differ only by regression noise;
        // once the residual stops improving there is nothing left to gain.
        if (resid >= 0.99 * min_resid) {
            if (++n_stalled >= 3) {
                sol.message = "Picard residual stalled at " + std::to_string(resid) +
                              " (regression noise floor) after " + std::to_string(it + 1) +
                              " sweeps";
                break;
            }
        } else {
            n_stalled = 0;
        }
        min_resid = std::min(min_resid, resid);
    }
    if (sol.status != SolveStatus::Converged && sol.message.empty())
        sol.message = "Picard residual above tolerance after " +
                      std::to_string(nc.picard_max_iter) + " sweeps";

    sol.x = std::move(xcur);
    sol.y = std::move(ylast);
    sol.z = std::move(zlast);
    sol.diag = std::move(diag);
    sol.bundle = std::move(bundle);
    sol.terminal = std::move(endow);
    sol.pi_star = extract_strategy(sol, spec);
    return sol;
}

FbsdeSolution solve_power_endowment(const ProblemSpec& spec, const NumericsConfig& nc) {
    const UtilityModel& u = spec.utility;
    if (u.family() != Family::Power)
        throw FbsdeError("the endowment specialization requires a power utility");
    FbsdeSolution sol = spec.market.d2() == 0 ? solve_complete_halfline(spec, nc)
                                              : solve_incomplete_picard(spec, nc);
    const double gamma = u.params()[0];
    const int n = sol.y.grid().n_steps;
    double gap = 0.0;
    for (int p = 0; p < sol.y.n_paths(); ++p) {
        const double closed = (gamma - 1.0) * std::log1p(sol.terminal[p] / sol.x.at(p, n));
        gap = std::max(gap, std::abs(sol.y.at(p, n) - closed));
    }
    sol.terminal_identity_gap = gap;
    return sol;
}

FbsdeSolution solve(const ProblemSpec& spec, const NumericsConfig& nc) {
    if (spec.market.d2() > 0) return solve_incomplete_picard(spec, nc);
    return spec.utility.domain() == Domain::RealLine ? solve_complete_realline(spec, nc)
                                                     : solve_complete_halfline(spec, nc);
}

}  // namespace fbsde
