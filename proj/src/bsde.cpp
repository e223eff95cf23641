#include "fbsde/bsde.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "fbsde/parallel.hpp"

namespace fbsde {

namespace {

// Exponent tuples of all monomials in n_coords variables with total degree
// <= degree, constant term first.
std::vector<std::vector<int>> monomial_exponents(int n_coords, int degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur(n_coords, 0);
    std::function<void(int, int)> rec = [&](int pos, int remaining) {
        if (pos == n_coords) {
            out.push_back(cur);
            return;
        }
        for (int e = 0; e <= remaining; ++e) {
            cur[pos] = e;
            rec(pos + 1, remaining - e);
        }
        cur[pos] = 0;
    };
    rec(0, degree);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        int sa = 0, sb = 0;
        for (int x : a) sa += x;
        for (int x : b) sb += x;
        if (sa != sb) return sa < sb;
        return a < b;
    });
    return out;
}

struct BasisEvaluator {
    RegressionBasis spec;
    int skip = 0;      // leading driver-only coordinates
    int n_coords = 0;  // basis coordinates
    std::vector<std::vector<int>> exponents;  // Polynomial
    std::vector<double> knots;                // PiecewiseLinear
    std::vector<double> mean, inv_sd;

    int size() const {
        return spec.kind == RegressionBasis::Kind::Polynomial
                   ? static_cast<int>(exponents.size())
                   : static_cast<int>(knots.size()) + 2;
    }

    // Standardized coordinates are winsorized at +-4: beyond that, monomial
    // extrapolation amplifies coefficient noise cubically, which can feed an
    // unstable strategy back into coupled forward passes. Inside the clamp
    // (all but ~1e-4 of the mass) the basis is unchanged.
    static constexpr double kCoordClamp = 4.0;

    void eval(const double* coords, double* phi) const {
        if (spec.kind == RegressionBasis::Kind::Polynomial) {
            for (std::size_t j = 0; j < exponents.size(); ++j) {
                double v = 1.0;
                for (int c = 0; c < n_coords; ++c) {
                    const double s = std::clamp((coords[skip + c] - mean[c]) * inv_sd[c],
                                                -kCoordClamp, kCoordClamp);
                    for (int e = 0; e < exponents[j][c]; ++e) v *= s;
                }
                phi[j] = v;
            }
        } else {
            const double s = (coords[skip] - mean[0]) * inv_sd[0];
            phi[0] = 1.0;
            phi[1] = s;
            for (std::size_t j = 0; j < knots.size(); ++j)
                phi[2 + j] = std::max(0.0, s - knots[j]);
        }
    }
};

}  // namespace

BsdePaths solve_bsde(const PathBundle& bundle, const std::vector<const StatePaths*>& state,
                     const std::vector<double>& terminal, const Driver& driver,
                     const RegressionBasis& basis, StepMode mode, double y_clamp) {
    const TimeGrid& g = bundle.grid();
    const int n_paths = bundle.n_paths();
    const int d = bundle.dim();
    const int n_coords = static_cast<int>(state.size());
    const double dt = g.dt();
    if (static_cast<int>(terminal.size()) != n_paths)
        throw BsdeError("bsde: terminal size mismatch");
    for (double h : terminal)
        if (!std::isfinite(h)) throw BsdeError("bsde: non-finite terminal value");
    if (basis.kind == RegressionBasis::Kind::Polynomial && basis.degree > 5)
        throw BsdeError("bsde: basis degree must be <= 5");
    if (basis.skip < 0 || basis.skip > n_coords)
        throw BsdeError("bsde: basis skip count out of range");
    const int nbc = n_coords - basis.skip;  // coordinates entering the basis
    if (basis.kind == RegressionBasis::Kind::PiecewiseLinear && nbc > 1)
        throw BsdeError("bsde: piecewise-linear basis supports one coordinate");
    if (driver.zdep == Driver::ZDep::Quadratic && mode != StepMode::ImplicitNewton)
        throw BsdeError("bsde: quadratic drivers require the implicit stepping mode");

    BsdePaths out;
    out.y = StatePaths(g, n_paths);
    out.z.assign(d, StatePaths(g, n_paths));
    out.diag.residual_rms.assign(g.n_steps, 0.0);
    out.diag.condition.assign(g.n_steps, 0.0);

    for (int p = 0; p < n_paths; ++p) out.y.at(p, g.n_steps) = terminal[p];

    BasisEvaluator be;
    be.spec = basis;
    be.skip = nbc == 0 ? 0 : basis.skip;
    be.n_coords = std::max(1, nbc);
    if (basis.kind == RegressionBasis::Kind::Polynomial) {
        be.exponents = monomial_exponents(be.n_coords, nbc == 0 ? 0 : basis.degree);
    } else {
        be.knots.resize(std::max(0, basis.bins - 1));
        for (std::size_t j = 0; j < be.knots.size(); ++j)
            be.knots[j] = -2.0 + 4.0 * static_cast<double>(j + 1) / basis.bins;
    }
    const int nb = be.size();
    const int n_targets = 1 + d;  // continuation + one z per component

    // Two-fold cross-fitting: coefficients for each half of the sample are
    // fitted on the other half, so the fitted continuation and z values are
    // independent of each path's own Brownian increment. A single in-sample
    // fit biases averages of z * dW at order (basis size) / n_paths, which
    // dominates the Monte Carlo standard error in the martingale checks.
    const bool crossfit = n_paths >= 512;
    const int fold_split = n_paths / 2;
    std::array<Eigen::MatrixXd, 2> betas;

    const std::size_t nblocks = block_count(n_paths);
    std::vector<std::array<Eigen::MatrixXd, 2>> gram_part(nblocks), rhs_part(nblocks);
    std::vector<Eigen::VectorXd> mom_part(nblocks);

    for (int k = g.n_steps - 1; k >= 0; --k) {
        const double t = g.node(k);
        if (driver.prepare) driver.prepare(t);

        // Standardization moments of the state coordinates at node k.
        be.mean.assign(be.n_coords, 0.0);
        be.inv_sd.assign(be.n_coords, 1.0);
        if (nbc > 0) {
            parallel_blocks(n_paths, [&](std::size_t b, std::size_t e, std::size_t blk) {
                Eigen::VectorXd m = Eigen::VectorXd::Zero(2 * nbc);
                for (std::size_t p = b; p < e; ++p)
                    for (int c = 0; c < nbc; ++c) {
                        const double v = state[basis.skip + c]->at(p, k);
                        m[c] += v;
                        m[nbc + c] += v * v;
                    }
                mom_part[blk] = m;
            });
            Eigen::VectorXd m = Eigen::VectorXd::Zero(2 * nbc);
            for (std::size_t b = 0; b < nblocks; ++b) m += mom_part[b];
            for (int c = 0; c < nbc; ++c) {
                be.mean[c] = m[c] / n_paths;
                const double var = std::max(0.0, m[nbc + c] / n_paths - be.mean[c] * be.mean[c]);
                be.inv_sd[c] = var > 1e-300 ? 1.0 / std::sqrt(var) : 0.0;
            }
        }

        // Normal equations, assembled in fixed block order, one set per fold.
        parallel_blocks(n_paths, [&](std::size_t b, std::size_t e, std::size_t blk) {
            std::array<Eigen::MatrixXd, 2> a{Eigen::MatrixXd::Zero(nb, nb),
                                             Eigen::MatrixXd::Zero(nb, nb)};
            std::array<Eigen::MatrixXd, 2> r{Eigen::MatrixXd::Zero(nb, n_targets),
                                             Eigen::MatrixXd::Zero(nb, n_targets)};
            std::vector<double> phi(nb), cs(std::max(1, n_coords));
            for (std::size_t p = b; p < e; ++p) {
                const int f = static_cast<int>(p) < fold_split ? 0 : 1;
                for (int c = 0; c < n_coords; ++c) cs[c] = state[c]->at(p, k);
                be.eval(cs.data(), phi.data());
                const double ynext = out.y.at(p, k + 1);
                for (int i = 0; i < nb; ++i) {
                    for (int j = i; j < nb; ++j) a[f](i, j) += phi[i] * phi[j];
                    r[f](i, 0) += phi[i] * ynext;
                    for (int c = 0; c < d; ++c)
                        r[f](i, 1 + c) += phi[i] * ynext * bundle.dw(p, k, c) / dt;
                }
            }
            gram_part[blk] = a;
            rhs_part[blk] = r;
        });
        std::array<Eigen::MatrixXd, 2> gram{Eigen::MatrixXd::Zero(nb, nb),
                                            Eigen::MatrixXd::Zero(nb, nb)};
        std::array<Eigen::MatrixXd, 2> rhs{Eigen::MatrixXd::Zero(nb, n_targets),
                                           Eigen::MatrixXd::Zero(nb, n_targets)};
        for (std::size_t b = 0; b < nblocks; ++b)
            for (int f = 0; f < 2; ++f) {
                gram[f] += gram_part[b][f];
                rhs[f] += rhs_part[b][f];
            }
        if (!crossfit) {
            gram[0] += gram[1];
            rhs[0] += rhs[1];
        }

        const int n_fits = crossfit ? 2 : 1;
        double cond_max = 0.0;
        for (int f = 0; f < n_fits; ++f) {
            Eigen::MatrixXd g_full = gram[f].selfadjointView<Eigen::Upper>();
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g_full);
            const Eigen::VectorXd& ev = es.eigenvalues();
            const double ev_max = ev(nb - 1);
            if (!(ev_max > 0.0))
                throw BsdeError("bsde: degenerate regression at step " + std::to_string(k));
            // Directions carrying < 1e-8 of the spectrum are dropped: exactly
            // collinear state coordinates (e.g. wealth affine in a Brownian
            // level on the first Picard sweep) otherwise leave near-null
            // eigenvalues that amplify regression noise by ~1e12.
            const double cutoff = ev_max * 1e-8;
            double ev_min_kept = ev_max;
            Eigen::VectorXd inv_ev = Eigen::VectorXd::Zero(nb);
            for (int i = 0; i < nb; ++i) {
                if (ev(i) > cutoff) {
                    inv_ev(i) = 1.0 / ev(i);
                    ev_min_kept = std::min(ev_min_kept, ev(i));
                }
            }
            const double cond = ev_max / ev_min_kept;
            cond_max = std::max(cond_max, cond);
            if (cond > 1e12)
                throw BsdeError("bsde: ill-conditioned basis at step " + std::to_string(k) +
                                " (condition " + std::to_string(cond) + ")");
            betas[f] = es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose() *
                       rhs[f];
        }
        if (!crossfit) betas[1] = betas[0];
        out.diag.condition[k] = cond_max;

        // Per-path update.
        std::vector<double> res_part(nblocks, 0.0);
        std::vector<std::string> errors(nblocks);
        parallel_blocks(n_paths, [&](std::size_t b, std::size_t e, std::size_t blk) {
            std::vector<double> phi(nb), cs(std::max(1, n_coords)), zv(d);
            double res2 = 0.0;
            for (std::size_t p = b; p < e; ++p) {
                const Eigen::MatrixXd& beta =
                    betas[static_cast<int>(p) < fold_split ? 1 : 0];
                for (int c = 0; c < n_coords; ++c) cs[c] = state[c]->at(p, k);
                be.eval(cs.data(), phi.data());
                double cont = 0.0;
                for (int i = 0; i < nb; ++i) cont += phi[i] * beta(i, 0);
                for (int c = 0; c < d; ++c) {
                    double z = 0.0;
                    for (int i = 0; i < nb; ++i) z += phi[i] * beta(i, 1 + c);
                    zv[c] = z;
                    out.z[c].at(p, k) = z;
                }
                const double r = out.y.at(p, k + 1) - cont;
                res2 += r * r;

                double y;
                if (mode == StepMode::Explicit) {
                    y = cont - driver.f(t, cs.data(), cont, zv.data()) * dt;
                } else {
                    y = cont;
                    bool converged = false;
                    for (int it = 0; it < 20; ++it) {
                        const double gy = y - cont + driver.f(t, cs.data(), y, zv.data()) * dt;
                        if (std::abs(gy) <= 1e-12 * std::max(1.0, std::abs(y))) {
                            converged = true;
                            break;
                        }
                        const double h = 1e-7 * std::max(1.0, std::abs(y));
                        const double gp = y + h - cont + driver.f(t, cs.data(), y + h, zv.data()) * dt;
                        const double dg = (gp - gy) / h;
                        if (!(std::abs(dg) > 1e-14)) break;
                        y -= gy / dg;
                    }
                    if (!converged) {
                        errors[blk] = "bsde: implicit Newton step failed at step " +
                                      std::to_string(k) + " path " + std::to_string(p);
                        return;
                    }
                }
                out.y.at(p, k) = std::clamp(y, -y_clamp, y_clamp);
            }
            res_part[blk] = res2;
        });
        for (const auto& msg : errors)
            if (!msg.empty()) throw BsdeError(msg);
        double res2 = 0.0;
        for (double r : res_part) res2 += r;
        out.diag.residual_rms[k] = std::sqrt(res2 / n_paths);
    }

    for (int p = 0; p < n_paths; ++p)
        for (int c = 0; c < d; ++c) out.z[c].at(p, g.n_steps) = out.z[c].at(p, g.n_steps - 1);
    return out;
}

namespace {

struct ThetaCache {
    Vec theta;
    double h_norm2 = 0.0;
};

}  // namespace

Driver driver_lipschitz_realline(const UtilityModel& u, const MarketModel& market) {
    if (u.domain() != Domain::RealLine)
        throw BsdeError("bsde: real-line driver needs a real-line utility");
    auto cache = std::make_shared<ThetaCache>();
    const int d = market.dim();
    Driver drv;
    drv.n_state = 1;
    drv.zdep = Driver::ZDep::Linear;
    drv.prepare = [cache, &market](double t) {
        cache->theta = market.theta(t);
        double s = 0.0;
        for (double x : cache->theta) s += x * x;
        cache->h_norm2 = s;  // full |theta|^2 here
    };
    drv.f = [cache, &u, d](double, const double* state, double, const double* z) {
        const double p = state[0];
        const double t2 = cache->h_norm2;
        double zth = 0.0;
        for (int c = 0; c < d; ++c) zth += z[c] * cache->theta[c];
        return -0.5 * t2 * phi2_realline(u, p) + t2 * phi1(u, p) + zth;
    };
    drv.prepare(0.0);
    return drv;
}

Driver driver_halfline(const UtilityModel& u, const MarketModel& market) {
    if (u.domain() != Domain::HalfLine)
        throw BsdeError("bsde: half-line driver needs a half-line utility");
    auto cache = std::make_shared<ThetaCache>();
    const int d1 = market.d1();
    const int d = market.dim();
    Driver drv;
    drv.n_state = 1;
    drv.zdep = Driver::ZDep::Quadratic;
    drv.prepare = [cache, &market](double t) { cache->theta = market.theta(t); };
    drv.f = [cache, &u, d1, d](double, const double* state, double, const double* z) {
        const double x = state[0];
        double zh2 = 0.0, z2 = 0.0;
        for (int c = 0; c < d; ++c) {
            if (c < d1) {
                const double s = z[c] + cache->theta[c];
                zh2 += s * s;
            }
            z2 += z[c] * z[c];
        }
        return zh2 * phi2_halfline(u, x) - 0.5 * z2;
    };
    drv.prepare(0.0);
    return drv;
}

Driver driver_hara(double kappa, const MarketModel& market) {
    auto cache = std::make_shared<ThetaCache>();
    const int d1 = market.d1();
    const int d = market.dim();
    Driver drv;
    drv.n_state = 0;
    drv.zdep = Driver::ZDep::Quadratic;
    drv.prepare = [cache, &market](double t) { cache->theta = market.theta(t); };
    drv.f = [cache, kappa, d1, d](double, const double*, double, const double* z) {
        double zh2 = 0.0, z2 = 0.0;
        for (int c = 0; c < d; ++c) {
            if (c < d1) {
                const double s = z[c] + cache->theta[c];
                zh2 += s * s;
            }
            z2 += z[c] * z[c];
        }
        return -0.5 * z2 + kappa * zh2;
    };
    drv.prepare(0.0);
    return drv;
}

Driver driver_incomplete_realline(const UtilityModel& u, const MarketModel& market) {
    if (u.domain() != Domain::RealLine)
        throw BsdeError("bsde: real-line driver needs a real-line utility");
    auto cache = std::make_shared<ThetaCache>();
    const int d1 = market.d1();
    const int d = market.dim();
    Driver drv;
    drv.n_state = 1;
    drv.zdep = Driver::ZDep::Quadratic;
    drv.prepare = [cache, &market](double t) {
        cache->theta = market.theta(t);
        double s = 0.0;
        for (int c = 0; c < market.d1(); ++c) s += cache->theta[c] * cache->theta[c];
        cache->h_norm2 = s;
    };
    drv.f = [cache, &u, d1, d](double, const double* state, double y, const double* z) {
        const double p = state[0] + y;
        const double th2 = cache->h_norm2;
        double zth = 0.0, zo2 = 0.0;
        for (int c = 0; c < d; ++c) {
            if (c < d1)
                zth += z[c] * cache->theta[c];
            else
                zo2 += z[c] * z[c];
        }
        return -0.5 * th2 * phi2_realline(u, p) + th2 * phi1(u, p) + zth - 0.5 * zo2 * phi3(u, p);
    };
    drv.prepare(0.0);
    return drv;
}

}  // namespace fbsde
