#include "fbsde/paths.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "fbsde/parallel.hpp"

namespace fbsde {

namespace {

std::uint64_t splitmix64(std::uint64_t& s) {
    std::uint64_t z = (s += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

PathRng::PathRng(std::uint64_t seed, std::uint64_t path) {
    // Mix seed and path index into one stream key.
    std::uint64_t s = seed;
    std::uint64_t a = splitmix64(s);
    s = path ^ 0xD1B54A32D192ED03ULL;
    std::uint64_t b = splitmix64(s);
    state_ = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
}

std::uint64_t PathRng::next_u64() { return splitmix64(state_); }

double PathRng::next_uniform() {
    // 53-bit mantissa in (0, 1].
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
}

double PathRng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

PathBundle::PathBundle(TimeGrid grid, int n_paths, int dim, std::uint64_t seed)
    : grid_(grid), n_paths_(n_paths), dim_(dim), seed_(seed) {
    if (n_paths < 2) throw PathError("paths: need at least 2 paths");
    if (dim < 1) throw PathError("paths: dim must be >= 1");
    if (grid.n_steps < 1) throw PathError("paths: need at least 1 step");
    try {
        dw_.resize(static_cast<std::size_t>(n_paths) * grid.n_steps * dim);
        w_.resize(static_cast<std::size_t>(n_paths) * grid.n_nodes() * dim);
    } catch (const std::bad_alloc&) {
        throw PathError("paths: allocation failed for " + std::to_string(n_paths) + " paths x " +
                        std::to_string(grid.n_steps) + " steps x " + std::to_string(dim) + " dims");
    }
    const double sdt = std::sqrt(grid.dt());
    const int n_steps = grid.n_steps;
    parallel_blocks(static_cast<std::size_t>(n_paths), [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t p = b; p < e; ++p) {
            PathRng rng(seed_, p);
            const std::size_t dwo = p * n_steps * dim;
            const std::size_t wo = p * (n_steps + 1) * dim;
            for (int c = 0; c < dim; ++c) w_[wo + c] = 0.0;
            for (int k = 0; k < n_steps; ++k) {
                for (int c = 0; c < dim; ++c) {
                    const double inc = sdt * rng.normal();
                    dw_[dwo + static_cast<std::size_t>(k) * dim + c] = inc;
                    w_[wo + static_cast<std::size_t>(k + 1) * dim + c] =
                        w_[wo + static_cast<std::size_t>(k) * dim + c] + inc;
                }
            }
        }
    });
}

PathBundle sample_brownian(TimeGrid grid, int n_paths, int dim, std::uint64_t seed) {
    return PathBundle(grid, n_paths, dim, seed);
}

PathBundle coarsen(const PathBundle& fine, int factor) {
    if (factor < 1 || fine.grid().n_steps % factor != 0)
        throw PathError("paths: coarsening factor must divide n_steps");
    PathBundle out;
    out.grid_ = TimeGrid{fine.grid().n_steps / factor, fine.grid().horizon};
    out.n_paths_ = fine.n_paths();
    out.dim_ = fine.dim();
    out.seed_ = fine.seed();
    const int n = out.grid_.n_steps, d = out.dim_;
    out.dw_.resize(static_cast<std::size_t>(out.n_paths_) * n * d);
    out.w_.resize(static_cast<std::size_t>(out.n_paths_) * (n + 1) * d);
    for (int p = 0; p < out.n_paths_; ++p) {
        for (int c = 0; c < d; ++c) out.w_[(static_cast<std::size_t>(p) * (n + 1)) * d + c] = 0.0;
        for (int k = 0; k < n; ++k) {
            for (int c = 0; c < d; ++c) {
                double inc = 0.0;
                for (int j = 0; j < factor; ++j) inc += fine.dw(p, k * factor + j, c);
                out.dw_[(static_cast<std::size_t>(p) * n + k) * d + c] = inc;
                out.w_[(static_cast<std::size_t>(p) * (n + 1) + k + 1) * d + c] =
                    out.w_[(static_cast<std::size_t>(p) * (n + 1) + k) * d + c] + inc;
            }
        }
    }
    return out;
}

StatePaths stochastic_exponential(const PathBundle& bundle,
                                  const std::function<Vec(double)>& integrand) {
    const TimeGrid& g = bundle.grid();
    const int d = bundle.dim();
    const double dt = g.dt();
    // Deterministic integrand: evaluate once per step.
    std::vector<Vec> a(g.n_steps);
    std::vector<double> a2(g.n_steps);
    for (int k = 0; k < g.n_steps; ++k) {
        a[k] = integrand(g.node(k));
        if (static_cast<int>(a[k].size()) != d)
            throw PathError("paths: integrand dimension mismatch");
        double s = 0.0;
        for (double x : a[k]) s += x * x;
        a2[k] = s;
    }
    StatePaths out(g, bundle.n_paths(), 1.0);
    parallel_blocks(bundle.n_paths(), [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t p = b; p < e; ++p) {
            double log_e = 0.0;
            out.at(p, 0) = 1.0;
            for (int k = 0; k < g.n_steps; ++k) {
                double adw = 0.0;
                for (int c = 0; c < d; ++c) adw += a[k][c] * bundle.dw(p, k, c);
                log_e += adw - 0.5 * a2[k] * dt;
                out.at(p, k + 1) = std::exp(log_e);
            }
        }
    });
    return out;
}

StatePaths euler_sde(const PathBundle& bundle,
                     const std::function<double(double, double)>& drift,
                     const std::function<Vec(double, double)>& diffusion, double x0) {
    const TimeGrid& g = bundle.grid();
    const int d = bundle.dim();
    const double dt = g.dt();
    StatePaths out(g, bundle.n_paths());
    std::vector<std::string> errors(block_count(bundle.n_paths()));
    parallel_blocks(bundle.n_paths(), [&](std::size_t b, std::size_t e, std::size_t blk) {
        for (std::size_t p = b; p < e; ++p) {
            double x = x0;
            out.at(p, 0) = x;
            for (int k = 0; k < g.n_steps; ++k) {
                const double t = g.node(k);
                double dx = drift(t, x) * dt;
                const Vec sig = diffusion(t, x);
                for (int c = 0; c < d; ++c) dx += sig[c] * bundle.dw(p, k, c);
                x += dx;
                if (!std::isfinite(x)) {
                    errors[blk] = "paths: non-finite state at path " + std::to_string(p) +
                                  " step " + std::to_string(k);
                    return;
                }
                out.at(p, k + 1) = x;
            }
        }
    });
    for (const auto& msg : errors)
        if (!msg.empty()) throw PathError(msg);
    return out;
}

StatePaths wealth_amount(const PathBundle& bundle, const MarketModel& market,
                         const std::vector<StatePaths>& pi, double x0) {
    const TimeGrid& g = bundle.grid();
    const int d1 = market.d1();
    if (static_cast<int>(pi.size()) != d1)
        throw PathError("paths: wealth_amount expects d1 strategy components");
    const double dt = g.dt();
    std::vector<Vec> th(g.n_steps);
    for (int k = 0; k < g.n_steps; ++k) th[k] = market.theta(g.node(k));
    StatePaths out(g, bundle.n_paths());
    parallel_blocks(bundle.n_paths(), [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t p = b; p < e; ++p) {
            double x = x0;
            out.at(p, 0) = x;
            for (int k = 0; k < g.n_steps; ++k) {
                for (int i = 0; i < d1; ++i)
                    x += pi[i].at(p, k) * (bundle.dw(p, k, i) + th[k][i] * dt);
                out.at(p, k + 1) = x;
            }
        }
    });
    return out;
}

StatePaths wealth_proportion(const PathBundle& bundle, const MarketModel& market,
                             const std::vector<StatePaths>& pi, double x0) {
    if (!(x0 > 0.0)) throw PathError("paths: wealth_proportion needs x0 > 0");
    const TimeGrid& g = bundle.grid();
    const int d1 = market.d1();
    if (static_cast<int>(pi.size()) != d1)
        throw PathError("paths: wealth_proportion expects d1 strategy components");
    const double dt = g.dt();
    std::vector<Vec> th(g.n_steps);
    for (int k = 0; k < g.n_steps; ++k) th[k] = market.theta(g.node(k));
    StatePaths out(g, bundle.n_paths());
    parallel_blocks(bundle.n_paths(), [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t p = b; p < e; ++p) {
            double x = x0;
            out.at(p, 0) = x;
            for (int k = 0; k < g.n_steps; ++k) {
                double expo = 0.0, pi2 = 0.0;
                for (int i = 0; i < d1; ++i) {
                    const double w = pi[i].at(p, k);
                    expo += w * (bundle.dw(p, k, i) + th[k][i] * dt);
                    pi2 += w * w;
                }
                x *= std::exp(expo - 0.5 * pi2 * dt);
                out.at(p, k + 1) = x;
            }
        }
    });
    return out;
}

}  // namespace fbsde
