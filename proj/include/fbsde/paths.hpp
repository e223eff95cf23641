#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "fbsde/market.hpp"

namespace fbsde {

struct PathError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TimeGrid {
    int n_steps = 0;
    double horizon = 0.0;

    double dt() const { return horizon / n_steps; }
    double node(int k) const { return horizon * static_cast<double>(k) / n_steps; }
    int n_nodes() const { return n_steps + 1; }
};

// Deterministic per-path normal stream: splitmix64 keyed by (seed, path) and
// Box-Muller. Bit-reproducible regardless of execution order.
class PathRng {
public:
    PathRng(std::uint64_t seed, std::uint64_t path);
    double normal();

private:
    std::uint64_t next_u64();
    double next_uniform();  // in (0, 1]

    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Seeded Brownian increments and levels, [path][node][component] layout.
class PathBundle {
public:
    PathBundle() = default;
    PathBundle(TimeGrid grid, int n_paths, int dim, std::uint64_t seed);

    const TimeGrid& grid() const { return grid_; }
    int n_paths() const { return n_paths_; }
    int dim() const { return dim_; }
    std::uint64_t seed() const { return seed_; }

    double dw(int path, int step, int comp) const {
        return dw_[(static_cast<std::size_t>(path) * grid_.n_steps + step) * dim_ + comp];
    }
    double w(int path, int node, int comp) const {
        return w_[(static_cast<std::size_t>(path) * grid_.n_nodes() + node) * dim_ + comp];
    }

private:
    friend PathBundle coarsen(const PathBundle& fine, int factor);

    TimeGrid grid_;
    int n_paths_ = 0;
    int dim_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<double> dw_;
    std::vector<double> w_;
};

// Grid-aligned scalar paths of a named process.
class StatePaths {
public:
    StatePaths() = default;
    StatePaths(TimeGrid grid, int n_paths, double fill = 0.0)
        : grid_(grid), n_paths_(n_paths),
          data_(static_cast<std::size_t>(n_paths) * grid.n_nodes(), fill) {}

    const TimeGrid& grid() const { return grid_; }
    int n_paths() const { return n_paths_; }
    double at(int path, int node) const {
        return data_[static_cast<std::size_t>(path) * grid_.n_nodes() + node];
    }
    double& at(int path, int node) {
        return data_[static_cast<std::size_t>(path) * grid_.n_nodes() + node];
    }
    const std::vector<double>& data() const { return data_; }

private:
    TimeGrid grid_;
    int n_paths_ = 0;
    std::vector<double> data_;
};

PathBundle sample_brownian(TimeGrid grid, int n_paths, int dim, std::uint64_t seed);

// Sums consecutive increments of a fine bundle into a coarser one (factor
// must divide n_steps). Used for grid-refinement studies with common noise.
PathBundle coarsen(const PathBundle& fine, int factor);

// Discrete stochastic exponential of int a(t) dW for a deterministic vector
// integrand: node k carries exp(sum_{j<k} a(t_j).dW_j - 1/2 |a(t_j)|^2 dt).
StatePaths stochastic_exponential(const PathBundle& bundle,
                                  const std::function<Vec(double)>& integrand);

// Euler-Maruyama for dX = drift dt + diffusion . dW. Throws PathError with
// path/step context when the state leaves the finite range.
StatePaths euler_sde(const PathBundle& bundle,
                     const std::function<double(double, double)>& drift,
                     const std::function<Vec(double, double)>& diffusion, double x0);

// Additive wealth (money amounts): X_{k+1} = X_k + sum_i pi_i (dW^i + theta^i dt).
StatePaths wealth_amount(const PathBundle& bundle, const MarketModel& market,
                         const std::vector<StatePaths>& pi, double x0);

// Multiplicative wealth (proportions): exact discrete stochastic exponential,
// strictly positive by construction.
StatePaths wealth_proportion(const PathBundle& bundle, const MarketModel& market,
                             const std::vector<StatePaths>& pi, double x0);

}  // namespace fbsde
