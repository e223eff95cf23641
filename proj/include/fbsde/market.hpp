#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fbsde {

using Vec = std::vector<double>;

struct MarketError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Normalized market dS^i = dW^i + theta^i dt with d1 tradable and d2
// orthogonal Brownian components. theta is a deterministic function of time;
// the bond rate is zero and price levels are never materialized.
class MarketModel {
public:
    using ThetaFn = std::function<Vec(double)>;

    // Validates theta on a fine grid (10001 nodes) and records the grid
    // maximum of |theta| as the certified bound.
    static MarketModel build(int d1, int d2, ThetaFn theta, double horizon);

    int d1() const { return d1_; }
    int d2() const { return d2_; }
    int dim() const { return d1_ + d2_; }
    double horizon() const { return horizon_; }
    double theta_bound() const { return theta_bound_; }

    Vec theta(double t) const;

    // (theta_H, theta_O): theta_H keeps the first d1 components (zeros after),
    // theta_O the rest. Throws MarketError for t outside [0, T].
    std::pair<Vec, Vec> theta_split(double t) const;

    // |theta^H(t)|^2, the quantity every driver actually consumes.
    double theta_h_norm2(double t) const;

private:
    MarketModel(int d1, int d2, ThetaFn theta, double horizon, double bound)
        : d1_(d1), d2_(d2), theta_(std::move(theta)), horizon_(horizon), theta_bound_(bound) {}

    int d1_;
    int d2_;
    ThetaFn theta_;
    double horizon_;
    double theta_bound_;
};

// Constant-vector theta.
MarketModel::ThetaFn constant_theta(Vec value);

// Piecewise-linear theta through (time, vector) breakpoints; clamped outside
// the breakpoint range.
MarketModel::ThetaFn piecewise_linear_theta(std::vector<std::pair<double, Vec>> breakpoints);

}  // namespace fbsde
