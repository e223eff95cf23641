#include "fbsde/market.hpp"

#include <algorithm>
#include <cmath>

namespace fbsde {

namespace {

double norm2(const Vec& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

}  // namespace

MarketModel MarketModel::build(int d1, int d2, ThetaFn theta, double horizon) {
    if (d1 < 1) throw MarketError("market: d1 must be >= 1");
    if (d2 < 0) throw MarketError("market: d2 must be >= 0");
    if (!(horizon > 0.0)) throw MarketError("market: horizon must be positive");
    if (!theta) throw MarketError("market: theta function required");

    const int d = d1 + d2;
    const int n_check = 10000;
    double bound = 0.0;
    for (int k = 0; k <= n_check; ++k) {
        const double t = horizon * static_cast<double>(k) / n_check;
        Vec v = theta(t);
        if (static_cast<int>(v.size()) != d)
            throw MarketError("market: theta(t) has wrong dimension");
        for (double x : v)
            if (!std::isfinite(x)) throw MarketError("market: non-finite theta value");
        bound = std::max(bound, std::sqrt(norm2(v)));
    }
    return MarketModel(d1, d2, std::move(theta), horizon, bound);
}

Vec MarketModel::theta(double t) const { return theta_(t); }

std::pair<Vec, Vec> MarketModel::theta_split(double t) const {
    if (t < 0.0 || t > horizon_) throw MarketError("market: time outside [0, T]");
    Vec full = theta_(t);
    Vec h(full.size(), 0.0), o(full.size(), 0.0);
    for (int i = 0; i < static_cast<int>(full.size()); ++i) {
        if (i < d1_)
            h[i] = full[i];
        else
            o[i] = full[i];
    }
    return {h, o};
}

double MarketModel::theta_h_norm2(double t) const {
    Vec full = theta_(t);
    double s = 0.0;
    for (int i = 0; i < d1_; ++i) s += full[i] * full[i];
    return s;
}

MarketModel::ThetaFn constant_theta(Vec value) {
    return [v = std::move(value)](double) { return v; };
}

MarketModel::ThetaFn piecewise_linear_theta(std::vector<std::pair<double, Vec>> bps) {
    if (bps.empty()) throw MarketError("market: empty theta breakpoint list");
    std::sort(bps.begin(), bps.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return [bps = std::move(bps)](double t) {
        if (t <= bps.front().first) return bps.front().second;
        if (t >= bps.back().first) return bps.back().second;
        for (std::size_t i = 1; i < bps.size(); ++i) {
            if (t <= bps[i].first) {
                const double t0 = bps[i - 1].first, t1 = bps[i].first;
                const double w = (t1 > t0) ? (t - t0) / (t1 - t0) : 1.0;
                const Vec& a = bps[i - 1].second;
                const Vec& b = bps[i].second;
                Vec out(a.size());
                for (std::size_t c = 0; c < a.size(); ++c) out[c] = (1.0 - w) * a[c] + w * b[c];
                return out;
            }
        }
        return bps.back().second;
    };
}

}  // namespace fbsde
