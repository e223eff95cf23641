#include "fbsde/utility.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fbsde {

namespace {

constexpr int kGridPoints = 101;

// Monotone-safe inversion of a strictly decreasing marginal utility.
double invert_decreasing(const UtilityModel::Fn& u1, const UtilityModel::Fn& u2, double y,
                         double lo_hint, double hi_hint, bool positive_domain) {
    double lo = lo_hint, hi = hi_hint;
    // u1 decreasing: u1(lo) > y > u1(hi). Expand until bracketed.
    for (int i = 0; i < 200 && u1(lo) < y; ++i) lo = positive_domain ? lo / 2.0 : lo - std::max(1.0, std::abs(lo));
    for (int i = 0; i < 200 && u1(hi) > y; ++i) hi = positive_domain ? hi * 2.0 : hi + std::max(1.0, std::abs(hi));
    if (u1(lo) < y || u1(hi) > y) throw UtilityError("utility: inverse marginal bracketing failed");
    double x = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        const double f = u1(x) - y;
        if (f > 0.0)
            lo = x;
        else
            hi = x;
        const double d = u2(x);
        double xn = x - f / d;  // Newton; u2 < 0 so well defined
        if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
        if (std::abs(xn - x) <= 1e-15 * std::max(1.0, std::abs(x))) return xn;
        x = xn;
    }
    return x;
}

}  // namespace

void UtilityModel::build_grid() {
    grid_.resize(kGridPoints);
    if (domain_ == Domain::HalfLine) {
        const double lo = 1e-3, hi = 10.0;
        const double r = std::log(hi / lo) / (kGridPoints - 1);
        for (int i = 0; i < kGridPoints; ++i) grid_[i] = lo * std::exp(r * i);
    } else {
        const double lo = -10.0;
        double hi = 10.0;
        if (has_upper_clip_) hi = std::min(hi, upper_clip_ - std::max(1e-3, 0.01 * std::abs(upper_clip_)));
        for (int i = 0; i < kGridPoints; ++i) grid_[i] = lo + (hi - lo) * i / (kGridPoints - 1);
    }
}

void UtilityModel::validate() const {
    for (double x : grid_) {
        const double d1 = u1_(x), d2 = u2_(x);
        if (!(d1 > 0.0)) throw UtilityError("utility: U' must be strictly positive on the grid");
        if (!(d2 < 0.0)) throw UtilityError("utility: U'' must be strictly negative on the grid");
        const double back = inv_(d1);
        if (std::abs(back - x) > 1e-10 * std::max(1.0, std::abs(x)))
            throw UtilityError("utility: inverse marginal round trip failed");
        // Central finite differences of u0,u1,u2 against u1,u2,u3. The step is
        // proportional to x on the half line, where the derivatives are
        // power-like and an absolute step loses accuracy near the origin.
        const double h = (domain_ == Domain::HalfLine) ? 1e-5 * x : 1e-5 * std::max(1.0, std::abs(x));
        if (!in_domain(x + h) || !in_domain(x - h)) continue;
        auto check = [&](const Fn& f, const Fn& df, const char* what) {
            const double fd = (f(x + h) - f(x - h)) / (2.0 * h);
            const double exact = df(x);
            if (std::abs(fd - exact) > 1e-5 * std::max(1.0, std::abs(exact)))
                throw UtilityError(std::string("utility: finite-difference check failed for ") + what);
        };
        check(u0_, u1_, "U'");
        check(u1_, u2_, "U''");
        check(u2_, u3_, "U'''");
    }
}

bool UtilityModel::in_domain(double x) const {
    if (domain_ == Domain::HalfLine && !(x > 0.0)) return false;
    if (has_upper_clip_ && !(x < upper_clip_)) return false;
    return std::isfinite(x);
}

void UtilityModel::require_in_domain(double x) const {
    if (!in_domain(x)) throw UtilityError("utility: argument outside domain");
}

UtilityModel UtilityModel::exponential(double alpha) {
    if (!(alpha > 0.0)) throw UtilityError("utility: exponential needs alpha > 0");
    UtilityModel u;
    u.domain_ = Domain::RealLine;
    u.family_ = Family::Exponential;
    u.params_ = {alpha};
    u.u0_ = [alpha](double x) { return -std::exp(-alpha * x); };
    u.u1_ = [alpha](double x) { return alpha * std::exp(-alpha * x); };
    u.u2_ = [alpha](double x) { return -alpha * alpha * std::exp(-alpha * x); };
    u.u3_ = [alpha](double x) { return alpha * alpha * alpha * std::exp(-alpha * x); };
    u.inv_ = [alpha](double y) { return -std::log(y / alpha) / alpha; };
    u.build_grid();
    u.validate();
    return u;
}

UtilityModel UtilityModel::power(double gamma) {
    if (!(gamma < 1.0) || gamma == 0.0) throw UtilityError("utility: power needs gamma < 1, gamma != 0");
    UtilityModel u;
    u.domain_ = Domain::HalfLine;
    u.family_ = Family::Power;
    u.params_ = {gamma};
    u.u0_ = [gamma](double x) { return std::pow(x, gamma) / gamma; };
    u.u1_ = [gamma](double x) { return std::pow(x, gamma - 1.0); };
    u.u2_ = [gamma](double x) { return (gamma - 1.0) * std::pow(x, gamma - 2.0); };
    u.u3_ = [gamma](double x) { return (gamma - 1.0) * (gamma - 2.0) * std::pow(x, gamma - 3.0); };
    u.inv_ = [gamma](double y) { return std::pow(y, 1.0 / (gamma - 1.0)); };
    u.build_grid();
    u.validate();
    return u;
}

UtilityModel UtilityModel::log_utility() {
    UtilityModel u;
    u.domain_ = Domain::HalfLine;
    u.family_ = Family::Log;
    u.u0_ = [](double x) { return std::log(x); };
    u.u1_ = [](double x) { return 1.0 / x; };
    u.u2_ = [](double x) { return -1.0 / (x * x); };
    u.u3_ = [](double x) { return 2.0 / (x * x * x); };
    u.inv_ = [](double y) { return 1.0 / y; };
    u.build_grid();
    u.validate();
    return u;
}

UtilityModel UtilityModel::quadratic(double bliss) {
    if (!(bliss > 0.0)) throw UtilityError("utility: quadratic needs bliss > 0");
    UtilityModel u;
    u.domain_ = Domain::RealLine;
    u.family_ = Family::Quadratic;
    u.params_ = {bliss};
    u.upper_clip_ = bliss;
    u.has_upper_clip_ = true;
    u.u0_ = [bliss](double x) { return x - x * x / (2.0 * bliss); };
    u.u1_ = [bliss](double x) { return 1.0 - x / bliss; };
    u.u2_ = [bliss](double) { return -1.0 / bliss; };
    u.u3_ = [](double) { return 0.0; };
    u.inv_ = [bliss](double y) { return bliss * (1.0 - y); };
    u.build_grid();
    u.validate();
    return u;
}

UtilityModel UtilityModel::mixture_exp(double a1, double a2) {
    if (!(a1 > 0.0) || !(a2 > 0.0)) throw UtilityError("utility: mixture_exp needs positive exponents");
    UtilityModel u;
    u.domain_ = Domain::RealLine;
    u.family_ = Family::MixtureExp;
    u.params_ = {a1, a2};
    u.u0_ = [a1, a2](double x) { return -std::exp(-a1 * x) - std::exp(-a2 * x); };
    u.u1_ = [a1, a2](double x) { return a1 * std::exp(-a1 * x) + a2 * std::exp(-a2 * x); };
    u.u2_ = [a1, a2](double x) { return -a1 * a1 * std::exp(-a1 * x) - a2 * a2 * std::exp(-a2 * x); };
    u.u3_ = [a1, a2](double x) { return a1 * a1 * a1 * std::exp(-a1 * x) + a2 * a2 * a2 * std::exp(-a2 * x); };
    auto u1f = u.u1_;
    auto u2f = u.u2_;
    u.inv_ = [u1f, u2f, a1](double y) {
        const double guess = -std::log(y / a1) / a1;
        return invert_decreasing(u1f, u2f, y, guess - 2.0, guess + 2.0, false);
    };
    u.build_grid();
    u.validate();
    return u;
}

UtilityModel UtilityModel::mixture_power(double g1, double g2) {
    for (double g : {g1, g2})
        if (!(g < 1.0) || g == 0.0) throw UtilityError("utility: mixture_power needs gammas < 1, != 0");
    UtilityModel u;
    u.domain_ = Domain::HalfLine;
    u.family_ = Family::MixturePower;
    u.params_ = {g1, g2};
    u.u0_ = [g1, g2](double x) { return std::pow(x, g1) / g1 + std::pow(x, g2) / g2; };
    u.u1_ = [g1, g2](double x) { return std::pow(x, g1 - 1.0) + std::pow(x, g2 - 1.0); };
    u.u2_ = [g1, g2](double x) {
        return (g1 - 1.0) * std::pow(x, g1 - 2.0) + (g2 - 1.0) * std::pow(x, g2 - 2.0);
    };
    u.u3_ = [g1, g2](double x) {
        return (g1 - 1.0) * (g1 - 2.0) * std::pow(x, g1 - 3.0) +
               (g2 - 1.0) * (g2 - 2.0) * std::pow(x, g2 - 3.0);
    };
    auto u1f = u.u1_;
    auto u2f = u.u2_;
    u.inv_ = [u1f, u2f](double y) { return invert_decreasing(u1f, u2f, y, 0.5, 2.0, true); };
    u.build_grid();
    u.validate();
    return u;
}

UtilityModel UtilityModel::custom(Domain domain, Fn u0, Fn u1, Fn u2, Fn u3, Fn inverse_marginal) {
    UtilityModel u;
    u.domain_ = domain;
    u.family_ = Family::Custom;
    u.u0_ = std::move(u0);
    u.u1_ = std::move(u1);
    u.u2_ = std::move(u2);
    u.u3_ = std::move(u3);
    u.inv_ = std::move(inverse_marginal);
    u.build_grid();
    u.validate();
    return u;
}

double phi1(const UtilityModel& u, double x) {
    u.require_in_domain(x);
    return u.u1(x) / u.u2(x);
}

double phi2_realline(const UtilityModel& u, double x) {
    if (u.domain() != Domain::RealLine) throw UtilityError("utility: phi2_realline needs a real-line utility");
    u.require_in_domain(x);
    const double d1 = u.u1(x), d2 = u.u2(x);
    return u.u3(x) * d1 * d1 / (d2 * d2 * d2);
}

double phi2_halfline(const UtilityModel& u, double x) {
    if (u.domain() != Domain::HalfLine) throw UtilityError("utility: phi2_halfline needs a half-line utility");
    u.require_in_domain(x);
    const double d2 = u.u2(x);
    return 1.0 - 0.5 * u.u3(x) * u.u1(x) / (d2 * d2);
}

double phi3(const UtilityModel& u, double x) {
    u.require_in_domain(x);
    return u.u3(x) / u.u2(x);
}

double risk_tolerance(const UtilityModel& u, double x) { return -phi1(u, x); }

double relative_risk_tolerance(const UtilityModel& u, double x) {
    if (!(x > 0.0)) throw UtilityError("utility: relative risk tolerance needs x > 0");
    return -phi1(u, x) / x;
}

std::optional<double> hara_kappa(const UtilityModel& u) {
    // Slope of the risk tolerance, in closed form from the derivatives.
    auto slope = [&](double x) {
        const double d2 = u.u2(x);
        return -1.0 + u.u1(x) * u.u3(x) / (d2 * d2);
    };
    const auto& grid = u.validation_grid();
    double sum = 0.0;
    for (double x : grid) sum += slope(x);
    const double c = sum / static_cast<double>(grid.size());
    for (double x : grid)
        if (std::abs(slope(x) - c) > 1e-8) return std::nullopt;
    return 0.5 - 0.5 * c;
}

double convex_conjugate(const UtilityModel& u, double y) {
    if (u.domain() != Domain::HalfLine) throw UtilityError("utility: convex conjugate needs a half-line utility");
    if (!(y > 0.0)) throw UtilityError("utility: convex conjugate needs y > 0");
    const double x = u.inverse_marginal(y);
    return u.u0(x) - y * x;
}

UtilityBounds estimate_bounds(const UtilityModel& u) {
    double p1 = 0.0, p2 = 0.0;
    for (double x : u.validation_grid()) {
        p1 = std::max(p1, std::abs(phi1(u, x)));
        p2 = std::max(p2, std::abs(u.domain() == Domain::RealLine ? phi2_realline(u, x)
                                                                  : phi2_halfline(u, x)));
    }
    return {1.5 * p1, 1.5 * p2};
}

}  // namespace fbsde
