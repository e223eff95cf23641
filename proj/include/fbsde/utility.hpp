#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fbsde {

struct UtilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Domain { RealLine, HalfLine };

enum class Family { Exponential, Power, Log, Quadratic, MixtureExp, MixturePower, Custom };

// U with derivatives up to third order and the inverse marginal utility
// I = (U')^{-1}. Construction validates monotonicity/concavity, the
// inverse-marginal round trip and finite-difference consistency of the
// supplied derivatives on the module's validation grid.
class UtilityModel {
public:
    using Fn = std::function<double(double)>;

    static UtilityModel exponential(double alpha);
    static UtilityModel power(double gamma);
    static UtilityModel log_utility();
    static UtilityModel quadratic(double bliss);  // U(x) = x - x^2/(2b), x < b
    static UtilityModel mixture_exp(double a1, double a2);
    static UtilityModel mixture_power(double g1, double g2);
    static UtilityModel custom(Domain domain, Fn u0, Fn u1, Fn u2, Fn u3, Fn inverse_marginal);

    Domain domain() const { return domain_; }
    Family family() const { return family_; }
    const std::vector<double>& params() const { return params_; }
    const std::vector<double>& validation_grid() const { return grid_; }

    double u0(double x) const { return u0_(x); }
    double u1(double x) const { return u1_(x); }
    double u2(double x) const { return u2_(x); }
    double u3(double x) const { return u3_(x); }
    double inverse_marginal(double y) const { return inv_(y); }

    // Domain membership for evaluation (interior; HalfLine requires x > 0,
    // quadratic requires x < bliss).
    bool in_domain(double x) const;
    void require_in_domain(double x) const;

private:
    UtilityModel() = default;

    void validate() const;
    void build_grid();

    Domain domain_ = Domain::RealLine;
    Family family_ = Family::Custom;
    std::vector<double> params_;
    double upper_clip_ = 0.0;  // quadratic bliss point, +inf otherwise
    bool has_upper_clip_ = false;
    Fn u0_, u1_, u2_, u3_, inv_;
    std::vector<double> grid_;
};

// phi_1 = U'/U'' (always negative).
double phi1(const UtilityModel& u, double x);
// Real-line phi_2 = U''' |U'|^2 / (U'')^3.
double phi2_realline(const UtilityModel& u, double x);
// Half-line phi_2 = 1 - 1/2 U''' U' / |U''|^2.
double phi2_halfline(const UtilityModel& u, double x);
// phi_3 = U''' / U''.
double phi3(const UtilityModel& u, double x);

double risk_tolerance(const UtilityModel& u, double x);           // -phi1
double relative_risk_tolerance(const UtilityModel& u, double x);  // -phi1/x

// If the risk tolerance -U'/U'' is affine with slope c (checked via the
// closed-form derivative -1 + U'U'''/U''^2 being constant on the validation
// grid to 1e-8), returns kappa = 1/2 - c/2; absent otherwise.
std::optional<double> hara_kappa(const UtilityModel& u);

// Legendre transform V(y) = U(I(y)) - y I(y), half-line utilities, y > 0.
double convex_conjugate(const UtilityModel& u, double y);

// Grid maxima of |phi1|, |phi2| (domain-appropriate phi2) times safety
// factor 1.5, used for fixed-point brackets and Y clamping.
struct UtilityBounds {
    double phi1_max;
    double phi2_max;
};
UtilityBounds estimate_bounds(const UtilityModel& u);

}  // namespace fbsde
