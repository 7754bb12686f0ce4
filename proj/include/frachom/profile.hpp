#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "frachom/quadrature.hpp"

namespace frachom {

/// A 1-periodic scalar profile a(y) from one of the supported analytic families.
struct Profile1d {
    enum class Family { constant, sin1d, piecewise };

    Family family = Family::constant;
    double first = 1.0;  // constant value, sin1d mean, or piecewise value on [0, 1/2)
    double second = 1.0; // piecewise value on [1/2, 1)

    static Profile1d constant(double value)
    {
        if (!(value > 0.0)) throw std::invalid_argument("constant profile must be positive");
        return {Family::constant, value, value};
    }

    /// a(y) = mean + sin(2 pi y); the mean must exceed 1 for ellipticity.
    static Profile1d sin1d(double mean)
    {
        if (!(mean > 1.0))
            throw std::invalid_argument("sin1d profile needs mean > 1 (got " + std::to_string(mean) + ")");
        return {Family::sin1d, mean, 0.0};
    }

    static Profile1d piecewise(double left, double right)
    {
        if (!(left > 0.0) || !(right > 0.0))
            throw std::invalid_argument("piecewise profile values must be positive");
        return {Family::piecewise, left, right};
    }

    double operator()(double y) const
    {
        const double t = y - std::floor(y);
        switch (family) {
        case Family::constant: return first;
        case Family::sin1d: return first + std::sin(2.0 * std::numbers::pi * t);
        case Family::piecewise: return t < 0.5 ? first : second;
        }
        return first;
    }

    double lower_bound() const
    {
        switch (family) {
        case Family::constant: return first;
        case Family::sin1d: return first - 1.0;
        case Family::piecewise: return std::min(first, second);
        }
        return first;
    }

    double upper_bound() const
    {
        switch (family) {
        case Family::constant: return first;
        case Family::sin1d: return first + 1.0;
        case Family::piecewise: return std::max(first, second);
        }
        return first;
    }

    /// Panel ends on [0, 1]: jumps and extrema of the profile, including the ends.
    std::vector<double> breakpoints() const
    {
        if (family == Family::piecewise) return {0.0, 0.5, 1.0};
        if (family == Family::sin1d) return {0.0, 0.25, 0.5, 0.75, 1.0}; // extrema at 1/4 and 3/4
        return {0.0, 1.0};
    }

    friend bool operator==(const Profile1d&, const Profile1d&) = default;
};

/**
 * Coefficient profile A(y) on the unit cell.
 *
 * Scalar families act as a(y) * I in any dimension (oscillation along the
 * first axis). The laminate family is diag(a1(y1), a2(y1)) in 2D.
 */
struct Profile {
    enum class Family { scalar, laminate2d };

    Family family = Family::scalar;
    Profile1d axis_x = Profile1d::constant(1.0);
    Profile1d axis_y = Profile1d::constant(1.0);

    static Profile scalar(Profile1d a) { return {Family::scalar, a, a}; }
    static Profile laminate(Profile1d a1, Profile1d a2) { return {Family::laminate2d, a1, a2}; }

    bool is_constant() const
    {
        return axis_x.family == Profile1d::Family::constant &&
               axis_y.family == Profile1d::Family::constant;
    }

    /// A(y) as a 2x2 matrix; 1D callers read entry (0, 0).
    Eigen::Matrix2d evaluate(double y1) const
    {
        Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
        a(0, 0) = axis_x(y1);
        a(1, 1) = family == Family::laminate2d ? axis_y(y1) : a(0, 0);
        return a;
    }

    friend bool operator==(const Profile&, const Profile&) = default;
};

/// Integral of g over one period, split at the profile's breakpoints.
template <class G>
double cell_integral(const Profile1d& a, G&& g)
{
    const auto br = a.breakpoints();
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < br.size(); ++i) {
        const double lo = br[i];
        const double hi = br[i + 1];
        sum += quad::adaptive([&](double y) { return g(y); }, lo, hi, 1e-13);
    }
    return sum;
}

inline double harmonic_mean(const Profile1d& a)
{
    if (a.family == Profile1d::Family::constant) return a.first;
    return 1.0 / cell_integral(a, [&](double y) { return 1.0 / a(y); });
}

inline double arithmetic_mean(const Profile1d& a)
{
    if (a.family == Profile1d::Family::constant) return a.first;
    return cell_integral(a, [&](double y) { return a(y); });
}

/// H-limit of a 1D periodic profile: the harmonic mean.
inline double h_limit_1d(const Profile& p)
{
    if (p.family != Profile::Family::scalar)
        throw std::invalid_argument("h_limit_1d needs a scalar profile");
    return harmonic_mean(p.axis_x);
}

/// H-limit of a laminate diag(a1(x1/eps), a2(x1/eps)): diag(harmonic a1, arithmetic a2).
inline Eigen::Matrix2d h_limit_laminate(const Profile& p)
{
    if (p.family != Profile::Family::laminate2d && !p.is_constant())
        throw std::invalid_argument("h_limit_laminate needs a diagonal laminate profile");
    Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
    a(0, 0) = harmonic_mean(p.axis_x);
    a(1, 1) = arithmetic_mean(p.axis_y);
    return a;
}

/// Effective matrix for the profile in the given dimension.
inline Eigen::Matrix2d h_limit(const Profile& p, int dim)
{
    if (dim == 1) {
        Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
        a(0, 0) = h_limit_1d(p);
        a(1, 1) = a(0, 0);
        return a;
    }
    if (p.family == Profile::Family::scalar && !p.is_constant())
        throw std::invalid_argument("2D scalar profiles must be constant; use the laminate family");
    return h_limit_laminate(p);
}

} // namespace frachom
