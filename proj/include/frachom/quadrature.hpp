#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <stdexcept>
#include <string>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace frachom::quad {

/// Full Gauss–Legendre rule on [0, 1] unpacked from Boost's half-rule tables.
template <std::size_t Points>
struct GaussRule {
    std::array<double, Points> nodes{};
    std::array<double, Points> weights{};
};

template <std::size_t Points>
const GaussRule<Points>& gauss_unit()
{
    static const GaussRule<Points> rule = [] {
        using Table = boost::math::quadrature::gauss<double, Points>;
        const auto& x = Table::abscissa();
        const auto& w = Table::weights();
        GaussRule<Points> r;
        std::size_t pos = 0;
        // Boost stores non-negative abscissae only; the zero node (odd rules) comes first.
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (x[i] == 0.0) {
                r.nodes[pos] = 0.5;
                r.weights[pos] = 0.5 * w[i];
                ++pos;
                continue;
            }
            r.nodes[pos] = 0.5 * (1.0 - x[i]);
            r.weights[pos] = 0.5 * w[i];
            ++pos;
            r.nodes[pos] = 0.5 * (1.0 + x[i]);
            r.weights[pos] = 0.5 * w[i];
            ++pos;
        }
        if (pos != Points) throw std::logic_error("malformed Gauss table");
        return r;
    }();
    return rule;
}

/// Fixed-order Gauss–Legendre integral of f over [a, b].
template <std::size_t Points, class F>
double gauss(F&& f, double a, double b)
{
    const auto& r = gauss_unit<Points>();
    double sum = 0.0;
    for (std::size_t i = 0; i < Points; ++i) sum += r.weights[i] * f(a + (b - a) * r.nodes[i]);
    return (b - a) * sum;
}

/// Adaptive Gauss–Kronrod integral; throws if the error estimate exceeds rel_tol * |I|.
template <class F>
double adaptive(F&& f, double a, double b, double rel_tol = 1e-12, unsigned max_depth = 20)
{
    double err = 0.0;
    const double value = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
        f, a, b, max_depth, rel_tol, &err);
    if (!std::isfinite(value) || err > rel_tol * std::abs(value) + 1e-300) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.3e of %.6e", err, value);
        throw std::runtime_error(std::string("adaptive quadrature did not converge (error estimate ") + buf + ")");
    }
    return value;
}

/**
 * Integral over t in (0, inf) of g(t) dt for bell-shaped integrands in log t.
 *
 * The integrand must vanish faster than any power as t -> 0 and decay like
 * t^(-1-decay) as t -> inf. The window in tau = ln t is centred on t_peak and
 * extends far enough right that the neglected tail is below 1e-19 relative.
 */
template <class G>
double log_time(G&& g, double t_peak, double decay, double rel_tol = 1e-12)
{
    const double centre = std::log(t_peak);
    const double lo = centre - 12.0;
    const double hi = centre + 45.0 / decay;
    auto integrand = [&](double tau) {
        const double t = std::exp(tau);
        return g(t) * t;
    };
    return adaptive(integrand, lo, hi, rel_tol);
}

} // namespace frachom::quad
