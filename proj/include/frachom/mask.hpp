#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "frachom/grid.hpp"

namespace frachom {

/// Axis-aligned open box O = (lo, hi); only the first `dim` entries are used.
struct Region {
    std::array<double, 2> lo{-1.0, -1.0};
    std::array<double, 2> hi{1.0, 1.0};

    double measure(int dim) const
    {
        double m = 1.0;
        for (int a = 0; a < dim; ++a) m *= hi[a] - lo[a];
        return m;
    }

    friend bool operator==(const Region&, const Region&) = default;
};

/// Hole radius as a function of eps: power c*eps^alpha or exponential exp(-c/eps^beta).
struct RadiusRule {
    enum class Kind { power, exponential };

    Kind kind = Kind::power;
    double scale = 1.0;
    double exponent = 3.0;

    static RadiusRule power(double c, double alpha) { return {Kind::power, c, alpha}; }
    static RadiusRule exponential(double c, double beta) { return {Kind::exponential, c, beta}; }

    /// ln a_eps, finite even when a_eps underflows.
    double log_radius(double eps) const
    {
        if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
        if (!(scale > 0.0)) throw std::invalid_argument("radius rule scale must be positive");
        return kind == Kind::power ? std::log(scale) + exponent * std::log(eps)
                                   : -scale / std::pow(eps, exponent);
    }

    double radius(double eps) const { return std::exp(log_radius(eps)); }

    friend bool operator==(const RadiusRule&, const RadiusRule&) = default;
};

inline std::string to_string(RadiusRule::Kind k) { return k == RadiusRule::Kind::power ? "power" : "exponential"; }

/// Periodic holes of radius a_eps centred in the cells of a lattice of pitch 2 eps.
struct HoleFamily {
    int dim = 1;
    double eps = 0.25;
    RadiusRule rule;

    double radius() const { return rule.radius(eps); }

    /// Cell centres eps*(2k+1) on each axis that lie strictly inside the region.
    std::vector<std::array<double, 2>> centers(const Region& region) const
    {
        std::array<std::vector<double>, 2> axis;
        for (int a = 0; a < dim; ++a) {
            const auto k0 = static_cast<long>(std::floor((region.lo[a] / eps - 1.0) / 2.0)) - 1;
            const auto k1 = static_cast<long>(std::ceil((region.hi[a] / eps - 1.0) / 2.0)) + 1;
            for (long k = k0; k <= k1; ++k) {
                const double c = eps * static_cast<double>(2 * k + 1);
                if (c > region.lo[a] && c < region.hi[a]) axis[a].push_back(c);
            }
        }
        std::vector<std::array<double, 2>> out;
        if (dim == 1) {
            for (double c : axis[0]) out.push_back({c, 0.0});
        } else {
            for (double cy : axis[1])
                for (double cx : axis[0]) out.push_back({cx, cy});
        }
        return out;
    }

    friend bool operator==(const HoleFamily&, const HoleFamily&) = default;
};

enum class NodeLabel : std::uint8_t { interior, exterior, hole };

/// Per-node labels of O, its complement and the holes T_eps inside O.
struct DomainMask {
    CartesianGrid grid;
    Region region;
    std::optional<HoleFamily> holes;
    std::vector<NodeLabel> labels;

    std::size_t count(NodeLabel l) const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), l)); }
    bool pinned(std::size_t k) const { return labels[k] != NodeLabel::interior; }

    std::vector<std::size_t> indices(bool want_pinned) const
    {
        std::vector<std::size_t> out;
        for (std::size_t k = 0; k < labels.size(); ++k)
            if (pinned(k) == want_pinned) out.push_back(k);
        return out;
    }

    std::vector<std::size_t> interior_indices() const { return indices(false); }
    std::vector<std::size_t> pinned_indices() const { return indices(true); }
};

/**
 * Labels every grid node as Interior, Exterior or Hole.
 *
 * A node is Interior when it lies strictly inside the open region. Hole nodes
 * are interior nodes within distance a_eps of a hole centre; when a_eps < h/2
 * the hole occupies exactly the node nearest to its centre.
 */
inline DomainMask mask_domain(const CartesianGrid& grid, const Region& region,
                              const std::optional<HoleFamily>& holes = std::nullopt)
{
    const double h = grid.spacing();
    const double tol = 1e-12 * grid.half_width;
    for (int a = 0; a < grid.dim; ++a) {
        if (!(region.lo[a] < region.hi[a])) throw std::invalid_argument("region bounds are inverted");
        // At least one exterior node must separate O from the truncation boundary.
        if (region.lo[a] < -grid.half_width + h - tol || region.hi[a] > grid.half_width - h + tol)
            throw std::invalid_argument("interior region touches the truncation boundary");
    }
    if (holes) {
        if (holes->dim != grid.dim) throw std::invalid_argument("hole family dimension differs from the grid");
        if (!(holes->rule.log_radius(holes->eps) < std::log(holes->eps)))
            throw std::invalid_argument("hole radius must be smaller than eps");
    }

    DomainMask mask{grid, region, holes, std::vector<NodeLabel>(grid.size(), NodeLabel::exterior)};
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const auto p = grid.point(k);
        bool inside = true;
        for (int a = 0; a < grid.dim; ++a) inside = inside && p[a] > region.lo[a] + tol && p[a] < region.hi[a] - tol;
        if (inside) mask.labels[k] = NodeLabel::interior;
    }
    if (!holes) return mask;

    const double radius = holes->radius();
    auto nearest_index = [&](double c) {
        return static_cast<int>(std::lround((c + grid.half_width) / h));
    };
    auto mark = [&](std::size_t k) {
        if (mask.labels[k] == NodeLabel::interior) mask.labels[k] = NodeLabel::hole;
    };
    for (const auto& c : holes->centers(region)) {
        const int ci = nearest_index(c[0]);
        const int cj = grid.dim == 2 ? nearest_index(c[1]) : 0;
        if (radius < 0.5 * h) {
            mark(grid.flat(ci, cj));
            continue;
        }
        const int reach = static_cast<int>(std::ceil(radius / h)) + 1;
        const int jlo = grid.dim == 2 ? cj - reach : 0;
        const int jhi = grid.dim == 2 ? cj + reach : 0;
        for (int j = jlo; j <= jhi; ++j) {
            for (int i = ci - reach; i <= ci + reach; ++i) {
                if (i < 0 || i >= grid.nodes_per_axis || j < 0 || j >= grid.nodes_per_axis) continue;
                const double dx = grid.coordinate(i) - c[0];
                const double dy = grid.dim == 2 ? grid.coordinate(j) - c[1] : 0.0;
                if (std::hypot(dx, dy) <= radius) mark(grid.flat(i, j));
            }
        }
        mark(grid.flat(ci, cj));
    }
    return mask;
}

/// |O \ O_eps| estimated as (#hole nodes) * h^dim.
inline double hole_measure(const DomainMask& mask)
{
    return static_cast<double>(mask.count(NodeLabel::hole)) * mask.grid.cell_volume();
}

} // namespace frachom
