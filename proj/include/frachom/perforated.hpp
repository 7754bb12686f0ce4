#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <json.hpp>

#include "frachom/dirichlet.hpp"
#include "frachom/homogenize.hpp"
#include "frachom/io.hpp"
#include "frachom/local_op.hpp"
#include "frachom/mask.hpp"
#include "frachom/quadrature.hpp"

namespace frachom {

/// Radial corrector of spherical holes of radius a_eps in cells of size 2 eps.
struct CorrectorFamily {
    int n = 2;
    RadiusRule rule = RadiusRule::exponential(1.0, 3.0);
};

namespace detail {

inline void check_corrector(const CorrectorFamily& fam, double eps)
{
    if (fam.n < 2) throw std::invalid_argument("correctors need dimension n >= 2");
    if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
    if (!(fam.rule.log_radius(eps) < std::log(eps))) throw std::invalid_argument("hole radius must be smaller than eps");
}

inline double sphere_area(int n) { return 2.0 * std::pow(std::numbers::pi, 0.5 * n) / std::tgamma(0.5 * n); }

/// 1 - w at log radius t, for ln a <= t <= ln eps.
inline double corrector_deficit(int n, double la, double le, double t)
{
    if (n == 2) return (le - t) / (le - la);
    const double p = n - 2.0;
    const double x = std::exp(p * (la - t));
    const double y = std::exp(p * (la - le));
    return (x - y) / (1.0 - y);
}

/// r |w'(r)| at log radius t.
inline double corrector_slope(int n, double la, double le, double t)
{
    if (n == 2) return 1.0 / (le - la);
    const double p = n - 2.0;
    return p * std::exp(p * (la - t)) / (-std::expm1(p * (la - le)));
}

/// int_{ln a}^{ln eps} g(t) dt split so that both end layers are resolved; the
/// summed error estimate must stay below 1e-10 of the total plus abs_tol.
template <class G>
double log_radius_integral(G&& g, double la, double le, double abs_tol = 0.0)
{
    constexpr double layer = 64.0;
    double total = 0.0;
    double err_sum = 0.0;
    auto piece = [&](double a, double b) {
        double err = 0.0;
        total += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(g, a, b, 15, 1e-12, &err);
        err_sum += err;
    };
    if (le - la <= 2.0 * layer) {
        piece(la, le);
    }
    else {
        piece(la, la + layer);
        total += quad::gauss<16>(g, la + layer, le - layer);
        piece(le - layer, le);
    }
    if (!std::isfinite(total) || err_sum > 1e-10 * std::abs(total) + abs_tol + 1e-300)
        throw std::runtime_error("annulus quadrature did not converge");
    return total;
}

/// Hole centres eps (2k + 1) strictly inside (lo, hi).
inline long centres_per_axis(double eps, double lo, double hi)
{
    HoleFamily fam{1, eps, RadiusRule::power(1.0, 2.0)};
    return static_cast<long>(fam.centers(Region{{lo, lo}, {hi, hi}}).size());
}

} // namespace detail

/**
 * w_eps(r): 0 for r <= a_eps, 1 for r >= eps, and in between
 *   n = 2:  (ln a - ln r) / (ln a - ln eps)
 *   n >= 3: (a^(2-n) - r^(2-n)) / (a^(2-n) - eps^(2-n))
 * evaluated in log radius so that underflowing radii stay exact.
 */
inline double corrector_eval(const CorrectorFamily& fam, double eps, double r)
{
    detail::check_corrector(fam, eps);
    if (r < 0.0 || std::isnan(r)) throw std::invalid_argument("radius must be non-negative");
    const double la = fam.rule.log_radius(eps);
    const double le = std::log(eps);
    if (r == 0.0) return 0.0;
    const double lr = std::log(r);
    if (lr <= la) return 0.0;
    if (r >= eps) return 1.0;
    if (fam.n == 2) return (la - lr) / (la - le);
    const double p = fam.n - 2.0;
    return std::expm1(p * (la - lr)) / std::expm1(p * (la - le));
}

/// Nodal corrector: the formula around the nearest centre, extended by 0 on Hole nodes.
inline Eigen::VectorXd sample_corrector(const CorrectorFamily& fam, double eps, const DomainMask& mask)
{
    const auto& g = mask.grid;
    Eigen::VectorXd w = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(g.size()));
    const HoleFamily holes{g.dim, eps, fam.rule};
    const auto centres = holes.centers(mask.region);
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (mask.labels[k] == NodeLabel::hole) {
            w[static_cast<Eigen::Index>(k)] = 0.0;
            continue;
        }
        const auto p = g.point(k);
        double r = std::numeric_limits<double>::infinity();
        for (const auto& c : centres) r = std::min(r, std::hypot(p[0] - c[0], g.dim == 2 ? p[1] - c[1] : 0.0));
        if (std::isfinite(r)) w[static_cast<Eigen::Index>(k)] = corrector_eval(fam, eps, r);
    }
    return w;
}

struct HypothesisRow {
    double eps = 0.0;
    double log_radius = 0.0;
    bool snapped = false;             // a_eps < h/2 on the supplied grid
    double max_on_holes = 0.0;        // max |w_eps| over Hole nodes; NaN when n differs from the grid dimension
    double grad_sq = 0.0;             // ||grad w_eps||^2 over O = (-1, 1)^n
    double deficit_l2 = 0.0;          // ||w_eps - 1|| over O
};

/// Per-hole integrals over B_eps: {int |grad w|^2, int (1 - w)^2}.
inline std::pair<double, double> corrector_cell_integrals(const CorrectorFamily& fam, double eps)
{
    detail::check_corrector(fam, eps);
    const int n = fam.n;
    const double la = fam.rule.log_radius(eps);
    const double le = std::log(eps);
    const double area = detail::sphere_area(n);
    // r^n dt = r^(n-1) dr.
    auto grad = [&](double t) {
        const double slope = detail::corrector_slope(n, la, le, t);
        return slope * slope * std::exp((n - 2.0) * t);
    };
    auto deficit = [&](double t) {
        const double d = detail::corrector_deficit(n, la, le, t);
        return d * d * std::exp(n * t);
    };
    const double ball = std::exp(n * la) / n; // 1 - w = 1 inside the hole
    return {area * detail::log_radius_integral(grad, la, le),
            area * (detail::log_radius_integral(deficit, la, le) + ball)};
}

/**
 * H1-H3 surrogates per eps: w on hole nodes of `grid` (zero by the extension),
 * the gradient energy and the L2 deficit over O = (-1, 1)^n by annulus quadrature.
 */
inline std::vector<HypothesisRow> hypothesis_check(const CorrectorFamily& fam, const CartesianGrid& grid,
                                                   const std::vector<double>& eps_list)
{
    std::vector<HypothesisRow> rows;
    for (double eps : eps_list) {
        HypothesisRow row;
        row.eps = eps;
        row.log_radius = fam.rule.log_radius(eps);
        row.snapped = row.log_radius < std::log(0.5 * grid.spacing());
        const auto [grad, deficit] = corrector_cell_integrals(fam, eps);
        const double cells = std::pow(static_cast<double>(detail::centres_per_axis(eps, -1.0, 1.0)), fam.n);
        row.grad_sq = cells * grad;
        row.deficit_l2 = std::sqrt(cells * deficit);
        if (fam.n == grid.dim) {
            const auto mask = mask_domain(grid, Region{}, HoleFamily{grid.dim, eps, fam.rule});
            const auto w = sample_corrector(fam, eps, mask);
            row.max_on_holes = 0.0;
            for (std::size_t k = 0; k < grid.size(); ++k)
                if (mask.labels[k] == NodeLabel::hole)
                    row.max_on_holes = std::max(row.max_on_holes, std::abs(w[static_cast<Eigen::Index>(k)]));
        }
        else {
            row.max_on_holes = std::nan("");
        }
        rows.push_back(row);
    }
    return rows;
}

struct DeficitNorms {
    double l2 = 0.0; // ||(w_eps - 1) phi||
    double h1 = 0.0; // ||grad((w_eps - 1) phi)||

    /// ||v||_{L2}^(1-s) ||grad v||^s, an upper bound for ||(-Delta)^(s/2) v||.
    double seminorm_bound(double s) const { return std::pow(l2, 1.0 - s) * std::pow(h1, s); }
};

/**
 * Norms of (w_eps - 1) phi for n = 2 and phi the radial bump of radius rho at
 * the origin, by polar quadrature around every hole centre (trapezoid in
 * angle, Gauss-Kronrod in log radius).
 */
inline DeficitNorms corrector_deficit_norms(const CorrectorFamily& fam, double eps, double rho = 0.7)
{
    if (fam.n != 2) throw std::invalid_argument("deficit norms are implemented for n = 2");
    detail::check_corrector(fam, eps);
    const double la = fam.rule.log_radius(eps);
    const double le = std::log(eps);
    const TestFunction phi{TestFunction::Kind::bump, 0.0, rho, 1, Region{}};
    auto grad_phi = [&](double x, double y) -> std::array<double, 2> {
        const double q = (x * x + y * y) / (rho * rho);
        if (q >= 1.0) return {0.0, 0.0};
        const double v = std::exp(1.0 - 1.0 / (1.0 - q));
        const double dv = -v / ((1.0 - q) * (1.0 - q)) * 2.0 / (rho * rho);
        return {dv * x, dv * y};
    };
    constexpr int angles = 32;
    const auto centres = HoleFamily{2, eps, fam.rule}.centers(Region{});
    double l2 = 0.0;
    double h1 = 0.0;
    for (const auto& c : centres) {
        if (std::hypot(c[0], c[1]) >= rho + eps) continue;
        auto ring = [&](double t, bool gradient) {
            const double r = std::exp(t);
            const double d = detail::corrector_deficit(2, la, le, t);
            const double slope = detail::corrector_slope(2, la, le, t); // r |w'|
            double sum = 0.0;
            for (int k = 0; k < angles; ++k) {
                const double th = 2.0 * std::numbers::pi * k / angles;
                const double x = c[0] + r * std::cos(th);
                const double y = c[1] + r * std::sin(th);
                const double ph = phi({x, y}, 2);
                if (!gradient) {
                    sum += d * d * ph * ph * r * r;
                    continue;
                }
                // grad((w - 1) phi) = phi w' e_r - (1 - w) grad phi, scaled by r.
                const auto gp = grad_phi(x, y);
                const double gx = ph * slope * std::cos(th) - d * r * gp[0];
                const double gy = ph * slope * std::sin(th) - d * r * gp[1];
                sum += gx * gx + gy * gy;
            }
            return 2.0 * std::numbers::pi * sum / angles;
        };
        // Cells at the edge of supp phi contribute almost nothing; judge them on an absolute scale.
        const double floor = 1e-12 * eps * eps;
        l2 += detail::log_radius_integral([&](double t) { return ring(t, false); }, la, le, floor);
        h1 += detail::log_radius_integral([&](double t) { return ring(t, true); }, la, le, floor);
        // Inside the hole (w - 1) phi = -phi.
        const double disc = std::numbers::pi * std::exp(2.0 * la);
        const double pc = phi({c[0], c[1]}, 2);
        const auto gc = grad_phi(c[0], c[1]);
        l2 += disc * pc * pc;
        h1 += disc * (gc[0] * gc[0] + gc[1] * gc[1]);
    }
    return {std::sqrt(l2), std::sqrt(h1)};
}

/// |B_r| in dimension n.
inline double ball_volume(int n, double r) { return detail::sphere_area(n) * std::pow(r, n) / n; }

/// solve_nonlocal on a mask with holes; Hole nodes carry the exterior datum g.
inline SolveReport solve_perforated(const NonlocalForm& form, const DomainMask& mask, const Eigen::VectorXd& f,
                                   const Eigen::VectorXd& g)
{
    if (!mask.holes) throw std::invalid_argument("perforated solve needs a hole family");
    return solve_nonlocal(form, mask, f, g);
}

inline SolveReport solve_perforated(double s, const DomainMask& mask, const Eigen::VectorXd& f, const Eigen::VectorXd& g,
                                   Route route)
{
    const auto form = route == Route::spectral ? laplacian_form(mask.grid, s)
                                               : kernel_form(assemble_fraclap_form(mask.grid, s));
    return solve_perforated(form, mask, f, g);
}

struct PerforatedConfig {
    double s = 0.4;
    Route route = Route::spectral;
    int dim = 1;
    double half_width = 4.0;
    int nodes = 1024;
    BoundaryMode mode = BoundaryMode::zero_exterior;
    Region region{};
    std::vector<double> eps{0.125, 0.0625, 0.03125};
    RadiusRule rule = RadiusRule::power(1.0, 3.0);
    bool holes = true;
    DataSpec f{DataSpec::Kind::constant, 1.0};
    DataSpec g{DataSpec::Kind::constant, 0.0};
    double tol = 0.05;
    double trend_floor = 1e-10;

    CartesianGrid grid() const { return build_grid(dim, half_width, nodes, mode); }
};

struct PerforatedRow {
    double eps = 0.0;
    std::size_t holes = 0;
    std::size_t hole_nodes = 0;
    double hole_measure = 0.0;  // nodal estimate, at least h^dim per hole
    double exact_measure = 0.0; // holes * |B_a|
    double gap = 0.0; // ||u_eps - u_clean|| / ||u_clean||
    double max_u = 0.0;
    double residual = 0.0;
};

struct PerforatedVerdict {
    bool nostrange = false;
    double final_gap = 0.0;
    bool trend = false;
};

struct PerforatedReport {
    PerforatedConfig config;
    double order = 0.0; // s, or 1 for the local comparison
    std::vector<PerforatedRow> rows;
    double clean_max = 0.0;
    double clean_l2 = 0.0;
    bool complete = false;
    std::string failure;
    std::optional<PerforatedVerdict> verdict;
};

inline void validate(const PerforatedConfig& cfg)
{
    if (!(cfg.s > 0.0 && cfg.s < 1.0)) throw ConfigError("fractional order must lie in (0, 1)");
    if (cfg.eps.empty()) throw ConfigError("eps list is empty");
    for (std::size_t i = 1; i < cfg.eps.size(); ++i)
        if (!(cfg.eps[i] < cfg.eps[i - 1])) throw ConfigError("eps list must be strictly descending");
    const auto grid = cfg.grid();
    for (double e : cfg.eps)
        if (!(e >= 2.0 * grid.spacing()))
            throw ConfigError("eps = " + io::format_double(e) + " does not separate holes on this grid");
    if (cfg.route == Route::kernel && cfg.dim != 1) throw ConfigError("the kernel route is one-dimensional");
    if (!(cfg.tol > 0.0)) throw ConfigError("tolerance must be positive");
}

namespace detail {

inline PerforatedVerdict nostrange(const std::vector<PerforatedRow>& rows, double tol, double floor)
{
    PerforatedVerdict v;
    v.final_gap = rows.back().gap;
    v.trend = true;
    const std::size_t first = rows.size() >= 3 ? rows.size() - 3 : 0;
    for (std::size_t i = first + 1; i < rows.size(); ++i)
        v.trend = v.trend && rows[i].gap <= std::max(rows[i - 1].gap, floor);
    v.nostrange = v.trend && v.final_gap <= tol;
    return v;
}

template <class Solve>
PerforatedReport perforated_sweep(const PerforatedConfig& cfg, double order, Solve&& solve)
{
    PerforatedReport report;
    report.config = cfg;
    report.order = order;
    const auto grid = cfg.grid();
    const Eigen::VectorXd f = cfg.f.sample(grid);
    const Eigen::VectorXd g = cfg.g.sample(grid);
    try {
        const auto clean_mask = mask_domain(grid, cfg.region);
        const auto [clean, clean_res] = solve(clean_mask, f, g);
        (void)clean_res;
        report.clean_max = clean.cwiseAbs().maxCoeff();
        report.clean_l2 = std::sqrt(grid.cell_volume()) * clean.norm();
        for (double eps : cfg.eps) {
            std::optional<HoleFamily> fam;
            if (cfg.holes) fam = HoleFamily{grid.dim, eps, cfg.rule};
            const auto mask = mask_domain(grid, cfg.region, fam);
            const auto [u, res] = solve(mask, f, g);
            PerforatedRow row;
            row.eps = eps;
            row.holes = fam ? fam->centers(cfg.region).size() : 0;
            row.hole_nodes = mask.count(NodeLabel::hole);
            row.hole_measure = hole_measure(mask);
            if (fam) row.exact_measure = static_cast<double>(row.holes) * ball_volume(grid.dim, fam->radius());
            row.gap = (u - clean).norm() / clean.norm();
            row.max_u = u.cwiseAbs().maxCoeff();
            row.residual = res;
            report.rows.push_back(row);
        }
    }
    catch (const SolverError& e) {
        report.failure = e.what();
        return report;
    }
    report.complete = true;
    report.verdict = nostrange(report.rows, cfg.tol, cfg.trend_floor);
    return report;
}

} // namespace detail

/// Fractional sweep: distance of u_eps to the clean-domain solution per eps, verdict NOSTRANGE.
inline PerforatedReport run_perforated_sweep(const PerforatedConfig& cfg)
{
    validate(cfg);
    const auto grid = cfg.grid();
    const auto form = cfg.route == Route::spectral ? laplacian_form(grid, cfg.s)
                                                   : kernel_form(assemble_fraclap_form(grid, cfg.s));
    return detail::perforated_sweep(cfg, cfg.s, [&](const DomainMask& mask, const Eigen::VectorXd& f, const Eigen::VectorXd& g) {
        const auto rep = solve_nonlocal(form, mask, f, g);
        return std::pair{rep.u, rep.residual};
    });
}

/// The same masks with the local s = 1 operator -u'' = f.
inline PerforatedReport local_comparison_sweep(const PerforatedConfig& cfg)
{
    validate(cfg);
    const auto grid = cfg.grid();
    const auto op = assemble_stiffness(grid, constant_field(grid, 1.0));
    return detail::perforated_sweep(cfg, 1.0, [&](const DomainMask& mask, const Eigen::VectorXd& f, const Eigen::VectorXd& g) {
        const Eigen::VectorXd u = solve_local_dirichlet(op, mask, f, g);
        Eigen::VectorXd r = apply(op, u) - f;
        for (auto k : mask.pinned_indices()) r[static_cast<Eigen::Index>(k)] = 0.0;
        return std::pair{u, r.norm() / std::max(f.norm(), 1e-300)};
    });
}

inline std::string perforated_csv(const PerforatedReport& report)
{
    io::CsvTable table({"eps", "holes", "hole_nodes", "hole_measure", "exact_measure", "gap", "max_u", "residual"});
    for (const auto& r : report.rows)
        table.add_row({io::format_double(r.eps), std::to_string(r.holes), std::to_string(r.hole_nodes),
                       io::format_double(r.hole_measure), io::format_double(r.exact_measure), io::format_double(r.gap), io::format_double(r.max_u),
                       io::format_double(r.residual)});
    return table.str();
}

inline nlohmann::ordered_json to_json(const PerforatedReport& report)
{
    nlohmann::ordered_json j;
    j["s"] = report.order;
    j["route"] = report.order == 1.0 ? "local" : to_string(report.config.route);
    j["eps"] = report.config.eps;
    j["N"] = report.config.nodes;
    j["R"] = report.config.half_width;
    j["tolerance"] = report.config.tol;
    j["clean_max"] = report.clean_max;
    j["complete"] = report.complete;
    if (!report.complete) j["failure"] = report.failure;
    if (report.verdict)
        j["verdict"] = {{"NOSTRANGE", report.verdict->nostrange},
                        {"final_gap", report.verdict->final_gap},
                        {"trend", report.verdict->trend}};
    return j;
}

enum class Criticality { vanishing, non_vanishing };

inline std::string to_string(Criticality c) { return c == Criticality::vanishing ? "vanishing" : "non_vanishing"; }

struct CriticalityResult {
    int n = 2;
    std::string rule;
    std::string limit_expression;
    double limit = 0.0; // +inf when the ratio diverges
    Criticality verdict = Criticality::vanishing;
};

inline std::string describe(const RadiusRule& r)
{
    if (r.kind == RadiusRule::Kind::power) return io::format_double(r.scale) + "*eps^" + io::format_double(r.exponent);
    return "exp(-" + io::format_double(r.scale) + "/eps^" + io::format_double(r.exponent) + ")";
}

/**
 * Whether the strange term vanishes for holes a_eps in dimension n:
 *   n = 2: lim (-ln a_eps)^(-1) / eps^2 = 0
 *   n = 3: lim a_eps / eps^3 = 0
 * Power rules c eps^alpha and exponential rules exp(-c/eps^beta) have closed-form limits.
 */
inline CriticalityResult criticality_classify(int n, const RadiusRule& rule)
{
    if (n != 2 && n != 3) throw std::invalid_argument("criticality is classified for n = 2 and n = 3 only");
    if (!(rule.scale > 0.0) || !(rule.exponent > 0.0))
        throw std::invalid_argument("unsupported radius rule: scale and exponent must be positive");
    CriticalityResult res{n, describe(rule), "", 0.0, Criticality::vanishing};
    const double inf = std::numeric_limits<double>::infinity();
    const double c = rule.scale;
    const double e = rule.exponent;
    // Ratio ~ k * eps^q as eps -> 0.
    auto power_limit = [&](double k, double q, const std::string& expr) {
        res.limit_expression = expr;
        res.limit = q > 0.0 ? 0.0 : (q == 0.0 ? k : inf);
    };
    if (n == 2) {
        if (rule.kind == RadiusRule::Kind::exponential) {
            power_limit(1.0 / c, e - 2.0,
                        "(-ln a_eps)^-1 / eps^2 = eps^" + io::format_double(e - 2.0) + " / " + io::format_double(c));
        }
        else {
            res.limit_expression = "(-ln a_eps)^-1 / eps^2 = 1 / (eps^2 (" + io::format_double(e) + " ln(1/eps) - ln " +
                                   io::format_double(c) + "))";
            res.limit = inf;
        }
    }
    else {
        if (rule.kind == RadiusRule::Kind::power) {
            power_limit(c, e - 3.0, "a_eps / eps^3 = " + io::format_double(c) + " eps^" + io::format_double(e - 3.0));
        }
        else {
            res.limit_expression = "a_eps / eps^3 = exp(-" + io::format_double(c) + "/eps^" + io::format_double(e) + ") / eps^3";
            res.limit = 0.0;
        }
    }
    res.verdict = res.limit == 0.0 ? Criticality::vanishing : Criticality::non_vanishing;
    return res;
}

inline nlohmann::ordered_json to_json(const CriticalityResult& r)
{
    nlohmann::ordered_json j;
    j["n"] = r.n;
    j["rule"] = r.rule;
    j["limit_expression"] = r.limit_expression;
    j["limit"] = std::isinf(r.limit) ? nlohmann::ordered_json("inf") : nlohmann::ordered_json(r.limit);
    j["verdict"] = to_string(r.verdict);
    if (r.n == 3) j["note"] = "n >= 3 criterion a_eps/eps^3 applied as stated for n = 3";
    return j;
}

} // namespace frachom
