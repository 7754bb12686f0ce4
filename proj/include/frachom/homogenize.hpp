#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "frachom/coefficient.hpp"
#include "frachom/dirichlet.hpp"
#include "frachom/io.hpp"
#include "frachom/mask.hpp"
#include "frachom/profile.hpp"

namespace frachom {

/// Smooth test function on the grid: a compact bump or a sine mode vanishing outside O.
struct TestFunction {
    enum class Kind { bump, sine };
    Kind kind = Kind::bump;
    double center = 0.0; // bump centre on the first axis
    double radius = 0.35;
    int mode = 1;        // sine: sin(m pi (x1 - lo) / (hi - lo)) on O, 0 outside
    Region region{};

    std::string name() const
    {
        return kind == Kind::bump ? "bump(" + io::format_double(center) + ")" : "sine(" + std::to_string(mode) + ")";
    }

    double operator()(const Point& p, int dim) const
    {
        if (kind == Kind::bump) {
            const double dx = p[0] - center;
            const double r2 = (dx * dx + (dim == 2 ? p[1] * p[1] : 0.0)) / (radius * radius);
            return r2 < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - r2)) : 0.0;
        }
        double v = 1.0;
        for (int a = 0; a < dim; ++a) {
            const double lo = region.lo[static_cast<std::size_t>(a)];
            const double hi = region.hi[static_cast<std::size_t>(a)];
            if (!(p[static_cast<std::size_t>(a)] > lo && p[static_cast<std::size_t>(a)] < hi)) return 0.0;
            const int m = a == 0 ? mode : 1;
            v *= std::sin(m * std::numbers::pi * (p[static_cast<std::size_t>(a)] - lo) / (hi - lo));
        }
        return v;
    }

    Eigen::VectorXd sample(const CartesianGrid& g) const
    {
        Eigen::VectorXd v(static_cast<Eigen::Index>(g.size()));
        for (std::size_t k = 0; k < g.size(); ++k) v[static_cast<Eigen::Index>(k)] = (*this)(g.point(k), g.dim);
        return v;
    }
};

/// Five bumps of radius 0.35 at -0.6, -0.3, 0, 0.3, 0.6 and sine modes 1, 2, 3 on O.
inline std::vector<TestFunction> default_test_set(const Region& region = {})
{
    std::vector<TestFunction> set;
    for (double c : {-0.6, -0.3, 0.0, 0.3, 0.6}) set.push_back({TestFunction::Kind::bump, c, 0.35, 1, region});
    for (int m : {1, 2, 3}) set.push_back({TestFunction::Kind::sine, 0.0, 0.0, m, region});
    return set;
}

/// Scalar data field: constant, or a compact bump c * exp(1 - 1/(1 - |x - x0|^2 / w^2)).
struct DataSpec {
    enum class Kind { constant, bump };
    Kind kind = Kind::constant;
    double value = 0.0;
    double center = 0.0;
    double width = 1.0;

    double operator()(const Point& p, int dim) const
    {
        if (kind == Kind::constant) return value;
        const double dx = p[0] - center;
        const double r2 = (dx * dx + (dim == 2 ? p[1] * p[1] : 0.0)) / (width * width);
        return r2 < 1.0 ? value * std::exp(1.0 - 1.0 / (1.0 - r2)) : 0.0;
    }

    Eigen::VectorXd sample(const CartesianGrid& g) const
    {
        Eigen::VectorXd v(static_cast<Eigen::Index>(g.size()));
        for (std::size_t k = 0; k < g.size(); ++k) v[static_cast<Eigen::Index>(k)] = (*this)(g.point(k), g.dim);
        return v;
    }
};

/// Final-gap tolerances; weak and flux gaps are relative to ||phi||, energy to E_*.
struct Tolerances {
    double weak = 2e-2;
    double flux = 2e-2;
    double energy = 5e-2;
    double trend_floor = 1e-3; // gaps below trend_floor * ||phi|| count as converged in the trend check
};

struct SweepConfig {
    double s = 0.5;
    Route route = Route::spectral;
    Profile profile = Profile::scalar(Profile1d::sin1d(2.0));
    std::vector<double> eps{0.25, 0.125, 0.0625, 0.03125};
    int dim = 1;
    double half_width = 4.0;
    int nodes = 1024;
    BoundaryMode mode = BoundaryMode::zero_exterior;
    Region region{};
    DataSpec f{DataSpec::Kind::constant, 1.0};
    DataSpec g{DataSpec::Kind::constant, 0.0};
    std::vector<TestFunction> tests = default_test_set();
    Tolerances tol{};

    CartesianGrid grid() const { return build_grid(dim, half_width, nodes, mode); }
};

/// Metrics of one solve; `eps` is 0 for the homogenized row.
struct SweepRow {
    double eps = 0.0;
    std::vector<double> weak;
    std::vector<double> flux;
    double energy = 0.0;
    double stability = 0.0;
    double flux_ratio = 0.0;
    double residual = 0.0;
    double pairing_defect = 0.0; // max_m |<L^s u, psi_m> - <f, psi_m>| relative to the data scale
};

struct Verdict {
    bool weak = false;
    bool flux = false;
    bool energy = false;
    std::vector<double> weak_gap;   // final gaps relative to ||phi_m||
    std::vector<double> flux_gap;
    double energy_gap = 0.0;

    bool all() const { return weak && flux && energy; }
};

struct ConvergenceReport {
    SweepConfig config;
    std::vector<SweepRow> rows;
    SweepRow homogenized;
    Eigen::Matrix2d a_star = Eigen::Matrix2d::Identity();
    bool complete = false;
    std::string failure;
    std::optional<Verdict> verdict;
};

inline void validate(const SweepConfig& cfg)
{
    if (!(cfg.s > 0.0 && cfg.s < 1.0)) throw ConfigError("fractional order must lie in (0, 1)");
    const auto grid = cfg.grid();
    if (cfg.eps.empty()) throw ConfigError("eps list is empty");
    for (std::size_t i = 0; i < cfg.eps.size(); ++i) {
        if (!(cfg.eps[i] >= 4.0 * grid.spacing()))
            throw ConfigError("eps = " + io::format_double(cfg.eps[i]) + " is below 4h = " +
                              io::format_double(4.0 * grid.spacing()));
        if (i > 0 && !(cfg.eps[i] < cfg.eps[i - 1])) throw ConfigError("eps list must be strictly descending");
    }
    if (cfg.route == Route::kernel && !cfg.profile.is_constant())
        throw ConfigError("the kernel route supports constant coefficients only");
    if (cfg.route == Route::kernel && cfg.dim != 1) throw ConfigError("the kernel route is one-dimensional");
    if (cfg.tests.empty()) throw ConfigError("test-function set is empty");
}

/// h^dim sum_i u_i phi_m(x_i) for every test function.
inline std::vector<double> weak_pairing(const Eigen::VectorXd& u, const CartesianGrid& grid,
                                        const std::vector<TestFunction>& tests)
{
    if (u.size() != static_cast<Eigen::Index>(grid.size())) throw std::invalid_argument("vector length does not match the grid");
    std::vector<double> out;
    out.reserve(tests.size());
    for (const auto& t : tests) out.push_back(grid.cell_volume() * u.dot(t.sample(grid)));
    return out;
}

namespace detail {

inline double discrete_l2(const Eigen::VectorXd& v, const CartesianGrid& g) { return std::sqrt(g.cell_volume() * v.squaredNorm()); }

/// Form for A = field on the configured route; `identity` supplies the A = I seminorm.
inline NonlocalForm sweep_form(const SweepConfig& cfg, const CoefficientField& field,
                               const std::shared_ptr<const SpectralDecomposition>& identity)
{
    if (cfg.route == Route::kernel) {
        const double c = field.samples.front()(0, 0);
        auto km = assemble_fraclap_form(field.grid, cfg.s);
        NonlocalForm form = kernel_form(km);
        if (c != 1.0) {
            form.matrix = std::make_shared<const Eigen::MatrixXd>(std::pow(c, cfg.s) * km.form);
            form.norm = detail::row_sum_norm(*form.matrix);
        }
        return form;
    }
    auto dec = std::make_shared<const SpectralDecomposition>(decompose(assemble_stiffness(field.grid, field)));
    return spectral_form(dec, cfg.s, identity);
}

inline SweepRow measure(const SweepConfig& cfg, const NonlocalForm& form, const DomainMask& mask, double eps)
{
    const auto grid = form.grid;
    const Eigen::VectorXd f = cfg.f.sample(grid);
    const Eigen::VectorXd g = cfg.g.sample(grid);
    const auto rep = solve_nonlocal(form, mask, f, g);

    SweepRow row;
    row.eps = eps;
    row.weak = weak_pairing(rep.u, grid, cfg.tests);
    row.energy = rep.flux * rep.flux;
    row.stability = stability_check(rep, form, g);
    row.flux_ratio = flux_check(rep, form, g);
    row.residual = rep.residual;

    const Eigen::VectorXd bu = *form.matrix * rep.u;
    const double vol = grid.cell_volume();
    Eigen::VectorXd gp = g;
    for (auto k : mask.interior_indices()) gp[static_cast<Eigen::Index>(k)] = 0.0;
    const double scale = vol * f.norm() + form.norm * gp.norm();
    std::optional<Eigen::VectorXd> half;
    if (form.decomposition) half = half_apply(*form.decomposition, cfg.s, rep.u);
    for (const auto& t : cfg.tests) {
        const Eigen::VectorXd psi = t.sample(grid);
        row.flux.push_back(half ? vol * half->dot(psi) : std::nan(""));
        const double defect = std::abs(psi.dot(bu) - vol * psi.dot(f));
        const double denom = scale * psi.norm();
        row.pairing_defect = std::max(row.pairing_defect, denom > 0.0 ? defect / denom : defect);
    }
    return row;
}

/// Each of the last three gaps is at most the previous one or the floor.
inline bool settles(const std::vector<double>& gaps, double floor)
{
    const std::size_t n = gaps.size();
    for (std::size_t i = n - 2; i < n; ++i)
        if (!(gaps[i] <= std::max(gaps[i - 1], floor))) return false;
    return true;
}

} // namespace detail

/// Solve with the effective coefficient A_* (or `a_override`) on the sweep grid.
inline SweepRow homogenized_row(const SweepConfig& cfg, std::optional<Eigen::Matrix2d> a_override = std::nullopt)
{
    validate(cfg);
    const auto grid = cfg.grid();
    const Eigen::Matrix2d a = a_override ? *a_override : h_limit(cfg.profile, cfg.dim);
    const auto field = constant_field(grid, a);
    auto identity = std::make_shared<const SpectralDecomposition>(decompose(assemble_stiffness(grid, constant_field(grid, 1.0))));
    const auto form = detail::sweep_form(cfg, field, identity);
    return detail::measure(cfg, form, mask_domain(grid, cfg.region), 0.0);
}

/// The SolveReport of the homogenized problem.
inline SolveReport homogenized_solve(const SweepConfig& cfg, std::optional<Eigen::Matrix2d> a_override = std::nullopt)
{
    validate(cfg);
    const auto grid = cfg.grid();
    const Eigen::Matrix2d a = a_override ? *a_override : h_limit(cfg.profile, cfg.dim);
    auto identity = std::make_shared<const SpectralDecomposition>(decompose(assemble_stiffness(grid, constant_field(grid, 1.0))));
    const auto form = detail::sweep_form(cfg, constant_field(grid, a), identity);
    return solve_nonlocal(form, mask_domain(grid, cfg.region), cfg.f.sample(grid), cfg.g.sample(grid));
}

inline Verdict verify_convergence(const ConvergenceReport& report, const Tolerances& tol)
{
    if (!report.complete) throw std::invalid_argument("report is incomplete: " + report.failure);
    if (report.rows.size() < 3) throw std::invalid_argument("trend checks need at least 3 eps values");
    const auto grid = report.config.grid();
    const auto& tests = report.config.tests;
    const auto& hom = report.homogenized;
    Verdict v;
    v.weak = true;
    v.flux = true;
    for (std::size_t m = 0; m < tests.size(); ++m) {
        const double norm = detail::discrete_l2(tests[m].sample(grid), grid);
        std::vector<double> wg;
        std::vector<double> fg;
        for (const auto& row : report.rows) {
            wg.push_back(std::abs(row.weak[m] - hom.weak[m]));
            fg.push_back(std::abs(row.flux[m] - hom.flux[m]));
        }
        v.weak_gap.push_back(wg.back() / norm);
        v.flux_gap.push_back(fg.back() / norm);
        v.weak = v.weak && wg.back() <= tol.weak * norm && detail::settles(wg, tol.trend_floor * norm);
        v.flux = v.flux && fg.back() <= tol.flux * norm && detail::settles(fg, tol.trend_floor * norm);
    }
    v.energy_gap = std::abs(report.rows.back().energy - hom.energy) / hom.energy;
    v.energy = v.energy_gap <= tol.energy;
    return v;
}

/**
 * One solve per eps with A_eps = A(x / eps), then the homogenized solve and
 * the verdicts. A solver failure stops the sweep and leaves the report
 * incomplete without verdicts.
 */
inline ConvergenceReport run_sweep(const SweepConfig& cfg)
{
    validate(cfg);
    ConvergenceReport report;
    report.config = cfg;
    report.a_star = h_limit(cfg.profile, cfg.dim);
    const auto grid = cfg.grid();
    const auto mask = mask_domain(grid, cfg.region);
    auto identity = std::make_shared<const SpectralDecomposition>(decompose(assemble_stiffness(grid, constant_field(grid, 1.0))));
    try {
        for (double eps : cfg.eps) {
            const auto field = periodic_coefficient(cfg.profile, eps, grid);
            report.rows.push_back(detail::measure(cfg, detail::sweep_form(cfg, field, identity), mask, eps));
        }
        const auto form = detail::sweep_form(cfg, constant_field(grid, report.a_star), identity);
        report.homogenized = detail::measure(cfg, form, mask, 0.0);
    }
    catch (const SolverError& e) {
        report.failure = e.what();
        return report;
    }
    report.complete = true;
    if (report.rows.size() >= 3) report.verdict = verify_convergence(report, cfg.tol);
    return report;
}

inline std::string sweep_csv(const ConvergenceReport& report)
{
    std::vector<std::string> cols{"kind", "eps", "energy", "stability", "flux_ratio", "residual", "pairing_defect"};
    const std::size_t nt = report.config.tests.size();
    for (std::size_t m = 0; m < nt; ++m) cols.push_back("weak_" + std::to_string(m));
    for (std::size_t m = 0; m < nt; ++m) cols.push_back("flux_" + std::to_string(m));
    io::CsvTable table(cols);
    auto add = [&](const std::string& kind, const SweepRow& r) {
        std::vector<std::string> cells{kind,
                                       io::format_double(r.eps),
                                       io::format_double(r.energy),
                                       io::format_double(r.stability),
                                       io::format_double(r.flux_ratio),
                                       io::format_double(r.residual),
                                       io::format_double(r.pairing_defect)};
        for (double w : r.weak) cells.push_back(io::format_double(w));
        for (double f : r.flux) cells.push_back(io::format_double(f));
        table.add_row(std::move(cells));
    };
    for (const auto& r : report.rows) add("eps", r);
    if (report.complete) add("homogenized", report.homogenized);
    return table.str();
}

inline nlohmann::ordered_json to_json(const Verdict& v)
{
    nlohmann::ordered_json j;
    j["WEAK"] = v.weak;
    j["FLUX"] = v.flux;
    j["ENERGY"] = v.energy;
    j["weak_gap"] = v.weak_gap;
    j["flux_gap"] = v.flux_gap;
    j["energy_gap"] = v.energy_gap;
    return j;
}

inline nlohmann::ordered_json to_json(const ConvergenceReport& report)
{
    nlohmann::ordered_json j;
    const auto& c = report.config;
    j["s"] = c.s;
    j["route"] = to_string(c.route);
    j["eps"] = c.eps;
    j["N"] = c.nodes;
    j["R"] = c.half_width;
    j["a_star"] = c.dim == 1 ? nlohmann::ordered_json(report.a_star(0, 0))
                             : nlohmann::ordered_json({report.a_star(0, 0), report.a_star(1, 1)});
    j["tolerances"] = {{"weak", c.tol.weak}, {"flux", c.tol.flux}, {"energy", c.tol.energy}, {"trend_floor", c.tol.trend_floor}};
    std::vector<std::string> names;
    for (const auto& t : c.tests) names.push_back(t.name());
    j["tests"] = names;
    j["complete"] = report.complete;
    if (!report.complete) j["failure"] = report.failure;
    if (report.verdict) j["verdict"] = to_json(*report.verdict);
    return j;
}

} // namespace frachom
