#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "frachom/extension.hpp"
#include "frachom/homogenize.hpp"
#include "frachom/perforated.hpp"

namespace frachom::runner {

using Json = nlohmann::ordered_json;

enum class ExitCode : int { pass = 0, verdict_failed = 1, schema_error = 2, solver_failure = 3 };

/// Config document rejected by the schema; maps to exit code 2.
class SchemaError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

inline std::string sha256_hex(std::string_view bytes)
{
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 digest failed");
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return out.str();
}

/// Reads one JSON object; every key must be consumed before finish().
class Reader {
public:
    Reader(const Json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object()) throw SchemaError(where() + " must be an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    double number(const std::string& key, std::optional<double> fallback = std::nullopt)
    {
        const Json* v = take(key, fallback.has_value());
        if (!v) return *fallback;
        if (!v->is_number()) throw SchemaError(where(key) + " must be a number");
        return v->get<double>();
    }

    int integer(const std::string& key, std::optional<int> fallback = std::nullopt)
    {
        const Json* v = take(key, fallback.has_value());
        if (!v) return *fallback;
        if (!v->is_number_integer()) throw SchemaError(where(key) + " must be an integer");
        return v->get<int>();
    }

    std::uint64_t unsigned64(const std::string& key, std::uint64_t fallback)
    {
        const Json* v = take(key, true);
        if (!v) return fallback;
        if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0))
            throw SchemaError(where(key) + " must be a non-negative integer");
        return v->get<std::uint64_t>();
    }

    bool boolean(const std::string& key, bool fallback)
    {
        const Json* v = take(key, true);
        if (!v) return fallback;
        if (!v->is_boolean()) throw SchemaError(where(key) + " must be true or false");
        return v->get<bool>();
    }

    std::string string(const std::string& key, std::optional<std::string> fallback = std::nullopt)
    {
        const Json* v = take(key, fallback.has_value());
        if (!v) return *fallback;
        if (!v->is_string()) throw SchemaError(where(key) + " must be a string");
        return v->get<std::string>();
    }

    std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> fallback = std::nullopt)
    {
        const Json* v = take(key, fallback.has_value());
        if (!v) return *fallback;
        if (!v->is_array()) throw SchemaError(where(key) + " must be an array of numbers");
        std::vector<double> out;
        for (const auto& x : *v) {
            if (!x.is_number()) throw SchemaError(where(key) + " must be an array of numbers");
            out.push_back(x.get<double>());
        }
        return out;
    }

    /// Sub-object reader, or nullopt when the key is absent.
    std::optional<Reader> object(const std::string& key, bool required = false)
    {
        const Json* v = take(key, !required);
        if (!v) return std::nullopt;
        return Reader(*v, path_ + "." + key);
    }

    const Json* raw(const std::string& key, bool optional = true) { return take(key, optional); }

    const std::string& path() const { return path_; }

    std::string where(const std::string& key = "") const { return key.empty() ? path_ : path_ + "." + key; }

    void finish() const
    {
        for (const auto& item : j_.items())
            if (!used_.count(item.key())) throw SchemaError("unknown key " + where(item.key()));
    }

private:
    const Json* take(const std::string& key, bool optional)
    {
        if (!j_.contains(key)) {
            if (optional) return nullptr;
            throw SchemaError("missing key " + where(key));
        }
        used_.insert(key);
        return &j_.at(key);
    }

    const Json& j_;
    std::string path_;
    std::set<std::string> used_;
};

namespace schema {

template <class F>
auto guarded(const std::string& where, F&& f) -> decltype(f())
{
    try {
        return f();
    }
    catch (const SchemaError&) {
        throw;
    }
    catch (const std::invalid_argument& e) {
        throw SchemaError(where + ": " + e.what());
    }
}

inline double tolerance(Reader& r, const std::string& key, double fallback)
{
    const double v = r.number(key, fallback);
    if (!(v >= 1e-12 && v <= 1.0)) throw SchemaError(r.where(key) + " must lie in [1e-12, 1]");
    return v;
}

inline Route route(Reader& r)
{
    return guarded(r.where("route"), [&] { return route_from_string(r.string("route", "spectral")); });
}

inline BoundaryMode mode(Reader& r, BoundaryMode fallback = BoundaryMode::zero_exterior)
{
    return guarded(r.where("mode"), [&] { return boundary_mode_from_string(r.string("mode", to_string(fallback))); });
}

inline int dimension(Reader& r)
{
    const int d = r.integer("dim", 1);
    if (d != 1 && d != 2) throw SchemaError(r.where("dim") + " must be 1 or 2");
    return d;
}

inline Region region(Reader& parent, int dim)
{
    auto r = parent.object("region");
    if (!r) return Region{};
    Region out;
    const auto lo = r->numbers("lo");
    const auto hi = r->numbers("hi");
    r->finish();
    if (lo.size() != static_cast<std::size_t>(dim) || hi.size() != static_cast<std::size_t>(dim))
        throw SchemaError(r->path() + " bounds need exactly dim entries");
    for (int a = 0; a < dim; ++a) {
        out.lo[static_cast<std::size_t>(a)] = lo[static_cast<std::size_t>(a)];
        out.hi[static_cast<std::size_t>(a)] = hi[static_cast<std::size_t>(a)];
    }
    return out;
}

inline Json to_json(const Region& r, int dim)
{
    return {{"lo", std::vector<double>(r.lo.begin(), r.lo.begin() + dim)},
            {"hi", std::vector<double>(r.hi.begin(), r.hi.begin() + dim)}};
}

inline Profile1d profile1d(Reader r)
{
    const auto kind = r.string("kind");
    Profile1d p;
    if (kind == "constant") {
        const double v = r.number("value");
        p = guarded(r.path(), [&] { return Profile1d::constant(v); });
    }
    else if (kind == "sin1d") {
        const double m = r.number("mean");
        p = guarded(r.path(), [&] { return Profile1d::sin1d(m); });
    }
    else if (kind == "piecewise") {
        const double a = r.number("left");
        const double b = r.number("right");
        p = guarded(r.path(), [&] { return Profile1d::piecewise(a, b); });
    }
    else {
        throw SchemaError(r.where("kind") + " must be constant, sin1d or piecewise");
    }
    r.finish();
    return p;
}

inline Json to_json(const Profile1d& p)
{
    switch (p.family) {
    case Profile1d::Family::constant: return {{"kind", "constant"}, {"value", p.first}};
    case Profile1d::Family::sin1d: return {{"kind", "sin1d"}, {"mean", p.first}};
    case Profile1d::Family::piecewise: return {{"kind", "piecewise"}, {"left", p.first}, {"right", p.second}};
    }
    return {};
}

inline Profile profile(Reader& parent, const Profile& fallback)
{
    auto r = parent.object("profile");
    if (!r) return fallback;
    const auto family = r->string("family", "scalar");
    Profile out;
    if (family == "scalar") {
        out = Profile::scalar(profile1d(*r->object("a", true)));
    }
    else if (family == "laminate") {
        auto a1 = profile1d(*r->object("a", true));
        auto a2 = profile1d(*r->object("a2", true));
        out = Profile::laminate(a1, a2);
    }
    else {
        throw SchemaError(r->where("family") + " must be scalar or laminate");
    }
    r->finish();
    return out;
}

inline Json to_json(const Profile& p)
{
    if (p.family == Profile::Family::scalar) return {{"family", "scalar"}, {"a", to_json(p.axis_x)}};
    return {{"family", "laminate"}, {"a", to_json(p.axis_x)}, {"a2", to_json(p.axis_y)}};
}

inline DataSpec data(Reader& parent, const std::string& key, const DataSpec& fallback)
{
    auto r = parent.object(key);
    if (!r) return fallback;
    DataSpec d;
    const auto kind = r->string("kind");
    if (kind == "constant") {
        d.kind = DataSpec::Kind::constant;
        d.value = r->number("value");
    }
    else if (kind == "bump") {
        d.kind = DataSpec::Kind::bump;
        d.value = r->number("value");
        d.center = r->number("center", 0.0);
        d.width = r->number("width", 1.0);
        if (!(d.width > 0.0)) throw SchemaError(r->where("width") + " must be positive");
    }
    else {
        throw SchemaError(r->where("kind") + " must be constant or bump");
    }
    r->finish();
    return d;
}

inline Json to_json(const DataSpec& d)
{
    if (d.kind == DataSpec::Kind::constant) return {{"kind", "constant"}, {"value", d.value}};
    return {{"kind", "bump"}, {"value", d.value}, {"center", d.center}, {"width", d.width}};
}

inline RadiusRule rule(Reader r)
{
    const auto kind = r.string("kind");
    const double scale = r.number("scale");
    const double exponent = r.number("exponent");
    r.finish();
    if (!(scale > 0.0) || !(exponent > 0.0)) throw SchemaError(r.path() + " needs positive scale and exponent");
    if (kind == "power") return RadiusRule::power(scale, exponent);
    if (kind == "exponential") return RadiusRule::exponential(scale, exponent);
    throw SchemaError(r.where("kind") + " must be power or exponential");
}

inline Json to_json(const RadiusRule& r)
{
    return {{"kind", to_string(r.kind)}, {"scale", r.scale}, {"exponent", r.exponent}};
}

inline std::vector<TestFunction> tests(Reader& parent, const Region& region)
{
    const Json* v = parent.raw("tests");
    if (!v) return default_test_set(region);
    if (!v->is_array() || v->empty()) throw SchemaError(parent.where("tests") + " must be a non-empty array");
    std::vector<TestFunction> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
        Reader r((*v)[i], parent.where("tests") + "[" + std::to_string(i) + "]");
        const auto kind = r.string("kind");
        TestFunction t;
        t.region = region;
        if (kind == "bump") {
            t.kind = TestFunction::Kind::bump;
            t.center = r.number("center");
            t.radius = r.number("radius");
            if (!(t.radius > 0.0)) throw SchemaError(r.where("radius") + " must be positive");
        }
        else if (kind == "sine") {
            t.kind = TestFunction::Kind::sine;
            t.mode = r.integer("mode");
            if (t.mode < 1) throw SchemaError(r.where("mode") + " must be at least 1");
        }
        else {
            throw SchemaError(r.where("kind") + " must be bump or sine");
        }
        r.finish();
        out.push_back(t);
    }
    return out;
}

inline Json to_json(const std::vector<TestFunction>& tests)
{
    Json arr = Json::array();
    for (const auto& t : tests) {
        if (t.kind == TestFunction::Kind::bump) arr.push_back({{"kind", "bump"}, {"center", t.center}, {"radius", t.radius}});
        else arr.push_back({{"kind", "sine"}, {"mode", t.mode}});
    }
    return arr;
}

inline Json matrix_json(const Eigen::Matrix2d& a) { return {{a(0, 0), a(0, 1)}, {a(1, 0), a(1, 1)}}; }

} // namespace schema

/// Single nonlocal Dirichlet solve with a seeded symmetry probe of the form.
struct SolveCommand {
    double s = 0.5;
    Route route = Route::spectral;
    int dim = 1;
    double half_width = 4.0;
    int nodes = 512;
    BoundaryMode mode = BoundaryMode::zero_exterior;
    Region region{};
    double a = 1.0;
    DataSpec f{DataSpec::Kind::constant, 1.0};
    DataSpec g{DataSpec::Kind::constant, 0.0};
    std::optional<HoleFamily> holes;
    double residual_tol = 1e-8;
    double symmetry_tol = 1e-10;
};

struct SweepCommand {
    SweepConfig sweep;
    std::optional<Eigen::Matrix2d> a_star_override;
};

struct CorrectorBlock {
    CorrectorFamily family{2, RadiusRule::exponential(1.0, 3.0)};
    std::vector<double> eps{0.25, 0.125, 0.0625, 0.03125, 0.015625};
    double half_width = 2.0;
    int nodes = 64;
    double grad_bound = 10.0;
};

struct PerforatedCommand {
    PerforatedConfig perforated;
    bool local_comparison = true;
    double local_gap = 0.5;
    std::optional<CorrectorBlock> corrector;
};

struct ExtensionCommand {
    double s = 0.5;
    int dim = 1;
    double half_width = 4.0;
    int nodes = 512;
    BoundaryMode mode = BoundaryMode::periodic;
    double a = 1.0;
    int levels = 64;
    double height = 8.0;
    double grading = 2.0;
    int band = 8;                 // trace = seeded combination of the `band` lowest eigenvectors
    std::optional<DataSpec> data; // replaces the band-limited trace
    double dtn_tol = 5e-2;
};

struct ClassifyCase {
    int n = 2;
    RadiusRule rule;
    std::optional<Criticality> expect;
};

struct ClassifyCommand {
    std::vector<ClassifyCase> cases;
};

using CommandBody = std::variant<SolveCommand, SweepCommand, PerforatedCommand, ExtensionCommand, ClassifyCommand>;

struct ExperimentConfig {
    std::string command;        // solve | sweep | perforated | extension | classify | validate
    std::string target;         // the experiment the body describes (equals command except for validate)
    std::uint64_t seed = 0;
    CommandBody body;
};

inline const std::vector<std::string>& experiment_commands()
{
    static const std::vector<std::string> names{"solve", "sweep", "perforated", "extension", "classify"};
    return names;
}

namespace detail {

inline SolveCommand parse_solve(Reader& r)
{
    SolveCommand c;
    c.s = r.number("s", c.s);
    c.route = schema::route(r);
    c.dim = schema::dimension(r);
    c.half_width = r.number("R", c.half_width);
    c.nodes = r.integer("N", c.nodes);
    c.mode = schema::mode(r);
    c.region = schema::region(r, c.dim);
    c.a = r.number("a", c.a);
    c.f = schema::data(r, "f", c.f);
    c.g = schema::data(r, "g", c.g);
    if (auto h = r.object("holes")) {
        const double eps = h->number("eps");
        const auto rule = schema::rule(*h->object("rule", true));
        h->finish();
        c.holes = HoleFamily{c.dim, eps, rule};
    }
    if (auto t = r.object("tolerances")) {
        c.residual_tol = schema::tolerance(*t, "residual", c.residual_tol);
        c.symmetry_tol = schema::tolerance(*t, "symmetry", c.symmetry_tol);
        t->finish();
    }
    return c;
}

inline Json dump(const SolveCommand& c)
{
    Json j;
    j["s"] = c.s;
    j["route"] = to_string(c.route);
    j["dim"] = c.dim;
    j["R"] = c.half_width;
    j["N"] = c.nodes;
    j["mode"] = to_string(c.mode);
    j["region"] = schema::to_json(c.region, c.dim);
    j["a"] = c.a;
    j["f"] = schema::to_json(c.f);
    j["g"] = schema::to_json(c.g);
    if (c.holes) j["holes"] = {{"eps", c.holes->eps}, {"rule", schema::to_json(c.holes->rule)}};
    j["tolerances"] = {{"residual", c.residual_tol}, {"symmetry", c.symmetry_tol}};
    return j;
}

inline SweepCommand parse_sweep(Reader& r)
{
    SweepCommand c;
    auto& s = c.sweep;
    s.s = r.number("s", s.s);
    s.route = schema::route(r);
    s.dim = schema::dimension(r);
    s.half_width = r.number("R", s.half_width);
    s.nodes = r.integer("N", s.nodes);
    s.mode = schema::mode(r);
    s.region = schema::region(r, s.dim);
    s.profile = schema::profile(r, s.profile);
    s.eps = r.numbers("eps", s.eps);
    s.f = schema::data(r, "f", s.f);
    s.g = schema::data(r, "g", s.g);
    s.tests = schema::tests(r, s.region);
    if (auto t = r.object("tolerances")) {
        s.tol.weak = schema::tolerance(*t, "weak", s.tol.weak);
        s.tol.flux = schema::tolerance(*t, "flux", s.tol.flux);
        s.tol.energy = schema::tolerance(*t, "energy", s.tol.energy);
        s.tol.trend_floor = schema::tolerance(*t, "trend_floor", s.tol.trend_floor);
        t->finish();
    }
    if (const Json* v = r.raw("a_star_override")) {
        Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
        if (v->is_number()) {
            a = v->get<double>() * Eigen::Matrix2d::Identity();
        }
        else if (v->is_array() && v->size() == 2 && (*v)[0].is_array() && (*v)[1].is_array() && (*v)[0].size() == 2 &&
                 (*v)[1].size() == 2 && (*v)[0][0].is_number() && (*v)[0][1].is_number() && (*v)[1][0].is_number() &&
                 (*v)[1][1].is_number()) {
            for (int i = 0; i < 2; ++i)
                for (int k = 0; k < 2; ++k) a(i, k) = (*v)[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>();
        }
        else {
            throw SchemaError(r.where("a_star_override") + " must be a number or a 2x2 array");
        }
        if (!(a(0, 0) > 0.0) || !(a(1, 1) > 0.0) || a(0, 1) != 0.0 || a(1, 0) != 0.0)
            throw SchemaError(r.where("a_star_override") + " must be diagonal with a positive diagonal");
        c.a_star_override = a;
    }
    return c;
}

inline Json dump(const SweepCommand& c)
{
    const auto& s = c.sweep;
    Json j;
    j["s"] = s.s;
    j["route"] = to_string(s.route);
    j["dim"] = s.dim;
    j["R"] = s.half_width;
    j["N"] = s.nodes;
    j["mode"] = to_string(s.mode);
    j["region"] = schema::to_json(s.region, s.dim);
    j["profile"] = schema::to_json(s.profile);
    j["eps"] = s.eps;
    j["f"] = schema::to_json(s.f);
    j["g"] = schema::to_json(s.g);
    j["tests"] = schema::to_json(s.tests);
    j["tolerances"] = {{"weak", s.tol.weak}, {"flux", s.tol.flux}, {"energy", s.tol.energy}, {"trend_floor", s.tol.trend_floor}};
    if (c.a_star_override) j["a_star_override"] = schema::matrix_json(*c.a_star_override);
    return j;
}

inline PerforatedCommand parse_perforated(Reader& r)
{
    PerforatedCommand c;
    auto& p = c.perforated;
    p.s = r.number("s", p.s);
    p.route = schema::route(r);
    p.dim = schema::dimension(r);
    p.half_width = r.number("R", p.half_width);
    p.nodes = r.integer("N", p.nodes);
    p.mode = schema::mode(r);
    p.region = schema::region(r, p.dim);
    p.eps = r.numbers("eps", p.eps);
    if (auto rr = r.object("rule")) p.rule = schema::rule(*rr);
    p.holes = r.boolean("holes", p.holes);
    p.f = schema::data(r, "f", p.f);
    p.g = schema::data(r, "g", p.g);
    c.local_comparison = r.boolean("local_comparison", c.local_comparison);
    if (auto t = r.object("tolerances")) {
        p.tol = schema::tolerance(*t, "gap", p.tol);
        p.trend_floor = schema::tolerance(*t, "trend_floor", p.trend_floor);
        c.local_gap = schema::tolerance(*t, "local_gap", c.local_gap);
        t->finish();
    }
    if (auto k = r.object("corrector")) {
        CorrectorBlock b;
        b.family.n = k->integer("n", b.family.n);
        if (b.family.n < 2) throw SchemaError(k->where("n") + " must be at least 2");
        if (auto rr = k->object("rule")) b.family.rule = schema::rule(*rr);
        b.eps = k->numbers("eps", b.eps);
        b.half_width = k->number("R", b.half_width);
        b.nodes = k->integer("N", b.nodes);
        b.grad_bound = k->number("grad_bound", b.grad_bound);
        if (!(b.grad_bound > 0.0)) throw SchemaError(k->where("grad_bound") + " must be positive");
        if (b.eps.size() < 2) throw SchemaError(k->where("eps") + " needs at least two values");
        k->finish();
        c.corrector = b;
    }
    return c;
}

inline Json dump(const PerforatedCommand& c)
{
    const auto& p = c.perforated;
    Json j;
    j["s"] = p.s;
    j["route"] = to_string(p.route);
    j["dim"] = p.dim;
    j["R"] = p.half_width;
    j["N"] = p.nodes;
    j["mode"] = to_string(p.mode);
    j["region"] = schema::to_json(p.region, p.dim);
    j["eps"] = p.eps;
    j["rule"] = schema::to_json(p.rule);
    j["holes"] = p.holes;
    j["f"] = schema::to_json(p.f);
    j["g"] = schema::to_json(p.g);
    j["local_comparison"] = c.local_comparison;
    j["tolerances"] = {{"gap", p.tol}, {"trend_floor", p.trend_floor}, {"local_gap", c.local_gap}};
    if (c.corrector) {
        const auto& b = *c.corrector;
        j["corrector"] = {{"n", b.family.n}, {"rule", schema::to_json(b.family.rule)}, {"eps", b.eps},
                          {"R", b.half_width},  {"N", b.nodes},                         {"grad_bound", b.grad_bound}};
    }
    return j;
}

inline ExtensionCommand parse_extension(Reader& r)
{
    ExtensionCommand c;
    c.s = r.number("s", c.s);
    c.dim = schema::dimension(r);
    c.half_width = r.number("R", c.half_width);
    c.nodes = r.integer("N", c.nodes);
    c.mode = schema::mode(r, c.mode);
    c.a = r.number("a", c.a);
    c.levels = r.integer("M", c.levels);
    c.height = r.number("Y", c.height);
    c.grading = r.number("gamma", c.grading);
    c.band = r.integer("band", c.band);
    if (c.band < 1) throw SchemaError(r.where("band") + " must be at least 1");
    if (r.has("trace")) c.data = schema::data(r, "trace", DataSpec{});
    if (auto t = r.object("tolerances")) {
        c.dtn_tol = schema::tolerance(*t, "dtn", c.dtn_tol);
        t->finish();
    }
    return c;
}

inline Json dump(const ExtensionCommand& c)
{
    Json j;
    j["s"] = c.s;
    j["dim"] = c.dim;
    j["R"] = c.half_width;
    j["N"] = c.nodes;
    j["mode"] = to_string(c.mode);
    j["a"] = c.a;
    j["M"] = c.levels;
    j["Y"] = c.height;
    j["gamma"] = c.grading;
    j["band"] = c.band;
    if (c.data) j["trace"] = schema::to_json(*c.data);
    j["tolerances"] = {{"dtn", c.dtn_tol}};
    return j;
}

inline ClassifyCommand parse_classify(Reader& r)
{
    ClassifyCommand c;
    const Json* v = r.raw("cases", false);
    if (!v->is_array() || v->empty()) throw SchemaError(r.where("cases") + " must be a non-empty array");
    for (std::size_t i = 0; i < v->size(); ++i) {
        Reader k((*v)[i], r.where("cases") + "[" + std::to_string(i) + "]");
        ClassifyCase cc;
        cc.n = k.integer("n");
        if (cc.n != 2 && cc.n != 3) throw SchemaError(k.where("n") + " must be 2 or 3");
        cc.rule = schema::rule(*k.object("rule", true));
        if (k.has("expect")) {
            const auto e = k.string("expect");
            if (e == "vanishing") cc.expect = Criticality::vanishing;
            else if (e == "non_vanishing") cc.expect = Criticality::non_vanishing;
            else throw SchemaError(k.where("expect") + " must be vanishing or non_vanishing");
        }
        k.finish();
        c.cases.push_back(cc);
    }
    return c;
}

inline Json dump(const ClassifyCommand& c)
{
    Json arr = Json::array();
    for (const auto& cc : c.cases) {
        Json j{{"n", cc.n}, {"rule", schema::to_json(cc.rule)}};
        if (cc.expect) j["expect"] = to_string(*cc.expect);
        arr.push_back(j);
    }
    return {{"cases", arr}};
}

} // namespace detail

/**
 * Parses a config document for `command`. For validate, the document's
 * "command" key names the experiment; otherwise that key is optional and must
 * match. `seed` overrides the document's seed.
 */
inline ExperimentConfig parse_config(const std::string& command, const Json& doc,
                                     std::optional<std::uint64_t> seed = std::nullopt)
{
    const auto& names = experiment_commands();
    const bool known = command == "validate" || std::find(names.begin(), names.end(), command) != names.end();
    if (!known) throw SchemaError("unknown command '" + command + "'");
    Reader r(doc, "config");
    ExperimentConfig cfg;
    cfg.command = command;
    if (command == "validate") {
        cfg.target = r.string("command");
        if (std::find(names.begin(), names.end(), cfg.target) == names.end())
            throw SchemaError("config.command must name an experiment, got '" + cfg.target + "'");
    }
    else {
        cfg.target = r.string("command", command);
        if (cfg.target != command) throw SchemaError("config.command is '" + cfg.target + "' but the CLI ran " + command);
    }
    cfg.seed = r.unsigned64("seed", 0);
    if (seed) cfg.seed = *seed;
    if (cfg.target == "solve") cfg.body = detail::parse_solve(r);
    else if (cfg.target == "sweep") cfg.body = detail::parse_sweep(r);
    else if (cfg.target == "perforated") cfg.body = detail::parse_perforated(r);
    else if (cfg.target == "extension") cfg.body = detail::parse_extension(r);
    else cfg.body = detail::parse_classify(r);
    r.finish();
    return cfg;
}

/// Normalized document with every parameter spelled out.
inline Json to_json(const ExperimentConfig& cfg)
{
    Json j;
    j["command"] = cfg.target;
    j["seed"] = cfg.seed;
    const Json body = std::visit([](const auto& b) { return detail::dump(b); }, cfg.body);
    for (const auto& item : body.items()) j[item.key()] = item.value();
    return j;
}

struct ReportFile {
    std::string name;
    std::string content;
};

struct RunResult {
    ExitCode code = ExitCode::pass;
    std::vector<ReportFile> files;
    std::string message;
};

namespace detail {

/// Uniform doubles in [-1, 1) from mt19937_64, independent of the standard library's distributions.
inline std::vector<double> seeded_coefficients(std::uint64_t seed, std::size_t n)
{
    std::mt19937_64 gen(seed);
    std::vector<double> out(n);
    for (auto& x : out) x = 2.0 * static_cast<double>(gen() >> 11) * 0x1.0p-53 - 1.0;
    return out;
}

inline Eigen::VectorXd seeded_vector(std::uint64_t seed, Eigen::Index n)
{
    const auto c = seeded_coefficients(seed, static_cast<std::size_t>(n));
    return Eigen::Map<const Eigen::VectorXd>(c.data(), n);
}

inline std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

inline void check_grid(int dim, double half_width, int nodes)
{
    if (!(half_width > 0.0)) throw SchemaError("R must be positive");
    if (nodes < 4) throw SchemaError("N must be at least 4");
    const double total = std::pow(static_cast<double>(nodes), dim);
    if (total > static_cast<double>(default_dense_cap))
        throw SchemaError("N^dim = " + io::format_double(total) + " exceeds the dense cap " + std::to_string(default_dense_cap));
}

inline void check_order(double s)
{
    if (!(s > 0.0 && s < 1.0)) throw SchemaError("s must lie in (0, 1)");
}

inline void validate(const SolveCommand& c)
{
    check_order(c.s);
    check_grid(c.dim, c.half_width, c.nodes);
    if (!(c.a > 0.0)) throw SchemaError("a must be positive");
    if (c.route == Route::kernel && c.dim != 1) throw SchemaError("the kernel route is one-dimensional");
    if (c.route == Route::kernel && c.a != 1.0) throw SchemaError("the kernel route is the fractional Laplacian (a = 1)");
    const auto grid = build_grid(c.dim, c.half_width, c.nodes, c.mode);
    schema::guarded("config", [&] { return mask_domain(grid, c.region, c.holes); });
}

inline void validate(const SweepCommand& c)
{
    check_grid(c.sweep.dim, c.sweep.half_width, c.sweep.nodes);
    schema::guarded("config", [&] {
        frachom::validate(c.sweep);
        return mask_domain(c.sweep.grid(), c.sweep.region);
    });
}

inline void validate(const PerforatedCommand& c)
{
    const auto& p = c.perforated;
    check_grid(p.dim, p.half_width, p.nodes);
    schema::guarded("config", [&] {
        frachom::validate(p);
        for (double e : p.eps) mask_domain(p.grid(), p.region, HoleFamily{p.dim, e, p.rule});
        return 0;
    });
    if (c.corrector) {
        check_grid(2, c.corrector->half_width, c.corrector->nodes);
        for (double e : c.corrector->eps)
            schema::guarded("config.corrector", [&] { return corrector_eval(c.corrector->family, e, e); });
        for (std::size_t i = 1; i < c.corrector->eps.size(); ++i)
            if (!(c.corrector->eps[i] < c.corrector->eps[i - 1])) throw SchemaError("config.corrector.eps must be descending");
    }
}

inline void validate(const ExtensionCommand& c)
{
    check_order(c.s);
    check_grid(c.dim, c.half_width, c.nodes);
    if (!(c.a > 0.0)) throw SchemaError("a must be positive");
    if (c.levels < 4) throw SchemaError("M must be at least 4 for DtN extraction");
    const auto grid = build_grid(c.dim, c.half_width, c.nodes, c.mode);
    if (c.band > static_cast<int>(grid.size())) throw SchemaError("band exceeds the number of grid nodes");
    schema::guarded("config", [&] { return build_extension_grid(grid, c.s, c.levels, c.height, c.grading); });
}

inline void validate(const ClassifyCommand& c)
{
    for (const auto& cc : c.cases) schema::guarded("config.cases", [&] { return criticality_classify(cc.n, cc.rule); });
}

inline RunResult execute(const SolveCommand& c, std::uint64_t seed)
{
    RunResult res;
    const auto grid = build_grid(c.dim, c.half_width, c.nodes, c.mode);
    const auto mask = mask_domain(grid, c.region, c.holes);
    const auto form = c.route == Route::spectral ? laplacian_form(grid, c.s, c.a)
                                                 : kernel_form(assemble_fraclap_form(grid, c.s));
    const Eigen::VectorXd f = c.f.sample(grid);
    const Eigen::VectorXd g = c.g.sample(grid);
    const auto rep = solve_nonlocal(form, mask, f, g);

    const auto n = static_cast<Eigen::Index>(grid.size());
    const Eigen::VectorXd v = seeded_vector(seed, n);
    const Eigen::VectorXd w = seeded_vector(seed + 1, n);
    const double vw = v.dot(*form.matrix * w);
    const double wv = w.dot(*form.matrix * v);
    const double asym = std::abs(vw - wv) / std::max(std::abs(vw) + std::abs(wv), 1e-300);

    const bool pass = rep.residual <= c.residual_tol && asym <= c.symmetry_tol;
    Json j = to_json(rep);
    j.erase("u");
    j["stability"] = stability_check(rep, form, g);
    j["flux_ratio"] = flux_check(rep, form, g);
    j["symmetry_defect"] = asym;
    j["verdict"] = {{"residual", rep.residual <= c.residual_tol}, {"symmetry", asym <= c.symmetry_tol}, {"pass", pass}};

    io::CsvTable table(grid.dim == 1 ? std::vector<std::string>{"x", "label", "f", "g", "u"}
                                     : std::vector<std::string>{"x1", "x2", "label", "f", "g", "u"});
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const auto p = grid.point(k);
        const auto i = static_cast<Eigen::Index>(k);
        const char* label = mask.labels[k] == NodeLabel::interior ? "interior"
                          : mask.labels[k] == NodeLabel::hole     ? "hole"
                                                                  : "exterior";
        std::vector<std::string> row{io::format_double(p[0])};
        if (grid.dim == 2) row.push_back(io::format_double(p[1]));
        for (auto cell : {std::string(label), io::format_double(f[i]), io::format_double(g[i]), io::format_double(rep.u[i])})
            row.push_back(cell);
        table.add_row(row);
    }
    res.files = {{"solution.csv", table.str()}, {"solve.json", dump_json(j)}};
    res.code = pass ? ExitCode::pass : ExitCode::verdict_failed;
    return res;
}

inline RunResult execute(const SweepCommand& c, std::uint64_t)
{
    RunResult res;
    auto report = run_sweep(c.sweep);
    if (report.complete && c.a_star_override) {
        report.homogenized = homogenized_row(c.sweep, c.a_star_override);
        report.a_star = *c.a_star_override;
        if (report.rows.size() >= 3) report.verdict = verify_convergence(report, c.sweep.tol);
    }
    Json j = to_json(report);
    if (c.a_star_override) j["a_star_override"] = schema::matrix_json(*c.a_star_override);
    res.files = {{"sweep.csv", sweep_csv(report)}, {"sweep.json", dump_json(j)}};
    if (!report.complete) {
        res.code = ExitCode::solver_failure;
        res.message = report.failure;
    }
    else {
        res.code = report.verdict && report.verdict->all() ? ExitCode::pass : ExitCode::verdict_failed;
    }
    return res;
}

inline std::string hypothesis_csv(const std::vector<HypothesisRow>& rows)
{
    io::CsvTable table({"eps", "log_radius", "snapped", "max_on_holes", "grad_sq", "deficit_l2"});
    for (const auto& r : rows)
        table.add_row({io::format_double(r.eps), io::format_double(r.log_radius), r.snapped ? "1" : "0",
                       io::format_double(r.max_on_holes), io::format_double(r.grad_sq), io::format_double(r.deficit_l2)});
    return table.str();
}

/// Zero on hole nodes, ||grad w||^2 bounded, ||w - 1|| strictly decreasing.
inline Json corrector_verdict(const std::vector<HypothesisRow>& rows, double grad_bound)
{
    bool zero = true;
    bool bounded = true;
    bool decreasing = true;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        zero = zero && (std::isnan(rows[i].max_on_holes) || rows[i].max_on_holes == 0.0);
        bounded = bounded && rows[i].grad_sq <= grad_bound;
        if (i > 0) decreasing = decreasing && rows[i].deficit_l2 < rows[i - 1].deficit_l2;
    }
    return {{"zero_on_holes", zero}, {"gradient_bounded", bounded}, {"deficit_decreasing", decreasing},
            {"pass", zero && bounded && decreasing}};
}

inline RunResult execute(const PerforatedCommand& c, std::uint64_t)
{
    RunResult res;
    const auto frac = run_perforated_sweep(c.perforated);
    Json j;
    j["fractional"] = to_json(frac);
    res.files.push_back({"perforated.csv", perforated_csv(frac)});
    bool complete = frac.complete;
    bool pass = frac.verdict && frac.verdict->nostrange;
    std::string failure = frac.failure;
    if (c.local_comparison) {
        const auto local = local_comparison_sweep(c.perforated);
        complete = complete && local.complete;
        if (!local.complete) failure = local.failure;
        bool separated = local.complete && !local.verdict->nostrange;
        for (const auto& r : local.rows) separated = separated && r.gap >= c.local_gap;
        j["local"] = to_json(local);
        j["local"]["separated"] = separated;
        res.files.push_back({"perforated_local.csv", perforated_csv(local)});
        pass = pass && separated;
    }
    if (c.corrector) {
        const auto& b = *c.corrector;
        const auto grid = build_grid(2, b.half_width, b.nodes, BoundaryMode::zero_exterior);
        const auto rows = hypothesis_check(b.family, grid, b.eps);
        const auto v = corrector_verdict(rows, b.grad_bound);
        j["corrector"] = v;
        res.files.push_back({"corrector.csv", hypothesis_csv(rows)});
        pass = pass && v["pass"].get<bool>();
    }
    j["dichotomy"] = pass;
    res.files.push_back({"perforated.json", dump_json(j)});
    if (!complete) {
        res.code = ExitCode::solver_failure;
        res.message = failure;
    }
    else {
        res.code = pass ? ExitCode::pass : ExitCode::verdict_failed;
    }
    return res;
}

inline RunResult execute(const ExtensionCommand& c, std::uint64_t seed)
{
    RunResult res;
    const auto grid = build_grid(c.dim, c.half_width, c.nodes, c.mode);
    const auto op = assemble_stiffness(grid, constant_field(grid, c.a));
    const auto dec = decompose(op);
    Eigen::VectorXd trace;
    if (c.data) {
        trace = c.data->sample(grid);
    }
    else {
        const auto coef = seeded_coefficients(seed, static_cast<std::size_t>(c.band));
        trace = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.size()));
        for (int k = 0; k < c.band; ++k) trace += coef[static_cast<std::size_t>(k)] * dec.vectors.col(k);
    }
    const auto ext = build_extension_grid(grid, c.s, c.levels, c.height, c.grading);
    const auto sol = solve_extension(assemble_extension(ext, constant_field(grid, c.a)), trace);
    const Eigen::VectorXd reference = fractional_apply(dec, c.s, trace);
    const Eigen::VectorXd quotient = dtn_extract(sol);
    const Eigen::VectorXd flux = dtn_extract_flux(sol);
    const double scale = std::max(reference.norm(), 1e-300);
    const double err_q = (quotient - reference).norm() / scale;
    const double err_f = (flux - reference).norm() / scale;

    Json j = to_json(sol);
    j.erase("dtn");
    j.erase("dtn_raw");
    j["iterations"] = sol.iterations;
    j["dtn_error"] = err_q;
    j["dtn_flux_error"] = err_f;
    j["verdict"] = {{"dtn", err_q <= c.dtn_tol}, {"pass", err_q <= c.dtn_tol}};

    io::CsvTable table(grid.dim == 1 ? std::vector<std::string>{"x", "trace", "spectral", "dtn", "dtn_flux"}
                                     : std::vector<std::string>{"x1", "x2", "trace", "spectral", "dtn", "dtn_flux"});
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const auto p = grid.point(k);
        const auto i = static_cast<Eigen::Index>(k);
        std::vector<double> row{p[0]};
        if (grid.dim == 2) row.push_back(p[1]);
        for (double v : {trace[i], reference[i], quotient[i], flux[i]}) row.push_back(v);
        table.add_row(row);
    }
    res.files = {{"extension_trace.csv", table.str()},
                 {"extension_level1.csv", extension_slice_csv(sol, 1)},
                 {"extension.json", dump_json(j)}};
    res.code = err_q <= c.dtn_tol ? ExitCode::pass : ExitCode::verdict_failed;
    return res;
}

inline RunResult execute(const ClassifyCommand& c, std::uint64_t)
{
    RunResult res;
    std::string lines;
    bool pass = true;
    for (const auto& cc : c.cases) {
        const auto r = criticality_classify(cc.n, cc.rule);
        Json j = to_json(r);
        if (cc.expect) {
            j["expect"] = to_string(*cc.expect);
            pass = pass && r.verdict == *cc.expect;
        }
        lines += j.dump() + "\n";
    }
    res.files = {{"classify.jsonl", lines}};
    res.code = pass ? ExitCode::pass : ExitCode::verdict_failed;
    return res;
}

} // namespace detail

/// Checks every module precondition without solving.
inline void validate(const ExperimentConfig& cfg)
{
    std::visit([](const auto& b) { detail::validate(b); }, cfg.body);
}

/**
 * Runs a parsed config. Files: normalized config.json, command reports and
 * summary.json. Solver failures keep partial reports.
 */
inline RunResult run(const ExperimentConfig& cfg)
{
    validate(cfg);
    RunResult res;
    if (cfg.command != "validate") {
        try {
            res = std::visit([&](const auto& b) { return detail::execute(b, cfg.seed); }, cfg.body);
        }
        catch (const SolverError& e) {
            res.code = ExitCode::solver_failure;
            res.message = e.what();
        }
    }
    res.files.insert(res.files.begin(), {"config.json", detail::dump_json(to_json(cfg))});
    Json summary;
    summary["command"] = cfg.command;
    summary["target"] = cfg.target;
    summary["exit_code"] = static_cast<int>(res.code);
    summary["pass"] = res.code == ExitCode::pass;
    if (!res.message.empty()) summary["message"] = res.message;
    res.files.push_back({"summary.json", detail::dump_json(summary)});
    return res;
}

/// MANIFEST text: config hash, then one "name sha256" line per file in write order.
inline std::string manifest(const std::string& config_hash, const std::vector<ReportFile>& files)
{
    std::string out = "config_sha256 " + config_hash + "\nfiles " + std::to_string(files.size()) + "\n";
    for (const auto& f : files) out += f.name + " " + sha256_hex(f.content) + "\n";
    return out;
}

/// Writes the files and MANIFEST into `dir`; returns the written paths, MANIFEST last.
inline std::vector<std::filesystem::path> emit_report(const std::vector<ReportFile>& files,
                                                      const std::filesystem::path& dir, const std::string& config_hash)
{
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> paths;
    for (const auto& f : files) {
        paths.push_back(dir / f.name);
        io::write_text(paths.back().string(), f.content);
    }
    paths.push_back(dir / "MANIFEST");
    io::write_text(paths.back().string(), manifest(config_hash, files));
    return paths;
}

struct Invocation {
    ExitCode code = ExitCode::pass;
    std::string message;
    std::vector<std::filesystem::path> written;
};

/**
 * Reads, parses, runs and emits. Schema errors write a MANIFEST only (when the
 * config bytes were readable); no exception escapes.
 */
inline Invocation invoke(const std::string& command, const std::filesystem::path& config_path,
                         const std::filesystem::path& out_dir, std::optional<std::uint64_t> seed)
{
    Invocation inv;
    std::string bytes;
    {
        std::ifstream in(config_path, std::ios::binary);
        if (!in) {
            inv.code = ExitCode::schema_error;
            inv.message = "cannot read config '" + config_path.string() + "'";
            return inv;
        }
        std::ostringstream ss;
        ss << in.rdbuf();
        bytes = ss.str();
    }
    const std::string hash = sha256_hex(bytes);
    try {
        Json doc;
        try {
            doc = Json::parse(bytes);
        }
        catch (const nlohmann::json::parse_error& e) {
            throw SchemaError(std::string("config is not valid JSON: ") + e.what());
        }
        const auto cfg = parse_config(command, doc, seed);
        const auto res = run(cfg);
        inv.code = res.code;
        inv.message = res.message;
        inv.written = emit_report(res.files, out_dir, hash);
    }
    catch (const std::invalid_argument& e) {
        inv.code = ExitCode::schema_error;
        inv.message = e.what();
        inv.written = emit_report({}, out_dir, hash);
    }
    catch (const std::exception& e) {
        inv.code = ExitCode::solver_failure;
        inv.message = e.what();
        inv.written = emit_report({}, out_dir, hash);
    }
    return inv;
}

} // namespace frachom::runner
