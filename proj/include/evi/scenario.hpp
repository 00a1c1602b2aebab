#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "evi/periodic.hpp"
#include "evi/relaxation.hpp"

namespace evi {

// ---------------------------------------------------------------------------
// Scenario: one fully-specified experiment, loadable from a flat key=value
// config file, runnable to a directory of CSV/JSON artifacts.
// ---------------------------------------------------------------------------

enum class Workflow {
    Cauchy,          // one initial-value sweep with a catalog forcing
    PeriodicFixedH,  // periodic solve for a fixed catalog forcing
    Convex,          // forcing fixed point over a convex control tube
    Nonconvex,       // same loop over a finite (nonconvex) control set
    Extremal,        // vertex-valued forcing fixed point
    Relaxation,      // convex solve + shrinking-window vertex approximations
    RegularizedPath, // vanishing-viscosity sequence of convex solves
};

inline const char* workflow_name(Workflow w) {
    switch (w) {
        case Workflow::Cauchy: return "cauchy";
        case Workflow::PeriodicFixedH: return "periodic_fixed_h";
        case Workflow::Convex: return "convex";
        case Workflow::Nonconvex: return "nonconvex";
        case Workflow::Extremal: return "extremal";
        case Workflow::Relaxation: return "relaxation";
        case Workflow::RegularizedPath: return "regularized_path";
    }
    return "?";
}

struct Scenario {
    std::string name;
    Workflow workflow = Workflow::Cauchy;
    TimeGrid grid{1.0, 1000};
    SpaceGrid space = SpaceGrid::scalar();
    OperatorSpec op = OperatorSpec::scalar_linear(1.0);
    PhiSpec phi = PhiSpec::zero();
    MultimapSpec F;

    // Catalog forcing for the cauchy / periodic_fixed_h workflows.
    std::string forcing_kind = "zero";  // zero | constant | neg_cos | split_pm
    double forcing_value = 0.0;

    // Selection used by the forcing fixed-point workflows.
    std::string selection_kind = "minimal_norm";  // | centroid | vertex | alternating
    long selection_index = 0;
    long selection_period = 1;

    StepConfig cfg;
    double theta = 0.5;
    double outer_tol = 1e-8;
    long outer_max = 200;
    double x0_value = 0.0;
    double chatter_delta = 0.0;
    std::vector<double> relax_schedule;
    std::vector<double> eps_schedule{1e-1, 1e-2, 1e-3, 1e-4};
    unsigned long seed = 0;

    std::optional<double> hartman_m;  // declared invariant-ball radius
    std::optional<double> growth_k;   // declared growth envelope constant

    // Keys the loader filled with defaults, echoed into diagnostics.
    std::vector<std::string> defaults_applied;
};

// Smallest eigenvalue of the Dirichlet second-difference stencil on the grid:
// the exact strong-monotonicity modulus of the discrete Laplacian, and a
// lower bound for the p-Laplacian-plus-Laplacian stencil at any p.
inline double dirichlet_laplacian_lambda_min(const SpaceGrid& g) {
    const double pi = std::acos(-1.0);
    auto axis = [pi](double h, long n) {
        const double s = std::sin(pi / (2.0 * static_cast<double>(n + 1)));
        return 4.0 / (h * h) * s * s;
    };
    switch (g.kind) {
        case SpaceGrid::Kind::Scalar: return 0.0;
        case SpaceGrid::Kind::Line: return axis(g.h[0], g.nodes[0]);
        case SpaceGrid::Kind::Rect: return axis(g.h[0], g.nodes[0]) + axis(g.h[1], g.nodes[1]);
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// Config parsing: flat `key = value` lines, `#` comments, dotted key names.
// Unknown keys are rejected; every defaulted key is echoed.
// ---------------------------------------------------------------------------

namespace detail {

struct RawConfig {
    // key -> (value text, line number); consumed entry by entry.
    std::map<std::string, std::pair<std::string, int>> entries;
    std::vector<std::string>* defaults = nullptr;

    static std::string trim(const std::string& s) {
        size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

    std::optional<std::string> take(const std::string& key) {
        auto it = entries.find(key);
        if (it == entries.end()) return std::nullopt;
        std::string v = it->second.first;
        entries.erase(it);
        return v;
    }

    int line_of(const std::string& key) const {
        auto it = entries.find(key);
        return it == entries.end() ? 0 : it->second.second;
    }

    std::string take_string(const std::string& key, const std::string& fallback) {
        if (auto v = take(key)) return *v;
        if (defaults) defaults->push_back(key + "=" + fallback);
        return fallback;
    }

    std::string require_string(const std::string& key) {
        if (auto v = take(key)) return *v;
        throw ConfigError("missing required key '" + key + "'", key, 0);
    }

    double parse_double(const std::string& key, const std::string& text, int line) {
        try {
            size_t pos = 0;
            const double v = std::stod(text, &pos);
            if (pos != text.size()) throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': cannot parse '" + text + "' as a number (line " +
                                  std::to_string(line) + ")",
                              key, line);
        }
    }

    double take_double(const std::string& key, double fallback) {
        const int line = line_of(key);
        if (auto v = take(key)) return parse_double(key, *v, line);
        if (defaults) defaults->push_back(key + "=" + fmt_g15(fallback));
        return fallback;
    }

    double require_double(const std::string& key) {
        const int line = line_of(key);
        if (auto v = take(key)) return parse_double(key, *v, line);
        throw ConfigError("missing required key '" + key + "'", key, 0);
    }

    long take_long(const std::string& key, long fallback) {
        const double v = take_double(key, static_cast<double>(fallback));
        const long n = std::lround(v);
        if (static_cast<double>(n) != v)
            throw ConfigError("key '" + key + "': expected an integer", key, 0);
        return n;
    }

    long require_long(const std::string& key) {
        const double v = require_double(key);
        const long n = std::lround(v);
        if (static_cast<double>(n) != v)
            throw ConfigError("key '" + key + "': expected an integer", key, 0);
        return n;
    }

    std::optional<double> take_optional_double(const std::string& key) {
        const int line = line_of(key);
        if (auto v = take(key)) return parse_double(key, *v, line);
        return std::nullopt;
    }

    std::vector<double> take_list(const std::string& key, const std::vector<double>& fallback) {
        const int line = line_of(key);
        auto v = take(key);
        if (!v) {
            if (defaults) {
                std::string echo = key + "=";
                for (size_t i = 0; i < fallback.size(); ++i)
                    echo += (i ? "," : "") + fmt_g15(fallback[i]);
                defaults->push_back(echo);
            }
            return fallback;
        }
        std::vector<double> out;
        std::string item;
        for (size_t i = 0; i <= v->size(); ++i) {
            if (i == v->size() || (*v)[i] == ',') {
                const std::string piece = trim(item);
                if (!piece.empty()) out.push_back(parse_double(key, piece, line));
                item.clear();
            } else {
                item += (*v)[i];
            }
        }
        return out;
    }
};

inline RawConfig read_raw_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    RawConfig raw;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string text = RawConfig::trim(line);
        if (text.empty()) continue;
        const size_t eq = text.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" +
                                  text + "'",
                              "", lineno);
        const std::string key = RawConfig::trim(text.substr(0, eq));
        const std::string value = RawConfig::trim(text.substr(eq + 1));
        if (key.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": empty key", "", lineno);
        for (char c : key)
            if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '_')
                throw ConfigError("line " + std::to_string(lineno) + ": bad key character in '" +
                                      key + "'",
                                  key, lineno);
        if (raw.entries.count(key))
            throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'",
                              key, lineno);
        raw.entries[key] = {value, lineno};
    }
    return raw;
}

inline StateVector uniform_state(const SpaceGrid& g, double value) {
    StateVector x(g.size());
    for (long i = 0; i < x.size(); ++i) x[i] = value;
    return x;
}

}  // namespace detail

inline Workflow parse_workflow(const std::string& text) {
    for (Workflow w : {Workflow::Cauchy, Workflow::PeriodicFixedH, Workflow::Convex,
                       Workflow::Nonconvex, Workflow::Extremal, Workflow::Relaxation,
                       Workflow::RegularizedPath})
        if (text == workflow_name(w)) return w;
    throw ConfigError("workflow: unknown value '" + text +
                          "' (expected cauchy | periodic_fixed_h | convex | nonconvex | "
                          "extremal | relaxation | regularized_path)",
                      "workflow", 0);
}

// Workflow-aware cross-field validation; throws ConfigError naming the field.
inline void validate_scenario(const Scenario& scn) {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError(field + ": " + why, field, 0);
    };
    if (scn.name.empty()) fail("name", "must be nonempty");
    if (!(scn.grid.b > 0.0)) fail("grid.b", "period must be > 0");
    if (scn.grid.n_steps < 1) fail("grid.n", "need at least one step");
    if (!(scn.op.p >= 2.0)) fail("op.p", "growth exponent must be >= 2");
    if (scn.op.kind != OperatorSpec::Kind::ScalarLinear &&
        scn.op.kind != OperatorSpec::Kind::CustomTable &&
        scn.space.kind == SpaceGrid::Kind::Scalar)
        fail("space.kind", "grid operators need a line or rectangle space grid");
    if (!(scn.theta > 0.0 && scn.theta <= 1.0)) fail("loop.theta", "must lie in (0, 1]");
    if (!(scn.outer_tol > 0.0)) fail("tol.outer", "must be > 0");
    if (scn.outer_max < 1) fail("loop.outer_max", "must be >= 1");

    const bool uses_control = scn.workflow == Workflow::Convex ||
                              scn.workflow == Workflow::Nonconvex ||
                              scn.workflow == Workflow::Extremal ||
                              scn.workflow == Workflow::Relaxation ||
                              scn.workflow == Workflow::RegularizedPath;
    if (uses_control) {
        if (scn.F.shape.channels() > 0 && scn.F.gains.empty())
            fail("control.gain", "control shape has a channel but no gain field");
        try {
            validate_multimap(scn.F, scn.space);
        } catch (const Error& e) {
            fail("control", e.what());
        }
    }
    if (scn.workflow == Workflow::Convex && scn.F.shape.kind == ControlShape::Kind::FiniteSet)
        fail("control.shape", "finite sets belong to the nonconvex workflow");
    if (scn.workflow == Workflow::Nonconvex && scn.F.shape.kind != ControlShape::Kind::FiniteSet)
        fail("control.shape", "the nonconvex workflow expects a finite control set");
    if (scn.workflow == Workflow::Extremal || scn.workflow == Workflow::Relaxation) {
        if (scn.F.shape.kind == ControlShape::Kind::FiniteSet && scn.workflow == Workflow::Relaxation)
            fail("control.shape", "relaxation chatters across an interval or box, not a finite set");
    }
    if (scn.workflow == Workflow::Extremal && !(scn.chatter_delta > 0.0))
        fail("chatter.delta", "the extremal workflow needs a positive chatter window");
    if (scn.workflow == Workflow::Relaxation && scn.relax_schedule.empty())
        fail("relax.schedule", "the relaxation workflow needs a window schedule");
    if (scn.workflow == Workflow::RegularizedPath) {
        if (scn.eps_schedule.empty()) fail("eps.schedule", "must be nonempty");
        for (size_t i = 1; i < scn.eps_schedule.size(); ++i)
            if (!(scn.eps_schedule[i] < scn.eps_schedule[i - 1]))
                fail("eps.schedule", "must be strictly decreasing");
        if (!(scn.eps_schedule.back() >= 1e-6)) fail("eps.schedule", "last entry must be >= 1e-6");
    }
    if (scn.hartman_m && !(*scn.hartman_m > 0.0)) fail("hartman.M", "must be > 0");
    if (scn.growth_k && !(*scn.growth_k > 0.0)) fail("growth.k", "must be > 0");
}

// Load and fully validate a scenario from a config file.
inline Scenario load_scenario(const std::filesystem::path& path) {
    detail::RawConfig raw = detail::read_raw_config(path);
    Scenario scn;
    raw.defaults = &scn.defaults_applied;

    scn.name = raw.require_string("name");
    scn.workflow = parse_workflow(raw.require_string("workflow"));
    scn.seed = static_cast<unsigned long>(raw.take_long("seed", 0));

    scn.grid = TimeGrid{raw.require_double("grid.b"), raw.require_long("grid.n")};

    const std::string space_kind = raw.take_string("space.kind", "scalar");
    if (space_kind == "scalar") {
        scn.space = SpaceGrid::scalar();
    } else if (space_kind == "line") {
        const double len = raw.take_double("space.length", 1.0);
        const long nodes = raw.take_long("space.nodes", 49);
        scn.space = SpaceGrid::line(len, nodes);
    } else if (space_kind == "rectangle") {
        scn.space = SpaceGrid::rectangle(raw.take_double("space.lx", 1.0),
                                         raw.take_double("space.ly", 1.0),
                                         raw.take_long("space.nx", 15),
                                         raw.take_long("space.ny", 15));
    } else {
        throw ConfigError("space.kind: unknown value '" + space_kind + "'", "space.kind", 0);
    }

    const std::string op_kind = raw.take_string("op.kind", "scalar_linear");
    const double op_p = raw.take_double("op.p", 2.0);
    if (!(op_p >= 2.0)) throw ConfigError("op.p: growth exponent must be >= 2", "op.p", 0);
    if (op_kind == "scalar_linear") {
        scn.op = OperatorSpec::scalar_linear(raw.take_double("op.coeff", 1.0));
    } else if (op_kind == "scalar_power") {
        scn.op = OperatorSpec::scalar_power(op_p);
    } else if (op_kind == "p_laplacian") {
        scn.op = OperatorSpec::discrete_p_laplacian(op_p);
        // The p = 2 stencil is linear and symmetric positive definite, so its
        // smallest eigenvalue is an exact strong-monotonicity modulus.
        if (op_p == 2.0)
            scn.op.strong_monotonicity_c0 = dirichlet_laplacian_lambda_min(scn.space);
    } else if (op_kind == "p_laplacian_plus_laplacian") {
        scn.op = OperatorSpec::p_laplacian_plus_laplacian(op_p);
        // The added second-difference stencil contributes its eigenvalue
        // floor at every p.
        scn.op.strong_monotonicity_c0 = dirichlet_laplacian_lambda_min(scn.space);
    } else {
        throw ConfigError("op.kind: unknown value '" + op_kind + "'", "op.kind", 0);
    }
    scn.op.regularization_eps = raw.take_double("op.eps", 0.0);
    if (scn.op.regularization_eps > 0.0)
        scn.op.strong_monotonicity_c0 += scn.op.regularization_eps;

    const std::string phi_kind = raw.take_string("phi.kind", "zero");
    if (phi_kind == "zero") {
        scn.phi = PhiSpec::zero();
    } else if (phi_kind == "linear") {
        scn.phi = PhiSpec::linear(raw.take_double("phi.lambda", 1.0));
    } else if (phi_kind == "abs") {
        scn.phi = PhiSpec::absolute_value_subdifferential();
    } else if (phi_kind == "indicator") {
        scn.phi = PhiSpec::indicator_interval(raw.take_double("phi.lo", -1.0),
                                              raw.take_double("phi.hi", 1.0));
    } else {
        throw ConfigError("phi.kind: unknown value '" + phi_kind + "'", "phi.kind", 0);
    }

    scn.forcing_kind = raw.take_string("forcing.kind", "zero");
    if (scn.forcing_kind != "zero" && scn.forcing_kind != "constant" &&
        scn.forcing_kind != "neg_cos" && scn.forcing_kind != "split_pm")
        throw ConfigError("forcing.kind: unknown value '" + scn.forcing_kind + "'",
                          "forcing.kind", 0);
    scn.forcing_value = raw.take_double("forcing.value", 0.0);

    const std::string drift_kind = raw.take_string("drift.kind", "zero");
    const double drift_coeff = raw.take_double("drift.coeff", 0.0);
    if (drift_kind == "zero") {
        scn.F.drift = Drift::zero();
    } else if (drift_kind == "constant") {
        scn.F.drift = Drift::constant(drift_coeff);
    } else if (drift_kind == "linear") {
        scn.F.drift = Drift::linear(drift_coeff);
    } else if (drift_kind == "sine") {
        scn.F.drift = Drift::sine(drift_coeff);
    } else if (drift_kind == "saturating") {
        scn.F.drift = Drift::saturating(drift_coeff);
    } else {
        throw ConfigError("drift.kind: unknown value '" + drift_kind + "'", "drift.kind", 0);
    }

    const std::string shape = raw.take_string("control.shape", "none");
    long config_channels = 0;
    if (shape == "none") {
        scn.F.shape = ControlShape::none();
    } else if (shape == "interval") {
        scn.F.shape = ControlShape::interval(raw.require_double("control.lo"),
                                             raw.require_double("control.hi"));
        config_channels = 1;
    } else if (shape == "box") {
        const long ch = raw.take_long("control.channels", 1);
        if (ch != 1)
            throw ConfigError("control.channels: config files support a single channel; "
                              "multichannel boxes are library-level only",
                              "control.channels", 0);
        scn.F.shape = ControlShape::box(raw.require_double("control.radius"), 1);
        config_channels = 1;
    } else if (shape == "finite_set") {
        const std::vector<double> pts = raw.take_list("control.points", {});
        if (pts.empty())
            throw ConfigError("control.points: a finite control set needs at least one point",
                              "control.points", 0);
        std::vector<std::vector<double>> points;
        points.reserve(pts.size());
        for (double v : pts) points.push_back({v});
        scn.F.shape = ControlShape::finite_set(points);
        config_channels = 1;
    } else {
        throw ConfigError("control.shape: unknown value '" + shape + "'", "control.shape", 0);
    }
    if (config_channels == 1) {
        const auto gain = raw.take(std::string("control.gain"));
        if (!gain)
            throw ConfigError("control.gain: required when a control shape is declared",
                              "control.gain", 0);
        const double gv = raw.parse_double("control.gain", *gain, 0);
        if (gv == 0.0)
            throw ConfigError("control.gain: must be nonzero", "control.gain", 0);
        scn.F.gains = {detail::uniform_state(scn.space, gv)};
    }
    scn.growth_k = raw.take_optional_double("growth.k");
    if (scn.growth_k) scn.F.growth_k = *scn.growth_k;
    scn.hartman_m = raw.take_optional_double("hartman.M");

    scn.selection_kind = raw.take_string("selection.kind", "minimal_norm");
    if (scn.selection_kind != "minimal_norm" && scn.selection_kind != "centroid" &&
        scn.selection_kind != "vertex" && scn.selection_kind != "alternating")
        throw ConfigError("selection.kind: unknown value '" + scn.selection_kind + "'",
                          "selection.kind", 0);
    scn.selection_index = raw.take_long("selection.index", 0);
    scn.selection_period = raw.take_long("selection.period", 1);

    scn.cfg.inner_tol = raw.take_double("tol.inner", 1e-10);
    scn.outer_tol = raw.take_double("tol.outer", 1e-8);
    scn.cfg.inner_max_iter = raw.take_long("inner.max_iter", 200);
    scn.cfg.damping = raw.take_double("inner.damping", 1.0);
    const std::string method = raw.take_string("inner.method", "fixed_point");
    if (method == "fixed_point") {
        scn.cfg.inner_method = StepConfig::InnerMethod::FixedPointProx;
    } else if (method == "newton") {
        scn.cfg.inner_method = StepConfig::InnerMethod::DampedNewtonOnSmoothPart;
    } else {
        throw ConfigError("inner.method: unknown value '" + method + "'", "inner.method", 0);
    }
    scn.theta = raw.take_double("loop.theta", 0.5);
    scn.outer_max = raw.take_long("loop.outer_max", 200);
    scn.x0_value = raw.take_double("x0.value", 0.0);
    scn.chatter_delta = raw.take_double("chatter.delta", 0.0);
    scn.relax_schedule = raw.take_list("relax.schedule", {});
    scn.eps_schedule = raw.take_list("eps.schedule", {1e-1, 1e-2, 1e-3, 1e-4});

    if (!raw.entries.empty()) {
        const auto& first = *raw.entries.begin();
        throw ConfigError("unknown key '" + first.first + "' (line " +
                              std::to_string(first.second.second) + ")",
                          first.first, first.second.second);
    }
    std::sort(scn.defaults_applied.begin(), scn.defaults_applied.end());

    try {
        validate_scenario(scn);
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    return scn;
}

// ---------------------------------------------------------------------------
// Built-in 1D parabolic control scenario: heat-type diffusion with a nodewise
// graph, a catalog reaction term, and a box-bounded distributed control.
// ---------------------------------------------------------------------------

struct ParabolicParams {
    double p = 2.0;           // diffusion exponent (>= 2)
    long nodes = 49;          // interior nodes on the unit interval
    double b = 1.0;           // period
    long n_steps = 200;       // time steps
    std::string beta = "zero";    // zero | abs
    std::string f0 = "zero";      // zero | one | sin_u | saturating
    double control_radius = 0.0;  // box half-width (0 = no control)
    bool add_laplacian = false;   // use the p-Laplacian-plus-Laplacian stencil
};

inline Scenario build_parabolic_scenario(const ParabolicParams& par) {
    if (!(par.p >= 2.0)) throw ParameterError("build_parabolic_scenario: p must be >= 2");
    if (par.nodes < 1) throw ParameterError("build_parabolic_scenario: need >= 1 node");
    Scenario scn;
    scn.name = "parabolic_p" + detail::fmt_g15(par.p);
    scn.workflow = par.control_radius > 0.0 ? Workflow::Convex : Workflow::PeriodicFixedH;
    scn.grid = TimeGrid{par.b, par.n_steps};
    scn.space = SpaceGrid::line(1.0, par.nodes);
    scn.op = par.add_laplacian ? OperatorSpec::p_laplacian_plus_laplacian(par.p)
                               : OperatorSpec::discrete_p_laplacian(par.p);
    if (par.add_laplacian || par.p == 2.0)
        scn.op.strong_monotonicity_c0 = dirichlet_laplacian_lambda_min(scn.space);
    scn.cfg.inner_method = StepConfig::InnerMethod::DampedNewtonOnSmoothPart;

    if (par.beta == "zero") {
        scn.phi = PhiSpec::zero();
    } else if (par.beta == "abs") {
        scn.phi = PhiSpec::absolute_value_subdifferential();
    } else {
        throw ParameterError("build_parabolic_scenario: unknown beta kind '" + par.beta + "'");
    }

    // The evolution law drives states by the negated right-hand side, so the
    // source enters with its sign flipped: a unit source becomes the constant
    // forcing / drift value -1.
    if (par.f0 == "zero") {
        scn.F.drift = Drift::zero();
        scn.forcing_kind = "zero";
    } else if (par.f0 == "one") {
        scn.F.drift = Drift::constant(-1.0);
        scn.forcing_kind = "constant";
        scn.forcing_value = -1.0;
    } else if (par.f0 == "sin_u") {
        scn.F.drift = Drift::sine(-0.5);
        scn.forcing_kind = "zero";
    } else if (par.f0 == "saturating") {
        scn.F.drift = Drift::saturating(-0.5);
        scn.forcing_kind = "zero";
    } else {
        throw ParameterError("build_parabolic_scenario: unknown f0 kind '" + par.f0 + "'");
    }

    if (par.control_radius > 0.0) {
        scn.F.shape = ControlShape::box(par.control_radius, 1);
        scn.F.gains = {detail::uniform_state(scn.space, 1.0)};
    } else {
        scn.F.shape = ControlShape::none();
    }
    validate_scenario(scn);
    return scn;
}

// ---------------------------------------------------------------------------
// Catalog forcings (values sample the right endpoint of each step).
// ---------------------------------------------------------------------------

inline ForcingPath build_forcing(const Scenario& scn) {
    ForcingPath h(scn.grid, scn.space);
    for (long k = 0; k < scn.grid.n_steps; ++k) {
        const double t = scn.grid.time(k + 1);
        double v = 0.0;
        if (scn.forcing_kind == "constant") {
            v = scn.forcing_value;
        } else if (scn.forcing_kind == "neg_cos") {
            v = -std::cos(t);
        } else if (scn.forcing_kind == "split_pm") {
            // +1 on the first half period, -1 on the second; the running
            // integral peaks at b/2 exactly when n is even.
            v = (2 * k < scn.grid.n_steps) ? 1.0 : -1.0;
        }
        for (long i = 0; i < h.value(k).size(); ++i) h.value(k)[i] = v;
    }
    return h;
}

inline Selection build_selection(const Scenario& scn) {
    if (scn.selection_kind == "minimal_norm") return Selection::minimal_norm();
    if (scn.selection_kind == "centroid") return Selection::centroid();
    if (scn.selection_kind == "vertex")
        return Selection::extremal_constant(scn.selection_index);
    return Selection::extremal_alternating(scn.selection_period);
}

// ---------------------------------------------------------------------------
// Artifact plumbing: run a scenario, write CSV/JSON artifacts atomically.
// ---------------------------------------------------------------------------

struct RunArtifacts {
    std::filesystem::path dir;
    std::vector<std::string> files;  // basenames written, in order
    PeriodicReport report;
    Trajectory trajectory;
};

namespace detail {

inline const char* status_name(bool pass) { return pass ? "pass" : "fail"; }

// Sampled hypothesis checks, assembled into a flat JSON document.
inline nlohmann::ordered_json run_diagnostics(const Scenario& scn) {
    nlohmann::ordered_json d;
    d["scenario"] = scn.name;
    d["workflow"] = workflow_name(scn.workflow);
    d["seed"] = scn.seed;

    const auto samples = sample_states(scn.space, 12, 1.0, scn.seed + 1);
    const std::vector<double> times{0.0, 0.25 * scn.grid.b, 0.5 * scn.grid.b, scn.grid.b};

    const MonotoneDiagnostics mono = check_monotone(scn.op, scn.space, samples, times);
    d["H_A_monotonicity"] = status_name(mono.monotonicity_ok);
    d["H_A_strong_monotonicity"] = status_name(mono.strong_monotonicity_ok);
    d["H_A_coercivity"] = status_name(mono.coercivity_ok);
    d["monotonicity_ratio_min"] = mono.monotonicity_ratio_min;
    d["coercivity_ratio_min"] = mono.coercivity_ratio_min;

    // Resolvent nonexpansiveness of the proximal part on sampled pairs.
    bool prox_ok = true;
    for (size_t i = 0; i + 1 < samples.size(); i += 2) {
        const StateVector pa = prox_phi(scn.phi, scn.grid.tau(), samples[i]);
        const StateVector pb = prox_phi(scn.phi, scn.grid.tau(), samples[i + 1]);
        const double before = h_norm(sub(samples[i], samples[i + 1]), scn.space);
        const double after = h_norm(sub(pa, pb), scn.space);
        if (after > before * (1.0 + 1e-12) + 1e-14) prox_ok = false;
    }
    d["H_phi_resolvent_nonexpansive"] = status_name(prox_ok);

    const bool uses_control = scn.workflow != Workflow::Cauchy &&
                              scn.workflow != Workflow::PeriodicFixedH;
    if (uses_control && scn.growth_k) {
        const GrowthDiagnostics gd = growth_check(scn.F, scn.space, samples, times);
        d["H_F_growth"] = status_name(gd.pass);
        d["growth_max_excess"] = gd.max_excess;
    } else {
        d["H_F_growth"] = "unverified";
    }
    if (uses_control) {
        const LipschitzDiagnostics ld = lipschitz_check(scn.F, scn.space, samples, times);
        d["H_F_lipschitz"] = status_name(ld.pass);
        d["lipschitz_ratio_max"] = ld.max_ratio;
    } else {
        d["H_F_lipschitz"] = "unverified";
    }
    if (uses_control && scn.hartman_m) {
        const HartmanDiagnostics hd =
            hartman_check(scn.F, scn.space, *scn.hartman_m, times, 24, scn.seed + 2);
        d["hartman"] = status_name(hd.pass);
        d["hartman_min_pairing"] = hd.min_pairing;
    } else {
        d["hartman"] = "unverified";
    }
    for (const auto& def : scn.defaults_applied) {
        const size_t eq = def.find('=');
        d["default." + def.substr(0, eq)] = def.substr(eq + 1);
    }
    return d;
}

inline nlohmann::ordered_json flat_report(const Scenario& scn, const PeriodicReport& rep,
                                          const Trajectory& traj) {
    nlohmann::ordered_json j;
    j["scenario"] = scn.name;
    j["workflow"] = workflow_name(scn.workflow);
    j["grid_b"] = scn.grid.b;
    j["grid_n"] = scn.grid.n_steps;
    j["tau"] = scn.grid.tau();
    j["space_size"] = scn.space.size();
    j["periodicity_residual"] = rep.periodicity_residual;
    j["rate_bound"] = rep.rate_bound;
    j["rate_bound_energy"] = rep.rate_bound_energy;
    j["apriori_margin"] = rep.apriori_margin;
    j["ball_margin"] = rep.ball_margin;
    j["outer_iterations"] = rep.outer_iterations;
    j["forcing_fixpoint_gap"] = rep.forcing_fixpoint_gap;
    j["inclusion_residual"] = rep.inclusion_residual;
    j["membership_residual"] = rep.membership_residual;
    j["contraction_estimate_count"] = rep.contraction_estimates.size();
    if (!rep.contraction_estimates.empty()) {
        j["contraction_estimate_min"] =
            *std::min_element(rep.contraction_estimates.begin(), rep.contraction_estimates.end());
        j["contraction_estimate_max"] =
            *std::max_element(rep.contraction_estimates.begin(), rep.contraction_estimates.end());
    }
    j["forcing_gap_count"] = rep.forcing_gap_history.size();
    if (!rep.forcing_gap_history.empty()) {
        j["forcing_gap_first"] = rep.forcing_gap_history.front();
        j["forcing_gap_last"] = rep.forcing_gap_history.back();
    }
    j["stage_count"] = rep.stage_sup_distances.size();
    if (!rep.stage_sup_distances.empty()) {
        j["stage_sup_first"] = rep.stage_sup_distances.front();
        j["stage_sup_last"] = rep.stage_sup_distances.back();
    }
    j["steps"] = rep.stepping.steps;
    j["substeps"] = rep.stepping.substeps;
    j["inner_iterations"] = rep.stepping.inner_iterations;
    j["inner_iterations_max"] = rep.stepping.inner_iterations_max;
    j["max_halving_depth"] = rep.stepping.max_halving_depth;
    j["max_residual"] = rep.stepping.max_residual;
    double final_norm = 0.0, sup_norm = 0.0;
    for (long k = 0; k <= traj.grid.n_steps; ++k)
        sup_norm = std::max(sup_norm, h_norm(traj.state(k), traj.space));
    final_norm = h_norm(traj.state(traj.grid.n_steps), traj.space);
    j["state_sup_norm"] = sup_norm;
    j["state_final_norm"] = final_norm;
    return j;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
    atomic_write_file(path, j.dump(2) + "\n");
}

}  // namespace detail

// Executes the scenario's workflow and writes its artifacts under `dir`.
// On solver failure a machine-readable failure.json lands in `dir` and the
// error is rethrown for the caller's exit code.
inline RunArtifacts run_scenario(const Scenario& scn, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    RunArtifacts art;
    art.dir = dir;

    try {
        const StateVector x0 = detail::uniform_state(scn.space, scn.x0_value);
        MultimapSpec F = scn.F;
        if (scn.hartman_m) F = truncate_multimap(F, *scn.hartman_m);

        PeriodicReport rep;
        Trajectory traj;
        ForcingPath forcing;
        RelaxationRun rel;
        bool have_relaxation = false;

        switch (scn.workflow) {
            case Workflow::Cauchy: {
                forcing = build_forcing(scn);
                traj = solve_cauchy(scn.op, scn.phi, scn.cfg, scn.grid, x0, forcing,
                                    &rep.stepping);
                rep.inclusion_residual =
                    inclusion_defect(scn.op, scn.phi, traj, forcing);
                rep.periodicity_residual =
                    h_norm(sub(traj.state(scn.grid.n_steps), traj.state(0)), scn.space);
                break;
            }
            case Workflow::PeriodicFixedH: {
                forcing = build_forcing(scn);
                auto [t, r] = find_periodic(scn.op, scn.phi, scn.cfg, scn.grid, forcing, x0,
                                            scn.outer_tol, scn.outer_max);
                traj = std::move(t);
                rep = std::move(r);
                const double c4 = combined_strong_monotonicity(scn.op, scn.phi);
                rep.apriori_margin = apriori_check(traj, forcing, scn.phi, c4);
                rep.inclusion_residual = inclusion_defect(scn.op, scn.phi, traj, forcing);
                break;
            }
            case Workflow::Convex:
            case Workflow::Nonconvex: {
                auto sol = solve_convex(scn.op, scn.phi, scn.cfg, scn.grid, F, scn.space,
                                        build_selection(scn), scn.theta, scn.outer_tol,
                                        scn.outer_max);
                traj = std::move(sol.trajectory);
                forcing = std::move(sol.forcing);
                rep = std::move(sol.report);
                break;
            }
            case Workflow::Extremal: {
                auto sol = solve_extremal(scn.op, scn.phi, scn.cfg, scn.grid, F, scn.space,
                                          scn.chatter_delta, scn.outer_tol, scn.outer_max);
                traj = std::move(sol.trajectory);
                forcing = std::move(sol.forcing);
                rep = std::move(sol.report);
                break;
            }
            case Workflow::RegularizedPath: {
                auto sol = solve_regularized_path(scn.op, scn.phi, scn.cfg, scn.grid, F,
                                                  scn.space, build_selection(scn),
                                                  scn.eps_schedule, scn.theta, scn.outer_tol,
                                                  scn.outer_max);
                traj = std::move(sol.trajectory);
                forcing = std::move(sol.forcing);
                rep = std::move(sol.report);
                break;
            }
            case Workflow::Relaxation: {
                auto sol = solve_convex(scn.op, scn.phi, scn.cfg, scn.grid, F, scn.space,
                                        Selection::minimal_norm(), scn.theta, scn.outer_tol,
                                        scn.outer_max);
                rel = relax_approximate(scn.op, scn.phi, scn.cfg, scn.grid, F,
                                        sol.trajectory, sol.forcing, scn.relax_schedule);
                traj = std::move(sol.trajectory);
                forcing = std::move(sol.forcing);
                rep = std::move(sol.report);
                have_relaxation = true;
                break;
            }
        }
        if (scn.hartman_m) rep.ball_margin = ball_invariance_check(traj, *scn.hartman_m);

        save_trajectory_csv(dir / "trajectory.csv", traj);
        art.files.push_back("trajectory.csv");
        detail::write_json(dir / "report.json", detail::flat_report(scn, rep, traj));
        art.files.push_back("report.json");
        if (have_relaxation) {
            save_relaxation_csv(rel, (dir / "relaxation.csv").string());
            art.files.push_back("relaxation.csv");
        }
        detail::write_json(dir / "diagnostics.json", detail::run_diagnostics(scn));
        art.files.push_back("diagnostics.json");
        art.report = std::move(rep);
        art.trajectory = std::move(traj);
        return art;
    } catch (const Error& e) {
        nlohmann::ordered_json f;
        f["scenario"] = scn.name;
        f["workflow"] = workflow_name(scn.workflow);
        f["error"] = [&]() -> std::string {
            if (dynamic_cast<const ConvergenceError*>(&e)) return "convergence";
            if (dynamic_cast<const ConfigError*>(&e)) return "config";
            if (dynamic_cast<const ParameterError*>(&e)) return "parameter";
            if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
            return "error";
        }();
        f["message"] = e.what();
        if (const auto* ce = dynamic_cast<const ConvergenceError*>(&e)) {
            f["last_residual"] = ce->last_residual;
            f["step_index"] = ce->step_index;
            f["iterations"] = ce->iterations;
        }
        detail::write_json(dir / "failure.json", f);
        throw;
    }
}

// ---------------------------------------------------------------------------
// Closed-form reference values, printable from the command line so recorded
// test constants can be re-derived at will.
// ---------------------------------------------------------------------------

struct OracleEntry {
    double value;
    const char* what;
};

inline const std::map<std::string, OracleEntry>& oracle_catalog() {
    static const std::map<std::string, OracleEntry> catalog = [] {
        std::map<std::string, OracleEntry> c;
        c["exp_decay_end"] = {std::exp(-1.0),
                              "u' = -u, u(0) = 1: value at t = 1"};
        c["contraction_rate"] = {std::exp(-1.0),
                                 "one-period contraction factor e^{-c b} at c = 1, b = 1"};
        c["contraction_rate_energy"] = {std::exp(-2.0),
                                        "squared-distance contraction factor e^{-2 c b}"};
        c["cos_periodic_start"] = {0.5,
                                   "-u' = u - cos t, period 2*pi: periodic value at t = 0"};
        c["cos_periodic_amplitude"] = {std::sqrt(0.5),
                                       "amplitude of (cos t + sin t)/2"};
        c["split_weak_norm"] = {0.5,
                                "sliding-window seminorm of the +1/-1 half-period split, b = 1"};
        c["heat_stationary_max"] = {0.125,
                                    "max of the stationary diffusion profile x(1-x)/2"};
        c["soft_threshold_unit"] = {0.95,
                                    "prox of the absolute-value graph at x = 1, tau = 0.05"};
        c["chatter_half_window"] = {0.05,
                                    "window seminorm of a centered +-1 chatter, window 0.1"};
        return c;
    }();
    return catalog;
}

}  // namespace evi
