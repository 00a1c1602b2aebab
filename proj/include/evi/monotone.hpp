#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "evi/grid.hpp"

namespace evi {

// ---------------------------------------------------------------------------
// Time modulation m(t) = base + sin_amp * sin(omega t), kept strictly positive.
// ---------------------------------------------------------------------------

struct TimeModulation {
    double base = 1.0;
    double sin_amp = 0.0;
    double omega = 0.0;

    double operator()(double t) const { return base + sin_amp * std::sin(omega * t); }
    double min_value() const { return base - std::abs(sin_amp); }
};

// ---------------------------------------------------------------------------
// The principal operator A(t, .) on the discretized state space.
//
// Built-in kinds:
//   scalar_linear(a)            A(u) = a u                (per node)
//   discrete_p_laplacian(p)     graph p-Laplacian on the space grid
//   p_laplacian_plus_laplacian  p-Laplacian plus the p = 2 stencil
//   custom_table                user-supplied callbacks (apply + optional
//                               Jacobian), used e.g. for the scalar power law
// Declared constants travel with the operator description; sampled
// diagnostics check them.
// ---------------------------------------------------------------------------

struct OperatorSpec {
    enum class Kind { ScalarLinear, PLaplacian, PLaplacianPlusLaplacian, CustomTable };

    // Jacobian layout a custom operator can expose for the Newton inner solver.
    using ApplyFn = std::function<void(double t, const StateVector&, const SpaceGrid&, StateVector&)>;
    using DiagJacFn = std::function<void(double t, const StateVector&, const SpaceGrid&, StateVector&)>;

    Kind kind = Kind::ScalarLinear;
    std::string label = "scalar_linear";
    double a = 1.0;   // scalar_linear coefficient
    double p = 2.0;   // growth exponent (>= 2)
    std::optional<TimeModulation> modulation;

    // Declared hypothesis constants (pivot-norm sense for the monotonicity one).
    double strong_monotonicity_c0 = 0.0;
    double coercivity_c0 = 1.0;
    double growth_a1 = 0.0;
    double growth_c1 = 1.0;

    // custom_table entries
    ApplyFn custom_apply;
    DiagJacFn custom_diag_jacobian;   // optional; enables Newton for custom kinds
    double regularization_eps = 0.0;  // added multiple of the identity

    static OperatorSpec scalar_linear(double coeff) {
        if (!(coeff >= 0.0)) throw ParameterError("scalar_linear: coefficient must be >= 0");
        OperatorSpec op;
        op.kind = Kind::ScalarLinear;
        op.label = "scalar_linear";
        op.a = coeff;
        op.strong_monotonicity_c0 = coeff;
        op.coercivity_c0 = coeff;
        op.growth_c1 = coeff;
        return op;
    }

    static OperatorSpec discrete_p_laplacian(double pexp) {
        if (!(pexp >= 2.0)) throw ParameterError("discrete_p_laplacian: p must be >= 2");
        OperatorSpec op;
        op.kind = Kind::PLaplacian;
        op.label = "discrete_p_laplacian";
        op.p = pexp;
        op.coercivity_c0 = 1.0;   // exact discrete identity <A u, u> = |D u|_p^p
        return op;
    }

    static OperatorSpec p_laplacian_plus_laplacian(double pexp) {
        OperatorSpec op = discrete_p_laplacian(pexp);
        op.kind = Kind::PLaplacianPlusLaplacian;
        op.label = "p_laplacian_plus_laplacian";
        return op;
    }

    // Nodewise power law A(u) = |u|^(p-2) u; monotone, coercive, and not
    // strongly monotone near zero for p > 2.
    static OperatorSpec scalar_power(double pexp) {
        if (!(pexp >= 2.0)) throw ParameterError("scalar_power: p must be >= 2");
        OperatorSpec op;
        op.kind = Kind::CustomTable;
        op.label = "scalar_power";
        op.p = pexp;
        op.coercivity_c0 = 1.0;
        op.strong_monotonicity_c0 = (pexp == 2.0) ? 1.0 : 0.0;
        op.custom_apply = [pexp](double, const StateVector& u, const SpaceGrid&, StateVector& out) {
            for (long i = 0; i < u.size(); ++i)
                out[i] = std::pow(std::abs(u[i]), pexp - 2.0) * u[i];
        };
        op.custom_diag_jacobian = [pexp](double, const StateVector& u, const SpaceGrid&, StateVector& out) {
            for (long i = 0; i < u.size(); ++i)
                out[i] = (pexp - 1.0) * std::pow(std::abs(u[i]), pexp - 2.0);
        };
        return op;
    }
};

namespace detail {

inline double flux(double d, double p) { return std::pow(std::abs(d), p - 2.0) * d; }

// Graph p-Laplacian with one-sided differences and zero Dirichlet boundary.
inline void apply_p_laplacian(const StateVector& u, const SpaceGrid& g, double p, StateVector& out) {
    if (g.kind == SpaceGrid::Kind::Scalar)
        throw ParameterError("discrete_p_laplacian needs a spatial grid; use scalar_linear or "
                             "scalar_power on scalar problems");
    if (g.kind == SpaceGrid::Kind::Line) {
        const long n = g.nodes[0];
        const double hx = g.h[0];
        for (long i = 0; i < n; ++i) {
            const double left = (i == 0) ? 0.0 : u[i - 1];
            const double right = (i + 1 == n) ? 0.0 : u[i + 1];
            const double dl = (u[i] - left) / hx;
            const double dr = (right - u[i]) / hx;
            out[i] += (flux(dl, p) - flux(dr, p)) / hx;
        }
        return;
    }
    const long nx = g.nodes[0], ny = g.nodes[1];
    const double hx = g.h[0], hy = g.h[1];
    auto at = [&](long ix, long iy) -> double {
        if (ix < 0 || ix >= nx || iy < 0 || iy >= ny) return 0.0;
        return u[iy * nx + ix];
    };
    for (long iy = 0; iy < ny; ++iy)
        for (long ix = 0; ix < nx; ++ix) {
            const double c = at(ix, iy);
            const double dxl = (c - at(ix - 1, iy)) / hx;
            const double dxr = (at(ix + 1, iy) - c) / hx;
            const double dyl = (c - at(ix, iy - 1)) / hy;
            const double dyr = (at(ix, iy + 1) - c) / hy;
            out[iy * nx + ix] += (flux(dxl, p) - flux(dxr, p)) / hx +
                                 (flux(dyl, p) - flux(dyr, p)) / hy;
        }
}

}  // namespace detail

// Evaluate A(t, u).  Throws NumericError if the result is not finite.
inline StateVector apply_A(const OperatorSpec& op, double t, const StateVector& u, const SpaceGrid& g) {
    check_grid_size(u, g, "apply_A");
    StateVector out(u.size());
    switch (op.kind) {
        case OperatorSpec::Kind::ScalarLinear:
            for (long i = 0; i < u.size(); ++i) out[i] = op.a * u[i];
            break;
        case OperatorSpec::Kind::PLaplacian:
            detail::apply_p_laplacian(u, g, op.p, out);
            break;
        case OperatorSpec::Kind::PLaplacianPlusLaplacian:
            detail::apply_p_laplacian(u, g, op.p, out);
            detail::apply_p_laplacian(u, g, 2.0, out);
            break;
        case OperatorSpec::Kind::CustomTable:
            if (!op.custom_apply) throw ParameterError("apply_A: custom_table without apply callback");
            op.custom_apply(t, u, g, out);
            break;
    }
    if (op.modulation) {
        const double m = (*op.modulation)(t);
        for (long i = 0; i < out.size(); ++i) out[i] *= m;
    }
    if (op.regularization_eps != 0.0)
        for (long i = 0; i < u.size(); ++i) out[i] += op.regularization_eps * u[i];
    if (!all_finite(out))
        throw NumericError("apply_A: nonfinite entries in result (" + op.label + ")");
    return out;
}

// A + eps * identity; declared strong monotonicity grows by eps.
inline OperatorSpec regularize(const OperatorSpec& op, double eps) {
    if (!(eps >= 0.0)) throw ParameterError("regularize: eps must be >= 0");
    OperatorSpec out = op;
    out.regularization_eps += eps;
    out.strong_monotonicity_c0 += eps;
    if (eps > 0.0) out.label = op.label + "+eps_id";
    return out;
}

// ---------------------------------------------------------------------------
// Nodewise convex potential: phi(u) = sum_i vol * j(u_i) with a maximal
// monotone scalar graph beta = derivative of j.  The step resolvent
// (I + tau beta)^{-1} is available in closed form for every built-in graph.
// ---------------------------------------------------------------------------

struct PhiSpec {
    enum class Graph { Zero, Linear, AbsSubdifferential, IndicatorInterval, Custom };

    Graph graph = Graph::Zero;
    std::string label = "zero";
    double lambda = 0.0;   // Linear: beta(x) = lambda x
    double lo = -1.0;      // IndicatorInterval bounds, require lo < 0 < hi
    double hi = 1.0;
    // Custom: user-supplied resolvent x -> (I + tau beta)^{-1}(x); must be
    // nonexpansive in x for each tau > 0.
    std::function<double(double tau, double x)> custom_resolvent;
    double strong_monotonicity_c0 = 0.0;
    double beta_zero_bound = 0.0;   // sup |beta(0)|, must be finite

    static PhiSpec zero() { return PhiSpec{}; }

    static PhiSpec linear(double lam) {
        if (!(lam >= 0.0)) throw ParameterError("PhiSpec::linear: lambda must be >= 0");
        PhiSpec s;
        s.graph = Graph::Linear;
        s.label = "linear";
        s.lambda = lam;
        s.strong_monotonicity_c0 = lam;
        return s;
    }

    static PhiSpec absolute_value_subdifferential() {
        PhiSpec s;
        s.graph = Graph::AbsSubdifferential;
        s.label = "abs_subdifferential";
        s.beta_zero_bound = 1.0;
        return s;
    }

    static PhiSpec indicator_interval(double l, double r) {
        if (!(l < 0.0 && 0.0 < r))
            throw ParameterError("PhiSpec::indicator_interval: need lo < 0 < hi so that beta(0) stays bounded");
        PhiSpec s;
        s.graph = Graph::IndicatorInterval;
        s.label = "indicator_interval";
        s.lo = l;
        s.hi = r;
        return s;
    }

    // |subgradient of phi at 0| in the pivot norm on grid g.
    double subgradient_norm_at_zero(const SpaceGrid& g) const {
        return beta_zero_bound * std::sqrt(g.cell_volume() * static_cast<double>(g.size()));
    }
};

namespace detail {
inline double resolvent_scalar(const PhiSpec& phi, double tau, double x) {
    switch (phi.graph) {
        case PhiSpec::Graph::Zero: return x;
        case PhiSpec::Graph::Linear: return x / (1.0 + tau * phi.lambda);
        case PhiSpec::Graph::AbsSubdifferential: {
            const double m = std::abs(x) - tau;
            return m > 0.0 ? (x > 0.0 ? m : -m) : 0.0;
        }
        case PhiSpec::Graph::IndicatorInterval: return std::clamp(x, phi.lo, phi.hi);
        case PhiSpec::Graph::Custom:
            if (!phi.custom_resolvent) throw ParameterError("prox_phi: custom graph without resolvent");
            return phi.custom_resolvent(tau, x);
    }
    return x;
}

// Derivative of the resolvent (a.e.), used by the Newton inner solver.
inline double resolvent_scalar_deriv(const PhiSpec& phi, double tau, double x) {
    switch (phi.graph) {
        case PhiSpec::Graph::Zero: return 1.0;
        case PhiSpec::Graph::Linear: return 1.0 / (1.0 + tau * phi.lambda);
        case PhiSpec::Graph::AbsSubdifferential: return std::abs(x) > tau ? 1.0 : 0.0;
        case PhiSpec::Graph::IndicatorInterval: return (x > phi.lo && x < phi.hi) ? 1.0 : 0.0;
        case PhiSpec::Graph::Custom: {
            const double d = 1e-7 * (1.0 + std::abs(x));
            return (resolvent_scalar(phi, tau, x + d) - resolvent_scalar(phi, tau, x - d)) / (2.0 * d);
        }
    }
    return 1.0;
}
}  // namespace detail

// Nodewise resolvent u = (I + tau * beta)^{-1}(x).
inline StateVector prox_phi(const PhiSpec& phi, double tau, const StateVector& x) {
    if (!(tau > 0.0)) throw ParameterError("prox_phi: tau must be > 0");
    StateVector out(x.size());
    for (long i = 0; i < x.size(); ++i) out[i] = detail::resolvent_scalar(phi, tau, x[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Sampled diagnostics for the declared operator constants.
// ---------------------------------------------------------------------------

struct MonotoneDiagnostics {
    double monotonicity_ratio_min = std::numeric_limits<double>::infinity();
    double coercivity_ratio_min = std::numeric_limits<double>::infinity();
    double declared_strong_monotonicity = 0.0;
    double declared_coercivity = 0.0;
    long pairs_checked = 0;
    long degenerate_skipped = 0;
    bool monotonicity_ok = true;   // ratio_min >= 0 (monotone at all)
    bool strong_monotonicity_ok = true;
    bool coercivity_ok = true;
};

// Probe monotonicity <A(t,u)-A(t,v), u-v>/|u-v|^2 and coercivity
// <A(t,u), u>/|u|_X^p on caller-supplied sample states.
inline MonotoneDiagnostics check_monotone(const OperatorSpec& op, const SpaceGrid& g,
                                          const std::vector<StateVector>& samples,
                                          const std::vector<double>& times) {
    MonotoneDiagnostics d;
    d.declared_strong_monotonicity = op.strong_monotonicity_c0;
    d.declared_coercivity = op.coercivity_c0;
    const double tiny = 1e-14;
    for (double t : times) {
        for (size_t i = 0; i < samples.size(); ++i) {
            const StateVector au = apply_A(op, t, samples[i], g);
            const double xn = x_norm(samples[i], g, op.p);
            if (xn > tiny) {
                const double ratio = dot_h(au, samples[i], g) / std::pow(xn, op.p);
                d.coercivity_ratio_min = std::min(d.coercivity_ratio_min, ratio);
            } else {
                ++d.degenerate_skipped;
            }
            for (size_t j = i + 1; j < samples.size(); ++j) {
                const StateVector diff = sub(samples[i], samples[j]);
                const double dn2 = dot_h(diff, diff, g);
                if (dn2 <= tiny) {
                    ++d.degenerate_skipped;
                    continue;
                }
                const StateVector av = apply_A(op, t, samples[j], g);
                const double ratio = dot_h(sub(au, av), diff, g) / dn2;
                d.monotonicity_ratio_min = std::min(d.monotonicity_ratio_min, ratio);
                ++d.pairs_checked;
            }
        }
    }
    const double slack = 1e-9;
    d.monotonicity_ok = d.monotonicity_ratio_min >= -slack;
    d.strong_monotonicity_ok = d.monotonicity_ratio_min >= op.strong_monotonicity_c0 - slack -
                               1e-6 * std::abs(op.strong_monotonicity_c0);
    d.coercivity_ok = d.coercivity_ratio_min >= op.coercivity_c0 - slack -
                      1e-6 * std::abs(op.coercivity_c0);
    return d;
}

// Gaussian sample states for the diagnostics above (deterministic by seed).
inline std::vector<StateVector> sample_states(const SpaceGrid& g, int count, double amplitude,
                                              unsigned long seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, amplitude);
    std::vector<StateVector> out;
    out.reserve(static_cast<size_t>(count));
    for (int s = 0; s < count; ++s) {
        StateVector x(g.size());
        for (long i = 0; i < x.size(); ++i) x[i] = noise(rng);
        out.push_back(std::move(x));
    }
    return out;
}

}  // namespace evi
