#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "evi/grid.hpp"

namespace evi {

// ---------------------------------------------------------------------------
// Control geometry.  A control value is a point v in R^m; it enters the
// multimap through per-channel gain fields:  F(t,x) = f(t,x) + sum_j v_j k_j.
// ---------------------------------------------------------------------------

struct ControlShape {
    enum class Kind { None, Interval, Box, FiniteSet };

    Kind kind = Kind::None;
    double lo = 0.0, hi = 0.0;                  // Interval bounds
    double radius = 0.0;                        // Box: channelwise [-radius, radius]
    long box_channels = 1;
    std::vector<std::vector<double>> points;    // FiniteSet members (each of dim m)

    static ControlShape none() { return ControlShape{}; }

    static ControlShape interval(double l, double h) {
        if (!(l <= h)) throw ParameterError("ControlShape::interval: need lo <= hi");
        ControlShape s;
        s.kind = Kind::Interval;
        s.lo = l;
        s.hi = h;
        return s;
    }

    static ControlShape box(double r, long channels) {
        if (!(r >= 0.0)) throw ParameterError("ControlShape::box: radius must be >= 0");
        if (channels < 1) throw ParameterError("ControlShape::box: need >= 1 channel");
        ControlShape s;
        s.kind = Kind::Box;
        s.radius = r;
        s.box_channels = channels;
        return s;
    }

    static ControlShape finite_set(std::vector<std::vector<double>> pts) {
        if (pts.empty()) throw DomainError("ControlShape::finite_set: need >= 1 point");
        const size_t dim = pts.front().size();
        if (dim == 0) throw DomainError("ControlShape::finite_set: points must have >= 1 coordinate");
        for (const auto& p : pts)
            if (p.size() != dim) throw DimensionError("ControlShape::finite_set: ragged points");
        ControlShape s;
        s.kind = Kind::FiniteSet;
        s.points = std::move(pts);
        return s;
    }

    long channels() const {
        switch (kind) {
            case Kind::None: return 0;
            case Kind::Interval: return 1;
            case Kind::Box: return box_channels;
            case Kind::FiniteSet: return static_cast<long>(points.front().size());
        }
        return 0;
    }

    long vertex_count() const {
        switch (kind) {
            case Kind::None: return 1;
            case Kind::Interval: return 2;
            case Kind::Box: return 1L << box_channels;
            case Kind::FiniteSet: return static_cast<long>(points.size());
        }
        return 1;
    }

    // Vertex with the given index as a control point in R^m.
    std::vector<double> vertex(long idx) const {
        switch (kind) {
            case Kind::None: return {};
            case Kind::Interval: return {idx == 0 ? lo : hi};
            case Kind::Box: {
                std::vector<double> v(static_cast<size_t>(box_channels));
                for (long j = 0; j < box_channels; ++j)
                    v[static_cast<size_t>(j)] = ((idx >> j) & 1L) ? radius : -radius;
                return v;
            }
            case Kind::FiniteSet: return points[static_cast<size_t>(idx)];
        }
        return {};
    }

    // Per-channel clamp for the convex geometries.
    double clamp_channel(double c, long /*j*/) const {
        switch (kind) {
            case Kind::Interval: return std::clamp(c, lo, hi);
            case Kind::Box: return std::clamp(c, -radius, radius);
            default: throw ParameterError("ControlShape: channel clamp needs interval or box geometry");
        }
    }

    double channel_lo(long /*j*/) const {
        switch (kind) {
            case Kind::Interval: return lo;
            case Kind::Box: return -radius;
            default: throw ParameterError("ControlShape: channel bounds need interval or box geometry");
        }
    }

    double channel_hi(long /*j*/) const {
        switch (kind) {
            case Kind::Interval: return hi;
            case Kind::Box: return radius;
            default: throw ParameterError("ControlShape: channel bounds need interval or box geometry");
        }
    }
};

// ---------------------------------------------------------------------------
// Scalar drift f(t, z, x): a small catalog plus a custom hook; l0 is the
// declared Lipschitz modulus in x, k0 the declared growth bound.
// ---------------------------------------------------------------------------

struct Drift {
    enum class Kind { Zero, Constant, Linear, Sine, Saturating, Custom };

    Kind kind = Kind::Zero;
    double coeff = 0.0;
    std::function<double(double t, double z, double x)> fn;
    double lipschitz_l0 = 0.0;
    double growth_k0 = 0.0;

    static Drift zero() { return Drift{}; }

    static Drift constant(double c) {
        Drift d;
        d.kind = Kind::Constant;
        d.coeff = c;
        d.growth_k0 = std::abs(c);
        return d;
    }

    static Drift linear(double a) {
        Drift d;
        d.kind = Kind::Linear;
        d.coeff = a;
        d.lipschitz_l0 = std::abs(a);
        d.growth_k0 = std::abs(a);
        return d;
    }

    static Drift sine(double amp) {
        Drift d;
        d.kind = Kind::Sine;
        d.coeff = amp;
        d.lipschitz_l0 = std::abs(amp);
        d.growth_k0 = std::abs(amp);
        return d;
    }

    // Bounded saturating drift amp * x / (1 + |x|).
    static Drift saturating(double amp) {
        Drift d;
        d.kind = Kind::Saturating;
        d.coeff = amp;
        d.lipschitz_l0 = std::abs(amp);
        d.growth_k0 = std::abs(amp);
        return d;
    }

    static Drift custom(std::function<double(double, double, double)> f, double l0, double k0) {
        Drift d;
        d.kind = Kind::Custom;
        d.fn = std::move(f);
        d.lipschitz_l0 = l0;
        d.growth_k0 = k0;
        return d;
    }

    double eval(double t, double z, double x) const {
        switch (kind) {
            case Kind::Zero: return 0.0;
            case Kind::Constant: return coeff;
            case Kind::Linear: return coeff * x;
            case Kind::Sine: return coeff * std::sin(x);
            case Kind::Saturating: return coeff * x / (1.0 + std::abs(x));
            case Kind::Custom: return fn(t, z, x);
        }
        return 0.0;
    }
};

// ---------------------------------------------------------------------------
// Radial retraction onto the pivot-norm ball of radius M.
// ---------------------------------------------------------------------------

inline StateVector radial_retraction(const StateVector& x, const SpaceGrid& g, double M) {
    if (!(M > 0.0)) throw ParameterError("radial_retraction: M must be > 0");
    const double n = h_norm(x, g);
    if (n <= M) return x;
    return scaled(x, M / n);
}

// ---------------------------------------------------------------------------
// The multimap F(t,x) = f(t,x) + sum_j v_j k_j, v ranging over the control
// shape.  An optional truncation radius composes the state argument with the
// radial retraction.  Multi-channel gain fields must be pairwise orthogonal
// in the pivot inner product so that channel projections decouple exactly.
// ---------------------------------------------------------------------------

struct MultimapSpec {
    Drift drift;
    ControlShape shape;
    std::vector<StateVector> gains;     // one field per channel
    std::optional<double> hartman_M;    // declared inward-pointing radius
    std::optional<double> trunc_M;      // applied truncation radius
    double growth_k = 0.0;              // declared bound |F(t,x)| <= k (1 + |x|)
};

inline void validate_multimap(const MultimapSpec& F, const SpaceGrid& g) {
    const long m = F.shape.channels();
    if (static_cast<long>(F.gains.size()) != m)
        throw DimensionError("multimap: " + std::to_string(m) + " channels but " +
                             std::to_string(F.gains.size()) + " gain fields");
    for (const auto& gain : F.gains) {
        check_grid_size(gain, g, "multimap gain");
        if (h_norm(gain, g) <= 0.0) throw ParameterError("multimap: gain field must be nonzero");
    }
    for (size_t i = 0; i < F.gains.size(); ++i)
        for (size_t j = i + 1; j < F.gains.size(); ++j) {
            const double ip = std::abs(dot_h(F.gains[i], F.gains[j], g));
            if (ip > 1e-10 * h_norm(F.gains[i], g) * h_norm(F.gains[j], g))
                throw ParameterError("multimap: gain fields of different channels must be orthogonal");
        }
    if (F.trunc_M && !(*F.trunc_M > 0.0))
        throw ParameterError("multimap: truncation radius must be > 0");
}

inline MultimapSpec truncate_multimap(const MultimapSpec& F, double M) {
    if (!(M > 0.0)) throw ParameterError("truncate_multimap: M must be > 0");
    MultimapSpec out = F;
    out.trunc_M = M;
    return out;
}

// Drift part f(t, x) as a state vector (truncation applied to the argument).
inline StateVector drift_state(const MultimapSpec& F, const SpaceGrid& g, double t,
                               const StateVector& u) {
    check_grid_size(u, g, "drift_state");
    const StateVector* arg = &u;
    StateVector retracted;
    if (F.trunc_M) {
        retracted = radial_retraction(u, g, *F.trunc_M);
        arg = &retracted;
    }
    StateVector out(u.size());
    for (long i = 0; i < u.size(); ++i) out[i] = F.drift.eval(t, g.coord0(i), (*arg)[i]);
    return out;
}

// Member of F(t,u) for the control point v.
inline StateVector multimap_member(const MultimapSpec& F, const SpaceGrid& g, double t,
                                   const StateVector& u, const std::vector<double>& v) {
    StateVector out = drift_state(F, g, t, u);
    if (static_cast<long>(v.size()) != F.shape.channels())
        throw DimensionError("multimap_member: control point has wrong dimension");
    for (size_t j = 0; j < v.size(); ++j) axpy(out, v[j], F.gains[j]);
    return out;
}

namespace detail {

// Decompose the residual r into channel coefficients plus an orthogonal rest.
// Returns the coefficients; |rest|^2 goes to rest2 if requested.
inline std::vector<double> channel_coefficients(const MultimapSpec& F, const SpaceGrid& g,
                                                const StateVector& r, double* rest2 = nullptr) {
    std::vector<double> c(F.gains.size(), 0.0);
    double explained = 0.0;
    for (size_t j = 0; j < F.gains.size(); ++j) {
        const double gg = dot_h(F.gains[j], F.gains[j], g);
        c[j] = dot_h(r, F.gains[j], g) / gg;
        explained += c[j] * c[j] * gg;
    }
    if (rest2) *rest2 = std::max(0.0, dot_h(r, r, g) - explained);
    return c;
}

}  // namespace detail

// Distance in the pivot norm from y to the set F(t,u).  Exact for interval and
// box geometries (channelwise clamping on orthogonal gains) and for finite
// sets (enumeration).
inline double f_distance(const MultimapSpec& F, const SpaceGrid& g, double t,
                         const StateVector& u, const StateVector& y) {
    const StateVector r = sub(y, drift_state(F, g, t, u));
    if (F.shape.kind == ControlShape::Kind::None) return h_norm(r, g);
    if (F.shape.kind == ControlShape::Kind::FiniteSet) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& p : F.shape.points) {
            StateVector diff = r;
            for (size_t j = 0; j < p.size(); ++j) axpy(diff, -p[j], F.gains[j]);
            best = std::min(best, h_norm(diff, g));
        }
        return best;
    }
    double rest2 = 0.0;
    const std::vector<double> c = detail::channel_coefficients(F, g, r, &rest2);
    double acc = rest2;
    for (size_t j = 0; j < c.size(); ++j) {
        const double cl = F.shape.clamp_channel(c[j], static_cast<long>(j));
        const double gg = dot_h(F.gains[j], F.gains[j], g);
        acc += (c[j] - cl) * (c[j] - cl) * gg;
    }
    return std::sqrt(acc);
}

inline bool membership(const MultimapSpec& F, const SpaceGrid& g, double t, const StateVector& u,
                       const StateVector& y, double tol) {
    return f_distance(F, g, t, u, y) <= tol;
}

// ---------------------------------------------------------------------------
// Pointwise selections.
// ---------------------------------------------------------------------------

struct Selection {
    enum class Mode { MinimalNorm, Centroid, ExtremalVertex, NearTarget };

    Mode mode = Mode::MinimalNorm;
    std::function<long(long step)> schedule;   // ExtremalVertex: step -> vertex index
    ForcingPath target;                        // NearTarget
    double eps = 1e-3;                         // NearTarget bookkeeping tolerance

    static Selection minimal_norm() { return Selection{}; }

    static Selection centroid() {
        Selection s;
        s.mode = Mode::Centroid;
        return s;
    }

    static Selection extremal_constant(long vertex_index) {
        Selection s;
        s.mode = Mode::ExtremalVertex;
        s.schedule = [vertex_index](long) { return vertex_index; };
        return s;
    }

    // Flip between the first and last vertex every `period` steps.
    static Selection extremal_alternating(long period) {
        if (period < 1) throw ParameterError("Selection: alternating period must be >= 1");
        Selection s;
        s.mode = Mode::ExtremalVertex;
        s.schedule = [period](long k) { return (k / period) % 2; };
        return s;
    }

    static Selection near_target(ForcingPath tgt, double eps_tol) {
        if (!(eps_tol > 0.0)) throw ParameterError("Selection::near_target: eps must be > 0");
        Selection s;
        s.mode = Mode::NearTarget;
        s.target = std::move(tgt);
        s.eps = eps_tol;
        return s;
    }
};

// Evaluate the selection at forcing slot `step` (time t, state u).
inline StateVector select(const MultimapSpec& F, const Selection& sel, const SpaceGrid& g,
                          double t, long step, const StateVector& u) {
    const StateVector f = drift_state(F, g, t, u);
    const auto& shape = F.shape;
    const long m = shape.channels();

    auto with_point = [&](const std::vector<double>& v) {
        StateVector out = f;
        for (size_t j = 0; j < v.size(); ++j) axpy(out, v[j], F.gains[j]);
        return out;
    };

    if (shape.kind == ControlShape::Kind::None) return f;

    switch (sel.mode) {
        case Selection::Mode::MinimalNorm: {
            if (shape.kind == ControlShape::Kind::FiniteSet) {
                long best = 0;
                double best_norm = std::numeric_limits<double>::infinity();
                for (long i = 0; i < shape.vertex_count(); ++i) {
                    const double n = h_norm(with_point(shape.vertex(i)), g);
                    if (n < best_norm) {
                        best_norm = n;
                        best = i;
                    }
                }
                return with_point(shape.vertex(best));
            }
            const std::vector<double> c = detail::channel_coefficients(F, g, f, nullptr);
            std::vector<double> v(static_cast<size_t>(m));
            for (long j = 0; j < m; ++j)
                v[static_cast<size_t>(j)] = shape.clamp_channel(-c[static_cast<size_t>(j)], j);
            return with_point(v);
        }
        case Selection::Mode::Centroid: {
            if (shape.kind == ControlShape::Kind::FiniteSet)
                throw ParameterError("Selection: centroid needs a convex control shape");
            std::vector<double> v(static_cast<size_t>(m));
            if (shape.kind == ControlShape::Kind::Interval) v[0] = 0.5 * (shape.lo + shape.hi);
            // Box midpoint is the origin.
            return with_point(v);
        }
        case Selection::Mode::ExtremalVertex: {
            if (!sel.schedule) throw ParameterError("Selection: extremal vertex without schedule");
            const long idx = sel.schedule(step);
            if (idx < 0 || idx >= shape.vertex_count())
                throw ParameterError("Selection: vertex index " + std::to_string(idx) +
                                     " outside [0, " + std::to_string(shape.vertex_count()) + ")");
            return with_point(shape.vertex(idx));
        }
        case Selection::Mode::NearTarget: {
            if (sel.target.values.empty())
                throw ParameterError("Selection: near_target without target path");
            if (step < 0 || step >= static_cast<long>(sel.target.values.size()))
                throw DimensionError("Selection: step outside the target path");
            const StateVector r = sub(sel.target.value(step), f);
            if (shape.kind == ControlShape::Kind::FiniteSet) {
                long best = 0;
                double best_d = std::numeric_limits<double>::infinity();
                for (long i = 0; i < shape.vertex_count(); ++i) {
                    StateVector diff = r;
                    const auto v = shape.vertex(i);
                    for (size_t j = 0; j < v.size(); ++j) axpy(diff, -v[j], F.gains[j]);
                    const double d = h_norm(diff, g);
                    if (d < best_d) {
                        best_d = d;
                        best = i;
                    }
                }
                return with_point(shape.vertex(best));
            }
            const std::vector<double> c = detail::channel_coefficients(F, g, r, nullptr);
            std::vector<double> v(static_cast<size_t>(m));
            for (long j = 0; j < m; ++j)
                v[static_cast<size_t>(j)] = shape.clamp_channel(c[static_cast<size_t>(j)], j);
            return with_point(v);
        }
    }
    return f;
}

// Selection along a trajectory; the slot k is driven by the step's right
// endpoint (t_{k+1}, u_{k+1}) to stay consistent with the implicit stepper.
inline ForcingPath select_path(const MultimapSpec& F, const Selection& sel, const Trajectory& u) {
    ForcingPath h(u.grid, u.space);
    for (long k = 0; k < u.grid.n_steps; ++k)
        h.value(k) = select(F, sel, u.space, u.grid.time(k + 1), k, u.state(k + 1));
    return h;
}

// ---------------------------------------------------------------------------
// Sampled hypothesis diagnostics.
// ---------------------------------------------------------------------------

struct HartmanDiagnostics {
    double min_pairing = std::numeric_limits<double>::infinity();
    bool pass = false;
    long samples_checked = 0;
};

// Minimum of (h, x) over sampled |x| = M and all vertices h of F(t, x).
inline HartmanDiagnostics hartman_check(const MultimapSpec& F, const SpaceGrid& g, double M,
                                        const std::vector<double>& times, int n_directions,
                                        unsigned long seed) {
    if (!(M > 0.0)) throw ParameterError("hartman_check: M must be > 0");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise;
    HartmanDiagnostics d;
    for (int s = 0; s < n_directions; ++s) {
        StateVector dir(g.size());
        double n = 0.0;
        while (n <= 1e-12) {
            for (long i = 0; i < dir.size(); ++i) dir[i] = noise(rng);
            n = h_norm(dir, g);
        }
        const StateVector x = scaled(dir, M / n);
        for (double t : times) {
            for (long vi = 0; vi < F.shape.vertex_count(); ++vi) {
                const StateVector h = multimap_member(F, g, t, x, F.shape.vertex(vi));
                d.min_pairing = std::min(d.min_pairing, dot_h(h, x, g));
                ++d.samples_checked;
            }
        }
    }
    d.pass = d.min_pairing >= -1e-9;
    return d;
}

struct GrowthDiagnostics {
    double max_excess = -std::numeric_limits<double>::infinity();  // |h| - k(1+|x|)
    bool pass = false;
};

// Check the declared growth bound sup_{h in F(t,x)} |h| <= k (1 + |x|) on samples.
inline GrowthDiagnostics growth_check(const MultimapSpec& F, const SpaceGrid& g,
                                      const std::vector<StateVector>& samples,
                                      const std::vector<double>& times) {
    GrowthDiagnostics d;
    for (double t : times)
        for (const auto& x : samples)
            for (long vi = 0; vi < F.shape.vertex_count(); ++vi) {
                const double hn = h_norm(multimap_member(F, g, t, x, F.shape.vertex(vi)), g);
                d.max_excess = std::max(d.max_excess, hn - F.growth_k * (1.0 + h_norm(x, g)));
            }
    d.pass = d.max_excess <= 1e-9;
    return d;
}

struct LipschitzDiagnostics {
    double max_ratio = 0.0;   // hausdorff(F(t,x), F(t,y)) / |x - y|
    bool pass = false;
};

// Hausdorff-Lipschitz estimate over vertex images, pivot norm geometry.
inline LipschitzDiagnostics lipschitz_check(const MultimapSpec& F, const SpaceGrid& g,
                                            const std::vector<StateVector>& samples,
                                            const std::vector<double>& times) {
    LipschitzDiagnostics d;
    const double scale = std::sqrt(g.cell_volume());
    for (double t : times)
        for (size_t i = 0; i < samples.size(); ++i)
            for (size_t j = i + 1; j < samples.size(); ++j) {
                const double dx = h_norm(sub(samples[i], samples[j]), g);
                if (dx <= 1e-12) continue;
                PointSet a, b;
                for (long vi = 0; vi < F.shape.vertex_count(); ++vi) {
                    a.push_back(multimap_member(F, g, t, samples[i], F.shape.vertex(vi)).v);
                    b.push_back(multimap_member(F, g, t, samples[j], F.shape.vertex(vi)).v);
                }
                d.max_ratio = std::max(d.max_ratio, scale * hausdorff_finite(a, b) / dx);
            }
    d.pass = d.max_ratio <= F.drift.lipschitz_l0 + 1e-9;
    return d;
}

}  // namespace evi
