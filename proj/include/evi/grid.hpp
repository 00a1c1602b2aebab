#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "evi/errors.hpp"

namespace evi {

// ---------------------------------------------------------------------------
// Time grid: n_steps uniform implicit-Euler steps on [0, b].
// ---------------------------------------------------------------------------

struct TimeGrid {
    double b = 1.0;
    long n_steps = 1;

    TimeGrid() = default;
    TimeGrid(double horizon, long steps) : b(horizon), n_steps(steps) {
        if (!(b > 0.0)) throw ParameterError("TimeGrid: horizon b must be > 0");
        if (n_steps < 1) throw ParameterError("TimeGrid: n_steps must be >= 1");
    }

    double tau() const { return b / static_cast<double>(n_steps); }
    double time(long k) const { return tau() * static_cast<double>(k); }
};

// ---------------------------------------------------------------------------
// Space grid: degenerate scalar cell, an interval, or a rectangle, with
// homogeneous Dirichlet boundary and uniform interior nodes.
// ---------------------------------------------------------------------------

struct SpaceGrid {
    enum class Kind { Scalar, Line, Rect };

    Kind kind = Kind::Scalar;
    double extent[2] = {1.0, 1.0};   // domain side lengths
    long nodes[2] = {1, 1};          // interior nodes per axis
    double h[2] = {1.0, 1.0};        // mesh widths

    static SpaceGrid scalar() { return SpaceGrid{}; }

    static SpaceGrid line(double len, long interior_nodes) {
        if (!(len > 0.0)) throw ParameterError("SpaceGrid::line: extent must be > 0");
        if (interior_nodes < 1) throw ParameterError("SpaceGrid::line: need >= 1 interior node");
        SpaceGrid g;
        g.kind = Kind::Line;
        g.extent[0] = len;
        g.nodes[0] = interior_nodes;
        g.h[0] = len / static_cast<double>(interior_nodes + 1);
        return g;
    }

    static SpaceGrid rectangle(double lx, double ly, long nx, long ny) {
        if (!(lx > 0.0) || !(ly > 0.0)) throw ParameterError("SpaceGrid::rectangle: extents must be > 0");
        if (nx < 1 || ny < 1) throw ParameterError("SpaceGrid::rectangle: need >= 1 interior node per axis");
        SpaceGrid g;
        g.kind = Kind::Rect;
        g.extent[0] = lx;
        g.extent[1] = ly;
        g.nodes[0] = nx;
        g.nodes[1] = ny;
        g.h[0] = lx / static_cast<double>(nx + 1);
        g.h[1] = ly / static_cast<double>(ny + 1);
        return g;
    }

    long size() const {
        switch (kind) {
            case Kind::Scalar: return 1;
            case Kind::Line: return nodes[0];
            case Kind::Rect: return nodes[0] * nodes[1];
        }
        return 1;
    }

    // Volume of the cell attached to one interior node (uniform by construction).
    double cell_volume() const {
        switch (kind) {
            case Kind::Scalar: return 1.0;
            case Kind::Line: return h[0];
            case Kind::Rect: return h[0] * h[1];
        }
        return 1.0;
    }

    // Coordinate of interior node i along axis 0 (row-major flattening for Rect).
    double coord0(long i) const {
        switch (kind) {
            case Kind::Scalar: return 0.0;
            case Kind::Line: return h[0] * static_cast<double>(i + 1);
            case Kind::Rect: return h[0] * static_cast<double>(i % nodes[0] + 1);
        }
        return 0.0;
    }
};

inline bool same_grid(const SpaceGrid& a, const SpaceGrid& b) {
    return a.kind == b.kind && a.nodes[0] == b.nodes[0] && a.nodes[1] == b.nodes[1] &&
           a.extent[0] == b.extent[0] && a.extent[1] == b.extent[1];
}

// ---------------------------------------------------------------------------
// State vectors (elements of the discretized pivot space) and basic algebra.
// ---------------------------------------------------------------------------

struct StateVector {
    std::vector<double> v;

    StateVector() = default;
    explicit StateVector(long n, double fill = 0.0) : v(static_cast<size_t>(n), fill) {}
    explicit StateVector(std::vector<double> vals) : v(std::move(vals)) {}
    StateVector(std::initializer_list<double> vals) : v(vals) {}

    long size() const { return static_cast<long>(v.size()); }
    double& operator[](long i) { return v[static_cast<size_t>(i)]; }
    double operator[](long i) const { return v[static_cast<size_t>(i)]; }
};

inline void check_same_size(const StateVector& x, const StateVector& y, const char* where) {
    if (x.size() != y.size())
        throw DimensionError(std::string(where) + ": size mismatch (" +
                             std::to_string(x.size()) + " vs " + std::to_string(y.size()) + ")");
}

inline void check_grid_size(const StateVector& x, const SpaceGrid& g, const char* where) {
    if (x.size() != g.size())
        throw DimensionError(std::string(where) + ": state has " + std::to_string(x.size()) +
                             " entries, grid expects " + std::to_string(g.size()));
}

inline bool all_finite(const StateVector& x) {
    for (double e : x.v)
        if (!std::isfinite(e)) return false;
    return true;
}

inline StateVector add(const StateVector& x, const StateVector& y) {
    check_same_size(x, y, "add");
    StateVector r(x.size());
    for (long i = 0; i < x.size(); ++i) r[i] = x[i] + y[i];
    return r;
}

inline StateVector sub(const StateVector& x, const StateVector& y) {
    check_same_size(x, y, "sub");
    StateVector r(x.size());
    for (long i = 0; i < x.size(); ++i) r[i] = x[i] - y[i];
    return r;
}

inline StateVector scaled(const StateVector& x, double a) {
    StateVector r(x.size());
    for (long i = 0; i < x.size(); ++i) r[i] = a * x[i];
    return r;
}

// r += a*x
inline void axpy(StateVector& r, double a, const StateVector& x) {
    check_same_size(r, x, "axpy");
    for (long i = 0; i < x.size(); ++i) r[i] += a * x[i];
}

// Inner product of the discretized pivot space (cell-volume weighted).
inline double dot_h(const StateVector& x, const StateVector& y, const SpaceGrid& g) {
    check_grid_size(x, g, "dot_h");
    check_same_size(x, y, "dot_h");
    double s = 0.0;
    for (long i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s * g.cell_volume();
}

// Norm of the discretized pivot space.
inline double h_norm(const StateVector& x, const SpaceGrid& g) {
    return std::sqrt(dot_h(x, x, g));
}

// Discrete gradient p-norm (one-sided differences, zero boundary values).
// On the scalar grid there is no spatial structure and the pivot norm is used.
inline double x_norm(const StateVector& x, const SpaceGrid& g, double p) {
    check_grid_size(x, g, "x_norm");
    if (!(p >= 2.0))
        throw ParameterError("x_norm: p must be >= 2 (got " + std::to_string(p) + ")");
    if (g.kind == SpaceGrid::Kind::Scalar) return h_norm(x, g);

    double acc = 0.0;
    if (g.kind == SpaceGrid::Kind::Line) {
        const double hx = g.h[0];
        const long n = g.nodes[0];
        for (long e = 0; e <= n; ++e) {
            const double left = (e == 0) ? 0.0 : x[e - 1];
            const double right = (e == n) ? 0.0 : x[e];
            acc += hx * std::pow(std::abs((right - left) / hx), p);
        }
    } else {
        const double hx = g.h[0], hy = g.h[1], vol = hx * hy;
        const long nx = g.nodes[0], ny = g.nodes[1];
        auto at = [&](long ix, long iy) -> double {
            if (ix < 0 || ix >= nx || iy < 0 || iy >= ny) return 0.0;
            return x[iy * nx + ix];
        };
        for (long iy = 0; iy < ny; ++iy)
            for (long e = 0; e <= nx; ++e)
                acc += vol * std::pow(std::abs((at(e, iy) - at(e - 1, iy)) / hx), p);
        for (long ix = 0; ix < nx; ++ix)
            for (long e = 0; e <= ny; ++e)
                acc += vol * std::pow(std::abs((at(ix, e) - at(ix, e - 1)) / hy), p);
    }
    return std::pow(acc, 1.0 / p);
}

// ---------------------------------------------------------------------------
// Trajectories (n_steps + 1 states) and step forcings (n_steps values, each
// acting on one step; the value with index k drives the step t_k -> t_{k+1}).
// ---------------------------------------------------------------------------

struct Trajectory {
    TimeGrid grid;
    SpaceGrid space;
    std::vector<StateVector> states;

    Trajectory() = default;
    Trajectory(TimeGrid tg, SpaceGrid sg)
        : grid(tg), space(sg),
          states(static_cast<size_t>(tg.n_steps + 1), StateVector(sg.size())) {}

    StateVector& state(long k) { return states[static_cast<size_t>(k)]; }
    const StateVector& state(long k) const { return states[static_cast<size_t>(k)]; }
};

struct ForcingPath {
    TimeGrid grid;
    SpaceGrid space;
    std::vector<StateVector> values;

    ForcingPath() = default;
    ForcingPath(TimeGrid tg, SpaceGrid sg)
        : grid(tg), space(sg),
          values(static_cast<size_t>(tg.n_steps), StateVector(sg.size())) {}

    StateVector& value(long k) { return values[static_cast<size_t>(k)]; }
    const StateVector& value(long k) const { return values[static_cast<size_t>(k)]; }
};

inline void check_compatible(const Trajectory& u, const Trajectory& w, const char* where) {
    if (u.grid.n_steps != w.grid.n_steps || u.grid.b != w.grid.b || !same_grid(u.space, w.space))
        throw DimensionError(std::string(where) + ": trajectories live on different grids");
}

// sup-in-time distance of two trajectories in the pivot norm.
inline double sup_distance(const Trajectory& u, const Trajectory& w) {
    check_compatible(u, w, "sup_distance");
    double m = 0.0;
    for (size_t k = 0; k < u.states.size(); ++k)
        m = std::max(m, h_norm(sub(u.states[k], w.states[k]), u.space));
    return m;
}

inline ForcingPath sub(const ForcingPath& a, const ForcingPath& b) {
    if (a.grid.n_steps != b.grid.n_steps || a.grid.b != b.grid.b || !same_grid(a.space, b.space))
        throw DimensionError("forcing difference: paths live on different grids");
    ForcingPath out = a;
    for (size_t k = 0; k < out.values.size(); ++k) out.values[k] = sub(a.values[k], b.values[k]);
    return out;
}

// L^q(0,b;H) norm of a step forcing (piecewise-constant quadrature).
inline double lq_norm(const ForcingPath& f, double q) {
    if (!(q >= 1.0)) throw ParameterError("lq_norm: q must be >= 1");
    const double tau = f.grid.tau();
    double acc = 0.0;
    for (const auto& val : f.values) acc += tau * std::pow(h_norm(val, f.space), q);
    return std::pow(acc, 1.0 / q);
}

inline double l1_norm(const ForcingPath& f) { return lq_norm(f, 1.0); }

// Weak norm: sup over grid-aligned windows [s,t] of |integral_s^t f| in the
// pivot norm, evaluated by brute force over all window pairs.  The quadrature
// is exact for step forcings.
inline double weak_norm(const ForcingPath& f) {
    const long n = f.grid.n_steps;
    const long m = f.space.size();
    const double tau = f.grid.tau();
    // prefix[k] = integral over [0, t_k]
    std::vector<std::vector<double>> prefix(static_cast<size_t>(n + 1),
                                            std::vector<double>(static_cast<size_t>(m), 0.0));
    for (long k = 0; k < n; ++k)
        for (long i = 0; i < m; ++i)
            prefix[k + 1][i] = prefix[k][i] + tau * f.value(k)[i];
    const double vol = f.space.cell_volume();
    double best = 0.0;
    for (long s = 0; s <= n; ++s)
        for (long t = s + 1; t <= n; ++t) {
            double acc = 0.0;
            for (long i = 0; i < m; ++i) {
                const double d = prefix[t][i] - prefix[s][i];
                acc += d * d;
            }
            best = std::max(best, acc * vol);
        }
    return std::sqrt(best);
}

// One-parameter variant: sup over t of |integral_0^t f|.  Dominated by
// weak_norm (windows anchored at 0 are a subset of all windows).
inline double weak_norm_from_origin(const ForcingPath& f) {
    const long n = f.grid.n_steps;
    const long m = f.space.size();
    const double tau = f.grid.tau();
    std::vector<double> run(static_cast<size_t>(m), 0.0);
    const double vol = f.space.cell_volume();
    double best = 0.0;
    for (long k = 0; k < n; ++k) {
        double acc = 0.0;
        for (long i = 0; i < m; ++i) {
            run[static_cast<size_t>(i)] += tau * f.value(k)[i];
            acc += run[static_cast<size_t>(i)] * run[static_cast<size_t>(i)];
        }
        best = std::max(best, acc * vol);
    }
    return std::sqrt(best);
}

// ---------------------------------------------------------------------------
// Hausdorff distance between finite point sets (plain Euclidean metric).
// ---------------------------------------------------------------------------

using PointSet = std::vector<std::vector<double>>;

namespace detail {
inline double point_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}
inline double directed_hausdorff(const PointSet& from, const PointSet& to) {
    double worst = 0.0;
    for (const auto& p : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : to) best = std::min(best, point_dist(p, q));
        worst = std::max(worst, best);
    }
    return worst;
}
}  // namespace detail

inline double hausdorff_finite(const PointSet& c, const PointSet& e) {
    if (c.empty() || e.empty())
        throw DomainError("hausdorff_finite: sets must be nonempty");
    const size_t dim = c.front().size();
    for (const auto& p : c)
        if (p.size() != dim) throw DimensionError("hausdorff_finite: ragged point set");
    for (const auto& q : e)
        if (q.size() != dim) throw DimensionError("hausdorff_finite: point dimension mismatch");
    return std::max(detail::directed_hausdorff(c, e), detail::directed_hausdorff(e, c));
}

// ---------------------------------------------------------------------------
// Artifact output: CSV with >= 12 significant digits, atomic file replace.
// ---------------------------------------------------------------------------

namespace detail {
inline std::string fmt_g15(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.15g", x);
    return buf;
}
}  // namespace detail

// Write a whole file via a temp path + rename so readers never see partial data.
inline void atomic_write_file(const std::filesystem::path& path, const std::string& content) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("atomic_write_file: cannot open " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw Error("atomic_write_file: short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string trajectory_csv(const Trajectory& u) {
    std::string out = "t";
    for (long i = 0; i < u.space.size(); ++i) out += ",node_" + std::to_string(i);
    out += "\n";
    for (long k = 0; k <= u.grid.n_steps; ++k) {
        out += detail::fmt_g15(u.grid.time(k));
        for (long i = 0; i < u.space.size(); ++i) {
            out += ',';
            out += detail::fmt_g15(u.state(k)[i]);
        }
        out += "\n";
    }
    return out;
}

inline void save_trajectory_csv(const std::filesystem::path& path, const Trajectory& u) {
    atomic_write_file(path, trajectory_csv(u));
}

}  // namespace evi
