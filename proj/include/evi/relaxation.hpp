#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "evi/cauchy.hpp"
#include "evi/grid.hpp"
#include "evi/multimap.hpp"

namespace evi {

// ---------------------------------------------------------------------------
// Chattering: turn a tube-valued target forcing into a vertex-valued one that
// matches the target's running integral window by window.
// ---------------------------------------------------------------------------

namespace detail {

inline long window_steps(double delta, double tau) {
    const double ratio = delta / tau;
    const long m = std::lround(ratio);
    if (m < 1 || std::abs(ratio - static_cast<double>(m)) > 1e-9 * std::max(1.0, ratio))
        throw ParameterError("chatter: window length must be a positive whole multiple of the "
                             "step size");
    return m;
}

}  // namespace detail

// Builds a forcing taking extreme-point values of F(t, u(t)) at every step.
// Within each window of length delta the per-channel vertex durations are
// chosen so the window integral matches the target's (hi-block first, then
// lo); the leftover rounding mass is carried into the next window so the
// running integrals never drift apart by more than one step's worth.
inline ForcingPath chatter(const MultimapSpec& F, const Trajectory& u, const ForcingPath& target,
                           double delta) {
    validate_multimap(F, u.space);
    if (F.shape.kind == ControlShape::Kind::FiniteSet)
        throw ParameterError("chatter: finite control sets have no interior to chatter across; "
                             "use a near-target selection instead");
    if (target.grid.n_steps != u.grid.n_steps || target.grid.b != u.grid.b)
        throw DimensionError("chatter: target path lives on a different time grid");
    const long n = u.grid.n_steps;
    const double tau = u.grid.tau();
    const long m = detail::window_steps(delta, tau);
    const long channels = F.shape.channels();

    // Project the target into the tube first so coefficients are in bounds.
    ForcingPath gamma = select_path(F, Selection::near_target(target, 1e-3), u);
    if (channels == 0) return gamma;

    // Channel coefficients of the projected target, one row per channel.
    std::vector<std::vector<double>> coef(static_cast<size_t>(channels),
                                          std::vector<double>(static_cast<size_t>(n), 0.0));
    bool all_vertices = true;
    std::vector<double> lo(static_cast<size_t>(channels)), hi(static_cast<size_t>(channels));
    for (long j = 0; j < channels; ++j) {
        lo[static_cast<size_t>(j)] = F.shape.channel_lo(j);
        hi[static_cast<size_t>(j)] = F.shape.channel_hi(j);
    }
    for (long k = 0; k < n; ++k) {
        const StateVector drift = drift_state(F, u.space, u.grid.time(k + 1), u.state(k + 1));
        const StateVector r = sub(gamma.value(k), drift);
        const std::vector<double> c = detail::channel_coefficients(F, u.space, r, nullptr);
        for (long j = 0; j < channels; ++j) {
            const size_t sj = static_cast<size_t>(j);
            coef[sj][static_cast<size_t>(k)] = c[sj];
            if (std::abs(c[sj] - lo[sj]) > 1e-13 && std::abs(c[sj] - hi[sj]) > 1e-13)
                all_vertices = false;
        }
    }
    if (all_vertices) return gamma;  // already an extreme-point path

    // Window filling with carry, independently per channel.
    std::vector<std::vector<double>> vertex = coef;  // reuse the layout
    for (long j = 0; j < channels; ++j) {
        const size_t sj = static_cast<size_t>(j);
        const double span = hi[sj] - lo[sj];
        double carry = 0.0;
        for (long k0 = 0; k0 < n; k0 += m) {
            const long len = std::min(m, n - k0);
            double desired = carry;
            for (long k = k0; k < k0 + len; ++k) desired += tau * coef[sj][static_cast<size_t>(k)];
            long q = 0;
            if (span > 0.0) {
                const double hi_time = (desired - static_cast<double>(len) * tau * lo[sj]) / span;
                q = std::clamp(std::lround(hi_time / tau), 0L, len);
            }
            for (long k = k0; k < k0 + len; ++k)
                vertex[sj][static_cast<size_t>(k)] = (k - k0 < q) ? hi[sj] : lo[sj];
            const double achieved =
                tau * (static_cast<double>(q) * hi[sj] + static_cast<double>(len - q) * lo[sj]);
            carry = desired - achieved;
        }
    }

    ForcingPath beta(u.grid, u.space);
    for (long k = 0; k < n; ++k) {
        StateVector out = drift_state(F, u.space, u.grid.time(k + 1), u.state(k + 1));
        for (long j = 0; j < channels; ++j)
            axpy(out, vertex[static_cast<size_t>(j)][static_cast<size_t>(k)], F.gains[static_cast<size_t>(j)]);
        beta.value(k) = std::move(out);
    }
    return beta;
}

// ---------------------------------------------------------------------------
// The strong-relaxation experiment: approximate a convex-solution trajectory
// by extreme-point forcings across a shrinking window schedule.
// ---------------------------------------------------------------------------

struct ExtremalRun {
    double delta = 0.0;
    double eps_n = 0.0;            // near-target bookkeeping slack, 1/n by default
    Trajectory trajectory;
    ForcingPath extremal_forcing;  // vertex-valued beta
    ForcingPath projected_target;  // in-tube gamma it shadows
    double weak_gap = 0.0;         // ||beta - gamma|| in the sliding-window seminorm
    double sup_gap = 0.0;          // sup-distance to the convex solution
    double refresh_residual = 0.0; // change caused by the one feedback refresh
    double gronwall_bound = 0.0;   // predicted cap on sup_gap
};

struct RelaxationRun {
    Trajectory convex_solution;
    ForcingPath convex_forcing;
    double lipschitz_modulus = 0.0;
    std::vector<ExtremalRun> runs;
};

// Predicted sup-gap bound for one run: the energy estimate
//   |D(t)|^2 <= 2 int <gamma - beta, D> + eps_n + 2 int l |D|^2
// closed by the Gronwall inequality, evaluated with the run's own data.
inline double gronwall_gap_bound(const RelaxationRun& rel, const ExtremalRun& run) {
    const Trajectory& u = rel.convex_solution;
    const Trajectory& v = run.trajectory;
    const double tau = u.grid.tau();
    double pairing = 0.0, prefix = 0.0;
    for (long k = 0; k < u.grid.n_steps; ++k) {
        const StateVector d = sub(v.state(k + 1), u.state(k + 1));
        const StateVector diff = sub(run.extremal_forcing.value(k), run.projected_target.value(k));
        prefix += tau * dot_h(diff, d, u.space);
        pairing = std::max(pairing, std::abs(prefix));
    }
    const double l1_of_l = rel.lipschitz_modulus * u.grid.b;
    return std::sqrt((2.0 * pairing + run.eps_n) * std::exp(2.0 * l1_of_l));
}

inline RelaxationRun relax_approximate(const OperatorSpec& op, const PhiSpec& phi,
                                       const StepConfig& cfg, const TimeGrid& grid,
                                       const MultimapSpec& F, const Trajectory& u_convex,
                                       const ForcingPath& h_convex,
                                       const std::vector<double>& delta_schedule,
                                       double eps_override = 0.0) {
    if (delta_schedule.empty())
        throw ParameterError("relax_approximate: empty window schedule");
    for (size_t i = 0; i < delta_schedule.size(); ++i) {
        if (!(delta_schedule[i] > 0.0))
            throw ParameterError("relax_approximate: window lengths must be > 0");
        if (i > 0 && !(delta_schedule[i] < delta_schedule[i - 1]))
            throw ParameterError("relax_approximate: window schedule must be strictly decreasing");
    }
    validate_multimap(F, u_convex.space);

    RelaxationRun rel;
    rel.convex_solution = u_convex;
    rel.convex_forcing = h_convex;
    rel.lipschitz_modulus = F.drift.lipschitz_l0;

    for (size_t n = 0; n < delta_schedule.size(); ++n) {
        const double delta = delta_schedule[n];
        ExtremalRun run;
        run.delta = delta;
        run.eps_n = eps_override > 0.0 ? eps_override : 1.0 / static_cast<double>(n + 1);

        // First pass: select and chatter along the convex solution itself.
        ForcingPath beta0 = chatter(F, u_convex, h_convex, delta);
        Trajectory v1 = solve_cauchy(op, phi, cfg, grid, u_convex.state(0), beta0);

        // One feedback refresh: re-select against the produced trajectory.
        ForcingPath gamma1 = select_path(F, Selection::near_target(h_convex, run.eps_n), v1);
        ForcingPath beta1 = chatter(F, v1, gamma1, delta);
        Trajectory v2 = solve_cauchy(op, phi, cfg, grid, u_convex.state(0), beta1);

        run.refresh_residual = sup_distance(v2, v1);
        run.projected_target = std::move(gamma1);
        run.extremal_forcing = std::move(beta1);
        run.trajectory = std::move(v2);
        run.weak_gap = weak_norm(sub(run.extremal_forcing, run.projected_target));
        run.sup_gap = sup_distance(run.trajectory, u_convex);
        run.gronwall_bound = gronwall_gap_bound(rel, run);
        rel.runs.push_back(std::move(run));
    }
    return rel;
}

// Largest pivot-norm forcing value across both paths of a run: the observed
// bound used by the weak-gap certificate weak_gap <= delta * 2 * eta.
inline double observed_forcing_bound(const ExtremalRun& run, const SpaceGrid& g) {
    double eta = 0.0;
    for (const auto& v : run.extremal_forcing.values) eta = std::max(eta, h_norm(v, g));
    for (const auto& v : run.projected_target.values) eta = std::max(eta, h_norm(v, g));
    return eta;
}

// CSV export: one row per run.
inline std::string relaxation_csv(const RelaxationRun& rel) {
    std::string out = "delta,weak_gap,sup_gap,gronwall_bound\n";
    for (const auto& r : rel.runs) {
        out += detail::fmt_g15(r.delta);
        out += ',';
        out += detail::fmt_g15(r.weak_gap);
        out += ',';
        out += detail::fmt_g15(r.sup_gap);
        out += ',';
        out += detail::fmt_g15(r.gronwall_bound);
        out += '\n';
    }
    return out;
}

inline void save_relaxation_csv(const RelaxationRun& rel, const std::string& path) {
    atomic_write_file(path, relaxation_csv(rel));
}

}  // namespace evi
